//! Per-token depth sequences and their on-disk form: one line per sentence,
//! space-separated integers.

use std::fs;
use std::path::Path;

use crate::corpus::Document;
use crate::error::{Error, Result};

/// Number of layers to execute at each token of one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct DepthMap(Vec<usize>);

impl DepthMap {
    /// Validates every entry against `[1, max_depth]`.
    pub fn new(depths: Vec<usize>, max_depth: usize) -> Result<Self> {
        if let Some(&d) = depths.iter().find(|&&d| d == 0 || d > max_depth) {
            return Err(Error::invalid(format!(
                "depth {d} outside [1, {max_depth}]"
            )));
        }
        Ok(Self(depths))
    }

    /// Every position at `depth`.
    pub fn constant(len: usize, depth: usize) -> Self {
        Self(vec![depth; len])
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn sum(&self) -> usize {
        self.0.iter().sum()
    }
}

impl std::ops::Index<usize> for DepthMap {
    type Output = usize;
    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

pub fn write_depth_file(path: &Path, maps: &[DepthMap]) -> Result<()> {
    let mut out = String::new();
    for m in maps {
        let line: Vec<String> = m.0.iter().map(|d| d.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_depth_file(path: &Path, max_depth: usize) -> Result<Vec<DepthMap>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let bad = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let depths = line
                .split_whitespace()
                .map(|tok| tok.parse::<usize>().map_err(|_| bad(format!("bad depth {tok:?}"))))
                .collect::<Result<Vec<_>>>()?;
            DepthMap::new(depths, max_depth).map_err(|e| bad(e.to_string()))
        })
        .collect()
}

/// Checks one depth map per document with matching lengths.
pub fn check_alignment(maps: &[DepthMap], docs: &[Document]) -> Result<()> {
    if maps.len() != docs.len() {
        return Err(Error::Misaligned {
            index: maps.len().min(docs.len()),
            msg: format!("{} depth maps for {} sentences", maps.len(), docs.len()),
        });
    }
    for (i, (m, d)) in maps.iter().zip(docs).enumerate() {
        if m.len() != d.tokens.len() {
            return Err(Error::Misaligned {
                index: i,
                msg: format!("{} depths for {} tokens", m.len(), d.tokens.len()),
            });
        }
    }
    Ok(())
}

/// Token-weighted mean depth.
pub fn average_depth(maps: &[DepthMap]) -> f64 {
    let tokens: usize = maps.iter().map(DepthMap::len).sum();
    if tokens == 0 {
        return 0.0;
    }
    maps.iter().map(DepthMap::sum).sum::<usize>() as f64 / tokens as f64
}

/// Token counts per depth value; index 0 holds depth 1.
pub fn depth_histogram(maps: &[DepthMap], max_depth: usize) -> Vec<u64> {
    let mut counts = vec![0u64; max_depth];
    for m in maps {
        for &d in m.as_slice() {
            counts[d - 1] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_checked() {
        assert!(DepthMap::new(vec![1, 12], 12).is_ok());
        assert!(DepthMap::new(vec![0], 12).is_err());
        assert!(DepthMap::new(vec![13], 12).is_err());
    }

    #[test]
    fn file_roundtrip_and_alignment() {
        let dir = std::env::temp_dir().join(format!("adadepth-dm-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("x.depths");
        let maps = vec![
            DepthMap::new(vec![1, 2, 3], 4).unwrap(),
            DepthMap::new(vec![4], 4).unwrap(),
        ];
        write_depth_file(&p, &maps).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "1 2 3\n4\n");
        assert_eq!(read_depth_file(&p, 4).unwrap(), maps);
        assert!(read_depth_file(&p, 3).is_err());

        let doc = |n: usize| Document {
            tokens: vec![5; n],
            label: 0,
            raw_text: String::new(),
        };
        assert!(check_alignment(&maps, &[doc(3), doc(1)]).is_ok());
        match check_alignment(&maps, &[doc(3), doc(2)]) {
            Err(Error::Misaligned { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        assert!(check_alignment(&maps, &[doc(3)]).is_err());
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn averages() {
        let maps = vec![DepthMap::constant(3, 2), DepthMap::constant(1, 6)];
        assert_eq!(average_depth(&maps), 3.0);
        assert_eq!(depth_histogram(&maps, 6), vec![0, 3, 0, 0, 0, 1]);
    }
}
