//! Nested power-of-two training subsets.
//!
//! One seeded permutation of the full training shard is drawn; level `k`
//! is its first `2^k` entries, so every level is a prefix of the next.
//! The permutation is a descending Fisher-Yates shuffle of `0..n` driven by
//! `SplitMix64::new(seed)`, which makes it reproducible from the seed alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SplitMix64, RNG_NAME};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetPlan {
    base_seed: u64,
    permutation: Vec<usize>,
    levels: Vec<u32>,
}

/// JSON half of a serialized plan; the permutation lives in a u64 sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlanHeader {
    seed: u64,
    rng: String,
    n_records: usize,
    levels: Vec<u32>,
    permutation_file: String,
}

pub fn make_plan(n_records: usize, seed: u64, k_min: u32, k_max: u32) -> Result<SubsetPlan> {
    if k_min > k_max {
        return Err(Error::Config(format!("k_min {k_min} > k_max {k_max}")));
    }
    if k_max >= usize::BITS || (1usize << k_max) > n_records {
        return Err(Error::Capacity {
            k: k_max,
            n: n_records,
        });
    }
    let mut permutation: Vec<usize> = (0..n_records).collect();
    SplitMix64::new(seed).shuffle(&mut permutation);
    Ok(SubsetPlan {
        base_seed: seed,
        permutation,
        levels: (k_min..=k_max).collect(),
    })
}

impl SubsetPlan {
    pub fn seed(&self) -> u64 {
        self.base_seed
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn n_records(&self) -> usize {
        self.permutation.len()
    }

    /// The first `2^k` permutation entries.
    pub fn subset_indices(&self, k: u32) -> Result<&[usize]> {
        if !self.levels.contains(&k) {
            return Err(Error::Level(k));
        }
        Ok(&self.permutation[..1usize << k])
    }

    /// Writes `<path>` (JSON header) and `<path>.perm.bin` (u64 little-endian).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let sidecar = sidecar_path(path);
        let header = PlanHeader {
            seed: self.base_seed,
            rng: RNG_NAME.to_string(),
            n_records: self.permutation.len(),
            levels: self.levels.clone(),
            permutation_file: sidecar
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        fs::write(path, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(path, e))?;
        let bytes: Vec<u8> = self
            .permutation
            .iter()
            .flat_map(|&i| (i as u64).to_le_bytes())
            .collect();
        fs::write(&sidecar, bytes).map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header: PlanHeader = serde_json::from_str(&text)?;
        if header.rng != RNG_NAME {
            return Err(Error::Compatibility(format!(
                "plan was drawn with {}, this build uses {RNG_NAME}",
                header.rng
            )));
        }
        let sidecar = path.with_file_name(&header.permutation_file);
        let bytes = fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        if bytes.len() != header.n_records * 8 {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                msg: format!("expected {} permutation entries", header.n_records),
            });
        }
        let permutation: Vec<usize> = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let mut seen = vec![false; permutation.len()];
        for (pos, &i) in permutation.iter().enumerate() {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Format {
                    offset: pos as u64 * 8,
                    msg: format!("entry {i} breaks the permutation"),
                });
            }
        }
        if let Some(&k) = header.levels.iter().max() {
            if (1usize << k) > permutation.len() {
                return Err(Error::Capacity {
                    k,
                    n: permutation.len(),
                });
            }
        }
        Ok(Self {
            base_seed: header.seed,
            permutation,
            levels: header.levels,
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".perm.bin");
    path.with_file_name(name)
}
