//! Per-instance mining artifacts, persisted as a line-delimited sidecar.
//!
//! Line 1 is a format header; every following line holds one instance:
//! selected region boxes with importances, the union mask (run-length
//! encoded), keyword positions with scores, and the two infeasibility
//! flags. The mask encoding is row-major alternating run lengths, first
//! run counting zeros, summing to `height * width`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use cmbd_core::image::PixelMask;
use cmbd_core::mining::KeywordSelection;
use cmbd_core::poisoner::MiningArtifacts;
use serde::{Deserialize, Serialize};

use crate::errors::{CliError, Result};

const FORMAT: &str = "mining-sidecar";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct SidecarHeader {
    format: String,
    version: u32,
    mask_encoding: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarLine {
    id: String,
    height: usize,
    width: usize,
    /// `[top, left, height, width]` per selected region.
    selected_boxes: Vec<[usize; 4]>,
    importances: Vec<f64>,
    mask_rle: Vec<usize>,
    budget_infeasible: bool,
    keyword_positions: Vec<usize>,
    keyword_scores: Vec<f64>,
    unpoisonable: bool,
}

/// Row-major alternating run lengths; the first run counts zeros.
pub fn rle_encode(bits: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &b in bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[usize], height: usize, width: usize) -> Result<PixelMask> {
    let total: usize = runs.iter().sum();
    if total != height * width {
        return Err(CliError::Format(format!(
            "mask run lengths sum to {total}, expected {}",
            height * width
        )));
    }
    let mut bits = Vec::with_capacity(total);
    for (i, &run) in runs.iter().enumerate() {
        bits.extend(std::iter::repeat(i % 2 == 1).take(run));
    }
    PixelMask::from_bits(height, width, bits).map_err(CliError::from)
}

/// One mined instance: what [`MiningArtifacts`] carries plus the
/// report-only extras.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedInstance {
    pub artifacts: MiningArtifacts,
    pub selected_boxes: Vec<[usize; 4]>,
    pub importances: Vec<f64>,
    pub budget_infeasible: bool,
}

pub fn save_sidecar(path: &Path, mined: &BTreeMap<String, MinedInstance>) -> Result<()> {
    let mut out = Vec::new();
    let header = SidecarHeader {
        format: FORMAT.to_string(),
        version: VERSION,
        mask_encoding: "row-major alternating run lengths, first run counts zeros".to_string(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).unwrap()).unwrap();
    for (id, inst) in mined {
        let line = SidecarLine {
            id: id.clone(),
            height: inst.artifacts.mask.height(),
            width: inst.artifacts.mask.width(),
            selected_boxes: inst.selected_boxes.clone(),
            importances: inst.importances.clone(),
            mask_rle: rle_encode(inst.artifacts.mask.bits()),
            budget_infeasible: inst.budget_infeasible,
            keyword_positions: inst.artifacts.keywords.positions.clone(),
            keyword_scores: inst.artifacts.keywords.scores.clone(),
            unpoisonable: inst.artifacts.keywords.unpoisonable,
        };
        writeln!(out, "{}", serde_json::to_string(&line).unwrap()).unwrap();
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io_at("creating", parent, e))?;
    }
    fs::write(path, out).map_err(|e| CliError::io_at("writing", path, e))
}

pub fn load_sidecar(path: &Path) -> Result<BTreeMap<String, MinedInstance>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io_at("opening", path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| CliError::Format(format!("{}: empty sidecar", path.display())))?;
    let header: SidecarHeader = serde_json::from_str(header_line)
        .map_err(|e| CliError::Format(format!("{}: bad header: {e}", path.display())))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(CliError::Format(format!(
            "{}: unsupported sidecar {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    let mut out = BTreeMap::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SidecarLine = serde_json::from_str(line)
            .map_err(|e| CliError::Format(format!("{} line {}: {e}", path.display(), n + 1)))?;
        if parsed.keyword_positions.len() != parsed.keyword_scores.len()
            || parsed.selected_boxes.len() != parsed.importances.len()
        {
            return Err(CliError::Format(format!(
                "{} line {}: mismatched score lists",
                path.display(),
                n + 1
            )));
        }
        let mask = rle_decode(&parsed.mask_rle, parsed.height, parsed.width)?;
        let mined = MinedInstance {
            artifacts: MiningArtifacts {
                mask,
                keywords: KeywordSelection {
                    positions: parsed.keyword_positions,
                    scores: parsed.keyword_scores,
                    unpoisonable: parsed.unpoisonable,
                },
            },
            selected_boxes: parsed.selected_boxes,
            importances: parsed.importances,
            budget_infeasible: parsed.budget_infeasible,
        };
        if out.insert(parsed.id.clone(), mined).is_some() {
            return Err(CliError::Format(format!(
                "{} line {}: duplicate id {:?}",
                path.display(),
                n + 1,
                parsed.id
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cmbd_core::rng::DetRng;

    #[test]
    fn rle_round_trips_random_masks() {
        let mut rng = DetRng::seed(9);
        for _ in 0..50 {
            let mut mask = PixelMask::empty(7, 9);
            for y in 0..7 {
                for x in 0..9 {
                    mask.set(y, x, rng.index(2) == 1);
                }
            }
            let runs = rle_encode(mask.bits());
            let back = rle_decode(&runs, 7, 9).unwrap();
            assert_eq!(mask, back);
        }
    }

    #[test]
    fn rle_of_empty_and_full() {
        assert_eq!(rle_encode(&[false, false, false]), vec![3]);
        assert_eq!(rle_encode(&[true, true]), vec![0, 2]);
        assert!(rle_decode(&[2, 3], 2, 2).is_err());
    }

    #[test]
    fn sidecar_round_trips() {
        let mut mask = PixelMask::empty(6, 6);
        mask.set_region(1, 1, 3, 2);
        let mined = MinedInstance {
            artifacts: MiningArtifacts {
                mask,
                keywords: KeywordSelection {
                    positions: vec![2, 5],
                    scores: vec![0.7, 0.3],
                    unpoisonable: false,
                },
            },
            selected_boxes: vec![[1, 1, 3, 2]],
            importances: vec![0.9],
            budget_infeasible: false,
        };
        let mut map = BTreeMap::new();
        map.insert("a-1".to_string(), mined);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mine").join("train.jsonl");
        save_sidecar(&path, &map).unwrap();
        let loaded = load_sidecar(&path).unwrap();
        assert_eq!(map, loaded);
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        fs::write(&path, "{\"format\":\"other\",\"version\":1,\"mask_encoding\":\"\"}\n").unwrap();
        assert!(load_sidecar(&path).is_err());
    }
}
