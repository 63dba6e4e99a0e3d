//! Line-delimited dataset manifests and poisoning provenance files.
//!
//! A manifest is one JSON header line (`categories`, optional `split`)
//! followed by one JSON record per instance: `{id, image_path, text,
//! labels}`. Image paths are relative to the manifest's directory and point
//! at lossless PNG files, so poisoned pixel perturbations survive the round
//! trip.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use cmbd_core::dataset::{Dataset, PairedInstance, Split};
use cmbd_core::poisoner::{PoisonModality, PoisonRecord};
use cmbd_core::{LabelVector, TextSample};
use serde::{Deserialize, Serialize};

use crate::errors::{CliError, Result};
use crate::imageio;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    categories: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    image_path: String,
    text: String,
    labels: Vec<usize>,
}

fn split_name(split: Split) -> &'static str {
    split.name()
}

fn parse_split(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "query" => Ok(Split::Query),
        "retrieval" => Ok(Split::Retrieval),
        other => Err(CliError::Format(format!("unknown split name {other:?}"))),
    }
}

/// Instance ids become file names; keep them to a safe alphabet.
fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.');
    if ok {
        Ok(())
    } else {
        Err(CliError::Format(format!(
            "instance id {id:?} is not a safe file name"
        )))
    }
}

/// Writes `dir/manifest.jsonl` plus `dir/images/<id>.png` and returns the
/// manifest path.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| CliError::io_at("creating", dir, e))?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut out = Vec::new();
    let header = Header {
        categories: dataset.categories,
        split: dataset.split.map(|s| split_name(s).to_string()),
    };
    writeln!(out, "{}", serde_json::to_string(&header).unwrap()).unwrap();
    for inst in &dataset.instances {
        check_id(&inst.id)?;
        let rel = format!("images/{}.png", inst.id);
        imageio::save_png(&dir.join(&rel), &inst.image)?;
        let record = Record {
            id: inst.id.clone(),
            image_path: rel,
            text: inst.text.raw().to_string(),
            labels: inst.label.indices(),
        };
        writeln!(out, "{}", serde_json::to_string(&record).unwrap()).unwrap();
    }
    fs::write(&manifest_path, out).map_err(|e| CliError::io_at("writing", &manifest_path, e))?;
    Ok(manifest_path)
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let file = fs::File::open(manifest_path)
        .map_err(|e| CliError::io_at("opening", manifest_path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| CliError::Format(format!("{}: empty manifest", manifest_path.display())))?
        .map_err(|e| CliError::io_at("reading", manifest_path, e))?;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| CliError::Format(format!("{}: bad header: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut instances = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| CliError::io_at("reading", manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| {
            CliError::Format(format!(
                "{} line {}: bad record: {e}",
                manifest_path.display(),
                n + 2
            ))
        })?;
        let image = imageio::load_png(&base.join(&record.image_path))?;
        instances.push(PairedInstance {
            id: record.id,
            image,
            text: TextSample::new(&record.text)?,
            label: LabelVector::from_indices(header.categories, &record.labels)?,
        });
    }
    let split = header.split.as_deref().map(parse_split).transpose()?;
    let dataset = Dataset {
        instances,
        categories: header.categories,
        split,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[derive(Debug, Serialize, Deserialize)]
struct ProvenanceLine {
    id: String,
    modality: String,
    original_labels: Vec<usize>,
    target_label: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fallback_of: Option<String>,
}

/// Writes the poisoned dataset plus `provenance.jsonl` beside the manifest.
pub fn save_poisoned_dataset(
    dir: &Path,
    dataset: &Dataset,
    records: &[PoisonRecord],
) -> Result<PathBuf> {
    let known: BTreeSet<&str> = dataset.instances.iter().map(|i| i.id.as_str()).collect();
    for record in records {
        if !known.contains(record.id.as_str()) {
            return Err(CliError::Core(cmbd_core::Error::Validation(format!(
                "provenance references unknown instance {:?}",
                record.id
            ))));
        }
    }
    let manifest_path = save_dataset(dir, dataset)?;
    let mut out = Vec::new();
    for record in records {
        let line = ProvenanceLine {
            id: record.id.clone(),
            modality: record.modality.name().to_string(),
            original_labels: record.original_label.indices(),
            target_label: record.assigned_label.indices(),
            fallback_of: record.fallback_of.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&line).unwrap()).unwrap();
    }
    let path = dir.join("provenance.jsonl");
    fs::write(&path, out).map_err(|e| CliError::io_at("writing", &path, e))?;
    Ok(manifest_path)
}

/// Parsed provenance: `(id, modality, original labels, target labels,
/// fallback_of)`.
pub type Provenance = Vec<(String, PoisonModality, Vec<usize>, Vec<usize>, Option<String>)>;

pub fn load_provenance(path: &Path) -> Result<Provenance> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io_at("opening", path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ProvenanceLine = serde_json::from_str(line).map_err(|e| {
            CliError::Format(format!("{} line {}: {e}", path.display(), n + 1))
        })?;
        let modality = match parsed.modality.as_str() {
            "image" => PoisonModality::Image,
            "text" => PoisonModality::Text,
            "both" => PoisonModality::Both,
            other => {
                return Err(CliError::Format(format!(
                    "{} line {}: unknown modality {other:?}",
                    path.display(),
                    n + 1
                )))
            }
        };
        out.push((
            parsed.id,
            modality,
            parsed.original_labels,
            parsed.target_label,
            parsed.fallback_of,
        ));
    }
    Ok(out)
}
