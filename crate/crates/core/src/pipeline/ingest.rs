//! Dataset ingestion: hashing, deterministic splits and the atom-count histogram.

use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::chem::{parse_sdf, Molecule};
use crate::sampler::{cloud_volume, sample_rng, AtomCountHistogram, DEFAULT_BINS};
use crate::shape::build_surface_point_cloud;

pub const MANIFEST_FORMAT: &str = "shapediff-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the ingested directory.
    pub file: String,
    pub sha256: String,
    pub split: Split,
    pub molecules: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub train_fraction: f64,
    pub entries: Vec<ManifestEntry>,
    pub skipped: Vec<SkippedFile>,
    pub histogram: AtomCountHistogram,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn sdf_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let rd = std::fs::read_dir(dir).map_err(|e| PipelineError::Data(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("sdf")))
        .collect();
    files.sort();
    Ok(files)
}

/// Atom-count histogram of `mols` keyed by their surface-cloud box volumes.
pub fn atom_count_histogram(mols: &[Molecule], n_points: usize, seed: u64) -> Result<AtomCountHistogram, PipelineError> {
    let samples: Vec<(f64, usize)> = mols
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let (cloud, _) = build_surface_point_cloud(m, n_points, &mut sample_rng(seed, i as u64))?;
            Ok((cloud_volume(&cloud), m.atoms.len()))
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(AtomCountHistogram::build(&samples, DEFAULT_BINS))
}

/// Reads every `.sdf` file in `dir`, splits files by content hash and builds the
/// atom-count histogram over the training molecules. Unreadable files are skipped.
pub fn ingest(dir: &Path, train_fraction: f64, n_points: usize, seed: u64) -> Result<Manifest, PipelineError> {
    let files = sdf_files(dir)?;
    if files.is_empty() {
        return Err(PipelineError::Data(format!("no .sdf files in {}", dir.display())));
    }
    let mut parsed: Vec<(ManifestEntry, Vec<Molecule>)> = Vec::new();
    let mut skipped = Vec::new();
    for path in &files {
        let file = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let outcome = std::fs::read(path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| {
                let text = String::from_utf8(bytes.clone()).map_err(|_| "not UTF-8 text".to_string())?;
                let mols = parse_sdf(&text).map_err(|e| e.to_string())?;
                if mols.is_empty() {
                    return Err("no molecules".to_string());
                }
                Ok((sha256_hex(&bytes), mols))
            });
        match outcome {
            Ok((sha256, mols)) => parsed.push((
                ManifestEntry {
                    file,
                    sha256,
                    split: Split::Train,
                    molecules: mols.len(),
                },
                mols,
            )),
            Err(reason) => {
                warn!("skipping {file}: {reason}");
                skipped.push(SkippedFile { file, reason });
            }
        }
    }
    if parsed.is_empty() {
        return Err(PipelineError::Data(format!("no readable .sdf files in {}", dir.display())));
    }
    parsed.sort_by(|a, b| a.0.sha256.cmp(&b.0.sha256).then(a.0.file.cmp(&b.0.file)));
    let n_train = ((train_fraction * parsed.len() as f64).round() as usize).clamp(1, parsed.len());
    for (k, (entry, _)) in parsed.iter_mut().enumerate() {
        entry.split = if k < n_train { Split::Train } else { Split::Val };
    }
    let train_mols: Vec<Molecule> = parsed
        .iter()
        .filter(|(e, _)| e.split == Split::Train)
        .flat_map(|(_, m)| m.iter().cloned())
        .collect();
    let histogram = atom_count_histogram(&train_mols, n_points, seed)?;
    Ok(Manifest {
        format: MANIFEST_FORMAT.into(),
        train_fraction,
        entries: parsed.into_iter().map(|(e, _)| e).collect(),
        skipped,
        histogram,
    })
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| PipelineError::Data(format!("bad manifest: {e}")))?;
        if m.format != MANIFEST_FORMAT {
            return Err(PipelineError::Data(format!("unsupported manifest format {:?}", m.format)));
        }
        Ok(m)
    }

    /// Molecules of one split, in manifest order; file hashes must still match.
    pub fn load_split(&self, dir: &Path, split: Split) -> Result<Vec<Molecule>, PipelineError> {
        let mut out = Vec::new();
        for e in self.entries.iter().filter(|e| e.split == split) {
            let path = dir.join(&e.file);
            let bytes = std::fs::read(&path).map_err(|err| PipelineError::Data(format!("{}: {err}", path.display())))?;
            if sha256_hex(&bytes) != e.sha256 {
                return Err(PipelineError::Data(format!("{} changed since ingestion", path.display())));
            }
            let text = String::from_utf8(bytes).map_err(|_| PipelineError::Data(format!("{} is not UTF-8", path.display())))?;
            out.extend(parse_sdf(&text).map_err(|err| PipelineError::Data(format!("{}: {err}", path.display())))?);
        }
        Ok(out)
    }
}
