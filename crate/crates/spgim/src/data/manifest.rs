//! Composition planning and JSON-lines manifests.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::seed_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Backgrounds per foreground used by the composition protocol.
    pub fn default_ratio(self) -> usize {
        match self {
            Split::Train => 100,
            Split::Test => 20,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split {other:?}, expected train|test"
            ))),
        }
    }
}

/// One planned (foreground, background) pairing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedPair {
    pub fg_index: usize,
    pub bg_index: usize,
    pub fg_id: String,
    pub bg_id: String,
    /// Per-sample seed derived from the plan seed and the pair identity.
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct CompositionPlan {
    pub pairs: Vec<PlannedPair>,
    pub ratio: usize,
    pub split: Split,
    pub seed: u64,
    /// True when the background pool was smaller than the ratio and
    /// sampling fell back to replacement.
    pub sampled_with_replacement: bool,
}

/// Pair every foreground with `ratio` backgrounds. Within one foreground the
/// backgrounds are sampled without replacement; across foregrounds the pool
/// is reused. Deterministic for a fixed seed.
pub fn plan_composition(
    fg_ids: &[String],
    bg_ids: &[String],
    ratio: usize,
    split: Split,
    seed: u64,
) -> Result<CompositionPlan> {
    if ratio < 1 {
        return Err(Error::InvalidArgument(format!("ratio {ratio} must be >= 1")));
    }
    if bg_ids.is_empty() {
        return Err(Error::InvalidArgument(
            "background pool is empty".to_string(),
        ));
    }
    let with_replacement = bg_ids.len() < ratio;
    let mut pairs = Vec::with_capacity(fg_ids.len() * ratio);
    for (fi, fg_id) in fg_ids.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(seed_for(seed, fg_id));
        let chosen: Vec<usize> = if with_replacement {
            use rand::Rng;
            (0..ratio).map(|_| rng.random_range(0..bg_ids.len())).collect()
        } else {
            let mut idx: Vec<usize> = (0..bg_ids.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(ratio);
            idx
        };
        for (k, bi) in chosen.into_iter().enumerate() {
            let pair_seed = seed_for(seed, &format!("{fg_id}/{}/{k}", bg_ids[bi]));
            pairs.push(PlannedPair {
                fg_index: fi,
                bg_index: bi,
                fg_id: fg_id.clone(),
                bg_id: bg_ids[bi].clone(),
                seed: pair_seed,
            });
        }
    }
    Ok(CompositionPlan {
        pairs,
        ratio,
        split,
        seed,
        sampled_with_replacement: with_replacement,
    })
}

/// One manifest line. Field order is part of the on-disk format.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image: String,
    pub alpha: String,
    pub trimap: String,
    pub saliency: String,
    pub fg_id: String,
    pub bg_id: String,
    pub seed: u64,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub split: Split,
    pub composition_ratio: usize,
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(manifest.to_jsonl()?.as_bytes())?;
    Ok(())
}

pub fn read_manifest(path: &Path, split: Split, ratio: usize) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(DatasetManifest {
        records,
        split,
        composition_ratio: ratio,
    })
}

/// Caption-pretraining manifest line: {image, caption}.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct CaptionRecord {
    pub image: String,
    pub caption: String,
}

pub fn read_caption_manifest(path: &Path) -> Result<Vec<CaptionRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

pub fn write_caption_manifest(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for rec in records {
        let line = serde_json::to_string(rec)?;
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
    }
    Ok(())
}
