//! Audience partitions in which region membership determines race.
//!
//! A partition takes Black individuals only from its black group of regions
//! and White individuals only from its white group, so a delivery report
//! broken down by region can be read as a breakdown by race. Flipped
//! replicas swap the two groups to control for location effects.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_seed, stream_rng};
use crate::voterdata::{check_disjoint, DmaGroup, Individual, Race, RegionKey, VoterDataError, VoterDataset};

#[derive(Debug, Error)]
pub enum AudienceError {
    #[error("not enough eligible {race} individuals: need {required}, have {available}")]
    Capacity {
        race: Race,
        required: usize,
        available: usize,
    },
    #[error(transparent)]
    Groups(#[from] VoterDataError),
    #[error("per_race_size must be positive")]
    ZeroSize,
    #[error("partition invariant violated: {0}")]
    Invariant(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Parameters for building one partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub name: String,
    pub black_group: DmaGroup,
    pub white_group: DmaGroup,
    pub per_race_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub region_key: RegionKey,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudiencePartition {
    pub name: String,
    pub black_group: DmaGroup,
    pub white_group: DmaGroup,
    pub members: Vec<Individual>,
    pub per_race_size: usize,
    pub flipped: bool,
    pub seed: u64,
    pub region_key: RegionKey,
}

/// Metadata sidecar for an exported partition. Contains no members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionMeta {
    pub name: String,
    pub black_group: DmaGroup,
    pub white_group: DmaGroup,
    pub per_race_size: usize,
    pub flipped: bool,
    pub seed: u64,
    pub region_key: RegionKey,
    pub member_count: usize,
}

const FLIP_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn eligible<'a>(
    dataset: &'a VoterDataset,
    race: Race,
    group: &DmaGroup,
    key: RegionKey,
) -> Vec<&'a Individual> {
    dataset
        .individuals()
        .iter()
        .filter(|i| i.race == race && group.contains(i.region(key)))
        .collect()
}

/// Draws `k * size` distinct members uniformly and splits them into `k`
/// chunks. Each chunk keeps dataset order.
fn draw_disjoint<'a>(
    pool: &[&'a Individual],
    race: Race,
    size: usize,
    k: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<Vec<&'a Individual>>, AudienceError> {
    let required = size * k;
    if pool.len() < required {
        return Err(AudienceError::Capacity {
            race,
            required,
            available: pool.len(),
        });
    }
    let mut rng = stream_rng(seed, stream);
    let picked = index::sample(&mut rng, pool.len(), required).into_vec();
    Ok(picked
        .chunks(size)
        .map(|chunk| {
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| pool[i]).collect()
        })
        .collect())
}

fn build_many(
    dataset: &VoterDataset,
    spec: &PartitionSpec,
    k: usize,
) -> Result<Vec<Vec<Individual>>, AudienceError> {
    if spec.per_race_size == 0 {
        return Err(AudienceError::ZeroSize);
    }
    check_disjoint(&[spec.black_group.clone(), spec.white_group.clone()])?;
    let blacks = eligible(dataset, Race::Black, &spec.black_group, spec.region_key);
    let whites = eligible(dataset, Race::White, &spec.white_group, spec.region_key);
    let b = draw_disjoint(&blacks, Race::Black, spec.per_race_size, k, spec.seed, 0)?;
    let w = draw_disjoint(&whites, Race::White, spec.per_race_size, k, spec.seed, 1)?;
    Ok(b.into_iter()
        .zip(w)
        .map(|(b, w)| b.into_iter().chain(w).cloned().collect())
        .collect())
}

/// Samples `per_race_size` Black members from the black group and as many
/// White members from the white group, uniformly without replacement.
/// Deterministic in `spec.seed`.
pub fn build_partition(
    dataset: &VoterDataset,
    spec: &PartitionSpec,
) -> Result<AudiencePartition, AudienceError> {
    let members = build_many(dataset, spec, 1)?.pop().unwrap_or_default();
    Ok(AudiencePartition {
        name: spec.name.clone(),
        black_group: spec.black_group.clone(),
        white_group: spec.white_group.clone(),
        members,
        per_race_size: spec.per_race_size,
        flipped: false,
        seed: spec.seed,
        region_key: spec.region_key,
    })
}

/// Builds the flipped replica: groups swapped, a fresh sample drawn, and the
/// name suffixed with `f`. Flipping twice restores the original partition.
pub fn flip(
    partition: &AudiencePartition,
    dataset: &VoterDataset,
) -> Result<AudiencePartition, AudienceError> {
    let name = match partition.name.strip_suffix('f') {
        Some(base) if partition.flipped => base.to_string(),
        _ => format!("{}f", partition.name),
    };
    let spec = PartitionSpec {
        name,
        black_group: partition.white_group.clone(),
        white_group: partition.black_group.clone(),
        per_race_size: partition.per_race_size,
        seed: partition.seed ^ FLIP_SALT,
        region_key: partition.region_key,
    };
    let mut out = build_partition(dataset, &spec)?;
    out.flipped = !partition.flipped;
    Ok(out)
}

/// Builds `k` pairwise member-disjoint partitions named `{name}-1..k`.
///
/// The member sets are jointly determined by `(spec.seed, k)`. Each output
/// records a seed derived from its index so that flipping distinct
/// partitions draws distinct samples.
pub fn disjoint_partitions(
    dataset: &VoterDataset,
    spec: &PartitionSpec,
    k: usize,
) -> Result<Vec<AudiencePartition>, AudienceError> {
    let sets = build_many(dataset, spec, k)?;
    Ok(sets
        .into_iter()
        .enumerate()
        .map(|(i, members)| {
            let name = format!("{}-{}", spec.name, i + 1);
            AudiencePartition {
                seed: derive_seed(spec.seed, &name),
                name,
                black_group: spec.black_group.clone(),
                white_group: spec.white_group.clone(),
                members,
                per_race_size: spec.per_race_size,
                flipped: false,
                region_key: spec.region_key,
            }
        })
        .collect())
}

impl AudiencePartition {
    pub fn meta(&self) -> PartitionMeta {
        PartitionMeta {
            name: self.name.clone(),
            black_group: self.black_group.clone(),
            white_group: self.white_group.clone(),
            per_race_size: self.per_race_size,
            flipped: self.flipped,
            seed: self.seed,
            region_key: self.region_key,
            member_count: self.members.len(),
        }
    }

    pub fn count(&self, race: Race) -> usize {
        self.members.iter().filter(|m| m.race == race).count()
    }

    /// Region -> race over member regions.
    pub fn region_races(&self) -> BTreeMap<&str, Race> {
        self.members
            .iter()
            .map(|m| (m.region(self.region_key), m.race))
            .collect()
    }

    /// Checks every construction invariant, returning all breaches.
    pub fn check_invariants(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        if self
            .black_group
            .dma_names
            .intersection(&self.white_group.dma_names)
            .next()
            .is_some()
        {
            problems.push("black and white groups overlap".to_string());
        }
        let mut seen: BTreeMap<&str, Race> = BTreeMap::new();
        let mut ids = HashSet::new();
        for m in &self.members {
            let region = m.region(self.region_key);
            match m.race {
                Race::Black if !self.black_group.contains(region) => {
                    problems.push(format!("Black member {} outside black group", m.record_id))
                }
                Race::White if !self.white_group.contains(region) => {
                    problems.push(format!("White member {} outside white group", m.record_id))
                }
                Race::Other => problems.push(format!("member {} has race Other", m.record_id)),
                _ => {}
            }
            if let Some(prev) = seen.insert(region, m.race) {
                if prev != m.race {
                    problems.push(format!("region {region} maps to two races"));
                }
            }
            if !ids.insert(m.record_id.as_str()) {
                problems.push(format!("member {} listed twice", m.record_id));
            }
        }
        let (b, w) = (self.count(Race::Black), self.count(Race::White));
        if b != self.per_race_size || w != self.per_race_size {
            problems.push(format!(
                "per-race sizes {b}/{w} differ from {}",
                self.per_race_size
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    /// Race-free upload manifest: `contact_key,region`.
    pub fn write_manifest<W: Write>(&self, writer: W) -> Result<(), AudienceError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["contact_key", "region"])?;
        for m in &self.members {
            w.write_record([m.contact_key.as_str(), m.region(self.region_key)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<dir>/<name>.csv` and `<dir>/<name>.json`.
    pub fn export(&self, dir: &Path) -> Result<(), AudienceError> {
        std::fs::create_dir_all(dir)?;
        let csv = std::fs::File::create(dir.join(format!("{}.csv", self.name)))?;
        self.write_manifest(std::io::BufWriter::new(csv))?;
        let json = serde_json::to_string_pretty(&self.meta())
            .map_err(|e| AudienceError::Manifest(e.to_string()))?;
        std::fs::write(dir.join(format!("{}.json", self.name)), json + "\n")?;
        Ok(())
    }

    /// Reloads an exported partition, resolving contact keys against the
    /// dataset it was drawn from.
    pub fn load(dir: &Path, name: &str, dataset: &VoterDataset) -> Result<Self, AudienceError> {
        let meta = PartitionMeta::load(&dir.join(format!("{name}.json")))?;
        let lookup = dataset.by_contact_key();
        let mut rdr = csv::Reader::from_path(dir.join(format!("{name}.csv")))?;
        let mut members = Vec::with_capacity(meta.member_count);
        for rec in rdr.records() {
            let rec = rec?;
            let key = rec.get(0).unwrap_or("");
            let ind = lookup.get(key).ok_or_else(|| {
                AudienceError::Manifest(format!("contact key {key} not in dataset"))
            })?;
            members.push((*ind).clone());
        }
        let p = AudiencePartition {
            name: meta.name,
            black_group: meta.black_group,
            white_group: meta.white_group,
            members,
            per_race_size: meta.per_race_size,
            flipped: meta.flipped,
            seed: meta.seed,
            region_key: meta.region_key,
        };
        p.check_invariants()
            .map_err(|v| AudienceError::Invariant(v.join("; ")))?;
        Ok(p)
    }
}

impl PartitionMeta {
    pub fn load(path: &Path) -> Result<Self, AudienceError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| AudienceError::Manifest(format!("{}: {e}", path.display())))
    }
}
