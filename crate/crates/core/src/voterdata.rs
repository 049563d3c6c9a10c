//! Voter-roll ingestion.
//!
//! Voter extracts arrive as CSV files whose layout differs per state. A
//! [`VoterSchema`] maps the columns we need (id, race, DMA or county, state)
//! and normalizes race codes; everything not mapped to Black or White is
//! stored as [`Race::Other`]. No real PII is kept: each individual carries
//! only an opaque `contact_key` used for custom-audience matching.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::sha256_hex;

#[derive(Debug, Error)]
pub enum VoterDataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: mapped column `{0}` not found in header")]
    MissingColumn(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("duplicate record_id `{0}`")]
    DuplicateRecord(String),
    #[error("row {row}: county `{county}` has no DMA mapping")]
    UnmappedCounty { row: usize, county: String },
    #[error("row {row}: empty {field}")]
    EmptyField { row: usize, field: &'static str },
    #[error("groups `{first}` and `{second}` both contain region `{region}`")]
    OverlappingGroups {
        region: String,
        first: String,
        second: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Race {
    Black,
    White,
    Other,
}

impl Race {
    pub const ALL: [Race; 3] = [Race::Black, Race::White, Race::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Race::Black => "Black",
            Race::White => "White",
            Race::Other => "Other",
        }
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Race {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "black" => Ok(Race::Black),
            "white" => Ok(Race::White),
            "other" => Ok(Race::Other),
            other => Err(format!("unknown race `{other}`")),
        }
    }
}

/// Which attribute of an individual acts as the region in an audience:
/// media market (DMA) or whole state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKey {
    #[default]
    Dma,
    State,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Individual {
    pub record_id: String,
    pub race: Race,
    pub dma: Arc<str>,
    pub state: Arc<str>,
    pub contact_key: String,
}

impl Individual {
    pub fn region(&self, key: RegionKey) -> &str {
        match key {
            RegionKey::Dma => &self.dma,
            RegionKey::State => &self.state,
        }
    }
}

/// A named set of regions. Depending on the [`RegionKey`] in use the names are
/// DMAs or state codes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DmaGroup {
    pub group_id: String,
    pub dma_names: BTreeSet<String>,
}

impl DmaGroup {
    pub fn new<I, S>(group_id: impl Into<String>, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            group_id: group_id.into(),
            dma_names: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn contains(&self, region: &str) -> bool {
        self.dma_names.contains(region)
    }
}

/// Fails if any region is listed by two groups.
pub fn check_disjoint(groups: &[DmaGroup]) -> Result<(), VoterDataError> {
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for g in groups {
        if g.dma_names.is_empty() {
            return Err(VoterDataError::Schema(format!(
                "group `{}` lists no regions",
                g.group_id
            )));
        }
        for name in &g.dma_names {
            if let Some(first) = owner.insert(name, &g.group_id) {
                return Err(VoterDataError::OverlappingGroups {
                    region: name.clone(),
                    first: first.to_string(),
                    second: g.group_id.clone(),
                });
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub id: String,
    pub race: String,
    #[serde(default)]
    pub dma: Option<String>,
    #[serde(default)]
    pub county: Option<String>,
    #[serde(default)]
    pub state: Option<String>,
    #[serde(default)]
    pub contact_key: Option<String>,
}

/// Column mapping and code tables for one voter-file layout.
///
/// DMA comes either from a DMA column or from a county column looked up in
/// `county_to_dma`. State comes from a column or from `default_state`.
/// When no contact-key column is mapped the key is a hash of the record id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoterSchema {
    pub columns: ColumnMap,
    #[serde(default)]
    pub race_codes: BTreeMap<String, Race>,
    #[serde(default)]
    pub county_to_dma: BTreeMap<String, String>,
    #[serde(default)]
    pub default_state: Option<String>,
    #[serde(default)]
    pub delimiter: Option<char>,
}

impl VoterSchema {
    /// Layout of the normalized store written by [`VoterDataset::write_csv`].
    pub fn normalized() -> Self {
        Self {
            columns: ColumnMap {
                id: "record_id".into(),
                race: "race".into(),
                dma: Some("dma".into()),
                county: None,
                state: Some("state".into()),
                contact_key: Some("contact_key".into()),
            },
            race_codes: Race::ALL.iter().map(|r| (r.to_string(), *r)).collect(),
            county_to_dma: BTreeMap::new(),
            default_state: None,
            delimiter: None,
        }
    }

    /// Loads a schema from TOML or JSON, chosen by file extension.
    pub fn load(path: &Path) -> Result<Self, VoterDataError> {
        let text = std::fs::read_to_string(path).map_err(|source| VoterDataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let schema: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| VoterDataError::Schema(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| VoterDataError::Schema(e.to_string()))?
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), VoterDataError> {
        match (&self.columns.dma, &self.columns.county) {
            (Some(_), _) => {}
            (None, Some(_)) if !self.county_to_dma.is_empty() => {}
            (None, Some(_)) => {
                return Err(VoterDataError::Schema(
                    "county column mapped but county_to_dma table is empty".into(),
                ))
            }
            (None, None) => {
                return Err(VoterDataError::Schema(
                    "either a dma or a county column must be mapped".into(),
                ))
            }
        }
        if self.columns.state.is_none() && self.default_state.is_none() {
            return Err(VoterDataError::Schema(
                "either a state column or default_state is required".into(),
            ));
        }
        Ok(())
    }

    pub fn race_for_code(&self, code: &str) -> Race {
        self.race_codes
            .get(code.trim())
            .copied()
            .unwrap_or(Race::Other)
    }
}

struct ColumnIndex {
    id: usize,
    race: usize,
    dma: Option<usize>,
    county: Option<usize>,
    state: Option<usize>,
    contact_key: Option<usize>,
}

impl ColumnIndex {
    fn resolve(headers: &csv::StringRecord, cols: &ColumnMap) -> Result<Self, VoterDataError> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| VoterDataError::MissingColumn(name.to_string()))
        };
        let opt = |name: &Option<String>| name.as_deref().map(find).transpose();
        Ok(Self {
            id: find(&cols.id)?,
            race: find(&cols.race)?,
            dma: opt(&cols.dma)?,
            county: opt(&cols.county)?,
            state: opt(&cols.state)?,
            contact_key: opt(&cols.contact_key)?,
        })
    }
}

/// Interns region and state strings; voter files repeat a handful of values
/// millions of times.
#[derive(Default)]
struct Interner(HashSet<Arc<str>>);

impl Interner {
    fn get(&mut self, s: &str) -> Arc<str> {
        if let Some(existing) = self.0.get(s) {
            return existing.clone();
        }
        let a: Arc<str> = Arc::from(s);
        self.0.insert(a.clone());
        a
    }
}

fn opaque_key(record_id: &str) -> String {
    sha256_hex(record_id.as_bytes())[..32].to_string()
}

/// Streams normalized individuals out of a voter CSV. Returns the number of
/// data rows read.
pub fn read_voter_rows<R: Read>(
    reader: R,
    schema: &VoterSchema,
    mut sink: impl FnMut(Individual) -> Result<(), VoterDataError>,
) -> Result<usize, VoterDataError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter.unwrap_or(',') as u8)
        .flexible(false)
        .from_reader(reader);
    let idx = ColumnIndex::resolve(rdr.headers()?, &schema.columns)?;
    let default_state = schema.default_state.as_deref().unwrap_or("");
    let mut interner = Interner::default();
    let mut rows = 0usize;
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        rows += 1;
        let row = rows;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let record_id = field(idx.id);
        if record_id.is_empty() {
            return Err(VoterDataError::EmptyField { row, field: "record_id" });
        }
        let dma = match (idx.dma, idx.county) {
            (Some(d), _) => field(d).to_string(),
            (None, Some(c)) => {
                let county = field(c);
                schema
                    .county_to_dma
                    .get(county)
                    .cloned()
                    .ok_or_else(|| VoterDataError::UnmappedCounty {
                        row,
                        county: county.to_string(),
                    })?
            }
            (None, None) => unreachable!("validated schema maps dma or county"),
        };
        if dma.is_empty() {
            return Err(VoterDataError::EmptyField { row, field: "dma" });
        }
        let state = match idx.state {
            Some(s) if !field(s).is_empty() => field(s),
            _ => default_state,
        };
        if state.is_empty() {
            return Err(VoterDataError::EmptyField { row, field: "state" });
        }
        let contact_key = match idx.contact_key {
            Some(k) if !field(k).is_empty() => field(k).to_string(),
            _ => opaque_key(record_id),
        };
        sink(Individual {
            record_id: record_id.to_string(),
            race: schema.race_for_code(field(idx.race)),
            dma: interner.get(&dma),
            state: interner.get(state),
            contact_key,
        })?;
    }
    Ok(rows)
}

/// An immutable, validated set of individuals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VoterDataset {
    individuals: Vec<Individual>,
    rows_read: usize,
}

impl VoterDataset {
    pub fn from_individuals(individuals: Vec<Individual>) -> Result<Self, VoterDataError> {
        let mut seen = HashSet::with_capacity(individuals.len());
        for ind in &individuals {
            if ind.dma.is_empty() {
                return Err(VoterDataError::Schema(format!(
                    "record `{}` has an empty dma",
                    ind.record_id
                )));
            }
            if ind.state.is_empty() {
                return Err(VoterDataError::Schema(format!(
                    "record `{}` has an empty state",
                    ind.record_id
                )));
            }
            if !seen.insert(ind.record_id.as_str()) {
                return Err(VoterDataError::DuplicateRecord(ind.record_id.clone()));
            }
        }
        let rows_read = individuals.len();
        Ok(Self {
            individuals,
            rows_read,
        })
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn rows_read(&self) -> usize {
        self.rows_read
    }

    /// Looks up individuals by contact key.
    pub fn by_contact_key(&self) -> BTreeMap<&str, &Individual> {
        self.individuals
            .iter()
            .map(|i| (i.contact_key.as_str(), i))
            .collect()
    }

    /// Writes the normalized store (readable with [`VoterSchema::normalized`]).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), VoterDataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["record_id", "race", "dma", "state", "contact_key"])?;
        for i in &self.individuals {
            w.write_record([
                i.record_id.as_str(),
                i.race.as_str(),
                &i.dma,
                &i.state,
                i.contact_key.as_str(),
            ])?;
        }
        w.flush().map_err(|source| VoterDataError::Io {
            path: PathBuf::from("<writer>"),
            source,
        })?;
        Ok(())
    }

    pub fn read_normalized(path: &Path) -> Result<Self, VoterDataError> {
        ingest_voter_file(path, &VoterSchema::normalized())
    }
}

fn open(path: &Path) -> Result<File, VoterDataError> {
    File::open(path).map_err(|source| VoterDataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a voter extract into a dataset. Rows with unrecognized race codes
/// are kept as [`Race::Other`].
pub fn ingest_voter_file(path: &Path, schema: &VoterSchema) -> Result<VoterDataset, VoterDataError> {
    let mut individuals = Vec::new();
    let rows = read_voter_rows(io::BufReader::new(open(path)?), schema, |ind| {
        individuals.push(ind);
        Ok(())
    })?;
    let mut dataset = VoterDataset::from_individuals(individuals)?;
    dataset.rows_read = rows;
    log::info!("ingested {} rows from {}", rows, path.display());
    Ok(dataset)
}

/// Counts of individuals per (group, race).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub counts: BTreeMap<(String, Race), u64>,
}

impl DatasetSummary {
    fn zeroed(groups: &[DmaGroup]) -> Self {
        let counts = groups
            .iter()
            .flat_map(|g| Race::ALL.iter().map(move |r| ((g.group_id.clone(), *r), 0)))
            .collect();
        Self { counts }
    }

    pub fn get(&self, group_id: &str, race: Race) -> u64 {
        self.counts
            .get(&(group_id.to_string(), race))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// CSV with columns `group_id,race,count`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), VoterDataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["group_id", "race", "count"])?;
        for ((group, race), count) in &self.counts {
            w.write_record([group.as_str(), race.as_str(), &count.to_string()])?;
        }
        w.flush().map_err(|source| VoterDataError::Io {
            path: PathBuf::from("<writer>"),
            source,
        })?;
        Ok(())
    }
}

struct GroupLookup<'a> {
    by_region: BTreeMap<&'a str, &'a str>,
}

impl<'a> GroupLookup<'a> {
    fn new(groups: &'a [DmaGroup]) -> Result<Self, VoterDataError> {
        check_disjoint(groups)?;
        let by_region = groups
            .iter()
            .flat_map(|g| g.dma_names.iter().map(move |n| (n.as_str(), g.group_id.as_str())))
            .collect();
        Ok(Self { by_region })
    }

    fn group_of(&self, region: &str) -> Option<&'a str> {
        self.by_region.get(region).copied()
    }
}

/// Tallies individuals per (group, race). Individuals whose region is in no
/// group are left out.
pub fn summarize(
    dataset: &VoterDataset,
    groups: &[DmaGroup],
    key: RegionKey,
) -> Result<DatasetSummary, VoterDataError> {
    let lookup = GroupLookup::new(groups)?;
    let mut summary = DatasetSummary::zeroed(groups);
    for ind in dataset.individuals() {
        if let Some(g) = lookup.group_of(ind.region(key)) {
            *summary.counts.entry((g.to_string(), ind.race)).or_default() += 1;
        }
    }
    Ok(summary)
}

/// Like [`summarize`] but streams the file without holding the dataset in
/// memory. Intended for full-size state voter files.
pub fn summarize_voter_file(
    path: &Path,
    schema: &VoterSchema,
    groups: &[DmaGroup],
    key: RegionKey,
) -> Result<(DatasetSummary, usize), VoterDataError> {
    let lookup = GroupLookup::new(groups)?;
    let mut summary = DatasetSummary::zeroed(groups);
    let mut bucket: BTreeMap<(&str, Race), u64> = BTreeMap::new();
    let rows = read_voter_rows(io::BufReader::new(open(path)?), schema, |ind| {
        if let Some(g) = lookup.group_of(ind.region(key)) {
            *bucket.entry((g, ind.race)).or_default() += 1;
        }
        Ok(())
    })?;
    for ((g, race), n) in bucket {
        summary.counts.insert((g.to_string(), race), n);
    }
    Ok((summary, rows))
}
