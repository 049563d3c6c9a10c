//! School catalog, shortlisting and pairing.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("school `{name}`: {reason}")]
    Invalid { name: String, reason: String },
    #[error("school `{0}` not found in catalog")]
    UnknownSchool(String),
    #[error("`{0}` is a public school and cannot be the skewed side of a pair")]
    PublicSkewed(String),
    #[error("`{0}` is not a public school")]
    NotPublic(String),
    #[error("explicit selection lists {skewed} skewed schools but {public} public schools")]
    LengthMismatch { skewed: usize, public: usize },
    #[error("catalog is empty")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sector {
    ForProfit,
    Public,
    PrivateNonProfit,
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sector::ForProfit => "ForProfit",
            Sector::Public => "Public",
            Sector::PrivateNonProfit => "PrivateNonProfit",
        })
    }
}

impl FromStr for Sector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "forprofit" => Ok(Sector::ForProfit),
            "public" => Ok(Sector::Public),
            "privatenonprofit" | "nonprofit" => Ok(Sector::PrivateNonProfit),
            other => Err(format!("unknown sector `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct School {
    pub name: String,
    pub sector: Sector,
    pub pct_black: f64,
    pub pct_white: f64,
    pub pct_other: f64,
    pub admit_rate: f64,
    pub enrollment: u64,
    pub four_year: bool,
    pub online_program: bool,
    pub active_platform_page: bool,
    pub active_advertiser: bool,
    /// Landing page for the online program, used as the ad destination.
    #[serde(default)]
    pub online_url: Option<String>,
}

impl School {
    pub fn validate(&self) -> Result<(), CatalogError> {
        let invalid = |reason: String| CatalogError::Invalid {
            name: self.name.clone(),
            reason,
        };
        let total = self.pct_black + self.pct_white + self.pct_other;
        if (total - 100.0).abs() > 1.0 {
            return Err(invalid(format!("race percentages sum to {total}")));
        }
        for p in [self.pct_black, self.pct_white, self.pct_other] {
            if !(0.0..=100.0).contains(&p) {
                return Err(invalid(format!("percentage {p} out of range")));
            }
        }
        if !(0.0..=100.0).contains(&self.admit_rate) {
            return Err(invalid(format!("admit rate {} out of range", self.admit_rate)));
        }
        Ok(())
    }

    /// Black minus White share, in percentage points.
    pub fn black_minus_white(&self) -> f64 {
        self.pct_black - self.pct_white
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchoolPair {
    pub pair_id: String,
    pub skewed_school: School,
    pub public_school: School,
}

impl SchoolPair {
    pub fn new(
        pair_id: impl Into<String>,
        skewed_school: School,
        public_school: School,
    ) -> Result<Self, CatalogError> {
        if skewed_school.sector == Sector::Public {
            return Err(CatalogError::PublicSkewed(skewed_school.name));
        }
        if public_school.sector != Sector::Public {
            return Err(CatalogError::NotPublic(public_school.name));
        }
        Ok(Self {
            pair_id: pair_id.into(),
            skewed_school,
            public_school,
        })
    }
}

pub fn read_catalog<R: Read>(reader: R) -> Result<Vec<School>, CatalogError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let school: School = rec?;
        school.validate()?;
        out.push(school);
    }
    Ok(out)
}

pub fn write_catalog<W: Write>(schools: &[School], writer: W) -> Result<(), CatalogError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in schools {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// What to do with schools under the admit-rate floor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdmitFloorMode {
    #[default]
    Reject,
    Warn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShortlistCriteria {
    pub require_four_year: bool,
    pub require_online_program: bool,
    pub min_enrollment: Option<u64>,
    pub require_active_page: bool,
    pub require_active_advertiser: bool,
    pub admit_floor: Option<f64>,
    pub admit_floor_mode: AdmitFloorMode,
}

impl Default for ShortlistCriteria {
    fn default() -> Self {
        Self {
            require_four_year: true,
            require_online_program: true,
            min_enrollment: Some(5_000),
            require_active_page: true,
            require_active_advertiser: true,
            admit_floor: Some(50.0),
            admit_floor_mode: AdmitFloorMode::Reject,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Shortlist {
    pub for_profit: Vec<School>,
    pub public: Vec<School>,
    /// Schools kept despite missing the admit floor in warn mode.
    pub warnings: Vec<String>,
}

impl ShortlistCriteria {
    fn passes_hard(&self, s: &School) -> bool {
        (!self.require_four_year || s.four_year)
            && (!self.require_online_program || s.online_program)
            && self.min_enrollment.is_none_or(|m| s.enrollment >= m)
            && (!self.require_active_page || s.active_platform_page)
            && (!self.require_active_advertiser || s.active_advertiser)
    }

    fn below_floor(&self, s: &School) -> bool {
        self.admit_floor.is_some_and(|f| s.admit_rate < f)
    }
}

/// Keeps the for-profit and public schools meeting every enabled criterion.
pub fn shortlist(catalog: &[School], criteria: &ShortlistCriteria) -> Shortlist {
    let mut out = Shortlist::default();
    for s in catalog.iter().filter(|s| criteria.passes_hard(s)) {
        let bucket = match s.sector {
            Sector::ForProfit => &mut out.for_profit,
            Sector::Public => &mut out.public,
            Sector::PrivateNonProfit => continue,
        };
        if criteria.below_floor(s) {
            match criteria.admit_floor_mode {
                AdmitFloorMode::Reject => continue,
                AdmitFloorMode::Warn => out.warnings.push(format!(
                    "{} admit rate {}% is below the {}% floor",
                    s.name,
                    s.admit_rate,
                    criteria.admit_floor.unwrap_or_default()
                )),
            }
        }
        bucket.push(s.clone());
    }
    out
}

fn by_key_desc(key: impl Fn(&School) -> f64) -> impl Fn(&School, &School) -> Ordering {
    move |a, b| {
        key(b)
            .total_cmp(&key(a))
            .then_with(|| a.name.cmp(&b.name))
    }
}

/// Pairs for-profit schools, sorted by Black-minus-White share descending,
/// with public schools sorted by White-minus-Black share descending,
/// position by position. Ties break on name.
pub fn pair_schools(for_profit: &[School], public: &[School]) -> Vec<SchoolPair> {
    let mut fp = for_profit.to_vec();
    let mut pb = public.to_vec();
    fp.sort_by(by_key_desc(|s| s.pct_black - s.pct_white));
    pb.sort_by(by_key_desc(|s| s.pct_white - s.pct_black));
    fp.into_iter()
        .zip(pb)
        .enumerate()
        .map(|(i, (f, p))| SchoolPair {
            pair_id: format!("epair-{}a", i + 1),
            skewed_school: f,
            public_school: p,
        })
        .collect()
}

/// Explicit selection mode: the caller names the skewed schools (for
/// example schools under legal scrutiny) and they are zipped, in the given
/// order, with the given public schools.
pub fn pair_explicit(skewed: &[School], public: &[School]) -> Result<Vec<SchoolPair>, CatalogError> {
    if skewed.len() != public.len() {
        return Err(CatalogError::LengthMismatch {
            skewed: skewed.len(),
            public: public.len(),
        });
    }
    skewed
        .iter()
        .zip(public)
        .enumerate()
        .map(|(i, (s, p))| SchoolPair::new(format!("epair-{}b", i + 1), s.clone(), p.clone()))
        .collect()
}

pub fn find<'a>(catalog: &'a [School], name: &str) -> Result<&'a School, CatalogError> {
    catalog
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| CatalogError::UnknownSchool(name.to_string()))
}

/// Enrollment-weighted Black share per sector. A sector whose schools have
/// zero total enrollment maps to `None`.
pub fn defacto_skew(catalog: &[School]) -> Result<BTreeMap<Sector, Option<f64>>, CatalogError> {
    if catalog.is_empty() {
        return Err(CatalogError::Empty);
    }
    let mut acc: BTreeMap<Sector, (f64, u64)> = BTreeMap::new();
    for s in catalog {
        let e = acc.entry(s.sector).or_default();
        e.0 += s.pct_black * s.enrollment as f64;
        e.1 += s.enrollment;
    }
    Ok(acc
        .into_iter()
        .map(|(sector, (weighted, total))| {
            (sector, (total > 0).then(|| weighted / total as f64))
        })
        .collect())
}

/// Writes pairs in the layout of a pairing table: pair id, then name,
/// B/W/O shares and admit rate for each school.
pub fn write_pairs<W: Write>(pairs: &[SchoolPair], writer: W) -> Result<(), CatalogError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "pair_id",
        "skewed_school",
        "skewed_sector",
        "skewed_pct_black",
        "skewed_pct_white",
        "skewed_pct_other",
        "skewed_admit_rate",
        "public_school",
        "public_pct_black",
        "public_pct_white",
        "public_pct_other",
        "public_admit_rate",
    ])?;
    for p in pairs {
        let (s, q) = (&p.skewed_school, &p.public_school);
        w.write_record([
            p.pair_id.clone(),
            s.name.clone(),
            s.sector.to_string(),
            s.pct_black.to_string(),
            s.pct_white.to_string(),
            s.pct_other.to_string(),
            s.admit_rate.to_string(),
            q.name.clone(),
            q.pct_black.to_string(),
            q.pct_white.to_string(),
            q.pct_other.to_string(),
            q.admit_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `(pair_id, skewed name, public name)` rows of a pairs file.
pub fn read_pair_names<R: Read>(reader: R) -> Result<Vec<(String, String, String)>, CatalogError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| CatalogError::Invalid {
            name: "pairs file".into(),
            reason: format!("missing column {name}"),
        })
    };
    let (id, sk, pb) = (col("pair_id")?, col("skewed_school")?, col("public_school")?);
    rdr.records()
        .map(|r| {
            let r = r?;
            Ok((r[id].to_string(), r[sk].to_string(), r[pb].to_string()))
        })
        .collect()
}
