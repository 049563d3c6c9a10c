//! Synthetic fixtures: school catalogs, NC-style voter rolls and a complete
//! demo workspace. Nothing here is real personal data; record ids are
//! sequential and county codes are invented.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::catalog::{School, Sector};
use crate::seed::stream_rng;
use crate::voterdata::{DmaGroup, Race};

#[allow(clippy::too_many_arguments)]
fn school(name: &str, sector: Sector, b: f64, w: f64, o: f64, admit: f64, enrollment: u64) -> School {
    School {
        name: name.into(),
        sector,
        pct_black: b,
        pct_white: w,
        pct_other: o,
        admit_rate: admit,
        enrollment,
        four_year: true,
        online_program: true,
        active_platform_page: true,
        active_advertiser: true,
        online_url: None,
    }
}

/// The six schools of the sorted-pairing study, with their published
/// race shares and admit rates. Enrollments are illustrative.
pub fn paired_study_schools() -> Vec<School> {
    vec![
        school("Strayer University", Sector::ForProfit, 79.0, 13.0, 8.0, 100.0, 40_000),
        school("American InterContinental University", Sector::ForProfit, 29.0, 26.0, 45.0, 100.0, 9_000),
        school("Monroe College", Sector::ForProfit, 42.0, 3.0, 55.0, 49.0, 7_000),
        school("Colorado State University", Sector::Public, 7.0, 64.0, 29.0, 98.0, 33_000),
        school("Fort Hays State University", Sector::Public, 2.0, 50.0, 48.0, 91.0, 15_000),
        school("Arizona State University", Sector::Public, 7.0, 58.0, 35.0, 73.0, 75_000),
    ]
}

/// For-profit schools under legal scrutiny, for the explicit selection mode.
/// Keiser is listed as a for-profit here; it has since converted.
pub fn scrutinized_schools() -> Vec<School> {
    vec![
        school("DeVry University", Sector::ForProfit, 26.0, 44.0, 29.0, 44.0, 20_000),
        school("Grand Canyon University", Sector::ForProfit, 16.0, 48.0, 37.0, 81.0, 100_000),
        school("Keiser University", Sector::ForProfit, 19.0, 30.0, 51.0, 97.0, 19_000),
    ]
}

/// A catalog for demos: the paired-study schools, the scrutinized schools,
/// and schools each failing one shortlist criterion.
pub fn demo_catalog() -> Vec<School> {
    let mut out = paired_study_schools();
    out.extend(scrutinized_schools());
    let mut small = school("Tiny Online Institute", Sector::ForProfit, 60.0, 20.0, 20.0, 100.0, 900);
    small.online_url = Some("https://example.org/tiny".into());
    out.push(small);
    let mut two_year = school("Coastal Community College", Sector::Public, 20.0, 60.0, 20.0, 100.0, 12_000);
    two_year.four_year = false;
    out.push(two_year);
    let mut quiet = school("Quiet State University", Sector::Public, 5.0, 80.0, 15.0, 85.0, 20_000);
    quiet.active_advertiser = false;
    out.push(quiet);
    out.push(school("Private Liberal Arts College", Sector::PrivateNonProfit, 10.0, 70.0, 20.0, 60.0, 6_000));
    out
}

/// A catalog whose enrollment-weighted Black share is 25% in the for-profit
/// sector and 14% in the public sector.
pub fn defacto_skew_catalog() -> Vec<School> {
    vec![
        school("For-profit A", Sector::ForProfit, 40.0, 40.0, 20.0, 100.0, 10_000),
        school("For-profit B", Sector::ForProfit, 10.0, 60.0, 30.0, 100.0, 10_000),
        school("Public A", Sector::Public, 20.0, 60.0, 20.0, 80.0, 30_000),
        school("Public B", Sector::Public, 5.0, 70.0, 25.0, 80.0, 20_000),
    ]
}

/// North Carolina DMA groups used to build race-inferable audiences.
pub fn nc_dma_groups() -> [DmaGroup; 2] {
    [
        DmaGroup::new(
            "nc-group-1",
            ["Raleigh-Durham", "Wilmington", "Greenville-Spartanburg", "Norfolk-Portsmouth"],
        ),
        DmaGroup::new("nc-group-2", ["Charlotte", "Greensboro", "Greenville-New Bern"]),
    ]
}

/// Black and White registered-voter totals per NC DMA group.
pub const NC_GROUP_TOTALS: [(&str, u64, u64); 2] = [
    ("nc-group-1", 697_492, 2_282_243),
    ("nc-group-2", 818_599, 2_564_627),
];

/// Black and White registered-voter totals for the state-level audiences.
pub const STATE_TOTALS: [(&str, u64, u64); 2] = [("FL", 2_090_303, 9_438_537), ("NC", 1_546_944, 4_842_453)];

/// Race codes written by [`write_voter_csv`].
pub fn race_code(race: Race) -> &'static str {
    match race {
        Race::Black => "B",
        Race::White => "W",
        Race::Other => "O",
    }
}

/// Synthetic county codes, three per DMA: `<DMA>-C1..C3`.
pub fn county_codes(dma: &str) -> [String; 3] {
    [1, 2, 3].map(|i| format!("{}-C{i}", dma.to_uppercase().replace(' ', "-")))
}

/// How many rows of each race to generate in one region.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionCounts {
    pub region: String,
    pub state: String,
    pub black: u64,
    pub white: u64,
    pub other: u64,
}

impl RegionCounts {
    pub fn new(region: &str, state: &str, black: u64, white: u64, other: u64) -> Self {
        Self {
            region: region.into(),
            state: state.into(),
            black,
            white,
            other,
        }
    }
}

/// Splits a group total across its DMAs as evenly as possible.
pub fn split_evenly(total: u64, parts: usize) -> Vec<u64> {
    let parts = parts as u64;
    (0..parts).map(|i| total / parts + u64::from(i < total % parts)).collect()
}

/// Per-DMA counts for NC whose group marginals are the published totals
/// divided by `scale` (rounded down), with `other_per_dma` Other rows each.
pub fn nc_counts(scale: u64, other_per_dma: u64) -> Vec<RegionCounts> {
    let groups = nc_dma_groups();
    let mut out = Vec::new();
    for (group, (_, black, white)) in groups.iter().zip(NC_GROUP_TOTALS) {
        let n = group.dma_names.len();
        let (bs, ws) = (split_evenly(black / scale, n), split_evenly(white / scale, n));
        for ((dma, b), w) in group.dma_names.iter().zip(bs).zip(ws) {
            out.push(RegionCounts::new(dma, "NC", b, w, other_per_dma));
        }
    }
    out
}

/// Streams an NC-style voter file with columns
/// `voter_reg_num,race_code,county_desc,state_cd`. Rows are shuffled with
/// `seed` so that regions and races are interleaved; counties rotate within
/// each DMA.
pub fn write_voter_csv<W: Write>(counts: &[RegionCounts], seed: u64, writer: W) -> io::Result<u64> {
    let mut rows: Vec<(u32, Race)> = Vec::new();
    for (i, c) in counts.iter().enumerate() {
        for (race, n) in [(Race::Black, c.black), (Race::White, c.white), (Race::Other, c.other)] {
            rows.extend(std::iter::repeat_n((i as u32, race), n as usize));
        }
    }
    rows.shuffle(&mut stream_rng(seed, 0));
    let counties: Vec<[String; 3]> = counts.iter().map(|c| county_codes(&c.region)).collect();
    let mut w = io::BufWriter::new(writer);
    writeln!(w, "voter_reg_num,race_code,county_desc,state_cd")?;
    for (id, (region, race)) in rows.iter().enumerate() {
        let r = *region as usize;
        writeln!(
            w,
            "V{:08},{},{},{}",
            id + 1,
            race_code(*race),
            counties[r][id % 3],
            counts[r].state
        )?;
    }
    w.flush()?;
    Ok(rows.len() as u64)
}

/// Voter schema matching [`write_voter_csv`], as TOML. Counties map to the
/// DMAs in `counts`.
pub fn voter_schema_toml(counts: &[RegionCounts]) -> String {
    let mut county_to_dma = BTreeMap::new();
    for c in counts {
        for county in county_codes(&c.region) {
            county_to_dma.insert(county, c.region.clone());
        }
    }
    let mut s = String::from(
        "# Synthetic county codes; every code maps to exactly one DMA.\n\
         [columns]\nid = \"voter_reg_num\"\nrace = \"race_code\"\ncounty = \"county_desc\"\nstate = \"state_cd\"\n\n\
         [race_codes]\nB = \"Black\"\nW = \"White\"\nO = \"Other\"\n\n[county_to_dma]\n",
    );
    for (county, dma) in county_to_dma {
        s.push_str(&format!("\"{county}\" = \"{dma}\"\n"));
    }
    s
}

/// Audit config for the demo workspace written by [`write_demo_workspace`].
pub fn demo_config(per_race_size: usize, bias_beta: f64) -> String {
    let [g1, g2] = nc_dma_groups();
    let list = |g: &DmaGroup| {
        g.dma_names
            .iter()
            .map(|d| format!("\"{d}\""))
            .collect::<Vec<_>>()
            .join(", ")
    };
    format!(
        r#"seed = 20230401

[ingest]
voter_file = "voters.csv"
schema = "schema.toml"
region_key = "dma"

[[ingest.groups]]
group_id = "{}"
dma_names = [{}]

[[ingest.groups]]
group_id = "{}"
dma_names = [{}]

[audience]
name = "aud-nc"
black_group = "{}"
white_group = "{}"
per_race_size = {per_race_size}
partitions = 2
flipped = true

[catalog]
file = "catalog.csv"
mode = "sorted"

[catalog.criteria]
admit_floor = 40.0

[experiment]
creative = "neutral"
poll_interval_minutes = 60

[sim]
bias_beta = {bias_beta}
impressions_budget_per_ad = 1500
"#,
        g1.group_id,
        list(&g1),
        g2.group_id,
        list(&g2),
        g1.group_id,
        g2.group_id,
    )
}

/// Writes a self-contained demo workspace into `dir`: `voters.csv`,
/// `schema.toml`, `catalog.csv` and `audit.toml`. Each NC DMA gets
/// `per_dma` Black and `per_dma` White voters, enough for two disjoint
/// partitions and their flipped replicas when
/// `per_dma * 3 >= 2 * per_race_size`.
pub fn write_demo_workspace(dir: &Path, per_dma: u64, per_race_size: usize, bias_beta: f64, seed: u64) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let counts: Vec<RegionCounts> = nc_dma_groups()
        .iter()
        .flat_map(|g| g.dma_names.iter().map(|d| RegionCounts::new(d, "NC", per_dma, per_dma, per_dma / 20)).collect::<Vec<_>>())
        .collect();
    write_voter_csv(&counts, seed, fs::File::create(dir.join("voters.csv"))?)?;
    fs::write(dir.join("schema.toml"), voter_schema_toml(&counts))?;
    crate::catalog::write_catalog(&demo_catalog(), fs::File::create(dir.join("catalog.csv"))?)
        .map_err(io::Error::other)?;
    fs::write(dir.join("audit.toml"), demo_config(per_race_size, bias_beta))
}
