//! Full-scale and reduced-scale voter fixtures built from the published
//! group and state totals.

use std::fs::File;

use adskew::audience::{build_partition, PartitionSpec};
use adskew::synth::{self, RegionCounts, NC_GROUP_TOTALS, STATE_TOTALS};
use adskew::voterdata::{self, DmaGroup, Race, RegionKey, VoterSchema};

fn write_fixture(dir: &std::path::Path, counts: &[RegionCounts]) -> (std::path::PathBuf, VoterSchema) {
    let path = dir.join("voters.csv");
    synth::write_voter_csv(counts, 11, File::create(&path).unwrap()).unwrap();
    let schema_path = dir.join("schema.toml");
    std::fs::write(&schema_path, synth::voter_schema_toml(counts)).unwrap();
    (path, VoterSchema::load(&schema_path).unwrap())
}

#[test]
fn nc_group_totals_at_full_scale() {
    let dir = tempfile::tempdir().unwrap();
    let counts = synth::nc_counts(1, 0);
    let (path, schema) = write_fixture(dir.path(), &counts);
    let groups = synth::nc_dma_groups();
    let (summary, rows) = voterdata::summarize_voter_file(&path, &schema, &groups, RegionKey::Dma).unwrap();
    assert_eq!(rows, 697_492 + 2_282_243 + 818_599 + 2_564_627);
    for (group, black, white) in NC_GROUP_TOTALS {
        assert_eq!(summary.get(group, Race::Black), black);
        assert_eq!(summary.get(group, Race::White), white);
        assert_eq!(summary.get(group, Race::Other), 0);
    }
    assert_eq!(summary.get("nc-group-1", Race::Black), 697_492);
    assert_eq!(summary.get("nc-group-2", Race::White), 2_564_627);
}

#[test]
fn fifteen_thousand_per_race_from_reduced_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let counts = synth::nc_counts(20, 100);
    let (path, schema) = write_fixture(dir.path(), &counts);
    let ds = voterdata::ingest_voter_file(&path, &schema).unwrap();
    let [g1, g2] = synth::nc_dma_groups();
    let spec = PartitionSpec {
        name: "aud-nc".into(),
        black_group: g1.clone(),
        white_group: g2.clone(),
        per_race_size: 15_000,
        seed: 3,
        region_key: RegionKey::Dma,
    };
    let p = build_partition(&ds, &spec).unwrap();
    p.check_invariants().unwrap();
    assert_eq!(p.count(Race::Black), 15_000);
    assert_eq!(p.count(Race::White), 15_000);
    assert!(p.members.iter().all(|m| match m.race {
        Race::Black => g1.contains(&m.dma),
        Race::White => g2.contains(&m.dma),
        Race::Other => false,
    }));
}

#[test]
fn state_level_audiences() {
    let scale = 100;
    let counts: Vec<RegionCounts> = STATE_TOTALS
        .iter()
        .map(|(st, b, w)| RegionCounts::new(&format!("{st}-DMA"), st, b / scale, w / scale, 10))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let (path, schema) = write_fixture(dir.path(), &counts);
    let groups = [DmaGroup::new("fl", ["FL"]), DmaGroup::new("nc", ["NC"])];
    let (summary, _) = voterdata::summarize_voter_file(&path, &schema, &groups, RegionKey::State).unwrap();
    assert_eq!(summary.get("fl", Race::Black), 2_090_303 / scale);
    assert_eq!(summary.get("fl", Race::White), 9_438_537 / scale);
    assert_eq!(summary.get("nc", Race::Black), 1_546_944 / scale);
    assert_eq!(summary.get("nc", Race::White), 4_842_453 / scale);

    let ds = voterdata::ingest_voter_file(&path, &schema).unwrap();
    let spec = PartitionSpec {
        name: "aud-state".into(),
        black_group: groups[0].clone(),
        white_group: groups[1].clone(),
        per_race_size: 5_000,
        seed: 8,
        region_key: RegionKey::State,
    };
    let p = build_partition(&ds, &spec).unwrap();
    p.check_invariants().unwrap();
    let f = adskew::audience::flip(&p, &ds).unwrap();
    f.check_invariants().unwrap();
    assert!(f.members.iter().filter(|m| m.race == Race::Black).all(|m| &*m.state == "NC"));
}
