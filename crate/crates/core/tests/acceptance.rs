//! Acceptance suite. Runs every criterion at its stated tolerance, prints
//! one PASS/FAIL line per criterion and exits nonzero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use adskew::audience::{build_partition, disjoint_partitions, flip, AudiencePartition, PartitionSpec};
use adskew::catalog::{pair_schools, shortlist, ShortlistCriteria};
use adskew::simulator::{self, calibrate_power, run_trials, SimConfig};
use adskew::stats::{holm_correct, infer_race, skew_test, RaceBreakdown, RegionRaceMap};
use adskew::synth;
use adskew::voterdata::{self, DmaGroup, Race, RegionKey, VoterDataset, VoterSchema};
use common::{dataset_over, holm_oracle, phi_oracle, random_snapshot, regions, z_oracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pairing_reproduction() -> Outcome {
    let criteria = ShortlistCriteria {
        admit_floor: Some(40.0),
        ..Default::default()
    };
    let list = shortlist(&synth::paired_study_schools(), &criteria);
    let got: BTreeSet<(String, String)> = pair_schools(&list.for_profit, &list.public)
        .into_iter()
        .map(|p| (p.skewed_school.name, p.public_school.name))
        .collect();
    let want: BTreeSet<(String, String)> = [
        ("Strayer University", "Colorado State University"),
        ("American InterContinental University", "Fort Hays State University"),
        ("Monroe College", "Arizona State University"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    check(got == want, format!("pairs {got:?}"))
}

fn eq1_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n1 = rng.random_range(10..200_000u64);
        let n2 = rng.random_range(10..200_000u64);
        let b1 = rng.random_range(0..=n1);
        let b2 = rng.random_range(0..=n2);
        if b1 + b2 == 0 || b1 + b2 == n1 + n2 {
            continue;
        }
        let r = skew_test(&RaceBreakdown::new(b1, n1 - b1), &RaceBreakdown::new(b2, n2 - b2), 0.05)
            .map_err(|e| e.to_string())?;
        let z = z_oracle(b1, n1 - b1, b2, n2 - b2);
        let rel = if z == 0.0 { r.z.abs() } else { ((r.z - z) / z).abs() };
        worst = worst.max(rel);
    }
    let worked = skew_test(&RaceBreakdown::new(900, 600), &RaceBreakdown::new(750, 750), 0.05)
        .map_err(|e| e.to_string())?;
    check(
        worst <= 1e-9 && (worked.z - 5.5048).abs() <= 1e-3,
        format!("max relative error {worst:.2e}; worked example Z = {:.5}", worked.z),
    )
}

/// A 15K-per-race partition built from a 1/20-scale NC voter file.
fn nc_partition() -> Result<AudiencePartition, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let counts = synth::nc_counts(20, 100);
    let path = dir.path().join("voters.csv");
    synth::write_voter_csv(&counts, 5, fs::File::create(&path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let schema_path = dir.path().join("schema.toml");
    fs::write(&schema_path, synth::voter_schema_toml(&counts)).map_err(|e| e.to_string())?;
    let schema = VoterSchema::load(&schema_path).map_err(|e| e.to_string())?;
    let ds = voterdata::ingest_voter_file(&path, &schema).map_err(|e| e.to_string())?;
    let [g1, g2] = synth::nc_dma_groups();
    let spec = PartitionSpec {
        name: "aud-nc".into(),
        black_group: g1,
        white_group: g2,
        per_race_size: 15_000,
        seed: 21,
        region_key: RegionKey::Dma,
    };
    build_partition(&ds, &spec).map_err(|e| e.to_string())
}

fn null_rate(config: &SimConfig, partition: AudiencePartition) -> Result<(f64, f64, f64), String> {
    let exp = simulator::synthetic_experiment(partition);
    let out = run_trials(&exp, config, 2000, 0.05).map_err(|e| e.to_string())?;
    let rate = out.iter().filter(|o| o.reject()).count() as f64 / out.len() as f64;
    let mean = |f: fn(&RaceBreakdown) -> f64, pick: fn(&simulator::TrialOutcome) -> &RaceBreakdown| {
        out.iter().map(|o| f(pick(o))).sum::<f64>() / out.len() as f64
    };
    let frac = |b: &RaceBreakdown| b.black_fraction().unwrap_or(0.0);
    Ok((rate, mean(frac, |o| &o.for_profit), mean(frac, |o| &o.public)))
}

fn null_calibration(partition: &AudiencePartition) -> Outcome {
    let cfg = SimConfig {
        seed: 31,
        ..Default::default()
    };
    let (rate, _, _) = null_rate(&cfg, partition.clone())?;
    check((0.035..=0.065).contains(&rate), format!("rejection rate {rate:.4} over 2000 trials"))
}

fn confounder_cancellation(partition: &AudiencePartition) -> Outcome {
    let cfg = SimConfig {
        seed: 41,
        race_activity_multiplier: BTreeMap::from([(Race::Black, 0.6), (Race::White, 1.0)]),
        competing_pressure: BTreeMap::from([(Race::Black, 0.2), (Race::White, 1.2)]),
        ..Default::default()
    };
    let (rate, f, p) = null_rate(&cfg, partition.clone())?;
    let shifted = (f - 0.5).abs() > 0.05 && (p - 0.5).abs() > 0.05 && (f - p).abs() < 0.01;
    check(
        (0.035..=0.065).contains(&rate) && shifted,
        format!("rejection rate {rate:.4}; mean Black fraction skewed ad {f:.3}, public ad {p:.3}"),
    )
}

fn power_sanity() -> Outcome {
    let base = SimConfig {
        seed: 51,
        ..Default::default()
    };
    let cfg = |n: u64| SimConfig {
        impressions_budget_per_ad: n,
        ..base.clone()
    };
    let est = calibrate_power(0.05, 7_500, &cfg(1_500), 2_000).map_err(|e| e.to_string())?;
    let pooled = est.base_fraction + 0.025;
    let se = (pooled * (1.0 - pooled) * 2.0 / 1_500.0).sqrt();
    let analytic = phi_oracle(0.05 / se - 1.64);
    let mut curve = Vec::new();
    for n in [500u64, 1_500, 5_000] {
        let e = calibrate_power(0.05, 5 * n as usize, &cfg(n), 1_000).map_err(|e| e.to_string())?;
        curve.push(e.power);
    }
    let monotone = curve.windows(2).all(|w| w[0] < w[1]);
    check(
        (est.power - analytic).abs() <= 0.05 && (analytic - 0.86).abs() < 0.01 && monotone,
        format!(
            "empirical power {:.3} vs analytic {analytic:.3} at n = 1500; power over n = 500/1500/5000: {:.3}/{:.3}/{:.3}",
            est.power, curve[0], curve[1], curve[2]
        ),
    )
}

struct PipelineRun {
    _dir: tempfile::TempDir,
    rates: Vec<BTreeMap<String, String>>,
    mean_d: f64,
    beta: f64,
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_adskew"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn csv_rows(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| e.to_string())?;
            Ok(headers.iter().map(String::from).zip(r.iter().map(String::from)).collect())
        })
        .collect()
}

/// Full CLI pipeline with bias sized for D = 0.08: two disjoint audiences
/// and their flipped replicas, three school pairs each, 200 trials.
fn detection_pipeline() -> Result<PipelineRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let beta = SimConfig::default().beta_for_effect(0.08).map_err(|e| e.to_string())?;
    let b = beta.to_string();
    run_cli(
        dir.path(),
        &["fixtures", "--out", ".", "--per-dma", "8000", "--per-race-size", "7500", "--bias-beta", &b],
    )?;
    for step in [
        &["ingest"][..],
        &["build-audience"],
        &["pair-schools"],
        &["simulate", "--trials", "200"],
        &["analyze"],
        &["report"],
    ] {
        let mut args = vec!["--config", "audit.toml", "--out", "out", "--seed", "7"];
        args.extend_from_slice(step);
        run_cli(dir.path(), &args)?;
    }
    let rates = csv_rows(&dir.path().join("out/verdict_rates.csv"))?;
    let mut ds = Vec::new();
    for r in &rates {
        for row in csv_rows(&dir.path().join(format!("out/mc_{}.csv", r["experiment_id"])))? {
            ds.push(row["D"].parse::<f64>().map_err(|e| e.to_string())?);
        }
    }
    let mean_d = ds.iter().sum::<f64>() / ds.len() as f64;
    Ok(PipelineRun {
        _dir: dir,
        rates,
        mean_d,
        beta,
    })
}

fn rate(row: &BTreeMap<String, String>, col: &str) -> f64 {
    row[col].parse().unwrap_or(f64::NAN)
}

fn detection(run: &PipelineRun) -> Outcome {
    let family: Vec<_> = run.rates.iter().filter(|r| r["family"] == "original").collect();
    let min = family.iter().map(|r| rate(r, "holm_rate")).fold(f64::INFINITY, f64::min);
    check(
        family.len() == 6 && min >= 0.95,
        format!(
            "bias_beta {:.4}, mean realized D {:.4}; {} tests per family, lowest Holm-significant rate {min:.3} over 200 trials",
            run.beta,
            run.mean_d,
            family.len()
        ),
    )
}

fn flip_invariance(run: &PipelineRun) -> Outcome {
    let by_id: BTreeMap<&str, &BTreeMap<String, String>> =
        run.rates.iter().map(|r| (r["experiment_id"].as_str(), r)).collect();
    let mut worst = 0.0f64;
    let mut compared = 0;
    for r in run.rates.iter().filter(|r| r["family"] == "original") {
        let flipped_id = format!("{}f", r["experiment_id"]);
        let f = by_id.get(flipped_id.as_str()).ok_or(format!("no flipped run for {}", r["experiment_id"]))?;
        for col in ["significant_rate", "holm_rate"] {
            worst = worst.max((rate(r, col) - rate(f, col)).abs());
        }
        compared += 1;
    }
    check(
        compared == 6 && worst <= 0.03,
        format!("{compared} original/flipped pairs, largest verdict-rate change {worst:.3}"),
    )
}

fn holm_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=10);
        let p: Vec<f64> = (0..m)
            .map(|_| if rng.random_bool(0.5) { rng.random_range(0.0..0.06) } else { rng.random::<f64>() })
            .collect();
        let got = holm_correct(&p, 0.05).map_err(|e| e.to_string())?.rejected();
        mismatches += usize::from(got != holm_oracle(&p, 0.05));
    }
    let worked = holm_correct(&[0.01, 0.03, 0.04], 0.05).map_err(|e| e.to_string())?.rejected();
    check(
        mismatches == 0 && worked == [true, false, false],
        format!("{mismatches} mismatches over 1000 vectors; worked example {worked:?}"),
    )
}

fn discard_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let black = DmaGroup::new("b", regions("BLK", 4));
    let white = DmaGroup::new("w", regions("WHT", 3));
    let map = RegionRaceMap::new(&black, &white).map_err(|e| e.to_string())?;
    let mut bad = 0;
    for _ in 0..1000 {
        let snap = random_snapshot(&mut rng, &black, &white);
        let got = infer_race(&snap, &map);
        let mut want = RaceBreakdown::default();
        for (region, &count) in &snap.unique_impressions_by_region {
            if black.dma_names.contains(region) {
                want.n_black += count;
            } else if white.dma_names.contains(region) {
                want.n_white += count;
            } else {
                want.discarded += count;
            }
        }
        want.discarded += snap.total_reach - snap.unique_impressions_by_region.values().sum::<u64>();
        bad += usize::from(got != want);
    }
    check(bad == 0, format!("{bad} of 1000 snapshots misclassified"))
}

fn partition_ok(p: &AudiencePartition, key: RegionKey) -> bool {
    let mut race_of: BTreeMap<&str, Race> = BTreeMap::new();
    let mut function = true;
    for m in &p.members {
        if *race_of.entry(m.region(key)).or_insert(m.race) != m.race {
            function = false;
        }
    }
    let b = p.members.iter().filter(|m| m.race == Race::Black).count();
    let w = p.members.iter().filter(|m| m.race == Race::White).count();
    function && b == p.per_race_size && w == p.per_race_size && b + w == p.members.len()
}

fn audience_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut failures = Vec::new();
    for build in 0..100 {
        let n_regions = rng.random_range(2..8);
        let names = regions("R", n_regions);
        let split = rng.random_range(1..n_regions);
        let per_region = rng.random_range(5..40);
        let ds: VoterDataset = dataset_over(&names, per_region);
        let k = rng.random_range(1..4);
        let cap = (per_region * split.min(n_regions - split)) / k;
        let spec = PartitionSpec {
            name: format!("p{build}"),
            black_group: DmaGroup::new("b", &names[..split]),
            white_group: DmaGroup::new("w", &names[split..]),
            per_race_size: rng.random_range(1..=cap),
            seed: rng.random(),
            region_key: RegionKey::Dma,
        };
        let result = (|| -> Result<bool, String> {
            let single = build_partition(&ds, &spec).map_err(|e| e.to_string())?;
            let parts = disjoint_partitions(&ds, &spec, k).map_err(|e| e.to_string())?;
            let mut ok = partition_ok(&single, RegionKey::Dma);
            for p in std::iter::once(&single).chain(&parts) {
                let f = flip(p, &ds).map_err(|e| e.to_string())?;
                let back = flip(&f, &ds).map_err(|e| e.to_string())?;
                ok &= partition_ok(p, RegionKey::Dma) && partition_ok(&f, RegionKey::Dma);
                ok &= f.black_group == p.white_group && f.white_group == p.black_group;
                ok &= back.black_group == p.black_group && back.white_group == p.white_group;
            }
            // A single build is fully restored by a double flip, members included.
            let back = flip(&flip(&single, &ds).map_err(|e| e.to_string())?, &ds).map_err(|e| e.to_string())?;
            ok &= back == single;
            Ok(ok)
        })();
        match result {
            Ok(true) => {}
            Ok(false) => failures.push(format!("build {build}")),
            Err(e) => failures.push(format!("build {build}: {e}")),
        }
    }
    check(failures.is_empty(), format!("100 builds, failures: {failures:?}"))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, limit_s: f64, setup_s: f64, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64() + setup_s;
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        let timing = if secs <= limit_s { "" } else { " (over time budget)" };
        println!("[{status}] {id:>2}. {name}: {detail} [{secs:.2}s / budget {limit_s}s{timing}]");
        if outcome.is_err() {
            failed += 1;
        }
    };
    report(1, "pairing reproduction", 1.0, 0.0, &mut pairing_reproduction);
    report(2, "two-proportion Z oracle", 5.0, 0.0, &mut eq1_oracle);
    let t = Instant::now();
    let partition = nc_partition();
    let partition_s = t.elapsed().as_secs_f64();
    report(3, "null calibration", 120.0, partition_s, &mut || null_calibration(partition.as_ref().map_err(Clone::clone)?));
    report(4, "confounder cancellation", 120.0, partition_s, &mut || {
        confounder_cancellation(partition.as_ref().map_err(Clone::clone)?)
    });
    report(5, "power sanity", 120.0, 0.0, &mut power_sanity);
    let t = Instant::now();
    let pipeline = detection_pipeline();
    let pipeline_s = t.elapsed().as_secs_f64();
    report(6, "end-to-end detection", 180.0, pipeline_s, &mut || detection(pipeline.as_ref().map_err(Clone::clone)?));
    report(7, "flip invariance", 180.0, pipeline_s, &mut || flip_invariance(pipeline.as_ref().map_err(Clone::clone)?));
    report(8, "Holm correctness", 1.0, 0.0, &mut holm_correctness);
    report(9, "discard rule", 1.0, 0.0, &mut discard_rule);
    report(10, "audience invariants", 10.0, 0.0, &mut audience_invariants);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
