//! Oracles and builders shared by the integration tests. The oracles are
//! written independently of the library code they check.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use adskew::experiment::DeliverySnapshot;
use adskew::voterdata::{DmaGroup, Individual, Race, VoterDataset};
use rand::{Rng, RngCore};

/// Standard normal CDF by composite Simpson integration of the density.
pub fn phi_oracle(x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let pdf = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = pdf(0.0) + pdf(x);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * pdf(i as f64 * h);
    }
    0.5 + acc * h / 3.0
}

/// Two-proportion Z from exact integer arithmetic:
/// `Z^2 = (b1*n2 - b2*n1)^2 * N / ((b1+b2) * (N-b1-b2) * n1 * n2)`.
pub fn z_oracle(b1: u64, w1: u64, b2: u64, w2: u64) -> f64 {
    let (n1, n2) = ((b1 + w1) as i128, (b2 + w2) as i128);
    let (b1, b2) = (b1 as i128, b2 as i128);
    let n = n1 + n2;
    let diff = b1 * n2 - b2 * n1;
    let num = (diff * diff) as f64 * n as f64;
    let den = ((b1 + b2) * (n - b1 - b2)) as f64 * (n1 * n2) as f64;
    diff.signum() as f64 * (num / den).sqrt()
}

/// Brute-force Holm: sort, then walk thresholds alpha/m, alpha/(m-1), ...
pub fn holm_oracle(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap().then(a.cmp(&b)));
    let mut out = vec![false; m];
    for (k, &i) in idx.iter().enumerate() {
        if p[i] > alpha / (m - k) as f64 {
            break;
        }
        out[i] = true;
    }
    out
}

/// Region names `{prefix}0..{prefix}{n-1}`.
pub fn regions(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// A dataset with `per_region` individuals of each race in every region.
pub fn dataset_over(regions: &[String], per_region: usize) -> VoterDataset {
    let mut people = Vec::new();
    let state: Arc<str> = "ZZ".into();
    for r in regions {
        let dma: Arc<str> = r.as_str().into();
        for race in Race::ALL {
            for i in 0..per_region {
                let id = format!("{r}-{race}-{i}");
                people.push(Individual {
                    contact_key: format!("k-{id}"),
                    record_id: id,
                    race,
                    dma: dma.clone(),
                    state: state.clone(),
                });
            }
        }
    }
    VoterDataset::from_individuals(people).unwrap()
}

/// A random snapshot over black, white and unlisted regions, with some
/// unattributed reach on top.
pub fn random_snapshot<R: RngCore>(
    rng: &mut R,
    black: &DmaGroup,
    white: &DmaGroup,
) -> DeliverySnapshot {
    let mut regions = BTreeMap::new();
    for name in black.dma_names.iter().chain(&white.dma_names) {
        if rng.random_bool(0.8) {
            regions.insert(name.clone(), rng.random_range(0..500u64));
        }
    }
    for i in 0..rng.random_range(0..4) {
        regions.insert(format!("UNLISTED-{i}"), rng.random_range(0..300u64));
    }
    let mut s = DeliverySnapshot::from_regions("c", "2023-01-01T00:00:00Z".parse().unwrap(), regions);
    s.total_reach += rng.random_range(0..20u64);
    s
}
