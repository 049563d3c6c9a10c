//! Race inference from delivery reports and the skew statistics.
//!
//! Given the Black and White unique-impression counts of the skewed-school
//! ad (`f`) and the public-school ad (`p`):
//!
//! ```text
//! s_f = n_f_b / n_f            s_p = n_p_b / n_p            D = s_f - s_p
//! s   = (n_f_b + n_p_b) / (n_f + n_p)
//! SE  = sqrt(s (1 - s) (1/n_f + 1/n_p))                      Z = D / SE
//! ```
//!
//! The test is one-sided (alternative `D > 0`) and a result is significant
//! when `Z` exceeds the tabulated critical value (1.64 at alpha = 0.05).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::DeliverySnapshot;
use crate::voterdata::{DmaGroup, Race};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("region `{0}` belongs to both the black and the white group")]
    Integrity(String),
    #[error("test undefined: the {0} ad has no race-attributable impressions")]
    EmptySide(&'static str),
    #[error("degenerate variance: pooled Black fraction is {0}")]
    DegenerateVariance(f64),
    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("no finite sample size: {0}")]
    NoFiniteSampleSize(String),
}

/// Standard normal CDF.
///
/// Rational approximation of the normal tail (Hart, 1968) as arranged by
/// West (2005). Absolute error is below 1e-14 over the real line; the tests
/// check 1e-7 on [-6, 6] against frozen high-precision values.
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    let tail = if ax > 37.0 {
        0.0
    } else {
        let e = (-ax * ax / 2.0).exp();
        if ax < 7.071_067_811_865_47 {
            let mut num = 3.526_249_659_989_11e-2 * ax + 0.700_383_064_443_688;
            num = num * ax + 6.373_962_203_531_65;
            num = num * ax + 33.912_866_078_383;
            num = num * ax + 112.079_291_497_871;
            num = num * ax + 221.213_596_169_931;
            num = num * ax + 220.206_867_912_376;
            let mut den = 8.838_834_764_831_84e-2 * ax + 1.755_667_163_182_64;
            den = den * ax + 16.064_177_579_207;
            den = den * ax + 86.780_732_202_946_1;
            den = den * ax + 296.564_248_779_674;
            den = den * ax + 637.333_633_378_831;
            den = den * ax + 793.826_512_519_948;
            den = den * ax + 440.413_735_824_752;
            e * num / den
        } else {
            let mut b = ax + 0.65;
            b = ax + 4.0 / b;
            b = ax + 3.0 / b;
            b = ax + 2.0 / b;
            b = ax + 1.0 / b;
            e / b / 2.506_628_274_631
        }
    };
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse of [`normal_cdf`]: Acklam's rational approximation followed by
/// two Newton steps against `normal_cdf`.
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const LOW: f64 = 0.024_25;
    let mut x = if p < LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    for _ in 0..2 {
        let density = (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if density <= 0.0 {
            break;
        }
        x -= (normal_cdf(x) - p) / density;
    }
    x
}

/// One-sided critical value `Z_alpha` read the way a Z-table is read: the
/// upper `alpha` quantile rounded to two decimals (1.64 for alpha = 0.05).
pub fn z_critical(alpha: f64) -> Result<f64, StatsError> {
    check_open_unit("alpha", alpha)?;
    Ok((normal_quantile(1.0 - alpha) * 100.0).round() / 100.0)
}

fn check_open_unit(name: &'static str, value: f64) -> Result<(), StatsError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(StatsError::OutOfRange {
            name,
            value,
            range: "(0, 1)",
        })
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, n: u64, confidence: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = normal_quantile(0.5 + confidence / 2.0);
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Region to race map of a partition's two groups.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionRaceMap {
    map: BTreeMap<String, Race>,
}

impl RegionRaceMap {
    pub fn new(black_group: &DmaGroup, white_group: &DmaGroup) -> Result<Self, StatsError> {
        let mut map = BTreeMap::new();
        for r in &black_group.dma_names {
            map.insert(r.clone(), Race::Black);
        }
        for r in &white_group.dma_names {
            if map.insert(r.clone(), Race::White).is_some() {
                return Err(StatsError::Integrity(r.clone()));
            }
        }
        Ok(Self { map })
    }

    pub fn race_of(&self, region: &str) -> Option<Race> {
        self.map.get(region).copied()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaceBreakdown {
    pub n_black: u64,
    pub n_white: u64,
    /// Impressions whose region is outside both groups (travel, mismatched
    /// location) plus reach the platform did not attribute to any region.
    pub discarded: u64,
}

impl RaceBreakdown {
    pub fn new(n_black: u64, n_white: u64) -> Self {
        Self {
            n_black,
            n_white,
            discarded: 0,
        }
    }

    /// Race-attributable recipients.
    pub fn n(&self) -> u64 {
        self.n_black + self.n_white
    }

    pub fn total(&self) -> u64 {
        self.n() + self.discarded
    }

    pub fn black_fraction(&self) -> Option<f64> {
        (self.n() > 0).then(|| self.n_black as f64 / self.n() as f64)
    }
}

/// Classifies a snapshot's per-region unique impressions into races.
pub fn infer_race(snapshot: &DeliverySnapshot, map: &RegionRaceMap) -> RaceBreakdown {
    let mut out = RaceBreakdown::default();
    let mut attributed = 0u64;
    for (region, &count) in &snapshot.unique_impressions_by_region {
        attributed += count;
        match map.race_of(region) {
            Some(Race::Black) => out.n_black += count,
            Some(Race::White) => out.n_white += count,
            _ => out.discarded += count,
        }
    }
    out.discarded += snapshot.total_reach.saturating_sub(attributed);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewResult {
    pub n_f: u64,
    pub n_p: u64,
    pub s_f_b: f64,
    pub s_p_b: f64,
    pub d: f64,
    pub pooled_s: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub z_alpha: f64,
    pub significant: bool,
    pub ci_f: (f64, f64),
    pub ci_p: (f64, f64),
}

/// One-sided two-proportion Z-test of `D > 0`.
pub fn skew_test(
    for_profit: &RaceBreakdown,
    public: &RaceBreakdown,
    alpha: f64,
) -> Result<SkewResult, StatsError> {
    let z_alpha = z_critical(alpha)?;
    let (n_f, n_p) = (for_profit.n(), public.n());
    if n_f == 0 {
        return Err(StatsError::EmptySide("for-profit"));
    }
    if n_p == 0 {
        return Err(StatsError::EmptySide("public"));
    }
    let s_f_b = for_profit.n_black as f64 / n_f as f64;
    let s_p_b = public.n_black as f64 / n_p as f64;
    let d = s_f_b - s_p_b;
    let pooled_s = (for_profit.n_black + public.n_black) as f64 / (n_f + n_p) as f64;
    if pooled_s <= 0.0 || pooled_s >= 1.0 {
        return Err(StatsError::DegenerateVariance(pooled_s));
    }
    let se = (pooled_s * (1.0 - pooled_s) * (1.0 / n_f as f64 + 1.0 / n_p as f64)).sqrt();
    let z = d / se;
    Ok(SkewResult {
        n_f,
        n_p,
        s_f_b,
        s_p_b,
        d,
        pooled_s,
        se,
        z,
        p_value: 1.0 - normal_cdf(z),
        z_alpha,
        significant: z > z_alpha,
        ci_f: wilson_interval(for_profit.n_black, n_f, 0.95),
        ci_p: wilson_interval(public.n_black, n_p, 0.95),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolmStep {
    /// Position of this p-value in the caller's input.
    pub index: usize,
    pub p_value: f64,
    pub threshold: f64,
    pub rejected: bool,
}

/// Holm step-down decisions, in ascending p-value order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolmDecision {
    pub alpha: f64,
    pub steps: Vec<HolmStep>,
}

impl HolmDecision {
    /// Reject flags in the caller's original order.
    pub fn rejected(&self) -> Vec<bool> {
        let mut out = vec![false; self.steps.len()];
        for s in &self.steps {
            out[s.index] = s.rejected;
        }
        out
    }

    pub fn rejection_count(&self) -> usize {
        self.steps.iter().filter(|s| s.rejected).count()
    }
}

/// Holm's step-down procedure: the k-th smallest p-value (1-based) is
/// compared against `alpha / (m - k + 1)` and testing stops at the first
/// failure.
pub fn holm_correct(p_values: &[f64], alpha: f64) -> Result<HolmDecision, StatsError> {
    check_open_unit("alpha", alpha)?;
    if let Some(&bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::OutOfRange {
            name: "p-value",
            value: bad,
            range: "[0, 1]",
        });
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut still_rejecting = true;
    let steps = order
        .into_iter()
        .enumerate()
        .map(|(rank, index)| {
            let threshold = alpha / (m - rank) as f64;
            let p_value = p_values[index];
            still_rejecting &= p_value <= threshold;
            HolmStep {
                index,
                p_value,
                threshold,
                rejected: still_rejecting,
            }
        })
        .collect();
    Ok(HolmDecision { alpha, steps })
}

/// Power of the one-sided test for a true difference `d` when the pooled
/// Black fraction is `pooled_s`.
pub fn analytic_power(d: f64, pooled_s: f64, n_f: f64, n_p: f64, z_alpha: f64) -> f64 {
    let se = (pooled_s * (1.0 - pooled_s) * (1.0 / n_f + 1.0 / n_p)).sqrt();
    normal_cdf(d / se - z_alpha)
}

/// Smallest equal per-ad sample size at which the test reaches `power` for
/// true fractions `s1` and `s2`. The test is oriented toward the sign of the
/// difference, so only `|s1 - s2|` matters.
pub fn min_sample_size(alpha: f64, power: f64, s1: f64, s2: f64) -> Result<u64, StatsError> {
    let z_alpha = z_critical(alpha)?;
    check_open_unit("power", power)?;
    check_open_unit("s1", s1)?;
    check_open_unit("s2", s2)?;
    if s1 == s2 {
        return Err(StatsError::NoFiniteSampleSize(
            "fractions are equal, power never exceeds alpha".into(),
        ));
    }
    let d = (s1 - s2).abs();
    let pooled = (s1 + s2) / 2.0;
    let reaches = |n: u64| analytic_power(d, pooled, n as f64, n as f64, z_alpha) >= power;
    if reaches(1) {
        return Ok(1);
    }
    let mut hi = 2u64;
    while !reaches(hi) {
        if hi >= 1 << 62 {
            return Err(StatsError::NoFiniteSampleSize(format!(
                "power {power} not reached below 2^62"
            )));
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reaches(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
