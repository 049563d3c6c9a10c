//! Ad-delivery platform model.
//!
//! The model expresses the causal structure a paired audit relies on. Market
//! confounders (who is online, how hard other advertisers bid for each
//! group, audience match rate, travel) act on both ads of a pair identically.
//! A single knob, `bias_beta`, adds a race-conditional relevance boost to the
//! skewed-school ad for Black users and is the only thing that can make the
//! two ads' Black fractions differ in expectation.
//!
//! Per run each audience member is matched with probability `match_rate`,
//! travels (impressions land outside every audience region) with
//! probability `travel_prob`, and has a Poisson number of sessions with mean
//! `base_activity_rate * race_activity_multiplier[race] * duration_hours`.
//! Each ad then picks its recipients by weighted sampling without
//! replacement, weight = sessions * exp(relevance), with
//!
//! ```text
//! relevance = base_relevance - competing_pressure[race] + bias_beta * [skewed ad and Black user]
//! ```
//!
//! Sampling is an exponential race: every eligible user draws an arrival key
//! `Exp(1) / weight` and the first `impressions_budget_per_ad` arrivals are
//! reached, in order, paced evenly over the campaign. Users are counted at
//! most once per ad. `bias_beta` is a phenomenological knob; nothing here
//! claims to match a real platform's relevance model.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audience::AudiencePartition;
use crate::catalog::Sector;
use crate::experiment::{
    AdCreative, ApprovalStatus, CampaignId, CampaignSpec, DeliverySnapshot, PairedExperiment,
    PlatformClient, PlatformError,
};
use crate::seed::stream_rng;
use crate::stats::{self, RaceBreakdown, SkewResult, StatsError};
use crate::voterdata::{DmaGroup, Individual, Race, RegionKey};

/// Region reported for impressions served to travelling users.
pub const TRAVEL_REGION: &str = "OUT-OF-GROUP";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("audience is empty")]
    EmptyAudience,
    #[error("paired campaigns target different audiences")]
    DifferentAudiences,
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Relevance boost of the skewed-school ad for Black users. Zero is the
    /// unbiased platform.
    pub bias_beta: f64,
    pub race_activity_multiplier: BTreeMap<Race, f64>,
    /// Relevance lost to other advertisers' bids, per race.
    pub competing_pressure: BTreeMap<Race, f64>,
    pub match_rate: f64,
    pub travel_prob: f64,
    pub seed: u64,
    /// Unique impressions each ad can buy.
    pub impressions_budget_per_ad: u64,
    /// Expected sessions per hour before the race multiplier.
    pub base_activity_rate: f64,
    pub base_relevance: f64,
    pub start_time: DateTime<Utc>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            bias_beta: 0.0,
            race_activity_multiplier: BTreeMap::from([(Race::Black, 1.0), (Race::White, 1.0)]),
            competing_pressure: BTreeMap::from([(Race::Black, 0.0), (Race::White, 0.0)]),
            match_rate: 1.0,
            travel_prob: 0.0,
            seed: 0,
            impressions_budget_per_ad: 1_500,
            base_activity_rate: 0.25,
            base_relevance: 0.0,
            start_time: "2023-04-03T00:00:00Z".parse().expect("valid timestamp"),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !self.bias_beta.is_finite() || !self.base_relevance.is_finite() {
            return bad("bias_beta and base_relevance must be finite".into());
        }
        for (name, v) in [("match_rate", self.match_rate), ("travel_prob", self.travel_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if self.impressions_budget_per_ad == 0 {
            return bad("impressions_budget_per_ad must be positive".into());
        }
        if !(self.base_activity_rate >= 0.0 && self.base_activity_rate.is_finite()) {
            return bad("base_activity_rate must be a nonnegative number".into());
        }
        for (race, &m) in &self.race_activity_multiplier {
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("activity multiplier for {race} must be positive"));
            }
        }
        for (race, &p) in &self.competing_pressure {
            if !(p >= 0.0 && p.is_finite()) {
                return bad(format!("competing pressure for {race} must be nonnegative"));
            }
        }
        Ok(())
    }

    pub fn activity_multiplier(&self, race: Race) -> f64 {
        self.race_activity_multiplier.get(&race).copied().unwrap_or(1.0)
    }

    pub fn pressure(&self, race: Race) -> f64 {
        self.competing_pressure.get(&race).copied().unwrap_or(0.0)
    }

    fn relevance(&self, race: Race, skewed_ad: bool) -> f64 {
        let boost = if skewed_ad && race == Race::Black { self.bias_beta } else { 0.0 };
        self.base_relevance - self.pressure(race) + boost
    }

    /// Expected Black fraction of an unbiased ad's recipients on a
    /// race-balanced audience, ignoring finite-population saturation.
    pub fn expected_black_fraction(&self) -> f64 {
        let w = |r: Race| self.activity_multiplier(r) * (-self.pressure(r)).exp();
        let (b, wh) = (w(Race::Black), w(Race::White));
        b / (b + wh)
    }

    /// `bias_beta` giving the skewed ad an expected Black fraction `target_d`
    /// above the unbiased one.
    pub fn beta_for_effect(&self, target_d: f64) -> Result<f64, SimError> {
        let base = self.expected_black_fraction();
        let shifted = base + target_d;
        if !(shifted > 0.0 && shifted < 1.0) {
            return Err(SimError::Config(format!(
                "target D {target_d} moves the Black fraction {base:.3} outside (0, 1)"
            )));
        }
        let logit = |p: f64| (p / (1.0 - p)).ln();
        Ok(logit(shifted) - logit(base))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimUser {
    /// Index into the partition's member list.
    pub member: usize,
    pub race: Race,
    /// Expected sessions per hour.
    pub activity_rate: f64,
    pub traveling: bool,
    pub matched: bool,
    pub sessions: u32,
}

/// Per-member race and region index, computed once per partition.
#[derive(Clone, Debug)]
struct PreparedAudience {
    races: Vec<Race>,
    region_of: Vec<u32>,
    regions: Vec<String>,
}

impl PreparedAudience {
    fn new(partition: &AudiencePartition) -> Result<Self, SimError> {
        if partition.members.is_empty() {
            return Err(SimError::EmptyAudience);
        }
        let mut regions: Vec<String> = partition
            .black_group
            .dma_names
            .iter()
            .chain(&partition.white_group.dma_names)
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        regions.push(TRAVEL_REGION.to_string());
        let index: BTreeMap<&str, u32> = regions
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i as u32))
            .collect();
        let travel = (regions.len() - 1) as u32;
        let region_of = partition
            .members
            .iter()
            .map(|m| index.get(m.region(partition.region_key)).copied().unwrap_or(travel))
            .collect();
        Ok(Self {
            races: partition.members.iter().map(|m| m.race).collect(),
            region_of,
            regions,
        })
    }

    fn travel_index(&self) -> u32 {
        (self.regions.len() - 1) as u32
    }
}

fn sample_users(
    aud: &PreparedAudience,
    config: &SimConfig,
    duration_hours: u32,
    seed_stream: u64,
) -> Vec<SimUser> {
    let mut rng = stream_rng(config.seed, seed_stream);
    let poisson_for = |race: Race| {
        let mean = config.base_activity_rate * config.activity_multiplier(race) * duration_hours as f64;
        (mean > 0.0).then(|| Poisson::new(mean).expect("positive finite mean"))
    };
    let dists: BTreeMap<Race, Option<Poisson<f64>>> =
        Race::ALL.iter().map(|&r| (r, poisson_for(r))).collect();
    aud.races
        .iter()
        .enumerate()
        .map(|(member, &race)| {
            let matched = rng.random_bool(config.match_rate);
            let traveling = rng.random_bool(config.travel_prob);
            let sessions = dists[&race].as_ref().map_or(0, |d| d.sample(&mut rng) as u32);
            SimUser {
                member,
                race,
                activity_rate: config.base_activity_rate * config.activity_multiplier(race),
                traveling,
                matched,
                sessions,
            }
        })
        .collect()
}

/// Recipients of one ad in arrival order (indices into `users`).
fn deliver(users: &[SimUser], config: &SimConfig, skewed_ad: bool, seed_stream: u64) -> Vec<u32> {
    let mut rng = stream_rng(config.seed, seed_stream);
    let weight = |race: Race| config.relevance(race, skewed_ad).exp();
    let (wb, ww, wo) = (weight(Race::Black), weight(Race::White), weight(Race::Other));
    let mut keys: Vec<(f64, u32)> = users
        .iter()
        .enumerate()
        .filter(|(_, u)| u.matched && u.sessions > 0)
        .map(|(i, u)| {
            let w = u.sessions as f64
                * match u.race {
                    Race::Black => wb,
                    Race::White => ww,
                    Race::Other => wo,
                };
            let e: f64 = Exp1.sample(&mut rng);
            (e / w, i as u32)
        })
        .collect();
    let budget = (config.impressions_budget_per_ad as usize).min(keys.len());
    if budget < keys.len() {
        keys.select_nth_unstable_by(budget, |a, b| a.0.total_cmp(&b.0));
        keys.truncate(budget);
    }
    keys.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keys.into_iter().map(|(_, i)| i).collect()
}

fn streams(trial: u64) -> [u64; 3] {
    [trial * 3, trial * 3 + 1, trial * 3 + 2]
}

fn shared_partition(experiment: &PairedExperiment) -> Result<&AudiencePartition, SimError> {
    let (a, b) = (&experiment.campaign_a.audience, &experiment.campaign_b.audience);
    if a.name != b.name || a.members != b.members {
        return Err(SimError::DifferentAudiences);
    }
    Ok(a)
}

/// Full delivery trace of one simulated run.
#[derive(Clone, Debug)]
pub struct SimulatedRun {
    pub campaign_ids: [CampaignId; 2],
    pub regions: Vec<String>,
    pub start: DateTime<Utc>,
    pub duration_minutes: u32,
    pub users: Vec<SimUser>,
    /// Per campaign: (minute of first impression, region index) per recipient.
    deliveries: [Vec<(u32, u32)>; 2],
}

impl SimulatedRun {
    /// Cumulative unique impressions per region `elapsed_minutes` after launch.
    /// Every audience region is present, with zero where nothing was served.
    pub fn snapshot_at(&self, slot: usize, elapsed_minutes: u32) -> DeliverySnapshot {
        let mut counts: BTreeMap<String, u64> = self.regions.iter().map(|r| (r.clone(), 0)).collect();
        for &(minute, region) in &self.deliveries[slot] {
            if minute <= elapsed_minutes {
                *counts.get_mut(&self.regions[region as usize]).expect("known region") += 1;
            }
        }
        DeliverySnapshot::from_regions(
            self.campaign_ids[slot].0.clone(),
            self.start + Duration::minutes(elapsed_minutes as i64),
            counts,
        )
    }

    /// Snapshots every `interval_minutes` from launch to the end of the run;
    /// the last is terminal.
    pub fn series(&self, interval_minutes: u32) -> [Vec<DeliverySnapshot>; 2] {
        let schedule = crate::experiment::poll_schedule(self.duration_minutes / 60, interval_minutes);
        [0, 1].map(|slot| {
            let n = schedule.len();
            schedule
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let mut s = self.snapshot_at(slot, t);
                    s.terminal = i + 1 == n;
                    s
                })
                .collect()
        })
    }

    pub fn terminal(&self) -> [DeliverySnapshot; 2] {
        [0, 1].map(|slot| {
            let mut s = self.snapshot_at(slot, self.duration_minutes);
            s.terminal = true;
            s
        })
    }

    pub fn recipients(&self, slot: usize) -> usize {
        self.deliveries[slot].len()
    }
}

fn paced_minutes(order: &[u32], aud: &PreparedAudience, users: &[SimUser], budget: u64, duration_minutes: u32) -> Vec<(u32, u32)> {
    order
        .iter()
        .enumerate()
        .map(|(j, &u)| {
            let minute = ((j as u64 + 1) * duration_minutes as u64).div_ceil(budget) as u32;
            let user = &users[u as usize];
            let region = if user.traveling {
                aud.travel_index()
            } else {
                aud.region_of[user.member]
            };
            (minute.min(duration_minutes), region)
        })
        .collect()
}

/// Simulates one run (trial 0) of a paired experiment. Campaign a is the
/// skewed-school ad; only it receives `bias_beta`.
pub fn simulate_delivery(experiment: &PairedExperiment, config: &SimConfig) -> Result<SimulatedRun, SimError> {
    config.validate()?;
    let partition = shared_partition(experiment)?;
    let aud = PreparedAudience::new(partition)?;
    let duration_hours = experiment.campaign_a.duration_hours;
    let duration_minutes = duration_hours * 60;
    let [su, sa, sb] = streams(0);
    let users = sample_users(&aud, config, duration_hours, su);
    let deliveries = [(true, sa), (false, sb)].map(|(skewed, stream)| {
        let order = deliver(&users, config, skewed, stream);
        paced_minutes(&order, &aud, &users, config.impressions_budget_per_ad, duration_minutes)
    });
    Ok(SimulatedRun {
        campaign_ids: experiment.campaign_ids(),
        regions: aud.regions.clone(),
        start: config.start_time,
        duration_minutes,
        users,
        deliveries,
    })
}

/// Outcome of one Monte Carlo trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub trial: u64,
    pub for_profit: RaceBreakdown,
    pub public: RaceBreakdown,
    /// `None` when the test is undefined for this trial (no reach, or a
    /// single-race recipient pool).
    pub result: Option<SkewResult>,
    /// Users reached by both ads.
    pub overlap: u64,
}

impl TrialOutcome {
    pub fn reject(&self) -> bool {
        self.result.as_ref().is_some_and(|r| r.significant)
    }
}

fn breakdown(order: &[u32], aud: &PreparedAudience, users: &[SimUser]) -> RaceBreakdown {
    let mut b = RaceBreakdown::default();
    for &u in order {
        let user = &users[u as usize];
        match (user.traveling, user.race) {
            (true, _) | (false, Race::Other) => b.discarded += 1,
            (false, Race::Black) => b.n_black += 1,
            (false, Race::White) => b.n_white += 1,
        }
    }
    let _ = aud;
    b
}

fn run_prepared(
    aud: &PreparedAudience,
    config: &SimConfig,
    duration_hours: u32,
    trial: u64,
    alpha: f64,
) -> TrialOutcome {
    let [su, sa, sb] = streams(trial);
    let users = sample_users(aud, config, duration_hours, su);
    let a = deliver(&users, config, true, sa);
    let b = deliver(&users, config, false, sb);
    let in_a: BTreeSet<u32> = a.iter().copied().collect();
    let overlap = b.iter().filter(|u| in_a.contains(u)).count() as u64;
    let (for_profit, public) = (breakdown(&a, aud, &users), breakdown(&b, aud, &users));
    TrialOutcome {
        trial,
        for_profit,
        public,
        result: stats::skew_test(&for_profit, &public, alpha).ok(),
        overlap,
    }
}

/// Runs `trials` independent replications of an experiment in parallel.
/// Trial `t` uses its own random streams derived from `(config.seed, t)`,
/// so results do not depend on thread scheduling.
pub fn run_trials(
    experiment: &PairedExperiment,
    config: &SimConfig,
    trials: u64,
    alpha: f64,
) -> Result<Vec<TrialOutcome>, SimError> {
    config.validate()?;
    stats::z_critical(alpha)?;
    let partition = shared_partition(experiment)?;
    let aud = PreparedAudience::new(partition)?;
    let hours = experiment.campaign_a.duration_hours;
    let out: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| run_prepared(&aud, config, hours, t, alpha))
        .collect();
    if !out.is_empty() {
        let mean_overlap = out.iter().map(|o| o.overlap as f64).sum::<f64>() / out.len() as f64;
        log::info!(
            "{}: {} trials, mean users reached by both ads {:.1}",
            experiment.experiment_id,
            out.len(),
            mean_overlap
        );
    }
    Ok(out)
}

pub const TRIALS_HEADER: [&str; 8] = ["trial", "n_f_b", "n_f_w", "n_p_b", "n_p_w", "D", "Z", "reject"];

pub fn write_trials_csv<W: Write>(outcomes: &[TrialOutcome], writer: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRIALS_HEADER)?;
    for o in outcomes {
        let (d, z) = o
            .result
            .as_ref()
            .map_or((String::from("NaN"), String::from("NaN")), |r| {
                (format!("{:.10}", r.d), format!("{:.10}", r.z))
            });
        w.write_record([
            o.trial.to_string(),
            o.for_profit.n_black.to_string(),
            o.for_profit.n_white.to_string(),
            o.public.n_black.to_string(),
            o.public.n_white.to_string(),
            d,
            z,
            o.reject().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a trials file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct TrialRow {
    pub trial: u64,
    pub n_f_b: u64,
    pub n_f_w: u64,
    pub n_p_b: u64,
    pub n_p_w: u64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "Z")]
    pub z: f64,
    pub reject: bool,
}

impl TrialRow {
    pub fn breakdowns(&self) -> (RaceBreakdown, RaceBreakdown) {
        (
            RaceBreakdown::new(self.n_f_b, self.n_f_w),
            RaceBreakdown::new(self.n_p_b, self.n_p_w),
        )
    }
}

pub fn read_trials_csv<R: Read>(reader: R) -> Result<Vec<TrialRow>, SimError> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(SimError::from)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerEstimate {
    pub target_d: f64,
    pub bias_beta: f64,
    pub base_fraction: f64,
    pub per_race_size: usize,
    pub n_per_ad: u64,
    pub trials: u64,
    pub rejections: u64,
    pub power: f64,
    /// `Phi(D / SE - Z_alpha)` with SE at the expected per-ad sample size.
    pub analytic_power: f64,
    pub mean_d: f64,
}

/// A race-balanced synthetic partition with one region per race.
pub fn synthetic_partition(per_race_size: usize, name: &str) -> AudiencePartition {
    let mut members = Vec::with_capacity(per_race_size * 2);
    for (race, region) in [(Race::Black, "SIM-B"), (Race::White, "SIM-W")] {
        let region: std::sync::Arc<str> = region.into();
        let state: std::sync::Arc<str> = "ZZ".into();
        for i in 0..per_race_size {
            members.push(Individual {
                record_id: format!("{region}-{i}"),
                race,
                dma: region.clone(),
                state: state.clone(),
                contact_key: format!("{region}-{i}"),
            });
        }
    }
    AudiencePartition {
        name: name.to_string(),
        black_group: DmaGroup::new("sim-black", ["SIM-B"]),
        white_group: DmaGroup::new("sim-white", ["SIM-W"]),
        members,
        per_race_size,
        flipped: false,
        seed: 0,
        region_key: RegionKey::Dma,
    }
}

/// A paired experiment over `partition` with placeholder schools and the
/// standard campaign parameters.
pub fn synthetic_experiment(partition: AudiencePartition) -> PairedExperiment {
    let school = |name: &str, sector| crate::catalog::School {
        name: name.into(),
        sector,
        pct_black: 50.0,
        pct_white: 50.0,
        pct_other: 0.0,
        admit_rate: 90.0,
        enrollment: 10_000,
        four_year: true,
        online_program: true,
        active_platform_page: true,
        active_advertiser: true,
        online_url: None,
    };
    let aud = std::sync::Arc::new(partition);
    let id = format!("sim-{}", aud.name);
    PairedExperiment::new(
        id,
        CampaignSpec::standard(AdCreative::neutral(&school("Skewed School", Sector::ForProfit)), aud.clone()),
        CampaignSpec::standard(AdCreative::neutral(&school("Public School", Sector::Public)), aud),
    )
}

/// Empirical power of the skew test at alpha = 0.05 for a true effect
/// `target_d`, on a synthetic audience of `per_race_size` per race. The
/// effect is injected by setting `bias_beta` from
/// [`SimConfig::beta_for_effect`]; every other knob comes from `config`.
pub fn calibrate_power(
    target_d: f64,
    per_race_size: usize,
    config: &SimConfig,
    trials: u64,
) -> Result<PowerEstimate, SimError> {
    if trials < 100 {
        return Err(SimError::Config(format!("calibration needs at least 100 trials, got {trials}")));
    }
    const ALPHA: f64 = 0.05;
    let mut cfg = config.clone();
    cfg.bias_beta = cfg.beta_for_effect(target_d)?;
    let experiment = synthetic_experiment(synthetic_partition(per_race_size, "calibration"));
    let outcomes = run_trials(&experiment, &cfg, trials, ALPHA)?;
    let rejections = outcomes.iter().filter(|o| o.reject()).count() as u64;
    let ds: Vec<f64> = outcomes.iter().filter_map(|o| o.result.as_ref().map(|r| r.d)).collect();
    let base = cfg.expected_black_fraction();
    let reachable = (2 * per_race_size) as f64 * cfg.match_rate;
    let n = (cfg.impressions_budget_per_ad as f64).min(reachable) * (1.0 - cfg.travel_prob);
    let analytic = stats::analytic_power(target_d, base + target_d / 2.0, n, n, stats::z_critical(ALPHA)?);
    Ok(PowerEstimate {
        target_d,
        bias_beta: cfg.bias_beta,
        base_fraction: base,
        per_race_size,
        n_per_ad: n.round() as u64,
        trials,
        rejections,
        power: rejections as f64 / trials as f64,
        analytic_power: analytic,
        mean_d: if ds.is_empty() { f64::NAN } else { ds.iter().sum::<f64>() / ds.len() as f64 },
    })
}

/// Platform client backed by the simulator. Campaigns are auto-approved
/// unless listed in `denied`.
pub struct SimulatorClient {
    config: SimConfig,
    denied: BTreeSet<String>,
    experiment: Option<PairedExperiment>,
    run: Option<SimulatedRun>,
}

impl SimulatorClient {
    pub fn new(config: SimConfig) -> Self {
        Self {
            config,
            denied: BTreeSet::new(),
            experiment: None,
            run: None,
        }
    }

    pub fn deny(mut self, campaign_id: impl Into<String>) -> Self {
        self.denied.insert(campaign_id.into());
        self
    }

    pub fn run(&self) -> Option<&SimulatedRun> {
        self.run.as_ref()
    }
}

impl PlatformClient for SimulatorClient {
    fn create_campaigns(&mut self, experiment: &PairedExperiment) -> Result<[CampaignId; 2], PlatformError> {
        self.experiment = Some(experiment.clone());
        self.run = None;
        Ok(experiment.campaign_ids())
    }

    fn approval_status(&mut self, campaign: &CampaignId) -> Result<ApprovalStatus, PlatformError> {
        Ok(if self.denied.contains(&campaign.0) {
            ApprovalStatus::Denied("rejected by simulated review".into())
        } else {
            ApprovalStatus::Approved
        })
    }

    fn activate(&mut self, _campaigns: &[CampaignId; 2]) -> Result<DateTime<Utc>, PlatformError> {
        let experiment = self
            .experiment
            .as_ref()
            .ok_or_else(|| PlatformError::Other("no campaigns created".into()))?;
        let run = simulate_delivery(experiment, &self.config).map_err(|e| PlatformError::Other(e.to_string()))?;
        self.run = Some(run);
        Ok(self.config.start_time)
    }

    fn fetch_snapshot(&mut self, campaign: &CampaignId, elapsed_minutes: u32) -> Result<DeliverySnapshot, PlatformError> {
        let run = self
            .run
            .as_ref()
            .ok_or_else(|| PlatformError::Other("campaigns not active".into()))?;
        let slot = run
            .campaign_ids
            .iter()
            .position(|c| c == campaign)
            .ok_or_else(|| PlatformError::UnknownCampaign(campaign.clone()))?;
        Ok(run.snapshot_at(slot, elapsed_minutes.min(run.duration_minutes)))
    }
}
