//! Paired campaigns and the platform interface.
//!
//! Both campaigns of a [`PairedExperiment`] share audience, budget,
//! duration and objective; only creative and destination differ. They are
//! launched together through a [`PlatformClient`] once both are approved,
//! then polled on a fixed schedule into an append-only snapshot log.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audience::AudiencePartition;
use crate::catalog::{School, Sector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CreativeKind {
    Neutral,
    Realistic,
}

impl fmt::Display for CreativeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CreativeKind::Neutral => "neutral",
            CreativeKind::Realistic => "realistic",
        })
    }
}

/// Perceived race of the person pictured in a creative, as annotated by hand.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRaceTag {
    #[default]
    None,
    PerceivedBlack,
    PerceivedWhite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdCreative {
    pub school: School,
    pub kind: CreativeKind,
    pub headline: String,
    pub image_id: String,
    pub image_race_tag: ImageRaceTag,
    pub destination_url: String,
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect::<String>()
        .split('-')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

impl AdCreative {
    /// Campus or logo image, no people, and the shared headline with only
    /// the school name substituted.
    pub fn neutral(school: &School) -> Self {
        let s = slug(&school.name);
        Self {
            headline: format!("Earn your degree online at {}", school.name),
            image_id: format!("{s}-campus"),
            image_race_tag: ImageRaceTag::None,
            destination_url: school
                .online_url
                .clone()
                .unwrap_or_else(|| format!("https://{s}.example.edu/online")),
            kind: CreativeKind::Neutral,
            school: school.clone(),
        }
    }

    /// A creative taken from the school's ad library, with its annotated
    /// image tag.
    pub fn realistic(school: &School, image_id: impl Into<String>, tag: ImageRaceTag) -> Self {
        Self {
            kind: CreativeKind::Realistic,
            image_id: image_id.into(),
            image_race_tag: tag,
            ..Self::neutral(school)
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.kind == CreativeKind::Neutral && self.image_race_tag != ImageRaceTag::None {
            return Err(format!(
                "neutral creative for {} carries an image race tag",
                self.school.name
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    #[default]
    Traffic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignSpec {
    pub creative: AdCreative,
    pub audience: Arc<AudiencePartition>,
    pub objective: Objective,
    pub budget_usd: f64,
    pub duration_hours: u32,
    pub special_ad_category: bool,
    pub geo_limit: String,
}

impl CampaignSpec {
    /// Traffic objective, $50 lifetime budget, 24 hours, US only, no special
    /// ad category.
    pub fn standard(creative: AdCreative, audience: Arc<AudiencePartition>) -> Self {
        Self {
            creative,
            audience,
            objective: Objective::Traffic,
            budget_usd: 50.0,
            duration_hours: 24,
            special_ad_category: false,
            geo_limit: "US".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedExperiment {
    pub experiment_id: String,
    /// Skewed-school ad. The one-sided test direction is fixed by this slot.
    pub campaign_a: CampaignSpec,
    /// Public-school ad.
    pub campaign_b: CampaignSpec,
    pub launch_time: Option<DateTime<Utc>>,
}

impl PairedExperiment {
    pub fn new(experiment_id: impl Into<String>, a: CampaignSpec, b: CampaignSpec) -> Self {
        Self {
            experiment_id: experiment_id.into(),
            campaign_a: a,
            campaign_b: b,
            launch_time: None,
        }
    }

    pub fn campaign_ids(&self) -> [CampaignId; 2] {
        [
            CampaignId(format!("{}-a", self.experiment_id)),
            CampaignId(format!("{}-b", self.experiment_id)),
        ]
    }

    pub fn campaigns(&self) -> [&CampaignSpec; 2] {
        [&self.campaign_a, &self.campaign_b]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PairingViolation {
    AudienceMismatch { only_a: usize, only_b: usize },
    BudgetMismatch { a: f64, b: f64 },
    DurationMismatch { a: u32, b: u32 },
    ObjectiveMismatch,
    CreativeKindMismatch { a: CreativeKind, b: CreativeKind },
    SpecialAdCategory { campaign: char },
    GeoLimit { campaign: char, geo: String },
    SkewedSchoolIsPublic(String),
    ControlSchoolNotPublic(String),
    Creative(String),
}

impl fmt::Display for PairingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use PairingViolation::*;
        match self {
            AudienceMismatch { only_a, only_b } => write!(
                f,
                "audience mismatch ({only_a} members only in a, {only_b} only in b)"
            ),
            BudgetMismatch { a, b } => write!(f, "budget mismatch (${a} vs ${b})"),
            DurationMismatch { a, b } => write!(f, "duration mismatch ({a}h vs {b}h)"),
            ObjectiveMismatch => f.write_str("objective mismatch"),
            CreativeKindMismatch { a, b } => write!(f, "creative kind mismatch ({a} vs {b})"),
            SpecialAdCategory { campaign } => {
                write!(f, "campaign {campaign} is labeled special ad category")
            }
            GeoLimit { campaign, geo } => write!(f, "campaign {campaign} geo limit is {geo}, not US"),
            SkewedSchoolIsPublic(n) => write!(f, "skewed-school ad advertises public school {n}"),
            ControlSchoolNotPublic(n) => write!(f, "control ad advertises non-public school {n}"),
            Creative(msg) => f.write_str(msg),
        }
    }
}

/// Lists every parameter the two campaigns fail to share, plus breaches of
/// the per-campaign invariants. An empty list means the pair is valid.
pub fn validate_pairing(experiment: &PairedExperiment) -> Vec<PairingViolation> {
    use PairingViolation::*;
    let (a, b) = (&experiment.campaign_a, &experiment.campaign_b);
    let mut v = Vec::new();
    if !Arc::ptr_eq(&a.audience, &b.audience)
        && (a.audience.name != b.audience.name || a.audience.members != b.audience.members)
    {
        let keys = |p: &AudiencePartition| {
            p.members
                .iter()
                .map(|m| m.contact_key.clone())
                .collect::<std::collections::BTreeSet<_>>()
        };
        let (ka, kb) = (keys(&a.audience), keys(&b.audience));
        v.push(AudienceMismatch {
            only_a: ka.difference(&kb).count(),
            only_b: kb.difference(&ka).count(),
        });
    }
    if a.budget_usd != b.budget_usd {
        v.push(BudgetMismatch {
            a: a.budget_usd,
            b: b.budget_usd,
        });
    }
    if a.duration_hours != b.duration_hours {
        v.push(DurationMismatch {
            a: a.duration_hours,
            b: b.duration_hours,
        });
    }
    if a.objective != b.objective {
        v.push(ObjectiveMismatch);
    }
    if a.creative.kind != b.creative.kind {
        v.push(CreativeKindMismatch {
            a: a.creative.kind,
            b: b.creative.kind,
        });
    }
    for (label, c) in [('a', a), ('b', b)] {
        if c.special_ad_category {
            v.push(SpecialAdCategory { campaign: label });
        }
        if c.geo_limit != "US" {
            v.push(GeoLimit {
                campaign: label,
                geo: c.geo_limit.clone(),
            });
        }
        if let Err(msg) = c.creative.check() {
            v.push(Creative(msg));
        }
    }
    if a.creative.school.sector == Sector::Public {
        v.push(SkewedSchoolIsPublic(a.creative.school.name.clone()));
    }
    if b.creative.school.sector != Sector::Public {
        v.push(ControlSchoolNotPublic(b.creative.school.name.clone()));
    }
    v
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CampaignId(pub String);

impl fmt::Display for CampaignId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Cumulative delivery of one campaign at one point in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeliverySnapshot {
    pub campaign_id: String,
    pub time: DateTime<Utc>,
    pub unique_impressions_by_region: BTreeMap<String, u64>,
    pub total_reach: u64,
    #[serde(default)]
    pub terminal: bool,
    /// Integrity warnings attached while polling.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl DeliverySnapshot {
    pub fn from_regions(
        campaign_id: impl Into<String>,
        time: DateTime<Utc>,
        regions: BTreeMap<String, u64>,
    ) -> Self {
        let total_reach = regions.values().sum();
        Self {
            campaign_id: campaign_id.into(),
            time,
            unique_impressions_by_region: regions,
            total_reach,
            terminal: false,
            warnings: Vec::new(),
        }
    }

    /// Regions whose count went down relative to `earlier`.
    pub fn decreases_since(&self, earlier: &DeliverySnapshot) -> Vec<String> {
        earlier
            .unique_impressions_by_region
            .iter()
            .filter_map(|(region, &before)| {
                let now = self.unique_impressions_by_region.get(region).copied().unwrap_or(0);
                (now < before).then(|| format!("{region}: {before} -> {now}"))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalStatus {
    Approved,
    Pending,
    Denied(String),
}

#[derive(Debug, Error)]
pub enum PlatformError {
    /// Network or service hiccup; the call may be retried.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unknown campaign {0}")]
    UnknownCampaign(CampaignId),
    #[error("{0}")]
    Unavailable(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl PlatformError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, PlatformError::Transport(_))
    }
}

/// The surface an ad platform exposes to the audit.
pub trait PlatformClient {
    /// Submits both campaigns (paused) and returns their ids.
    fn create_campaigns(&mut self, experiment: &PairedExperiment) -> Result<[CampaignId; 2], PlatformError>;

    fn approval_status(&mut self, campaign: &CampaignId) -> Result<ApprovalStatus, PlatformError>;

    /// Starts both campaigns together and returns the common launch time.
    fn activate(&mut self, campaigns: &[CampaignId; 2]) -> Result<DateTime<Utc>, PlatformError>;

    /// Cumulative delivery `elapsed_minutes` after launch.
    fn fetch_snapshot(
        &mut self,
        campaign: &CampaignId,
        elapsed_minutes: u32,
    ) -> Result<DeliverySnapshot, PlatformError>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHandle {
    pub experiment_id: String,
    pub campaigns: [CampaignId; 2],
    pub launch_time: DateTime<Utc>,
    pub duration_hours: u32,
}

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error("pairing invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidPairing(Vec<PairingViolation>),
    #[error("launch refused: campaign {campaign} is {status:?}")]
    NotApproved {
        campaign: CampaignId,
        status: ApprovalStatus,
    },
    #[error(transparent)]
    Platform(#[from] PlatformError),
}

/// Submits both campaigns, checks that both are approved, then activates
/// them together. Nothing is activated unless both are approved.
pub fn launch(
    experiment: &mut PairedExperiment,
    client: &mut dyn PlatformClient,
) -> Result<RunHandle, LaunchError> {
    let violations = validate_pairing(experiment);
    if !violations.is_empty() {
        return Err(LaunchError::InvalidPairing(violations));
    }
    let ids = client.create_campaigns(experiment)?;
    for id in &ids {
        let status = client.approval_status(id)?;
        if status != ApprovalStatus::Approved {
            return Err(LaunchError::NotApproved {
                campaign: id.clone(),
                status,
            });
        }
    }
    let launch_time = client.activate(&ids)?;
    experiment.launch_time = Some(launch_time);
    Ok(RunHandle {
        experiment_id: experiment.experiment_id.clone(),
        campaigns: ids,
        launch_time,
        duration_hours: experiment.campaign_a.duration_hours,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PollOptions {
    pub interval_minutes: u32,
    pub max_retries: u32,
}

impl Default for PollOptions {
    fn default() -> Self {
        Self {
            interval_minutes: 60,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum PollError {
    #[error("poll interval must be positive")]
    ZeroInterval,
    #[error("fetching {campaign} at +{elapsed_minutes}min failed after retries: {source}")]
    Fetch {
        campaign: CampaignId,
        elapsed_minutes: u32,
        #[source]
        source: PlatformError,
    },
    #[error(transparent)]
    Log(#[from] LogError),
}

/// Times, in minutes after launch, at which a run is polled: every
/// `interval` from launch, with the end of the run always included.
pub fn poll_schedule(duration_hours: u32, interval_minutes: u32) -> Vec<u32> {
    let end = duration_hours * 60;
    let mut times: Vec<u32> = (0..end).step_by(interval_minutes.max(1) as usize).collect();
    times.push(end);
    times
}

/// Polls both campaigns of a run until its duration elapses. Every snapshot
/// is appended to `log` when given; the last one per campaign is marked
/// terminal. Decreasing counts are kept but flagged with a warning.
pub fn poll(
    handle: &RunHandle,
    client: &mut dyn PlatformClient,
    options: PollOptions,
    mut log: Option<&mut SnapshotLog>,
) -> Result<[Vec<DeliverySnapshot>; 2], PollError> {
    if options.interval_minutes == 0 {
        return Err(PollError::ZeroInterval);
    }
    let schedule = poll_schedule(handle.duration_hours, options.interval_minutes);
    let mut series: [Vec<DeliverySnapshot>; 2] = [Vec::new(), Vec::new()];
    for (step, &elapsed) in schedule.iter().enumerate() {
        for (slot, id) in handle.campaigns.iter().enumerate() {
            let mut snap = fetch_with_retry(client, id, elapsed, options.max_retries)?;
            snap.terminal = step + 1 == schedule.len();
            if let Some(prev) = series[slot].last() {
                let drops = snap.decreases_since(prev);
                if !drops.is_empty() {
                    log::warn!("{id}: non-monotone delivery counts at +{elapsed}min");
                    snap.warnings
                        .push(format!("monotonicity violation: {}", drops.join(", ")));
                }
            }
            if let Some(log) = log.as_deref_mut() {
                log.append(&snap)?;
            }
            series[slot].push(snap);
        }
    }
    Ok(series)
}

fn fetch_with_retry(
    client: &mut dyn PlatformClient,
    id: &CampaignId,
    elapsed: u32,
    max_retries: u32,
) -> Result<DeliverySnapshot, PollError> {
    let mut attempt = 0;
    loop {
        match client.fetch_snapshot(id, elapsed) {
            Ok(s) => return Ok(s),
            Err(e) if e.is_retryable() && attempt < max_retries => {
                attempt += 1;
                log::warn!("{id}: fetch at +{elapsed}min failed ({e}), retry {attempt}/{max_retries}");
            }
            Err(source) => {
                return Err(PollError::Fetch {
                    campaign: id.clone(),
                    elapsed_minutes: elapsed,
                    source,
                })
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("snapshot log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("snapshot log: {0}")]
    Csv(#[from] csv::Error),
    #[error("snapshot log {0}: bad timestamp `{1}`")]
    Time(PathBuf, String),
    #[error("snapshot log {0}: bad count `{1}`")]
    Count(PathBuf, String),
    #[error("snapshot log {0} is empty")]
    Empty(PathBuf),
}

pub const SNAPSHOT_LOG_HEADER: [&str; 4] = ["campaign_id", "time", "region", "unique_impressions"];

/// Append-only CSV log of snapshots for one experiment. One row per
/// (campaign, time, region).
pub struct SnapshotLog {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl SnapshotLog {
    pub fn path_for(dir: &Path, experiment_id: &str) -> PathBuf {
        dir.join(format!("snapshots_{experiment_id}.csv"))
    }

    pub fn open(dir: &Path, experiment_id: &str) -> Result<Self, LogError> {
        let path = Self::path_for(dir, experiment_id);
        let io_err = |source| LogError::Io {
            path: path.clone(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let fresh = std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(file));
        if fresh {
            writer.write_record(SNAPSHOT_LOG_HEADER)?;
        }
        Ok(Self { path, writer })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, snap: &DeliverySnapshot) -> Result<(), LogError> {
        let time = snap.time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        for (region, count) in &snap.unique_impressions_by_region {
            self.writer
                .write_record([snap.campaign_id.as_str(), &time, region, &count.to_string()])?;
        }
        self.writer.flush().map_err(|source| LogError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

/// Reads a snapshot log back into per-campaign series, ordered by time. The
/// last snapshot of each campaign is marked terminal.
pub fn read_snapshot_log(path: &Path) -> Result<BTreeMap<String, Vec<DeliverySnapshot>>, LogError> {
    let file = File::open(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(file));
    let mut grouped: BTreeMap<String, BTreeMap<DateTime<Utc>, BTreeMap<String, u64>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let time = DateTime::parse_from_rfc3339(&rec[1])
            .map_err(|_| LogError::Time(path.to_path_buf(), rec[1].to_string()))?
            .with_timezone(&Utc);
        let count: u64 = rec[3]
            .parse()
            .map_err(|_| LogError::Count(path.to_path_buf(), rec[3].to_string()))?;
        *grouped
            .entry(rec[0].to_string())
            .or_default()
            .entry(time)
            .or_default()
            .entry(rec[2].to_string())
            .or_default() += count;
    }
    if grouped.is_empty() {
        return Err(LogError::Empty(path.to_path_buf()));
    }
    Ok(grouped
        .into_iter()
        .map(|(campaign, by_time)| {
            let n = by_time.len();
            let series = by_time
                .into_iter()
                .enumerate()
                .map(|(i, (time, regions))| {
                    let mut s = DeliverySnapshot::from_regions(campaign.clone(), time, regions);
                    s.terminal = i + 1 == n;
                    s
                })
                .collect();
            (campaign, series)
        })
        .collect())
}

/// Feeds recorded snapshot logs back through the platform interface.
pub struct ReplayClient {
    series: BTreeMap<String, Vec<DeliverySnapshot>>,
    launch_time: Option<DateTime<Utc>>,
}

impl ReplayClient {
    pub fn from_log(path: &Path) -> Result<Self, LogError> {
        Ok(Self::new(read_snapshot_log(path)?))
    }

    pub fn new(series: BTreeMap<String, Vec<DeliverySnapshot>>) -> Self {
        Self {
            series,
            launch_time: None,
        }
    }

    fn first_time(&self, ids: &[CampaignId]) -> Option<DateTime<Utc>> {
        ids.iter()
            .filter_map(|id| self.series.get(&id.0)?.first().map(|s| s.time))
            .min()
    }
}

impl PlatformClient for ReplayClient {
    fn create_campaigns(&mut self, experiment: &PairedExperiment) -> Result<[CampaignId; 2], PlatformError> {
        let ids = experiment.campaign_ids();
        for id in &ids {
            if !self.series.contains_key(&id.0) {
                return Err(PlatformError::UnknownCampaign(id.clone()));
            }
        }
        Ok(ids)
    }

    fn approval_status(&mut self, _campaign: &CampaignId) -> Result<ApprovalStatus, PlatformError> {
        Ok(ApprovalStatus::Approved)
    }

    fn activate(&mut self, campaigns: &[CampaignId; 2]) -> Result<DateTime<Utc>, PlatformError> {
        let t = self
            .first_time(campaigns)
            .ok_or_else(|| PlatformError::Unavailable("no recorded snapshots".into()))?;
        self.launch_time = Some(t);
        Ok(t)
    }

    fn fetch_snapshot(&mut self, campaign: &CampaignId, elapsed_minutes: u32) -> Result<DeliverySnapshot, PlatformError> {
        let series = self
            .series
            .get(&campaign.0)
            .ok_or_else(|| PlatformError::UnknownCampaign(campaign.clone()))?;
        let launch = self
            .launch_time
            .ok_or_else(|| PlatformError::Other("replay not activated".into()))?;
        let at = launch + Duration::minutes(elapsed_minutes as i64);
        let mut snap = match series.iter().rev().find(|s| s.time <= at) {
            Some(s) => s.clone(),
            None => {
                let zeros = series
                    .first()
                    .map(|s| s.unique_impressions_by_region.keys().map(|k| (k.clone(), 0)).collect())
                    .unwrap_or_default();
                DeliverySnapshot::from_regions(campaign.0.clone(), at, zeros)
            }
        };
        snap.time = at;
        snap.terminal = false;
        Ok(snap)
    }
}

/// Canned platform responses for the dry-run client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DryRunFixtures {
    pub default_approval: ApprovalStatus,
    /// Per-campaign overrides keyed by campaign id.
    pub approvals: BTreeMap<String, ApprovalStatus>,
    /// Recorded snapshot log served as delivery responses.
    pub snapshot_log: Option<PathBuf>,
    pub launch_time: Option<DateTime<Utc>>,
}

impl Default for DryRunFixtures {
    fn default() -> Self {
        Self {
            default_approval: ApprovalStatus::Approved,
            approvals: BTreeMap::new(),
            snapshot_log: None,
            launch_time: None,
        }
    }
}

/// Builds the platform requests a live launch would send and writes them
/// to disk instead. Responses come from [`DryRunFixtures`]; no network
/// calls are made.
pub struct DryRunClient {
    out_dir: PathBuf,
    fixtures: DryRunFixtures,
    replay: Option<ReplayClient>,
    written: Vec<PathBuf>,
}

impl DryRunClient {
    pub fn new(out_dir: impl Into<PathBuf>, fixtures: DryRunFixtures) -> Result<Self, PlatformError> {
        let replay = match &fixtures.snapshot_log {
            Some(p) => Some(ReplayClient::from_log(p).map_err(|e| PlatformError::Other(e.to_string()))?),
            None => None,
        };
        Ok(Self {
            out_dir: out_dir.into(),
            fixtures,
            replay,
            written: Vec::new(),
        })
    }

    /// Request files written so far.
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn request_body(campaign: &CampaignSpec, id: &CampaignId, launch: Option<DateTime<Utc>>) -> serde_json::Value {
        let start = launch.map(|t| t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
        let end = launch.map(|t| {
            (t + Duration::hours(campaign.duration_hours as i64)).to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
        });
        serde_json::json!({
            "campaign": {
                "name": id.0,
                "objective": "OUTCOME_TRAFFIC",
                "special_ad_categories": if campaign.special_ad_category { vec!["SPECIAL"] } else { Vec::<&str>::new() },
                "status": "PAUSED",
            },
            "ad_set": {
                "name": format!("{}-adset", id.0),
                "lifetime_budget_cents": (campaign.budget_usd * 100.0).round() as u64,
                "duration_hours": campaign.duration_hours,
                "start_time": start,
                "end_time": end,
                "optimization_goal": "LINK_CLICKS",
                "billing_event": "IMPRESSIONS",
                "targeting": {
                    "custom_audiences": [campaign.audience.name],
                    "geo_locations": { "countries": [campaign.geo_limit] },
                },
            },
            "ad": {
                "name": format!("{}-ad", id.0),
                "creative": {
                    "kind": campaign.creative.kind,
                    "headline": campaign.creative.headline,
                    "image_id": campaign.creative.image_id,
                    "link": campaign.creative.destination_url,
                },
            },
            "custom_audience": {
                "name": campaign.audience.name,
                "schema": ["contact_key"],
                "member_count": campaign.audience.members.len(),
            },
        })
    }
}

impl PlatformClient for DryRunClient {
    fn create_campaigns(&mut self, experiment: &PairedExperiment) -> Result<[CampaignId; 2], PlatformError> {
        std::fs::create_dir_all(&self.out_dir)?;
        let ids = experiment.campaign_ids();
        for (spec, id) in experiment.campaigns().into_iter().zip(&ids) {
            let body = Self::request_body(spec, id, self.fixtures.launch_time);
            let path = self.out_dir.join(format!("{}.request.json", id.0));
            let text = serde_json::to_string_pretty(&body).map_err(|e| PlatformError::Other(e.to_string()))?;
            std::fs::write(&path, text + "\n")?;
            self.written.push(path);
        }
        if let Some(replay) = self.replay.as_mut() {
            replay.create_campaigns(experiment)?;
        }
        Ok(ids)
    }

    fn approval_status(&mut self, campaign: &CampaignId) -> Result<ApprovalStatus, PlatformError> {
        Ok(self
            .fixtures
            .approvals
            .get(&campaign.0)
            .cloned()
            .unwrap_or_else(|| self.fixtures.default_approval.clone()))
    }

    fn activate(&mut self, campaigns: &[CampaignId; 2]) -> Result<DateTime<Utc>, PlatformError> {
        match (self.replay.as_mut(), self.fixtures.launch_time) {
            (Some(r), _) => r.activate(campaigns),
            (None, Some(t)) => Ok(t),
            (None, None) => Ok(DateTime::UNIX_EPOCH),
        }
    }

    fn fetch_snapshot(&mut self, campaign: &CampaignId, elapsed_minutes: u32) -> Result<DeliverySnapshot, PlatformError> {
        match self.replay.as_mut() {
            Some(r) => r.fetch_snapshot(campaign, elapsed_minutes),
            None => Err(PlatformError::Unavailable(
                "dry-run client has no snapshot fixture".into(),
            )),
        }
    }
}
