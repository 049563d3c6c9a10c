//! Subcommand orchestration.
//!
//! Every subcommand reads one audit config (`--config`) and works inside one
//! output directory (`--out`). Steps hand artifacts to each other through
//! files in that directory and record them in `manifest.json`, so any step
//! can be rerun on its own. Wall-clock timestamps go to `run_meta.json`;
//! every other artifact is a pure function of the inputs and the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audience::{self, AudiencePartition, PartitionMeta, PartitionSpec};
use crate::catalog::{self, School, SchoolPair, ShortlistCriteria};
use crate::experiment::{
    self, AdCreative, CampaignSpec, CreativeKind, DryRunClient, DryRunFixtures, PairedExperiment,
    PollOptions, SnapshotLog,
};
use crate::report::{self, FractionRow, ResultRow, VerdictRate};
use crate::seed::{derive_seed, sha256_hex};
use crate::simulator::{self, SimConfig, SimulatorClient};
use crate::stats::{self, RegionRaceMap};
use crate::voterdata::{self, DmaGroup, RegionKey, VoterDataset, VoterSchema};

#[derive(Debug, Parser)]
#[command(name = "adskew", version, about = "Paired-ad delivery skew audit workbench")]
pub struct Cli {
    /// Audit config (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, global = true, env = "ADSKEW_CONFIG")]
    pub config: Option<PathBuf>,
    /// Top-level seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory shared by all steps.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize the voter file and count individuals per (group, race).
    Ingest,
    /// Build audience partitions (and flipped replicas) from ingested voters.
    BuildAudience,
    /// Shortlist schools and pair skewed with public schools.
    PairSchools,
    /// Run every paired experiment against the simulated platform.
    Simulate {
        /// Monte Carlo replications per experiment, in addition to the logged run.
        #[arg(long, default_value_t = 0)]
        trials: u64,
    },
    /// Build platform requests for every experiment without sending them.
    Launch {
        #[arg(long)]
        dry_run: bool,
        /// JSON file of canned platform responses.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Test terminal snapshots for skew and apply Holm per family.
    Analyze {
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Campaign holding the skewed-school ad. Fixed by experiment
        /// metadata; any other value is refused.
        #[arg(long, value_enum)]
        skewed_campaign: Option<CampaignSlot>,
    },
    /// Render tables and SVG plots from analysis output.
    Report {
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Write a synthetic demo workspace (voters, schema, catalog, config) into --out.
    Fixtures {
        #[arg(long, default_value_t = 8_000)]
        per_dma: u64,
        #[arg(long, default_value_t = 7_500)]
        per_race_size: usize,
        #[arg(long, default_value_t = 0.0)]
        bias_beta: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CampaignSlot {
    A,
    B,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing artifact {name} at {path} (run `{step}` first)")]
    MissingArtifact { name: String, path: PathBuf, step: &'static str },
    #[error("config: {0}")]
    Config(String),
    #[error("refusing to switch test direction: experiment metadata fixes the skewed-school ad as campaign {fixed:?}")]
    DirectionSwitch { fixed: CampaignSlot },
    #[error("live launches are not supported; pass --dry-run")]
    LiveLaunch,
    #[error("experiment {0}: {1}")]
    Experiment(String, String),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub seed: Option<u64>,
    pub ingest: Option<IngestConfig>,
    pub audience: Option<AudienceConfig>,
    pub catalog: Option<CatalogConfig>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub voter_file: PathBuf,
    /// Column mapping; defaults to the normalized individuals layout.
    pub schema: Option<PathBuf>,
    #[serde(default)]
    pub region_key: RegionKey,
    pub groups: Vec<DmaGroup>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudienceConfig {
    pub name: String,
    pub black_group: String,
    pub white_group: String,
    pub per_race_size: usize,
    #[serde(default = "one")]
    pub partitions: usize,
    /// Also build the flipped replica of every partition.
    #[serde(default)]
    pub flipped: bool,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairingMode {
    #[default]
    Sorted,
    Explicit,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogConfig {
    pub file: PathBuf,
    #[serde(default)]
    pub mode: PairingMode,
    /// Explicit mode: skewed schools, zipped in order with `public`.
    #[serde(default)]
    pub skewed: Vec<String>,
    #[serde(default)]
    pub public: Vec<String>,
    #[serde(default)]
    pub criteria: ShortlistCriteria,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub creative: CreativeKind,
    /// Realistic creatives: image id per school name.
    pub images: BTreeMap<String, String>,
    pub budget_usd: f64,
    pub duration_hours: u32,
    pub poll_interval_minutes: u32,
    pub launch_time: DateTime<Utc>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            creative: CreativeKind::Neutral,
            images: BTreeMap::new(),
            budget_usd: 50.0,
            duration_hours: 24,
            poll_interval_minutes: 60,
            launch_time: SimConfig::default().start_time,
        }
    }
}

/// What the steps have produced so far. Written to `manifest.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditRunManifest {
    pub seed: u64,
    /// SHA-256 of each input file, keyed by the path given in the config.
    pub config_hashes: BTreeMap<String, String>,
    pub audiences: Vec<String>,
    pub creative_kind: Option<CreativeKind>,
    pub experiments: Vec<ExperimentRecord>,
    /// Artifacts per step, relative to the output directory.
    pub outputs: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment_id: String,
    pub pair_id: String,
    pub audience: String,
    /// Holm family: `original` or `flipped` audiences.
    pub family: String,
    pub skewed_school: String,
    pub public_school: String,
    pub skewed_campaign: CampaignSlot,
    pub campaign_ids: [String; 2],
    pub trials: u64,
}

pub const MANIFEST: &str = "manifest.json";
pub const RUN_META: &str = "run_meta.json";
pub const INDIVIDUALS: &str = "individuals.csv";
pub const SUMMARY: &str = "summary.csv";
pub const AUDIENCE_DIR: &str = "audiences";
pub const PAIRS: &str = "pairs.csv";
pub const RESULTS: &str = "results.csv";
pub const FRACTIONS: &str = "fractions.csv";
pub const HOLM: &str = "holm.csv";
pub const TRIAL_VERDICTS: &str = "trial_verdicts.csv";
pub const VERDICT_RATES: &str = "verdict_rates.csv";

pub fn mc_file(experiment_id: &str) -> String {
    format!("mc_{experiment_id}.csv")
}

pub fn snapshot_file(experiment_id: &str) -> String {
    format!("snapshots_{experiment_id}.csv")
}

struct Ctx {
    cfg: AuditConfig,
    cfg_dir: PathBuf,
    cfg_path: PathBuf,
    cfg_hash: String,
    out: PathBuf,
    seed: u64,
}

impl Ctx {
    fn load(cli: &Cli) -> Result<Self> {
        let path = cli
            .config
            .clone()
            .ok_or_else(|| CliError::Config("--config is required".into()))?;
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: AuditConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        cfg.sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let seed = cli.seed.or(cfg.seed).unwrap_or(0);
        Ok(Self {
            cfg_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            cfg_hash: sha256_hex(text.as_bytes()),
            cfg_path: path,
            cfg,
            out: cli.out.clone(),
            seed,
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.cfg_dir.join(p)
        }
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, name: &str, step: &'static str) -> Result<PathBuf> {
        let path = self.out_path(name);
        if !path.exists() {
            return Err(CliError::MissingArtifact {
                name: name.into(),
                path,
                step,
            }
            .into());
        }
        Ok(path)
    }

    fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> Result<&'a T> {
        s.as_ref()
            .ok_or_else(|| CliError::Config(format!("{} has no [{name}] section", self.cfg_path.display())).into())
    }

    fn manifest(&self) -> Result<AuditRunManifest> {
        let path = self.out_path(MANIFEST);
        if !path.exists() {
            return Ok(AuditRunManifest {
                seed: self.seed,
                ..Default::default()
            });
        }
        let m: AuditRunManifest = serde_json::from_reader(BufReader::new(File::open(&path)?))
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(m)
    }

    /// Records a finished step in the manifest and its timestamp in the
    /// sidecar metadata.
    fn finish(&self, step: &str, mut manifest: AuditRunManifest, outputs: Vec<String>) -> Result<()> {
        manifest.seed = self.seed;
        manifest
            .config_hashes
            .insert(self.cfg_path.display().to_string(), self.cfg_hash.clone());
        let mut outputs = outputs;
        outputs.sort();
        manifest.outputs.insert(step.to_string(), outputs);
        write_json(&self.out_path(MANIFEST), &manifest)?;
        let meta_path = self.out_path(RUN_META);
        let mut meta: BTreeMap<String, String> = fs::read(&meta_path)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default();
        meta.insert(step.to_string(), Utc::now().to_rfc3339());
        write_json(&meta_path, &meta)
    }

    fn hash_input(&self, manifest: &mut AuditRunManifest, p: &Path) -> Result<()> {
        let bytes = fs::read(self.resolve(p)).with_context(|| format!("reading {}", self.resolve(p).display()))?;
        manifest.config_hashes.insert(p.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Fixtures {
        per_dma,
        per_race_size,
        bias_beta,
    } = cli.command
    {
        let seed = cli.seed.unwrap_or(0);
        crate::synth::write_demo_workspace(&cli.out, per_dma, per_race_size, bias_beta, seed)
            .with_context(|| format!("writing fixtures to {}", cli.out.display()))?;
        log::info!("demo workspace written to {}", cli.out.display());
        return Ok(());
    }
    let ctx = Ctx::load(&cli)?;
    fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    match cli.command {
        Command::Ingest => ingest(&ctx),
        Command::BuildAudience => build_audience(&ctx),
        Command::PairSchools => pair_schools(&ctx),
        Command::Simulate { trials } => simulate(&ctx, trials),
        Command::Launch { dry_run, fixtures } => {
            if !dry_run {
                return Err(CliError::LiveLaunch.into());
            }
            launch_dry_run(&ctx, fixtures.as_deref())
        }
        Command::Analyze { alpha, skewed_campaign } => analyze(&ctx, alpha, skewed_campaign),
        Command::Report { alpha } => report(&ctx, alpha),
        Command::Fixtures { .. } => unreachable!("handled above"),
    }
}

fn ingest(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.section(&ctx.cfg.ingest, "ingest")?;
    voterdata::check_disjoint(&cfg.groups)?;
    let schema = match &cfg.schema {
        Some(p) => VoterSchema::load(&ctx.resolve(p))?,
        None => VoterSchema::normalized(),
    };
    let mut manifest = ctx.manifest()?;
    if let Some(p) = &cfg.schema {
        ctx.hash_input(&mut manifest, p)?;
    }
    let dataset = voterdata::ingest_voter_file(&ctx.resolve(&cfg.voter_file), &schema)?;
    dataset.write_csv(create(&ctx.out_path(INDIVIDUALS))?)?;
    let summary = voterdata::summarize(&dataset, &cfg.groups, cfg.region_key)?;
    summary.write_csv(create(&ctx.out_path(SUMMARY))?)?;
    log::info!("ingested {} individuals", dataset.len());
    ctx.finish("ingest", manifest, vec![INDIVIDUALS.into(), SUMMARY.into()])
}

fn load_individuals(ctx: &Ctx) -> Result<VoterDataset> {
    let path = ctx.require(INDIVIDUALS, "ingest")?;
    Ok(VoterDataset::read_normalized(&path)?)
}

fn find_group<'a>(groups: &'a [DmaGroup], id: &str) -> Result<&'a DmaGroup> {
    groups
        .iter()
        .find(|g| g.group_id == id)
        .ok_or_else(|| CliError::Config(format!("unknown group `{id}`")).into())
}

fn build_audience(ctx: &Ctx) -> Result<()> {
    let ingest_cfg = ctx.section(&ctx.cfg.ingest, "ingest")?;
    let cfg = ctx.section(&ctx.cfg.audience, "audience")?;
    if cfg.partitions == 0 {
        return Err(CliError::Config("audience.partitions must be at least 1".into()).into());
    }
    let dataset = load_individuals(ctx)?;
    let spec = PartitionSpec {
        name: cfg.name.clone(),
        black_group: find_group(&ingest_cfg.groups, &cfg.black_group)?.clone(),
        white_group: find_group(&ingest_cfg.groups, &cfg.white_group)?.clone(),
        per_race_size: cfg.per_race_size,
        seed: derive_seed(ctx.seed, "audience"),
        region_key: ingest_cfg.region_key,
    };
    let mut parts = audience::disjoint_partitions(&dataset, &spec, cfg.partitions)?;
    if cfg.flipped {
        let flipped = parts
            .iter()
            .map(|p| audience::flip(p, &dataset))
            .collect::<Result<Vec<_>, _>>()?;
        parts.extend(flipped);
    }
    let dir = ctx.out_path(AUDIENCE_DIR);
    let mut outputs = Vec::new();
    for p in &parts {
        if let Err(violations) = p.check_invariants() {
            bail!("audience {} violates invariants: {}", p.name, violations.join("; "));
        }
        p.export(&dir)?;
        outputs.push(format!("{AUDIENCE_DIR}/{}.csv", p.name));
        outputs.push(format!("{AUDIENCE_DIR}/{}.json", p.name));
    }
    let mut manifest = ctx.manifest()?;
    manifest.audiences = parts.iter().map(|p| p.name.clone()).collect();
    log::info!("built {} audiences", parts.len());
    ctx.finish("build-audience", manifest, outputs)
}

fn read_catalog(ctx: &Ctx, cfg: &CatalogConfig) -> Result<Vec<School>> {
    let path = ctx.resolve(&cfg.file);
    let file = File::open(&path).with_context(|| format!("opening catalog {}", path.display()))?;
    let schools = catalog::read_catalog(BufReader::new(file))?;
    for s in &schools {
        s.validate()?;
    }
    Ok(schools)
}

fn pair_schools(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.section(&ctx.cfg.catalog, "catalog")?;
    let schools = read_catalog(ctx, cfg)?;
    let shortlist = catalog::shortlist(&schools, &cfg.criteria);
    for w in &shortlist.warnings {
        log::warn!("{w}");
    }
    let pairs = match cfg.mode {
        PairingMode::Sorted => catalog::pair_schools(&shortlist.for_profit, &shortlist.public),
        PairingMode::Explicit => {
            let pick = |names: &[String]| -> Result<Vec<School>> {
                names.iter().map(|n| Ok(catalog::find(&schools, n)?.clone())).collect()
            };
            catalog::pair_explicit(&pick(&cfg.skewed)?, &pick(&cfg.public)?)?
        }
    };
    if pairs.is_empty() {
        bail!("no school pairs: the shortlist has no for-profit or no public schools");
    }
    catalog::write_pairs(&pairs, create(&ctx.out_path(PAIRS))?)?;
    let mut listed = shortlist.for_profit.clone();
    listed.extend(shortlist.public.iter().cloned());
    catalog::write_catalog(&listed, create(&ctx.out_path("shortlist.csv"))?)?;
    let mut w = csv::Writer::from_writer(create(&ctx.out_path("defacto_skew.csv"))?);
    w.write_record(["sector", "black_share"])?;
    for (sector, share) in catalog::defacto_skew(&schools)? {
        w.write_record([sector.to_string(), share.map_or(String::new(), |s| format!("{s:.4}"))])?;
    }
    w.flush()?;
    let mut manifest = ctx.manifest()?;
    ctx.hash_input(&mut manifest, &cfg.file)?;
    log::info!("{} school pairs", pairs.len());
    ctx.finish(
        "pair-schools",
        manifest,
        vec![PAIRS.into(), "shortlist.csv".into(), "defacto_skew.csv".into()],
    )
}

fn creative(cfg: &ExperimentConfig, school: &School) -> Result<AdCreative> {
    let c = match cfg.creative {
        CreativeKind::Neutral => AdCreative::neutral(school),
        CreativeKind::Realistic => {
            let image = cfg.images.get(&school.name).ok_or_else(|| {
                CliError::Config(format!("realistic creatives need experiment.images entry for {}", school.name))
            })?;
            AdCreative::realistic(school, image.clone(), Default::default())
        }
    };
    c.check().map_err(|e| CliError::Config(format!("{}: {e}", school.name)))?;
    Ok(c)
}

/// Loads pairs and audiences and builds one experiment per (pair, audience).
fn experiments(ctx: &Ctx) -> Result<(Vec<PairedExperiment>, Vec<ExperimentRecord>)> {
    let manifest = ctx.manifest()?;
    if manifest.audiences.is_empty() {
        return Err(CliError::MissingArtifact {
            name: "audience list".into(),
            path: ctx.out_path(MANIFEST),
            step: "build-audience",
        }
        .into());
    }
    let cat_cfg = ctx.section(&ctx.cfg.catalog, "catalog")?;
    let schools = read_catalog(ctx, cat_cfg)?;
    let pairs_path = ctx.require(PAIRS, "pair-schools")?;
    let names = catalog::read_pair_names(BufReader::new(File::open(&pairs_path)?))?;
    let pairs = names
        .into_iter()
        .map(|(id, f, p)| {
            SchoolPair::new(
                id,
                catalog::find(&schools, &f)?.clone(),
                catalog::find(&schools, &p)?.clone(),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = load_individuals(ctx)?;
    let dir = ctx.out_path(AUDIENCE_DIR);
    let exp_cfg = &ctx.cfg.experiment;
    let mut exps = Vec::new();
    let mut records = Vec::new();
    for name in &manifest.audiences {
        ctx.require(&format!("{AUDIENCE_DIR}/{name}.json"), "build-audience")?;
        let aud = Arc::new(AudiencePartition::load(&dir, name, &dataset)?);
        for pair in &pairs {
            let id = format!("{}-{}", pair.pair_id, name);
            let spec = |s: &School| -> Result<CampaignSpec> {
                let mut c = CampaignSpec::standard(creative(exp_cfg, s)?, aud.clone());
                c.budget_usd = exp_cfg.budget_usd;
                c.duration_hours = exp_cfg.duration_hours;
                Ok(c)
            };
            let mut e = PairedExperiment::new(id.clone(), spec(&pair.skewed_school)?, spec(&pair.public_school)?);
            let violations = experiment::validate_pairing(&e);
            if !violations.is_empty() {
                let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
                return Err(CliError::Experiment(id, text.join(", ")).into());
            }
            e.launch_time = Some(exp_cfg.launch_time);
            let ids = e.campaign_ids();
            records.push(ExperimentRecord {
                experiment_id: id,
                pair_id: pair.pair_id.clone(),
                audience: name.clone(),
                family: if aud.flipped { "flipped" } else { "original" }.into(),
                skewed_school: pair.skewed_school.name.clone(),
                public_school: pair.public_school.name.clone(),
                skewed_campaign: CampaignSlot::A,
                campaign_ids: ids.map(|c| c.0),
                trials: 0,
            });
            exps.push(e);
        }
    }
    Ok((exps, records))
}

fn simulate(ctx: &Ctx, trials: u64) -> Result<()> {
    let (exps, mut records) = experiments(ctx)?;
    let mut outputs = Vec::new();
    let options = PollOptions {
        interval_minutes: ctx.cfg.experiment.poll_interval_minutes,
        ..Default::default()
    };
    for (e, rec) in exps.into_iter().zip(records.iter_mut()) {
        let mut e = e;
        let mut sim = ctx.cfg.sim.clone();
        sim.seed = derive_seed(ctx.seed, &format!("sim:{}", e.experiment_id));
        sim.start_time = ctx.cfg.experiment.launch_time;
        let log_path = SnapshotLog::path_for(&ctx.out, &e.experiment_id);
        if log_path.exists() {
            fs::remove_file(&log_path)?;
        }
        let mut log = SnapshotLog::open(&ctx.out, &e.experiment_id)?;
        let mut client = SimulatorClient::new(sim.clone());
        let handle = experiment::launch(&mut e, &mut client)?;
        experiment::poll(&handle, &mut client, options, Some(&mut log))?;
        outputs.push(snapshot_file(&e.experiment_id));
        if trials > 0 {
            let outcomes = simulator::run_trials(&e, &sim, trials, 0.05)?;
            simulator::write_trials_csv(&outcomes, create(&ctx.out_path(&mc_file(&e.experiment_id)))?)?;
            outputs.push(mc_file(&e.experiment_id));
            rec.trials = trials;
        }
        log::info!("simulated {}", e.experiment_id);
    }
    let mut manifest = ctx.manifest()?;
    manifest.creative_kind = Some(ctx.cfg.experiment.creative);
    manifest.experiments = records;
    ctx.finish("simulate", manifest, outputs)
}

fn launch_dry_run(ctx: &Ctx, fixtures: Option<&Path>) -> Result<()> {
    let fixtures: DryRunFixtures = match fixtures {
        Some(p) => serde_json::from_reader(BufReader::new(
            File::open(p).with_context(|| format!("opening fixtures {}", p.display()))?,
        ))
        .with_context(|| format!("parsing fixtures {}", p.display()))?,
        None => DryRunFixtures {
            launch_time: Some(ctx.cfg.experiment.launch_time),
            ..Default::default()
        },
    };
    let replaying = fixtures.snapshot_log.is_some();
    let (exps, records) = experiments(ctx)?;
    let mut client = DryRunClient::new(ctx.out_path("requests"), fixtures)?;
    let options = PollOptions {
        interval_minutes: ctx.cfg.experiment.poll_interval_minutes,
        ..Default::default()
    };
    let mut outputs = Vec::new();
    for mut e in exps {
        let handle = experiment::launch(&mut e, &mut client)?;
        if replaying {
            let log_path = SnapshotLog::path_for(&ctx.out, &e.experiment_id);
            if log_path.exists() {
                fs::remove_file(&log_path)?;
            }
            let mut log = SnapshotLog::open(&ctx.out, &e.experiment_id)?;
            experiment::poll(&handle, &mut client, options, Some(&mut log))?;
            outputs.push(snapshot_file(&e.experiment_id));
        }
    }
    for p in client.written() {
        if let Ok(rel) = p.strip_prefix(&ctx.out) {
            outputs.push(rel.display().to_string());
        }
    }
    let mut manifest = ctx.manifest()?;
    manifest.creative_kind = Some(ctx.cfg.experiment.creative);
    manifest.experiments = records;
    ctx.finish("launch", manifest, outputs)
}

/// Holm decisions per family. `p` holds one p-value per experiment, in the
/// order of `records`.
fn holm_by_family(records: &[ExperimentRecord], p: &[f64], alpha: f64) -> Result<(Vec<bool>, Vec<HolmRow>)> {
    let mut families: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        families.entry(&r.family).or_default().push(i);
    }
    let mut rejected = vec![false; records.len()];
    let mut rows = Vec::new();
    for (family, idx) in families {
        let ps: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        let decision = stats::holm_correct(&ps, alpha)?;
        for (rank, step) in decision.steps.iter().enumerate() {
            let i = idx[step.index];
            rejected[i] = step.rejected;
            rows.push(HolmRow {
                family: family.to_string(),
                experiment_id: records[i].experiment_id.clone(),
                rank: rank + 1,
                p: step.p_value,
                threshold: step.threshold,
                rejected: step.rejected,
            });
        }
    }
    Ok((rejected, rows))
}

#[derive(Serialize)]
struct HolmRow {
    family: String,
    experiment_id: String,
    rank: usize,
    p: f64,
    threshold: f64,
    rejected: bool,
}

#[derive(Serialize)]
struct TrialVerdict {
    trial: u64,
    experiment_id: String,
    family: String,
    #[serde(rename = "Z")]
    z: f64,
    significant: bool,
    holm_significant: bool,
}

fn analyze(ctx: &Ctx, alpha: f64, skewed: Option<CampaignSlot>) -> Result<()> {
    let z_alpha = stats::z_critical(alpha)?;
    let manifest = ctx.manifest()?;
    let records = manifest.experiments.clone();
    if records.is_empty() {
        return Err(CliError::MissingArtifact {
            name: "experiment list".into(),
            path: ctx.out_path(MANIFEST),
            step: "simulate",
        }
        .into());
    }
    for r in &records {
        if let Some(s) = skewed {
            if s != r.skewed_campaign {
                return Err(CliError::DirectionSwitch { fixed: r.skewed_campaign }.into());
            }
        }
        ctx.require(&snapshot_file(&r.experiment_id), "simulate")?;
        ctx.require(&format!("{AUDIENCE_DIR}/{}.json", r.audience), "build-audience")?;
        if r.trials > 0 {
            ctx.require(&mc_file(&r.experiment_id), "simulate")?;
        }
    }
    let mut results = Vec::new();
    let mut fractions = Vec::new();
    for r in &records {
        let log = experiment::read_snapshot_log(&ctx.out_path(&snapshot_file(&r.experiment_id)))?;
        let meta = PartitionMeta::load(&ctx.out_path(&format!("{AUDIENCE_DIR}/{}.json", r.audience)))?;
        let map = RegionRaceMap::new(&meta.black_group, &meta.white_group)?;
        let terminal = |campaign: &str| {
            log.get(campaign)
                .and_then(|s| s.iter().rev().find(|x| x.terminal))
                .ok_or_else(|| CliError::Experiment(r.experiment_id.clone(), format!("no snapshots for campaign {campaign}")))
        };
        let (skewed_id, public_id) = match r.skewed_campaign {
            CampaignSlot::A => (&r.campaign_ids[0], &r.campaign_ids[1]),
            CampaignSlot::B => (&r.campaign_ids[1], &r.campaign_ids[0]),
        };
        let f = stats::infer_race(terminal(skewed_id)?, &map);
        let p = stats::infer_race(terminal(public_id)?, &map);
        for (label, b) in [("skewed", f), ("public", p)] {
            if b.discarded > 0 {
                log::info!("{}: {} impressions outside the audience regions discarded ({label} ad)", r.experiment_id, b.discarded);
            }
        }
        let s = stats::skew_test(&f, &p, alpha).map_err(|e| CliError::Experiment(r.experiment_id.clone(), e.to_string()))?;
        debug_assert_eq!(s.z_alpha, z_alpha);
        for (ad, school, b, ci) in [
            ("for_profit", &r.skewed_school, f, s.ci_f),
            ("public", &r.public_school, p, s.ci_p),
        ] {
            fractions.push(FractionRow {
                experiment_id: r.experiment_id.clone(),
                audience: r.audience.clone(),
                ad: ad.into(),
                school: school.clone(),
                n: b.n(),
                n_black: b.n_black,
                fraction: b.black_fraction().unwrap_or(f64::NAN),
                ci_low: ci.0,
                ci_high: ci.1,
            });
        }
        results.push(ResultRow {
            experiment_id: r.experiment_id.clone(),
            audience: r.audience.clone(),
            n_f: s.n_f,
            n_p: s.n_p,
            s_f_b: s.s_f_b,
            s_p_b: s.s_p_b,
            d: s.d,
            z: s.z,
            p: s.p_value,
            significant: s.significant,
            holm_significant: false,
        });
    }
    let ps: Vec<f64> = results.iter().map(|r| r.p).collect();
    let (holm, holm_rows) = holm_by_family(&records, &ps, alpha)?;
    for (r, h) in results.iter_mut().zip(holm) {
        r.holm_significant = h;
    }
    report::write_rows(&results, create(&ctx.out_path(RESULTS))?)?;
    report::write_rows(&fractions, create(&ctx.out_path(FRACTIONS))?)?;
    report::write_rows(&holm_rows, create(&ctx.out_path(HOLM))?)?;
    let mut outputs = vec![RESULTS.to_string(), FRACTIONS.into(), HOLM.into()];

    let mc: Vec<&ExperimentRecord> = records.iter().filter(|r| r.trials > 0).collect();
    if !mc.is_empty() {
        let (verdicts, rates) = monte_carlo_verdicts(ctx, &mc, alpha)?;
        report::write_rows(&verdicts, create(&ctx.out_path(TRIAL_VERDICTS))?)?;
        report::write_rows(&rates, create(&ctx.out_path(VERDICT_RATES))?)?;
        outputs.push(TRIAL_VERDICTS.into());
        outputs.push(VERDICT_RATES.into());
    }
    let flagged = results.iter().filter(|r| r.holm_significant).count();
    log::info!("{flagged} of {} experiments significant after Holm", results.len());
    ctx.finish("analyze", manifest, outputs)
}

/// Re-tests every Monte Carlo trial at `alpha` and applies Holm across each
/// family within the trial.
fn monte_carlo_verdicts(
    ctx: &Ctx,
    records: &[&ExperimentRecord],
    alpha: f64,
) -> Result<(Vec<TrialVerdict>, Vec<VerdictRate>)> {
    let owned: Vec<ExperimentRecord> = records.iter().map(|r| (*r).clone()).collect();
    let mut per_exp = Vec::new();
    for r in &owned {
        let path = ctx.out_path(&mc_file(&r.experiment_id));
        let rows = simulator::read_trials_csv(BufReader::new(File::open(&path)?))
            .with_context(|| format!("reading {}", path.display()))?;
        if rows.len() as u64 != r.trials {
            bail!("{}: expected {} trials, found {}", path.display(), r.trials, rows.len());
        }
        let tests: Vec<Option<stats::SkewResult>> = rows
            .iter()
            .map(|row| {
                let (f, p) = row.breakdowns();
                let f = if r.skewed_campaign == CampaignSlot::A { (f, p) } else { (p, f) };
                stats::skew_test(&f.0, &f.1, alpha).ok()
            })
            .collect();
        per_exp.push(tests);
    }
    let trials = owned.iter().map(|r| r.trials).min().unwrap_or(0);
    let mut verdicts = Vec::new();
    let mut counts = vec![(0u64, 0u64); owned.len()];
    for t in 0..trials as usize {
        let ps: Vec<f64> = per_exp
            .iter()
            .map(|tests| tests[t].as_ref().map_or(1.0, |s| s.p_value))
            .collect();
        let (holm, _) = holm_by_family(&owned, &ps, alpha)?;
        for (i, r) in owned.iter().enumerate() {
            let test = per_exp[i][t].as_ref();
            let sig = test.is_some_and(|s| s.significant);
            counts[i].0 += u64::from(sig);
            counts[i].1 += u64::from(holm[i]);
            verdicts.push(TrialVerdict {
                trial: t as u64,
                experiment_id: r.experiment_id.clone(),
                family: r.family.clone(),
                z: test.map_or(f64::NAN, |s| s.z),
                significant: sig,
                holm_significant: holm[i],
            });
        }
    }
    let rates = owned
        .iter()
        .zip(counts)
        .map(|(r, (sig, holm))| VerdictRate {
            experiment_id: r.experiment_id.clone(),
            family: r.family.clone(),
            trials,
            significant_rate: sig as f64 / trials.max(1) as f64,
            holm_rate: holm as f64 / trials.max(1) as f64,
        })
        .collect();
    Ok((verdicts, rates))
}

fn report(ctx: &Ctx, alpha: f64) -> Result<()> {
    let z_alpha = stats::z_critical(alpha)?;
    let manifest = ctx.manifest()?;
    let pairs_path = ctx.require(PAIRS, "pair-schools")?;
    let pairs = catalog::read_pair_names(BufReader::new(File::open(&pairs_path)?))?;
    let mut outputs = Vec::new();
    fs::write(ctx.out_path("pairs_table.md"), report::pairs_table(&pairs))?;
    outputs.push("pairs_table.md".to_string());

    let results: Vec<ResultRow> = if manifest.experiments.is_empty() {
        Vec::new()
    } else {
        let path = ctx.require(RESULTS, "analyze")?;
        report::read_rows(BufReader::new(File::open(&path)?))?
    };
    let rates: Vec<VerdictRate> = match ctx.out_path(VERDICT_RATES) {
        p if p.exists() && manifest.experiments.iter().any(|r| r.trials > 0) => {
            report::read_rows(BufReader::new(File::open(&p)?))?
        }
        _ => Vec::new(),
    };
    if !results.is_empty() {
        let path = ctx.require(FRACTIONS, "analyze")?;
        let fractions: Vec<FractionRow> = report::read_rows(BufReader::new(File::open(&path)?))?;
        let mut by_exp: BTreeMap<&str, Vec<FractionRow>> = BTreeMap::new();
        for f in fractions {
            let key = results
                .iter()
                .find(|r| r.experiment_id == f.experiment_id)
                .map(|r| r.experiment_id.as_str())
                .ok_or_else(|| anyhow::anyhow!("{FRACTIONS} lists unknown experiment {}", f.experiment_id))?;
            by_exp.entry(key).or_default().push(f);
        }
        for (id, rows) in &by_exp {
            let name = format!("plots/fractions_{id}.svg");
            write_text(&ctx.out_path(&name), &report::fraction_plot(id, rows))?;
            outputs.push(name);
        }
        let family_of: BTreeMap<&str, &str> = manifest
            .experiments
            .iter()
            .map(|r| (r.experiment_id.as_str(), r.family.as_str()))
            .collect();
        let families: BTreeSet<&str> = family_of.values().copied().collect();
        for family in families {
            let rows: Vec<&ResultRow> = results
                .iter()
                .filter(|r| family_of.get(r.experiment_id.as_str()) == Some(&family))
                .collect();
            let name = format!("plots/z_{family}.svg");
            write_text(&ctx.out_path(&name), &report::z_chart(family, &rows, z_alpha))?;
            outputs.push(name);
        }
    }
    fs::write(
        ctx.out_path("report.md"),
        report::report_markdown(&results, &pairs, &rates, alpha),
    )?;
    outputs.push("report.md".into());
    ctx.finish("report", manifest, outputs)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
