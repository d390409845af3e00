//! Batch entry points behind the `prefrank` binary.
//!
//! Exit codes: 0 on success, 1 on runtime or transport failure, 2 on input
//! or validation failure. Every file written is JSON or JSONL with keys in a
//! fixed order, so repeated runs over the same inputs and `--seed` produce
//! byte-identical output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::crops::{self, filter_boxes, CropError, CropSet, DetectionFile, FilterConfig};
use crate::dataset::{self, DatasetError, DatasetService, GroupRecord, ServiceConfig};
use crate::gateway::{
    CandidateEvaluation, CandidateInput, Gateway, GatewayError, GroupInput, HttpBackend, MockConfig, MockScorer,
    ScoreBackend, ScorerConfig, ScoringMode,
};
use crate::jsonl::{self, JsonlError};
use crate::ranking::{
    metrics_report, scores_to_ranks, AnnotatorRanking, DeviationBasis, RankVector, RankingError,
};
use crate::reward::{group_advantages, rank_rewards, GroupRollout, LabelMatrix, RewardConfig, RewardError, ScoreDistribution};
use crate::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input files, arguments or configuration (exit code 2).
    #[error("{0}")]
    Input(String),
    /// Failure while doing the work (exit code 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn input(msg: impl std::fmt::Display) -> CliError {
    CliError::Input(msg.to_string())
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        input(e)
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        input(e)
    }
}

impl From<RankingError> for CliError {
    fn from(e: RankingError) -> Self {
        input(e)
    }
}

impl From<RewardError> for CliError {
    fn from(e: RewardError) -> Self {
        input(e)
    }
}

impl From<CropError> for CliError {
    fn from(e: CropError) -> Self {
        input(e)
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidInput(_) | GatewayError::Crop(_) | GatewayError::Reward(_) => input(e),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } | DatasetError::Corrupt { .. } => CliError::Runtime(e.to_string()),
            _ => input(e),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Settings file passed with `--config`. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub scorer: ScorerConfig,
    pub filter: FilterConfig,
    pub service: ServiceConfig,
    pub mock: MockConfig,
}

#[derive(Debug, Parser)]
#[command(name = "prefrank", version, about = "Preference-ranking rewards and evaluation for super-resolution")]
pub struct Cli {
    /// Settings file (JSON) with `scorer`, `filter`, `service` and `mock` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Reward hyperparameter file (JSON).
    #[arg(long, global = true)]
    pub reward_config: Option<PathBuf>,
    /// Seed for every source of randomness (mock jitter, display shuffles).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Agreement, Recall@1 and Filter@1 of predicted rankings.
    EvalMetrics(EvalMetricsArgs),
    /// Score candidate groups with global and crop requests.
    Score(ScoreArgs),
    /// Rank reward for every (candidate, rollout).
    RankReward(RankRewardArgs),
    /// Group-normalized, clipped advantages.
    Advantages(AdvantagesArgs),
    /// Filter detections into a crop set.
    Crops(CropsArgs),
    /// Ingest group records (or re-import an export) into a dataset store.
    DatasetIngest(DatasetIngestArgs),
    /// Export finalized groups as JSONL.
    DatasetExport(DatasetExportArgs),
    /// Run the annotation REST API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct EvalMetricsArgs {
    /// Predictions JSONL: `{"group_id", "ranks"}` or `{"group_id", "scores"}`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth JSONL: `{"group_id", "ranks"}`.
    #[arg(long)]
    pub gt: PathBuf,
    /// Per-annotator rankings JSONL: `{"group_id", "annotator_id", "ranks"}`.
    #[arg(long)]
    pub annotators: Option<PathBuf>,
    /// Reference used for per-annotator agreement spread.
    #[arg(long, value_enum, default_value = "raw")]
    pub basis: BasisArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum BasisArg {
    Raw,
    LeaveOneOut,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Manifest JSONL of groups; relative paths resolve against its directory.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Rollouts per region (defaults to the reward config's `k_rollouts`).
    #[arg(short = 'k', long)]
    pub k: Option<u32>,
    #[arg(long, default_value = "think")]
    pub mode: ScoringMode,
    /// Use the built-in mock scorer configured by the `mock` config section.
    #[arg(long)]
    pub mock: bool,
    /// Use the mock scorer with settings from this JSON file.
    #[arg(long)]
    pub mock_config: Option<PathBuf>,
    /// Score the global image only.
    #[arg(long)]
    pub no_crops: bool,
    /// Write every wire request to this JSONL file.
    #[arg(long)]
    pub dump_requests: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankRewardArgs {
    /// JSONL `{"group_id", "rollouts": [[score; K]; G]}`.
    #[arg(long)]
    pub rollouts: PathBuf,
    /// JSONL `{"group_id", "ranks"}` or `{"group_id", "labels"}`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdvantagesArgs {
    /// JSONL `{"group_id", "rewards": [..]}`.
    #[arg(long)]
    pub rewards: PathBuf,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CropsArgs {
    /// Image the detections refer to; must match the size in the file.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Directory for PNG crops (requires `--image`).
    #[arg(long)]
    pub emit_crops: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatasetIngestArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// JSONL of group records.
    #[arg(long)]
    pub records: PathBuf,
    /// Treat `--records` as a previous export and import finalized groups.
    #[arg(long)]
    pub import: bool,
}

#[derive(Debug, Args)]
pub struct DatasetExportArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut config: CliConfig = match &cli.config {
        Some(p) => crate::load_json(p)?,
        None => CliConfig::default(),
    };
    config.scorer.apply_env(|k| std::env::var(k).ok())?;
    config.filter.validate()?;
    let reward = match &cli.reward_config {
        Some(p) => RewardConfig::load(p)?,
        None => RewardConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.mock.seed = seed;
        config.service.seed = seed;
    }
    match cli.command {
        Command::EvalMetrics(a) => eval_metrics(&a),
        Command::Score(a) => score(&a, &config, &reward, cli.seed),
        Command::RankReward(a) => rank_reward(&a, &reward),
        Command::Advantages(a) => advantages(&a, &reward),
        Command::Crops(a) => crops_cmd(&a, &config.filter),
        Command::DatasetIngest(a) => dataset_ingest(&a, &config.service),
        Command::DatasetExport(a) => dataset_export(&a, &config.service),
        Command::Serve(a) => serve(&a, &config.service),
    }
}

fn write_output(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, body).map_err(|e| CliError::Runtime(format!("writing {}: {e}", p.display()))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn to_json_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("outputs serialize");
    s.push('\n');
    s
}

/// Indexes records by group id, rejecting duplicates.
fn by_group<T>(records: Vec<T>, id: impl Fn(&T) -> &str, what: &str) -> Result<BTreeMap<String, T>> {
    let mut map = BTreeMap::new();
    for r in records {
        let key = id(&r).to_string();
        if map.insert(key.clone(), r).is_some() {
            return Err(input(format!("duplicate group_id {key:?} in {what}")));
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredRecord {
    pub group_id: String,
    #[serde(default)]
    pub ranks: Option<RankVector>,
    #[serde(default)]
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankRecord {
    pub group_id: String,
    pub ranks: RankVector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorRecord {
    pub group_id: String,
    pub annotator_id: String,
    pub ranks: RankVector,
}

fn eval_metrics(a: &EvalMetricsArgs) -> Result<()> {
    let pred = by_group(jsonl::read_jsonl::<PredRecord>(&a.pred)?, |r| &r.group_id, "predictions")?;
    let gt: Vec<RankRecord> = jsonl::read_jsonl(&a.gt)?;
    let gt_index = by_group(gt.clone(), |r| &r.group_id, "ground truth")?;
    if let Some(extra) = pred.keys().find(|k| !gt_index.contains_key(*k)) {
        return Err(input(format!("prediction group {extra:?} has no ground truth")));
    }
    let mut pred_ranks = Vec::with_capacity(gt.len());
    let mut gt_ranks = Vec::with_capacity(gt.len());
    let mut position = BTreeMap::new();
    for (i, g) in gt.iter().enumerate() {
        let p = pred
            .get(&g.group_id)
            .ok_or_else(|| input(format!("ground-truth group {:?} has no prediction", g.group_id)))?;
        let ranks = match (&p.ranks, &p.scores) {
            (Some(r), None) => r.clone(),
            (None, Some(s)) => scores_to_ranks(s)?,
            _ => {
                return Err(input(format!(
                    "prediction for {:?} must carry exactly one of ranks or scores",
                    g.group_id
                )))
            }
        };
        pred_ranks.push(ranks);
        gt_ranks.push(g.ranks.clone());
        position.insert(g.group_id.clone(), i);
    }
    let annotators = match &a.annotators {
        Some(p) => jsonl::read_jsonl::<AnnotatorRecord>(p)?
            .into_iter()
            .map(|r| {
                let group = *position
                    .get(&r.group_id)
                    .ok_or_else(|| input(format!("annotator ranking for unknown group {:?}", r.group_id)))?;
                Ok(AnnotatorRanking {
                    annotator_id: r.annotator_id,
                    group,
                    ranks: r.ranks,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let basis = match a.basis {
        BasisArg::Raw => DeviationBasis::RawAnnotator,
        BasisArg::LeaveOneOut => DeviationBasis::LeaveOneOut,
    };
    let report = metrics_report(&pred_ranks, &gt_ranks, &annotators, basis)?;
    write_output(a.out.as_deref(), &to_json_line(&report))
}

/// One group of the scoring manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestGroup {
    pub group_id: String,
    pub lr_path: String,
    pub candidates: Vec<ManifestCandidate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestCandidate {
    pub id: String,
    pub path: String,
    /// Detection file for crop selection.
    #[serde(default)]
    pub detections: Option<String>,
}

/// One output line of `score`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub group_id: String,
    pub candidate_id: String,
    /// Mean of the fused per-rollout scores.
    pub fused_score: f64,
    #[serde(flatten)]
    pub evaluation: CandidateEvaluation,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_relative() {
        base.join(path)
    } else {
        path.to_path_buf()
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(format!("starting async runtime: {e}")))
}

fn load_group(base: &Path, g: &ManifestGroup, no_crops: bool, filter: &FilterConfig) -> Result<GroupInput> {
    let lr = Arc::new(crops::load_image(&resolve(base, &g.lr_path))?);
    let candidates = g
        .candidates
        .iter()
        .map(|c| {
            let hr = crops::load_image(&resolve(base, &c.path))?;
            let crops = if no_crops {
                CropSet::global_only(hr.width(), hr.height())
            } else {
                let det_path = c.detections.as_deref().ok_or_else(|| {
                    input(format!(
                        "candidate {} of group {} has no detections file (use --no-crops to skip crops)",
                        c.id, g.group_id
                    ))
                })?;
                let file = DetectionFile::load(&resolve(base, det_path))?;
                if (file.width, file.height) != (hr.width(), hr.height()) {
                    return Err(input(format!(
                        "detections for {} are for {}x{}, image is {}x{}",
                        c.id,
                        file.width,
                        file.height,
                        hr.width(),
                        hr.height()
                    )));
                }
                filter_boxes(&file.prepared()?, hr.width(), hr.height(), filter)?
            };
            Ok(CandidateInput {
                id: c.id.clone(),
                hr: Arc::new(hr),
                crops,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupInput {
        group_id: g.group_id.clone(),
        lr,
        candidates,
    })
}

fn score(a: &ScoreArgs, config: &CliConfig, reward: &RewardConfig, seed: Option<u64>) -> Result<()> {
    let manifest: Vec<ManifestGroup> = jsonl::read_jsonl(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let k = a.k.unwrap_or(reward.k_rollouts as u32);
    if k == 0 {
        return Err(input("-k must be at least 1"));
    }
    let backend: Arc<dyn ScoreBackend> = match (&a.mock_config, a.mock) {
        (Some(p), _) => {
            let mut mock: MockConfig = crate::load_json(p)?;
            if let Some(seed) = seed {
                mock.seed = seed;
            }
            Arc::new(MockScorer::new(mock))
        }
        (None, true) => Arc::new(MockScorer::new(config.mock.clone())),
        (None, false) => Arc::new(HttpBackend::new(&config.scorer)?),
    };
    let mut gateway = Gateway::new(backend, &config.scorer);
    if a.dump_requests.is_some() {
        gateway = gateway.recording();
    }
    let groups = manifest
        .iter()
        .map(|g| load_group(base, g, a.no_crops, &config.filter))
        .collect::<Result<Vec<_>>>()?;
    let rt = runtime()?;
    let mut records = Vec::new();
    let mut unscorable = Vec::new();
    for g in &groups {
        match rt.block_on(gateway.evaluate_group(g, k, a.mode)) {
            Ok(eval) => records.extend(eval.candidates.into_iter().map(|c| ScoreRecord {
                group_id: eval.group_id.clone(),
                candidate_id: c.candidate_id.clone(),
                fused_score: c.fused.mean(),
                evaluation: c,
            })),
            Err(e @ (GatewayError::UnscorableRegion { .. } | GatewayError::UnscorableCandidate { .. })) => {
                unscorable.push(format!("{}: {e}", g.group_id));
            }
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(dump) = &a.dump_requests {
        jsonl::write_jsonl(dump, &gateway.recorded_requests()).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let body = jsonl::to_jsonl(&records);
    write_output(a.out.as_deref(), &body)?;
    if unscorable.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("unscorable groups:\n  {}", unscorable.join("\n  "))))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutRecord {
    pub group_id: String,
    /// `rollouts[i][k]`: score of candidate `i` in rollout `k`.
    pub rollouts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub group_id: String,
    #[serde(default)]
    pub ranks: Option<RankVector>,
    #[serde(default)]
    pub labels: Option<LabelMatrix>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankRewardRecord {
    pub group_id: String,
    /// `rewards[i][k]` for candidate `i`, rollout `k`.
    pub rewards: Vec<Vec<f64>>,
}

fn rank_reward(a: &RankRewardArgs, reward: &RewardConfig) -> Result<()> {
    let gamma = a.gamma.unwrap_or(reward.gamma);
    let rollouts: Vec<RolloutRecord> = jsonl::read_jsonl(&a.rollouts)?;
    let labels = by_group(jsonl::read_jsonl::<LabelRecord>(&a.labels)?, |r| &r.group_id, "labels")?;
    let mut out = Vec::with_capacity(rollouts.len());
    for r in &rollouts {
        let l = labels
            .get(&r.group_id)
            .ok_or_else(|| input(format!("group {:?} has no labels", r.group_id)))?;
        let matrix = match (&l.ranks, &l.labels) {
            (Some(ranks), None) => LabelMatrix::from_ranks(ranks),
            (None, Some(m)) => m.clone(),
            _ => {
                return Err(input(format!(
                    "labels for {:?} must carry exactly one of ranks or labels",
                    r.group_id
                )))
            }
        };
        if let Some(k0) = r.rollouts.first().map(Vec::len) {
            if let Some(bad) = r.rollouts.iter().position(|c| c.len() != k0) {
                return Err(input(format!(
                    "group {:?}: candidate {bad} has {} rollouts, candidate 0 has {k0}",
                    r.group_id,
                    r.rollouts[bad].len()
                )));
            }
        }
        let dists = r
            .rollouts
            .iter()
            .map(|s| ScoreDistribution::with_convention(s.clone(), reward.variance))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let group = GroupRollout::new(dists, matrix, gamma)
            .map_err(|e| input(format!("group {:?}: {e}", r.group_id)))?;
        out.push(RankRewardRecord {
            group_id: r.group_id.clone(),
            rewards: rank_rewards(&group)?,
        });
    }
    write_output(a.out.as_deref(), &jsonl::to_jsonl(&out))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardRecord {
    pub group_id: String,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub group_id: String,
    pub advantages: Vec<f64>,
}

fn advantages(a: &AdvantagesArgs, reward: &RewardConfig) -> Result<()> {
    let clip = a.clip.unwrap_or(reward.clip_max);
    let eps = a.eps.unwrap_or(reward.eps);
    let records: Vec<RewardRecord> = jsonl::read_jsonl(&a.rewards)?;
    let out = records
        .iter()
        .map(|r| {
            Ok(AdvantageRecord {
                group_id: r.group_id.clone(),
                advantages: group_advantages(&r.rewards, clip, eps)
                    .map_err(|e| input(format!("group {:?}: {e}", r.group_id)))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_output(a.out.as_deref(), &jsonl::to_jsonl(&out))
}

fn crops_cmd(a: &CropsArgs, filter: &FilterConfig) -> Result<()> {
    let mut filter = filter.clone();
    if let Some(k) = a.k_max {
        filter.k_max = k;
    }
    filter.validate()?;
    let file = DetectionFile::load(&a.detections)?;
    let image = a.image.as_deref().map(crops::load_image).transpose()?;
    let (w, h) = match &image {
        Some(img) => {
            if (img.width(), img.height()) != (file.width, file.height) {
                return Err(input(format!(
                    "detections are for {}x{}, image is {}x{}",
                    file.width,
                    file.height,
                    img.width(),
                    img.height()
                )));
            }
            (img.width(), img.height())
        }
        None => (file.width, file.height),
    };
    let set = filter_boxes(&file.prepared()?, w, h, &filter)?;
    if let Some(dir) = &a.emit_crops {
        let img = image
            .as_ref()
            .ok_or_else(|| input("--emit-crops needs --image"))?;
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;
        let rects = set
            .crops
            .iter()
            .map(|c| crops::PixelRect::covering(&c.bbox, w, h))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        for (i, crop) in crops::crop_regions(img, &rects)?.iter().enumerate() {
            let path = dir.join(format!("crop_{i}.png"));
            crop.save(&path)
                .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
        }
    }
    write_output(a.out.as_deref(), &to_json_line(&set))
}

fn open_service(data_dir: &Path, config: &ServiceConfig) -> Result<DatasetService> {
    Ok(DatasetService::open(data_dir, config.clone())?)
}

fn dataset_ingest(a: &DatasetIngestArgs, config: &ServiceConfig) -> Result<()> {
    let svc = open_service(&a.data_dir, config)?;
    let n = if a.import {
        svc.import_dataset(&a.records)?
    } else {
        let records: Vec<GroupRecord> = jsonl::read_jsonl(&a.records)?;
        let n = records.len();
        for r in records {
            svc.ingest_group(r)?;
        }
        n
    };
    println!("{n}");
    Ok(())
}

fn dataset_export(a: &DatasetExportArgs, config: &ServiceConfig) -> Result<()> {
    let svc = open_service(&a.data_dir, config)?;
    let n = svc.export_dataset(&a.out)?;
    println!("{n}");
    Ok(())
}

fn serve(a: &ServeArgs, config: &ServiceConfig) -> Result<()> {
    let svc = Arc::new(open_service(&a.data_dir, config)?);
    runtime()?
        .block_on(dataset::api::serve(svc, a.addr))
        .map_err(|e| CliError::Runtime(format!("serving on {}: {e}", a.addr)))
}
