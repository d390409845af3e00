//! Access to external scorers.
//!
//! A [`Gateway`] turns (LR, HR, crops) triples into score distributions. The
//! transport is pluggable through [`ScoreBackend`]: [`HttpBackend`] speaks the
//! JSON `POST /score` protocol, [`MockScorer`] answers deterministically from
//! image digests. Region requests are issued concurrently up to
//! `max_in_flight`, and results are always ordered by (candidate, region,
//! rollout) regardless of completion order.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use futures::future::BoxFuture;
use futures::stream::{self, StreamExt};
use image::DynamicImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crops::{self, map_box_to_lr, CropError, CropSet, PixelRect};
use crate::reward::{
    format_reward, FormatVerdict, GroupRollout, LabelMatrix, RewardError, ScoreDistribution, THINKING_OPEN,
};

/// Evaluation instruction sent with every MLLM request.
pub const EVALUATION_PROMPT: &str = "You are a highly discerning expert in image quality assessment.
Your task is to evaluate a super-resolution (SR) output by comparing it with the original low-resolution reference.
You will be given two images: the first (LR) shows the original scene, and the second (HR) is the super-resolution result.
Assume the HR image may contain problematic regions.
Carefully inspect both images and identify any areas in the HR image that look unnatural or distorted (e.g., distorted regions or warped lines, unrealistic textures, unreasonable objects) or semantically inconsistent with the LR image (e.g., missing, added, or altered objects, inconsistent texture).
For each problematic region, state its approximate location in the HR image (e.g., 'top left', 'center lower') and briefly explain why it appears incorrect.
After inspection, assign an overall quality score from 1.00 to 5.00, with two decimal places (e.g., 1.31, 2.77, 4.53).
First output your reasoning in <thinking>...</thinking> tags (a brief summary of observed defects and semantic issues).
Then output only one numeric score in <answer>...</answer> tags (no extra text).";

/// Assistant-side prefill that skips the reasoning phase.
pub const NO_THINK_PREFILL: &str = "<thinking>...</thinking><answer>";

pub const ENV_SCORER_URL: &str = "PREFRANK_SCORER_URL";
pub const ENV_SCORER_TIMEOUT_MS: &str = "PREFRANK_SCORER_TIMEOUT_MS";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unscorable region {region} of candidate {candidate}: every rollout was malformed")]
    UnscorableRegion { candidate: String, region: String },
    #[error("unscorable candidate {candidate}: no rollout is well-formed in every region")]
    UnscorableCandidate { candidate: String },
    #[error("image encoding failed: {0}")]
    Encode(String),
    #[error(transparent)]
    Crop(#[from] CropError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

pub type Result<T> = std::result::Result<T, GatewayError>;

fn invalid(msg: impl Into<String>) -> GatewayError {
    GatewayError::InvalidInput(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    #[default]
    Think,
    NoThink,
}

impl std::str::FromStr for ScoringMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "think" => Ok(ScoringMode::Think),
            "no_think" | "no-think" => Ok(ScoringMode::NoThink),
            other => Err(format!("unknown scoring mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub prompt: String,
    pub prefill: Option<String>,
}

pub fn build_prompt(mode: ScoringMode) -> PromptPayload {
    build_prompt_with(EVALUATION_PROMPT, mode)
}

pub fn build_prompt_with(prompt: &str, mode: ScoringMode) -> PromptPayload {
    PromptPayload {
        prompt: prompt.to_string(),
        prefill: (mode == ScoringMode::NoThink).then(|| NO_THINK_PREFILL.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Mllm,
    Lpips,
    Deqa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageRole {
    Lr,
    Hr,
    Ref,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub role: ImageRole,
    /// Base64-encoded PNG.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub kind: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefill: Option<String>,
    pub images: Vec<WireImage>,
    pub rollouts: u32,
    #[serde(default)]
    pub decode: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub outputs: Vec<String>,
}

/// One scoring call: K rollouts over an ordered image list.
#[derive(Debug, Clone)]
pub struct ScoreRequest {
    pub kind: ScorerKind,
    pub lr_image: Option<Arc<DynamicImage>>,
    pub hr_image: Arc<DynamicImage>,
    pub reference_image: Option<Arc<DynamicImage>>,
    pub prompt: Option<String>,
    pub mode: ScoringMode,
    pub rollouts: u32,
    pub decode_params: serde_json::Map<String, serde_json::Value>,
}

impl ScoreRequest {
    pub fn mllm(lr: Arc<DynamicImage>, hr: Arc<DynamicImage>, mode: ScoringMode, rollouts: u32) -> Self {
        ScoreRequest {
            kind: ScorerKind::Mllm,
            lr_image: Some(lr),
            hr_image: hr,
            reference_image: None,
            prompt: Some(EVALUATION_PROMPT.to_string()),
            mode,
            rollouts,
            decode_params: Default::default(),
        }
    }

    /// Numeric scorer request (`lpips` needs a reference, `deqa` does not).
    pub fn numeric(kind: ScorerKind, hr: Arc<DynamicImage>, reference: Option<Arc<DynamicImage>>) -> Self {
        ScoreRequest {
            kind,
            lr_image: None,
            hr_image: hr,
            reference_image: reference,
            prompt: None,
            mode: ScoringMode::Think,
            rollouts: 1,
            decode_params: Default::default(),
        }
    }

    /// Images in wire order: LR first, then HR, then any reference.
    pub fn ordered_images(&self) -> Vec<(ImageRole, &Arc<DynamicImage>)> {
        let mut out = Vec::with_capacity(3);
        if let Some(lr) = &self.lr_image {
            out.push((ImageRole::Lr, lr));
        }
        out.push((ImageRole::Hr, &self.hr_image));
        if let Some(r) = &self.reference_image {
            out.push((ImageRole::Ref, r));
        }
        out
    }

    pub fn to_wire(&self) -> Result<WireRequest> {
        let images = self
            .ordered_images()
            .into_iter()
            .map(|(role, img)| {
                Ok(WireImage {
                    role,
                    data: base64::engine::general_purpose::STANDARD.encode(encode_png(img)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (prompt, prefill) = match self.kind {
            ScorerKind::Mllm => {
                let payload = build_prompt_with(self.prompt.as_deref().unwrap_or(EVALUATION_PROMPT), self.mode);
                (Some(payload.prompt), payload.prefill)
            }
            _ => (None, None),
        };
        Ok(WireRequest {
            kind: self.kind,
            prompt,
            prefill,
            images,
            rollouts: self.rollouts,
            decode: self.decode_params.clone(),
        })
    }
}

pub fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)
        .map_err(|e| GatewayError::Encode(e.to_string()))?;
    Ok(buf)
}

pub fn decode_png_base64(data: &str) -> Result<DynamicImage> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(data)
        .map_err(|e| GatewayError::Protocol(format!("bad base64 image: {e}")))?;
    image::load_from_memory(&bytes).map_err(|e| GatewayError::Protocol(format!("bad image payload: {e}")))
}

/// SHA-256 over dimensions and RGBA8 pixels, independent of file encoding.
pub fn image_digest(img: &DynamicImage) -> String {
    let rgba = img.to_rgba8();
    let mut h = Sha256::new();
    h.update(rgba.width().to_le_bytes());
    h.update(rgba.height().to_le_bytes());
    h.update(rgba.as_raw());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerResponse {
    pub raw_text: String,
    pub verdict: FormatVerdict,
}

/// Format verdict for a raw MLLM output. In no-think mode the scorer only
/// continues after the prefill, so the prefill is restored before checking.
pub fn verdict_for(mode: ScoringMode, raw: &str) -> FormatVerdict {
    if mode == ScoringMode::NoThink && !raw.contains(THINKING_OPEN) {
        format_reward(&format!("{NO_THINK_PREFILL}{raw}"))
    } else {
        format_reward(raw)
    }
}

/// Bare numeric output of the perceptual and quality scorers.
pub fn parse_numeric_output(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Transport behind the gateway; returns one raw output per rollout.
pub trait ScoreBackend: Send + Sync {
    fn complete<'a>(&'a self, request: &'a ScoreRequest) -> BoxFuture<'a, Result<Vec<String>>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    /// Base URL; requests go to `{url}/score`.
    pub url: Option<String>,
    pub timeout_ms: u64,
    /// Retries after the first attempt.
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    /// Prompt used for global requests, replacing the built-in text.
    pub global_prompt: Option<String>,
    /// Prompt used for crop requests; falls back to the global prompt.
    pub crop_prompt: Option<String>,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            url: None,
            timeout_ms: 60_000,
            retries: 2,
            backoff_ms: 200,
            max_in_flight: 4,
            global_prompt: None,
            crop_prompt: None,
        }
    }
}

impl ScorerConfig {
    /// Applies `PREFRANK_SCORER_URL` / `PREFRANK_SCORER_TIMEOUT_MS` overrides.
    pub fn apply_env<F: Fn(&str) -> Option<String>>(&mut self, lookup: F) -> Result<()> {
        if let Some(url) = lookup(ENV_SCORER_URL).filter(|u| !u.is_empty()) {
            self.url = Some(url);
        }
        if let Some(t) = lookup(ENV_SCORER_TIMEOUT_MS) {
            self.timeout_ms = t
                .trim()
                .parse()
                .map_err(|_| invalid(format!("{ENV_SCORER_TIMEOUT_MS}={t:?} is not an integer")))?;
        }
        Ok(())
    }

    pub fn from_process_env(mut self) -> Result<Self> {
        self.apply_env(|k| std::env::var(k).ok())?;
        Ok(self)
    }
}

/// HTTP transport with bounded retries on connection failures, timeouts,
/// 429 and 5xx responses.
pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    retries: u32,
    backoff: Duration,
}

impl HttpBackend {
    pub fn new(config: &ScorerConfig) -> Result<Self> {
        let base = config
            .url
            .as_deref()
            .ok_or_else(|| invalid(format!("no scorer URL configured (set {ENV_SCORER_URL})")))?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| invalid(format!("building HTTP client: {e}")))?;
        Ok(HttpBackend {
            client,
            endpoint: format!("{}/score", base.trim_end_matches('/')),
            retries: config.retries,
            backoff: Duration::from_millis(config.backoff_ms),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    async fn post(&self, wire: &WireRequest) -> Result<WireResponse> {
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.client.post(&self.endpoint).json(wire).send().await {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let body = resp
                            .bytes()
                            .await
                            .map_err(|e| GatewayError::Protocol(format!("reading body: {e}")))?;
                        let parsed: WireResponse = serde_json::from_slice(&body)
                            .map_err(|e| GatewayError::Protocol(format!("malformed response body: {e}")))?;
                        return Ok(parsed);
                    }
                    if status.is_server_error() || status.as_u16() == 429 {
                        last = format!("HTTP {status}");
                    } else {
                        return Err(GatewayError::Protocol(format!("scorer rejected request: HTTP {status}")));
                    }
                }
                Err(e) => last = e.to_string(),
            }
            tracing::debug!(attempt, error = %last, "scorer request failed");
            if attempt < attempts {
                tokio::time::sleep(self.backoff * attempt).await;
            }
        }
        Err(GatewayError::Transport {
            attempts,
            message: last,
        })
    }
}

impl ScoreBackend for HttpBackend {
    fn complete<'a>(&'a self, request: &'a ScoreRequest) -> BoxFuture<'a, Result<Vec<String>>> {
        Box::pin(async move {
            let wire = request.to_wire()?;
            Ok(self.post(&wire).await?.outputs)
        })
    }
}

/// Deterministic stand-in scorer keyed by image digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub default_score: f64,
    /// MLLM score per HR image digest.
    pub scores: BTreeMap<String, f64>,
    /// Standard deviation of seeded Gaussian jitter on MLLM scores.
    pub jitter_std: f64,
    pub seed: u64,
    pub default_lpips: f64,
    pub lpips: BTreeMap<String, f64>,
    pub default_deqa: f64,
    pub deqa: BTreeMap<String, f64>,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            default_score: 3.0,
            scores: BTreeMap::new(),
            jitter_std: 0.0,
            seed: 0,
            default_lpips: 0.2,
            lpips: BTreeMap::new(),
            default_deqa: 3.5,
            deqa: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Default)]
pub struct MockScorer {
    config: MockConfig,
    calls: AtomicUsize,
}

impl MockScorer {
    pub fn new(config: MockConfig) -> Self {
        MockScorer {
            config,
            calls: AtomicUsize::new(0),
        }
    }

    /// Mock returning `score` for every image.
    pub fn constant(score: f64) -> Self {
        Self::new(MockConfig {
            default_score: score,
            ..MockConfig::default()
        })
    }

    pub fn with_score(mut self, image: &DynamicImage, score: f64) -> Self {
        self.config.scores.insert(image_digest(image), score);
        self
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Raw outputs for a request; pure function of config and images.
    pub fn outputs(&self, request: &ScoreRequest) -> Vec<String> {
        let digest = image_digest(&request.hr_image);
        match request.kind {
            ScorerKind::Mllm => {
                let base = self
                    .config
                    .scores
                    .get(&digest)
                    .copied()
                    .unwrap_or(self.config.default_score);
                let mut rng = ChaCha8Rng::from_seed(self.seed_for(&digest));
                let noise = (self.config.jitter_std > 0.0)
                    .then(|| Normal::new(0.0, self.config.jitter_std).expect("finite std"));
                (0..request.rollouts)
                    .map(|_| {
                        let s = noise.as_ref().map_or(base, |n| base + n.sample(&mut rng));
                        let s = s.clamp(1.0, 5.0);
                        match request.mode {
                            ScoringMode::Think => {
                                format!("<thinking>mock review of {}</thinking><answer>{s:.2}</answer>", &digest[..8])
                            }
                            ScoringMode::NoThink => format!("{s:.2}</answer>"),
                        }
                    })
                    .collect()
            }
            ScorerKind::Lpips => {
                let v = self.config.lpips.get(&digest).copied().unwrap_or(self.config.default_lpips);
                vec![format!("{v:.4}"); request.rollouts as usize]
            }
            ScorerKind::Deqa => {
                let v = self.config.deqa.get(&digest).copied().unwrap_or(self.config.default_deqa);
                vec![format!("{v:.4}"); request.rollouts as usize]
            }
        }
    }

    fn seed_for(&self, digest: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        h.update(digest.as_bytes());
        h.finalize().into()
    }
}

impl ScoreBackend for MockScorer {
    fn complete<'a>(&'a self, request: &'a ScoreRequest) -> BoxFuture<'a, Result<Vec<String>>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let out = self.outputs(request);
        Box::pin(async move { Ok(out) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEvaluation {
    /// `"global"` or `"crop-{i}"`.
    pub region: String,
    pub hr_rect: PixelRect,
    pub lr_rect: PixelRect,
    /// Fusion weight (the detection box area for crops).
    pub area: f64,
    /// Parsed score per rollout; `None` marks a malformed output.
    pub scores: Vec<Option<f64>>,
    pub distribution: ScoreDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub candidate_id: String,
    pub global: RegionEvaluation,
    pub crops: Vec<RegionEvaluation>,
    /// Rollout indices that were well-formed in every region.
    pub rollouts_used: Vec<usize>,
    /// Rollouts dropped because at least one region was malformed.
    pub dropped_rollouts: Vec<usize>,
    pub fused_per_rollout: Vec<f64>,
    pub fused: ScoreDistribution,
}

impl CandidateEvaluation {
    pub fn regions(&self) -> impl Iterator<Item = &RegionEvaluation> {
        std::iter::once(&self.global).chain(self.crops.iter())
    }
}

#[derive(Debug, Clone)]
pub struct CandidateInput {
    pub id: String,
    pub hr: Arc<DynamicImage>,
    pub crops: CropSet,
}

#[derive(Debug, Clone)]
pub struct GroupInput {
    pub group_id: String,
    pub lr: Arc<DynamicImage>,
    pub candidates: Vec<CandidateInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEvaluation {
    pub group_id: String,
    pub candidates: Vec<CandidateEvaluation>,
}

impl GroupEvaluation {
    pub fn fused_means(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.fused.mean()).collect()
    }

    pub fn distributions(&self) -> Vec<ScoreDistribution> {
        self.candidates.iter().map(|c| c.fused.clone()).collect()
    }

    /// Assembles the reward-side group. Candidates that lost rollouts to
    /// malformed outputs make every candidate keep only its first
    /// `min K` fused scores; the common K is returned alongside.
    pub fn rollout(&self, labels: LabelMatrix, gamma: f64) -> Result<(GroupRollout, usize)> {
        let k = self
            .candidates
            .iter()
            .map(|c| c.fused_per_rollout.len())
            .min()
            .ok_or_else(|| invalid("group has no candidates"))?;
        let dists = self
            .candidates
            .iter()
            .map(|c| ScoreDistribution::new(c.fused_per_rollout[..k].to_vec()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok((GroupRollout::new(dists, labels, gamma)?, k))
    }
}

struct RegionPlan {
    candidate: usize,
    region: String,
    hr_rect: PixelRect,
    lr_rect: PixelRect,
    area: f64,
    request: ScoreRequest,
}

/// Concurrent, order-preserving scoring front end.
pub struct Gateway {
    backend: Arc<dyn ScoreBackend>,
    max_in_flight: usize,
    global_prompt: String,
    crop_prompt: String,
    requests: AtomicUsize,
    recorded: Option<Mutex<Vec<WireRequest>>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ScoreBackend>, config: &ScorerConfig) -> Self {
        let global_prompt = config
            .global_prompt
            .clone()
            .unwrap_or_else(|| EVALUATION_PROMPT.to_string());
        let crop_prompt = config.crop_prompt.clone().unwrap_or_else(|| global_prompt.clone());
        Gateway {
            backend,
            max_in_flight: config.max_in_flight.max(1),
            global_prompt,
            crop_prompt,
            requests: AtomicUsize::new(0),
            recorded: None,
        }
    }

    /// Keeps a copy of every wire request for later inspection.
    pub fn recording(mut self) -> Self {
        self.recorded = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn recorded_requests(&self) -> Vec<WireRequest> {
        self.recorded
            .as_ref()
            .map(|r| r.lock().expect("recording lock").clone())
            .unwrap_or_default()
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Issues one request and attaches a format verdict to each output.
    /// Malformed scorer text is not an error; it yields a zero-reward verdict.
    pub async fn request_scores(&self, req: &ScoreRequest) -> Result<Vec<ScorerResponse>> {
        if req.rollouts == 0 {
            return Err(invalid("at least one rollout is required"));
        }
        self.requests.fetch_add(1, Ordering::SeqCst);
        if let Some(rec) = &self.recorded {
            let wire = req.to_wire()?;
            rec.lock().expect("recording lock").push(wire);
        }
        let outputs = self.backend.complete(req).await?;
        if outputs.len() != req.rollouts as usize {
            return Err(GatewayError::Protocol(format!(
                "expected {} outputs, got {}",
                req.rollouts,
                outputs.len()
            )));
        }
        Ok(outputs
            .into_iter()
            .map(|raw_text| ScorerResponse {
                verdict: verdict_for(req.mode, &raw_text),
                raw_text,
            })
            .collect())
    }

    /// One-shot numeric score from the perceptual or quality scorer.
    pub async fn score_numeric(
        &self,
        kind: ScorerKind,
        hr: Arc<DynamicImage>,
        reference: Option<Arc<DynamicImage>>,
    ) -> Result<f64> {
        if kind == ScorerKind::Mllm {
            return Err(invalid("score_numeric is for lpips/deqa scorers"));
        }
        let req = ScoreRequest::numeric(kind, hr, reference);
        self.requests.fetch_add(1, Ordering::SeqCst);
        if let Some(rec) = &self.recorded {
            let wire = req.to_wire()?;
            rec.lock().expect("recording lock").push(wire);
        }
        let outputs = self.backend.complete(&req).await?;
        let first = outputs
            .first()
            .ok_or_else(|| GatewayError::Protocol("empty numeric response".into()))?;
        parse_numeric_output(first)
            .ok_or_else(|| GatewayError::Protocol(format!("non-numeric {kind:?} output {first:?}")))
    }

    fn plan_candidate(
        &self,
        index: usize,
        lr: &Arc<DynamicImage>,
        hr: &Arc<DynamicImage>,
        crops: &CropSet,
        k: u32,
        mode: ScoringMode,
    ) -> Result<Vec<RegionPlan>> {
        let (hw, hh) = (hr.width(), hr.height());
        let (lw, lh) = (lr.width(), lr.height());
        if crops.image_width != hw || crops.image_height != hh {
            return Err(invalid(format!(
                "crop set is for a {}x{} image but the HR candidate is {hw}x{hh}",
                crops.image_width, crops.image_height
            )));
        }
        if lw == 0 || lh == 0 || hw % lw != 0 || hh % lh != 0 || hw / lw != hh / lh {
            return Err(invalid(format!(
                "HR {hw}x{hh} is not an integer upscale of LR {lw}x{lh}"
            )));
        }
        let scale = hw / lw;
        let mut request = ScoreRequest::mllm(lr.clone(), hr.clone(), mode, k);
        request.prompt = Some(self.global_prompt.clone());
        let mut plans = vec![RegionPlan {
            candidate: index,
            region: "global".into(),
            hr_rect: PixelRect::new(0, 0, hw, hh),
            lr_rect: PixelRect::new(0, 0, lw, lh),
            area: crops.global_area,
            request,
        }];
        for (i, crop) in crops.crops.iter().enumerate() {
            let hr_rect = PixelRect::covering(&crop.bbox, hw, hh)?;
            let lr_rect = map_box_to_lr(hr_rect, scale, lw, lh)?;
            let hr_crop = crops::crop_regions(hr, &[hr_rect])?.remove(0);
            let lr_crop = crops::crop_regions(lr, &[lr_rect])?.remove(0);
            let mut request = ScoreRequest::mllm(Arc::new(lr_crop), Arc::new(hr_crop), mode, k);
            request.prompt = Some(self.crop_prompt.clone());
            plans.push(RegionPlan {
                candidate: index,
                region: format!("crop-{i}"),
                hr_rect,
                lr_rect,
                area: crop.area,
                request,
            });
        }
        Ok(plans)
    }

    async fn run_plans(&self, plans: &[RegionPlan]) -> Vec<Result<Vec<ScorerResponse>>> {
        stream::iter(plans.iter().map(|p| self.request_scores(&p.request)))
            .buffered(self.max_in_flight)
            .collect()
            .await
    }

    fn assemble(
        candidate_id: &str,
        plans: &[RegionPlan],
        results: Vec<Vec<ScorerResponse>>,
        k: usize,
    ) -> Result<CandidateEvaluation> {
        let mut regions = Vec::with_capacity(plans.len());
        for (plan, responses) in plans.iter().zip(results) {
            let scores: Vec<Option<f64>> = responses.iter().map(|r| r.verdict.parsed_score).collect();
            let valid: Vec<f64> = scores.iter().flatten().copied().collect();
            if valid.is_empty() {
                return Err(GatewayError::UnscorableRegion {
                    candidate: candidate_id.to_string(),
                    region: plan.region.clone(),
                });
            }
            regions.push(RegionEvaluation {
                region: plan.region.clone(),
                hr_rect: plan.hr_rect,
                lr_rect: plan.lr_rect,
                area: plan.area,
                scores,
                distribution: ScoreDistribution::new(valid)?,
            });
        }
        let (used, dropped): (Vec<usize>, Vec<usize>) =
            (0..k).partition(|&r| regions.iter().all(|reg| reg.scores[r].is_some()));
        if used.is_empty() {
            return Err(GatewayError::UnscorableCandidate {
                candidate: candidate_id.to_string(),
            });
        }
        let global = &regions[0];
        let fused_per_rollout = used
            .iter()
            .map(|&r| {
                let crops: Vec<(f64, f64)> = regions[1..]
                    .iter()
                    .map(|reg| (reg.scores[r].expect("used rollout"), reg.area))
                    .collect();
                crops::fuse_scores(global.scores[r].expect("used rollout"), global.area, &crops)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let fused = ScoreDistribution::new(fused_per_rollout.clone())?;
        let mut regions = regions.into_iter();
        let global = regions.next().expect("global region");
        Ok(CandidateEvaluation {
            candidate_id: candidate_id.to_string(),
            global,
            crops: regions.collect(),
            rollouts_used: used,
            dropped_rollouts: dropped,
            fused_per_rollout,
            fused,
        })
    }

    /// Scores the global image and every crop of one candidate with `k`
    /// rollouts each, and fuses them rollout by rollout.
    pub async fn evaluate_candidate(
        &self,
        candidate_id: &str,
        lr: Arc<DynamicImage>,
        hr: Arc<DynamicImage>,
        crops: &CropSet,
        k: u32,
        mode: ScoringMode,
    ) -> Result<CandidateEvaluation> {
        if k == 0 {
            return Err(invalid("at least one rollout is required"));
        }
        let plans = self.plan_candidate(0, &lr, &hr, crops, k, mode)?;
        let results = self
            .run_plans(&plans)
            .await
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(candidate_id, &plans, results, k as usize)
    }

    /// Scores every candidate of a group; all region requests of the group
    /// share one in-flight bound.
    pub async fn evaluate_group(&self, group: &GroupInput, k: u32, mode: ScoringMode) -> Result<GroupEvaluation> {
        if group.candidates.len() < 2 {
            return Err(invalid("a group needs at least two candidates"));
        }
        if k == 0 {
            return Err(invalid("at least one rollout is required"));
        }
        let mut plans = Vec::new();
        for (i, c) in group.candidates.iter().enumerate() {
            plans.extend(self.plan_candidate(i, &group.lr, &c.hr, &c.crops, k, mode)?);
        }
        let mut results = self.run_plans(&plans).await.into_iter();
        let mut candidates = Vec::with_capacity(group.candidates.len());
        let mut start = 0;
        for (i, c) in group.candidates.iter().enumerate() {
            let end = start + plans[start..].iter().take_while(|p| p.candidate == i).count();
            let mine = results
                .by_ref()
                .take(end - start)
                .collect::<Result<Vec<_>>>()?;
            candidates.push(Self::assemble(&c.id, &plans[start..end], mine, k as usize)?);
            start = end;
        }
        Ok(GroupEvaluation {
            group_id: group.group_id.clone(),
            candidates,
        })
    }
}
