//! Reward mathematics for evaluator and generator training.
//!
//! * [`format_reward`] checks the `<thinking>` / `<answer>` output contract.
//! * [`thurstone_prob`] turns a rollout score into a win probability against
//!   another candidate's score distribution.
//! * [`rank_reward`] averages the Bernoulli fidelity between those
//!   probabilities and the human preference labels.
//! * [`composite_reward`] and [`group_advantages`] cover the generator side:
//!   weighted reward components and group z-scored advantages.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ranking::{preference_label, PreferenceLabel, RankVector, RankingError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),
    #[error(transparent)]
    Ranking(#[from] RankingError),
}

pub type Result<T> = std::result::Result<T, RewardError>;

fn invalid(msg: impl Into<String>) -> RewardError {
    RewardError::InvalidInput(msg.into())
}

/// Standard normal CDF.
///
/// Evaluated through `erfc` on the non-negative half-line and reflected, so
/// `normal_cdf(z) + normal_cdf(-z)` is 1 up to a single rounding. Absolute
/// error is far below 1e-7 (`libm::erfc` is accurate to about 1 ulp).
pub fn normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(invalid(format!("normal_cdf of non-finite {z}")));
    }
    Ok(phi(z))
}

pub(crate) fn phi(z: f64) -> f64 {
    let tail = 0.5 * libm::erfc(z.abs() / std::f64::consts::SQRT_2);
    if z >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    /// Divide by K.
    #[default]
    Population,
    /// Divide by K - 1 (zero for a single sample).
    Unbiased,
}

/// K rollout scores for one candidate with their mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    samples: Vec<f64>,
    mean: f64,
    variance: f64,
}

impl ScoreDistribution {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        Self::with_convention(samples, VarianceConvention::Population)
    }

    pub fn with_convention(samples: Vec<f64>, convention: VarianceConvention) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("score distribution needs at least one sample"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(invalid("score samples must be finite"));
        }
        let k = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / k;
        let ss: f64 = samples.iter().map(|s| (s - mean) * (s - mean)).sum();
        let variance = match convention {
            VarianceConvention::Population => ss / k,
            VarianceConvention::Unbiased if samples.len() > 1 => ss / (k - 1.0),
            VarianceConvention::Unbiased => 0.0,
        };
        Ok(ScoreDistribution {
            samples,
            mean,
            variance,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn k(&self) -> usize {
        self.samples.len()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

/// Probability that a rollout score `q` of candidate i beats candidate j,
/// `Phi((q - mu_j) / sqrt(var_i + var_j + gamma))`.
pub fn thurstone_prob(
    q: f64,
    dist_i: &ScoreDistribution,
    dist_j: &ScoreDistribution,
    gamma: f64,
) -> Result<f64> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(invalid(format!("gamma must be finite and non-negative, got {gamma}")));
    }
    if !q.is_finite() {
        return Err(invalid("rollout score must be finite"));
    }
    let pooled = dist_i.variance + dist_j.variance + gamma;
    if pooled <= 0.0 {
        return Err(RewardError::DegenerateDistribution(
            "both variances are zero and gamma is zero".into(),
        ));
    }
    Ok(phi((q - dist_j.mean) / pooled.sqrt()))
}

/// Bhattacharyya coefficient between Bernoulli(p) and Bernoulli(p_hat).
pub fn bernoulli_fidelity(p: PreferenceLabel, p_hat: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(invalid(format!("probability {p_hat} outside [0, 1]")));
    }
    let p = p.value();
    Ok(((p * p_hat).sqrt() + ((1.0 - p) * (1.0 - p_hat)).sqrt()).min(1.0))
}

/// G x G preference labels with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Option<PreferenceLabel>>>", into = "Vec<Vec<Option<PreferenceLabel>>>")]
pub struct LabelMatrix {
    labels: Vec<Vec<Option<PreferenceLabel>>>,
}

impl LabelMatrix {
    pub fn from_ranks(ranks: &RankVector) -> Self {
        let g = ranks.len();
        let labels = (0..g)
            .map(|i| {
                (0..g)
                    .map(|j| (i != j).then(|| preference_label(ranks, i, j).expect("valid indices")))
                    .collect()
            })
            .collect();
        LabelMatrix { labels }
    }

    /// Requires an empty diagonal, full off-diagonal and
    /// `labels[i][j] + labels[j][i] = 1`.
    pub fn new(labels: Vec<Vec<Option<PreferenceLabel>>>) -> Result<Self> {
        let g = labels.len();
        for (i, row) in labels.iter().enumerate() {
            if row.len() != g {
                return Err(invalid("label matrix must be square"));
            }
            for (j, cell) in row.iter().enumerate() {
                match (i == j, cell) {
                    (true, Some(_)) => return Err(invalid("label matrix diagonal must be empty")),
                    (false, None) => return Err(invalid(format!("missing label ({i}, {j})"))),
                    (false, Some(l)) => {
                        if labels[j][i] != Some(l.flipped()) {
                            return Err(invalid(format!(
                                "labels ({i}, {j}) and ({j}, {i}) do not sum to 1"
                            )));
                        }
                    }
                    (true, None) => {}
                }
            }
        }
        Ok(LabelMatrix { labels })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<PreferenceLabel> {
        self.labels.get(i)?.get(j).copied().flatten()
    }
}

impl TryFrom<Vec<Vec<Option<PreferenceLabel>>>> for LabelMatrix {
    type Error = RewardError;

    fn try_from(v: Vec<Vec<Option<PreferenceLabel>>>) -> Result<Self> {
        LabelMatrix::new(v)
    }
}

impl From<LabelMatrix> for Vec<Vec<Option<PreferenceLabel>>> {
    fn from(m: LabelMatrix) -> Self {
        m.labels
    }
}

/// Score distributions for a group of candidates plus their preference labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRollout {
    distributions: Vec<ScoreDistribution>,
    labels: LabelMatrix,
    gamma: f64,
}

impl GroupRollout {
    pub fn new(distributions: Vec<ScoreDistribution>, labels: LabelMatrix, gamma: f64) -> Result<Self> {
        if distributions.len() != labels.size() {
            return Err(invalid(format!(
                "{} distributions but a {}x{} label matrix",
                distributions.len(),
                labels.size(),
                labels.size()
            )));
        }
        if let Some(first) = distributions.first() {
            if distributions.iter().any(|d| d.k() != first.k()) {
                return Err(invalid("all candidates must have the same number of rollouts"));
            }
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(invalid(format!("gamma must be finite and non-negative, got {gamma}")));
        }
        Ok(GroupRollout {
            distributions,
            labels,
            gamma,
        })
    }

    pub fn size(&self) -> usize {
        self.distributions.len()
    }

    pub fn k(&self) -> usize {
        self.distributions.first().map_or(0, ScoreDistribution::k)
    }

    pub fn distributions(&self) -> &[ScoreDistribution] {
        &self.distributions
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Rank reward of rollout `k` of candidate `i`: mean Bernoulli fidelity
/// against every other candidate of the group.
pub fn rank_reward(k: usize, i: usize, group: &GroupRollout) -> Result<f64> {
    let g = group.size();
    if g < 2 {
        return Err(invalid("rank reward needs at least two candidates"));
    }
    if i >= g {
        return Err(invalid(format!("candidate index {i} out of range for {g}")));
    }
    let dist_i = &group.distributions[i];
    let q = *dist_i
        .samples()
        .get(k)
        .ok_or_else(|| invalid(format!("rollout index {k} out of range for K = {}", dist_i.k())))?;
    let mut sum = 0.0;
    for (j, dist_j) in group.distributions.iter().enumerate() {
        if j == i {
            continue;
        }
        let p_hat = thurstone_prob(q, dist_i, dist_j, group.gamma)?;
        let label = group.labels.get(i, j).expect("validated label matrix");
        sum += bernoulli_fidelity(label, p_hat)?;
    }
    Ok(sum / (g - 1) as f64)
}

/// Rank rewards for every candidate and rollout, indexed `[candidate][rollout]`.
pub fn rank_rewards(group: &GroupRollout) -> Result<Vec<Vec<f64>>> {
    (0..group.size())
        .map(|i| (0..group.k()).map(|k| rank_reward(k, i, group)).collect())
        .collect()
}

pub const THINKING_OPEN: &str = "<thinking>";
pub const THINKING_CLOSE: &str = "</thinking>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

pub const MIN_SCORE: f64 = 1.0;
pub const MAX_SCORE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatVerdict {
    pub reward: f64,
    pub parsed_score: Option<f64>,
    pub thinking_text: Option<String>,
}

impl FormatVerdict {
    fn rejected() -> Self {
        FormatVerdict {
            reward: 0.0,
            parsed_score: None,
            thinking_text: None,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.reward == 1.0
    }
}

fn single_occurrence(text: &str, tag: &str) -> Option<usize> {
    let mut it = text.match_indices(tag);
    let first = it.next()?.0;
    it.next().is_none().then_some(first)
}

/// Unsigned decimal: digits with an optional fractional part.
pub(crate) fn parse_plain_decimal(text: &str) -> Option<f64> {
    let (int, frac) = match text.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (text, None),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    let ok = match frac {
        None => digits(int),
        Some(f) => (digits(int) && (f.is_empty() || digits(f))) || (int.is_empty() && digits(f)),
    };
    if !ok {
        return None;
    }
    text.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reward 1.0 iff the output holds one `<thinking>` block followed by one
/// `<answer>` block whose trimmed content is a number in [1.00, 5.00].
pub fn format_reward(raw_output: &str) -> FormatVerdict {
    let tags = [THINKING_OPEN, THINKING_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];
    let mut pos = [0usize; 4];
    for (slot, tag) in pos.iter_mut().zip(tags) {
        match single_occurrence(raw_output, tag) {
            Some(p) => *slot = p,
            None => return FormatVerdict::rejected(),
        }
    }
    let [t_open, t_close, a_open, a_close] = pos;
    let t_body = t_open + THINKING_OPEN.len();
    let a_body = a_open + ANSWER_OPEN.len();
    if !(t_body <= t_close && t_close + THINKING_CLOSE.len() <= a_open && a_body <= a_close) {
        return FormatVerdict::rejected();
    }
    let answer = raw_output[a_body..a_close].trim();
    match parse_plain_decimal(answer) {
        Some(score) if (MIN_SCORE..=MAX_SCORE).contains(&score) => FormatVerdict {
            reward: 1.0,
            parsed_score: Some(score),
            thinking_text: Some(raw_output[t_body..t_close].to_string()),
        },
        _ => FormatVerdict::rejected(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct RewardWeights {
    pub reference: f64,
    pub lpips: f64,
    pub deqa: f64,
}

impl RewardWeights {
    pub fn new(reference: f64, lpips: f64, deqa: f64) -> Result<Self> {
        let w = RewardWeights {
            reference,
            lpips,
            deqa,
        };
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("reference", self.reference), ("lpips", self.lpips), ("deqa", self.deqa)] {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(format!("{name} weight must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            reference: 1.0,
            lpips: 1.0,
            deqa: 1.0,
        }
    }
}

impl TryFrom<[f64; 3]> for RewardWeights {
    type Error = RewardError;

    fn try_from(w: [f64; 3]) -> Result<Self> {
        RewardWeights::new(w[0], w[1], w[2])
    }
}

impl From<RewardWeights> for [f64; 3] {
    fn from(w: RewardWeights) -> Self {
        [w.reference, w.lpips, w.deqa]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_ref: f64,
    pub r_lpips: f64,
    pub r_deqa: f64,
    pub weights: RewardWeights,
    pub total: f64,
}

/// `w_ref * r_ref - w_lpips * r_lpips + w_deqa * r_deqa` on native scales.
pub fn composite_reward(r_ref: f64, r_lpips: f64, r_deqa: f64, weights: RewardWeights) -> Result<RewardBreakdown> {
    weights.validate()?;
    if ![r_ref, r_lpips, r_deqa].iter().all(|v| v.is_finite()) {
        return Err(invalid("reward components must be finite"));
    }
    if r_lpips < 0.0 {
        return Err(invalid(format!("perceptual distance must be non-negative, got {r_lpips}")));
    }
    Ok(RewardBreakdown {
        r_ref,
        r_lpips,
        r_deqa,
        weights,
        total: weights.reference * r_ref - weights.lpips * r_lpips + weights.deqa * r_deqa,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub r_ref: f64,
    pub r_lpips: f64,
    pub r_deqa: f64,
}

/// Composite totals for a whole group. With `normalize`, each component is
/// first z-scored across the group (population std plus `eps`).
pub fn composite_rewards_for_group(
    components: &[RewardComponents],
    weights: RewardWeights,
    normalize: bool,
    eps: f64,
) -> Result<Vec<f64>> {
    let raw = components
        .iter()
        .map(|c| composite_reward(c.r_ref, c.r_lpips, c.r_deqa, weights))
        .collect::<Result<Vec<_>>>()?;
    if !normalize {
        return Ok(raw.iter().map(|b| b.total).collect());
    }
    let z = |xs: Vec<f64>| -> Vec<f64> {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        let denom = std + eps;
        xs.iter()
            .map(|x| if denom > 0.0 { (x - mean) / denom } else { 0.0 })
            .collect()
    };
    let refs = z(components.iter().map(|c| c.r_ref).collect());
    let lpips = z(components.iter().map(|c| c.r_lpips).collect());
    let deqa = z(components.iter().map(|c| c.r_deqa).collect());
    Ok((0..components.len())
        .map(|i| weights.reference * refs[i] - weights.lpips * lpips[i] + weights.deqa * deqa[i])
        .collect())
}

/// Group-relative advantages `clamp((r - mean) / (std + eps), -clip, clip)`
/// with the population standard deviation. A group with no spread and
/// `eps = 0` yields all zeros.
pub fn group_advantages(rewards: &[f64], clip_max: f64, eps: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(invalid("advantages need at least two rewards per group"));
    }
    if clip_max.is_nan() || clip_max <= 0.0 {
        return Err(invalid(format!("clip_max must be positive, got {clip_max}")));
    }
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(invalid(format!("eps must be finite and non-negative, got {eps}")));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(invalid("rewards must be finite"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    let denom = std + eps;
    Ok(rewards
        .iter()
        .map(|r| {
            if denom > 0.0 {
                ((r - mean) / denom).clamp(-clip_max, clip_max)
            } else {
                0.0
            }
        })
        .collect())
}

/// Reward hyperparameters, serialized as the reward configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub gamma: f64,
    pub weights: RewardWeights,
    pub clip_max: f64,
    pub eps: f64,
    pub k_rollouts: usize,
    pub variance: VarianceConvention,
    pub normalize_components: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            gamma: 1e-6,
            weights: RewardWeights::default(),
            clip_max: 5.0,
            eps: 1e-8,
            k_rollouts: 6,
            variance: VarianceConvention::Population,
            normalize_components: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(invalid("gamma must be finite and non-negative"));
        }
        if self.clip_max.is_nan() || self.clip_max <= 0.0 {
            return Err(invalid("clip_max must be positive"));
        }
        if self.eps.is_nan() || self.eps < 0.0 {
            return Err(invalid("eps must be non-negative"));
        }
        if self.k_rollouts == 0 {
            return Err(invalid("k_rollouts must be at least 1"));
        }
        self.weights.validate()
    }

    pub fn load(path: &Path) -> std::result::Result<Self, crate::ConfigError> {
        let cfg: RewardConfig = crate::load_json(path)?;
        cfg.validate()
            .map_err(|e| crate::ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}
