//! Acceptance suite. Runs every primary criterion at its stated tolerance
//! and prints one PASS/FAIL line each; exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use prefrank::crops::{
    self, filter_boxes, fuse_scores, select_diverse, BBox, Crop, CropSet, Detection,
    DetectionFile, FilterConfig, PixelRect,
};
use prefrank::dataset::{self, DatasetRecord, DatasetService, GroupStatus, RejectionReason, ServiceConfig};
use prefrank::gateway::{
    build_prompt, image_digest, CandidateInput, Gateway, GroupInput, MockConfig, MockScorer, ScoreRequest,
    ScorerConfig, ScoringMode, NO_THINK_PREFILL,
};
use prefrank::ranking::{
    agreement, filter_at_1, recall_at_1, scores_to_ranks, PreferenceLabel, RankVector,
};
use prefrank::reward::{
    bernoulli_fidelity, format_reward, group_advantages, normal_cdf, rank_reward, thurstone_prob, GroupRollout,
    LabelMatrix, ScoreDistribution,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use common::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: Vec<Criterion> = vec![
        ("metric oracle equivalence", metric_oracle_equivalence),
        ("mid-rank conformance", mid_rank_conformance),
        ("thurstone/fidelity accuracy", thurstone_fidelity_accuracy),
        ("rank-reward contract", rank_reward_contract),
        ("area-weighted fusion", area_weighted_fusion),
        ("box-filter fixture", box_filter_fixture),
        ("advantage contract", advantage_contract),
        ("format-reward conformance", format_reward_conformance),
        ("end-to-end mock pipeline", end_to_end_mock_pipeline),
        ("service lifecycle", service_lifecycle),
    ];
    let mut failed = 0;
    println!();
    for (name, f) in criteria {
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("acceptance: PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("acceptance: FAIL  {name}: {why}");
            }
        }
    }
    println!();
    if failed > 0 {
        println!("acceptance: {failed} criterion/criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}

fn f64s(r: &RankVector) -> Vec<f64> {
    r.to_f64s()
}

/// Four integer scores in hundredths with roughly 20% of positions forced
/// to copy an earlier score.
fn tied_scores(rng: &mut ChaCha8Rng) -> Vec<i64> {
    let mut s: Vec<i64> = (0..4).map(|_| rng.random_range(100..=500)).collect();
    for i in 1..4 {
        if rng.random_bool(0.2) {
            s[i] = s[rng.random_range(0..i)];
        }
    }
    s
}

fn metric_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    let (mut pred, mut gt, mut pred_o, mut gt_o) = (vec![], vec![], vec![], vec![]);
    let mut tied_groups = 0;
    for _ in 0..1000 {
        let p = tied_scores(&mut rng);
        let g = tied_scores(&mut rng);
        let to_scores = |v: &[i64]| v.iter().map(|&x| x as f64 / 100.0).collect::<Vec<_>>();
        let pr = scores_to_ranks(&to_scores(&p)).map_err(|e| e.to_string())?;
        let gr = scores_to_ranks(&to_scores(&g)).map_err(|e| e.to_string())?;
        let po = naive_mid_ranks(&p);
        let go = naive_mid_ranks(&g);
        ensure!(f64s(&pr) == po, "mid-ranks differ for {p:?}: {:?} vs {po:?}", f64s(&pr));
        ensure!(f64s(&gr) == go, "mid-ranks differ for {g:?}");
        if po.iter().any(|r| r.fract() != 0.0) || go.iter().any(|r| r.fract() != 0.0) {
            tied_groups += 1;
        }
        pred.push(pr);
        gt.push(gr);
        pred_o.push(po);
        gt_o.push(go);
    }
    let a = agreement(&pred, &gt).map_err(|e| e.to_string())?;
    let r = recall_at_1(&pred, &gt).map_err(|e| e.to_string())?;
    let f = filter_at_1(&pred, &gt).map_err(|e| e.to_string())?;
    let (ao, ro, fo) = (
        naive_agreement(&pred_o, &gt_o),
        naive_recall(&pred_o, &gt_o),
        naive_filter(&pred_o, &gt_o),
    );
    ensure!(a == ao, "agreement {a} != oracle {ao}");
    ensure!(r == ro, "recall@1 {r} != oracle {ro}");
    ensure!(f == fo, "filter@1 {f} != oracle {fo}");
    let elapsed = start.elapsed();
    ensure!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    Ok(format!(
        "1000 groups ({tied_groups} with ties), agreement={a:.6} recall={r:.4} filter={f:.4}, exact match, {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    ))
}

fn mid_rank_conformance() -> Outcome {
    let worked = scores_to_ranks(&[4.2, 3.1, 3.1, 1.7]).map_err(|e| e.to_string())?;
    ensure!(f64s(&worked) == vec![1.0, 2.5, 2.5, 4.0], "tie for 2nd/3rd gave {:?}", f64s(&worked));
    let orderings = weak_orderings(4);
    ensure!(orderings.len() == 75, "enumerated {} weak orderings", orderings.len());
    for levels in &orderings {
        let scores: Vec<f64> = levels.iter().map(|&l| 5.0 - l as f64).collect();
        let ranks = scores_to_ranks(&scores).map_err(|e| e.to_string())?;
        let v = f64s(&ranks);
        ensure!(v.iter().sum::<f64>() == 10.0, "rank sum {:?} for {levels:?}", v);
        let keys: Vec<i64> = levels.iter().map(|&l| -(l as i64)).collect();
        ensure!(v == naive_mid_ranks(&keys), "{levels:?}: {v:?}");
        ensure!(RankVector::from_f64s(&v).is_ok(), "{v:?} rejected by validation");
    }
    Ok("2nd/3rd tie -> 2.5; 75/75 weak orderings sum to 10 and match the counting oracle".into())
}

fn thurstone_fidelity_accuracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7407);
    let mut max_p = 0.0f64;
    let mut max_f = 0.0f64;
    for _ in 0..10_000 {
        let ki = rng.random_range(1..=8);
        let kj = rng.random_range(1..=8);
        let si: Vec<f64> = (0..ki).map(|_| rng.random_range(1.0..5.0)).collect();
        let sj: Vec<f64> = (0..kj).map(|_| rng.random_range(1.0..5.0)).collect();
        let q = si[rng.random_range(0..ki)];
        let gamma = if rng.random_bool(0.3) { 1e-6 } else { rng.random_range(1e-6..0.5) };
        let di = ScoreDistribution::new(si.clone()).map_err(|e| e.to_string())?;
        let dj = ScoreDistribution::new(sj.clone()).map_err(|e| e.to_string())?;
        let p_hat = thurstone_prob(q, &di, &dj, gamma).map_err(|e| e.to_string())?;
        let oracle = thurstone_oracle(q, &si, &sj, gamma);
        max_p = max_p.max((p_hat - oracle).abs());
        let label = [PreferenceLabel::Loss, PreferenceLabel::Tie, PreferenceLabel::Win][rng.random_range(0..3)];
        let fid = bernoulli_fidelity(label, p_hat).map_err(|e| e.to_string())?;
        max_f = max_f.max((fid - fidelity_oracle(label.value(), oracle)).abs());
    }
    ensure!(max_p <= 1e-6, "thurstone max error {max_p:e}");
    ensure!(max_f <= 1e-6, "fidelity max error {max_f:e}");
    let mut max_sym = 0.0f64;
    let mut max_quad = 0.0f64;
    for i in -4000..=4000 {
        let z = i as f64 * 0.01;
        let s = normal_cdf(z).map_err(|e| e.to_string())? + normal_cdf(-z).map_err(|e| e.to_string())?;
        max_sym = max_sym.max((s - 1.0).abs());
        if i % 40 == 0 && z.abs() <= 8.0 {
            max_quad = max_quad.max((phi_oracle(z) - phi_quadrature(z)).abs());
        }
    }
    ensure!(max_sym <= 1e-12, "normal_cdf symmetry error {max_sym:e}");
    ensure!(max_quad <= 1e-9, "series and quadrature oracles disagree by {max_quad:e}");
    Ok(format!(
        "10000 points, max |dp|={max_p:.2e}, max |dF|={max_f:.2e}; symmetry {max_sym:.1e} on z in [-40, 40]"
    ))
}

fn rollout(samples: &[&[f64]], ranks: &[f64], gamma: f64) -> GroupRollout {
    let dists = samples
        .iter()
        .map(|s| ScoreDistribution::new(s.to_vec()).unwrap())
        .collect();
    let labels = LabelMatrix::from_ranks(&RankVector::from_f64s(ranks).unwrap());
    GroupRollout::new(dists, labels, gamma).unwrap()
}

fn rank_reward_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4E4);
    let mut evaluated = 0;
    for _ in 0..2000 {
        let g = rng.random_range(2..=6);
        let k = rng.random_range(1..=8);
        let dists: Vec<ScoreDistribution> = (0..g)
            .map(|_| ScoreDistribution::new((0..k).map(|_| rng.random_range(1.0..5.0)).collect()).unwrap())
            .collect();
        let keys: Vec<f64> = (0..g).map(|_| rng.random_range(0..4) as f64).collect();
        let ranks = scores_to_ranks(&keys).unwrap();
        let gamma = rng.random_range(1e-6..0.3);
        let group = GroupRollout::new(dists, LabelMatrix::from_ranks(&ranks), gamma).unwrap();
        for i in 0..g {
            for kk in 0..k {
                let r = rank_reward(kk, i, &group).map_err(|e| e.to_string())?;
                ensure!((0.0..=1.0).contains(&r), "reward {r} out of range");
                evaluated += 1;
            }
        }
    }
    let tie = rollout(&[&[3.0; 6], &[3.0; 6], &[3.0; 6], &[3.0; 6]], &[2.5; 4], 1e-6);
    for i in 0..4 {
        for kk in 0..6 {
            let r = rank_reward(kk, i, &tie).map_err(|e| e.to_string())?;
            ensure!(r == 1.0, "all-tie reward {r} at ({i}, {kk})");
        }
    }
    // Candidate 0's score sits exactly three pooled standard deviations above
    // candidate 1's mean.
    let gamma = 1e-6;
    let sj = [2.9, 3.1];
    let (mj, vj) = mean_var(&sj);
    let q = mj + 3.0 * (vj + gamma).sqrt();
    let sep = rollout(&[&[q, q], &sj], &[1.0, 2.0], gamma);
    let r_sep = rank_reward(0, 0, &sep).map_err(|e| e.to_string())?;
    ensure!(r_sep >= 0.95, "separation fixture reward {r_sep}");
    let two = rollout(&[&[4.0, 4.0], &[2.5, 3.5]], &[1.0, 2.0], 0.25);
    let r_two = rank_reward(0, 0, &two).map_err(|e| e.to_string())?;
    ensure!((r_two - 0.95987).abs() <= 1e-5, "two-candidate fixture {r_two}");
    Ok(format!(
        "{evaluated} rewards in [0,1]; all-tie = 1.0 exactly; 3-sigma fixture {r_sep:.5}; two-candidate {r_two:.5}"
    ))
}

fn area_weighted_fusion() -> Outcome {
    let v = fuse_scores(4.0, 100.0, &[(2.0, 50.0)]).map_err(|e| e.to_string())?;
    ensure!((v - 10.0 / 3.0).abs() <= 1e-9, "fused {v}");
    let mut rng = ChaCha8Rng::seed_from_u64(0xF05E);
    for _ in 0..1000 {
        let w = rng.random_range(16..2048u32);
        let h = rng.random_range(16..2048u32);
        let n = rng.random_range(0..=4);
        let mut set = CropSet::global_only(w, h);
        set.global_score = Some(rng.random_range(1.0..=5.0));
        for _ in 0..n {
            let x0 = rng.random_range(0.0..w as f64 - 2.0);
            let y0 = rng.random_range(0.0..h as f64 - 2.0);
            let bbox = BBox::new(x0, y0, rng.random_range(x0 + 1.0..w as f64), rng.random_range(y0 + 1.0..h as f64));
            set.crops.push(Crop {
                label: "object".into(),
                confidence: 0.9,
                bbox,
                area: bbox.area(),
                score: Some(rng.random_range(1.0..=5.0)),
            });
        }
        let fused = set.fused_score().map_err(|e| e.to_string())?;
        let scores: Vec<f64> = std::iter::once(set.global_score.unwrap())
            .chain(set.crops.iter().map(|c| c.score.unwrap()))
            .collect();
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ensure!(fused >= lo - 1e-12 && fused <= hi + 1e-12, "fused {fused} outside [{lo}, {hi}]");
        let c = rng.random_range(1.0..=5.0);
        set.global_score = Some(c);
        for crop in &mut set.crops {
            crop.score = Some(c);
        }
        let constant = set.fused_score().map_err(|e| e.to_string())?;
        ensure!((constant - c).abs() <= 1e-12, "constant {c} fused to {constant}");
    }
    Ok(format!("(4.0,100; 2.0,50) -> {v:.9}; bounds and constant invariants on 1000 crop sets"))
}

fn box_filter_fixture() -> Outcome {
    let config = FilterConfig::default();
    ensure!(
        config.tau_box == 0.25
            && config.nms_iou == 0.5
            && config.max_aspect == 4.5
            && config.area_range == [0.1, 0.7]
            && config.dedup_iou == 0.7
            && config.k_max == 4,
        "default thresholds drifted: {config:?}"
    );
    let file = DetectionFile::load(&fixture_path("detections_12.json")).map_err(|e| e.to_string())?;
    ensure!(file.detections.len() == 12, "fixture has {} detections", file.detections.len());
    let dets = file.prepared().map_err(|e| e.to_string())?;
    let set = filter_boxes(&dets, file.width, file.height, &config).map_err(|e| e.to_string())?;
    let got: Vec<(String, [f64; 4])> = set
        .crops
        .iter()
        .map(|c| (c.label.clone(), [c.bbox.x0, c.bbox.y0, c.bbox.x1, c.bbox.y1]))
        .collect();
    let expected = vec![
        ("dog".to_string(), [0.0, 0.0, 400.0, 400.0]),
        ("car".to_string(), [600.0, 0.0, 1000.0, 400.0]),
        ("tree".to_string(), [0.0, 600.0, 400.0, 1000.0]),
        ("building".to_string(), [600.0, 600.0, 1000.0, 1000.0]),
    ];
    ensure!(got == expected, "kept {got:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(0xB0C5);
    for _ in 0..500 {
        let n = rng.random_range(2..=12);
        let raw: Vec<[f64; 4]> = (0..n)
            .map(|_| {
                let x0 = rng.random_range(0..90) as f64 * 10.0;
                let y0 = rng.random_range(0..90) as f64 * 10.0;
                let x1 = x0 + rng.random_range(1..=(100 - x0 as i32 / 10)) as f64 * 10.0;
                let y1 = y0 + rng.random_range(1..=(100 - y0 as i32 / 10)) as f64 * 10.0;
                [x0, y0, x1, y1]
            })
            .collect();
        let boxes: Vec<BBox> = raw.iter().map(|b| BBox::new(b[0], b[1], b[2], b[3])).collect();
        let idx: Vec<usize> = (0..n).collect();
        for k in 1..=5 {
            let fast = select_diverse(&idx, &boxes, k);
            let naive = naive_top_k(&raw, k);
            ensure!(fast == naive, "top-{k} of {raw:?}: {fast:?} vs naive {naive:?}");
        }
    }
    Ok("12 detections -> dog, car, tree, building; top-K matches full sort on 500 random sets (K=1..5)".into())
}

fn advantage_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xADC0);
    let mut max_mean = 0.0f64;
    let mut max_shift = 0.0f64;
    let mut max_scale = 0.0f64;
    let mut groups = 0;
    while groups < 1000 {
        let g = rng.random_range(2..=16);
        let r: Vec<f64> = (0..g).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, var) = mean_var(&r);
        if var.sqrt() < 0.05 {
            continue;
        }
        groups += 1;
        let pre = group_advantages(&r, f64::MAX, 1e-8).map_err(|e| e.to_string())?;
        max_mean = max_mean.max((pre.iter().sum::<f64>() / g as f64).abs());
        let c = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
        let a = rng.random_range(0.1..10.0);
        let scaled: Vec<f64> = r.iter().map(|x| x * a).collect();
        let base = group_advantages(&r, 5.0, 1e-8).map_err(|e| e.to_string())?;
        let s = group_advantages(&shifted, 5.0, 1e-8).map_err(|e| e.to_string())?;
        let m = group_advantages(&scaled, 5.0, 1e-8).map_err(|e| e.to_string())?;
        for i in 0..g {
            max_shift = max_shift.max((base[i] - s[i]).abs());
            max_scale = max_scale.max((base[i] - m[i]).abs());
        }
    }
    ensure!(max_mean <= 1e-12, "pre-clip mean {max_mean:e}");
    ensure!(max_shift <= 1e-9, "shift invariance error {max_shift:e}");
    ensure!(max_scale <= 1e-6, "scale invariance error {max_scale:e}");

    let mut outlier = vec![0.0; 64];
    outlier[17] = 1.0;
    let unclipped = group_advantages(&outlier, f64::MAX, 1e-8).map_err(|e| e.to_string())?;
    let clipped = group_advantages(&outlier, 5.0, 1e-8).map_err(|e| e.to_string())?;
    ensure!(unclipped[17] > 7.9, "outlier pre-clip advantage {}", unclipped[17]);
    ensure!(clipped[17] == 5.0, "outlier clipped to {}", clipped[17]);
    ensure!((clipped[0] - unclipped[0]).abs() < 1e-15, "inliers changed by clipping");
    let low: Vec<f64> = outlier.iter().map(|x| -x).collect();
    let low_adv = group_advantages(&low, 5.0, 1e-8).map_err(|e| e.to_string())?;
    ensure!(low_adv[17] == -5.0, "negative outlier clipped to {}", low_adv[17]);
    ensure!(
        group_advantages(&[2.0; 5], 5.0, 1e-8).map_err(|e| e.to_string())? == vec![0.0; 5],
        "constant rewards not zero"
    );
    Ok(format!(
        "1000 groups: |mean| {max_mean:.1e}, shift {max_shift:.1e}, scale {max_scale:.1e}; outlier {:.3} -> 5.0",
        unclipped[17]
    ))
}

fn format_reward_conformance() -> Outcome {
    let good = [
        "<thinking>blur at top left</thinking><answer>3.75</answer>",
        "<thinking>warped window frames, center lower</thinking>\n<answer>2.31</answer>",
        "<thinking>clean</thinking><answer>5.00</answer>",
        "<thinking>severe</thinking><answer>1.00</answer>",
    ];
    for g in good {
        let v = format_reward(g);
        ensure!(v.reward == 1.0 && v.parsed_score.is_some(), "well-formed {g:?} scored {v:?}");
    }
    let mutants = [
        ("missing thinking open", "blur</thinking><answer>3.75</answer>"),
        ("missing thinking close", "<thinking>blur<answer>3.75</answer>"),
        ("missing answer open", "<thinking>blur</thinking>3.75</answer>"),
        ("missing answer close", "<thinking>blur</thinking><answer>3.75"),
        ("swapped order", "<answer>3.75</answer><thinking>blur</thinking>"),
        ("out of range high", "<thinking>blur</thinking><answer>5.01</answer>"),
        ("out of range low", "<thinking>blur</thinking><answer>0.99</answer>"),
        ("non-numeric", "<thinking>blur</thinking><answer>good</answer>"),
        ("trailing text in answer", "<thinking>blur</thinking><answer>3.75/5</answer>"),
        ("duplicate answer", "<thinking>blur</thinking><answer>3</answer><answer>4</answer>"),
    ];
    for (name, m) in mutants {
        let v = format_reward(m);
        ensure!(v.reward == 0.0 && v.parsed_score.is_none(), "mutant '{name}' scored {v:?}");
    }
    ensure!(NO_THINK_PREFILL == "<thinking>...</thinking><answer>", "prefill constant {NO_THINK_PREFILL:?}");
    let payload = build_prompt(ScoringMode::NoThink);
    ensure!(payload.prefill.as_deref() == Some("<thinking>...</thinking><answer>"), "payload {payload:?}");
    ensure!(build_prompt(ScoringMode::Think).prefill.is_none(), "think mode carries a prefill");
    let img = Arc::new(solid_rgb(8, 8, [1, 2, 3]));
    let wire = ScoreRequest::mllm(img.clone(), img, ScoringMode::NoThink, 2)
        .to_wire()
        .map_err(|e| e.to_string())?;
    ensure!(wire.prefill.as_deref() == Some("<thinking>...</thinking><answer>"), "wire prefill {:?}", wire.prefill);
    Ok(format!("{} well-formed = 1.0, {} mutants = 0, no-think prefill exact", good.len(), mutants.len()))
}

struct Corpus {
    groups: Vec<GroupInput>,
    gt: Vec<RankVector>,
    score_of: BTreeMap<String, f64>,
}

/// 50 groups of solid-colour candidates, each with one detected object, and
/// a mock score map giving every region of a candidate `5 - gt_rank`.
fn e2e_corpus() -> Result<Corpus, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE2E);
    let config = FilterConfig::default();
    let mut groups = Vec::new();
    let mut gt = Vec::new();
    let mut score_of = BTreeMap::new();
    for g in 0..50u32 {
        let levels: Vec<f64> = (0..4).map(|_| rng.random_range(0..4) as f64).collect();
        let ranks = scores_to_ranks(&levels.iter().map(|l| 4.0 - l).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
        let lr = Arc::new(solid_rgb(16, 16, [g as u8, 200, 200]));
        let mut candidates = Vec::new();
        for c in 0..4u32 {
            let hr = solid_rgb(64, 64, [(g * 5) as u8, (c * 60) as u8, 100]);
            let dets = vec![Detection {
                label: "object".into(),
                confidence: 0.9,
                bbox: BBox::new(16.0, 16.0, 48.0, 48.0),
            }];
            let set = filter_boxes(&dets, 64, 64, &config).map_err(|e| e.to_string())?;
            ensure!(set.crops.len() == 1, "crop not selected");
            let score = 5.0 - ranks.get(c as usize).unwrap().value();
            let rect = PixelRect::covering(&set.crops[0].bbox, 64, 64).map_err(|e| e.to_string())?;
            let crop = crops::crop_regions(&hr, &[rect]).map_err(|e| e.to_string())?.remove(0);
            score_of.insert(image_digest(&hr), score);
            score_of.insert(image_digest(&crop), score);
            candidates.push(CandidateInput {
                id: format!("g{g}c{c}"),
                hr: Arc::new(hr),
                crops: set,
            });
        }
        groups.push(GroupInput {
            group_id: format!("g{g:02}"),
            lr,
            candidates,
        });
        gt.push(ranks);
    }
    Ok(Corpus { groups, gt, score_of })
}

fn end_to_end_mock_pipeline() -> Outcome {
    let corpus = e2e_corpus()?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let run = |mock: MockScorer| -> Result<(Vec<RankVector>, usize), String> {
        let gw = Gateway::new(Arc::new(mock), &ScorerConfig::default());
        let mut pred = Vec::new();
        for g in &corpus.groups {
            let eval = rt.block_on(gw.evaluate_group(g, 3, ScoringMode::Think)).map_err(|e| e.to_string())?;
            pred.push(scores_to_ranks(&eval.fused_means()).map_err(|e| e.to_string())?);
        }
        Ok((pred, gw.request_count()))
    };
    let mock = MockScorer::new(MockConfig {
        scores: corpus.score_of.clone(),
        default_score: 1.0,
        ..MockConfig::default()
    });
    let (pred, requests) = run(mock)?;
    let a = agreement(&pred, &corpus.gt).map_err(|e| e.to_string())?;
    let r = recall_at_1(&pred, &corpus.gt).map_err(|e| e.to_string())?;
    let f = filter_at_1(&pred, &corpus.gt).map_err(|e| e.to_string())?;
    ensure!(requests == 50 * 4 * 2, "{requests} scorer requests");
    ensure!(a == 1.0 && r == 1.0 && f == 1.0, "agreement {a}, recall {r}, filter {f}");

    let (flat, _) = run(MockScorer::constant(3.0))?;
    let a_flat = agreement(&flat, &corpus.gt).map_err(|e| e.to_string())?;
    let gt_o: Vec<Vec<f64>> = corpus.gt.iter().map(f64s).collect();
    let baseline = naive_agreement(&vec![vec![2.5; 4]; 50], &gt_o);
    ensure!(a_flat == baseline, "constant-score agreement {a_flat} vs all-tie baseline {baseline}");
    Ok(format!(
        "50 groups, {requests} region requests: agreement = recall = filter = 1.0; constant scorer {a_flat:.4} = baseline"
    ))
}

fn service_lifecycle() -> Outcome {
    let corpus = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    let records = write_corpus(corpus.path(), 3);
    let config = ServiceConfig {
        corpus_root: Some(corpus.path().to_path_buf()),
        seed: 2024,
        ..ServiceConfig::default()
    };
    // Intended canonical rankings, as typed by each annotator (competition
    // notation for ties is allowed).
    let plan: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::from([
        (("ann-a", "group-0"), vec![1.0, 2.0, 3.0, 4.0]),
        (("ann-b", "group-0"), vec![2.0, 1.0, 3.0, 4.0]),
        (("ann-c", "group-0"), vec![1.0, 2.0, 4.0, 3.0]),
        (("ann-a", "group-1"), vec![1.0, 2.0, 3.0, 4.0]),
        (("ann-b", "group-1"), vec![4.0, 3.0, 2.0, 1.0]),
        (("ann-c", "group-1"), vec![1.0, 1.0, 1.0, 1.0]),
        (("ann-a", "group-2"), vec![1.0, 1.0, 3.0, 4.0]),
        (("ann-b", "group-2"), vec![1.0, 2.0, 3.0, 4.0]),
        (("ann-c", "group-2"), vec![2.0, 1.0, 4.0, 3.0]),
    ]);
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let svc = Arc::new(DatasetService::open(data.path(), config.clone()).map_err(|e| e.to_string())?);
    let export_text = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let base = format!("http://{}", listener.local_addr().unwrap());
        let app = dataset::api::router(svc.clone());
        tokio::spawn(async move { axum::serve(listener, app).await });
        let http = reqwest::Client::new();
        for r in &records {
            let resp = http.post(format!("{base}/groups")).json(r).send().await.map_err(|e| e.to_string())?;
            ensure!(resp.status() == 201, "ingest status {}", resp.status());
        }
        let gold: Vec<_> = (0..20).map(|i| json!({"group_id": format!("gold-{i}"), "ranks": [1, 2, 3, 4]})).collect();
        for ann in ["ann-a", "ann-b", "ann-c"] {
            let resp = http
                .post(format!("{base}/annotators/qualify"))
                .json(&json!({"annotator_id": ann, "gold": gold, "submitted": vec![[1, 2, 3, 4]; 20]}))
                .send()
                .await
                .map_err(|e| e.to_string())?;
            ensure!(resp.status() == 200, "qualify status {}", resp.status());
            loop {
                let resp = http
                    .get(format!("{base}/tasks/next?annotator={ann}"))
                    .send()
                    .await
                    .map_err(|e| e.to_string())?;
                if resp.status() == 204 {
                    break;
                }
                let task: dataset::Task = resp.json().await.map_err(|e| e.to_string())?;
                let canonical = &plan[&(ann, task.group_id.as_str())];
                let display: Vec<f64> = task
                    .candidates
                    .iter()
                    .map(|c| canonical[c.image_url.rsplit('/').next().unwrap().parse::<usize>().unwrap()])
                    .collect();
                let resp = http
                    .post(format!("{base}/rankings"))
                    .json(&json!({"group_id": task.group_id, "annotator_id": ann, "ranks": display}))
                    .send()
                    .await
                    .map_err(|e| e.to_string())?;
                ensure!(resp.status() == 200, "submit status {}", resp.status());
            }
        }
        for g in ["group-0", "group-1", "group-2"] {
            let resp = http
                .post(format!("{base}/groups/{g}/finalize"))
                .send()
                .await
                .map_err(|e| e.to_string())?;
            ensure!(resp.status() == 200, "finalize {g} status {}", resp.status());
        }
        let resp = http.get(format!("{base}/export")).send().await.map_err(|e| e.to_string())?;
        ensure!(resp.status() == 200, "export status {}", resp.status());
        resp.text().await.map_err(|e| e.to_string())
    })?;

    let state = svc.state();
    for g in ["group-0", "group-2"] {
        let gs = &state.groups[g];
        ensure!(gs.status == GroupStatus::Finalized, "{g} is {:?}", gs.status);
        let anns: Vec<Vec<f64>> = gs.annotations.iter().map(|a| a.ranks.to_f64s()).collect();
        let oracle = naive_aggregate(&anns);
        ensure!(
            gs.aggregate_ranks.as_ref().map(f64s) == Some(oracle.clone()),
            "{g} aggregate {:?} vs oracle {oracle:?}",
            gs.aggregate_ranks
        );
    }
    let g2 = &state.groups["group-2"];
    ensure!(
        g2.annotations.iter().any(|a| a.annotator_id == "ann-a" && a.ranks.to_f64s() == vec![1.5, 1.5, 3.0, 4.0]),
        "competition-notation tie not stored as mid-ranks"
    );
    let g1 = &state.groups["group-1"];
    ensure!(
        g1.status == GroupStatus::Rejected && g1.rejection_reason == Some(RejectionReason::Disagreement),
        "discordant group is {:?} / {:?}",
        g1.status,
        g1.rejection_reason
    );
    drop(svc);
    let reopened = DatasetService::open(data.path(), config.clone()).map_err(|e| e.to_string())?;
    ensure!(reopened.state() == state, "state after restart differs");

    let records: Vec<DatasetRecord> = prefrank::jsonl::parse_jsonl(&export_text).map_err(|e| e.to_string())?;
    ensure!(records.len() == 2, "export has {} records", records.len());
    let export_path = data.path().join("export.jsonl");
    std::fs::write(&export_path, &export_text).map_err(|e| e.to_string())?;
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fresh = DatasetService::open(second.path(), config).map_err(|e| e.to_string())?;
    fresh.import_dataset(&export_path).map_err(|e| e.to_string())?;
    let again = fresh.export_jsonl().map_err(|e| e.to_string())?;
    ensure!(again == export_text, "re-export differs from export");
    Ok("3 groups over HTTP: 2 finalized = average-rank oracle, 1 rejected(disagreement); restart-identical; export round trip byte-identical".into())
}
