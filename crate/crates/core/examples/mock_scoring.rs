//! Global plus crop evaluation of a candidate group through the gateway,
//! using the deterministic mock scorer.
//!
//! Run with `cargo run --example mock_scoring`.

use std::collections::BTreeMap;
use std::sync::Arc;

use image::{DynamicImage, Rgb, RgbImage};
use prefrank::crops::{filter_boxes, BBox, Detection, FilterConfig};
use prefrank::gateway::{
    image_digest, CandidateInput, Gateway, GroupInput, MockConfig, MockScorer, ScorerConfig, ScoringMode,
};
use prefrank::ranking::{agreement, scores_to_ranks, RankVector};
use prefrank::reward::{rank_rewards, LabelMatrix};

fn solid(w: u32, h: u32, c: [u8; 3]) -> DynamicImage {
    DynamicImage::ImageRgb8(RgbImage::from_pixel(w, h, Rgb(c)))
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lr = Arc::new(solid(32, 32, [90, 90, 90]));
    let hrs: Vec<Arc<DynamicImage>> = (0..4u8).map(|i| Arc::new(solid(128, 128, [i * 40, 80, 120]))).collect();
    // Give each candidate its own mean score; jitter makes rollouts differ.
    let scores: BTreeMap<String, f64> = hrs
        .iter()
        .zip([4.5, 3.0, 3.8, 2.2])
        .map(|(img, s)| (image_digest(img), s))
        .collect();
    let mock = MockScorer::new(MockConfig {
        scores,
        jitter_std: 0.2,
        seed: 42,
        ..MockConfig::default()
    });
    let gateway = Gateway::new(Arc::new(mock), &ScorerConfig::default()).recording();

    let detections = vec![Detection {
        label: "face".into(),
        confidence: 0.9,
        bbox: BBox::new(16.0, 16.0, 80.0, 80.0),
    }];
    let crops = filter_boxes(&detections, 128, 128, &FilterConfig::default())?;
    let group = GroupInput {
        group_id: "demo".into(),
        lr,
        candidates: hrs
            .into_iter()
            .enumerate()
            .map(|(i, hr)| CandidateInput {
                id: format!("cand-{i}"),
                hr,
                crops: crops.clone(),
            })
            .collect(),
    };
    let eval = gateway.evaluate_group(&group, 4, ScoringMode::Think).await?;
    println!("{} scorer requests", gateway.request_count());
    for c in &eval.candidates {
        println!("{}: fused {:.3} over rollouts {:?}", c.candidate_id, c.fused.mean(), c.rollouts_used);
    }

    let human = RankVector::from_whole(&[1, 3, 2, 4])?;
    let pred = scores_to_ranks(&eval.fused_means())?;
    println!("agreement with human ranking: {:.3}", agreement(&[pred], std::slice::from_ref(&human))?);
    let (rollout, k) = eval.rollout(LabelMatrix::from_ranks(&human), 1e-6)?;
    println!("rank rewards over {k} common rollouts:");
    for (i, row) in rank_rewards(&rollout)?.iter().enumerate() {
        println!("  cand-{i}: {row:.3?}");
    }
    Ok(())
}
