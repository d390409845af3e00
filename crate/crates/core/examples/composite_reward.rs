//! Weighted combination of the rank, perceptual-distance and quality rewards,
//! followed by group advantages.
//!
//! Run with `cargo run --example composite_reward`.

use prefrank::reward::{composite_reward, composite_rewards_for_group, group_advantages, RewardComponents, RewardWeights};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let weights = RewardWeights::new(1.0, 0.5, 0.2)?;
    let one = composite_reward(0.9, 0.15, 3.8, weights)?;
    println!("single sample: {}", serde_json::to_string(&one)?);

    let group = [
        RewardComponents { r_ref: 0.92, r_lpips: 0.12, r_deqa: 3.9 },
        RewardComponents { r_ref: 0.55, r_lpips: 0.20, r_deqa: 3.6 },
        RewardComponents { r_ref: 0.31, r_lpips: 0.35, r_deqa: 3.1 },
        RewardComponents { r_ref: 0.70, r_lpips: 0.18, r_deqa: 4.2 },
    ];
    for normalize in [false, true] {
        let totals = composite_rewards_for_group(&group, weights, normalize, 1e-8)?;
        let adv = group_advantages(&totals, 5.0, 1e-8)?;
        println!("normalize components = {normalize}");
        println!("  totals     {totals:.4?}");
        println!("  advantages {adv:.4?}");
    }
    Ok(())
}
