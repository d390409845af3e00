//! Group-normalized advantages with outlier clipping.
//!
//! Run with `cargo run --example advantages`.

use prefrank::reward::{group_advantages, RewardConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RewardConfig::default();
    // One large outlier among 63 zeros would sit near 7.9 standard deviations.
    let mut outlier = vec![0.0; 63];
    outlier.push(10.0);
    let groups = [vec![1.0, 2.0, 3.0], vec![0.5; 4], outlier];
    for rewards in &groups {
        let adv = group_advantages(rewards, cfg.clip_max, cfg.eps)?;
        let max = adv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = adv.iter().cloned().fold(f64::INFINITY, f64::min);
        println!("{} rewards -> advantages in [{min:.4}, {max:.4}]", rewards.len());
        if rewards.len() <= 4 {
            println!("  {adv:.4?}");
        }
    }
    Ok(())
}
