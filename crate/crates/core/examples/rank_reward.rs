//! Rank rewards for one group of scored rollouts.
//!
//! Run with `cargo run --example rank_reward`.

use prefrank::ranking::RankVector;
use prefrank::reward::{rank_rewards, thurstone_prob, GroupRollout, LabelMatrix, ScoreDistribution};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Four rollouts of the evaluator for each of three candidates.
    let rollouts = vec![
        vec![4.1, 4.3, 3.9, 4.2],
        vec![3.2, 3.0, 3.5, 3.1],
        vec![3.3, 2.9, 3.4, 3.0],
    ];
    // Humans prefer candidate 0 and tie candidates 1 and 2.
    let labels = LabelMatrix::from_ranks(&RankVector::from_f64s(&[1.0, 2.5, 2.5])?);
    let dists = rollouts
        .into_iter()
        .map(ScoreDistribution::new)
        .collect::<Result<Vec<_>, _>>()?;
    for (i, d) in dists.iter().enumerate() {
        println!("candidate {i}: mean {:.3}, variance {:.4}", d.mean(), d.variance());
    }
    let gamma = 1e-6;
    let p = thurstone_prob(dists[1].samples()[0], &dists[1], &dists[2], gamma)?;
    println!("P(candidate 1 rollout 0 beats candidate 2) = {p:.4} (label 0.5)");

    let group = GroupRollout::new(dists, labels, gamma)?;
    for (i, row) in rank_rewards(&group)?.iter().enumerate() {
        let shown: Vec<String> = row.iter().map(|r| format!("{r:.4}")).collect();
        println!("candidate {i} rewards: [{}]", shown.join(", "));
    }
    Ok(())
}
