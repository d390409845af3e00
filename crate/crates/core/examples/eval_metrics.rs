//! Ranking-quality metrics for predicted scores against human rankings.
//!
//! Run with `cargo run --example eval_metrics`.

use prefrank::ranking::{
    agreement, aggregate_ranks, filter_at_1, metrics_report, recall_at_1, scores_to_ranks, AnnotatorRanking,
    DeviationBasis, RankVector,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Three annotators rank the same two groups of four candidates (1 = best).
    let annotations = [
        [[1, 2, 3, 4], [1, 3, 2, 4], [2, 1, 3, 4]],
        [[4, 3, 1, 2], [4, 3, 2, 1], [3, 4, 1, 2]],
    ];
    let mut gt = Vec::new();
    let mut per_annotator = Vec::new();
    for (group, anns) in annotations.iter().enumerate() {
        let ranks: Vec<RankVector> = anns.iter().map(|a| RankVector::from_whole(a)).collect::<Result<_, _>>()?;
        for (a, r) in ranks.iter().enumerate() {
            per_annotator.push(AnnotatorRanking {
                annotator_id: format!("annotator-{a}"),
                group,
                ranks: r.clone(),
            });
        }
        let agg = aggregate_ranks(&ranks)?;
        println!("group {group}: aggregate ranks {:?}", agg.to_f64s());
        gt.push(agg);
    }

    // Model scores: larger is better. The 3.001 vs 3.004 pair ties after rounding.
    let pred = vec![
        scores_to_ranks(&[4.20, 3.001, 3.004, 1.5])?,
        scores_to_ranks(&[1.0, 2.0, 4.5, 3.9])?,
    ];
    println!("predicted ranks: {:?}", pred.iter().map(|r| r.to_f64s()).collect::<Vec<_>>());
    println!("agreement  {:.4}", agreement(&pred, &gt)?);
    println!("recall@1   {:.4}", recall_at_1(&pred, &gt)?);
    println!("filter@1   {:.4}", filter_at_1(&pred, &gt)?);

    let report = metrics_report(&pred, &gt, &per_annotator, DeviationBasis::RawAnnotator)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
