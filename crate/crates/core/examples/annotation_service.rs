//! The annotation workflow end to end: ingest, qualify, shuffled tasks,
//! submissions, finalization, export and the REST router.
//!
//! Run with `cargo run --example annotation_service`. Pass `--serve` to keep
//! the REST API listening on 127.0.0.1:8080 afterwards.

use std::collections::BTreeMap;
use std::sync::Arc;

use image::{DynamicImage, Rgb, RgbImage};
use prefrank::dataset::{self, CandidateRef, DatasetService, GoldItem, GroupRecord, ServiceConfig};
use prefrank::ranking::RankVector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = tempfile::tempdir()?;
    let data = tempfile::tempdir()?;
    let img = |w, c| DynamicImage::ImageRgb8(RgbImage::from_pixel(w, w, Rgb(c)));
    img(16, [0, 0, 0]).save(corpus.path().join("lr.png"))?;
    let sources = ["bicubic", "gan", "diffusion", "ours"];
    for (i, _) in sources.iter().enumerate() {
        img(64, [i as u8 * 50, 10, 10]).save(corpus.path().join(format!("sr{i}.png")))?;
    }

    let config = ServiceConfig {
        corpus_root: Some(corpus.path().to_path_buf()),
        seed: 1,
        ..ServiceConfig::default()
    };
    let svc = DatasetService::open(data.path(), config.clone())?;
    svc.ingest_group(GroupRecord {
        group_id: "scene-1".into(),
        lr_path: "lr.png".into(),
        candidates: sources
            .iter()
            .enumerate()
            .map(|(i, s)| CandidateRef {
                id: format!("scene-1-{s}"),
                path: format!("sr{i}.png"),
                source: s.to_string(),
            })
            .collect(),
        metadata: BTreeMap::new(),
    })?;

    let gold: Vec<GoldItem> = (0..20)
        .map(|i| GoldItem {
            group_id: format!("gold-{i}"),
            ranks: RankVector::from_whole(&[1, 2, 3, 4]).unwrap(),
        })
        .collect();
    // What each annotator thinks of the four candidates, in canonical order.
    let opinions = [("ana", [4.0, 3.0, 2.0, 1.0]), ("ben", [4.0, 2.0, 2.0, 1.0]), ("chi", [3.0, 4.0, 2.0, 1.0])];
    for (who, canonical) in opinions {
        let profile = svc.qualify_annotator(who, &gold, &vec![RankVector::from_whole(&[1, 2, 3, 4])?; 20])?;
        println!("{who}: qualification {:.2} -> {:?}", profile.qualification_score, profile.status);
        let task = svc.next_task(who)?.expect("an open group");
        // The UI shows candidates in a per-annotator order; ranks are given in that order.
        let order = svc.display_order(who, &task.group_id);
        let display: Vec<f64> = order.iter().map(|&c| canonical[c]).collect();
        println!("  sees {:?}, submits {display:?}", task.candidates.iter().map(|c| &c.image_url).collect::<Vec<_>>());
        svc.submit_ranking(who, &task.group_id, &display)?;
    }
    let summary = svc.finalize_group("scene-1")?;
    println!("finalized: {}", serde_json::to_string(&summary)?);
    println!("export:\n{}", svc.export_jsonl()?);
    let wins = svc.report_win_rates()?;
    println!("P(ours beats gan) = {:?}", wins.get("ours", "gan"));

    drop(svc);
    let reopened = Arc::new(DatasetService::open(data.path(), config)?);
    println!("after restart: {:?}", reopened.group("scene-1")?.status);
    if std::env::args().any(|a| a == "--serve") {
        let addr = "127.0.0.1:8080".parse()?;
        tokio::runtime::Runtime::new()?.block_on(dataset::api::serve(reopened, addr))?;
    }
    Ok(())
}
