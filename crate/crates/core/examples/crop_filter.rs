//! Turns raw detections into a diverse set of crops, maps them onto the
//! low-resolution input and fuses per-region scores.
//!
//! Run with `cargo run --example crop_filter`.

use prefrank::crops::{
    filter_boxes_traced, fuse_scores, map_box_to_lr, BBox, Detection, FilterConfig, PixelRect,
};

fn det(label: &str, confidence: f64, b: [f64; 4]) -> Detection {
    Detection {
        label: label.into(),
        confidence,
        bbox: BBox::new(b[0], b[1], b[2], b[3]),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (w, h) = (1024, 768);
    let detections = vec![
        det("cloudy sky", 0.95, [0.0, 0.0, 1024.0, 250.0]),
        det("cat", 0.91, [100.0, 300.0, 400.0, 600.0]),
        det("cat", 0.60, [110.0, 310.0, 410.0, 610.0]),
        det("kitten", 0.80, [105.0, 305.0, 400.0, 600.0]),
        det("bicycle", 0.77, [500.0, 350.0, 900.0, 700.0]),
        det("fence", 0.70, [0.0, 600.0, 1024.0, 640.0]),
        det("sign", 0.15, [700.0, 100.0, 800.0, 200.0]),
    ];
    let cfg = FilterConfig::default();
    let (set, trace) = filter_boxes_traced(&detections, w, h, &cfg)?;
    let names = |idx: &[usize]| idx.iter().map(|&i| detections[i].label.as_str()).collect::<Vec<_>>();
    println!("after confidence: {:?}", names(&trace.confidence));
    println!("after nms:        {:?}", names(&trace.nms));
    println!("after blocklist:  {:?}", names(&trace.blocklist));
    println!("after geometry:   {:?}", names(&trace.geometry));
    println!("after dedup:      {:?}", names(&trace.dedup));
    println!("selected:         {:?}", names(&trace.top_k));

    let scale = 4;
    let mut regions = Vec::new();
    for (crop, score) in set.crops.iter().zip([4.4, 3.1]) {
        let hr = PixelRect::covering(&crop.bbox, w, h)?;
        let lr = map_box_to_lr(hr, scale, w / scale, h / scale)?;
        println!("{}: hr {:?} -> lr {:?}, area {}", crop.label, hr, lr, crop.area);
        regions.push((score, crop.area));
    }
    let fused = fuse_scores(3.6, set.global_area, &regions)?;
    println!("global 3.60 fused with crops -> {fused:.4}");
    Ok(())
}
