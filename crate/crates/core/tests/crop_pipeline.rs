mod common;

use prefrank::crops::{filter_boxes, filter_boxes_traced, DetectionFile, FilterConfig};

fn fixture() -> DetectionFile {
    DetectionFile::load(&common::fixture_path("detections_12.json")).unwrap()
}

fn labels(file: &DetectionFile, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| file.detections[i].label.clone()).collect()
}

#[test]
fn each_stage_removes_its_boxes() {
    let file = fixture();
    let dets = file.prepared().unwrap();
    let (set, trace) = filter_boxes_traced(&dets, 1000, 1000, &FilterConfig::default()).unwrap();
    let dropped = |before: &[usize], after: &[usize]| {
        let gone: Vec<usize> = before.iter().copied().filter(|i| !after.contains(i)).collect();
        labels(&file, &gone)
    };
    let all: Vec<usize> = (0..12).collect();
    assert_eq!(dropped(&all, &trace.confidence), ["person", "bench"]);
    assert_eq!(dropped(&trace.confidence, &trace.nms), ["dog"]);
    assert_eq!(dropped(&trace.nms, &trace.blocklist), ["blue sky", "Snow"]);
    assert_eq!(dropped(&trace.blocklist, &trace.geometry), ["lamp post", "window"]);
    assert_eq!(dropped(&trace.geometry, &trace.dedup), ["puppy"]);
    assert_eq!(trace.top_k, trace.dedup);
    assert_eq!(labels(&file, &trace.top_k), ["dog", "car", "tree", "building"]);
    assert_eq!(set.crops.len(), 4);
    // The higher-confidence dog survives NMS.
    assert_eq!(set.crops[0].confidence, 0.9);
}

#[test]
fn k_max_two_keeps_two() {
    let file = fixture();
    let cfg = FilterConfig {
        k_max: 2,
        ..FilterConfig::default()
    };
    let set = filter_boxes(&file.prepared().unwrap(), 1000, 1000, &cfg).unwrap();
    let got: Vec<&str> = set.crops.iter().map(|c| c.label.as_str()).collect();
    // All four survivors are disjoint and equal in area; the index breaks the tie.
    assert_eq!(got, ["dog", "car"]);
}

#[test]
fn blocklist_only_detections_give_no_crops() {
    let mut file = fixture();
    file.detections.retain(|d| d.label == "blue sky" || d.label == "Snow");
    let set = filter_boxes(&file.prepared().unwrap(), 1000, 1000, &FilterConfig::default()).unwrap();
    assert!(set.crops.is_empty());
    assert_eq!(set.global_area, 1e6);
}

#[test]
fn output_is_independent_of_input_permutation() {
    let file = fixture();
    let dets = file.prepared().unwrap();
    let mut reversed = dets.clone();
    reversed.reverse();
    let a = filter_boxes(&dets, 1000, 1000, &FilterConfig::default()).unwrap();
    let b = filter_boxes(&reversed, 1000, 1000, &FilterConfig::default()).unwrap();
    let mut la: Vec<_> = a.crops.iter().map(|c| c.label.clone()).collect();
    let mut lb: Vec<_> = b.crops.iter().map(|c| c.label.clone()).collect();
    la.sort();
    lb.sort();
    assert_eq!(la, lb);
}
