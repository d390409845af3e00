//! Independent reference implementations used as test oracles, plus small
//! fixture builders. Nothing here calls into the library's math.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use image::{DynamicImage, Rgb, RgbImage};

/// Mid-rank of each item by counting: `1 + #better + (#tied_others) / 2`,
/// where larger keys are better.
pub fn naive_mid_ranks(keys: &[i64]) -> Vec<f64> {
    keys.iter()
        .map(|&k| {
            let better = keys.iter().filter(|&&o| o > k).count() as f64;
            let tied_others = keys.iter().filter(|&&o| o == k).count() as f64 - 1.0;
            1.0 + better + tied_others / 2.0
        })
        .collect()
}

fn sign(a: f64, b: f64) -> i32 {
    if a < b {
        -1
    } else if a > b {
        1
    } else {
        0
    }
}

/// Pooled pairwise agreement by explicit pair enumeration.
pub fn naive_agreement(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> f64 {
    let mut matches = 0usize;
    let mut total = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for i in 0..p.len() {
            for j in (i + 1)..p.len() {
                total += 1;
                if sign(p[i], p[j]) == sign(g[i], g[j]) {
                    matches += 1;
                }
            }
        }
    }
    matches as f64 / total as f64
}

fn arg_set(r: &[f64], want_min: bool) -> Vec<usize> {
    let target = if want_min {
        r.iter().cloned().fold(f64::INFINITY, f64::min)
    } else {
        r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    };
    (0..r.len()).filter(|&i| r[i] == target).collect()
}

fn naive_hit_rate(pred: &[Vec<f64>], gt: &[Vec<f64>], want_min: bool) -> f64 {
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| {
            let a = arg_set(p, want_min);
            let b = arg_set(g, want_min);
            a.iter().any(|i| b.contains(i))
        })
        .count();
    hits as f64 / pred.len() as f64
}

pub fn naive_recall(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> f64 {
    naive_hit_rate(pred, gt, true)
}

pub fn naive_filter(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> f64 {
    naive_hit_rate(pred, gt, false)
}

/// Average-rank aggregation: arithmetic mean per candidate, then mid-ranks
/// of the means (smaller mean is better).
pub fn naive_aggregate(annotations: &[Vec<f64>]) -> Vec<f64> {
    let n = annotations[0].len();
    // Sums of half-units are exact integers; compare those.
    let sums: Vec<i64> = (0..n)
        .map(|c| annotations.iter().map(|a| (a[c] * 2.0).round() as i64).sum())
        .collect();
    let keys: Vec<i64> = sums.iter().map(|s| -s).collect();
    naive_mid_ranks(&keys)
}

/// erf by its Maclaurin series, accurate to ~1e-14 for |x| <= 3.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let x2 = x * x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= -x2 / n;
        let add = term / (2.0 * n + 1.0);
        sum += add;
        if add.abs() < 1e-17 * sum.abs().max(1e-300) && n > 5.0 {
            break;
        }
        if n > 500.0 {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

/// erfc for x >= 2 by Lentz-free backward evaluation of the Laplace
/// continued fraction.
fn erfc_cf(x: f64) -> f64 {
    let mut tail = x;
    for k in (1..=300).rev() {
        tail = x + (k as f64 / 2.0) / tail;
    }
    (-x * x).exp() / std::f64::consts::PI.sqrt() / tail
}

fn erfc_oracle(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc_oracle(-x)
    } else if x <= 2.5 {
        1.0 - erf_series(x)
    } else {
        erfc_cf(x)
    }
}

/// Standard normal CDF from the oracle erfc.
pub fn phi_oracle(z: f64) -> f64 {
    0.5 * erfc_oracle(-z / std::f64::consts::SQRT_2)
}

/// Gaussian CDF by composite Simpson quadrature of the density on
/// `[0, |z|]`; an independent cross-check of [`phi_oracle`].
pub fn phi_quadrature(z: f64) -> f64 {
    let a = z.abs();
    let n = 4000;
    let h = a / n as f64;
    let f = |t: f64| (-t * t / 2.0).exp();
    let mut s = f(0.0) + f(a);
    for i in 1..n {
        let t = i as f64 * h;
        s += if i % 2 == 1 { 4.0 * f(t) } else { 2.0 * f(t) };
    }
    let half = s * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt();
    if z >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

pub fn mean_var(samples: &[f64]) -> (f64, f64) {
    let k = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / k;
    (m, samples.iter().map(|s| (s - m).powi(2)).sum::<f64>() / k)
}

pub fn thurstone_oracle(q: f64, i: &[f64], j: &[f64], gamma: f64) -> f64 {
    let (_, vi) = mean_var(i);
    let (mj, vj) = mean_var(j);
    phi_oracle((q - mj) / (vi + vj + gamma).sqrt())
}

pub fn fidelity_oracle(p: f64, p_hat: f64) -> f64 {
    (p * p_hat).sqrt() + ((1.0 - p) * (1.0 - p_hat)).sqrt()
}

/// IoU of `[x0, y0, x1, y1]` boxes.
pub fn naive_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    inter / (area(a) + area(b) - inter)
}

/// Diversity top-K by full sort of (mean IoU asc, area desc, index asc).
pub fn naive_top_k(boxes: &[[f64; 4]], k: usize) -> Vec<usize> {
    let n = boxes.len();
    if n <= k {
        return (0..n).collect();
    }
    let mut rows: Vec<(f64, f64, usize)> = (0..n)
        .map(|i| {
            let m = (0..n).filter(|&j| j != i).map(|j| naive_iou(boxes[i], boxes[j])).sum::<f64>() / (n - 1) as f64;
            let area = (boxes[i][2] - boxes[i][0]) * (boxes[i][3] - boxes[i][1]);
            (m, area, i)
        })
        .collect();
    rows.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(b.1.partial_cmp(&a.1).unwrap())
            .then(a.2.cmp(&b.2))
    });
    let mut out: Vec<usize> = rows[..k].iter().map(|r| r.2).collect();
    out.sort();
    out
}

/// All weak orderings of `n` items as level vectors (0 = best level).
pub fn weak_orderings(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0; n];
    fn rec(i: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            let max = *cur.iter().max().unwrap();
            if (0..=max).all(|l| cur.contains(&l)) {
                out.push(cur.clone());
            }
            return;
        }
        for l in 0..cur.len() {
            cur[i] = l;
            rec(i + 1, cur, out);
        }
    }
    rec(0, &mut cur, &mut out);
    out
}

pub fn solid_rgb(w: u32, h: u32, color: [u8; 3]) -> DynamicImage {
    DynamicImage::ImageRgb8(RgbImage::from_pixel(w, h, Rgb(color)))
}

pub fn write_png(path: &Path, img: &DynamicImage) {
    img.save(path).unwrap();
}

pub fn fixture_path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

/// Writes `n` four-candidate groups of solid PNGs under `dir`.
pub fn write_corpus(dir: &Path, n: usize) -> Vec<prefrank::dataset::GroupRecord> {
    (0..n)
        .map(|g| {
            let lr = format!("g{g}/lr.png");
            std::fs::create_dir_all(dir.join(format!("g{g}"))).unwrap();
            write_png(&dir.join(&lr), &solid_rgb(8, 8, [g as u8, 0, 0]));
            let candidates = (0..4)
                .map(|c| {
                    let path = format!("g{g}/sr{c}.png");
                    write_png(&dir.join(&path), &solid_rgb(32, 32, [g as u8, c as u8, 9]));
                    prefrank::dataset::CandidateRef {
                        id: format!("g{g}-c{c}"),
                        path,
                        source: ["modelA", "modelB", "modelC", "modelD"][c].into(),
                    }
                })
                .collect();
            prefrank::dataset::GroupRecord {
                group_id: format!("group-{g}"),
                lr_path: lr,
                candidates,
                metadata: BTreeMap::from([("split".to_string(), "test".to_string())]),
            }
        })
        .collect()
}
