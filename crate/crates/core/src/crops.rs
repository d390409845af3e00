//! Global–local crop selection and score fusion.
//!
//! Detections from an external open-vocabulary detector are refined in five
//! stages before local scoring:
//!
//! 1. confidence threshold, then greedy NMS within each label,
//! 2. removal of low-texture labels (sky, cloud, ...),
//! 3. aspect-ratio and normalized-area limits,
//! 4. overlap deduplication keeping the larger box,
//! 5. diversity-aware top-K by lowest mean IoU.
//!
//! The surviving crops are scored separately and fused with the global score
//! by an area-weighted mean ([`fuse_scores`]).

use std::cmp::Ordering;
use std::path::Path;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CropError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),
    #[error("decoding {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, CropError>;

fn invalid(msg: impl Into<String>) -> CropError {
    CropError::InvalidInput(msg.into())
}

/// Axis-aligned box in pixel coordinates, serialized as `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite())
            && self.x0 < self.x1
            && self.y0 < self.y1
    }

    /// `max(w/h, h/w)`.
    pub fn aspect(&self) -> f64 {
        let (w, h) = (self.width(), self.height());
        (w / h).max(h / w)
    }

    pub fn clamped(&self, width: f64, height: f64) -> BBox {
        BBox {
            x0: self.x0.clamp(0.0, width),
            y0: self.y0.clamp(0.0, height),
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
        }
    }

    fn iou_unchecked(&self, other: &BBox) -> f64 {
        let iw = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let ih = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let inter = iw * ih;
        if inter == 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    if !a.is_valid() || !b.is_valid() {
        return Err(invalid("IoU of a degenerate box"));
    }
    Ok(a.iou_unchecked(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// A detection as it arrives from the detector, possibly in `[0, 1]`
/// normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub label: String,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default)]
    pub normalized: bool,
}

/// Detection ingestion file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<RawDetection>,
}

impl DetectionFile {
    pub fn load(path: &Path) -> std::result::Result<Self, crate::ConfigError> {
        crate::load_json(path)
    }

    pub fn prepared(&self) -> Result<Vec<Detection>> {
        prepare_detections(&self.detections, self.width, self.height)
    }
}

/// Converts normalized boxes to pixels and clamps to the image. Boxes that
/// collapse to zero area after clamping are dropped.
pub fn prepare_detections(raw: &[RawDetection], width: u32, height: u32) -> Result<Vec<Detection>> {
    if width == 0 || height == 0 {
        return Err(invalid("image dimensions must be positive"));
    }
    let (w, h) = (width as f64, height as f64);
    let mut out = Vec::with_capacity(raw.len());
    for d in raw {
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(invalid(format!("confidence {} outside [0, 1]", d.confidence)));
        }
        let b = d.bbox;
        if ![b.x0, b.y0, b.x1, b.y1].iter().all(|v| v.is_finite()) {
            return Err(invalid(format!("non-finite box for {:?}", d.label)));
        }
        let px = if d.normalized {
            BBox::new(b.x0 * w, b.y0 * h, b.x1 * w, b.y1 * h)
        } else {
            b
        };
        let clamped = px.clamped(w, h);
        if clamped.is_valid() {
            out.push(Detection {
                label: d.label.clone(),
                confidence: d.confidence,
                bbox: clamped,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub tau_box: f64,
    pub nms_iou: f64,
    pub blocklist: Vec<String>,
    pub max_aspect: f64,
    pub area_range: [f64; 2],
    pub dedup_iou: f64,
    pub k_max: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            tau_box: 0.25,
            nms_iou: 0.5,
            blocklist: ["sky", "cloud", "water", "snow", "fog"]
                .into_iter()
                .map(String::from)
                .collect(),
            max_aspect: 4.5,
            area_range: [0.1, 0.7],
            dedup_iou: 0.7,
            k_max: 4,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_box) {
            return Err(invalid("tau_box must lie in [0, 1]"));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(invalid("nms_iou must lie in (0, 1]"));
        }
        if !(self.dedup_iou > 0.0 && self.dedup_iou <= 1.0) {
            return Err(invalid("dedup_iou must lie in (0, 1]"));
        }
        if self.area_range[0].partial_cmp(&self.area_range[1]) != Some(std::cmp::Ordering::Less) {
            return Err(invalid("area_range low must be below high"));
        }
        if self.max_aspect.is_nan() || self.max_aspect < 1.0 {
            return Err(invalid("max_aspect must be at least 1"));
        }
        if self.k_max == 0 {
            return Err(invalid("k_max must be at least 1"));
        }
        Ok(())
    }

    fn is_blocked(&self, label: &str) -> bool {
        let label = label.to_lowercase();
        self.blocklist
            .iter()
            .any(|b| !b.is_empty() && label.contains(&b.to_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crop {
    pub label: String,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub area: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSet {
    pub image_width: u32,
    pub image_height: u32,
    pub global_area: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_score: Option<f64>,
    pub crops: Vec<Crop>,
}

impl CropSet {
    /// A crop set with only the global region.
    pub fn global_only(width: u32, height: u32) -> Self {
        CropSet {
            image_width: width,
            image_height: height,
            global_area: width as f64 * height as f64,
            global_score: None,
            crops: Vec::new(),
        }
    }

    pub fn boxes(&self) -> Vec<BBox> {
        self.crops.iter().map(|c| c.bbox).collect()
    }

    /// Area-weighted fusion of the stored scores.
    pub fn fused_score(&self) -> Result<f64> {
        let global = self
            .global_score
            .ok_or_else(|| invalid("global score is missing"))?;
        let crops = self
            .crops
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.score
                    .map(|s| (s, c.area))
                    .ok_or_else(|| invalid(format!("crop {i} has no score")))
            })
            .collect::<Result<Vec<_>>>()?;
        fuse_scores(global, self.global_area, &crops)
    }
}

/// Survivor indices (into the prepared detection list) after each stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterTrace {
    pub confidence: Vec<usize>,
    pub nms: Vec<usize>,
    pub blocklist: Vec<usize>,
    pub geometry: Vec<usize>,
    pub dedup: Vec<usize>,
    pub top_k: Vec<usize>,
}

pub fn filter_boxes(detections: &[Detection], image_w: u32, image_h: u32, config: &FilterConfig) -> Result<CropSet> {
    filter_boxes_traced(detections, image_w, image_h, config).map(|(set, _)| set)
}

/// Runs the five filtering stages and reports the survivors of each.
///
/// Output crops keep the input order of the detections.
pub fn filter_boxes_traced(
    detections: &[Detection],
    image_w: u32,
    image_h: u32,
    config: &FilterConfig,
) -> Result<(CropSet, FilterTrace)> {
    if image_w == 0 || image_h == 0 {
        return Err(invalid("image dimensions must be positive"));
    }
    config.validate()?;
    let (w, h) = (image_w as f64, image_h as f64);
    let boxes: Vec<BBox> = detections.iter().map(|d| d.bbox.clamped(w, h)).collect();
    for (d, b) in detections.iter().zip(&boxes) {
        if !b.is_valid() {
            return Err(invalid(format!("detection {:?} has a degenerate box inside the image", d.label)));
        }
    }
    let mut trace = FilterTrace::default();

    // Stage 1: confidence, then greedy NMS within each label.
    let confident: Vec<usize> = (0..detections.len())
        .filter(|&i| detections[i].confidence >= config.tau_box)
        .collect();
    trace.confidence = confident.clone();
    let mut order = confident;
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .total_cmp(&detections[a].confidence)
            .then(boxes[b].area().total_cmp(&boxes[a].area()))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let label = detections[i].label.trim().to_lowercase();
        let suppressed = kept.iter().any(|&k| {
            detections[k].label.trim().to_lowercase() == label
                && boxes[k].iou_unchecked(&boxes[i]) > config.nms_iou
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    trace.nms = kept.clone();

    // Stage 2: low-texture labels.
    kept.retain(|&i| !config.is_blocked(&detections[i].label));
    trace.blocklist = kept.clone();

    // Stage 3: geometry.
    let image_area = w * h;
    kept.retain(|&i| {
        let b = &boxes[i];
        let frac = b.area() / image_area;
        b.aspect() <= config.max_aspect && frac >= config.area_range[0] && frac <= config.area_range[1]
    });
    trace.geometry = kept.clone();

    // Stage 4: walk boxes from largest to smallest, dropping any that overlap
    // an already-kept larger box beyond the threshold.
    let mut by_area = kept.clone();
    by_area.sort_by(|&a, &b| {
        boxes[b]
            .area()
            .total_cmp(&boxes[a].area())
            .then(detections[b].confidence.total_cmp(&detections[a].confidence))
            .then(a.cmp(&b))
    });
    let mut deduped: Vec<usize> = Vec::new();
    for i in by_area {
        if deduped
            .iter()
            .all(|&k| boxes[k].iou_unchecked(&boxes[i]) <= config.dedup_iou)
        {
            deduped.push(i);
        }
    }
    deduped.sort_unstable();
    trace.dedup = deduped.clone();

    // Stage 5: diversity-aware top-K.
    let selected = select_diverse(&deduped, &boxes, config.k_max);
    trace.top_k = selected.clone();

    let crops = selected
        .iter()
        .map(|&i| Crop {
            label: detections[i].label.clone(),
            confidence: detections[i].confidence,
            bbox: boxes[i],
            area: boxes[i].area(),
            score: None,
        })
        .collect();
    Ok((
        CropSet {
            image_width: image_w,
            image_height: image_h,
            global_area: image_area,
            global_score: None,
            crops,
        },
        trace,
    ))
}

/// Keeps the `k` candidates with the lowest mean IoU against all other
/// candidates; ties prefer the larger box, then the earlier index. Returns
/// indices in ascending order.
pub fn select_diverse(candidates: &[usize], boxes: &[BBox], k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    if candidates.len() <= k {
        return candidates.to_vec();
    }
    let n = candidates.len();
    let mean_iou: Vec<f64> = candidates
        .iter()
        .map(|&i| {
            let total: f64 = candidates
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| boxes[i].iou_unchecked(&boxes[j]))
                .sum();
            total / (n - 1) as f64
        })
        .collect();
    let cmp = |a: &usize, b: &usize| -> Ordering {
        mean_iou[*a]
            .total_cmp(&mean_iou[*b])
            .then(boxes[candidates[*b]].area().total_cmp(&boxes[candidates[*a]].area()))
            .then(candidates[*a].cmp(&candidates[*b]))
    };
    let mut slots: Vec<usize> = (0..n).collect();
    slots.select_nth_unstable_by(k - 1, cmp);
    let mut chosen: Vec<usize> = slots[..k].iter().map(|&s| candidates[s]).collect();
    chosen.sort_unstable();
    chosen
}

/// Area-weighted mean of the global score and the crop scores:
/// `(A_g S_g + sum A_i S_i) / (A_g + sum A_i)`.
pub fn fuse_scores(global_score: f64, global_area: f64, crops: &[(f64, f64)]) -> Result<f64> {
    if !(global_area.is_finite() && global_area > 0.0) {
        return Err(invalid("global area must be positive"));
    }
    if !global_score.is_finite() {
        return Err(invalid("global score must be finite"));
    }
    let mut num = global_area * global_score;
    let mut den = global_area;
    for (i, &(score, area)) in crops.iter().enumerate() {
        if !(area.is_finite() && area > 0.0) {
            return Err(invalid(format!("crop {i} area must be positive")));
        }
        if !score.is_finite() {
            return Err(invalid(format!("crop {i} score must be finite")));
        }
        num += area * score;
        den += area;
    }
    Ok(num / den)
}

/// Integer pixel rectangle, half-open: columns `x0..x1`, rows `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl From<[u32; 4]> for PixelRect {
    fn from(v: [u32; 4]) -> Self {
        PixelRect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<PixelRect> for [u32; 4] {
    fn from(r: PixelRect) -> Self {
        [r.x0, r.y0, r.x1, r.y1]
    }
}

impl PixelRect {
    pub const fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        PixelRect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> f64 {
        self.width() as f64 * self.height() as f64
    }

    pub fn is_degenerate(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    /// Smallest pixel rectangle covering `b`, clamped to the image.
    pub fn covering(b: &BBox, width: u32, height: u32) -> Result<Self> {
        let r = PixelRect {
            x0: b.x0.floor().clamp(0.0, width as f64) as u32,
            y0: b.y0.floor().clamp(0.0, height as f64) as u32,
            x1: b.x1.ceil().clamp(0.0, width as f64) as u32,
            y1: b.y1.ceil().clamp(0.0, height as f64) as u32,
        };
        if r.is_degenerate() {
            return Err(CropError::DegenerateRegion(format!("{b:?} covers no pixels")));
        }
        Ok(r)
    }

    pub fn as_bbox(&self) -> BBox {
        BBox::new(self.x0 as f64, self.y0 as f64, self.x1 as f64, self.y1 as f64)
    }
}

/// Maps a high-resolution rectangle to the low-resolution grid: origin
/// floored, far corner ceiled, then clamped to the LR image.
pub fn map_box_to_lr(hr: PixelRect, scale: u32, lr_width: u32, lr_height: u32) -> Result<PixelRect> {
    if scale == 0 {
        return Err(invalid("scale must be at least 1"));
    }
    let r = PixelRect {
        x0: (hr.x0 / scale).min(lr_width),
        y0: (hr.y0 / scale).min(lr_height),
        x1: hr.x1.div_ceil(scale).min(lr_width),
        y1: hr.y1.div_ceil(scale).min(lr_height),
    };
    if r.is_degenerate() {
        return Err(CropError::DegenerateRegion(format!("{hr:?} maps to an empty LR region")));
    }
    Ok(r)
}

pub fn load_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| CropError::Decode {
        path: path.display().to_string(),
        source,
    })
}

/// Copies each rectangle out of `image`.
pub fn crop_regions(image: &DynamicImage, rects: &[PixelRect]) -> Result<Vec<DynamicImage>> {
    rects
        .iter()
        .map(|r| {
            if r.is_degenerate() || r.x1 > image.width() || r.y1 > image.height() {
                return Err(invalid(format!(
                    "region {r:?} is outside the {}x{} image",
                    image.width(),
                    image.height()
                )));
            }
            Ok(image.crop_imm(r.x0, r.y0, r.width(), r.height()))
        })
        .collect()
}
