//! Saliency evaluation: thresholded precision-recall curves, F-measure,
//! mean absolute error and the structure measure.

use crate::error::{Error, Result};

/// beta^2 of the F-measure.
pub const F_BETA2: f64 = 0.3;
/// Mixing weight between the object and region terms of the S-measure.
pub const S_LAMBDA: f64 = 0.5;

/// One evaluated (prediction, ground truth) pair.
#[derive(Debug, Clone)]
pub struct EvalEntry {
    pub id: String,
    /// Saliency map in [0,1], row-major.
    pub map: Vec<f64>,
    /// Binary ground truth.
    pub truth: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

/// Per-image scores under the adaptive threshold.
#[derive(Debug, Clone)]
pub struct PerImageMetrics {
    pub id: String,
    pub mae: f64,
    pub s_measure: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_adaptive: f64,
}

/// Dataset-level evaluation results.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    /// 256 (precision, recall) points for thresholds 0..=255.
    pub pr_curve: Vec<(f64, f64)>,
    pub f_max: f64,
    pub f_adaptive: f64,
    pub mae: f64,
    pub s_measure: f64,
    pub per_image: Vec<PerImageMetrics>,
}

/// Weighted harmonic mean of precision and recall; 0 when both vanish.
pub fn f_measure(precision: f64, recall: f64, beta2: f64) -> f64 {
    let denom = beta2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / denom
    }
}

/// Mean absolute error between a map and its ground truth.
pub fn mae(map: &[f64], truth: &[f64]) -> f64 {
    debug_assert_eq!(map.len(), truth.len());
    map.iter()
        .zip(truth)
        .map(|(m, t)| (m - t).abs())
        .sum::<f64>()
        / map.len() as f64
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Dataset precision/recall at thresholds 0..=255.
///
/// Maps are quantized to 0-255; a pixel counts as positive when its level is
/// `>= t`. Counts pool over the whole dataset per threshold. An empty
/// prediction scores precision 1 by convention; an empty ground truth scores
/// recall 1.
pub fn pr_curve(entries: &[EvalEntry]) -> Result<Vec<(f64, f64)>> {
    if entries.is_empty() {
        return Err(Error::Data("pr_curve: empty dataset".into()));
    }
    let mut tp = [0u64; 256];
    let mut fp = [0u64; 256];
    let mut fn_ = [0u64; 256];
    for e in entries {
        if e.map.len() != e.truth.len() {
            return Err(Error::Data(format!(
                "pr_curve: map/truth size mismatch for `{}`",
                e.id
            )));
        }
        for (m, t) in e.map.iter().zip(&e.truth) {
            let q = quantize(*m) as usize;
            let positive_truth = *t > 0.5;
            // Level q passes thresholds 0..=q.
            for (lvl, (tp_l, fp_l)) in tp.iter_mut().zip(fp.iter_mut()).enumerate() {
                if lvl <= q {
                    if positive_truth {
                        *tp_l += 1;
                    } else {
                        *fp_l += 1;
                    }
                } else if positive_truth {
                    fn_[lvl] += 1;
                }
            }
        }
    }
    Ok((0..256)
        .map(|t| {
            let precision = if tp[t] + fp[t] == 0 {
                1.0
            } else {
                tp[t] as f64 / (tp[t] + fp[t]) as f64
            };
            let recall = if tp[t] + fn_[t] == 0 {
                1.0
            } else {
                tp[t] as f64 / (tp[t] + fn_[t]) as f64
            };
            (precision, recall)
        })
        .collect())
}

fn confusion(map: &[f64], truth: &[f64], threshold: f64) -> (u64, u64, u64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (m, t) in map.iter().zip(truth) {
        let positive = *m >= threshold;
        let fg = *t > 0.5;
        match (positive, fg) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    (tp, fp, fn_)
}

/// Object-aware similarity of one region.
fn object_score(values: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.collect();
    if vals.is_empty() {
        return 0.0;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = if vals.len() > 1 {
        (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + std + f64::EPSILON)
}

/// SSIM-style similarity of one region pair.
fn region_ssim(map: &[f64], truth: &[f64]) -> f64 {
    let n = map.len() as f64;
    if map.is_empty() {
        return 1.0;
    }
    let x = map.iter().sum::<f64>() / n;
    let y = truth.iter().sum::<f64>() / n;
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    if map.len() > 1 {
        for (m, t) in map.iter().zip(truth) {
            sx += (m - x) * (m - x);
            sy += (t - y) * (t - y);
            sxy += (m - x) * (t - y);
        }
        sx /= n - 1.0;
        sy /= n - 1.0;
        sxy /= n - 1.0;
    }
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure: `lambda * S_object + (1 - lambda) * S_region` with
/// degenerate all-background / all-foreground truths scored from the map
/// mean alone.
pub fn s_measure(map: &[f64], truth: &[f64], height: usize, width: usize, lambda: f64) -> f64 {
    debug_assert_eq!(map.len(), height * width);
    debug_assert_eq!(truth.len(), height * width);
    let n = map.len() as f64;
    let mu = truth.iter().sum::<f64>() / n;
    let map_mean = map.iter().sum::<f64>() / n;
    if mu == 0.0 {
        return 1.0 - map_mean;
    }
    if mu == 1.0 {
        return map_mean;
    }

    // Object term: foreground compared against the map, background against
    // its complement.
    let fg = object_score(
        map.iter()
            .zip(truth)
            .filter(|(_, t)| **t > 0.5)
            .map(|(m, _)| *m),
    );
    let bg = object_score(
        map.iter()
            .zip(truth)
            .filter(|(_, t)| **t <= 0.5)
            .map(|(m, _)| 1.0 - *m),
    );
    let s_object = mu * fg + (1.0 - mu) * bg;

    // Region term: split both maps at the foreground centroid (1-based
    // rounding), compare the four quadrants, weight by quadrant area.
    let mut row_sum = 0.0;
    let mut col_sum = 0.0;
    let mut count = 0.0;
    for r in 0..height {
        for c in 0..width {
            if truth[r * width + c] > 0.5 {
                row_sum += (r + 1) as f64;
                col_sum += (c + 1) as f64;
                count += 1.0;
            }
        }
    }
    let cy = (row_sum / count).round() as usize; // 1-based split row
    let cx = (col_sum / count).round() as usize;
    let quadrant = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
        let mut m = Vec::with_capacity(rows.len() * cols.len());
        let mut t = Vec::with_capacity(rows.len() * cols.len());
        for r in rows.clone() {
            for c in cols.clone() {
                m.push(map[r * width + c]);
                t.push(truth[r * width + c]);
            }
        }
        (m, t)
    };
    let total = (height * width) as f64;
    let w1 = (cx * cy) as f64 / total;
    let w2 = ((width - cx) * cy) as f64 / total;
    let w3 = (cx * (height - cy)) as f64 / total;
    let w4 = 1.0 - w1 - w2 - w3;
    let quads = [
        (quadrant(0..cy, 0..cx), w1),
        (quadrant(0..cy, cx..width), w2),
        (quadrant(cy..height, 0..cx), w3),
        (quadrant(cy..height, cx..width), w4),
    ];
    let s_region: f64 = quads
        .iter()
        .map(|((m, t), w)| w * region_ssim(m, t))
        .sum();

    (lambda * s_object + (1.0 - lambda) * s_region).max(0.0)
}

/// Evaluate a dataset: pooled PR curve with its max-F, adaptive-threshold
/// F (threshold 2x map mean per image, precision/recall averaged over
/// images), mean MAE and mean S-measure.
pub fn evaluate(entries: &[EvalEntry]) -> Result<MetricsReport> {
    if entries.is_empty() {
        return Err(Error::Data("evaluate: empty dataset".into()));
    }
    // Aggregation runs in id order so results are exactly permutation
    // invariant (float summation is order-sensitive).
    let mut entries: Vec<&EvalEntry> = entries.iter().collect();
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let entries: Vec<EvalEntry> = entries.into_iter().cloned().collect();
    let curve = pr_curve(&entries)?;
    let f_max = curve
        .iter()
        .map(|(p, r)| f_measure(*p, *r, F_BETA2))
        .fold(0.0, f64::max);

    let mut per_image = Vec::with_capacity(entries.len());
    let (mut p_sum, mut r_sum, mut mae_sum, mut s_sum) = (0.0, 0.0, 0.0, 0.0);
    for e in &entries {
        let threshold = 2.0 * e.map.iter().sum::<f64>() / e.map.len() as f64;
        let (tp, fp, fn_) = confusion(&e.map, &e.truth, threshold);
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let image_mae = mae(&e.map, &e.truth);
        let s = s_measure(&e.map, &e.truth, e.height, e.width, S_LAMBDA);
        p_sum += precision;
        r_sum += recall;
        mae_sum += image_mae;
        s_sum += s;
        per_image.push(PerImageMetrics {
            id: e.id.clone(),
            mae: image_mae,
            s_measure: s,
            precision,
            recall,
            f_adaptive: f_measure(precision, recall, F_BETA2),
        });
    }
    let count = entries.len() as f64;
    Ok(MetricsReport {
        pr_curve: curve,
        f_max,
        f_adaptive: f_measure(p_sum / count, r_sum / count, F_BETA2),
        mae: mae_sum / count,
        s_measure: s_sum / count,
        per_image,
    })
}
