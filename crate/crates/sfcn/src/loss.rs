//! The weighted structural loss: class-balanced cross-entropy, semantic
//! content matching through a frozen multi-layer extractor, and a smoothed
//! L1 edge term, combined as `wbce + mu * sc + gamma * s1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv2d, ops, ConvSpec, Tensor};

/// Probability clamp bound applied before logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Loss weights and extractor selection.
#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Weight of the semantic content term.
    pub mu: f64,
    /// Weight of the smooth-L1 term.
    pub gamma: f64,
    /// Branch threshold of the smooth-L1 term.
    pub epsilon_s1: f64,
    /// Per-extractor-layer weights for the semantic content term.
    pub lambda_per_layer: Vec<f64>,
    /// Extractor layer indices (0-based) feeding the semantic content term.
    pub selected_layers: Vec<usize>,
    /// Swap the cross-entropy class weights to (1-rho, rho). As printed the
    /// weighting is rho on foreground, which down-weights the rare class;
    /// the switch selects the balancing convention instead.
    pub wbce_complement: bool,
    /// Seed of the frozen extractor weights.
    pub extractor_seed: u64,
}

impl Default for LossConfig {
    fn default() -> LossConfig {
        LossConfig {
            mu: 0.01,
            gamma: 20.0,
            epsilon_s1: 0.1,
            lambda_per_layer: vec![1.0; 9],
            selected_layers: (0..9).collect(),
            wbce_complement: false,
            extractor_seed: 17,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mu < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config("loss weights mu, gamma must be >= 0".into()));
        }
        if self.epsilon_s1 <= 0.0 {
            return Err(Error::Config("smooth-L1 epsilon must be positive".into()));
        }
        if self.lambda_per_layer.iter().any(|l| *l < 0.0) {
            return Err(Error::Config("lambda weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// One frozen extractor convolution.
pub struct ExtractorLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

/// Fixed-weight convolutional feature extractor for the semantic content
/// term. Weights are constants off the tape, so they can never receive
/// gradient updates.
pub struct FeatureExtractor {
    pub in_channels: usize,
    pub layers: Vec<ExtractorLayer>,
}

impl FeatureExtractor {
    /// Nine 3x3 convolutions with channel plan (8,8,16,16,32,32,64,64,64)
    /// and three stride-2 downsamplings, msra-initialized from `seed`.
    pub fn new(seed: u64) -> FeatureExtractor {
        let channels = [8usize, 8, 16, 16, 32, 32, 64, 64, 64];
        let strides = [1usize, 2, 1, 2, 1, 2, 1, 1, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(9);
        let mut in_ch = 3;
        for (out_ch, stride) in channels.into_iter().zip(strides) {
            let fan_in = in_ch * 9;
            let std = (2.0 / fan_in as f64).sqrt();
            let data: Vec<f64> = (0..out_ch * in_ch * 9)
                .map(|_| {
                    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.gen::<f64>();
                    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            layers.push(ExtractorLayer {
                weight: Tensor::new(&[out_ch, in_ch, 3, 3], data).unwrap(),
                bias: Tensor::zeros(&[out_ch]),
                stride,
            });
            in_ch = out_ch;
        }
        FeatureExtractor {
            in_channels: 3,
            layers,
        }
    }

    /// Explicit layers, for tests and degenerate configurations.
    pub fn from_layers(in_channels: usize, layers: Vec<ExtractorLayer>) -> FeatureExtractor {
        FeatureExtractor {
            in_channels,
            layers,
        }
    }

    /// Per-layer feature maps (tapped after each activation) of a
    /// single-channel (N, 1, H, W) map.
    pub fn features(&self, map: &Tensor) -> Result<Vec<Tensor>> {
        let mut cur = if self.in_channels == 1 {
            map.clone()
        } else {
            let copies: Vec<Tensor> = (0..self.in_channels).map(|_| map.clone()).collect();
            ops::concat_channels(&copies)?
        };
        let mut taps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let out_ch = layer.weight.shape()[0];
            let in_ch = layer.weight.shape()[1];
            let k = layer.weight.shape()[2];
            let spec = ConvSpec::new(in_ch, out_ch, k).with_stride(layer.stride);
            cur = ops::relu(&conv2d(&cur, &layer.weight, &layer.bias, &spec)?);
            taps.push(cur.clone());
        }
        Ok(taps)
    }
}

fn batch_of(t: &Tensor) -> usize {
    if t.shape().len() == 4 {
        t.shape()[0]
    } else {
        1
    }
}

fn check_pair(op: &'static str, pred: &Tensor, truth: &Tensor) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: pred.shape().to_vec(),
            right: truth.shape().to_vec(),
        });
    }
    Ok(())
}

/// Cross-entropy with per-image class weights `(w_fg, w_bg)`; both standard
/// and class-balanced variants route through this single kernel so their
/// algebraic relations hold exactly.
fn weighted_bce(
    pred: &Tensor,
    truth: &Tensor,
    weights_for: impl Fn(f64) -> (f64, f64),
) -> Result<Tensor> {
    check_pair("bce", pred, truth)?;
    let n = batch_of(pred);
    let stride = pred.numel() / n;
    // Weight map is a constant function of the ground truth.
    let mut w = vec![0.0; pred.numel()];
    for i in 0..n {
        let slice = &truth.data()[i * stride..(i + 1) * stride];
        let fg = slice.iter().filter(|v| **v > 0.5).count() as f64;
        let rho = fg / stride as f64;
        let (w_fg, w_bg) = weights_for(rho);
        for (wi, t) in w[i * stride..(i + 1) * stride].iter_mut().zip(slice) {
            *wi = if *t > 0.5 { w_fg } else { w_bg };
        }
    }
    let w = Tensor::new(pred.shape(), w)?;
    let p = ops::clamp(pred, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let fg_term = ops::mul(truth, &ops::log(&p))?;
    let bg_term = ops::mul(
        &ops::rsub_scalar(1.0, truth),
        &ops::log(&ops::rsub_scalar(1.0, &p)),
    )?;
    let per_pixel = ops::mul(&w, &ops::add(&fg_term, &bg_term)?)?;
    Ok(ops::scale(&ops::sum(&per_pixel), -1.0 / n as f64))
}

/// Pixel-wise binary cross-entropy, summed over pixels and averaged over
/// the batch. Predictions are clamped to `[1e-7, 1 - 1e-7]` before the log.
pub fn loss_bce(pred: &Tensor, truth: &Tensor) -> Result<Tensor> {
    weighted_bce(pred, truth, |_| (1.0, 1.0))
}

/// Class-weighted cross-entropy with `rho = |Y+| / |Y|` per image: the
/// foreground term carries weight rho and the background term `1 - rho`
/// (swapped when `complement` is set).
pub fn loss_wbce(pred: &Tensor, truth: &Tensor, complement: bool) -> Result<Tensor> {
    weighted_bce(pred, truth, |rho| {
        if complement {
            (1.0 - rho, rho)
        } else {
            (rho, 1.0 - rho)
        }
    })
}

/// Semantic content loss: lambda-weighted L2 distances between extractor
/// features of prediction and ground truth (per image, averaged over the
/// batch). Gradients reach the prediction only; the truth branch is
/// detached.
pub fn loss_sc(
    pred: &Tensor,
    truth: &Tensor,
    extractor: &FeatureExtractor,
    config: &LossConfig,
) -> Result<Tensor> {
    check_pair("sc", pred, truth)?;
    let n = batch_of(pred);
    let pred_features = extractor.features(pred)?;
    let truth_features = extractor.features(&truth.detach())?;
    let mut total = Tensor::scalar(0.0);
    for &layer in &config.selected_layers {
        let lambda = config.lambda_per_layer.get(layer).copied().unwrap_or(1.0);
        if lambda == 0.0 {
            continue;
        }
        if layer >= pred_features.len() {
            return Err(Error::Config(format!(
                "selected extractor layer {layer} out of range (have {})",
                pred_features.len()
            )));
        }
        let diff = ops::sub(&pred_features[layer], &truth_features[layer])?;
        let sq = ops::mul(&diff, &diff)?;
        let norms = ops::sqrt(&ops::sum_per_sample(&sq));
        total = ops::add(&total, &ops::scale(&ops::sum(&norms), lambda / n as f64))?;
    }
    Ok(total)
}

/// Smoothed L1 on `d = truth - pred`, applied per pixel, summed over pixels
/// and averaged over the batch. Inside `|d| < epsilon` the branch is
/// `d^2/(2 epsilon) + epsilon/2`, outside it is `|d|`; value and derivative
/// are continuous at the boundary.
pub fn loss_smooth_l1(pred: &Tensor, truth: &Tensor, epsilon: f64) -> Result<Tensor> {
    check_pair("smooth_l1", pred, truth)?;
    let n = batch_of(pred);
    let d = ops::sub(truth, pred)?;
    Ok(ops::scale(&ops::sum(&ops::huber(&d, epsilon)), 1.0 / n as f64))
}

/// Combined loss with its per-term breakdown.
pub struct LossBreakdown {
    /// The differentiable total.
    pub total: Tensor,
    pub wbce: f64,
    pub sc: f64,
    pub s1: f64,
    pub total_value: f64,
}

/// `wbce + mu * sc + gamma * s1`, returning each component for logging.
pub fn loss_total(
    pred: &Tensor,
    truth: &Tensor,
    extractor: &FeatureExtractor,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    config.validate()?;
    let wbce = loss_wbce(pred, truth, config.wbce_complement)?;
    let sc = loss_sc(pred, truth, extractor, config)?;
    let s1 = loss_smooth_l1(pred, truth, config.epsilon_s1)?;
    let total = ops::add(
        &wbce,
        &ops::add(&ops::scale(&sc, config.mu), &ops::scale(&s1, config.gamma))?,
    )?;
    Ok(LossBreakdown {
        wbce: wbce.item(),
        sc: sc.item(),
        s1: s1.item(),
        total_value: total.item(),
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn bce_perfect_prediction_is_tiny() {
        let truth = t(&[1, 1, 2, 2], vec![1.0, 0.0, 1.0, 0.0]);
        let loss = loss_bce(&truth, &truth).unwrap().item();
        assert!(loss < 1e-5 * 4.0, "{loss}");
        assert!(loss > 0.0);
    }

    #[test]
    fn bce_uniform_half_gives_t_ln2() {
        let pred = Tensor::full(&[1, 1, 3, 3], 0.5);
        let truth = t(&[1, 1, 3, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let loss = loss_bce(&pred, &truth).unwrap().item();
        assert!((loss - 9.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_two_pixel_hand_value() {
        let pred = t(&[1, 1, 1, 2], vec![0.9, 0.2]);
        let truth = t(&[1, 1, 1, 2], vec![1.0, 0.0]);
        let expect = -(0.9f64.ln()) - (0.8f64.ln());
        let loss = loss_bce(&pred, &truth).unwrap().item();
        assert!((loss - expect).abs() < 1e-12);
        assert!((loss - 0.3285).abs() < 1e-4);
    }

    #[test]
    fn wbce_at_balanced_masks_is_exactly_half_bce() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut truth = vec![0.0; 16];
            // Exactly half foreground => rho = 0.5.
            for i in 0..8 {
                truth[i * 2 + (rng.gen::<bool>() as usize)] = 1.0;
            }
            let pred: Vec<f64> = (0..16).map(|_| rng.gen_range(0.01..0.99)).collect();
            let pred = t(&[1, 1, 4, 4], pred);
            let truth = t(&[1, 1, 4, 4], truth);
            let bce = loss_bce(&pred, &truth).unwrap().item();
            let wbce = loss_wbce(&pred, &truth, false).unwrap().item();
            assert_eq!(wbce, 0.5 * bce, "identity must be exact");
        }
    }

    #[test]
    fn wbce_all_background_perfect_prediction_is_zero() {
        let truth = Tensor::zeros(&[1, 1, 2, 2]);
        let pred = Tensor::full(&[1, 1, 2, 2], 1e-9);
        let loss = loss_wbce(&pred, &truth, false).unwrap().item();
        // rho = 0 removes the (empty) foreground sum; the background term is
        // weighted by 1 and is ~0 at the clamp bound.
        assert!(loss.abs() < 1e-5, "{loss}");
    }

    #[test]
    fn wbce_four_pixel_hand_value() {
        let pred = t(&[1, 1, 2, 2], vec![0.9, 0.1, 0.1, 0.1]);
        let truth = t(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]);
        let loss = loss_wbce(&pred, &truth, false).unwrap().item();
        let expect = -0.25 * 0.9f64.ln() - 0.75 * 3.0 * 0.9f64.ln();
        assert!((loss - expect).abs() < 1e-12);
        assert!((loss - 0.2634).abs() < 1e-4);
    }

    #[test]
    fn wbce_complement_swaps_the_class_weights() {
        let pred = t(&[1, 1, 2, 2], vec![0.9, 0.1, 0.1, 0.1]);
        let truth = t(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]);
        let loss = loss_wbce(&pred, &truth, true).unwrap().item();
        let expect = -0.75 * 0.9f64.ln() - 0.25 * 3.0 * 0.9f64.ln();
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn sc_is_zero_at_identity_and_under_zero_lambdas() {
        let extractor = FeatureExtractor::new(3);
        let config = LossConfig::default();
        let map = t(&[1, 1, 8, 8], (0..64).map(|i| (i as f64) / 64.0).collect());
        let loss = loss_sc(&map, &map, &extractor, &config).unwrap().item();
        assert_eq!(loss, 0.0);

        let zeroed = LossConfig {
            lambda_per_layer: vec![0.0; 9],
            ..LossConfig::default()
        };
        let other = Tensor::full(&[1, 1, 8, 8], 0.3);
        let loss = loss_sc(&map, &other, &extractor, &zeroed).unwrap().item();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn sc_through_identity_extractor_is_the_l2_norm() {
        // One 1x1 identity layer; maps stay positive so the activation is
        // transparent.
        let layer = ExtractorLayer {
            weight: t(&[1, 1, 1, 1], vec![1.0]),
            bias: Tensor::zeros(&[1]),
            stride: 1,
        };
        let extractor = FeatureExtractor::from_layers(1, vec![layer]);
        let config = LossConfig {
            selected_layers: vec![0],
            lambda_per_layer: vec![1.0],
            ..LossConfig::default()
        };
        // diff = (0.3, 0.4) => L2 norm 0.5
        let pred = t(&[1, 1, 1, 2], vec![0.5, 0.6]);
        let truth = t(&[1, 1, 1, 2], vec![0.2, 0.2]);
        let loss = loss_sc(&pred, &truth, &extractor, &config).unwrap().item();
        assert!((loss - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sc_is_nonnegative() {
        use rand::{Rng, SeedableRng};
        let extractor = FeatureExtractor::new(4);
        let config = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let a: Vec<f64> = (0..64).map(|_| rng.gen()).collect();
            let b: Vec<f64> = (0..64).map(|_| rng.gen()).collect();
            let loss = loss_sc(
                &t(&[1, 1, 8, 8], a),
                &t(&[1, 1, 8, 8], b),
                &extractor,
                &config,
            )
            .unwrap()
            .item();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn smooth_l1_examples() {
        let eps = 0.1;
        let zero = Tensor::zeros(&[1, 1, 1, 1]);
        let at = |d: f64| {
            let pred = Tensor::full(&[1, 1, 1, 1], 0.0);
            let truth = Tensor::full(&[1, 1, 1, 1], d);
            loss_smooth_l1(&pred, &truth, eps).unwrap().item()
        };
        assert!((loss_smooth_l1(&zero, &zero, eps).unwrap().item() - 0.05).abs() < 1e-15);
        assert!((at(eps) - eps).abs() < 1e-15, "branches agree at |d| = eps");
        assert!((at(0.5) - 0.5).abs() < 1e-15, "linear branch");
    }

    #[test]
    fn total_reduces_to_wbce_when_weights_vanish() {
        let extractor = FeatureExtractor::new(7);
        let config = LossConfig {
            mu: 0.0,
            gamma: 0.0,
            ..LossConfig::default()
        };
        let pred = t(&[1, 1, 2, 2], vec![0.6, 0.4, 0.7, 0.2]);
        let truth = t(&[1, 1, 2, 2], vec![1.0, 0.0, 1.0, 0.0]);
        let breakdown = loss_total(&pred, &truth, &extractor, &config).unwrap();
        let wbce = loss_wbce(&pred, &truth, false).unwrap().item();
        assert_eq!(breakdown.total_value, wbce);
    }

    #[test]
    fn breakdown_sums_to_the_total() {
        let extractor = FeatureExtractor::new(8);
        let config = LossConfig::default();
        let pred = t(&[1, 1, 8, 8], (0..64).map(|i| 0.2 + (i as f64) * 0.01).collect());
        let truth = t(
            &[1, 1, 8, 8],
            (0..64).map(|i| f64::from(i % 3 == 0)).collect(),
        );
        let b = loss_total(&pred, &truth, &extractor, &config).unwrap();
        let recomposed = b.wbce + config.mu * b.sc + config.gamma * b.s1;
        assert!((recomposed - b.total_value).abs() < 1e-12);
    }

    #[test]
    fn total_at_the_optimum_is_the_smooth_l1_offset() {
        let extractor = FeatureExtractor::new(9);
        let config = LossConfig::default();
        let truth = t(
            &[1, 1, 4, 4],
            (0..16).map(|i| f64::from(i % 2 == 0)).collect(),
        );
        let b = loss_total(&truth, &truth, &extractor, &config).unwrap();
        // d = 0 everywhere: s1 contributes eps/2 per pixel, everything else
        // is ~0 (the clamp keeps wbce a hair above zero).
        let expect = config.gamma * (config.epsilon_s1 / 2.0) * 16.0;
        assert!((b.total_value - expect).abs() < 1e-4, "{}", b.total_value);
    }

    #[test]
    fn extractor_weights_live_off_the_tape() {
        let extractor = FeatureExtractor::new(10);
        for layer in &extractor.layers {
            assert!(!layer.weight.is_taped());
            assert!(!layer.bias.is_taped());
        }
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let extractor = FeatureExtractor::new(11);
        let config = LossConfig::default();
        let truth = t(
            &[1, 1, 4, 4],
            (0..16).map(|i| f64::from(i % 5 == 0)).collect(),
        );
        let pred0: Vec<f64> = (0..16).map(|i| 0.15 + 0.04 * (i as f64)).collect();
        let pred = Tensor::param(&[1, 1, 4, 4], pred0).unwrap();
        let report = check_gradients(
            "loss_total",
            &[pred],
            |leaves| Ok(loss_total(&leaves[0], &truth, &extractor, &config)?.total),
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }
}
