//! Batch normalization with per-domain statistics.
//!
//! The affine parameters (alpha, beta) of a layer are shared by every
//! domain; what varies between strategies is which statistics slot a domain
//! reads and updates. Layer-wise adaptive BN keeps one slot per domain,
//! regular BN collapses all domains onto a single slot. Strategies are
//! registered by name and selected from the run configuration.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Identifies an input domain (one sibling branch of the network).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Domain(pub u16);

pub const ORIGIN: Domain = Domain(0);
pub const REFLECTED: Domain = Domain(1);

/// Forward mode: train normalizes with batch statistics and updates the
/// running estimates; eval normalizes with the stored running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running statistics for one domain slot.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of batches folded in so far.
    pub count: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> RunningStats {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            count: 0,
        }
    }
}

/// Online estimator: `running <- (1 - momentum) * running + momentum * batch`.
pub fn update_running(
    stats: &mut RunningStats,
    batch_mean: &[f64],
    batch_var: &[f64],
    momentum: f64,
) {
    debug_assert!(momentum > 0.0 && momentum <= 1.0);
    for ((r, b), (rv, bv)) in stats
        .mean
        .iter_mut()
        .zip(batch_mean)
        .zip(stats.var.iter_mut().zip(batch_var))
    {
        *r = (1.0 - momentum) * *r + momentum * b;
        *rv = (1.0 - momentum) * *rv + momentum * bv;
    }
    stats.count += 1;
}

/// One normalization layer: shared affine parameters plus a statistics slot
/// per domain that has passed through it.
#[derive(Debug)]
pub struct AdaBnLayerState {
    pub channels: usize,
    pub alpha: Tensor,
    pub beta: Tensor,
    pub epsilon: f64,
    pub momentum: f64,
    stats: Mutex<BTreeMap<u16, RunningStats>>,
}

impl AdaBnLayerState {
    /// Fresh layer with alpha = 1, beta = 0 (learnable leaves).
    pub fn new(channels: usize, epsilon: f64, momentum: f64) -> AdaBnLayerState {
        AdaBnLayerState {
            channels,
            alpha: Tensor::param(&[channels], vec![1.0; channels]).unwrap(),
            beta: Tensor::param(&[channels], vec![0.0; channels]).unwrap(),
            epsilon,
            momentum,
            stats: Mutex::new(BTreeMap::new()),
        }
    }

    /// Snapshot of a slot's running statistics.
    pub fn running(&self, slot: Domain) -> Option<RunningStats> {
        self.stats.lock().unwrap().get(&slot.0).cloned()
    }

    /// Install statistics for a slot (checkpoint restore).
    pub fn set_running(&self, slot: Domain, stats: RunningStats) {
        self.stats.lock().unwrap().insert(slot.0, stats);
    }

    /// Slots with recorded statistics, in ascending order.
    pub fn slots(&self) -> Vec<Domain> {
        self.stats.lock().unwrap().keys().map(|k| Domain(*k)).collect()
    }

    /// Copy with constant (off-tape) affine parameters and cloned
    /// statistics, for inference without gradient bookkeeping.
    pub fn detached_copy(&self) -> AdaBnLayerState {
        AdaBnLayerState {
            channels: self.channels,
            alpha: self.alpha.detach(),
            beta: self.beta.detach(),
            epsilon: self.epsilon,
            momentum: self.momentum,
            stats: Mutex::new(self.stats.lock().unwrap().clone()),
        }
    }

    /// Normalize `x` against the given statistics slot.
    pub fn forward_with_slot(&self, x: &Tensor, slot: Domain, mode: Mode) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 4 {
            return Err(Error::Rank {
                op: "batch_norm",
                expected: 4,
                got: shape.len(),
            });
        }
        if shape[1] != self.channels {
            return Err(Error::ChannelMismatch {
                op: "batch_norm",
                what: "input",
                expected: self.channels,
                got: shape[1],
            });
        }
        match mode {
            Mode::Train => {
                let (y, batch_mean, batch_var) =
                    bn_train(x, &self.alpha, &self.beta, self.epsilon)?;
                let mut guard = self.stats.lock().unwrap();
                let entry = guard
                    .entry(slot.0)
                    .or_insert_with(|| RunningStats::new(self.channels));
                update_running(entry, &batch_mean, &batch_var, self.momentum);
                Ok(y)
            }
            Mode::Eval => {
                let guard = self.stats.lock().unwrap();
                let stats = guard
                    .get(&slot.0)
                    .filter(|s| s.count > 0)
                    .ok_or(Error::UnknownDomain { domain: slot.0 })?;
                bn_eval(x, &self.alpha, &self.beta, &stats.mean, &stats.var, self.epsilon)
            }
        }
    }
}

/// Strategy choosing which statistics slot serves a domain.
pub trait Normalizer: Send + Sync {
    fn name(&self) -> &'static str;
    fn slot(&self, domain: Domain) -> Domain;
    fn forward(
        &self,
        x: &Tensor,
        state: &AdaBnLayerState,
        domain: Domain,
        mode: Mode,
    ) -> Result<Tensor> {
        state.forward_with_slot(x, self.slot(domain), mode)
    }
}

/// Layer-wise adaptive BN: every domain keeps its own statistics.
pub struct LayerwiseAdaBn;

impl Normalizer for LayerwiseAdaBn {
    fn name(&self) -> &'static str {
        "adabn"
    }
    fn slot(&self, domain: Domain) -> Domain {
        domain
    }
}

/// Regular BN: one shared statistics slot for all domains.
pub struct PlainBn;

impl Normalizer for PlainBn {
    fn name(&self) -> &'static str {
        "bn"
    }
    fn slot(&self, _domain: Domain) -> Domain {
        ORIGIN
    }
}

/// Names accepted by [`normalizer`].
pub const NORMALIZER_NAMES: [&str; 2] = ["adabn", "bn"];

/// Look up a normalization strategy by its registered name.
pub fn normalizer(name: &str) -> Result<Arc<dyn Normalizer>> {
    match name {
        "adabn" => Ok(Arc::new(LayerwiseAdaBn)),
        "bn" => Ok(Arc::new(PlainBn)),
        other => Err(Error::Config(format!(
            "unknown normalizer `{other}` (expected one of {NORMALIZER_NAMES:?})"
        ))),
    }
}

/// Convenience entry point for the layer-wise adaptive strategy.
pub fn adabn_forward(
    x: &Tensor,
    state: &AdaBnLayerState,
    domain: Domain,
    mode: Mode,
) -> Result<Tensor> {
    LayerwiseAdaBn.forward(x, state, domain, mode)
}

/// Convenience entry point for regular BN (single statistics slot).
pub fn plain_bn_forward(x: &Tensor, state: &AdaBnLayerState, mode: Mode) -> Result<Tensor> {
    PlainBn.forward(x, state, ORIGIN, mode)
}

/// Per-channel batch statistics of an NCHW tensor (population variance).
pub fn batch_statistics(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let plane = h * w;
    let m = (n * plane) as f64;
    let data = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut acc = 0.0;
        for b in 0..n {
            let start = (b * c + ch) * plane;
            acc += data[start..start + plane].iter().sum::<f64>();
        }
        mean[ch] = acc / m;
        let mut sq = 0.0;
        for b in 0..n {
            let start = (b * c + ch) * plane;
            for v in &data[start..start + plane] {
                let d = v - mean[ch];
                sq += d * d;
            }
        }
        var[ch] = sq / m;
    }
    (mean, var)
}

/// Train-mode normalization: batch statistics, with gradients flowing
/// through the statistics themselves.
fn bn_train(
    x: &Tensor,
    alpha: &Tensor,
    beta: &Tensor,
    epsilon: f64,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let plane = h * w;
    let m = n * plane;
    if m < 2 {
        return Err(Error::BatchTooSmall { count: m });
    }
    let (mean, var) = batch_statistics(x);
    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();

    let data = x.data();
    let a = alpha.data();
    let b_ = beta.data();
    let mut normalized = vec![0.0; data.len()];
    let mut y = vec![0.0; data.len()];
    for bi in 0..n {
        for ch in 0..c {
            let start = (bi * c + ch) * plane;
            for i in start..start + plane {
                let xh = (data[i] - mean[ch]) * inv[ch];
                normalized[i] = xh;
                y[i] = a[ch] * xh + b_[ch];
            }
        }
    }

    let normalized = Arc::new(normalized);
    let inv_arc = Arc::new(inv);
    let shape = x.shape().to_vec();
    let out = Tensor::from_op(
        shape,
        y,
        vec![x.clone(), alpha.clone(), beta.clone()],
        Box::new(move |args| {
            let dy = args.cotangent;
            let a = args.parents[1].data();
            let xh = normalized.as_slice();
            let inv = inv_arc.as_slice();
            let mf = (n * plane) as f64;

            let mut dalpha = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let mut sum_dxh = vec![0.0; c];
            let mut sum_dxh_xh = vec![0.0; c];
            for bi in 0..n {
                for ch in 0..c {
                    let start = (bi * c + ch) * plane;
                    for i in start..start + plane {
                        dalpha[ch] += dy[i] * xh[i];
                        dbeta[ch] += dy[i];
                        let dxh = dy[i] * a[ch];
                        sum_dxh[ch] += dxh;
                        sum_dxh_xh[ch] += dxh * xh[i];
                    }
                }
            }
            let dx = args.parents[0].is_taped().then(|| {
                let mut dx = vec![0.0; dy.len()];
                for bi in 0..n {
                    for ch in 0..c {
                        let start = (bi * c + ch) * plane;
                        let mean_dxh = sum_dxh[ch] / mf;
                        let mean_dxh_xh = sum_dxh_xh[ch] / mf;
                        for i in start..start + plane {
                            let dxh = dy[i] * a[ch];
                            dx[i] = inv[ch] * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
                        }
                    }
                }
                dx
            });
            vec![dx, Some(dalpha), Some(dbeta)]
        }),
    );
    let (mean_out, var_out) = (mean, var);
    Ok((out, mean_out, var_out))
}

/// Eval-mode normalization against frozen running statistics.
fn bn_eval(
    x: &Tensor,
    alpha: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    var: &[f64],
    epsilon: f64,
) -> Result<Tensor> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let plane = h * w;
    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
    let data = x.data();
    let a = alpha.data();
    let b_ = beta.data();
    let mut y = vec![0.0; data.len()];
    for bi in 0..n {
        for ch in 0..c {
            let start = (bi * c + ch) * plane;
            for i in start..start + plane {
                y[i] = a[ch] * (data[i] - mean[ch]) * inv[ch] + b_[ch];
            }
        }
    }
    let mean = mean.to_vec();
    let inv_arc = Arc::new(inv);
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        y,
        vec![x.clone(), alpha.clone(), beta.clone()],
        Box::new(move |args| {
            let dy = args.cotangent;
            let a = args.parents[1].data();
            let xdata = args.parents[0].data();
            let inv = inv_arc.as_slice();
            let mut dalpha = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let mut dx = vec![0.0; dy.len()];
            for bi in 0..n {
                for ch in 0..c {
                    let start = (bi * c + ch) * plane;
                    for i in start..start + plane {
                        let xh = (xdata[i] - mean[ch]) * inv[ch];
                        dalpha[ch] += dy[i] * xh;
                        dbeta[ch] += dy[i];
                        dx[i] = dy[i] * a[ch] * inv[ch];
                    }
                }
            }
            vec![Some(dx), Some(dalpha), Some(dbeta)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(shape: &[usize], seed: u64, offset: f64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0 + offset).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn constant_input_collapses_to_beta() {
        let beta_vals = [0.7, -0.3];
        let mut state = AdaBnLayerState::new(2, 1e-5, 0.1);
        state.beta = Tensor::param(&[2], beta_vals.to_vec()).unwrap();
        let x = Tensor::full(&[1, 2, 2, 2], 5.0);
        let y = adabn_forward(&x, &state, ORIGIN, Mode::Train).unwrap();
        for (ch, want) in beta_vals.iter().enumerate() {
            for v in &y.data()[ch * 4..(ch + 1) * 4] {
                assert!((v - want).abs() < 1e-9, "{v}");
            }
        }
    }

    #[test]
    fn three_point_batch_normalizes_to_known_values() {
        // Values (-1, 0, 1): population mean 0, variance 2/3.
        let state = AdaBnLayerState::new(1, 1e-5, 0.1);
        let x = Tensor::new(&[1, 1, 1, 3], vec![-1.0, 0.0, 1.0]).unwrap();
        let y = adabn_forward(&x, &state, ORIGIN, Mode::Train).unwrap();
        let expect = 1.0 / (2.0_f64 / 3.0 + 1e-5).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-12);
        assert!((y.data()[0] + 1.2247).abs() < 1e-3);
        assert!(y.data()[1].abs() < 1e-12);
        assert!((y.data()[2] - expect).abs() < 1e-12);
    }

    #[test]
    fn domains_normalize_independently_and_keep_distinct_statistics() {
        let state = AdaBnLayerState::new(1, 1e-5, 1.0);
        let a = random_input(&[2, 1, 4, 4], 1, 0.0);
        let b = random_input(&[2, 1, 4, 4], 2, 5.0);
        let ya = adabn_forward(&a, &state, ORIGIN, Mode::Train).unwrap();
        let yb = adabn_forward(&b, &state, REFLECTED, Mode::Train).unwrap();
        for y in [&ya, &yb] {
            let (mean, var) = batch_statistics(y);
            assert!(mean[0].abs() < 1e-8, "post-norm mean {}", mean[0]);
            assert!((var[0] - 1.0).abs() < 1e-4, "post-norm var {}", var[0]);
        }
        let sa = state.running(ORIGIN).unwrap();
        let sb = state.running(REFLECTED).unwrap();
        assert!((sa.mean[0] - sb.mean[0]).abs() > 1.0);
    }

    #[test]
    fn feeding_one_domain_never_touches_the_other() {
        let state = AdaBnLayerState::new(1, 1e-5, 0.1);
        let x = random_input(&[1, 1, 4, 4], 3, 0.0);
        adabn_forward(&x, &state, ORIGIN, Mode::Train).unwrap();
        let before = state.running(REFLECTED);
        assert!(before.is_none());
        for _ in 0..5 {
            adabn_forward(&x, &state, ORIGIN, Mode::Train).unwrap();
        }
        assert!(state.running(REFLECTED).is_none());
        assert_eq!(state.running(ORIGIN).unwrap().count, 6);
    }

    #[test]
    fn eval_before_any_training_is_an_error() {
        let state = AdaBnLayerState::new(1, 1e-5, 0.1);
        let x = random_input(&[1, 1, 2, 2], 4, 0.0);
        assert!(matches!(
            adabn_forward(&x, &state, ORIGIN, Mode::Eval),
            Err(Error::UnknownDomain { domain: 0 })
        ));
    }

    #[test]
    fn train_mode_rejects_single_value_batches() {
        let state = AdaBnLayerState::new(1, 1e-5, 0.1);
        let x = Tensor::new(&[1, 1, 1, 1], vec![3.0]).unwrap();
        assert!(matches!(
            adabn_forward(&x, &state, ORIGIN, Mode::Train),
            Err(Error::BatchTooSmall { count: 1 })
        ));
    }

    #[test]
    fn update_running_examples() {
        let mut stats = RunningStats::new(1);
        update_running(&mut stats, &[3.0], &[4.0], 1.0);
        assert_eq!(stats.mean, vec![3.0]);
        assert_eq!(stats.var, vec![4.0]);
        assert_eq!(stats.count, 1);

        // Identical batches: fixed point.
        let mut stats = RunningStats::new(1);
        for _ in 0..400 {
            update_running(&mut stats, &[2.0], &[0.5], 0.1);
        }
        assert!((stats.mean[0] - 2.0).abs() < 1e-12);
        assert!((stats.var[0] - 0.5).abs() < 1e-12);

        // Alternating means 0 and 2 at momentum 0.1: independent recurrence
        // oracle says the iterate settles near 1.
        let mut oracle = 0.0f64;
        let mut stats = RunningStats::new(1);
        for step in 0..1000 {
            let b = if step % 2 == 0 { 0.0 } else { 2.0 };
            oracle = 0.9 * oracle + 0.1 * b;
            update_running(&mut stats, &[b], &[1.0], 0.1);
        }
        assert_eq!(stats.mean[0], oracle);
        assert!((stats.mean[0] - 1.0).abs() < 0.11);
    }

    #[test]
    fn one_domain_adabn_equals_plain_bn_bit_for_bit() {
        let mk_state = || {
            let mut s = AdaBnLayerState::new(2, 1e-5, 0.1);
            s.alpha = Tensor::param(&[2], vec![1.3, 0.8]).unwrap();
            s.beta = Tensor::param(&[2], vec![-0.2, 0.4]).unwrap();
            s
        };
        let sa = mk_state();
        let sb = mk_state();
        for seed in 0..4 {
            let x = random_input(&[2, 2, 3, 3], seed, 0.3);
            let ya = adabn_forward(&x, &sa, ORIGIN, Mode::Train).unwrap();
            let yb = plain_bn_forward(&x, &sb, Mode::Train).unwrap();
            assert_eq!(ya.data(), yb.data());
        }
        let x = random_input(&[1, 2, 4, 4], 99, 0.3);
        let ya = adabn_forward(&x, &sa, ORIGIN, Mode::Eval).unwrap();
        let yb = plain_bn_forward(&x, &sb, Mode::Eval).unwrap();
        assert_eq!(ya.data(), yb.data());
    }

    #[test]
    fn plain_bn_mixes_domains_and_shifts_eval_outputs() {
        // Two domains with shifted inputs share one slot under plain BN, so
        // eval outputs exhibit the shift that per-domain statistics avoid.
        let plain = AdaBnLayerState::new(1, 1e-5, 1.0);
        let ada = AdaBnLayerState::new(1, 1e-5, 1.0);
        let lo = random_input(&[4, 1, 4, 4], 10, 0.0);
        let hi = random_input(&[4, 1, 4, 4], 11, 8.0);
        plain_bn_forward(&lo, &plain, Mode::Train).unwrap();
        plain_bn_forward(&hi, &plain, Mode::Train).unwrap();
        adabn_forward(&lo, &ada, ORIGIN, Mode::Train).unwrap();
        adabn_forward(&hi, &ada, REFLECTED, Mode::Train).unwrap();

        let probe = random_input(&[4, 1, 4, 4], 12, 0.0);
        let plain_out = plain_bn_forward(&probe, &plain, Mode::Eval).unwrap();
        let ada_out = adabn_forward(&probe, &ada, ORIGIN, Mode::Eval).unwrap();
        let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.numel() as f64;
        // Plain BN normalized against the mixed (shifted) statistics.
        assert!(mean(&plain_out) < mean(&ada_out) - 1.0);
    }

    #[test]
    fn gradients_match_finite_differences_in_both_modes() {
        let x = random_input(&[2, 2, 3, 3], 20, 0.2);
        let x = Tensor::param(x.shape(), x.data().to_vec()).unwrap();
        let alpha = Tensor::param(&[2], vec![1.2, 0.7]).unwrap();
        let beta = Tensor::param(&[2], vec![0.1, -0.4]).unwrap();

        let make_state = |a: &Tensor, b: &Tensor| AdaBnLayerState {
            channels: 2,
            alpha: a.clone(),
            beta: b.clone(),
            epsilon: 1e-5,
            momentum: 0.1,
            stats: Mutex::new(BTreeMap::new()),
        };

        let report = check_gradients(
            "bn-train",
            &[x.clone(), alpha.clone(), beta.clone()],
            |leaves| {
                let state = make_state(&leaves[1], &leaves[2]);
                let y = adabn_forward(&leaves[0], &state, ORIGIN, Mode::Train)?;
                Ok(crate::tensor::ops::sum(&crate::tensor::ops::sigmoid(&y)))
            },
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "train: {}", report.max_rel_err);

        let report = check_gradients(
            "bn-eval",
            &[x, alpha, beta],
            |leaves| {
                let state = make_state(&leaves[1], &leaves[2]);
                state.set_running(
                    ORIGIN,
                    RunningStats {
                        mean: vec![0.3, -0.1],
                        var: vec![0.8, 1.4],
                        count: 5,
                    },
                );
                let y = adabn_forward(&leaves[0], &state, ORIGIN, Mode::Eval)?;
                Ok(crate::tensor::ops::sum(&crate::tensor::ops::sigmoid(&y)))
            },
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "eval: {}", report.max_rel_err);
    }

    #[test]
    fn registry_resolves_strategies_by_name() {
        assert_eq!(normalizer("adabn").unwrap().name(), "adabn");
        assert_eq!(normalizer("bn").unwrap().name(), "bn");
        assert!(normalizer("group").is_err());
        assert_eq!(normalizer("bn").unwrap().slot(REFLECTED), ORIGIN);
        assert_eq!(normalizer("adabn").unwrap().slot(REFLECTED), REFLECTED);
    }
}
