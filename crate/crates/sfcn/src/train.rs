//! SGD-with-momentum training of the weighted structural loss, with
//! plateau-based learning-rate decay and exact-resume bookkeeping.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{self, Sample};
use crate::error::{Error, Result};
use crate::loss::{loss_total, FeatureExtractor, LossConfig};
use crate::net::Sfcn;
use crate::norm::Mode;
use crate::reflection::{mean_strategy, reflect, MeanSpec};
use crate::tensor::{backward, Tensor};

/// Optimization schedule and reproducibility knobs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    /// Steps without relative EMA improvement before the rate decays.
    pub plateau_patience: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Periodic checkpoint interval in steps (0 disables).
    pub checkpoint_every: usize,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            momentum: 0.9,
            weight_decay: 0.0005,
            base_lr: 1e-4,
            lr_decay_factor: 0.9,
            plateau_patience: 500,
            max_iters: 2000,
            seed: 0,
            checkpoint_every: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.lr_decay_factor) || self.lr_decay_factor == 0.0 {
            return Err(Error::Config("lr_decay_factor must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Relative EMA improvement below this fraction counts as a plateau step.
const PLATEAU_MIN_IMPROVEMENT: f64 = 1e-3;
/// Smoothing of the plateau EMA.
const EMA_DECAY: f64 = 0.99;

/// One momentum update: `v <- momentum*v + grad (+ decay*param)`,
/// `param <- param - lr*v`. Non-finite gradients abort with the parameter
/// name.
pub fn sgd_step(
    name: &str,
    param: &mut Tensor,
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGrad {
            param: name.to_string(),
        });
    }
    let old = param.data();
    let mut next = Vec::with_capacity(old.len());
    for ((v, g), p) in velocity.iter_mut().zip(grad).zip(old) {
        *v = momentum * *v + g + weight_decay * p;
        next.push(p - lr * *v);
    }
    *param = Tensor::param(param.shape(), next)?;
    Ok(())
}

/// One row of the training log.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub wbce: f64,
    pub sc: f64,
    pub s1: f64,
    pub total: f64,
}

/// A learning-rate decay event.
#[derive(Debug, Clone)]
pub struct LrEvent {
    pub step: usize,
    pub old_lr: f64,
    pub new_lr: f64,
}

/// Optimizer state that must survive a checkpoint for exact resume.
#[derive(Debug, Clone)]
pub struct OptState {
    pub step: usize,
    pub lr: f64,
    pub ema: Option<f64>,
    pub best_ema: f64,
    pub since_improve: usize,
}

pub struct Trainer {
    pub net: Sfcn,
    pub extractor: FeatureExtractor,
    pub loss_config: LossConfig,
    pub mean_spec: MeanSpec,
    pub config: TrainConfig,
    samples: Vec<Sample>,
    pub velocities: BTreeMap<String, Vec<f64>>,
    pub rng: ChaCha8Rng,
    pub opt: OptState,
    pub events: Vec<LrEvent>,
}

impl Trainer {
    /// Samples are resized to the model input extents once, up front.
    pub fn new(
        net: Sfcn,
        extractor: FeatureExtractor,
        loss_config: LossConfig,
        mean_spec: MeanSpec,
        config: TrainConfig,
        samples: &[Sample],
    ) -> Result<Trainer> {
        config.validate()?;
        loss_config.validate()?;
        if samples.is_empty() {
            return Err(Error::Data("training needs a nonempty dataset".into()));
        }
        let target = net.config.input_size;
        let samples = samples
            .iter()
            .map(|s| {
                if s.mask.shape() == [target.0, target.1] {
                    Ok(s.clone())
                } else {
                    data::resize_sample(s, target)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let lr = config.base_lr;
        // The training stream is decorrelated from the init stream, which
        // consumed `seed` already.
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
        Ok(Trainer {
            net,
            extractor,
            loss_config,
            mean_spec,
            config,
            samples: samples.to_vec(),
            velocities: BTreeMap::new(),
            rng,
            opt: OptState {
                step: 0,
                lr,
                ema: None,
                best_ema: f64::INFINITY,
                since_improve: 0,
            },
            events: Vec::new(),
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Draw batch indices without replacement (cycling when the batch
    /// exceeds the dataset).
    fn draw_batch(&mut self) -> Vec<usize> {
        let n = self.samples.len();
        let take = self.config.batch_size;
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..take.min(n).min(n.saturating_sub(1)) {
            let j = self.rng.gen_range(i..n);
            pool.swap(i, j);
        }
        (0..take).map(|i| pool[i % n]).collect()
    }

    /// One optimization step: assemble a batch, run both branches, descend.
    pub fn step_once(&mut self) -> Result<LogRow> {
        let indices = self.draw_batch();
        let strategy = mean_strategy(&self.mean_spec)?;
        let mut origins = Vec::with_capacity(indices.len());
        let mut reflecteds = Vec::with_capacity(indices.len());
        let mut masks = Vec::with_capacity(indices.len());
        for &i in &indices {
            let sample = if self.config.augment {
                data::augment(&self.samples[i], &mut self.rng)?
            } else {
                self.samples[i].clone()
            };
            let mean = strategy.resolve(&sample.image)?;
            let pair = reflect(&sample.image, mean, self.net.config.k)?;
            origins.push(pair.origin);
            reflecteds.push(pair.reflected);
            masks.push(sample.mask.clone());
        }
        let origin = Tensor::stack(&origins)?;
        let reflected = Tensor::stack(&reflecteds)?;
        let (h, w) = self.net.config.input_size;
        let truth = Tensor::stack(&masks)?.reshape(&[masks.len(), 1, h, w])?;

        let maps = self.net.forward(&origin, &reflected, Mode::Train)?;
        let breakdown = loss_total(&maps.fg, &truth, &self.extractor, &self.loss_config)?;
        backward(&breakdown.total)?;

        let (lr, momentum, decay) = (
            self.opt.lr,
            self.config.momentum,
            self.config.weight_decay,
        );
        let velocities = &mut self.velocities;
        let mut step_err = None;
        self.net.params.visit_mut(&mut |p| {
            if step_err.is_some() {
                return;
            }
            let grad = match p.tensor.grad() {
                Some(g) => g,
                None => vec![0.0; p.tensor.numel()],
            };
            let velocity = velocities
                .entry(p.name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let wd = if p.decay { decay } else { 0.0 };
            if let Err(e) = sgd_step(&p.name, p.tensor, &grad, velocity, lr, momentum, wd) {
                step_err = Some(e);
            }
        });
        if let Some(e) = step_err {
            return Err(e);
        }

        self.opt.step += 1;
        let total = breakdown.total_value;
        let ema = match self.opt.ema {
            Some(prev) => EMA_DECAY * prev + (1.0 - EMA_DECAY) * total,
            None => total,
        };
        self.opt.ema = Some(ema);
        if ema < self.opt.best_ema * (1.0 - PLATEAU_MIN_IMPROVEMENT) {
            self.opt.best_ema = ema;
            self.opt.since_improve = 0;
        } else {
            self.opt.since_improve += 1;
            if self.opt.since_improve >= self.config.plateau_patience {
                let old_lr = self.opt.lr;
                self.opt.lr *= self.config.lr_decay_factor;
                self.opt.since_improve = 0;
                self.events.push(LrEvent {
                    step: self.opt.step,
                    old_lr,
                    new_lr: self.opt.lr,
                });
            }
        }

        Ok(LogRow {
            step: self.opt.step,
            lr,
            wbce: breakdown.wbce,
            sc: breakdown.sc,
            s1: breakdown.s1,
            total,
        })
    }

    /// Run until `max_iters`, invoking `on_step` after every step.
    pub fn run(
        &mut self,
        mut on_step: impl FnMut(&mut Trainer, &LogRow) -> Result<()>,
    ) -> Result<Vec<LogRow>> {
        let mut log = Vec::new();
        while self.opt.step < self.config.max_iters {
            let row = self.step_once()?;
            log.push(row.clone());
            on_step(self, &row)?;
        }
        Ok(log)
    }

    /// Eval-mode saliency maps for a set of samples (resized to the model
    /// input extents), returned with their ids.
    pub fn predict_eval(&self, samples: &[Sample]) -> Result<Vec<(String, Vec<f64>)>> {
        let target = self.net.config.input_size;
        let frozen = self.net.detached()?;
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            let resized = if s.mask.shape() == [target.0, target.1] {
                s.clone()
            } else {
                data::resize_sample(s, target)?
            };
            let maps = frozen.predict(&[resized.image], &self.mean_spec, Mode::Eval)?;
            out.push((s.id.clone(), maps.saliency.data().to_vec()));
        }
        Ok(out)
    }
}

/// Scalar simulation oracle of the momentum recurrence, for tests and the
/// quadratic-bowl contract.
pub fn simulate_quadratic_bowl(
    x0: f64,
    steps: usize,
    lr: f64,
    momentum: f64,
) -> Vec<f64> {
    let mut xs = Vec::with_capacity(steps + 1);
    let mut x = x0;
    let mut v = 0.0;
    xs.push(x);
    for _ in 0..steps {
        v = momentum * v + 2.0 * x;
        x -= lr * v;
        xs.push(x);
    }
    xs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate, SynthSpec};
    use crate::net::SfcnConfig;

    fn tiny_trainer(seed: u64, max_iters: usize) -> Trainer {
        let net = Sfcn::init(SfcnConfig::tiny(), seed).unwrap();
        let spec = SynthSpec {
            count: 4,
            canvas_size: 8,
            seed,
            coverage_min: 0.02,
            coverage_max: 0.9,
            ..SynthSpec::default()
        };
        let samples = generate(&spec).unwrap();
        let config = TrainConfig {
            batch_size: 2,
            max_iters,
            seed,
            base_lr: 1e-3,
            ..TrainConfig::default()
        };
        Trainer::new(
            net,
            FeatureExtractor::new(1),
            LossConfig::default(),
            MeanSpec::zero(),
            config,
            &samples,
        )
        .unwrap()
    }

    #[test]
    fn plain_sgd_decreases_param_by_lr_times_grad() {
        let mut p = Tensor::param(&[2], vec![1.0, -2.0]).unwrap();
        let mut v = vec![0.0; 2];
        sgd_step("p", &mut p, &[0.5, -1.0], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.05, -2.0 + 0.1]);
    }

    #[test]
    fn zero_gradient_and_zero_decay_leave_params_unchanged() {
        let mut p = Tensor::param(&[3], vec![0.3, 0.6, -0.9]).unwrap();
        let before = p.data().to_vec();
        let mut v = vec![0.0; 3];
        sgd_step("p", &mut p, &[0.0; 3], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p.data(), &before[..]);
    }

    #[test]
    fn nan_gradients_abort_with_the_parameter_name() {
        let mut p = Tensor::param(&[1], vec![1.0]).unwrap();
        let mut v = vec![0.0];
        let err = sgd_step("enc.0.0.w", &mut p, &[f64::NAN], &mut v, 0.1, 0.9, 0.0).unwrap_err();
        match err {
            Error::NonFiniteGrad { param } => assert_eq!(param, "enc.0.0.w"),
            other => panic!("expected NonFiniteGrad, got {other}"),
        }
    }

    #[test]
    fn quadratic_bowl_follows_the_scalar_oracle_and_converges() {
        // The optimizer trajectory must match an independently coded scalar
        // recurrence step for step, and eventually contract to ~0. (With
        // lr 0.1 / momentum 0.9 the iterate oscillates before settling, so
        // the contraction check sits at a horizon where it has damped out.)
        let oracle = simulate_quadratic_bowl(1.0, 300, 0.1, 0.9);
        let mut p = Tensor::param(&[1], vec![1.0]).unwrap();
        let mut v = vec![0.0];
        for step in 0..300 {
            let grad = [2.0 * p.data()[0]];
            sgd_step("x", &mut p, &grad, &mut v, 0.1, 0.9, 0.0).unwrap();
            assert!(
                (p.data()[0] - oracle[step + 1]).abs() < 1e-12,
                "diverged from oracle at step {step}"
            );
        }
        assert!(p.data()[0].abs() < 1e-3, "final x = {}", p.data()[0]);
        // The spec example expects monotone decay within 50 steps; the
        // recurrence itself says otherwise (|x| grows again around step 4),
        // so the asserted contract is oracle agreement plus convergence.
        let non_monotone = oracle.windows(2).any(|w| w[1].abs() > w[0].abs());
        assert!(non_monotone);
    }

    #[test]
    fn zero_iteration_run_changes_nothing() {
        let mut t = tiny_trainer(1, 0);
        let before: Vec<Vec<f64>> = t
            .net
            .params
            .named()
            .into_iter()
            .map(|(_, p, _)| p.data().to_vec())
            .collect();
        let log = t.run(|_, _| Ok(())).unwrap();
        assert!(log.is_empty());
        let after: Vec<Vec<f64>> = t
            .net
            .params
            .named()
            .into_iter()
            .map(|(_, p, _)| p.data().to_vec())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn identical_seeds_give_identical_loss_traces_and_params() {
        let mut a = tiny_trainer(7, 6);
        let mut b = tiny_trainer(7, 6);
        let la = a.run(|_, _| Ok(())).unwrap();
        let lb = b.run(|_, _| Ok(())).unwrap();
        for (ra, rb) in la.iter().zip(&lb) {
            assert_eq!(ra.total, rb.total);
            assert_eq!(ra.wbce, rb.wbce);
        }
        for ((na, pa, _), (nb, pb, _)) in a.net.params.named().into_iter().zip(b.net.params.named())
        {
            assert_eq!(na, nb);
            assert_eq!(pa.data(), pb.data());
        }
    }

    #[test]
    fn loss_decreases_on_a_tiny_overfit() {
        let mut t = tiny_trainer(3, 60);
        let log = t.run(|_, _| Ok(())).unwrap();
        let first = log.first().unwrap().total;
        let last = log.last().unwrap().total;
        assert!(last < first, "no descent: {first} -> {last}");
    }

    #[test]
    fn weight_decay_skips_biases_and_affine_parameters() {
        let mut t = tiny_trainer(5, 0);
        t.config.weight_decay = 0.5;
        // Zero-gradient step isolates the decay path.
        t.net.params.visit_mut(&mut |p| {
            let before = p.tensor.data().to_vec();
            let mut v = vec![0.0; p.tensor.numel()];
            let wd = if p.decay { 0.5 } else { 0.0 };
            sgd_step(&p.name, p.tensor, &vec![0.0; before.len()], &mut v, 0.1, 0.0, wd).unwrap();
            let after = p.tensor.data();
            let is_weight = p.name.ends_with(".w");
            assert_eq!(p.decay, is_weight, "{}", p.name);
            if p.decay {
                for (a, b) in after.iter().zip(&before) {
                    assert!((a - b * (1.0 - 0.05)).abs() < 1e-15);
                }
            } else {
                assert_eq!(after, &before[..], "{} must not decay", p.name);
            }
        });
    }

    #[test]
    fn plateau_decays_the_rate_and_never_raises_it() {
        let mut t = tiny_trainer(9, 0);
        t.config.base_lr = 1e-30;
        t.opt.lr = 1e-30;
        t.config.plateau_patience = 3;
        t.config.max_iters = 12;
        t.config.augment = false;
        let log = t.run(|_, _| Ok(())).unwrap();
        assert!(!t.events.is_empty(), "plateau never fired");
        for e in &t.events {
            assert!((e.new_lr - e.old_lr * 0.9).abs() < 1e-45);
        }
        for pair in log.windows(2) {
            assert!(pair[1].lr <= pair[0].lr);
        }
    }

    #[test]
    fn extractor_weights_are_bit_identical_after_training() {
        let mut t = tiny_trainer(11, 4);
        let before: Vec<Vec<f64>> = t
            .extractor
            .layers
            .iter()
            .map(|l| l.weight.data().to_vec())
            .collect();
        t.run(|_, _| Ok(())).unwrap();
        for (layer, b) in t.extractor.layers.iter().zip(&before) {
            assert_eq!(layer.weight.data(), &b[..]);
        }
    }

    #[test]
    fn shared_encoder_stays_shared_across_steps() {
        let mut t = tiny_trainer(13, 3);
        t.run(|_, _| Ok(())).unwrap();
        // One parameter set for the encoder: no enc2.* names exist.
        let names: Vec<String> = t.net.params.named().into_iter().map(|(n, _, _)| n).collect();
        assert!(names.iter().all(|n| !n.starts_with("enc2.")));
        assert!(t.net.params.encoder_alt.is_none());
    }
}
