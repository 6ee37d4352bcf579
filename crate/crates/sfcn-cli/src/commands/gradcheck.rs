//! `sfcn gradcheck`: finite-difference verification of every differentiable
//! operator and of the total loss through the whole network, printed as a
//! pass/fail table.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sfcn::config::RunConfig;
use sfcn::gradcheck::{check_gradients, CheckReport};
use sfcn::loss::{loss_bce, loss_sc, loss_smooth_l1, loss_total, loss_wbce, FeatureExtractor};
use sfcn::net::{Sfcn, SfcnConfig};
use sfcn::norm::{adabn_forward, AdaBnLayerState, Mode, RunningStats, ORIGIN};
use sfcn::tensor::{conv2d, deconv2d, maxpool2d, ops, ConvSpec, Tensor};
use sfcn::{Error, Result};

const TOLERANCE: f64 = 1e-4;

fn rand_param(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect();
    Tensor::param(shape, data).unwrap()
}

fn op_checks(rng: &mut ChaCha8Rng) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();

    let x = rand_param(rng, &[1, 2, 6, 6], 1.0);
    let w = rand_param(rng, &[3, 2, 3, 3], 0.5);
    let b = rand_param(rng, &[3], 0.2);
    reports.push(check_gradients(
        "conv2d",
        &[x, w, b],
        |l| {
            let spec = ConvSpec::new(2, 3, 3);
            Ok(ops::sum(&ops::sigmoid(&conv2d(&l[0], &l[1], &l[2], &spec)?)))
        },
        TOLERANCE,
    )?);

    let x = rand_param(rng, &[1, 2, 3, 3], 1.0);
    let w = rand_param(rng, &[2, 3, 4, 4], 0.5);
    reports.push(check_gradients(
        "deconv2d",
        &[x, w],
        |l| {
            let spec = ConvSpec {
                in_channels: 2,
                out_channels: 3,
                kernel: (4, 4),
                stride: (2, 2),
                padding: (1, 1),
            };
            Ok(ops::sum(&ops::sigmoid(&deconv2d(&l[0], &l[1], &spec)?)))
        },
        TOLERANCE,
    )?);

    let x = rand_param(rng, &[1, 2, 4, 4], 1.0);
    reports.push(check_gradients(
        "maxpool2d",
        &[x],
        |l| Ok(ops::sum(&ops::sigmoid(&maxpool2d(&l[0])?))),
        TOLERANCE,
    )?);

    let a = rand_param(rng, &[1, 2, 3, 3], 1.0);
    let b = rand_param(rng, &[1, 3, 3, 3], 1.0);
    reports.push(check_gradients(
        "concat_channels",
        &[a, b],
        |l| {
            let cat = ops::concat_channels(&[l[0].clone(), l[1].clone()])?;
            let part = ops::narrow_channels(&cat, 1, 3)?;
            Ok(ops::sum(&ops::sigmoid(&part)))
        },
        TOLERANCE,
    )?);

    let z0 = rand_param(rng, &[1, 1, 3, 3], 2.0);
    let z1 = rand_param(rng, &[1, 1, 3, 3], 2.0);
    reports.push(check_gradients(
        "softmax_pairwise",
        &[z0, z1],
        |l| {
            let (fg, bg) = ops::softmax_pairwise(&l[0], &l[1])?;
            Ok(ops::sum(&ops::add(
                &ops::mul(&fg, &fg)?,
                &ops::mul(&bg, &l[0])?,
            )?))
        },
        TOLERANCE,
    )?);

    let x = rand_param(rng, &[2, 2, 3, 3], 1.0);
    let alpha = rand_param(rng, &[2], 1.0);
    let beta = rand_param(rng, &[2], 0.5);
    reports.push(check_gradients(
        "adabn_train",
        &[x.clone(), alpha.clone(), beta.clone()],
        |l| {
            let mut state = AdaBnLayerState::new(2, 1e-5, 0.1);
            state.alpha = l[1].clone();
            state.beta = l[2].clone();
            let y = adabn_forward(&l[0], &state, ORIGIN, Mode::Train)?;
            Ok(ops::sum(&ops::sigmoid(&y)))
        },
        TOLERANCE,
    )?);
    reports.push(check_gradients(
        "adabn_eval",
        &[x, alpha, beta],
        |l| {
            let mut state = AdaBnLayerState::new(2, 1e-5, 0.1);
            state.alpha = l[1].clone();
            state.beta = l[2].clone();
            state.set_running(
                ORIGIN,
                RunningStats {
                    mean: vec![0.2, -0.1],
                    var: vec![0.9, 1.3],
                    count: 3,
                },
            );
            let y = adabn_forward(&l[0], &state, ORIGIN, Mode::Eval)?;
            Ok(ops::sum(&ops::sigmoid(&y)))
        },
        TOLERANCE,
    )?);

    let truth = Tensor::new(
        &[1, 1, 4, 4],
        (0..16).map(|i| f64::from(i % 3 == 0)).collect(),
    )?;
    let pred_data: Vec<f64> = (0..16).map(|_| rng.gen_range(0.05..0.95)).collect();
    let pred = Tensor::param(&[1, 1, 4, 4], pred_data)?;
    let extractor = FeatureExtractor::new(23);
    reports.push(check_gradients(
        "loss_bce",
        std::slice::from_ref(&pred),
        |l| loss_bce(&l[0], &truth),
        TOLERANCE,
    )?);
    reports.push(check_gradients(
        "loss_wbce",
        std::slice::from_ref(&pred),
        |l| loss_wbce(&l[0], &truth, false),
        TOLERANCE,
    )?);
    reports.push(check_gradients(
        "loss_sc",
        std::slice::from_ref(&pred),
        |l| loss_sc(&l[0], &truth, &extractor, &Default::default()),
        TOLERANCE,
    )?);
    reports.push(check_gradients(
        "loss_smooth_l1",
        std::slice::from_ref(&pred),
        |l| loss_smooth_l1(&l[0], &truth, 0.1),
        TOLERANCE,
    )?);
    reports.push(check_gradients(
        "loss_total",
        std::slice::from_ref(&pred),
        |l| Ok(loss_total(&l[0], &truth, &extractor, &Default::default())?.total),
        TOLERANCE,
    )?);

    Ok(reports)
}

/// Finite differences of the total loss through the full network with
/// respect to every learnable parameter.
fn full_model_check(config: &RunConfig, rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let model_config: SfcnConfig = config.model.clone();
    let (h, w) = model_config.input_size;
    let mut net = Sfcn::init(model_config.clone(), 99)?;
    let named = net.params.named();
    let leaves: Vec<Tensor> = named.iter().map(|(_, t, _)| t.clone()).collect();

    let batch = 2;
    let origin_data: Vec<f64> = (0..batch * 3 * h * w).map(|_| rng.gen::<f64>() - 0.5).collect();
    let origin = Tensor::new(&[batch, 3, h, w], origin_data)?;
    let reflected_data: Vec<f64> = origin.data().iter().map(|v| -v).collect();
    let reflected = Tensor::new(&[batch, 3, h, w], reflected_data)?;
    let truth_data: Vec<f64> = (0..batch * h * w).map(|_| f64::from(rng.gen::<bool>())).collect();
    let truth = Tensor::new(&[batch, 1, h, w], truth_data)?;
    let extractor = FeatureExtractor::new(config.loss.extractor_seed);
    let loss_config = config.loss.clone();

    check_gradients(
        "loss_total_through_network",
        &leaves,
        move |leaves| {
            let mut probe = Sfcn::init(model_config.clone(), 99)?;
            let mut iter = leaves.iter();
            probe.params.visit_mut(&mut |p| {
                *p.tensor = iter.next().expect("leaf count matches").clone();
            });
            let maps = probe.forward(&origin, &reflected, Mode::Train)?;
            Ok(loss_total(&maps.fg, &truth, &extractor, &loss_config)?.total)
        },
        TOLERANCE,
    )
}

pub fn run(config: Option<&Path>, overrides: &[String]) -> Result<()> {
    let mut run_config = match config {
        Some(p) => RunConfig::load(p)?,
        None => {
            // Default to the minimal topology; the sweep walks every
            // parameter element, so size governs runtime.
            RunConfig {
                model: SfcnConfig::tiny(),
                ..RunConfig::default()
            }
        }
    };
    run_config.apply_overrides(overrides)?;
    run_config.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut reports = op_checks(&mut rng)?;
    reports.push(full_model_check(&run_config, &mut rng)?);

    println!("{:<28} {:>14} {:>10} {:>8}", "op", "max_rel_err", "tol", "status");
    let mut failed = 0;
    for r in &reports {
        println!(
            "{:<28} {:>14.3e} {:>10.0e} {:>8}",
            r.name,
            r.max_rel_err,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        );
        if !r.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::Failure(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
