//! `sfcn train`: optimize a model on a dataset directory, logging per-step
//! loss components and checkpointing periodically.

use std::io::Write;
use std::path::Path;

use sfcn::checkpoint::{self, Checkpoint};
use sfcn::config::RunConfig;
use sfcn::data::{dataset_mean, load_dataset};
use sfcn::loss::FeatureExtractor;
use sfcn::net::Sfcn;
use sfcn::reflection::MeanKind;
use sfcn::train::Trainer;
use sfcn::{Error, Result};

pub fn run(
    config: Option<&Path>,
    resume: Option<&Path>,
    data: &Path,
    out: &Path,
    overrides: &[String],
) -> Result<()> {
    let samples = load_dataset(data)?;
    if samples.is_empty() {
        return Err(Error::Data(format!(
            "dataset {} holds no samples",
            data.display()
        )));
    }

    let (mut run_config, mut trainer) = match resume {
        Some(ckpt_path) => {
            let ckpt = checkpoint::load(ckpt_path)?;
            let mut run_config = ckpt.config()?;
            run_config.apply_overrides(overrides)?;
            run_config.validate()?;
            let mut trainer = ckpt.resume(&samples)?;
            trainer.config = run_config.train.clone();
            (run_config, trainer)
        }
        None => {
            let mut run_config = super::resolve_config(config, overrides)?;
            // The dataset-level mean plane is computed once, up front, and
            // recorded in the resolved configuration.
            if run_config.mean.kind == MeanKind::Dataset && run_config.mean.vector.is_none() {
                run_config.mean.vector = Some(dataset_mean(&samples)?);
            }
            let net = Sfcn::init(run_config.model.clone(), run_config.train.seed)?;
            let extractor = FeatureExtractor::new(run_config.loss.extractor_seed);
            let trainer = Trainer::new(
                net,
                extractor,
                run_config.loss.clone(),
                run_config.mean.clone(),
                run_config.train.clone(),
                &samples,
            )?;
            (run_config, trainer)
        }
    };

    super::create_dir(out)?;
    super::write_resolved(&run_config, out)?;

    let log_path = out.join("train_log.csv");
    let mut log = std::fs::File::create(&log_path).map_err(|source| Error::Io {
        path: log_path.clone(),
        source,
    })?;
    writeln!(log, "step,lr,wbce,sc,s1,total").map_err(|source| Error::Io {
        path: log_path.clone(),
        source,
    })?;

    let every = run_config.train.checkpoint_every;
    let run_config_for_ckpt = run_config.clone();
    let out_dir = out.to_path_buf();
    let log_path_for_rows = log_path.clone();
    trainer.run(move |trainer, row| {
        writeln!(
            log,
            "{},{},{},{},{},{}",
            row.step, row.lr, row.wbce, row.sc, row.s1, row.total
        )
        .map_err(|source| Error::Io {
            path: log_path_for_rows.clone(),
            source,
        })?;
        if every > 0 && row.step % every == 0 {
            let ckpt = Checkpoint::capture(&run_config_for_ckpt, trainer);
            checkpoint::save(&out_dir.join(format!("step_{:06}.ckpt", row.step)), &ckpt)?;
        }
        Ok(())
    })?;

    // Learning-rate decay events, one per line.
    if !trainer.events.is_empty() {
        let mut text = String::new();
        for e in &trainer.events {
            text.push_str(&format!(
                "step {} lr {} -> {}\n",
                e.step, e.old_lr, e.new_lr
            ));
        }
        super::write_text(&out.join("events.log"), &text)?;
    }

    run_config.train = trainer.config.clone();
    let ckpt = Checkpoint::capture(&run_config, &mut trainer);
    checkpoint::save(&out.join("final.ckpt"), &ckpt)?;
    println!(
        "trained to step {} (final checkpoint {})",
        trainer.opt.step,
        out.join("final.ckpt").display()
    );
    Ok(())
}

/// Shared by the ablation suites: train in memory and return the trainer.
pub fn train_in_memory(run_config: &RunConfig, samples: &[sfcn::data::Sample]) -> Result<Trainer> {
    let mut run_config = run_config.clone();
    if run_config.mean.kind == MeanKind::Dataset && run_config.mean.vector.is_none() {
        run_config.mean.vector = Some(dataset_mean(samples)?);
    }
    let net = Sfcn::init(run_config.model.clone(), run_config.train.seed)?;
    let extractor = FeatureExtractor::new(run_config.loss.extractor_seed);
    let mut trainer = Trainer::new(
        net,
        extractor,
        run_config.loss.clone(),
        run_config.mean.clone(),
        run_config.train.clone(),
        samples,
    )?;
    trainer.run(|_, _| Ok(()))?;
    Ok(trainer)
}
