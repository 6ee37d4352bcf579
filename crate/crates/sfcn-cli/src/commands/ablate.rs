//! `sfcn ablate`: train a family of configuration variants under one seed
//! and budget, score each on the dataset, and emit a comparison CSV with
//! rows per variant and columns F (max-F), MAE, S.

use std::path::Path;

use sfcn::config::RunConfig;
use sfcn::data::load_dataset;
use sfcn::metrics::{evaluate, EvalEntry};
use sfcn::{Error, Result};

/// A variant is a named list of configuration assignments.
type Variant = (String, Vec<(&'static str, String)>);

fn variants(suite: &str) -> Result<Vec<Variant>> {
    let list: Vec<Variant> = match suite {
        "input" => ["origin", "reflected", "paired"]
            .into_iter()
            .map(|mode| {
                (
                    mode.to_string(),
                    vec![("model.input_mode", mode.to_string())],
                )
            })
            .collect(),
        "mean" => ["fixed", "dataset", "per-image", "middle", "zero"]
            .into_iter()
            .map(|kind| {
                (
                    kind.to_string(),
                    vec![("reflection.mean", kind.to_string())],
                )
            })
            .collect(),
        "k" => ["-2", "-1", "1", "2", "4"]
            .into_iter()
            .map(|k| (format!("k={k}"), vec![("reflection.k", k.to_string())]))
            .collect(),
        "share" => vec![
            (
                "shared".to_string(),
                vec![("model.share_weights", "true".to_string())],
            ),
            (
                "unshared".to_string(),
                vec![("model.share_weights", "false".to_string())],
            ),
        ],
        "bn" => {
            let mut rows = Vec::new();
            for norm in ["bn", "adabn"] {
                for batch in [1usize, 2, 4, 8, 12] {
                    rows.push((
                        format!("{norm}_b{batch}"),
                        vec![
                            ("model.norm", norm.to_string()),
                            ("train.batch_size", batch.to_string()),
                        ],
                    ));
                }
            }
            rows
        }
        other => {
            return Err(Error::Config(format!(
                "unknown ablation suite `{other}` (expected input, mean, k, share or bn)"
            )))
        }
    };
    Ok(list)
}

pub fn run(
    suite: &str,
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    budget: Option<usize>,
    overrides: &[String],
) -> Result<()> {
    let mut base = super::resolve_config(config, overrides)?;
    if let Some(budget) = budget {
        base.train.max_iters = budget;
    }
    let samples = load_dataset(data)?;
    if samples.is_empty() {
        return Err(Error::Data(format!(
            "dataset {} holds no samples",
            data.display()
        )));
    }

    super::create_dir(out)?;
    super::write_resolved(&base, out)?;

    let mut csv = String::from("variant,F,MAE,S\n");
    for (name, assignments) in variants(suite)? {
        let mut run_config: RunConfig = base.clone();
        for (key, value) in &assignments {
            run_config.set(key, value)?;
        }
        run_config.validate()?;
        let trainer = super::train::train_in_memory(&run_config, &samples)?;
        let predictions = trainer.predict_eval(trainer.samples())?;
        let (h, w) = trainer.net.config.input_size;
        let entries: Vec<EvalEntry> = predictions
            .into_iter()
            .zip(trainer.samples())
            .map(|((id, map), sample)| EvalEntry {
                id,
                map,
                truth: sample.mask.data().to_vec(),
                height: h,
                width: w,
            })
            .collect();
        let report = evaluate(&entries)?;
        println!(
            "{suite}/{name}: F {:.4} MAE {:.4} S {:.4}",
            report.f_max, report.mae, report.s_measure
        );
        csv.push_str(&format!(
            "{name},{},{},{}\n",
            report.f_max, report.mae, report.s_measure
        ));
    }
    super::write_text(&out.join(format!("ablation_{suite}.csv")), &csv)?;
    Ok(())
}
