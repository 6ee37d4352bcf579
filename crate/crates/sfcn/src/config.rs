//! Run configuration: a plain-text `section.key = value` file merged with
//! command-line overrides (overrides win). Unknown keys are rejected, and
//! every run can write back its fully-resolved configuration in a canonical
//! form that round-trips byte-exactly.

use std::path::Path;

use crate::data::synth::{Background, ShapeKind, SynthSpec};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::net::{InputMode, SfcnConfig};
use crate::reflection::{MeanKind, MeanSpec, IMAGENET_MEAN};
use crate::train::TrainConfig;

/// Everything a run needs, resolved.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: SfcnConfig,
    pub mean: MeanSpec,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub metrics_beta2: f64,
    pub metrics_s_lambda: f64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            model: SfcnConfig::desk(),
            mean: MeanSpec::fixed(IMAGENET_MEAN),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            synth: SynthSpec::default(),
            metrics_beta2: 0.3,
            metrics_s_lambda: 0.5,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got `{v}`"))),
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got `{v}`")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected an integer, got `{v}`")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected an integer, got `{v}`")))
}

fn parse_vec3(key: &str, v: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = v
        .split(',')
        .map(|p| parse_f64(key, p.trim()))
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "{key}: expected three comma-separated values, got {}",
            parts.len()
        )));
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn parse_blocks(key: &str, v: &str) -> Result<Vec<(usize, usize)>> {
    v.split(',')
        .map(|part| {
            let part = part.trim();
            let (n, c) = part.split_once('x').ok_or_else(|| {
                Error::Config(format!("{key}: expected COUNTxCHANNELS entries, got `{part}`"))
            })?;
            Ok((parse_usize(key, n)?, parse_usize(key, c)?))
        })
        .collect()
}

impl RunConfig {
    /// Apply one `section.key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "model.input_size" => {
                let size = match value.split_once('x') {
                    Some((h, w)) => (parse_usize(key, h)?, parse_usize(key, w)?),
                    None => {
                        let s = parse_usize(key, value)?;
                        (s, s)
                    }
                };
                self.model.input_size = size;
            }
            "model.encoder_blocks" => self.model.encoder_blocks = parse_blocks(key, value)?,
            "model.fusion_channels" => self.model.fusion_channels = parse_usize(key, value)?,
            "model.head_kernel" => self.model.head_kernel = parse_usize(key, value)?,
            "model.share_weights" => self.model.share_weights = parse_bool(key, value)?,
            "model.norm" => self.model.norm = value.to_string(),
            "model.input_mode" => self.model.input_mode = InputMode::from_name(value)?,
            "reflection.k" => self.model.k = parse_f64(key, value)?,
            "reflection.mean" => {
                self.mean.kind = match value {
                    "fixed" => MeanKind::FixedVector,
                    "dataset" => MeanKind::Dataset,
                    "per-image" => MeanKind::PerImage,
                    "middle" => MeanKind::Middle,
                    "zero" => MeanKind::Zero,
                    other => {
                        return Err(Error::Config(format!(
                            "reflection.mean: unknown kind `{other}`"
                        )))
                    }
                };
                if !matches!(self.mean.kind, MeanKind::FixedVector | MeanKind::Dataset) {
                    self.mean.vector = None;
                } else if self.mean.kind == MeanKind::FixedVector && self.mean.vector.is_none() {
                    self.mean.vector = Some(IMAGENET_MEAN);
                }
            }
            "reflection.mean_vector" => self.mean.vector = Some(parse_vec3(key, value)?),
            "loss.mu" => self.loss.mu = parse_f64(key, value)?,
            "loss.gamma" => self.loss.gamma = parse_f64(key, value)?,
            "loss.epsilon" => self.loss.epsilon_s1 = parse_f64(key, value)?,
            "loss.lambda" => {
                self.loss.lambda_per_layer = value
                    .split(',')
                    .map(|p| parse_f64(key, p.trim()))
                    .collect::<Result<_>>()?;
            }
            "loss.selected_layers" => {
                // 1-based in the file, 0-based internally.
                let layers: Vec<usize> = value
                    .split(',')
                    .map(|p| parse_usize(key, p.trim()))
                    .collect::<Result<_>>()?;
                if layers.contains(&0) {
                    return Err(Error::Config(
                        "loss.selected_layers: layers are numbered from 1".into(),
                    ));
                }
                self.loss.selected_layers = layers.into_iter().map(|l| l - 1).collect();
            }
            "loss.wbce_complement" => self.loss.wbce_complement = parse_bool(key, value)?,
            "loss.extractor_seed" => self.loss.extractor_seed = parse_u64(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_usize(key, value)?,
            "train.momentum" => self.train.momentum = parse_f64(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse_f64(key, value)?,
            "train.base_lr" => self.train.base_lr = parse_f64(key, value)?,
            "train.lr_decay_factor" => self.train.lr_decay_factor = parse_f64(key, value)?,
            "train.plateau_patience" => self.train.plateau_patience = parse_usize(key, value)?,
            "train.max_iters" => self.train.max_iters = parse_usize(key, value)?,
            "train.seed" => self.train.seed = parse_u64(key, value)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse_usize(key, value)?,
            "train.augment" => self.train.augment = parse_bool(key, value)?,
            "data.count" => self.synth.count = parse_usize(key, value)?,
            "data.canvas" => self.synth.canvas_size = parse_usize(key, value)?,
            "data.shapes_min" => self.synth.shapes_min = parse_usize(key, value)?,
            "data.shapes_max" => self.synth.shapes_max = parse_usize(key, value)?,
            "data.kinds" => {
                self.synth.kinds = value
                    .split(',')
                    .map(|p| ShapeKind::from_name(p.trim()))
                    .collect::<Result<_>>()?;
            }
            "data.contrast_min" => self.synth.contrast_min = parse_f64(key, value)?,
            "data.contrast_max" => self.synth.contrast_max = parse_f64(key, value)?,
            "data.background" => self.synth.background = Background::from_name(value)?,
            "data.coverage_min" => self.synth.coverage_min = parse_f64(key, value)?,
            "data.coverage_max" => self.synth.coverage_max = parse_f64(key, value)?,
            "data.seed" => self.synth.seed = parse_u64(key, value)?,
            "metrics.beta2" => self.metrics_beta2 = parse_f64(key, value)?,
            "metrics.s_lambda" => self.metrics_s_lambda = parse_f64(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parse a configuration file body ('#' starts a comment line).
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = RunConfig::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    /// Apply `key=value` override strings (command-line flags win over the
    /// file).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for entry in overrides {
            let (key, value) = entry.split_once('=').ok_or_else(|| {
                Error::Config(format!("override `{entry}`: expected key=value"))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.metrics_beta2 <= 0.0 || !(0.0..=1.0).contains(&self.metrics_s_lambda) {
            return Err(Error::Config("invalid metrics parameters".into()));
        }
        Ok(())
    }

    /// Canonical serialization: fixed key order, shortest round-trip floats.
    /// `load(save(c)) == c` and re-serializing is byte-identical.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let blocks = self
            .model
            .encoder_blocks
            .iter()
            .map(|(n, c)| format!("{n}x{c}"))
            .collect::<Vec<_>>()
            .join(",");
        let kinds = self
            .synth
            .kinds
            .iter()
            .map(|k| match k {
                ShapeKind::Disk => "disk",
                ShapeKind::Rectangle => "rect",
                ShapeKind::Blob => "blob",
            })
            .collect::<Vec<_>>()
            .join(",");
        let mean_kind = match self.mean.kind {
            MeanKind::FixedVector => "fixed",
            MeanKind::Dataset => "dataset",
            MeanKind::PerImage => "per-image",
            MeanKind::Middle => "middle",
            MeanKind::Zero => "zero",
        };
        let push = |out: &mut String, k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push(&mut out, "model.input_size", {
            let (h, w) = self.model.input_size;
            format!("{h}x{w}")
        });
        push(&mut out, "model.encoder_blocks", blocks);
        push(
            &mut out,
            "model.fusion_channels",
            self.model.fusion_channels.to_string(),
        );
        push(&mut out, "model.head_kernel", self.model.head_kernel.to_string());
        push(
            &mut out,
            "model.share_weights",
            self.model.share_weights.to_string(),
        );
        push(&mut out, "model.norm", self.model.norm.clone());
        push(
            &mut out,
            "model.input_mode",
            self.model.input_mode.name().to_string(),
        );
        push(&mut out, "reflection.k", self.model.k.to_string());
        push(&mut out, "reflection.mean", mean_kind.to_string());
        if let Some(v) = self.mean.vector {
            push(
                &mut out,
                "reflection.mean_vector",
                format!("{},{},{}", v[0], v[1], v[2]),
            );
        }
        push(&mut out, "loss.mu", self.loss.mu.to_string());
        push(&mut out, "loss.gamma", self.loss.gamma.to_string());
        push(&mut out, "loss.epsilon", self.loss.epsilon_s1.to_string());
        push(
            &mut out,
            "loss.lambda",
            self.loss
                .lambda_per_layer
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        push(
            &mut out,
            "loss.selected_layers",
            self.loss
                .selected_layers
                .iter()
                .map(|l| (l + 1).to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push(
            &mut out,
            "loss.wbce_complement",
            self.loss.wbce_complement.to_string(),
        );
        push(
            &mut out,
            "loss.extractor_seed",
            self.loss.extractor_seed.to_string(),
        );
        push(&mut out, "train.batch_size", self.train.batch_size.to_string());
        push(&mut out, "train.momentum", self.train.momentum.to_string());
        push(
            &mut out,
            "train.weight_decay",
            self.train.weight_decay.to_string(),
        );
        push(&mut out, "train.base_lr", self.train.base_lr.to_string());
        push(
            &mut out,
            "train.lr_decay_factor",
            self.train.lr_decay_factor.to_string(),
        );
        push(
            &mut out,
            "train.plateau_patience",
            self.train.plateau_patience.to_string(),
        );
        push(&mut out, "train.max_iters", self.train.max_iters.to_string());
        push(&mut out, "train.seed", self.train.seed.to_string());
        push(
            &mut out,
            "train.checkpoint_every",
            self.train.checkpoint_every.to_string(),
        );
        push(&mut out, "train.augment", self.train.augment.to_string());
        push(&mut out, "data.count", self.synth.count.to_string());
        push(&mut out, "data.canvas", self.synth.canvas_size.to_string());
        push(&mut out, "data.shapes_min", self.synth.shapes_min.to_string());
        push(&mut out, "data.shapes_max", self.synth.shapes_max.to_string());
        push(&mut out, "data.kinds", kinds);
        push(
            &mut out,
            "data.contrast_min",
            self.synth.contrast_min.to_string(),
        );
        push(
            &mut out,
            "data.contrast_max",
            self.synth.contrast_max.to_string(),
        );
        push(
            &mut out,
            "data.background",
            match self.synth.background {
                Background::Flat => "flat",
                Background::Gradient => "gradient",
                Background::Noise => "noise",
            }
            .to_string(),
        );
        push(
            &mut out,
            "data.coverage_min",
            self.synth.coverage_min.to_string(),
        );
        push(
            &mut out,
            "data.coverage_max",
            self.synth.coverage_max.to_string(),
        );
        push(&mut out, "data.seed", self.synth.seed.to_string());
        push(&mut out, "metrics.beta2", self.metrics_beta2.to_string());
        push(&mut out, "metrics.s_lambda", self.metrics_s_lambda.to_string());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
