//! Binary checkpoints: magic "SFCN", a format version, then length-prefixed
//! named blocks (little-endian throughout). Blocks appear in a fixed order,
//! so save -> load -> save is byte-identical, and the stored optimizer and
//! RNG state make resumed runs reproduce uninterrupted ones exactly.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::loss::FeatureExtractor;
use crate::net::Sfcn;
use crate::norm::{Domain, RunningStats};
use crate::tensor::Tensor;
use crate::train::{OptState, Trainer};

const MAGIC: &[u8; 4] = b"SFCN";
const VERSION: u32 = 1;

/// Everything needed to restore a network or resume its training run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_text: String,
    /// (name, shape, data) in parameter visit order.
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
    /// (layer name, domain slot, stats) in layer order, slots ascending.
    pub stats: Vec<(String, u16, RunningStats)>,
    /// Momentum buffers in parameter visit order.
    pub velocities: Vec<(String, Vec<f64>)>,
    pub opt: OptState,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

impl Checkpoint {
    /// Snapshot a trainer (parameters, statistics, optimizer, RNG).
    pub fn capture(run: &RunConfig, trainer: &mut Trainer) -> Checkpoint {
        let params = trainer
            .net
            .params
            .named()
            .into_iter()
            .map(|(name, t, _)| (name, t.shape().to_vec(), t.data().to_vec()))
            .collect();
        let mut stats = Vec::new();
        for (b, block) in trainer.net.params.encoder.iter().enumerate() {
            for (l, layer) in block.iter().enumerate() {
                for slot in layer.norm.slots() {
                    let s = layer.norm.running(slot).unwrap();
                    stats.push((format!("enc.{b}.{l}.bn"), slot.0, s));
                }
            }
        }
        let velocities = trainer
            .velocities
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Checkpoint {
            config_text: run.to_text(),
            params,
            stats,
            velocities,
            opt: trainer.opt.clone(),
            rng_seed: trainer.rng.get_seed(),
            rng_word_pos: trainer.rng.get_word_pos(),
        }
    }

    pub fn config(&self) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        config.apply_text(&self.config_text)?;
        Ok(config)
    }

    /// Rebuild the network with the stored parameters and statistics.
    pub fn build_net(&self) -> Result<Sfcn> {
        let run = self.config()?;
        let mut net = Sfcn::init(run.model, run.train.seed)?;
        let mut expected = std::collections::VecDeque::from(self.params.clone());
        let mut mismatch: Option<String> = None;
        net.params.visit_mut(&mut |p| {
            if mismatch.is_some() {
                return;
            }
            match expected.pop_front() {
                Some((name, shape, data)) if name == p.name => {
                    if shape != p.tensor.shape() {
                        mismatch = Some(format!(
                            "parameter `{name}`: stored shape {shape:?} vs model {:?}",
                            p.tensor.shape()
                        ));
                        return;
                    }
                    *p.tensor = Tensor::param(&shape, data).unwrap();
                }
                Some((name, _, _)) => {
                    mismatch = Some(format!("expected parameter `{}`, found `{name}`", p.name))
                }
                None => mismatch = Some(format!("missing parameter `{}`", p.name)),
            }
        });
        if let Some(m) = mismatch {
            return Err(Error::Checkpoint(m));
        }
        if let Some((name, _, _)) = expected.front() {
            return Err(Error::Checkpoint(format!("extra parameter `{name}`")));
        }
        for (layer_name, slot, stats) in &self.stats {
            let Some(rest) = layer_name.strip_prefix("enc.") else {
                return Err(Error::Checkpoint(format!("bad stats block `{layer_name}`")));
            };
            let parts: Vec<&str> = rest.split('.').collect();
            let (b, l) = match (parts.first(), parts.get(1)) {
                (Some(b), Some(l)) => (
                    b.parse::<usize>()
                        .map_err(|_| Error::Checkpoint(format!("bad stats block `{layer_name}`")))?,
                    l.parse::<usize>()
                        .map_err(|_| Error::Checkpoint(format!("bad stats block `{layer_name}`")))?,
                ),
                _ => return Err(Error::Checkpoint(format!("bad stats block `{layer_name}`"))),
            };
            let layer = net
                .params
                .encoder
                .get(b)
                .and_then(|block| block.get(l))
                .ok_or_else(|| {
                    Error::Checkpoint(format!("stats block `{layer_name}` has no layer"))
                })?;
            layer.norm.set_running(Domain(*slot), stats.clone());
        }
        Ok(net)
    }

    /// Resume a full training run against the given dataset.
    pub fn resume(&self, samples: &[Sample]) -> Result<Trainer> {
        let run = self.config()?;
        let net = self.build_net()?;
        let extractor = FeatureExtractor::new(run.loss.extractor_seed);
        let mut trainer = Trainer::new(
            net,
            extractor,
            run.loss.clone(),
            run.mean.clone(),
            run.train.clone(),
            samples,
        )?;
        trainer.velocities = self.velocities.iter().cloned().collect();
        trainer.opt = self.opt.clone();
        trainer.rng = ChaCha8Rng::from_seed(self.rng_seed);
        trainer.rng.set_word_pos(self.rng_word_pos);
        Ok(trainer)
    }
}

struct Writer {
    bytes: Vec<u8>,
}

impl Writer {
    fn block(&mut self, name: &str, payload: &[u8]) {
        self.bytes
            .extend_from_slice(&(name.len() as u32).to_le_bytes());
        self.bytes.extend_from_slice(name.as_bytes());
        self.bytes
            .extend_from_slice(&(payload.len() as u64).to_le_bytes());
        self.bytes.extend_from_slice(payload);
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let mut w = Writer {
        bytes: Vec::with_capacity(1 << 16),
    };
    w.bytes.extend_from_slice(MAGIC);
    w.bytes.extend_from_slice(&VERSION.to_le_bytes());

    w.block("config", checkpoint.config_text.as_bytes());
    for (name, shape, data) in &checkpoint.params {
        let mut payload = Vec::with_capacity(4 + shape.len() * 8 + data.len() * 8);
        payload.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            payload.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        put_f64s(&mut payload, data);
        w.block(&format!("param:{name}"), &payload);
    }
    for (layer, slot, stats) in &checkpoint.stats {
        let mut payload = Vec::new();
        payload.extend_from_slice(&(stats.mean.len() as u64).to_le_bytes());
        payload.extend_from_slice(&stats.count.to_le_bytes());
        put_f64s(&mut payload, &stats.mean);
        put_f64s(&mut payload, &stats.var);
        w.block(&format!("stats:{layer}:{slot}"), &payload);
    }
    for (name, velocity) in &checkpoint.velocities {
        let mut payload = Vec::new();
        put_f64s(&mut payload, velocity);
        w.block(&format!("mom:{name}"), &payload);
    }
    let mut opt = Vec::new();
    opt.extend_from_slice(&(checkpoint.opt.step as u64).to_le_bytes());
    opt.extend_from_slice(&checkpoint.opt.lr.to_le_bytes());
    opt.push(checkpoint.opt.ema.is_some() as u8);
    opt.extend_from_slice(&checkpoint.opt.ema.unwrap_or(0.0).to_le_bytes());
    opt.extend_from_slice(&checkpoint.opt.best_ema.to_le_bytes());
    opt.extend_from_slice(&(checkpoint.opt.since_improve as u64).to_le_bytes());
    w.block("opt", &opt);
    let mut rng = Vec::with_capacity(48);
    rng.extend_from_slice(&checkpoint.rng_seed);
    rng.extend_from_slice(&checkpoint.rng_word_pos.to_le_bytes());
    w.block("rng", &rng);

    std::fs::write(path, &w.bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic (not an SFCN checkpoint)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }

    let mut checkpoint = Checkpoint {
        config_text: String::new(),
        params: Vec::new(),
        stats: Vec::new(),
        velocities: Vec::new(),
        opt: OptState {
            step: 0,
            lr: 0.0,
            ema: None,
            best_ema: f64::INFINITY,
            since_improve: 0,
        },
        rng_seed: [0; 32],
        rng_word_pos: 0,
    };
    let mut seen_config = false;
    let mut seen_rng = false;
    while r.pos < bytes.len() {
        let name_len = r.u32("block name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "block name")?.to_vec())
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
        let payload_len = r.u64("block payload length")? as usize;
        let payload = r.take(payload_len, &name)?;
        let mut pr = Reader {
            bytes: payload,
            pos: 0,
        };
        if name == "config" {
            checkpoint.config_text = String::from_utf8(payload.to_vec())
                .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
            seen_config = true;
        } else if let Some(pname) = name.strip_prefix("param:") {
            let ndim = pr.u32("ndim")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(pr.u64("dim")? as usize);
            }
            let n: usize = shape.iter().product();
            let data = pr.f64s(n, "parameter data")?;
            checkpoint.params.push((pname.to_string(), shape, data));
        } else if let Some(rest) = name.strip_prefix("stats:") {
            let (layer, slot) = rest.rsplit_once(':').ok_or_else(|| {
                Error::Checkpoint(format!("bad stats block name `{name}`"))
            })?;
            let slot: u16 = slot
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad domain slot in `{name}`")))?;
            let channels = pr.u64("stats channels")? as usize;
            let count = pr.u64("stats count")?;
            let mean = pr.f64s(channels, "stats mean")?;
            let var = pr.f64s(channels, "stats var")?;
            checkpoint
                .stats
                .push((layer.to_string(), slot, RunningStats { mean, var, count }));
        } else if let Some(pname) = name.strip_prefix("mom:") {
            let n = payload_len / 8;
            checkpoint
                .velocities
                .push((pname.to_string(), pr.f64s(n, "momentum buffer")?));
        } else if name == "opt" {
            checkpoint.opt.step = pr.u64("opt step")? as usize;
            checkpoint.opt.lr = pr.f64("opt lr")?;
            let has_ema = pr.take(1, "opt ema flag")?[0] != 0;
            let ema = pr.f64("opt ema")?;
            checkpoint.opt.ema = has_ema.then_some(ema);
            checkpoint.opt.best_ema = pr.f64("opt best ema")?;
            checkpoint.opt.since_improve = pr.u64("opt since improve")? as usize;
        } else if name == "rng" {
            checkpoint
                .rng_seed
                .copy_from_slice(pr.take(32, "rng seed")?);
            checkpoint.rng_word_pos =
                u128::from_le_bytes(pr.take(16, "rng word pos")?.try_into().unwrap());
            seen_rng = true;
        } else {
            return Err(Error::Checkpoint(format!("unknown block `{name}`")));
        }
    }
    if !seen_config || !seen_rng {
        return Err(Error::Checkpoint("incomplete checkpoint".into()));
    }
    Ok(checkpoint)
}
