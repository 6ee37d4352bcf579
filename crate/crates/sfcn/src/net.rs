//! The symmetric network: two weight-sharing sibling encoders with
//! per-domain normalization statistics, a hierarchical fusion decoder, and
//! a two-channel softmax head read out as a saliency map.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::norm::{self, AdaBnLayerState, Domain, Mode, Normalizer, ORIGIN, REFLECTED};
use crate::reflection::{self, MeanSpec};
use crate::tensor::{conv2d, deconv2d, maxpool2d, ops, ConvSpec, Tensor};

/// Which inputs feed the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// Both reciprocal inputs through both sibling branches.
    Paired,
    /// Origin input only (single-branch fusion).
    OriginOnly,
    /// Reflected input only.
    ReflectedOnly,
}

impl InputMode {
    pub fn name(&self) -> &'static str {
        match self {
            InputMode::Paired => "paired",
            InputMode::OriginOnly => "origin",
            InputMode::ReflectedOnly => "reflected",
        }
    }

    pub fn from_name(name: &str) -> Result<InputMode> {
        match name {
            "paired" => Ok(InputMode::Paired),
            "origin" => Ok(InputMode::OriginOnly),
            "reflected" => Ok(InputMode::ReflectedOnly),
            other => Err(Error::Config(format!(
                "unknown input mode `{other}` (expected paired, origin or reflected)"
            ))),
        }
    }
}

/// Network topology and variant switches.
#[derive(Debug, Clone, PartialEq)]
pub struct SfcnConfig {
    pub input_size: (usize, usize),
    /// Per block: (conv layer count, output channels). Pooling sits between
    /// blocks, so block l produces features at 1/2^l of input resolution.
    pub encoder_blocks: Vec<(usize, usize)>,
    pub fusion_channels: usize,
    pub head_kernel: usize,
    pub share_weights: bool,
    /// Reflection scale for the reciprocal pair.
    pub k: f64,
    pub input_mode: InputMode,
    /// Registered normalization strategy name ("adabn" or "bn").
    pub norm: String,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl SfcnConfig {
    /// Desk-scale preset: trains and gradient-checks in minutes on a CPU.
    pub fn desk() -> SfcnConfig {
        SfcnConfig {
            input_size: (64, 64),
            encoder_blocks: vec![(2, 16), (2, 32), (3, 64), (3, 64), (3, 64)],
            fusion_channels: 64,
            head_kernel: 3,
            share_weights: true,
            k: 1.0,
            input_mode: InputMode::Paired,
            norm: "adabn".to_string(),
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Full-scale topology: 13 convolutions in 5 blocks with 4 pools.
    pub fn paper() -> SfcnConfig {
        SfcnConfig {
            input_size: (384, 384),
            encoder_blocks: vec![(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)],
            ..SfcnConfig::desk()
        }
    }

    /// Minimal two-block topology for finite-difference verification.
    pub fn tiny() -> SfcnConfig {
        SfcnConfig {
            input_size: (8, 8),
            encoder_blocks: vec![(1, 4), (1, 6)],
            fusion_channels: 8,
            ..SfcnConfig::desk()
        }
    }

    pub fn pool_count(&self) -> usize {
        self.encoder_blocks.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_blocks.is_empty() {
            return Err(Error::Config("encoder needs at least one block".into()));
        }
        if self.encoder_blocks.iter().any(|(n, c)| *n == 0 || *c == 0) {
            return Err(Error::Config(
                "encoder blocks need a positive conv count and channel count".into(),
            ));
        }
        if self.fusion_channels == 0 {
            return Err(Error::Config("fusion_channels must be positive".into()));
        }
        if self.head_kernel.is_multiple_of(2) {
            return Err(Error::Config("head_kernel must be odd".into()));
        }
        if self.k == 0.0 {
            return Err(Error::Config("reflection scale k must be nonzero".into()));
        }
        let div = 1usize << self.pool_count();
        let (h, w) = self.input_size;
        if h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} is not divisible by 2^{} (one pool per block gap)",
                self.pool_count()
            )));
        }
        norm::normalizer(&self.norm)?;
        Ok(())
    }

    /// Number of sibling branches the input mode drives.
    fn paired(&self) -> bool {
        self.input_mode == InputMode::Paired
    }
}

/// Weights and bias of one convolution.
#[derive(Debug)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// One encoder convolution with its normalization state.
#[derive(Debug)]
pub struct EncoderLayer {
    pub conv: ConvLayer,
    pub norm: AdaBnLayerState,
}

/// One fusion level: channel squeeze plus the resolution-doubling
/// deconvolution (absent at the shallowest level, which is already at input
/// resolution).
#[derive(Debug)]
pub struct FusionLevel {
    pub squeeze: ConvLayer,
    pub up: Option<Tensor>,
}

/// All learnable state of the network.
///
/// With shared weights both branches read `encoder`; otherwise the reflected
/// branch reads `encoder_alt` for convolutions while normalization state
/// (shared affine, per-domain statistics) always lives in `encoder`.
#[derive(Debug)]
pub struct SfcnParams {
    pub encoder: Vec<Vec<EncoderLayer>>,
    pub encoder_alt: Option<Vec<Vec<ConvLayer>>>,
    pub fusion: Vec<FusionLevel>,
    pub head: ConvLayer,
}

/// Mutable view of one named parameter during updates.
pub struct ParamRef<'a> {
    pub name: String,
    pub tensor: &'a mut Tensor,
    /// Whether weight decay applies (never for biases and affine terms).
    pub decay: bool,
}

fn msra(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    use rand::Rng;
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    // Box-Muller on ChaCha draws keeps initialization reproducible across
    // platforms without pulling in a distributions crate.
    let data = (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen::<f64>();
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    Tensor::param(shape, data).unwrap()
}

fn conv_layer(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize, k: usize) -> ConvLayer {
    ConvLayer {
        weight: msra(rng, &[out_ch, in_ch, k, k], in_ch * k * k),
        bias: Tensor::param(&[out_ch], vec![0.0; out_ch]).unwrap(),
    }
}

impl SfcnParams {
    fn init(config: &SfcnConfig, rng: &mut ChaCha8Rng) -> SfcnParams {
        let build_convs = |rng: &mut ChaCha8Rng| -> Vec<Vec<ConvLayer>> {
            let mut in_ch = 3;
            let mut blocks = Vec::new();
            for &(count, out_ch) in &config.encoder_blocks {
                let mut layers = Vec::new();
                for _ in 0..count {
                    layers.push(conv_layer(rng, in_ch, out_ch, 3));
                    in_ch = out_ch;
                }
                blocks.push(layers);
            }
            blocks
        };

        let encoder = build_convs(rng)
            .into_iter()
            .zip(&config.encoder_blocks)
            .map(|(layers, &(_, out_ch))| {
                layers
                    .into_iter()
                    .map(|conv| EncoderLayer {
                        conv,
                        norm: AdaBnLayerState::new(out_ch, config.bn_epsilon, config.bn_momentum),
                    })
                    .collect()
            })
            .collect();

        let encoder_alt = (!config.share_weights).then(|| build_convs(rng));

        let levels = config.encoder_blocks.len();
        let f = config.fusion_channels;
        let mut fusion = Vec::with_capacity(levels);
        for level in 0..levels {
            let ch = config.encoder_blocks[level].1;
            let branch_ch = if config.paired() { 2 * ch } else { ch };
            let in_ch = if level == levels - 1 {
                branch_ch
            } else {
                branch_ch + f
            };
            let squeeze = conv_layer(rng, in_ch, f, 1);
            let up = (level > 0).then(|| msra(rng, &[f, f, 4, 4], f * 16));
            fusion.push(FusionLevel { squeeze, up });
        }

        let head = conv_layer(rng, f, 2, config.head_kernel);
        SfcnParams {
            encoder,
            encoder_alt,
            fusion,
            head,
        }
    }

    /// Visit every learnable parameter in a fixed, documented order.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(ParamRef)) {
        for (b, block) in self.encoder.iter_mut().enumerate() {
            for (l, layer) in block.iter_mut().enumerate() {
                f(ParamRef {
                    name: format!("enc.{b}.{l}.w"),
                    tensor: &mut layer.conv.weight,
                    decay: true,
                });
                f(ParamRef {
                    name: format!("enc.{b}.{l}.b"),
                    tensor: &mut layer.conv.bias,
                    decay: false,
                });
                f(ParamRef {
                    name: format!("enc.{b}.{l}.bn.alpha"),
                    tensor: &mut layer.norm.alpha,
                    decay: false,
                });
                f(ParamRef {
                    name: format!("enc.{b}.{l}.bn.beta"),
                    tensor: &mut layer.norm.beta,
                    decay: false,
                });
            }
        }
        if let Some(alt) = self.encoder_alt.as_mut() {
            for (b, block) in alt.iter_mut().enumerate() {
                for (l, layer) in block.iter_mut().enumerate() {
                    f(ParamRef {
                        name: format!("enc2.{b}.{l}.w"),
                        tensor: &mut layer.weight,
                        decay: true,
                    });
                    f(ParamRef {
                        name: format!("enc2.{b}.{l}.b"),
                        tensor: &mut layer.bias,
                        decay: false,
                    });
                }
            }
        }
        for (level, fl) in self.fusion.iter_mut().enumerate() {
            f(ParamRef {
                name: format!("fuse.{level}.squeeze.w"),
                tensor: &mut fl.squeeze.weight,
                decay: true,
            });
            f(ParamRef {
                name: format!("fuse.{level}.squeeze.b"),
                tensor: &mut fl.squeeze.bias,
                decay: false,
            });
            if let Some(up) = fl.up.as_mut() {
                f(ParamRef {
                    name: format!("fuse.{level}.up.w"),
                    tensor: up,
                    decay: true,
                });
            }
        }
        f(ParamRef {
            name: "head.w".to_string(),
            tensor: &mut self.head.weight,
            decay: true,
        });
        f(ParamRef {
            name: "head.b".to_string(),
            tensor: &mut self.head.bias,
            decay: false,
        });
    }

    /// Snapshot of (name, tensor, decay) triples in visit order.
    pub fn named(&mut self) -> Vec<(String, Tensor, bool)> {
        let mut out = Vec::new();
        self.visit_mut(&mut |p| out.push((p.name, p.tensor.clone(), p.decay)));
        out
    }

    /// Number of scalar parameters stored for the encoder convolutions
    /// (normalization affine included).
    pub fn encoder_parameter_count(&self) -> usize {
        let main: usize = self
            .encoder
            .iter()
            .flatten()
            .map(|l| {
                l.conv.weight.numel()
                    + l.conv.bias.numel()
                    + l.norm.alpha.numel()
                    + l.norm.beta.numel()
            })
            .sum();
        let alt: usize = self
            .encoder_alt
            .iter()
            .flatten()
            .flatten()
            .map(|l| l.weight.numel() + l.bias.numel())
            .sum();
        main + alt
    }
}

/// Prediction head outputs at input resolution.
///
/// `fg`/`bg` are the two softmax planes (sum to 1 per pixel); `saliency` is
/// `max(0, fg - bg)`.
#[derive(Debug, Clone)]
pub struct PredictionMaps {
    pub z0: Tensor,
    pub z1: Tensor,
    pub fg: Tensor,
    pub bg: Tensor,
    pub saliency: Tensor,
}

/// The assembled network.
pub struct Sfcn {
    pub config: SfcnConfig,
    pub params: SfcnParams,
    normalizer: Arc<dyn Normalizer>,
}

impl Sfcn {
    /// Fresh network with msra-initialized weights, reproducible per seed.
    pub fn init(config: SfcnConfig, seed: u64) -> Result<Sfcn> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = SfcnParams::init(&config, &mut rng);
        Sfcn::from_parts(config, params)
    }

    /// Assemble from existing parameters (checkpoint restore).
    pub fn from_parts(config: SfcnConfig, params: SfcnParams) -> Result<Sfcn> {
        config.validate()?;
        let normalizer = norm::normalizer(&config.norm)?;
        Ok(Sfcn {
            config,
            params,
            normalizer,
        })
    }

    pub fn normalizer(&self) -> &dyn Normalizer {
        self.normalizer.as_ref()
    }

    /// Copy with all parameters off the tape: forward passes retain no
    /// gradient graph, so large inference runs stay light.
    pub fn detached(&self) -> Result<Sfcn> {
        let detach_conv = |c: &ConvLayer| ConvLayer {
            weight: c.weight.detach(),
            bias: c.bias.detach(),
        };
        let params = SfcnParams {
            encoder: self
                .params
                .encoder
                .iter()
                .map(|block| {
                    block
                        .iter()
                        .map(|l| EncoderLayer {
                            conv: detach_conv(&l.conv),
                            norm: l.norm.detached_copy(),
                        })
                        .collect()
                })
                .collect(),
            encoder_alt: self.params.encoder_alt.as_ref().map(|alt| {
                alt.iter()
                    .map(|block| block.iter().map(detach_conv).collect())
                    .collect()
            }),
            fusion: self
                .params
                .fusion
                .iter()
                .map(|f| FusionLevel {
                    squeeze: detach_conv(&f.squeeze),
                    up: f.up.as_ref().map(Tensor::detach),
                })
                .collect(),
            head: detach_conv(&self.params.head),
        };
        Sfcn::from_parts(self.config.clone(), params)
    }

    fn branch_conv(&self, domain: Domain, block: usize, layer: usize) -> &ConvLayer {
        match (&self.params.encoder_alt, domain) {
            (Some(alt), REFLECTED) => &alt[block][layer],
            _ => &self.params.encoder[block][layer].conv,
        }
    }

    /// Run one sibling branch; returns the last feature map of every block,
    /// shallow to deep.
    pub fn encode(&self, x: &Tensor, domain: Domain, mode: Mode) -> Result<Vec<Tensor>> {
        let mut features = Vec::with_capacity(self.config.encoder_blocks.len());
        let mut cur = x.clone();
        let mut in_ch = 3;
        for (b, &(count, out_ch)) in self.config.encoder_blocks.iter().enumerate() {
            if b > 0 {
                cur = maxpool2d(&cur)?;
            }
            for l in 0..count {
                let conv = self.branch_conv(domain, b, l);
                let spec = ConvSpec::new(in_ch, out_ch, 3);
                let z = conv2d(&cur, &conv.weight, &conv.bias, &spec)?;
                let normed =
                    self.normalizer
                        .forward(&z, &self.params.encoder[b][l].norm, domain, mode)?;
                cur = ops::relu(&normed);
                in_ch = out_ch;
            }
            features.push(cur.clone());
        }
        Ok(features)
    }

    /// Hierarchical fusion: deepest level concatenates the sibling features,
    /// shallower levels interleave the upsampled deeper fusion output in the
    /// order (g_l, f_{l+1}, g*_l). Returns the full-resolution map.
    pub fn fuse(&self, g: &[Tensor], g_star: Option<&[Tensor]>) -> Result<Tensor> {
        let levels = self.config.encoder_blocks.len();
        if g.len() != levels || g_star.map(|s| s.len() != levels).unwrap_or(false) {
            return Err(Error::Config(format!(
                "fuse: expected {levels} feature levels, got {} / {:?}",
                g.len(),
                g_star.map(|s| s.len())
            )));
        }
        if self.config.paired() != g_star.is_some() {
            return Err(Error::Config(
                "fuse: feature branches do not match the configured input mode".into(),
            ));
        }
        if let Some(gs) = g_star {
            for (level, (a, b)) in g.iter().zip(gs).enumerate() {
                if a.shape() != b.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "fuse level",
                        left: a.shape().to_vec(),
                        right: [&[level], b.shape()].concat(),
                    });
                }
            }
        }
        let f_ch = self.config.fusion_channels;
        let mut carried: Option<Tensor> = None;
        for level in (0..levels).rev() {
            let mut parts = vec![g[level].clone()];
            if let Some(c) = carried.take() {
                parts.push(c);
            }
            if let Some(gs) = g_star {
                parts.push(gs[level].clone());
            }
            let cat = ops::concat_channels(&parts)?;
            let fl = &self.params.fusion[level];
            let spec = ConvSpec::new(cat.shape()[1], f_ch, 1).with_padding(0);
            let squeezed = ops::relu(&conv2d(&cat, &fl.squeeze.weight, &fl.squeeze.bias, &spec)?);
            carried = Some(match fl.up.as_ref() {
                Some(up) => {
                    let dspec = ConvSpec {
                        in_channels: f_ch,
                        out_channels: f_ch,
                        kernel: (4, 4),
                        stride: (2, 2),
                        padding: (1, 1),
                    };
                    deconv2d(&squeezed, up, &dspec)?
                }
                None => squeezed,
            });
        }
        Ok(carried.unwrap())
    }

    /// Full forward pass on an already-reflected batch pair.
    pub fn forward(
        &self,
        origin: &Tensor,
        reflected: &Tensor,
        mode: Mode,
    ) -> Result<PredictionMaps> {
        let fused = match self.config.input_mode {
            InputMode::Paired => {
                let g = self.encode(origin, ORIGIN, mode)?;
                let g_star = self.encode(reflected, REFLECTED, mode)?;
                self.fuse(&g, Some(&g_star))?
            }
            InputMode::OriginOnly => {
                let g = self.encode(origin, ORIGIN, mode)?;
                self.fuse(&g, None)?
            }
            InputMode::ReflectedOnly => {
                let g = self.encode(reflected, REFLECTED, mode)?;
                self.fuse(&g, None)?
            }
        };
        let spec = ConvSpec::new(self.config.fusion_channels, 2, self.config.head_kernel);
        let scores = conv2d(&fused, &self.params.head.weight, &self.params.head.bias, &spec)?;
        // Channel 0 carries the background score, channel 1 the foreground.
        let z0 = ops::narrow_channels(&scores, 0, 1)?;
        let z1 = ops::narrow_channels(&scores, 1, 1)?;
        let (fg, bg) = ops::softmax_pairwise(&z0, &z1)?;
        let saliency = ops::relu(&ops::sub(&fg, &bg)?);
        Ok(PredictionMaps {
            z0,
            z1,
            fg,
            bg,
            saliency,
        })
    }

    /// Reflect raw images and run the network on the resulting batch.
    pub fn predict(
        &self,
        images: &[Tensor],
        mean_spec: &MeanSpec,
        mode: Mode,
    ) -> Result<PredictionMaps> {
        let strategy = reflection::mean_strategy(mean_spec)?;
        let mut origins = Vec::with_capacity(images.len());
        let mut reflecteds = Vec::with_capacity(images.len());
        for image in images {
            let mean = strategy.resolve(image)?;
            let pair = reflection::reflect(image, mean, self.config.k)?;
            origins.push(pair.origin);
            reflecteds.push(pair.reflected);
        }
        let origin = Tensor::stack(&origins)?;
        let reflected = Tensor::stack(&reflecteds)?;
        self.forward(&origin, &reflected, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_images(count: usize, h: usize, w: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let data = (0..3 * h * w).map(|_| rng.gen::<f64>()).collect();
                Tensor::new(&[3, h, w], data).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_input_with_fresh_params_gives_zero_features() {
        let net = Sfcn::init(SfcnConfig::tiny(), 1).unwrap();
        let x = Tensor::zeros(&[1, 3, 8, 8]);
        let features = net.encode(&x, ORIGIN, Mode::Train).unwrap();
        for f in features {
            assert!(f.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn block_resolutions_halve_with_each_pool() {
        let net = Sfcn::init(SfcnConfig::desk(), 2).unwrap();
        let x = Tensor::zeros(&[1, 3, 64, 64]);
        let features = net.encode(&x, ORIGIN, Mode::Train).unwrap();
        let sizes: Vec<usize> = features.iter().map(|f| f.shape()[2]).collect();
        assert_eq!(sizes, vec![64, 32, 16, 8, 4]);
    }

    #[test]
    fn identical_inputs_through_both_domains_give_identical_features() {
        let net = Sfcn::init(SfcnConfig::tiny(), 3).unwrap();
        let x = Tensor::new(
            &[2, 3, 8, 8],
            (0..2 * 3 * 64).map(|i| (i % 17) as f64 * 0.05).collect(),
        )
        .unwrap();
        let a = net.encode(&x, ORIGIN, Mode::Train).unwrap();
        let b = net.encode(&x, REFLECTED, Mode::Train).unwrap();
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.data(), fb.data());
        }
    }

    #[test]
    fn fusion_concat_width_follows_the_level_formula() {
        let config = SfcnConfig::tiny();
        let net = Sfcn::init(config.clone(), 4).unwrap();
        // Shallow squeeze consumes g_l + carried + g*_l channels.
        let expect_in = 2 * config.encoder_blocks[0].1 + config.fusion_channels;
        assert_eq!(net.params.fusion[0].squeeze.weight.shape()[1], expect_in);
        // Deepest squeeze consumes only the two sibling maps.
        let deepest = config.encoder_blocks.last().unwrap().1 * 2;
        assert_eq!(
            net.params.fusion.last().unwrap().squeeze.weight.shape()[1],
            deepest
        );
    }

    #[test]
    fn zero_features_fuse_to_zero() {
        let net = Sfcn::init(SfcnConfig::tiny(), 5).unwrap();
        let g = vec![Tensor::zeros(&[1, 4, 8, 8]), Tensor::zeros(&[1, 6, 4, 4])];
        let fused = net.fuse(&g.clone(), Some(&g)).unwrap();
        assert!(fused.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn swapping_branch_features_changes_the_fusion_output() {
        let net = Sfcn::init(SfcnConfig::tiny(), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mk = |rng: &mut ChaCha8Rng, c: usize, s: usize| {
            let data = (0..c * s * s).map(|_| rng.gen::<f64>()).collect();
            Tensor::new(&[1, c, s, s], data).unwrap()
        };
        let g = vec![mk(&mut rng, 4, 8), mk(&mut rng, 6, 4)];
        let g_star = vec![mk(&mut rng, 4, 8), mk(&mut rng, 6, 4)];
        let ab = net.fuse(&g, Some(&g_star)).unwrap();
        let ba = net.fuse(&g_star, Some(&g)).unwrap();
        let diff: f64 = ab
            .data()
            .iter()
            .zip(ba.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-6, "fusion must be order-sensitive");
    }

    #[test]
    fn zero_head_weights_give_identically_zero_saliency() {
        let mut net = Sfcn::init(SfcnConfig::tiny(), 7).unwrap();
        net.params.head.weight = Tensor::param(&[2, 8, 3, 3], vec![0.0; 2 * 8 * 9]).unwrap();
        net.params.head.bias = Tensor::param(&[2], vec![0.0; 2]).unwrap();
        let imgs = random_images(1, 8, 8, 8);
        let maps = net.predict(&imgs, &MeanSpec::zero(), Mode::Train).unwrap();
        assert!(maps.fg.data().iter().all(|v| *v == 0.5));
        assert!(maps.saliency.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn prediction_maps_satisfy_their_invariants() {
        let net = Sfcn::init(SfcnConfig::tiny(), 9).unwrap();
        let imgs = random_images(2, 8, 8, 10);
        let maps = net.predict(&imgs, &MeanSpec::zero(), Mode::Train).unwrap();
        assert_eq!(maps.saliency.shape(), &[2, 1, 8, 8]);
        for ((fg, bg), s) in maps
            .fg
            .data()
            .iter()
            .zip(maps.bg.data())
            .zip(maps.saliency.data())
        {
            assert!((fg + bg - 1.0).abs() < 1e-12);
            assert_eq!(*s, (fg - bg).max(0.0));
            assert!(*s >= 0.0 && *s < 1.0);
        }
    }

    #[test]
    fn prediction_is_deterministic_for_fixed_params() {
        let net = Sfcn::init(SfcnConfig::tiny(), 11).unwrap();
        let imgs = random_images(1, 8, 8, 12);
        let a = net.predict(&imgs, &MeanSpec::zero(), Mode::Train).unwrap();
        let b = net.predict(&imgs, &MeanSpec::zero(), Mode::Train).unwrap();
        assert_eq!(a.saliency.data(), b.saliency.data());
        assert_eq!(a.fg.data(), b.fg.data());
    }

    #[test]
    fn unshared_weights_double_the_encoder_parameter_store() {
        let shared = Sfcn::init(SfcnConfig::tiny(), 13).unwrap();
        let mut cfg = SfcnConfig::tiny();
        cfg.share_weights = false;
        let unshared = Sfcn::init(cfg, 13).unwrap();
        let conv_count = |p: &SfcnParams| -> usize {
            p.encoder
                .iter()
                .flatten()
                .map(|l| l.conv.weight.numel() + l.conv.bias.numel())
                .sum()
        };
        let shared_convs = conv_count(&shared.params);
        assert_eq!(
            unshared.params.encoder_parameter_count(),
            shared.params.encoder_parameter_count() + shared_convs
        );
    }

    #[test]
    fn single_input_modes_run_one_branch() {
        for mode in [InputMode::OriginOnly, InputMode::ReflectedOnly] {
            let mut cfg = SfcnConfig::tiny();
            cfg.input_mode = mode;
            let net = Sfcn::init(cfg, 15).unwrap();
            let imgs = random_images(1, 8, 8, 16);
            let maps = net.predict(&imgs, &MeanSpec::zero(), Mode::Train).unwrap();
            assert_eq!(maps.saliency.shape(), &[1, 1, 8, 8]);
        }
    }

    #[test]
    fn odd_input_resolution_fails_at_the_pool() {
        let net = Sfcn::init(SfcnConfig::tiny(), 17).unwrap();
        let x = Tensor::zeros(&[1, 3, 9, 9]);
        assert!(matches!(
            net.encode(&x, ORIGIN, Mode::Train),
            Err(Error::OddSpatial { .. })
        ));
    }
}
