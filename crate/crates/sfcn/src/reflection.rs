//! Reciprocal input pairs: the origin image `X - M` and its planar
//! reflection `-k(X - M)` about a per-channel mean plane.
//!
//! Mean strategies are registered by name and selected from the run
//! configuration; images are on the [0,1] scale throughout.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Conventional per-channel RGB mean of large natural-image corpora on the
/// [0,1] scale. Shipped as an overridable default for the fixed-vector
/// strategy.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];

/// Middle of the 0-255 intensity range, rescaled to [0,1].
pub const MIDDLE_MEAN: [f64; 3] = [128.0 / 255.0; 3];

/// Which mean plane the reflection uses.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanKind {
    /// Fixed per-channel vector supplied in configuration.
    FixedVector,
    /// Per-channel mean of the whole training dataset.
    Dataset,
    /// Per-channel mean of the image being reflected.
    PerImage,
    /// (128, 128, 128) on the 0-255 scale.
    Middle,
    /// (0, 0, 0).
    Zero,
}

/// Mean selection: kind plus the vector it needs, when it needs one.
///
/// `FixedVector` requires a vector; `Dataset` carries the vector once the
/// data module has computed it; the other kinds never carry one.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSpec {
    pub kind: MeanKind,
    pub vector: Option<[f64; 3]>,
}

impl MeanSpec {
    pub fn fixed(vector: [f64; 3]) -> MeanSpec {
        MeanSpec {
            kind: MeanKind::FixedVector,
            vector: Some(vector),
        }
    }

    pub fn zero() -> MeanSpec {
        MeanSpec {
            kind: MeanKind::Zero,
            vector: None,
        }
    }
}

/// Strategy producing the mean plane for one image.
pub trait MeanStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn resolve(&self, image: &Tensor) -> Result<[f64; 3]>;
}

struct FixedMean {
    name: &'static str,
    vector: [f64; 3],
}

impl MeanStrategy for FixedMean {
    fn name(&self) -> &'static str {
        self.name
    }
    fn resolve(&self, _image: &Tensor) -> Result<[f64; 3]> {
        Ok(self.vector)
    }
}

struct PerImageMean;

impl MeanStrategy for PerImageMean {
    fn name(&self) -> &'static str {
        "per-image"
    }
    fn resolve(&self, image: &Tensor) -> Result<[f64; 3]> {
        check_image(image)?;
        let plane = image.shape()[1] * image.shape()[2];
        let mut mean = [0.0; 3];
        for (c, m) in mean.iter_mut().enumerate() {
            *m = image.data()[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64;
        }
        Ok(mean)
    }
}

/// Names accepted in configuration for the mean strategy.
pub const MEAN_KIND_NAMES: [&str; 5] = ["fixed", "dataset", "per-image", "middle", "zero"];

/// Build the strategy a spec describes.
pub fn mean_strategy(spec: &MeanSpec) -> Result<Arc<dyn MeanStrategy>> {
    match spec.kind {
        MeanKind::FixedVector => {
            let vector = spec.vector.ok_or_else(|| {
                Error::Config("mean kind `fixed` requires a mean vector".into())
            })?;
            Ok(Arc::new(FixedMean {
                name: "fixed",
                vector,
            }))
        }
        MeanKind::Dataset => {
            let vector = spec.vector.ok_or_else(|| {
                Error::Config(
                    "mean kind `dataset` used before the dataset mean was computed".into(),
                )
            })?;
            Ok(Arc::new(FixedMean {
                name: "dataset",
                vector,
            }))
        }
        MeanKind::PerImage => Ok(Arc::new(PerImageMean)),
        MeanKind::Middle => Ok(Arc::new(FixedMean {
            name: "middle",
            vector: MIDDLE_MEAN,
        })),
        MeanKind::Zero => Ok(Arc::new(FixedMean {
            name: "zero",
            vector: [0.0; 3],
        })),
    }
}

/// Resolve the mean plane for `image` under `spec`.
pub fn resolve_mean(spec: &MeanSpec, image: &Tensor) -> Result<[f64; 3]> {
    mean_strategy(spec)?.resolve(image)
}

/// The reciprocal pair produced by the planar reflection.
#[derive(Debug, Clone)]
pub struct ReflectionPair {
    /// `X - M`, the origin input.
    pub origin: Tensor,
    /// `-k (X - M)`, the reflected input.
    pub reflected: Tensor,
    pub k: f64,
    pub mean_used: [f64; 3],
    /// False for negative `k`, where both inputs share a sign and the pair
    /// carries no complementary information.
    pub complementary: bool,
}

fn check_image(image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::Rank {
            op: "reflect",
            expected: 3,
            got: s.len(),
        });
    }
    if s[0] != 3 {
        return Err(Error::ChannelMismatch {
            op: "reflect",
            what: "image",
            expected: 3,
            got: s[0],
        });
    }
    Ok(())
}

/// Build the reciprocal pair for a (3, H, W) image.
///
/// `reflected + k * origin` is exactly zero elementwise: the reflected value
/// is computed as the negation of the very product the identity subtracts.
pub fn reflect(image: &Tensor, mean: [f64; 3], k: f64) -> Result<ReflectionPair> {
    if k == 0.0 {
        return Err(Error::Config(
            "reflection scale k = 0 degenerates the reflected input to zero".into(),
        ));
    }
    check_image(image)?;
    let plane = image.shape()[1] * image.shape()[2];
    let mut origin = vec![0.0; image.numel()];
    let mut reflected = vec![0.0; image.numel()];
    for (c, (o_ch, r_ch)) in origin
        .chunks_exact_mut(plane)
        .zip(reflected.chunks_exact_mut(plane))
        .enumerate()
    {
        let src = &image.data()[c * plane..(c + 1) * plane];
        for ((o, r), x) in o_ch.iter_mut().zip(r_ch.iter_mut()).zip(src) {
            let centered = x - mean[c];
            *o = centered;
            *r = -(k * centered);
        }
    }
    Ok(ReflectionPair {
        origin: Tensor::new(image.shape(), origin)?,
        reflected: Tensor::new(image.shape(), reflected)?,
        k,
        mean_used: mean,
        complementary: k > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> Tensor {
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for r in 0..h {
                for col in 0..w {
                    data.push(f(c, r, col));
                }
            }
        }
        Tensor::new(&[3, h, w], data).unwrap()
    }

    #[test]
    fn zero_kind_resolves_to_zero() {
        let img = image(2, 2, |_, _, _| 0.5);
        assert_eq!(resolve_mean(&MeanSpec::zero(), &img).unwrap(), [0.0; 3]);
    }

    #[test]
    fn per_image_mean_of_constant_image() {
        let img = image(2, 2, |_, _, _| 0.25);
        let spec = MeanSpec {
            kind: MeanKind::PerImage,
            vector: None,
        };
        assert_eq!(resolve_mean(&spec, &img).unwrap(), [0.25; 3]);
    }

    #[test]
    fn per_image_mean_averages_each_channel() {
        let img = image(4, 4, |c, _, _| (c as f64 + 1.0) * 10.0);
        let spec = MeanSpec {
            kind: MeanKind::PerImage,
            vector: None,
        };
        let got = resolve_mean(&spec, &img).unwrap();
        assert_eq!(got, [10.0, 20.0, 30.0]);
    }

    #[test]
    fn fixed_without_vector_is_a_configuration_error() {
        let spec = MeanSpec {
            kind: MeanKind::FixedVector,
            vector: None,
        };
        assert!(matches!(
            resolve_mean(&spec, &image(1, 1, |_, _, _| 0.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reflecting_the_mean_itself_gives_the_zero_pair() {
        let img = image(2, 3, |c, _, _| [0.1, 0.2, 0.3][c]);
        let pair = reflect(&img, [0.1, 0.2, 0.3], 1.0).unwrap();
        assert!(pair.origin.data().iter().all(|v| *v == 0.0));
        assert!(pair.reflected.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reflection_values_follow_the_planar_formula() {
        let img = image(1, 1, |_, _, _| 0.5);
        let pair = reflect(&img, [0.3; 3], 1.0).unwrap();
        for i in 0..3 {
            assert!((pair.origin.data()[i] - 0.2).abs() < 1e-15);
            assert!((pair.reflected.data()[i] + 0.2).abs() < 1e-15);
        }
        let pair = reflect(&img, [0.3; 3], 2.0).unwrap();
        for i in 0..3 {
            assert!((pair.reflected.data()[i] + 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn anti_symmetry_is_exact_for_random_images_and_scales() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let data: Vec<f64> = (0..3 * 3 * 5).map(|_| rng.gen::<f64>()).collect();
            let img = Tensor::new(&[3, 3, 5], data).unwrap();
            let mean = [rng.gen(), rng.gen(), rng.gen()];
            for k in [0.5, 1.0, 2.0, 4.0] {
                let pair = reflect(&img, mean, k).unwrap();
                for (o, r) in pair.origin.data().iter().zip(pair.reflected.data()) {
                    assert_eq!(r + k * o, 0.0, "reflected + k*origin must be exactly 0");
                }
                assert!(pair.complementary);
            }
        }
    }

    #[test]
    fn negative_scale_is_allowed_but_tagged_non_complementary() {
        let img = image(2, 2, |_, r, c| (r * 2 + c) as f64 * 0.1);
        let pair = reflect(&img, [0.0; 3], -1.0).unwrap();
        assert!(!pair.complementary);
        for (o, r) in pair.origin.data().iter().zip(pair.reflected.data()) {
            assert_eq!(*r, *o); // positive multiple of origin
        }
    }

    #[test]
    fn zero_scale_is_rejected() {
        let img = image(1, 1, |_, _, _| 0.5);
        assert!(matches!(reflect(&img, [0.0; 3], 0.0), Err(Error::Config(_))));
    }
}
