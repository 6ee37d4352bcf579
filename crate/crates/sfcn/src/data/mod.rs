//! Samples, dataset folders, resizing, augmentation and dataset statistics.
//!
//! On-disk layout: `<root>/images/<id>.ppm`, `<root>/masks/<id>.pgm`, with
//! an optional `manifest.txt` holding one id per line.

pub mod pnm;
pub mod synth;

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One training/evaluation pair: a (3, H, W) image in [0,1] and its binary
/// (H, W) mask.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub mask: Tensor,
}

/// Read every sample of a dataset folder. With a manifest the listed ids
/// load in manifest order; otherwise images/*.ppm load in name order.
pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    let images = root.join("images");
    let masks = root.join("masks");
    if !images.is_dir() {
        return Err(Error::Data(format!(
            "missing images directory {}",
            images.display()
        )));
    }
    let manifest = root.join("manifest.txt");
    let ids: Vec<String> = if manifest.is_file() {
        let text = std::fs::read_to_string(&manifest).map_err(|source| Error::Io {
            path: manifest.clone(),
            source,
        })?;
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect()
    } else {
        let mut ids = Vec::new();
        let entries = std::fs::read_dir(&images).map_err(|source| Error::Io {
            path: images.clone(),
            source,
        })?;
        for entry in entries {
            let entry = entry.map_err(|source| Error::Io {
                path: images.clone(),
                source,
            })?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".ppm") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        ids
    };
    let mut samples = Vec::with_capacity(ids.len());
    for id in ids {
        let image = pnm::load_image(&images.join(format!("{id}.ppm")))?;
        let mask = pnm::load_mask(&masks.join(format!("{id}.pgm")))?;
        if image.shape()[1..] != *mask.shape() {
            return Err(Error::Data(format!(
                "sample `{id}`: image {:?} and mask {:?} disagree on extents",
                image.shape(),
                mask.shape()
            )));
        }
        samples.push(Sample { id, image, mask });
    }
    Ok(samples)
}

/// Write samples under the dataset layout, plus a manifest.
pub fn save_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    let images = root.join("images");
    let masks = root.join("masks");
    for dir in [&images, &masks] {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let mut manifest = String::new();
    for s in samples {
        pnm::save_image(&images.join(format!("{}.ppm", s.id)), &s.image)?;
        let (h, w) = (s.mask.shape()[0], s.mask.shape()[1]);
        pnm::save_gray(&masks.join(format!("{}.pgm", s.id)), s.mask.data(), h, w)?;
        manifest.push_str(&s.id);
        manifest.push('\n');
    }
    let path = root.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|source| Error::Io { path, source })
}

/// Per-channel mean over all pixels of all images.
pub fn dataset_mean(samples: &[Sample]) -> Result<[f64; 3]> {
    if samples.is_empty() {
        return Err(Error::Data("dataset_mean: empty sample set".into()));
    }
    let mut sums = [0.0; 3];
    let mut count = 0usize;
    for s in samples {
        let plane = s.image.numel() / 3;
        for (c, sum) in sums.iter_mut().enumerate() {
            *sum += s.image.data()[c * plane..(c + 1) * plane].iter().sum::<f64>();
        }
        count += plane;
    }
    Ok([
        sums[0] / count as f64,
        sums[1] / count as f64,
        sums[2] / count as f64,
    ])
}

/// Bilinear resampling of a (C, H, W) tensor (half-pixel-center convention).
pub fn resize_bilinear(image: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::Rank {
            op: "resize_bilinear",
            expected: 3,
            got: s.len(),
        });
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::Config("resize target extents must be >= 1".into()));
    }
    let sy = h as f64 / th as f64;
    let sx = w as f64 / tw as f64;
    let mut out = vec![0.0; c * th * tw];
    for ch in 0..c {
        let src = &image.data()[ch * h * w..(ch + 1) * h * w];
        for ty in 0..th {
            let fy = ((ty as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = fy - y0 as f64;
            for tx in 0..tw {
                let fx = ((tx as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = fx - x0 as f64;
                let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                let bottom = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                out[(ch * th + ty) * tw + tx] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    Tensor::new(&[c, th, tw], out)
}

/// Nearest-neighbor resampling of an (H, W) mask; output stays binary.
pub fn resize_nearest(mask: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let s = mask.shape();
    if s.len() != 2 {
        return Err(Error::Rank {
            op: "resize_nearest",
            expected: 2,
            got: s.len(),
        });
    }
    let (h, w) = (s[0], s[1]);
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::Config("resize target extents must be >= 1".into()));
    }
    let sy = h as f64 / th as f64;
    let sx = w as f64 / tw as f64;
    let mut out = vec![0.0; th * tw];
    for ty in 0..th {
        let y = (((ty as f64 + 0.5) * sy).floor() as usize).min(h - 1);
        for tx in 0..tw {
            let x = (((tx as f64 + 0.5) * sx).floor() as usize).min(w - 1);
            out[ty * tw + tx] = mask.data()[y * w + x];
        }
    }
    Tensor::new(&[th, tw], out)
}

/// Resize a sample to the model input size: bilinear image, nearest mask.
pub fn resize_sample(sample: &Sample, target: (usize, usize)) -> Result<Sample> {
    Ok(Sample {
        id: sample.id.clone(),
        image: resize_bilinear(&sample.image, target)?,
        mask: resize_nearest(&sample.mask, target)?,
    })
}

fn mirror_image(image: &Tensor) -> Tensor {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; image.numel()];
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                out[(ch * h + r) * w + col] = image.data()[(ch * h + r) * w + (w - 1 - col)];
            }
        }
    }
    Tensor::new(s, out).unwrap()
}

fn mirror_mask(mask: &Tensor) -> Tensor {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let mut out = vec![0.0; mask.numel()];
    for r in 0..h {
        for col in 0..w {
            out[r * w + col] = mask.data()[r * w + (w - 1 - col)];
        }
    }
    Tensor::new(mask.shape(), out).unwrap()
}

fn crop_image(image: &Tensor, (oy, ox): (usize, usize), (ch, cw): (usize, usize)) -> Tensor {
    let s = image.shape();
    let (c, _h, w) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(c * ch * cw);
    for chan in 0..c {
        for r in 0..ch {
            let start = (chan * s[1] + oy + r) * w + ox;
            out.extend_from_slice(&image.data()[start..start + cw]);
        }
    }
    Tensor::new(&[c, ch, cw], out).unwrap()
}

fn crop_mask(mask: &Tensor, (oy, ox): (usize, usize), (ch, cw): (usize, usize)) -> Tensor {
    let w = mask.shape()[1];
    let mut out = Vec::with_capacity(ch * cw);
    for r in 0..ch {
        let start = (oy + r) * w + ox;
        out.extend_from_slice(&mask.data()[start..start + cw]);
    }
    Tensor::new(&[ch, cw], out).unwrap()
}

/// Random crop (fraction 0.8..=1.0 per extent, resized back) and horizontal
/// mirror with probability 1/2, applied identically to image and mask.
pub fn augment(sample: &Sample, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let (h, w) = (sample.mask.shape()[0], sample.mask.shape()[1]);
    let fh: f64 = rng.gen_range(0.8..=1.0);
    let fw: f64 = rng.gen_range(0.8..=1.0);
    let ch = ((h as f64 * fh).round() as usize).clamp(1, h);
    let cw = ((w as f64 * fw).round() as usize).clamp(1, w);
    let oy = rng.gen_range(0..=h - ch);
    let ox = rng.gen_range(0..=w - cw);
    let mirror: bool = rng.gen();

    let mut image = sample.image.clone();
    let mut mask = sample.mask.clone();
    if (ch, cw) != (h, w) {
        image = resize_bilinear(&crop_image(&image, (oy, ox), (ch, cw)), (h, w))?;
        mask = resize_nearest(&crop_mask(&mask, (oy, ox), (ch, cw)), (h, w))?;
    }
    if mirror {
        image = mirror_image(&image);
        mask = mirror_mask(&mask);
    }
    Ok(Sample {
        id: sample.id.clone(),
        image,
        mask,
    })
}
