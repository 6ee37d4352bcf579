//! Binary netpbm codecs: P6 (PPM) for images, P5 (PGM) for masks and
//! saliency maps. Maxval is fixed at 255; values map linearly to [0,1].

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Codec {
            message: message.into(),
            offset: self.pos,
        })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Skip whitespace and `#` comment lines between header tokens.
    fn skip_separators(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(b) = self.peek() {
                    self.pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.peek().map(|b| b.is_ascii_digit()).unwrap_or(false) {
            self.pos += 1;
        }
        if self.pos == start {
            return self.fail(format!("expected {what}, found no digits"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse()
            .map_err(|_| Error::Codec {
                message: format!("{what} `{text}` out of range"),
                offset: start,
            })
    }
}

/// Decoded stream: 1 channel for P5, 3 interleaved channels for P6.
#[derive(Debug)]
pub struct Pnm {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub fn decode(bytes: &[u8]) -> Result<Pnm> {
    let mut p = Parser { bytes, pos: 0 };
    let channels = match bytes.get(0..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(magic) => {
            return p.fail(format!(
                "unsupported magic `{}` (only binary P5/P6)",
                String::from_utf8_lossy(magic)
            ))
        }
        None => return p.fail("file shorter than a magic number"),
    };
    p.pos = 2;
    let width = p.number("width")?;
    let height = p.number("height")?;
    let maxval = p.number("maxval")?;
    if maxval != 255 {
        return p.fail(format!("unsupported maxval {maxval} (expected 255)"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match p.peek() {
        Some(b) if b.is_ascii_whitespace() => p.pos += 1,
        _ => return p.fail("expected single whitespace before payload"),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or(Error::Codec {
            message: "image dimensions overflow".into(),
            offset: p.pos,
        })?;
    let have = bytes.len() - p.pos;
    if have < need {
        p.pos = bytes.len();
        return p.fail(format!("truncated payload: need {need} bytes, have {have}"));
    }
    Ok(Pnm {
        channels,
        width,
        height,
        data: bytes[p.pos..p.pos + need].to_vec(),
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load a P6 image as a (3, H, W) tensor in [0,1].
pub fn load_image(path: &Path) -> Result<Tensor> {
    let pnm = decode(&read_file(path)?)?;
    if pnm.channels != 3 {
        return Err(Error::Codec {
            message: format!("{} is not a P6 color image", path.display()),
            offset: 0,
        });
    }
    let plane = pnm.width * pnm.height;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in pnm.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new(&[3, pnm.height, pnm.width], data)
}

/// Load a P5 mask as an (H, W) tensor binarized at 0.5.
pub fn load_mask(path: &Path) -> Result<Tensor> {
    let pnm = decode(&read_file(path)?)?;
    if pnm.channels != 1 {
        return Err(Error::Codec {
            message: format!("{} is not a P5 grayscale image", path.display()),
            offset: 0,
        });
    }
    let data = pnm
        .data
        .iter()
        .map(|b| f64::from(*b as f64 / 255.0 >= 0.5))
        .collect();
    Tensor::new(&[pnm.height, pnm.width], data)
}

/// Load a P5 stream as a gray map in [0,1] (no binarization).
pub fn load_gray(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let pnm = decode(&read_file(path)?)?;
    if pnm.channels != 1 {
        return Err(Error::Codec {
            message: format!("{} is not a P5 grayscale image", path.display()),
            offset: 0,
        });
    }
    let data = pnm.data.iter().map(|b| *b as f64 / 255.0).collect();
    Ok((data, pnm.height, pnm.width))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Save a (3, H, W) tensor as binary PPM, quantized to 0-255.
pub fn save_image(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Rank {
            op: "save_image",
            expected: 3,
            got: s.len(),
        });
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize(image.data()[c * plane + i]));
        }
    }
    write_file(path, &out)
}

/// Save an (H, W) map as binary PGM, quantized to 0-255.
pub fn save_gray(path: &Path, map: &[f64], height: usize, width: usize) -> Result<()> {
    debug_assert_eq!(map.len(), height * width);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(map.iter().map(|v| quantize(*v)));
    write_file(path, &out)
}
