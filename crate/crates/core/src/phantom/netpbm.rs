//! Binary PPM (P6) and PGM (P5) with maxval 255.
//!
//! Writers emit the minimal header `P6\n<w> <h>\n255\n`; readers accept
//! any whitespace and `#` comments between header fields.

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::nn::Tensor;

/// Raw 8-bit raster: `channels` is 1 (gray) or 3 (RGB), interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

pub fn encode(raster: &Raster) -> Vec<u8> {
    let magic = match raster.channels {
        1 => "P5",
        3 => "P6",
        c => panic!("unsupported channel count {c}"),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.extend_from_slice(&raster.pixels);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl Cursor<'_> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Parse {
            format: self.format,
            offset: self.pos,
            detail: detail.into(),
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Parse {
                format: self.format,
                offset: start,
                detail: format!("{what} out of range"),
            })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Raster> {
    let format = match bytes.get(..2) {
        Some(b"P5") => "PGM",
        Some(b"P6") => "PPM",
        _ => {
            return Err(Error::Parse {
                format: "netpbm",
                offset: 0,
                detail: "bad magic number, expected P5 or P6".into(),
            })
        }
    };
    let channels = if format == "PGM" { 1 } else { 3 };
    let mut c = Cursor { bytes, pos: 2, format };
    if !matches!(bytes.get(2), Some(b' ' | b'\t' | b'\n' | b'\r' | b'#')) {
        return Err(c.err("magic number must be followed by whitespace"));
    }
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(c.err("zero image dimension"));
    }
    if maxval != 255 {
        return Err(c.err(format!("maxval {maxval} unsupported, expected 255")));
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return Err(c.err("expected single whitespace before raster")),
    }
    let need = width * height * channels;
    let have = bytes.len() - c.pos;
    if have < need {
        return Err(c.err(format!("truncated payload: need {need} bytes, found {have}")));
    }
    if have > need {
        c.pos += need;
        return Err(c.err(format!("{} trailing bytes after raster", have - need)));
    }
    Ok(Raster {
        width,
        height,
        channels,
        pixels: bytes[c.pos..].to_vec(),
    })
}

/// (3, H, W) tensor with values in [0, 1] to interleaved RGB bytes.
pub fn rgb_from_tensor(image: &Tensor) -> Raster {
    let (c, h, w) = image.chw().expect("(C,H,W) image");
    assert_eq!(c, 3, "PPM needs three channels");
    let plane = h * w;
    let d = image.data();
    let mut pixels = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            pixels.push(to_byte(d[ch * plane + i]));
        }
    }
    Raster {
        width: w,
        height: h,
        channels: 3,
        pixels,
    }
}

pub fn tensor_from_raster(r: &Raster) -> Tensor {
    let plane = r.width * r.height;
    let mut data = vec![0.0; r.channels * plane];
    for i in 0..plane {
        for ch in 0..r.channels {
            data[ch * plane + i] = f64::from(r.pixels[i * r.channels + ch]) / 255.0;
        }
    }
    Tensor::new(vec![r.channels, r.height, r.width], data)
}

pub fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn encode_ppm(image: &Tensor) -> Vec<u8> {
    encode(&rgb_from_tensor(image))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let r = decode(bytes)?;
    if r.channels != 3 {
        return Err(Error::Parse {
            format: "PPM",
            offset: 0,
            detail: "expected P6".into(),
        });
    }
    Ok(tensor_from_raster(&r))
}

/// Mask as P5 with foreground 255.
pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    encode(&Raster {
        width: mask.width(),
        height: mask.height(),
        channels: 1,
        pixels: mask.data().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect(),
    })
}

pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let r = decode(bytes)?;
    if r.channels != 1 {
        return Err(Error::Parse {
            format: "PGM",
            offset: 0,
            detail: "expected P5".into(),
        });
    }
    Ok(BinaryMask::from_data(r.width, r.height, r.pixels))
}

/// Gray map with values in [0, 1] (e.g. a saliency heat map) as P5.
pub fn encode_gray(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    encode(&Raster {
        width,
        height,
        channels: 1,
        pixels: values.iter().map(|&v| to_byte(v)).collect(),
    })
}
