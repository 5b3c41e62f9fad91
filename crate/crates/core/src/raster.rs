//! Raw images and their on-disk formats: binary PPM (P6) for color,
//! binary PGM (P5) for grayscale heatmaps.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

/// Square RGB image, channel values in [0,1], row-major per channel plane
/// (layout [3, side, side], matching the tensor ops).
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub side: usize,
    /// 3 * side * side values, channel-major.
    pub data: Vec<f64>,
}

impl RawImage {
    pub fn new(side: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), 3 * side * side, "image buffer size mismatch");
        RawImage { side, data }
    }

    pub fn filled(side: usize, rgb: [f64; 3]) -> Self {
        let mut data = vec![0.0; 3 * side * side];
        for c in 0..3 {
            for p in 0..side * side {
                data[c * side * side + p] = rgb[c];
            }
        }
        RawImage { side, data }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let hw = self.side * self.side;
        let p = y * self.side + x;
        [self.data[p], self.data[hw + p], self.data[2 * hw + p]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let hw = self.side * self.side;
        let p = y * self.side + x;
        self.data[p] = rgb[0];
        self.data[hw + p] = rgb[1];
        self.data[2 * hw + p] = rgb[2];
    }

    /// Constant (untracked) tensor view, shape [3, side, side].
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[3, self.side, self.side], self.data.clone())
    }

    /// Tensor back to image, clamping into [0,1].
    pub fn from_tensor(t: &Tensor) -> Result<RawImage> {
        let shape = t.shape();
        if shape.len() != 3 || shape[0] != 3 || shape[1] != shape[2] {
            return Err(Error::Contract(format!(
                "expected a [3,S,S] tensor, got {shape:?}"
            )));
        }
        let data: Vec<f64> = t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(RawImage::new(shape[1], data))
    }

    /// Halve the side by averaging 2x2 blocks. Used to derive the smaller
    /// training scales from dataset-native images.
    pub fn downsample_avg2x(&self) -> RawImage {
        assert!(self.side % 2 == 0, "downsample of odd side {}", self.side);
        let s2 = self.side / 2;
        let hw = self.side * self.side;
        let mut data = vec![0.0; 3 * s2 * s2];
        for c in 0..3 {
            for y in 0..s2 {
                for x in 0..s2 {
                    let mut acc = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += self.data[c * hw + (2 * y + dy) * self.side + (2 * x + dx)];
                        }
                    }
                    data[c * s2 * s2 + y * s2 + x] = acc / 4.0;
                }
            }
        }
        RawImage { side: s2, data }
    }

    /// Downsample by repeated 2x averaging until `target` is reached.
    pub fn downsample_to(&self, target: usize) -> Result<RawImage> {
        let mut img = self.clone();
        while img.side > target {
            if img.side % 2 != 0 {
                return Err(Error::Contract(format!(
                    "cannot downsample side {} toward {target}",
                    img.side
                )));
            }
            img = img.downsample_avg2x();
        }
        if img.side != target {
            return Err(Error::Contract(format!(
                "side {} is not a power-of-two multiple of {target}",
                self.side
            )));
        }
        Ok(img)
    }

    /// Nearest-neighbor upsample by repeated 2x until `target` is reached.
    pub fn upsample_to(&self, target: usize) -> Result<RawImage> {
        let mut img = self.clone();
        while img.side < target {
            let s = img.side;
            let s2 = 2 * s;
            let hw = s * s;
            let mut data = vec![0.0; 3 * s2 * s2];
            for c in 0..3 {
                for y in 0..s2 {
                    for x in 0..s2 {
                        data[c * s2 * s2 + y * s2 + x] = img.data[c * hw + (y / 2) * s + x / 2];
                    }
                }
            }
            img = RawImage { side: s2, data };
        }
        if img.side != target {
            return Err(Error::Contract(format!(
                "side {} is not a power-of-two divisor of {target}",
                self.side
            )));
        }
        Ok(img)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        write!(w, "P6\n{} {}\n255\n", self.side, self.side)?;
        let hw = self.side * self.side;
        let mut bytes = Vec::with_capacity(3 * hw);
        for p in 0..hw {
            for c in 0..3 {
                bytes.push(quantize(self.data[c * hw + p]));
            }
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<RawImage> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        parse_ppm(&bytes).map_err(|msg| Error::Contract(format!("{}: {msg}", path.display())))
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn parse_ppm(bytes: &[u8]) -> std::result::Result<RawImage, String> {
    let mut pos = 0;
    let mut fields = Vec::new();
    // header: magic, width, height, maxval; `#` comments allowed
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "bad header")?.to_string());
    }
    pos += 1; // single whitespace after maxval
    if fields[0] != "P6" {
        return Err(format!("expected P6 magic, got {}", fields[0]));
    }
    let width: usize = fields[1].parse().map_err(|_| "bad width")?;
    let height: usize = fields[2].parse().map_err(|_| "bad height")?;
    let maxval: usize = fields[3].parse().map_err(|_| "bad maxval")?;
    if width != height {
        return Err(format!("image must be square, got {width}x{height}"));
    }
    if maxval != 255 {
        return Err(format!("expected maxval 255, got {maxval}"));
    }
    let hw = width * height;
    let body = &bytes[pos..];
    if body.len() < 3 * hw {
        return Err(format!("pixel payload too short: {} < {}", body.len(), 3 * hw));
    }
    let mut data = vec![0.0; 3 * hw];
    for p in 0..hw {
        for c in 0..3 {
            data[c * hw + p] = body[3 * p + c] as f64 / 255.0;
        }
    }
    Ok(RawImage { side: width, data })
}

/// Write a grayscale [0,1] map as binary PGM (P5).
pub fn write_pgm(path: &Path, side: usize, values: &[f64]) -> Result<()> {
    assert_eq!(values.len(), side * side, "pgm buffer size mismatch");
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "P5\n{side} {side}\n255\n")?;
    let bytes: Vec<u8> = values.iter().map(|&v| quantize(v)).collect();
    w.write_all(&bytes)?;
    Ok(())
}
