//! RGB images with intensities in [0, 1], stored planar as `[3, H, W]`,
//! and binary PPM (P6, maxval 255) I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Image(Tensor);

impl Image {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match *t.shape() {
            [3, h, w] if h > 0 && w > 0 => Ok(Self(t)),
            _ => Err(Error::shape(
                "image",
                format!("expected [3, H, W], got {:?}", t.shape()),
            )),
        }
    }

    pub fn filled(h: usize, w: usize, value: f64) -> Self {
        Self(Tensor::full(&[3, h, w], value))
    }

    /// Builds an image from interleaved `H x W x 3` samples.
    pub fn from_hwc(h: usize, w: usize, hwc: &[f64]) -> Result<Self> {
        if hwc.len() != h * w * 3 {
            return Err(Error::shape("image", format!("{} samples for {h}x{w}x3", hwc.len())));
        }
        let mut planar = vec![0.0; hwc.len()];
        for p in 0..h * w {
            for c in 0..3 {
                planar[c * h * w + p] = hwc[p * 3 + c];
            }
        }
        Self::from_tensor(Tensor::new(&[3, h, w], planar)?)
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.0.data_mut()
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.0.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.0.max_abs_diff(&other.0)
    }

    pub fn is_in_unit_range(&self) -> bool {
        self.data().iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn mean(&self) -> f64 {
        self.data().iter().sum::<f64>() / self.data().len() as f64
    }

    /// Top-left corner at (`y`, `x`), size `h` x `w`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Image> {
        if y + h > self.height() || x + w > self.width() {
            return Err(Error::invalid(format!(
                "crop {h}x{w} at ({y},{x}) outside {}x{}",
                self.height(),
                self.width()
            )));
        }
        let mut out = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for yy in y..y + h {
                let row = (c * self.height() + yy) * self.width();
                out.extend_from_slice(&self.data()[row + x..row + x + w]);
            }
        }
        Image::from_tensor(Tensor::new(&[3, h, w], out)?)
    }

    /// 8-bit samples, round-half-away-from-zero after clamping to [0, 1].
    pub fn to_bytes_hwc(&self) -> Vec<u8> {
        let (h, w) = (self.height(), self.width());
        let mut out = Vec::with_capacity(h * w * 3);
        for p in 0..h * w {
            for c in 0..3 {
                let v = self.data()[c * h * w + p].clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width(), self.height())?;
        w.write_all(&self.to_bytes_hwc())?;
        Ok(())
    }

    pub fn read_ppm<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut fields = Vec::new();
        while fields.len() < 4 {
            let tok = read_token(&mut r)?;
            fields.push(tok);
        }
        if fields[0] != "P6" {
            return Err(Error::Format(format!("expected P6 magic, got {}", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PPM header field {s:?}")))
        };
        let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("unsupported maxval {maxval}")));
        }
        let mut bytes = vec![0u8; w * h * 3];
        r.read_exact(&mut bytes)?;
        let hwc: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Image::from_hwc(h, w, &hwc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_ppm(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_ppm(std::fs::File::open(path)?)
    }
}

// Header tokens are whitespace separated; '#' starts a comment. Consumes
// exactly one whitespace byte after the token, as the format requires.
fn read_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::Format("truncated PPM header".into()));
        }
        let b = byte[0];
        if b == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if b.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(b as char);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_write_read_write_is_byte_stable() {
        let data: Vec<f64> = (0..3 * 5 * 4).map(|i| (i as f64 * 0.137).fract()).collect();
        let img = Image::from_tensor(Tensor::new(&[3, 5, 4], data).unwrap()).unwrap();
        let mut first = Vec::new();
        img.write_ppm(&mut first).unwrap();
        let back = Image::read_ppm(&first[..]).unwrap();
        assert_eq!((back.height(), back.width()), (5, 4));
        let mut second = Vec::new();
        back.write_ppm(&mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn write_rounds_half_away_from_zero() {
        let img = Image::filled(1, 1, 0.5 / 255.0 + 1e-15);
        assert_eq!(img.to_bytes_hwc(), vec![1, 1, 1]);
        assert_eq!(Image::filled(1, 1, 1.7).to_bytes_hwc(), vec![255; 3]);
    }

    #[test]
    fn reads_header_comments() {
        let mut bytes = b"P6\n# comment\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 51]);
        let img = Image::read_ppm(&bytes[..]).unwrap();
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(2, 0, 0), 0.2);
    }

    #[test]
    fn hwc_planar_layout() {
        let img = Image::from_hwc(1, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(img.get(1, 0, 1), 0.5);
        assert_eq!(img.get(2, 0, 0), 0.3);
    }
}
