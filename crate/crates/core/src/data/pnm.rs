//! Binary PGM (P5) and PPM (P6) codecs.
//!
//! The decoder accepts untrusted bytes: header tokens are bounded, the
//! pixel count is capped and the payload length is checked before any
//! allocation proportional to it.

use std::fs;
use std::path::Path;

use super::LabelMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest accepted `width × height`.
pub const MAX_PIXELS: usize = 1 << 26;

/// A decoded raster. Samples are row-major and interleaved by channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
            if self.pos - start > 9 {
                return Err(Error::Format(format!("pnm {what} has too many digits")));
            }
        }
        if start == self.pos {
            return Err(Error::Format(format!("pnm header: expected {what}")));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        Ok(s.parse().expect("at most nine digits"))
    }
}

impl Pnm {
    pub fn decode(bytes: &[u8]) -> Result<Pnm> {
        let channels = match bytes.get(..2) {
            Some(b"P5") => 1,
            Some(b"P6") => 3,
            _ => return Err(Error::Format("not a binary PGM/PPM (P5/P6)".into())),
        };
        let mut cur = Cursor { bytes, pos: 2 };
        let width = cur.number("width")?;
        let height = cur.number("height")?;
        let maxval = cur.number("maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::Format(format!("pnm size {width}x{height}")));
        }
        if width.saturating_mul(height) > MAX_PIXELS {
            return Err(Error::Format(format!(
                "pnm size {width}x{height} too large"
            )));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Format(format!(
                "pnm maxval {maxval} outside 1..=65535"
            )));
        }
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => {
                return Err(Error::Format(
                    "pnm header not followed by whitespace".into(),
                ))
            }
        }
        let bps = if maxval > 255 { 2 } else { 1 };
        let n = width * height * channels;
        let payload = &bytes[cur.pos..];
        if payload.len() != n * bps {
            return Err(Error::Format(format!(
                "pnm payload is {} bytes, expected {}",
                payload.len(),
                n * bps
            )));
        }
        let samples: Vec<u16> = if bps == 1 {
            payload.iter().map(|&b| b as u16).collect()
        } else {
            payload
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        };
        if samples.iter().any(|&s| s > maxval as u16) {
            return Err(Error::Format("pnm sample exceeds maxval".into()));
        }
        Ok(Pnm {
            width,
            height,
            channels,
            maxval: maxval as u16,
            samples,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out =
            format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval > 255 {
            for s in &self.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        } else {
            out.extend(self.samples.iter().map(|&s| s as u8));
        }
        out
    }

    /// 3×H×W tensor in `[0, 1]`; grayscale is replicated across channels.
    pub fn to_image(&self) -> Tensor {
        let (h, w) = (self.height, self.width);
        let maxval = self.maxval as f32;
        let mut t = Tensor::zeros(&[3, h, w]);
        let d = t.data_mut();
        for p in 0..h * w {
            for c in 0..3 {
                let s = self.samples[p * self.channels + c.min(self.channels - 1)];
                d[c * h * w + p] = s as f32 / maxval;
            }
        }
        t
    }

    /// 8-bit P6 from a 3×H×W tensor, clamped to `[0, 1]` and rounded.
    pub fn from_image(pixels: &Tensor) -> Result<Pnm> {
        let (h, w) = super::image_dims(pixels)?;
        let d = pixels.data();
        let mut samples = Vec::with_capacity(3 * h * w);
        for p in 0..h * w {
            for c in 0..3 {
                samples.push(quantize(d[c * h * w + p]) as u16);
            }
        }
        Ok(Pnm {
            width: w,
            height: h,
            channels: 3,
            maxval: 255,
            samples,
        })
    }
}

/// Nearest 8-bit level of a `[0, 1]` intensity.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    Ok(Pnm::decode(bytes)?.to_image())
}

pub fn encode_image(pixels: &Tensor) -> Result<Vec<u8>> {
    Ok(Pnm::from_image(pixels)?.encode())
}

/// Label maps are 8-bit P5 whose sample values are the class ids.
pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    let pnm = Pnm::decode(bytes)?;
    if pnm.channels != 1 || pnm.maxval > 255 {
        return Err(Error::Format("label maps must be 8-bit P5".into()));
    }
    LabelMap::new(
        pnm.width,
        pnm.height,
        pnm.samples.iter().map(|&s| s as u8).collect(),
    )
}

pub fn encode_labels(labels: &LabelMap) -> Vec<u8> {
    Pnm {
        width: labels.width,
        height: labels.height,
        channels: 1,
        maxval: 255,
        samples: labels.data.iter().map(|&l| l as u16).collect(),
    }
    .encode()
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    decode_image(&fs::read(path)?)
}

pub fn save_image(path: &Path, pixels: &Tensor) -> Result<()> {
    Ok(fs::write(path, encode_image(pixels)?)?)
}

pub fn load_labels(path: &Path) -> Result<LabelMap> {
    decode_labels(&fs::read(path)?)
}

pub fn save_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    Ok(fs::write(path, encode_labels(labels))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_with_comments() {
        let bytes = b"P5\n# made by hand\n3 2 # trailing\n255\n\x00\x01\x02\x03\x04\xff";
        let p = Pnm::decode(bytes).unwrap();
        assert_eq!((p.width, p.height, p.channels), (3, 2, 1));
        assert_eq!(p.samples, vec![0, 1, 2, 3, 4, 255]);
    }

    #[test]
    fn sixteen_bit_big_endian() {
        let bytes = b"P5 1 1 1000\n\x03\xe8";
        let p = Pnm::decode(bytes).unwrap();
        assert_eq!(p.samples, vec![1000]);
        assert_eq!(p.to_image().data(), &[1.0, 1.0, 1.0]);
        assert!(Pnm::decode(b"P5 1 1 1000\n\x03\xe9").is_err());
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            &b""[..],
            b"P3 1 1 255\n\x00",
            b"P5 0 1 255\n",
            b"P5 1 1 0\n\x00",
            b"P5 1 1 70000\n\x00\x00",
            b"P5 2 2 255\n\x00",
            b"P5 1 1 255\n\x00\x00",
            b"P5 1 1 255",
            b"P5 99999999999 1 255\n",
            b"P5 100000 100000 255\n",
            b"P6 1 1 255x\x00\x00\x00",
        ] {
            assert!(matches!(Pnm::decode(bad), Err(Error::Format(_))), "{bad:?}");
        }
    }

    #[test]
    fn image_channel_order() {
        let p = Pnm::decode(b"P6 2 1 255\n\xff\x00\x00\x00\x00\xff").unwrap();
        let t = p.to_image();
        assert_eq!(t.get(&[0, 0, 0]), 1.0);
        assert_eq!(t.get(&[2, 0, 0]), 0.0);
        assert_eq!(t.get(&[2, 0, 1]), 1.0);
    }

    proptest! {
        #[test]
        fn image_round_trip(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let levels: Vec<f32> =
                (0..3 * w * h).map(|_| rng.gen_range(0..=255u8) as f32 / 255.0).collect();
            let t = Tensor::from_vec(&[3, h, w], levels).unwrap();
            let back = decode_image(&encode_image(&t).unwrap()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn label_round_trip(w in 1usize..9, h in 1usize..9, v in proptest::collection::vec(any::<u8>(), 64)) {
            let l = LabelMap::new(w, h, v[..w * h].to_vec()).unwrap();
            prop_assert_eq!(decode_labels(&encode_labels(&l)).unwrap(), l);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = Pnm::decode(&bytes);
        }
    }
}
