//! Binary sample and probability-map files.
//!
//! Sample (`WDSM`): magic, version, height, width, modality count, label
//! count (each a little-endian u32), then the image channels as
//! little-endian f32 (channel-major, rows top to bottom), then one byte per
//! voxel of labels.
//!
//! Probability map (`WDPM`): magic, version, axis count, each axis, label
//! count (little-endian u32), then voxel-major little-endian f32
//! probabilities.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::segmentation::{CrispSegmentation, Dims, ProbSegmentation};
use crate::synth_data::{Image, Sample};

pub const SAMPLE_MAGIC: &[u8; 4] = b"WDSM";
pub const PROB_MAP_MAGIC: &[u8; 4] = b"WDPM";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    name: String,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], name: &Path) -> Self {
        Self {
            buf,
            pos: 0,
            name: name.display().to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("{}: truncated at byte {}", self.name, self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != expected {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.name,
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(expected)
            )));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!("{}: unsupported version {v}", self.name)));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.name,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in a u32 header field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_sample(s: &Sample) -> Result<Vec<u8>> {
    let img = &s.image;
    if s.labels.dims().axes() != [img.height, img.width] {
        return Err(Error::mismatch("sample", format!("{}x{}", img.height, img.width), s.labels.dims()));
    }
    let mut out = Vec::with_capacity(24 + img.data.len() * 4 + s.labels.len());
    out.extend_from_slice(SAMPLE_MAGIC);
    push_u32(&mut out, FORMAT_VERSION as usize)?;
    push_u32(&mut out, img.height)?;
    push_u32(&mut out, img.width)?;
    push_u32(&mut out, img.channels)?;
    push_u32(&mut out, s.labels.num_labels())?;
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(s.labels.labels());
    Ok(out)
}

pub fn decode_sample(buf: &[u8], name: &Path) -> Result<Sample> {
    let mut r = Reader::new(buf, name);
    r.magic(SAMPLE_MAGIC)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u32()? as usize;
    let l = r.u32()? as usize;
    let dims = Dims::new(vec![h, w])?;
    let data = r.f32s(c * h * w)?;
    let labels = r.take(h * w)?.to_vec();
    r.finish()?;
    Ok(Sample {
        image: Image::new(c, h, w, data)?,
        labels: CrispSegmentation::new(dims, l, labels)?,
    })
}

pub fn write_sample(path: &Path, s: &Sample) -> Result<()> {
    fs::write(path, encode_sample(s)?)?;
    Ok(())
}

pub fn read_sample(path: &Path) -> Result<Sample> {
    decode_sample(&fs::read(path)?, path)
}

pub fn encode_prob_map(p: &ProbSegmentation) -> Result<Vec<u8>> {
    let axes = p.dims().axes();
    let mut out = Vec::with_capacity(16 + 4 * axes.len() + p.probs().len() * 4);
    out.extend_from_slice(PROB_MAP_MAGIC);
    push_u32(&mut out, FORMAT_VERSION as usize)?;
    push_u32(&mut out, axes.len())?;
    for &a in axes {
        push_u32(&mut out, a)?;
    }
    push_u32(&mut out, p.num_labels())?;
    for &v in p.probs() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decodes a probability map; single-precision storage drift is
/// renormalised on load.
pub fn decode_prob_map(buf: &[u8], name: &Path) -> Result<ProbSegmentation> {
    let mut r = Reader::new(buf, name);
    r.magic(PROB_MAP_MAGIC)?;
    let ndim = r.u32()? as usize;
    if ndim == 0 || ndim > 3 {
        return Err(Error::Format(format!("{}: {ndim} axes", name.display())));
    }
    let axes = (0..ndim).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let l = r.u32()? as usize;
    let dims = Dims::new(axes)?;
    let probs = r.f32s(dims.voxel_count() * l)?;
    r.finish()?;
    ProbSegmentation::new(dims, l, probs.into_iter().map(f64::from).collect())
}

pub fn write_prob_map(path: &Path, p: &ProbSegmentation) -> Result<()> {
    fs::write(path, encode_prob_map(p)?)?;
    Ok(())
}

/// Reads a prediction: a probability map, or a sample file whose labels are
/// taken as a crisp (one-hot) prediction.
pub fn read_prediction(path: &Path) -> Result<ProbSegmentation> {
    let buf = fs::read(path)?;
    if buf.starts_with(SAMPLE_MAGIC) {
        Ok(ProbSegmentation::from_crisp(&decode_sample(&buf, path)?.labels))
    } else {
        decode_prob_map(&buf, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_roundtrip_and_layout() {
        let s = Sample {
            image: Image::new(1, 2, 2, vec![0.5, 1.0, -1.0, 2.0]).unwrap(),
            labels: CrispSegmentation::new(Dims::d2(2, 2), 5, vec![0, 1, 4, 2]).unwrap(),
        };
        let bytes = encode_sample(&s).unwrap();
        assert_eq!(&bytes[..4], b"WDSM");
        assert_eq!(bytes.len(), 24 + 16 + 4);
        assert_eq!(&bytes[24..28], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[40..], &[0, 1, 4, 2]);
        assert_eq!(decode_sample(&bytes, Path::new("x")).unwrap(), s);
        assert!(decode_sample(&bytes[..30], Path::new("x")).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_sample(&extra, Path::new("x")).is_err());
    }

    #[test]
    fn prob_map_roundtrip() {
        let p = ProbSegmentation::new(Dims::d2(1, 2), 2, vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        let bytes = encode_prob_map(&p).unwrap();
        assert_eq!(decode_prob_map(&bytes, Path::new("p")).unwrap(), p);
        assert!(decode_sample(&bytes, Path::new("p")).is_err());
    }
}
