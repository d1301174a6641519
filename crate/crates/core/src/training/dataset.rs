//! Synthetic training data and its cache file.
//!
//! Cache layout (little-endian):
//!
//! | bytes | field |
//! |---|---|
//! | 8 | magic `GEPDSET\0` |
//! | 4 | format version (`u32`, currently 1) |
//! | 4 × 4 | `N`, `K`, `Q` (`u32`) and flags (`u32`, bit 0 = extrinsic labels present) |
//! | 8 | record count (`u64`) |
//! | per record | `I_A`, `σ_w²` (`f64`); `K` symbol indices (`u32`); `H` (`N·K` `f64`, row-major); `y` (`N` `f64`); `L_A1` (`K·Q` `f64`); labels (`K·Q` `f64`, if flagged) |
//! | 32 | SHA-256 of every preceding byte |

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{sample_prior_llrs, IaLut, TrainingSpec};
use crate::channel::{apply_awgn, generate_channel, RealChannelInstance};
use crate::error::{Error, Result};
use crate::gepnet::{masked_outputs, Gepnet, OutputHead};
use crate::modem::{clip_llr, Constellation, LLR_CLIP};
use crate::numerics::{DenseMatrix, SeededRng, Stream};

pub const DATASET_MAGIC: [u8; 8] = *b"GEPDSET\0";
pub const DATASET_VERSION: u32 = 1;

/// One training vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub inst: RealChannelInstance,
    /// Transmitted level index per real dimension (the Step-1 label).
    pub symbols: Vec<usize>,
    /// Mutual information the prior was drawn at.
    pub ia: f64,
    /// Synthetic a-priori LLRs `L_A1`, clipped to the LLR range.
    pub prior_llrs: Vec<f64>,
    /// Step-2 extrinsic labels `L_E1`.
    pub ext_labels: Option<Vec<f64>>,
}

/// Draws `count` samples; sample `i` depends only on `(root, i)`.
pub fn generate_dataset(spec: &TrainingSpec, lut: &IaLut, count: usize, root: SeededRng) -> Result<Vec<TrainingSample>> {
    spec.validate()?;
    let c = spec.modulation.constellation();
    for &ia in &spec.ia_values {
        lut.mu(ia)?;
    }
    (0..count as u64)
        .into_par_iter()
        .map(|i| draw_sample(spec, lut, &c, root, i))
        .collect()
}

fn draw_sample(spec: &TrainingSpec, lut: &IaLut, c: &Constellation, root: SeededRng, i: u64) -> Result<TrainingSample> {
    let h = generate_channel(&spec.channel, &mut root.substream(Stream::Channel, i))?;
    let mut bits_rng = root.substream(Stream::Bits, i);
    let symbols: Vec<usize> = (0..h.cols()).map(|_| bits_rng.random_range(0..c.size())).collect();
    let x: Vec<f64> = symbols.iter().map(|&s| c.levels()[s]).collect();
    let snr = match spec.snr_jitter_db {
        Some(j) if j > 0.0 => spec.snr_train_db + root.substream(Stream::Misc, i).random_range(-j..=j),
        _ => spec.snr_train_db,
    };
    let inst = apply_awgn(&h, &x, snr, c.es(), &mut root.substream(Stream::Noise, i));
    let mut llr_rng = root.substream(Stream::LlrSynthesis, i);
    let ia = spec.ia_values[llr_rng.random_range(0..spec.ia_values.len())];
    let bits = c.demap_indices(&symbols);
    let prior_llrs = sample_prior_llrs(&bits, lut.mu(ia)?, &mut llr_rng)
        .into_iter()
        .map(|l| clip_llr(l, LLR_CLIP))
        .collect();
    Ok(TrainingSample {
        inst,
        symbols,
        ia,
        prior_llrs,
        ext_labels: None,
    })
}

/// Fills `ext_labels` with the masked outputs of the APP model (prior-subtracted head).
pub fn generate_ext_labels(app_model: &Gepnet, samples: &mut [TrainingSample], c: &Constellation) -> Result<()> {
    samples.par_iter_mut().try_for_each(|s| {
        s.ext_labels = Some(masked_outputs(app_model, &s.inst, &s.prior_llrs, c, OutputHead::AppMinusPrior)?);
        Ok(())
    })
}

pub fn write_dataset(path: &Path, samples: &[TrainingSample]) -> Result<()> {
    let first = samples.first().ok_or_else(|| Error::InvalidConfig("refusing to write an empty dataset".into()))?;
    let (n, k) = (first.inst.h.rows(), first.inst.h.cols());
    let j = first.prior_llrs.len();
    if k == 0 || j % k != 0 {
        return Err(Error::DimensionMismatch("prior length is not a multiple of K".into()));
    }
    let labelled = first.ext_labels.is_some();
    let mut b = Vec::new();
    b.extend_from_slice(&DATASET_MAGIC);
    b.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [n, k, j / k, usize::from(labelled)] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    b.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        if s.inst.h.rows() != n || s.inst.h.cols() != k || s.prior_llrs.len() != j || s.ext_labels.is_some() != labelled {
            return Err(Error::DimensionMismatch("dataset records differ in shape".into()));
        }
        put(&mut b, &[s.ia, s.inst.sigma_w2]);
        for &x in &s.symbols {
            b.extend_from_slice(&(x as u32).to_le_bytes());
        }
        put(&mut b, s.inst.h.as_slice());
        put(&mut b, &s.inst.y);
        put(&mut b, &s.prior_llrs);
        if let Some(l) = &s.ext_labels {
            put(&mut b, l);
        }
    }
    let digest = Sha256::digest(&b);
    b.extend_from_slice(&digest);
    std::fs::write(path, b)?;
    Ok(())
}

fn put(b: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        b.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn read_dataset(path: &Path) -> Result<Vec<TrainingSample>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 + 4 + 16 + 8 + 32 || bytes[..8] != DATASET_MAGIC {
        return Err(Error::Malformed("not a dataset cache (bad magic)".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Checksum);
    }
    let mut pos = 8;
    let mut take = |len: usize| -> Result<&[u8]> {
        let end = pos + len;
        if end > body.len() {
            return Err(Error::Malformed("truncated dataset".into()));
        }
        let s = &body[pos..end];
        pos = end;
        Ok(s)
    };
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != DATASET_VERSION {
        return Err(Error::ArchiveVersion {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let n = u32_at(take(4)?) as usize;
    let k = u32_at(take(4)?) as usize;
    let q = u32_at(take(4)?) as usize;
    let labelled = u32_at(take(4)?) & 1 == 1;
    let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let floats = |s: &[u8]| -> Vec<f64> { s.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect() };
    let mut out = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let head = floats(take(16)?);
        let symbols = take(4 * k)?.chunks_exact(4).map(|c| u32_at(c) as usize).collect();
        let h = DenseMatrix::from_vec(n, k, floats(take(8 * n * k)?));
        let y = floats(take(8 * n)?);
        let prior_llrs = floats(take(8 * k * q)?);
        let ext_labels = if labelled { Some(floats(take(8 * k * q)?)) } else { None };
        out.push(TrainingSample {
            inst: RealChannelInstance { h, y, sigma_w2: head[1] },
            symbols,
            ia: head[0],
            prior_llrs,
            ext_labels,
        });
    }
    if pos != body.len() {
        return Err(Error::Malformed("trailing bytes after the last record".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModelSpec;

    fn spec() -> TrainingSpec {
        TrainingSpec {
            channel: ChannelModelSpec::rayleigh(2, 2),
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_indexed() {
        let lut = IaLut::standard();
        let a = generate_dataset(&spec(), &lut, 6, SeededRng::new(3)).unwrap();
        let b = generate_dataset(&spec(), &lut, 4, SeededRng::new(3)).unwrap();
        assert_eq!(&a[..4], &b[..]);
        assert_ne!(a[0], a[1]);
        for s in &a {
            assert_eq!(s.prior_llrs.len(), 4);
            assert!(s.prior_llrs.iter().all(|l| l.abs() <= LLR_CLIP));
            if s.ia == 0.0 {
                assert!(s.prior_llrs.iter().all(|&l| l == 0.0));
            }
        }
    }

    #[test]
    fn cache_roundtrip() {
        let lut = IaLut::standard();
        let mut data = generate_dataset(&spec(), &lut, 5, SeededRng::new(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        write_dataset(&path, &data).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
        for (i, s) in data.iter_mut().enumerate() {
            s.ext_labels = Some(vec![i as f64; 4]);
        }
        write_dataset(&path, &data).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[40] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Checksum)));
    }
}
