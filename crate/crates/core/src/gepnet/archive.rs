//! Weight archive file format (`.gepw`).
//!
//! All integers and floats are little-endian.
//!
//! | bytes | field |
//! |---|---|
//! | 8 | magic `GEPNETW\0` |
//! | 4 | format version (`u32`, currently 1) |
//! | 5 × 4 | `N_u`, `N_h1`, `N_h2`, `L`, `M` (`u32`) |
//! | 4 + n | metadata length and UTF-8 JSON ([`ArchiveMeta`]) |
//! | 4 | tensor count (`u32`) |
//! | per tensor | name length (`u16`), name, rank (`u32`), dims (`u64` each), `f64` payload row-major |
//! | 32 | SHA-256 of every preceding byte |

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Gepnet, GepnetConfig};
use crate::error::{Error, Result};
use crate::gnn::{GnnHyperparams, GnnParams, TENSOR_IDS};

pub const ARCHIVE_MAGIC: [u8; 8] = *b"GEPNETW\0";
pub const ARCHIVE_VERSION: u32 = 1;
pub const ARCHIVE_EXTENSION: &str = "gepw";
const CHECKSUM_LEN: usize = 32;

/// Training provenance stored with the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    /// Step of the training scheme that produced the weights (1 or 3; 0 = untrained).
    pub step: u8,
    pub snr_train_db: f64,
    pub seed: u64,
    pub config: GepnetConfig,
    pub epochs: usize,
    pub best_val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightArchive {
    pub meta: ArchiveMeta,
    pub params: GnnParams,
}

impl WeightArchive {
    pub fn new(meta: ArchiveMeta, params: GnnParams) -> Self {
        Self { meta, params }
    }

    pub fn model(&self) -> Result<Gepnet> {
        let mut config = self.meta.config.clone();
        config.gnn = self.params.hp;
        Gepnet::new(config, self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let mut b = Vec::with_capacity(p.len() * 8 + 1024);
        b.extend_from_slice(&ARCHIVE_MAGIC);
        b.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        for v in [p.hp.n_u, p.hp.n_h1, p.hp.n_h2, p.hp.rounds, p.m] {
            b.extend_from_slice(&to_u32(v)?.to_le_bytes());
        }
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Malformed(e.to_string()))?;
        b.extend_from_slice(&to_u32(meta.len())?.to_le_bytes());
        b.extend_from_slice(&meta);
        b.extend_from_slice(&to_u32(TENSOR_IDS.len())?.to_le_bytes());
        for id in TENSOR_IDS {
            let name = id.name().as_bytes();
            b.extend_from_slice(&(name.len() as u16).to_le_bytes());
            b.extend_from_slice(name);
            let (r, c) = p.shape(id);
            b.extend_from_slice(&2u32.to_le_bytes());
            b.extend_from_slice(&(r as u64).to_le_bytes());
            b.extend_from_slice(&(c as u64).to_le_bytes());
            for v in p.tensor(id) {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        Ok(b)
    }

    /// Parses an archive. With `expected`, every tensor must have the shape
    /// implied by those hyperparameters and readout width.
    pub fn from_bytes(bytes: &[u8], expected: Option<(&GnnHyperparams, usize)>) -> Result<Self> {
        if bytes.len() < ARCHIVE_MAGIC.len() + 4 + CHECKSUM_LEN || bytes[..8] != ARCHIVE_MAGIC {
            return Err(Error::Malformed("not a weight archive (bad magic)".into()));
        }
        let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != sum {
            return Err(Error::Checksum);
        }
        let mut r = Reader { b: body, pos: 8 };
        let version = r.u32()?;
        if version != ARCHIVE_VERSION {
            return Err(Error::ArchiveVersion {
                found: version,
                expected: ARCHIVE_VERSION,
            });
        }
        let hp = GnnHyperparams {
            n_u: r.u32()? as usize,
            n_h1: r.u32()? as usize,
            n_h2: r.u32()? as usize,
            rounds: r.u32()? as usize,
        };
        let m = r.u32()? as usize;
        let meta_len = r.u32()? as usize;
        let meta: ArchiveMeta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Malformed(format!("metadata: {e}")))?;
        let (target_hp, target_m) = match expected {
            Some((h, m)) => (*h, m),
            None => (hp, m),
        };
        let mut params = GnnParams::zeros(target_hp, target_m)?;
        let count = r.u32()? as usize;
        if count != TENSOR_IDS.len() {
            return Err(Error::Malformed(format!("expected {} tensors, found {count}", TENSOR_IDS.len())));
        }
        for id in TENSOR_IDS {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?;
            if name != id.name() {
                return Err(Error::Malformed(format!("expected tensor `{}`, found `{name}`", id.name())));
            }
            let rank = r.u32()? as usize;
            let dims: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            let (er, ec) = params.shape(id);
            if dims != [er, ec] {
                return Err(Error::ShapeMismatch {
                    name: name.to_string(),
                    expected: vec![er, ec],
                    found: dims,
                });
            }
            for v in params.tensor_mut(id) {
                *v = r.f64()?;
            }
        }
        if r.pos != body.len() {
            return Err(Error::Malformed("trailing bytes after the last tensor".into()));
        }
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path, expected: Option<(&GnnHyperparams, usize)>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, expected)
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Malformed(format!("{v} does not fit the header")))
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len()).ok_or_else(|| Error::Malformed("truncated archive".into()))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn archive(hp: GnnHyperparams) -> WeightArchive {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = GnnParams::glorot(hp, 4, &mut rng).unwrap();
        let meta = ArchiveMeta {
            step: 3,
            snr_train_db: 7.25,
            seed: 99,
            config: GepnetConfig {
                gnn: hp,
                ..Default::default()
            },
            epochs: 12,
            best_val_loss: Some(0.123456789),
        };
        WeightArchive::new(meta, params)
    }

    fn hp() -> GnnHyperparams {
        GnnHyperparams {
            n_u: 3,
            n_h1: 5,
            n_h2: 4,
            rounds: 2,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let a = archive(hp());
        let b = WeightArchive::from_bytes(&a.to_bytes().unwrap(), None).unwrap();
        assert_eq!(a, b);
        assert!(a.params.data.iter().zip(&b.params.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(format!("w.{ARCHIVE_EXTENSION}"));
        let a = archive(hp());
        a.save(&path).unwrap();
        assert_eq!(WeightArchive::load(&path, Some((&hp(), 4))).unwrap(), a);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut bytes = archive(hp()).to_bytes().unwrap();
        let i = bytes.len() / 2;
        bytes[i] ^= 0x10;
        assert!(matches!(WeightArchive::from_bytes(&bytes, None), Err(Error::Checksum)));
    }

    #[test]
    fn other_version_is_rejected() {
        let mut bytes = archive(hp()).to_bytes().unwrap();
        let n = bytes.len() - CHECKSUM_LEN;
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        assert!(matches!(
            WeightArchive::from_bytes(&bytes, None),
            Err(Error::ArchiveVersion { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let bytes = archive(hp()).to_bytes().unwrap();
        let other = GnnHyperparams { n_h2: 6, ..hp() };
        match WeightArchive::from_bytes(&bytes, Some((&other, 4))) {
            Err(Error::ShapeMismatch { name, expected, found }) => {
                assert_eq!(name, "msg.1.w");
                assert_eq!(expected, vec![6, 5]);
                assert_eq!(found, vec![4, 5]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        let bytes = archive(hp()).to_bytes().unwrap();
        assert!(matches!(WeightArchive::from_bytes(b"nonsense", None), Err(Error::Malformed(_))));
        assert!(WeightArchive::from_bytes(&bytes[..bytes.len() - 1], None).is_err());
    }
}
