//! Binary model files.
//!
//! Layout: `b"TTRK"`, u32 format version, u32 header length, JSON header
//! (encoder config, vocabulary in id order, tensor manifest), tensor data as
//! little-endian f32 in manifest order, then a CRC32 of everything before it.
//! All integers are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use topictrack_core::encoder::EncoderConfig;
use topictrack_core::model::TopicModel;
use topictrack_core::params::ParamStore;
use topictrack_core::tensor::Matrix;
use topictrack_core::textenc::Vocab;

use crate::Error;

pub const MAGIC: [u8; 4] = *b"TTRK";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 12;
const CRC_LEN: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelArtifact {
    pub version: u32,
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub params: ParamStore<f32>,
}

impl ModelArtifact {
    pub fn from_model(model: &TopicModel<f32>) -> Self {
        Self {
            version: FORMAT_VERSION,
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            params: model.params.clone(),
        }
    }

    pub fn into_model(self) -> Result<TopicModel<f32>, Error> {
        Ok(TopicModel::from_parts(self.config, self.vocab, self.params)?)
    }

    pub fn manifest(&self) -> Vec<TensorEntry> {
        self.params
            .iter()
            .map(|(_, name, m)| TensorEntry {
                name: name.to_string(),
                shape: [m.rows(), m.cols()],
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, Error> {
        let header = Header {
            config: self.config.clone(),
            vocab: (0..self.vocab.len())
                .map(|i| self.vocab.token(i).unwrap_or_default().to_string())
                .collect(),
            tensors: self.manifest(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let header_len = u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?;
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + 4 * self.params.num_scalars() + CRC_LEN);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, m) in self.params.iter() {
            for x in m.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        if bytes.len() < PREAMBLE + CRC_LEN {
            return Err(Error::Truncated);
        }
        if bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u32_at(bytes, 4);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u32_at(bytes, 8) as usize;
        let body_end = bytes.len() - CRC_LEN;
        let stored_crc = u32_at(bytes, body_end);
        let crc_ok = crc32fast::hash(&bytes[..body_end]) == stored_crc;
        if PREAMBLE + header_len > body_end {
            return Err(if crc_ok { Error::Format("header length exceeds file".into()) } else { Error::Truncated });
        }
        let header: Header = match serde_json::from_slice(&bytes[PREAMBLE..PREAMBLE + header_len]) {
            Ok(h) => h,
            Err(_) if !crc_ok => return Err(Error::Checksum),
            Err(e) => return Err(Error::Format(format!("header: {e}"))),
        };
        let scalars: usize = header.tensors.iter().map(|t| t.shape[0] * t.shape[1]).sum();
        let expected_end = PREAMBLE + header_len + 4 * scalars;
        if expected_end > body_end {
            return Err(Error::Truncated);
        }
        if expected_end < body_end {
            return Err(Error::Format("trailing bytes after tensor data".into()));
        }
        if !crc_ok {
            return Err(Error::Checksum);
        }

        let mut params = ParamStore::new();
        let mut offset = PREAMBLE + header_len;
        for t in &header.tensors {
            let n = t.shape[0] * t.shape[1];
            let data = bytes[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            offset += 4 * n;
            params.insert(&t.name, Matrix::from_vec(t.shape[0], t.shape[1], data))?;
        }
        let map: BTreeMap<String, usize> = header
            .vocab
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        Ok(Self {
            version,
            config: header.config,
            vocab: Vocab::from_map(&map)?,
            params,
        })
    }
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

pub fn save_model(path: &Path, model: &TopicModel<f32>) -> Result<(), Error> {
    let bytes = ModelArtifact::from_model(model).to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TopicModel<f32>, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelArtifact::from_bytes(&bytes)?.into_model()
}
