//! Binary checkpoint format.
//!
//! Layout (all integers little-endian, floats 64-bit little-endian):
//!
//! ```text
//! magic        [u8;4]   "CSKR"
//! version      u32      1
//! config_hash  [u8;32]
//! -- topology block --
//! mode         u8       0 none (prior-only), 1 v1, 2 v2, 3 v3
//! flags        u8       bit0 prior, bit1 denoiser, bit2 bridge, bit3 scorer
//! patch_rows   u32
//! patch_cols   u32
//! cond_dim     u32
//! time_dim     u32
//! prior_width  u32      iff prior
//! prior_layers u32      iff prior
//! den_width    u32      iff denoiser
//! den_layers   u32      iff denoiser
//! bridge_k     u32      iff bridge
//! scorer_op    u32      iff scorer
//! scorer_cad   u64      iff scorer
//! cand_count   u32      iff scorer, then cand_count u32 candidates
//! score_count  u32      iff scorer, then score_count u32 score indices
//! step         u64
//! -- float arrays, each u64 count + values, in declaration order --
//! prior params          iff prior
//! denoiser params       iff denoiser
//! bridge ratio (1)      iff bridge
//! scorer score values   iff scorer (score_count entries)
//! -- trailing guard --
//! guard        u64      byte length of everything before the guard
//! ```
//!
//! The writer is deterministic, so identical state serializes to identical
//! bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nnet::{DenoiserParams, MlpParams, Topology};
use crate::prior::{PriorBridge, PriorParams};
use crate::scorer::ScorerState;
use crate::trainer::TrainMode;

pub const MAGIC: [u8; 4] = *b"CSKR";
pub const VERSION: u32 = 1;

const FLAG_PRIOR: u8 = 1;
const FLAG_DENOISER: u8 = 2;
const FLAG_BRIDGE: u8 = 4;
const FLAG_SCORER: u8 = 8;

/// Everything a run persists: trained parameters, the restore bridge, the
/// scorer state, and the hash of the config that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    /// Trained generator version; `None` for prior-only checkpoints.
    pub mode: Option<TrainMode>,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub cond_dim: usize,
    pub time_dim: usize,
    pub prior: Option<PriorParams>,
    pub denoiser: Option<DenoiserParams>,
    pub bridge: Option<PriorBridge>,
    pub scorer: Option<ScorerState>,
    pub step: u64,
}

impl Checkpoint {
    pub fn verify_hash(&self, expected: [u8; 32]) -> Result<()> {
        if self.config_hash != expected {
            return Err(Error::CheckpointMismatch(
                "checkpoint was produced by a different config".into(),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);

        let mode_byte = match self.mode {
            None => 0u8,
            Some(TrainMode::V1) => 1,
            Some(TrainMode::V2) => 2,
            Some(TrainMode::V3) => 3,
        };
        out.push(mode_byte);
        let mut flags = 0u8;
        if self.prior.is_some() {
            flags |= FLAG_PRIOR;
        }
        if self.denoiser.is_some() {
            flags |= FLAG_DENOISER;
        }
        if self.bridge.is_some() {
            flags |= FLAG_BRIDGE;
        }
        if self.scorer.is_some() {
            flags |= FLAG_SCORER;
        }
        out.push(flags);
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        u32le(&mut out, self.patch_rows);
        u32le(&mut out, self.patch_cols);
        u32le(&mut out, self.cond_dim);
        u32le(&mut out, self.time_dim);
        if let Some(prior) = &self.prior {
            u32le(&mut out, prior.mlp().topology().hidden_width);
            u32le(&mut out, prior.mlp().topology().hidden_layers);
        }
        if let Some(denoiser) = &self.denoiser {
            u32le(&mut out, denoiser.mlp().topology().hidden_width);
            u32le(&mut out, denoiser.mlp().topology().hidden_layers);
        }
        if let Some(bridge) = &self.bridge {
            u32le(&mut out, bridge.k);
        }
        if let Some(scorer) = &self.scorer {
            u32le(&mut out, scorer.op);
            out.extend_from_slice(&scorer.cadence.to_le_bytes());
            u32le(&mut out, scorer.candidates.len());
            for &c in &scorer.candidates {
                u32le(&mut out, c);
            }
            u32le(&mut out, scorer.last_scores.len());
            for &(n, _) in &scorer.last_scores {
                u32le(&mut out, n);
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());

        let floats = |out: &mut Vec<u8>, values: &[f64]| {
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        };
        if let Some(prior) = &self.prior {
            floats(&mut out, &prior.mlp().flatten());
        }
        if let Some(denoiser) = &self.denoiser {
            floats(&mut out, &denoiser.mlp().flatten());
        }
        if let Some(bridge) = &self.bridge {
            floats(&mut out, &[bridge.ratio]);
        }
        if let Some(scorer) = &self.scorer {
            let values: Vec<f64> = scorer.last_scores.iter().map(|&(_, s)| s).collect();
            floats(&mut out, &values);
        }

        let guard = out.len() as u64;
        out.extend_from_slice(&guard.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);

        let mode = match r.u8()? {
            0 => None,
            1 => Some(TrainMode::V1),
            2 => Some(TrainMode::V2),
            3 => Some(TrainMode::V3),
            m => return Err(Error::Format(format!("unknown mode byte {m}"))),
        };
        let flags = r.u8()?;
        let patch_rows = r.u32()? as usize;
        let patch_cols = r.u32()? as usize;
        let cond_dim = r.u32()? as usize;
        let time_dim = r.u32()? as usize;

        let prior_topo = if flags & FLAG_PRIOR != 0 {
            Some((r.u32()? as usize, r.u32()? as usize))
        } else {
            None
        };
        let den_topo = if flags & FLAG_DENOISER != 0 {
            Some((r.u32()? as usize, r.u32()? as usize))
        } else {
            None
        };
        let bridge_k = if flags & FLAG_BRIDGE != 0 {
            Some(r.u32()? as usize)
        } else {
            None
        };
        let scorer_ints = if flags & FLAG_SCORER != 0 {
            let op = r.u32()? as usize;
            let cadence = r.u64()?;
            let cand_count = r.u32()? as usize;
            let mut candidates = Vec::with_capacity(cand_count);
            for _ in 0..cand_count {
                candidates.push(r.u32()? as usize);
            }
            let score_count = r.u32()? as usize;
            let mut score_indices = Vec::with_capacity(score_count);
            for _ in 0..score_count {
                score_indices.push(r.u32()? as usize);
            }
            Some((op, cadence, candidates, score_indices))
        } else {
            None
        };
        let step = r.u64()?;

        let prior = match prior_topo {
            Some((width, layers)) => {
                let topo = Topology {
                    input_dim: cond_dim,
                    hidden_width: width,
                    hidden_layers: layers,
                    output_dim: patch_rows * patch_cols,
                    squash_output: true,
                };
                let values = r.float_array()?;
                let mlp = MlpParams::from_flat(topo, &values)
                    .map_err(|e| Error::Format(format!("prior params: {e}")))?;
                Some(PriorParams::from_mlp(mlp, cond_dim, patch_rows, patch_cols))
            }
            None => None,
        };
        let denoiser = match den_topo {
            Some((width, layers)) => {
                let topo = Topology {
                    input_dim: patch_rows * patch_cols + cond_dim + time_dim,
                    hidden_width: width,
                    hidden_layers: layers,
                    output_dim: patch_rows * patch_cols,
                    squash_output: false,
                };
                let values = r.float_array()?;
                let mlp = MlpParams::from_flat(topo, &values)
                    .map_err(|e| Error::Format(format!("denoiser params: {e}")))?;
                Some(
                    DenoiserParams::from_mlp(mlp, patch_rows, patch_cols, cond_dim, time_dim)
                        .map_err(|e| Error::Format(format!("denoiser layout: {e}")))?,
                )
            }
            None => None,
        };
        let bridge = match bridge_k {
            Some(k) => {
                let values = r.float_array()?;
                if values.len() != 1 {
                    return Err(Error::Format("bridge block must hold one float".into()));
                }
                Some(PriorBridge { k, ratio: values[0] })
            }
            None => None,
        };
        let scorer = match scorer_ints {
            Some((op, cadence, candidates, score_indices)) => {
                let values = r.float_array()?;
                if values.len() != score_indices.len() {
                    return Err(Error::Format("scorer score arrays disagree".into()));
                }
                Some(ScorerState {
                    op,
                    candidates,
                    last_scores: score_indices.into_iter().zip(values).collect(),
                    cadence,
                })
            }
            None => None,
        };

        let body_len = r.at as u64;
        let guard = r.u64()?;
        if guard != body_len {
            return Err(Error::Format(format!(
                "length guard {guard} does not match body length {body_len}"
            )));
        }
        if r.at != bytes.len() {
            return Err(Error::Format("trailing bytes after the length guard".into()));
        }

        Ok(Checkpoint {
            config_hash,
            mode,
            patch_rows,
            patch_cols,
            cond_dim,
            time_dim,
            prior,
            denoiser,
            bridge,
            scorer,
            step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Format("unexpected end of checkpoint".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(u64::from_le_bytes(self.take(8)?.try_into().unwrap())))
    }

    fn float_array(&mut self) -> Result<Vec<f64>> {
        let count = self.u64()? as usize;
        if count > self.bytes.len() / 8 {
            return Err(Error::Format(format!("implausible array length {count}")));
        }
        (0..count).map(|_| self.f64()).collect()
    }
}
