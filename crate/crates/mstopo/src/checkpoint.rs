//! Binary checkpoint codec for trained networks.
//!
//! A checkpoint captures everything needed to resume or render a run: the
//! config hash it belongs to, grid dimensions, epoch counter, the network
//! (init parameters, kernels, weights), and optionally the Adam moment
//! buffers. The format is a flat little-endian record:
//!
//! ```text
//! magic "MSTC" | version u32 | config hash 32B | macro dims 2xu32
//! | micro dims 2xu32 | n_passive u32 | passive n x (u32 u32)
//! | epoch u64 | init (u32 u32 f64x2 f64x2 f64 f64)
//! | n_k u64 | kernels n_k x 4 f64 | weights n_k f64
//! | adam flag u8 | [step u64 | m_k | v_k | m_w | v_w]
//! ```
//!
//! Round trips are bit-exact: every `f64` is stored as its IEEE bits.
//! The decoder validates lengths before allocating and rejects non-finite
//! parameters, inconsistent kernel counts, and trailing bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{NetworkInit, TopologyNetwork};
use crate::train::AdamState;

const MAGIC: &[u8; 4] = b"MSTC";
const VERSION: u32 = 1;
/// Upper bound on the kernel count a checkpoint may declare.
const MAX_KERNELS: u64 = 1 << 24;
/// Upper bound on each grid dimension.
const MAX_DIM: u32 = 65_535;

/// A complete training snapshot: network, optimizer state, and provenance.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// SHA-256 of the compact config JSON this run was started from.
    pub config_hash: [u8; 32],
    pub macro_dims: (usize, usize),
    pub micro_dims: (usize, usize),
    /// Macro cells rendered as voids, `(cx, cy)`; needed because rendering
    /// from a checkpoint has no config to consult.
    pub passive: Vec<(usize, usize)>,
    pub epoch: u64,
    pub network: TopologyNetwork,
    /// Present for resumable checkpoints; absent for render-only exports.
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    /// Serializes to the flat binary format. Fails if the network or Adam
    /// buffers are internally inconsistent.
    pub fn encode(&self) -> Result<Vec<u8>> {
        self.network.validate()?;
        if let Some(adam) = &self.adam {
            adam.check_shapes(&self.network)?;
        }
        check_passive(&self.passive, self.macro_dims)?;
        let n_k = self.network.kernels.len();
        let adam_len = if self.adam.is_some() { 8 + n_k * 80 } else { 0 };
        let head = 4 + 4 + 32 + 16 + 4 + self.passive.len() * 8;
        let mut out = Vec::with_capacity(head + 8 + 56 + 8 + n_k * 40 + 1 + adam_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(self.macro_dims.0 as u32).to_le_bytes());
        out.extend_from_slice(&(self.macro_dims.1 as u32).to_le_bytes());
        out.extend_from_slice(&(self.micro_dims.0 as u32).to_le_bytes());
        out.extend_from_slice(&(self.micro_dims.1 as u32).to_le_bytes());
        out.extend_from_slice(&(self.passive.len() as u32).to_le_bytes());
        for &(cx, cy) in &self.passive {
            out.extend_from_slice(&(cx as u32).to_le_bytes());
            out.extend_from_slice(&(cy as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.epoch.to_le_bytes());
        let init = &self.network.init;
        out.extend_from_slice(&(init.local_kernels_per_dim as u32).to_le_bytes());
        out.extend_from_slice(&(init.global_kernels_per_dim as u32).to_le_bytes());
        for v in [
            init.local_range.0,
            init.local_range.1,
            init.global_range.0,
            init.global_range.1,
            init.weight_init,
            init.weight_jitter,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(n_k as u64).to_le_bytes());
        for k in &self.network.kernels {
            for v in k {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for w in &self.network.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        match &self.adam {
            None => out.push(0),
            Some(adam) => {
                out.push(1);
                out.extend_from_slice(&adam.step.to_le_bytes());
                for k in adam.m_kernels.iter().chain(&adam.v_kernels) {
                    for v in k {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                for w in adam.m_weights.iter().chain(&adam.v_weights) {
                    out.extend_from_slice(&w.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    /// Parses and validates the flat binary format.
    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32, "config hash")?);
        let macro_dims = (r.dim("macro width")?, r.dim("macro height")?);
        let micro_dims = (r.dim("micro width")?, r.dim("micro height")?);
        let n_passive = r.u32("passive cell count")? as usize;
        if n_passive > macro_dims.0 * macro_dims.1 {
            return Err(Error::Checkpoint(format!(
                "{n_passive} passive cells exceed the cell lattice"
            )));
        }
        // Length-check the run before allocating for it.
        let raw_passive = r.take(n_passive * 8, "passive cells")?;
        let mut passive = Vec::with_capacity(n_passive);
        for pair in raw_passive.chunks_exact(8) {
            let cx = u32::from_le_bytes(pair[..4].try_into().unwrap()) as usize;
            let cy = u32::from_le_bytes(pair[4..].try_into().unwrap()) as usize;
            passive.push((cx, cy));
        }
        check_passive(&passive, macro_dims)?;
        let epoch = r.u64("epoch")?;
        let local = r.u32("local kernels per dim")?;
        let global = r.u32("global kernels per dim")?;
        if local == 0 || global == 0 || local > 255 || global > 255 {
            return Err(Error::Checkpoint(format!(
                "kernel grid {local}x{global} per dim is out of range"
            )));
        }
        let init = NetworkInit {
            local_kernels_per_dim: local as usize,
            global_kernels_per_dim: global as usize,
            local_range: (r.f64_finite("local range")?, r.f64_finite("local range")?),
            global_range: (
                r.f64_finite("global range")?,
                r.f64_finite("global range")?,
            ),
            weight_init: r.f64_finite("weight init")?,
            weight_jitter: r.f64_finite("weight jitter")?,
        };
        let n_k = r.u64("kernel count")?;
        let expected = (local as u64).pow(2) * (global as u64).pow(2);
        if n_k != expected || n_k > MAX_KERNELS {
            return Err(Error::Checkpoint(format!(
                "kernel count {n_k} does not match the {local}x{global} init grid"
            )));
        }
        let n_k = n_k as usize;
        let kernels = r.kernel_rows(n_k, "kernels")?;
        let weights = r.f64_run(n_k, "weights")?;
        let network = TopologyNetwork {
            kernels,
            weights,
            init,
        };
        let adam = match r.u8("adam flag")? {
            0 => None,
            1 => Some(AdamState {
                step: r.u64("adam step")?,
                m_kernels: r.kernel_rows(n_k, "adam first moments")?,
                v_kernels: r.kernel_rows(n_k, "adam second moments")?,
                m_weights: r.f64_run(n_k, "adam first moments")?,
                v_weights: r.f64_run(n_k, "adam second moments")?,
            }),
            flag => {
                return Err(Error::Checkpoint(format!("bad adam flag {flag}")));
            }
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config_hash,
            macro_dims,
            micro_dims,
            passive,
            epoch,
            network,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::decode(&std::fs::read(path)?)
    }
}

/// Requires every passive cell inside the lattice and listed once.
fn check_passive(passive: &[(usize, usize)], macro_dims: (usize, usize)) -> Result<()> {
    let (mx, my) = macro_dims;
    let mut seen = std::collections::HashSet::new();
    for &(cx, cy) in passive {
        if cx >= mx || cy >= my {
            return Err(Error::Checkpoint(format!(
                "passive cell ({cx}, {cy}) outside the {mx}x{my} lattice"
            )));
        }
        if !seen.insert((cx, cy)) {
            return Err(Error::Checkpoint(format!(
                "passive cell ({cx}, {cy}) listed twice"
            )));
        }
    }
    Ok(())
}

/// Bounds-checked little-endian cursor over untrusted bytes.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let v = self.u32(what)?;
        if v == 0 || v > MAX_DIM {
            return Err(Error::Checkpoint(format!("{what} {v} is out of range")));
        }
        Ok(v as usize)
    }

    fn f64_finite(&mut self, what: &str) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Checkpoint(format!("non-finite value in {what}")));
        }
        Ok(v)
    }

    /// Reads `n` finite doubles, length-checking before allocating.
    fn f64_run(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n * 8, what)?;
        let mut out = Vec::with_capacity(n);
        for chunk in raw.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Checkpoint(format!("non-finite value in {what}")));
            }
            out.push(v);
        }
        Ok(out)
    }

    fn kernel_rows(&mut self, n: usize, what: &str) -> Result<Vec<[f64; 4]>> {
        let flat = self.f64_run(n * 4, what)?;
        Ok(flat.chunks_exact(4).map(|c| c.try_into().unwrap()).collect())
    }
}
