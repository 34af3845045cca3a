//! Flat binary container for tensors, factor bundles, attention parameter
//! sets, and model checkpoints.
//!
//! Layout (all integers `u64` little-endian unless noted, all floats `f64`
//! little-endian, tensors row-major):
//!
//! ```text
//! magic   4 bytes  "TEAC"
//! version u16      1
//! kind    u8       0 dense | 1 tucker | 2 cp | 3 tt | 4 attn | 5 checkpoint
//! body    kind-specific, see the write_* functions
//! ```
//!
//! * dense: order, shape, data.
//! * tucker: order, shape, ranks, core data, then one `shape[m] × ranks[m]`
//!   loading matrix per mode.
//! * cp: order, shape, rank, weights, then one `shape[m] × rank` loading per
//!   mode.
//! * tt: order, shape, core count, each core's three extents, each core's
//!   data.
//! * attn: head count, a, b, d, per head the `w_q, w_k, w_v, w_o` tensors,
//!   then the head-weight vector.
//! * checkpoint: UTF-8 manifest (length-prefixed; echoes the run config),
//!   seed, training step, named-tensor count, then per tensor a
//!   length-prefixed name, order, shape, data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use tea_core::attention::{AttentionParams, HeadParams};
use tea_core::decomp::{CpFactors, TtFactors, TuckerFactors};
use tea_core::tensor::{DenseTensor, Matrix};

use crate::error::CliError;

pub const MAGIC: [u8; 4] = *b"TEAC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Dense = 0,
    Tucker = 1,
    Cp = 2,
    Tt = 3,
    Attn = 4,
    Checkpoint = 5,
}

impl Kind {
    fn from_u8(v: u8) -> Result<Self, CliError> {
        Ok(match v {
            0 => Kind::Dense,
            1 => Kind::Tucker,
            2 => Kind::Cp,
            3 => Kind::Tt,
            4 => Kind::Attn,
            5 => Kind::Checkpoint,
            other => return Err(CliError::parse(format!("unknown container kind {other}"))),
        })
    }
}

/// Everything a container can hold.
#[derive(Debug, Clone)]
pub enum Payload {
    Dense(DenseTensor),
    Tucker(TuckerFactors),
    Cp(CpFactors),
    Tt(TtFactors),
    Attn(AttentionParams),
    Checkpoint(Checkpoint),
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Dense(_) => Kind::Dense,
            Payload::Tucker(_) => Kind::Tucker,
            Payload::Cp(_) => Kind::Cp,
            Payload::Tt(_) => Kind::Tt,
            Payload::Attn(_) => Kind::Attn,
            Payload::Checkpoint(_) => Kind::Checkpoint,
        }
    }
}

/// A trained model: config echo, provenance, and the named parameter map.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// The run configuration, echoed verbatim in the config file syntax.
    pub manifest: String,
    pub seed: u64,
    pub step: u64,
    pub tensors: Vec<(String, DenseTensor)>,
}

struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    fn u64(&mut self, v: u64) -> Result<(), CliError> {
        self.w.write_all(&v.to_le_bytes()).map_err(CliError::from)
    }

    fn f64s(&mut self, vs: &[f64]) -> Result<(), CliError> {
        for v in vs {
            self.w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn bytes(&mut self, b: &[u8]) -> Result<(), CliError> {
        self.u64(b.len() as u64)?;
        self.w.write_all(b).map_err(CliError::from)
    }

    fn shape(&mut self, s: &[usize]) -> Result<(), CliError> {
        self.u64(s.len() as u64)?;
        for &d in s {
            self.u64(d as u64)?;
        }
        Ok(())
    }

    fn tensor(&mut self, t: &DenseTensor) -> Result<(), CliError> {
        self.shape(t.shape())?;
        self.f64s(t.data())
    }

    fn matrix(&mut self, m: &Matrix) -> Result<(), CliError> {
        self.u64(m.rows() as u64)?;
        self.u64(m.cols() as u64)?;
        self.f64s(m.data())
    }
}

struct Reader<R: Read> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn u64(&mut self) -> Result<u64, CliError> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn usize(&mut self) -> Result<usize, CliError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| CliError::parse("length field overflows usize"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CliError> {
        if n > (1 << 32) {
            return Err(CliError::parse("implausible tensor size in container"));
        }
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            self.r.read_exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }

    fn bytes(&mut self) -> Result<Vec<u8>, CliError> {
        let n = self.usize()?;
        if n > (1 << 28) {
            return Err(CliError::parse("implausible string length in container"));
        }
        let mut b = vec![0u8; n];
        self.r.read_exact(&mut b)?;
        Ok(b)
    }

    fn shape(&mut self) -> Result<Vec<usize>, CliError> {
        let order = self.usize()?;
        if order > 16 {
            return Err(CliError::parse("implausible tensor order in container"));
        }
        (0..order).map(|_| self.usize()).collect()
    }

    fn tensor(&mut self) -> Result<DenseTensor, CliError> {
        let shape = self.shape()?;
        let len: usize = shape.iter().product();
        let data = self.f64s(len)?;
        DenseTensor::new(shape, data).map_err(CliError::from)
    }

    fn matrix(&mut self) -> Result<Matrix, CliError> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let data = self.f64s(rows * cols)?;
        Matrix::new(rows, cols, data).map_err(CliError::from)
    }
}

pub fn write_payload<W: Write>(w: W, payload: &Payload) -> Result<(), CliError> {
    let mut out = Writer { w };
    out.w.write_all(&MAGIC)?;
    out.w.write_all(&VERSION.to_le_bytes())?;
    out.w.write_all(&[payload.kind() as u8])?;
    match payload {
        Payload::Dense(t) => out.tensor(t)?,
        Payload::Tucker(f) => {
            out.shape(&f.shape())?;
            out.shape(&f.ranks)?;
            out.f64s(f.core.data())?;
            for u in &f.loadings {
                out.matrix(u)?;
            }
        }
        Payload::Cp(f) => {
            out.shape(&f.shape())?;
            out.u64(f.rank() as u64)?;
            out.f64s(&f.weights)?;
            for u in &f.loadings {
                out.matrix(u)?;
            }
        }
        Payload::Tt(f) => {
            out.shape(&f.shape())?;
            out.u64(f.cores.len() as u64)?;
            for c in &f.cores {
                out.shape(c.shape())?;
            }
            for c in &f.cores {
                out.f64s(c.data())?;
            }
        }
        Payload::Attn(p) => {
            let (a, b, d) = {
                let s = p.heads[0].w_q.shape();
                (s[0], s[1], s[2])
            };
            out.u64(p.heads.len() as u64)?;
            out.u64(a as u64)?;
            out.u64(b as u64)?;
            out.u64(d as u64)?;
            for h in &p.heads {
                out.f64s(h.w_q.data())?;
                out.f64s(h.w_k.data())?;
                out.f64s(h.w_v.data())?;
                out.f64s(h.w_o.data())?;
            }
            out.f64s(&p.head_weights)?;
        }
        Payload::Checkpoint(c) => {
            out.bytes(c.manifest.as_bytes())?;
            out.u64(c.seed)?;
            out.u64(c.step)?;
            out.u64(c.tensors.len() as u64)?;
            for (name, t) in &c.tensors {
                out.bytes(name.as_bytes())?;
                out.tensor(t)?;
            }
        }
    }
    Ok(())
}

pub fn read_payload<R: Read>(r: R) -> Result<Payload, CliError> {
    let mut inp = Reader { r };
    let mut magic = [0u8; 4];
    inp.r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CliError::parse("not a tensor container (bad magic)"));
    }
    let mut ver = [0u8; 2];
    inp.r.read_exact(&mut ver)?;
    let version = u16::from_le_bytes(ver);
    if version != VERSION {
        return Err(CliError::parse(format!(
            "unsupported container version {version}"
        )));
    }
    let mut kind = [0u8; 1];
    inp.r.read_exact(&mut kind)?;
    Ok(match Kind::from_u8(kind[0])? {
        Kind::Dense => Payload::Dense(inp.tensor()?),
        Kind::Tucker => {
            let shape = inp.shape()?;
            let ranks = inp.shape()?;
            if ranks.len() != shape.len() {
                return Err(CliError::parse("tucker rank list does not match order"));
            }
            let core_len: usize = ranks.iter().product();
            let core = DenseTensor::new(ranks.clone(), inp.f64s(core_len)?)?;
            let loadings: Vec<Matrix> = (0..shape.len())
                .map(|_| inp.matrix())
                .collect::<Result<_, _>>()?;
            for (m, u) in loadings.iter().enumerate() {
                if u.rows() != shape[m] || u.cols() != ranks[m] {
                    return Err(CliError::parse("tucker loading shape mismatch"));
                }
            }
            Payload::Tucker(TuckerFactors {
                core,
                loadings,
                ranks,
            })
        }
        Kind::Cp => {
            let shape = inp.shape()?;
            let rank = inp.usize()?;
            let weights = inp.f64s(rank)?;
            let loadings: Vec<Matrix> = (0..shape.len())
                .map(|_| inp.matrix())
                .collect::<Result<_, _>>()?;
            for (m, u) in loadings.iter().enumerate() {
                if u.rows() != shape[m] || u.cols() != rank {
                    return Err(CliError::parse("cp loading shape mismatch"));
                }
            }
            Payload::Cp(CpFactors { weights, loadings })
        }
        Kind::Tt => {
            let shape = inp.shape()?;
            let ncores = inp.usize()?;
            if ncores > 32 {
                return Err(CliError::parse("implausible tt core count"));
            }
            let core_shapes: Vec<Vec<usize>> =
                (0..ncores).map(|_| inp.shape()).collect::<Result<_, _>>()?;
            let mut cores = Vec::with_capacity(ncores);
            for s in core_shapes {
                let len: usize = s.iter().product();
                cores.push(DenseTensor::new(s, inp.f64s(len)?)?);
            }
            let f = TtFactors { cores };
            if f.shape() != shape {
                return Err(CliError::parse("tt core chain does not match shape"));
            }
            Payload::Tt(f)
        }
        Kind::Attn => {
            let h = inp.usize()?;
            let a = inp.usize()?;
            let b = inp.usize()?;
            let d = inp.usize()?;
            if h == 0 || h > 1024 {
                return Err(CliError::parse("implausible head count"));
            }
            let mut heads = Vec::with_capacity(h);
            for _ in 0..h {
                heads.push(HeadParams {
                    w_q: DenseTensor::new(vec![a, b, d], inp.f64s(a * b * d)?)?,
                    w_k: DenseTensor::new(vec![a, b, d], inp.f64s(a * b * d)?)?,
                    w_v: DenseTensor::new(vec![a, b, d], inp.f64s(a * b * d)?)?,
                    w_o: DenseTensor::new(vec![d, a, b], inp.f64s(a * b * d)?)?,
                });
            }
            let head_weights = inp.f64s(h)?;
            Payload::Attn(AttentionParams {
                heads,
                head_weights,
            })
        }
        Kind::Checkpoint => {
            let manifest = String::from_utf8(inp.bytes()?)
                .map_err(|_| CliError::parse("checkpoint manifest is not UTF-8"))?;
            let seed = inp.u64()?;
            let step = inp.u64()?;
            let n = inp.usize()?;
            if n > 1 << 20 {
                return Err(CliError::parse("implausible checkpoint tensor count"));
            }
            let mut tensors = Vec::with_capacity(n);
            for _ in 0..n {
                let name = String::from_utf8(inp.bytes()?)
                    .map_err(|_| CliError::parse("tensor name is not UTF-8"))?;
                tensors.push((name, inp.tensor()?));
            }
            Payload::Checkpoint(Checkpoint {
                manifest,
                seed,
                step,
                tensors,
            })
        }
    })
}

pub fn save(path: &Path, payload: &Payload) -> Result<(), CliError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_payload(&mut w, payload)?;
    w.flush().map_err(CliError::from)
}

pub fn load(path: &Path) -> Result<Payload, CliError> {
    let file = File::open(path)?;
    read_payload(BufReader::new(file))
}

/// Stored-scalar count of a payload, used for compression-ratio reporting.
pub fn stored_scalars(payload: &Payload) -> usize {
    match payload {
        Payload::Dense(t) => t.len(),
        Payload::Tucker(f) => {
            f.core.len() + f.loadings.iter().map(|u| u.data().len()).sum::<usize>()
        }
        Payload::Cp(f) => {
            f.weights.len() + f.loadings.iter().map(|u| u.data().len()).sum::<usize>()
        }
        Payload::Tt(f) => f.cores.iter().map(|c| c.len()).sum(),
        Payload::Attn(p) => {
            p.head_weights.len()
                + p.heads
                    .iter()
                    .map(|h| h.w_q.len() + h.w_k.len() + h.w_v.len() + h.w_o.len())
                    .sum::<usize>()
        }
        Payload::Checkpoint(c) => c.tensors.iter().map(|(_, t)| t.len()).sum(),
    }
}
