//! Binary checkpoints with exact state.
//!
//! Layout, all integers and floats little endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TCRF"
//! 4       4     format version, u32 (currently 1)
//! 8       4     task id, u32
//! 12      4     transverse dimension n, u32
//! 16      4     grid points per axis N, u32
//! 20      8     completed steps, u64
//! 28      8     flow time t, f64
//! 36      4     payload length in bytes, u32
//! 40      ...   payload: f64 array
//! 40+L    4     CRC32 (IEEE) of the payload bytes
//! ```
//!
//! Payload order for flow tasks: the compact potential spectrum as (re, im)
//! pairs over the kept modes, then the potential over the grid (row major),
//! then the metric as n diagonal arrays followed by the strict upper
//! triangle in (row, column) order, each entry as a real array then an
//! imaginary array. The spectrum is the integrator's exact state; the field
//! and metric are its deterministic images, stored so a checkpoint is
//! readable without replaying transforms.

use num_complex::Complex64;
use tcrf::flow::FlowState;
use tcrf::matrix::{off_index, HermMatField};
use tcrf::model::TransverseModel;
use tcrf::{Error, Result};

pub const MAGIC: [u8; 4] = *b"TCRF";
pub const VERSION: u32 = 1;

/// Fixed bytes before the payload.
const HEADER_LEN: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskId {
    Flow,
    NormalizedFlow,
    MaxTime,
    Gauduchon,
    Symbol,
    IbpCheck,
}

impl TaskId {
    pub fn code(self) -> u32 {
        match self {
            TaskId::Flow => 0,
            TaskId::NormalizedFlow => 1,
            TaskId::MaxTime => 2,
            TaskId::Gauduchon => 3,
            TaskId::Symbol => 4,
            TaskId::IbpCheck => 5,
        }
    }

    pub fn from_code(code: u32) -> Option<TaskId> {
        match code {
            0 => Some(TaskId::Flow),
            1 => Some(TaskId::NormalizedFlow),
            2 => Some(TaskId::MaxTime),
            3 => Some(TaskId::Gauduchon),
            4 => Some(TaskId::Symbol),
            5 => Some(TaskId::IbpCheck),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Flow => "flow",
            TaskId::NormalizedFlow => "normalized_flow",
            TaskId::MaxTime => "t0",
            TaskId::Gauduchon => "gauduchon",
            TaskId::Symbol => "symbol",
            TaskId::IbpCheck => "ibp_check",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub task: TaskId,
    pub n: u32,
    pub len: u32,
    pub steps: u64,
    pub t: f64,
    pub payload: Vec<f64>,
}

fn fail(detail: impl Into<String>) -> Error {
    Error::Checkpoint { detail: detail.into() }
}

impl Checkpoint {
    /// Snapshot of a flow state; `steps` is the completed step count the
    /// state was reached at.
    pub fn from_flow_state(
        task: TaskId,
        model: &TransverseModel,
        t: f64,
        steps: usize,
        phi_spec: &[Complex64],
        phi: &[f64],
        metric: &HermMatField,
    ) -> Checkpoint {
        let total = model.grid().total();
        let n = model.n;
        let mut payload =
            Vec::with_capacity(2 * phi_spec.len() + total * (1 + n + n * (n - 1)));
        for c in phi_spec {
            payload.push(c.re);
            payload.push(c.im);
        }
        payload.extend_from_slice(phi);
        for j in 0..n {
            payload.extend_from_slice(&metric.diag[j]);
        }
        for j in 0..n {
            for k in j + 1..n {
                let off = &metric.off[off_index(n, j, k)];
                payload.extend(off.iter().map(|z| z.re));
                payload.extend(off.iter().map(|z| z.im));
            }
        }
        Checkpoint {
            task,
            n: n as u32,
            len: model.grid().len as u32,
            steps: steps as u64,
            t,
            payload,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() * 8 + 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.task.code().to_le_bytes());
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&self.len.to_le_bytes());
        out.extend_from_slice(&self.steps.to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&((self.payload.len() * 8) as u32).to_le_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[HEADER_LEN..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Strict decode: magic, version, task id, declared payload length, and
    /// checksum must all hold.
    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(fail(format!("file too short: {} bytes", bytes.len())));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if bytes[0..4] != MAGIC {
            return Err(fail("bad magic bytes"));
        }
        let version = word(4);
        if version != VERSION {
            return Err(fail(format!("unsupported format version {version}")));
        }
        let task = TaskId::from_code(word(8))
            .ok_or_else(|| fail(format!("unknown task id {}", word(8))))?;
        let n = word(12);
        let len = word(16);
        let steps = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let t = f64::from_le_bytes(bytes[28..36].try_into().unwrap());
        let payload_len = word(36) as usize;
        if payload_len % 8 != 0 {
            return Err(fail(format!("payload length {payload_len} not a multiple of 8")));
        }
        if bytes.len() != HEADER_LEN + payload_len + 4 {
            return Err(fail(format!(
                "declared payload {payload_len} bytes, file holds {}",
                bytes.len() - HEADER_LEN - 4
            )));
        }
        let body = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
        let stored = u32::from_le_bytes(bytes[HEADER_LEN + payload_len..].try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(fail(format!("checksum mismatch: stored {stored:08x}, computed {computed:08x}")));
        }
        let payload = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Checkpoint { task, n, len, steps, t, payload })
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Checkpoint> {
        Checkpoint::decode(&std::fs::read(path)?)
    }

    /// Check the header against a model and task, then split the payload
    /// back into spectrum, potential, and metric.
    pub fn flow_parts(
        &self,
        model: &TransverseModel,
        task: TaskId,
    ) -> Result<(Vec<Complex64>, Vec<f64>, HermMatField)> {
        if self.task != task {
            return Err(fail(format!(
                "checkpoint was written by task {}, scenario runs {}",
                self.task.name(),
                task.name()
            )));
        }
        let grid = model.grid();
        if self.n as usize != model.n || self.len as usize != grid.len {
            return Err(fail(format!(
                "checkpoint shape n = {}, N = {} does not match model n = {}, N = {}",
                self.n, self.len, model.n, grid.len
            )));
        }
        let kept = model.ops.kept_count();
        let total = grid.total();
        let n = model.n;
        let expect = 2 * kept + total * (1 + n + n * (n - 1));
        if self.payload.len() != expect {
            return Err(fail(format!(
                "payload holds {} values, model needs {expect}",
                self.payload.len()
            )));
        }
        let spec: Vec<Complex64> = self.payload[..2 * kept]
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        let mut at = 2 * kept;
        let phi = self.payload[at..at + total].to_vec();
        at += total;
        let mut metric = HermMatField::zeros(n, total);
        for j in 0..n {
            metric.diag[j].copy_from_slice(&self.payload[at..at + total]);
            at += total;
        }
        for j in 0..n {
            for k in j + 1..n {
                let off = &mut metric.off[off_index(n, j, k)];
                for (z, re) in off.iter_mut().zip(&self.payload[at..at + total]) {
                    z.re = *re;
                }
                at += total;
                for (z, im) in off.iter_mut().zip(&self.payload[at..at + total]) {
                    z.im = *im;
                }
                at += total;
            }
        }
        Ok((spec, phi, metric))
    }

    /// The stored metric alone, for scenarios that start from a saved state.
    pub fn metric(&self, model: &TransverseModel) -> Result<HermMatField> {
        let (_, _, metric) = self.flow_parts(model, self.task)?;
        Ok(metric)
    }
}

/// Convenience wrapper taking the state struct.
pub fn from_state(task: TaskId, model: &TransverseModel, state: &FlowState, steps: usize) -> Checkpoint {
    Checkpoint::from_flow_state(
        task,
        model,
        state.t,
        steps,
        &state.phi_spec,
        &state.phi,
        &state.metric,
    )
}
