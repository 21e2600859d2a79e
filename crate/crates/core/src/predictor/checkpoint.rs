//! Predictor checkpoints.
//!
//! Layout, all little-endian:
//!
//! | field                | encoding                                          |
//! |----------------------|---------------------------------------------------|
//! | magic                | `MODP`                                            |
//! | version              | u16, currently 1                                  |
//! | config field count   | u32, currently 8                                  |
//! | config fields        | u32 each: input_dim, model_dim, layer_count,      |
//! |                      | head_count, ffn_dim, max_frames, seed_lo, seed_hi |
//! | tensor count         | u32                                               |
//! | per tensor           | u32 name length, UTF-8 name, u32 rank,            |
//! |                      | u32 per dimension, u64 absolute byte offset       |
//! | tensor data          | f32, row-major, in directory order                |
//!
//! Encoder exports hold the parameter tensors only. Training snapshots add
//! optimizer moments (`optimizer.m.<name>`, `optimizer.v.<name>`) and scalar
//! state whose 64-bit values are stored bit-exact as two f32 bit patterns
//! (`optimizer.step`, `schedule.peak`, `schedule.warmup_steps`).

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::predictor::{init_params, Adam, LearningRateSchedule, Params, PredictorConfig, PredictorParams, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MODP";
pub const CHECKPOINT_VERSION: u16 = 1;
const CONFIG_FIELDS: u32 = 8;

const STEP: &str = "optimizer.step";
const PEAK: &str = "schedule.peak";
const WARMUP: &str = "schedule.warmup_steps";

/// Decoded checkpoint: configuration plus named tensors in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: PredictorConfig,
    pub tensors: Vec<(String, ArrayD<f32>)>,
}

fn u64_tensor(value: u64) -> ArrayD<f32> {
    let lo = f32::from_bits(value as u32);
    let hi = f32::from_bits((value >> 32) as u32);
    ArrayD::from_shape_vec(IxDyn(&[2]), vec![lo, hi]).expect("two elements")
}

fn tensor_u64(t: &ArrayD<f32>) -> Option<u64> {
    let v: Vec<u32> = t.iter().map(|x| x.to_bits()).collect();
    (t.shape() == [2]).then(|| v[0] as u64 | ((v[1] as u64) << 32))
}

fn u32_field(name: &str, value: usize) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::Contract(format!("{name} {value} does not fit in 32 bits")))
}

impl Checkpoint {
    pub fn from_params(params: &PredictorParams) -> Self {
        Self {
            config: params.config.clone(),
            tensors: params
                .tensors()
                .into_iter()
                .map(|(n, t)| (n, t.to_owned()))
                .collect(),
        }
    }

    pub fn from_train_state(state: &TrainState) -> Self {
        let mut ckpt = Self::from_params(&state.params);
        for (prefix, moments) in [("optimizer.m.", &state.optimizer.first), ("optimizer.v.", &state.optimizer.second)] {
            for (name, t) in moments.trainable() {
                ckpt.tensors.push((format!("{prefix}{name}"), t.to_owned()));
            }
        }
        ckpt.tensors.push((STEP.into(), u64_tensor(state.optimizer.step)));
        ckpt.tensors.push((PEAK.into(), u64_tensor(state.schedule.peak.to_bits())));
        ckpt.tensors.push((WARMUP.into(), u64_tensor(state.schedule.warmup_steps)));
        ckpt
    }

    pub fn tensor(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&CONFIG_FIELDS.to_le_bytes());
        let fields = [
            u32_field("input_dim", c.input_dim)?,
            u32_field("model_dim", c.model_dim)?,
            u32_field("layer_count", c.layer_count)?,
            u32_field("head_count", c.head_count)?,
            u32_field("ffn_dim", c.ffn_dim)?,
            u32_field("max_frames", c.max_frames)?,
            c.seed as u32,
            (c.seed >> 32) as u32,
        ];
        for f in fields {
            out.extend_from_slice(&f.to_le_bytes());
        }
        out.extend_from_slice(&u32_field("tensor count", self.tensors.len())?.to_le_bytes());

        let directory_len: usize = self
            .tensors
            .iter()
            .map(|(name, t)| 4 + name.len() + 4 + 4 * t.ndim() + 8)
            .sum();
        let mut offset = (out.len() + directory_len) as u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&u32_field("tensor name length", name.len())?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&u32_field("tensor rank", t.ndim())?.to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&u32_field("tensor dimension", d)?.to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.len() as u64;
        }
        for (_, t) in &self.tensors {
            for v in t.iter() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint image; `origin` only labels errors.
    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.bad("missing MODP magic"));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.bad(&format!("unsupported version {version}")));
        }
        let field_count = r.u32()?;
        if field_count < CONFIG_FIELDS {
            return Err(r.bad(&format!("config block has {field_count} fields, need {CONFIG_FIELDS}")));
        }
        let fields: Vec<u32> = (0..field_count).map(|_| r.u32()).collect::<Result<_>>()?;
        let config = PredictorConfig {
            input_dim: fields[0] as usize,
            model_dim: fields[1] as usize,
            layer_count: fields[2] as usize,
            head_count: fields[3] as usize,
            ffn_dim: fields[4] as usize,
            max_frames: fields[5] as usize,
            seed: fields[6] as u64 | ((fields[7] as u64) << 32),
        };
        let count = r.u32()? as usize;
        let mut directory = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.bad("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let offset = r.u64()?;
            directory.push((name, shape, offset));
        }
        let mut expected_offset = r.pos as u64;
        let mut tensors = Vec::with_capacity(directory.len());
        for (name, shape, offset) in directory {
            if offset != expected_offset {
                return Err(r.bad(&format!("tensor `{name}` has offset {offset}, expected {expected_offset}")));
            }
            let len: usize = shape.iter().product();
            let start = offset as usize;
            let end = start
                .checked_add(4 * len)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| r.bad(&format!("tensor `{name}` runs past the end of the file")))?;
            let data: Vec<f32> = bytes[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            let t = ArrayD::from_shape_vec(IxDyn(&shape), data).expect("length matches shape");
            tensors.push((name, t));
            expected_offset = end as u64;
        }
        if expected_offset as usize != bytes.len() {
            return Err(r.bad(&format!("{} trailing bytes", bytes.len() - expected_offset as usize)));
        }
        Ok(Self { config, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::decode(&bytes, path)
    }

    /// Builds parameters for `config`, checking every tensor's shape.
    fn params_for(&self, config: &PredictorConfig, origin: &Path) -> Result<PredictorParams> {
        let mut params = init_params::<f32>(config)?;
        for (name, shape) in Params::<f32>::expected_shapes(config) {
            let found = self
                .tensor(&name)
                .ok_or_else(|| Error::format(origin, format!("missing tensor `{name}`")))?;
            if found.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    tensor: name,
                    expected: shape,
                    found: found.shape().to_vec(),
                });
            }
        }
        for (name, mut dst) in params.tensors_mut() {
            dst.assign(self.tensor(&name).expect("checked above"));
        }
        if !params.is_finite() {
            return Err(Error::Numerical(format!("non-finite weights in {}", origin.display())));
        }
        Ok(params)
    }

    fn moments(&self, params: &PredictorParams, prefix: &str, origin: &Path) -> Result<Params<f32>> {
        let mut out = params.zeros_like();
        for (name, mut dst) in out.trainable_mut() {
            let key = format!("{prefix}{name}");
            let src = self
                .tensor(&key)
                .ok_or_else(|| Error::format(origin, format!("missing tensor `{key}`")))?;
            if src.shape() != dst.shape() {
                return Err(Error::ShapeMismatch {
                    tensor: key,
                    expected: dst.shape().to_vec(),
                    found: src.shape().to_vec(),
                });
            }
            dst.assign(src);
        }
        Ok(out)
    }

    fn scalar(&self, name: &str, origin: &Path) -> Result<u64> {
        self.tensor(name)
            .and_then(tensor_u64)
            .ok_or_else(|| Error::format(origin, format!("missing or malformed `{name}`")))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: &str) -> Error {
        Error::format(self.origin, reason)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| self.bad(&format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
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
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::read(path)
}

/// Loads parameters from an encoder export or a training snapshot. With
/// `expected` set, tensors are checked against that configuration and a
/// mismatch names the first offending tensor.
pub fn load_params(path: &Path, expected: Option<&PredictorConfig>) -> Result<PredictorParams> {
    let ckpt = Checkpoint::read(path)?;
    let config = expected.unwrap_or(&ckpt.config).clone();
    ckpt.params_for(&config, path)
}

/// Writes the parameters only, in the documented format.
pub fn export_encoder(state: &TrainState, path: &Path) -> Result<()> {
    Checkpoint::from_params(&state.params).write(path)
}

/// Writes parameters plus optimizer and schedule state so training can resume.
pub fn save_train_state(state: &TrainState, path: &Path) -> Result<()> {
    Checkpoint::from_train_state(state).write(path)
}

/// Reads a snapshot written by [`save_train_state`]. An encoder export loads
/// with fresh optimizer state.
pub fn load_train_state(path: &Path) -> Result<TrainState> {
    let ckpt = Checkpoint::read(path)?;
    let params = ckpt.params_for(&ckpt.config, path)?;
    if ckpt.tensor(STEP).is_none() {
        let optimizer = Adam::new(&params);
        return Ok(TrainState {
            params,
            optimizer,
            schedule: LearningRateSchedule {
                peak: 0.0,
                warmup_steps: 0,
            },
        });
    }
    let mut optimizer = Adam::new(&params);
    optimizer.first = ckpt.moments(&params, "optimizer.m.", path)?;
    optimizer.second = ckpt.moments(&params, "optimizer.v.", path)?;
    optimizer.step = ckpt.scalar(STEP, path)?;
    let schedule = LearningRateSchedule {
        peak: f64::from_bits(ckpt.scalar(PEAK, path)?),
        warmup_steps: ckpt.scalar(WARMUP, path)?,
    };
    Ok(TrainState {
        params,
        optimizer,
        schedule,
    })
}
