use std::path::Path;

use super::tensor::{with_path, Reader, TensorFile};
use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::nets::{Model, ModelConfig};
use crate::pipeline::{CheckpointSink, OptimizerState, TrainState};
use crate::voxelizer::GridSpec;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GXCK";
pub const CHECKPOINT_VERSION: u16 = 1;

fn arch_tensor(c: &ModelConfig) -> TensorFile {
    let v = vec![
        c.grid.x as f64,
        c.grid.y as f64,
        c.grid.z as f64,
        c.d_s as f64,
        c.d_o as f64,
        c.d_f as f64,
        c.d_star as f64,
        c.enc_hidden as f64,
        c.conv_hidden as f64,
        c.head_hidden as f64,
        c.offset_cap,
        c.prune_threshold,
    ];
    TensorFile::f64(vec![v.len()], v).expect("fixed length")
}

fn arch_from_tensor(t: &TensorFile) -> Result<ModelConfig> {
    t.expect_dims("arch", &[12])?;
    let v = &t.data;
    let int = |i: usize| -> Result<usize> {
        if v[i] >= 0.0 && v[i].fract() == 0.0 && v[i] <= u32::MAX as f64 {
            Ok(v[i] as usize)
        } else {
            Err(Error::format(
                "arch",
                format!("entry {i} is not a width: {}", v[i]),
            ))
        }
    };
    let grid = GridSpec::new(int(0)?, int(1)?, int(2)?)
        .map_err(|e| Error::format("arch", e.to_string()))?;
    let c = ModelConfig {
        grid,
        d_s: int(3)?,
        d_o: int(4)?,
        d_f: int(5)?,
        d_star: int(6)?,
        enc_hidden: int(7)?,
        conv_hidden: int(8)?,
        head_hidden: int(9)?,
        offset_cap: v[10],
        prune_threshold: v[11],
    };
    c.validate()
        .map_err(|e| Error::format("arch", e.to_string()))?;
    Ok(c)
}

/// Named double-precision sections: `arch`, `step`, `param/<name>`,
/// `adam_m/<name>`, `adam_v/<name>`.
pub fn checkpoint_to_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let named = state.model.named_params();
    if state.optimizer.m.len() != named.len() || state.optimizer.v.len() != named.len() {
        return Err(Error::invalid(
            "optimizer state does not mirror the parameters",
        ));
    }
    let mut sections: Vec<(String, TensorFile)> = vec![
        ("arch".into(), arch_tensor(&state.model.config)),
        (
            "step".into(),
            TensorFile::f64(
                vec![2],
                vec![
                    (state.optimizer.step >> 32) as f64,
                    (state.optimizer.step & 0xFFFF_FFFF) as f64,
                ],
            )?,
        ),
    ];
    for (i, (name, t)) in named.iter().enumerate() {
        sections.push((
            format!("param/{name}"),
            TensorFile::f64(t.shape.clone(), t.data.clone())?,
        ));
        sections.push((
            format!("adam_m/{name}"),
            TensorFile::f64(t.shape.clone(), state.optimizer.m[i].clone())?,
        ));
        sections.push((
            format!("adam_v/{name}"),
            TensorFile::f64(t.shape.clone(), state.optimizer.v[i].clone())?,
        ));
    }
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (name, t) in &sections {
        let body = t.to_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
    }
    Ok(out)
}

fn sections(bytes: &[u8]) -> Result<Vec<(String, TensorFile)>> {
    let mut r = Reader::new(bytes, "GXCK");
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format("GXCK magic", "not a GXCK checkpoint"));
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            "GXCK version",
            format!("unsupported version {version}"),
        ));
    }
    let count = r.u32("section count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u16("section name")? as usize;
        let name = String::from_utf8(r.take(len, "section name")?.to_vec())
            .map_err(|_| Error::format("GXCK section name", "not UTF-8"))?;
        let size = r.u64("section size")? as usize;
        let t = TensorFile::from_bytes(r.take(size, "section body")?)
            .map_err(|e| Error::format(format!("GXCK section {name}"), e.to_string()))?;
        out.push((name, t));
    }
    if r.remaining() != 0 {
        return Err(Error::format(
            "GXCK",
            format!("{} trailing bytes", r.remaining()),
        ));
    }
    Ok(out)
}

/// Restores a training state. With `expected`, the stored architecture must
/// match it exactly.
pub fn checkpoint_from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<TrainState> {
    let secs = sections(bytes)?;
    let find = |name: &str| -> Result<&TensorFile> {
        secs.iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::format(format!("GXCK section {name}"), "missing"))
    };
    let config = arch_from_tensor(find("arch")?)?;
    if let Some(want) = expected {
        if want != &config {
            return Err(Error::format(
                "arch",
                format!(
                    "expected {:?}, found {:?}",
                    arch_tensor(want).data,
                    arch_tensor(&config).data
                ),
            ));
        }
    }
    let step_t = find("step")?;
    step_t.expect_dims("step", &[2])?;
    let step = ((step_t.data[0] as u64) << 32) | step_t.data[1] as u64;

    let mut model = Model::new(config, 0)?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut m = Vec::with_capacity(names.len());
    let mut v = Vec::with_capacity(names.len());
    for (name, param) in names.iter().zip(model.params_mut()) {
        let p = find(&format!("param/{name}"))?;
        p.expect_dims(&format!("param/{name}"), &param.shape)?;
        param.data.clone_from(&p.data);
        for (prefix, dst) in [("adam_m", &mut m), ("adam_v", &mut v)] {
            let t = find(&format!("{prefix}/{name}"))?;
            t.expect_dims(&format!("{prefix}/{name}"), &param.shape)?;
            dst.push(t.data.clone());
        }
    }
    let expected_sections = 2 + 3 * names.len();
    if secs.len() != expected_sections {
        return Err(Error::format(
            "GXCK section count",
            format!("expected {expected_sections}, found {}", secs.len()),
        ));
    }
    Ok(TrainState {
        model,
        optimizer: OptimizerState { step, m, v },
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint_to_bytes(state)?)
}

pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<TrainState> {
    checkpoint_from_bytes(&read_bytes(path)?, expected).map_err(|e| with_path(e, path))
}

/// Writes `checkpoint_<epoch>.gxck` files into a directory.
pub struct DirCheckpoints {
    pub dir: std::path::PathBuf,
    pub written: Vec<std::path::PathBuf>,
}

impl DirCheckpoints {
    pub fn new(dir: impl Into<std::path::PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            written: Vec::new(),
        }
    }
}

impl CheckpointSink for DirCheckpoints {
    fn save(&mut self, epoch: usize, state: &TrainState) -> Result<()> {
        let path = self.dir.join(format!("checkpoint_{epoch:06}.gxck"));
        save_checkpoint(state, &path)?;
        self.written.push(path);
        Ok(())
    }
}
