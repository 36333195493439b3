//! Checkpoints: a UTF-8 manifest plus a little-endian `f64` blob.
//!
//! Manifest layout, one `key: value` per line:
//!
//! ```text
//! format: calattn-checkpoint-1
//! epoch: 60
//! values: 212491
//! norm_mean: 0.1307
//! norm_std: 0.3081
//! tensor: patch.w 64x49 0
//! ...
//! config:
//! <the run config as TOML, to end of file>
//! ```
//!
//! Each `tensor` line gives name, shape and offset (in values) into the blob.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::tensor::Tensor;
use crate::vit::ViTParams;

pub const FORMAT: &str = "calattn-checkpoint-1";

/// Per-channel normalization applied to inputs before the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub epoch: usize,
    pub norm: Normalization,
    pub params: ViTParams,
}

/// `<base>.manifest` and `<base>.blob`.
pub fn paths(base: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = base.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".manifest"), with(".blob"))
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn mismatch(msg: impl Into<String>) -> Error {
    Error::ManifestMismatch(msg.into())
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| mismatch(format!("bad number '{v}'"))))
        .collect()
}

impl Checkpoint {
    pub fn manifest(&self) -> String {
        let mut lines = vec![
            format!("format: {FORMAT}"),
            format!("epoch: {}", self.epoch),
            format!("values: {}", self.params.param_count()),
            format!("norm_mean: {}", join(&self.norm.mean)),
            format!("norm_std: {}", join(&self.norm.std)),
        ];
        let mut offset = 0;
        self.params.visit(|name, t| {
            let shape = t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join("x");
            lines.push(format!("tensor: {name} {shape} {offset}"));
            offset += t.len();
        });
        lines.push("config:".into());
        let mut out = lines.join("\n");
        out.push('\n');
        out.push_str(&self.config.to_toml());
        out
    }

    pub fn blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * self.params.param_count());
        self.params.visit(|_, t| {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        });
        out
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let (m, b) = paths(base);
        if let Some(dir) = m.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&m, self.manifest()).map_err(|e| Error::io(&m, e))?;
        fs::write(&b, self.blob()).map_err(|e| Error::io(&b, e))
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (m, b) = paths(base);
        let manifest = fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
        let blob = fs::read(&b).map_err(|e| Error::io(&b, e))?;
        Self::from_parts(&manifest, &blob)
    }

    pub fn from_parts(manifest: &str, blob: &[u8]) -> Result<Self> {
        let (head, config_text) = manifest
            .split_once("\nconfig:\n")
            .ok_or_else(|| mismatch("missing config section"))?;
        let config = RunConfig::from_toml_str(config_text)?;
        config.validate()?;

        let mut epoch = None;
        let mut values = None;
        let mut mean = None;
        let mut std = None;
        let mut tensors = Vec::new();
        for line in head.lines() {
            let (key, val) = line
                .split_once(": ")
                .ok_or_else(|| mismatch(format!("malformed line '{line}'")))?;
            match key {
                "format" if val == FORMAT => {}
                "format" => return Err(mismatch(format!("unknown format '{val}'"))),
                "epoch" => epoch = val.parse::<usize>().ok(),
                "values" => values = val.parse::<usize>().ok(),
                "norm_mean" => mean = Some(parse_floats(val)?),
                "norm_std" => std = Some(parse_floats(val)?),
                "tensor" => tensors.push(parse_tensor_line(val)?),
                _ => return Err(mismatch(format!("unknown key '{key}'"))),
            }
        }
        let epoch = epoch.ok_or_else(|| mismatch("missing epoch"))?;
        let values = values.ok_or_else(|| mismatch("missing values"))?;
        let norm = Normalization {
            mean: mean.ok_or_else(|| mismatch("missing norm_mean"))?,
            std: std.ok_or_else(|| mismatch("missing norm_std"))?,
        };

        let expected = config.model.param_shapes();
        let mut offset = 0;
        if tensors.len() != expected.len() {
            return Err(mismatch(format!(
                "{} tensors listed, config implies {}",
                tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape, off), (ename, eshape)) in tensors.iter().zip(&expected) {
            if name != ename || shape != eshape || *off != offset {
                return Err(mismatch(format!(
                    "tensor {name} {shape:?} @{off}, expected {ename} {eshape:?} @{offset}"
                )));
            }
            offset += shape.iter().product::<usize>();
        }
        if offset != values {
            return Err(mismatch(format!("values {values}, shapes sum to {offset}")));
        }
        if blob.len() != 8 * values {
            return Err(Error::BlobSizeMismatch {
                expected: values,
                found: blob.len() / 8,
            });
        }
        let mut floats = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));

        let mut params = ViTParams::init(&config.model, &mut ChaCha8Rng::seed_from_u64(0))?;
        params.visit_mut(|_, t| {
            let data: Vec<f64> = floats.by_ref().take(t.len()).collect();
            *t = Tensor::new(t.shape().to_vec(), data).expect("length checked above");
        });
        Ok(Self {
            config,
            epoch,
            norm,
            params,
        })
    }
}

fn parse_tensor_line(val: &str) -> Result<(String, Vec<usize>, usize)> {
    let parts: Vec<&str> = val.split_whitespace().collect();
    let [name, shape, offset] = parts[..] else {
        return Err(mismatch(format!("malformed tensor line '{val}'")));
    };
    let shape = shape
        .split('x')
        .map(|s| s.parse::<usize>().map_err(|_| mismatch(format!("bad shape '{shape}'"))))
        .collect::<Result<Vec<_>>>()?;
    let offset = offset
        .parse::<usize>()
        .map_err(|_| mismatch(format!("bad offset '{offset}'")))?;
    Ok((name.to_string(), shape, offset))
}
