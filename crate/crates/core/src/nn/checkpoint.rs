//! Versioned text checkpoints for parameters and optimizer state.
//!
//! Values are written with Rust's shortest round-trip float formatting,
//! so save/load is bit-exact for f64.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::adam::Adam;
use super::params::ParamStore;

const MAGIC: &str = "molgen-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error at line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Parsed checkpoint contents. Parameter order is the registration order
/// of the store that was saved; optimizer moments follow the same order.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub params: Vec<(String, usize, usize, Vec<f64>)>,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Copy parameter values into a store built with the same
    /// architecture. Every checkpoint entry must match a parameter by
    /// name and shape.
    pub fn load_into(&self, store: &mut ParamStore<f64>) -> Result<(), CheckpointError> {
        for (name, rows, cols, data) in &self.params {
            let id = store.id_of(name).ok_or_else(|| CheckpointError::Format {
                line: 0,
                message: format!("parameter {name} not present in this model"),
            })?;
            let p = store.get(id);
            if (p.rows, p.cols) != (*rows, *cols) {
                return Err(CheckpointError::Format {
                    line: 0,
                    message: format!(
                        "shape mismatch for {name}: file {rows}x{cols}, model {}x{}",
                        p.rows, p.cols
                    ),
                });
            }
            store.value_mut(id).copy_from_slice(data);
        }
        Ok(())
    }
}

fn write_values(out: &mut String, data: &[f64]) {
    for (i, v) in data.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").unwrap();
    }
    out.push('\n');
}

pub fn save(
    path: &Path,
    store: &ParamStore<f64>,
    adam: Option<&Adam<f64>>,
    meta: &[(String, String)],
) -> Result<(), CheckpointError> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for (k, v) in meta {
        assert!(!k.contains(char::is_whitespace), "meta key must be one token");
        writeln!(out, "meta {k} {v}").unwrap();
    }
    for p in store.iter() {
        writeln!(out, "param {} {} {}", p.name, p.rows, p.cols).unwrap();
        write_values(&mut out, &p.value);
    }
    if let Some(adam) = adam {
        let (m, v, step) = adam.state();
        writeln!(out, "adam_step {step}").unwrap();
        for (buf, kind) in [(m, "adam_m"), (v, "adam_v")] {
            for (p, values) in store.iter().zip(buf) {
                writeln!(out, "{kind} {} {}", p.name, values.len()).unwrap();
                write_values(&mut out, values);
            }
        }
    }
    // Write then rename so a crash never leaves a truncated checkpoint.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let err = |line: usize, message: String| CheckpointError::Format { line: line + 1, message };

    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        other => {
            return Err(err(0, format!("bad header {:?}", other.map(|(_, l)| l))));
        }
    }

    let mut ckpt = Checkpoint::default();
    let mut adam_m: Vec<Vec<f64>> = Vec::new();
    let mut adam_v: Vec<Vec<f64>> = Vec::new();
    let mut adam_step: Option<u64> = None;

    while let Some((ln, line)) = lines.next() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap();
        match tag {
            "meta" => {
                let k = parts
                    .next()
                    .ok_or_else(|| err(ln, "meta needs a key".into()))?
                    .to_string();
                let v = parts.collect::<Vec<_>>().join(" ");
                ckpt.meta.push((k, v));
            }
            "param" | "adam_m" | "adam_v" => {
                let name = parts
                    .next()
                    .ok_or_else(|| err(ln, format!("{tag} needs a name")))?
                    .to_string();
                let nums: Vec<usize> = parts
                    .map(|t| t.parse().map_err(|_| err(ln, format!("bad integer {t:?}"))))
                    .collect::<Result<_, _>>()?;
                let count = match (tag, nums.as_slice()) {
                    ("param", [r, c]) => r * c,
                    ("adam_m" | "adam_v", [n]) => *n,
                    _ => return Err(err(ln, format!("bad {tag} header"))),
                };
                let (vln, vline) = lines
                    .next()
                    .ok_or_else(|| err(ln, "missing value line".into()))?;
                let data: Vec<f64> = vline
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| err(vln, format!("bad float {t:?}"))))
                    .collect::<Result<_, _>>()?;
                if data.len() != count {
                    return Err(err(vln, format!("expected {count} values, got {}", data.len())));
                }
                match tag {
                    "param" => ckpt.params.push((name, nums[0], nums[1], data)),
                    "adam_m" => adam_m.push(data),
                    _ => adam_v.push(data),
                }
            }
            "adam_step" => {
                let s = parts.next().ok_or_else(|| err(ln, "adam_step needs a value".into()))?;
                adam_step = Some(s.parse().map_err(|_| err(ln, format!("bad step {s:?}")))?);
            }
            other => return Err(err(ln, format!("unknown record {other:?}"))),
        }
    }

    if let Some(step) = adam_step {
        if adam_m.len() != ckpt.params.len() || adam_v.len() != ckpt.params.len() {
            return Err(err(0, "optimizer state does not cover all parameters".into()));
        }
        ckpt.adam = Some(AdamState { step, m: adam_m, v: adam_v });
    }
    Ok(ckpt)
}
