//! File formats: XYZ structures, flat config files, metrics CSV, and the
//! baseline results file. Everything written here is readable back by the
//! same functions (round-trip contract).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::chem::Element;
use crate::{Canvas, Real};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { line, message: message.into() }
}

/// Render a canvas as standard XYZ text. Coordinates are written with ten
/// decimal places, so a round trip preserves positions to 1e-9 A.
pub fn to_xyz_string(canvas: &Canvas, comment: &str) -> String {
    debug_assert!(!comment.contains('\n'));
    let mut out = String::new();
    writeln!(out, "{}", canvas.len()).unwrap();
    writeln!(out, "{comment}").unwrap();
    for a in canvas.atoms() {
        writeln!(
            out,
            "{} {:.10} {:.10} {:.10}",
            a.element.symbol(),
            a.position.x(),
            a.position.y(),
            a.position.z()
        )
        .unwrap();
    }
    out
}

/// Parse one XYZ block: count line, comment line, then one atom per line.
/// Returns the canvas and the comment.
pub fn from_xyz_string(text: &str) -> Result<(Canvas, String), IoError> {
    let mut lines = text.lines();
    let count_line = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let count: usize = count_line
        .trim()
        .parse()
        .map_err(|_| parse_err(1, format!("bad atom count {:?}", count_line.trim())))?;
    let comment = lines.next().ok_or_else(|| parse_err(2, "missing comment line"))?.to_string();
    let mut canvas = Canvas::empty();
    for i in 0..count {
        let ln = i + 3;
        let line = lines
            .next()
            .ok_or_else(|| parse_err(ln, format!("expected {count} atoms, found {i}")))?;
        let mut parts = line.split_whitespace();
        let symbol = parts.next().ok_or_else(|| parse_err(ln, "missing element symbol"))?;
        let element = Element::from_symbol(symbol)
            .map_err(|e| parse_err(ln, e.to_string()))?;
        let mut coords = [0.0; 3];
        for c in coords.iter_mut() {
            let tok = parts.next().ok_or_else(|| parse_err(ln, "expected three coordinates"))?;
            *c = tok
                .parse()
                .map_err(|_| parse_err(ln, format!("bad coordinate {tok:?}")))?;
        }
        if parts.next().is_some() {
            return Err(parse_err(ln, "trailing fields after coordinates"));
        }
        canvas.push(element, crate::Vec3::new(coords[0], coords[1], coords[2]));
    }
    Ok((canvas, comment))
}

pub fn write_xyz(canvas: &Canvas, comment: &str, path: &Path) -> Result<(), IoError> {
    std::fs::write(path, to_xyz_string(canvas, comment))?;
    Ok(())
}

pub fn read_xyz(path: &Path) -> Result<(Canvas, String), IoError> {
    from_xyz_string(&std::fs::read_to_string(path)?)
}

/// Append one frame to a multi-frame XYZ trajectory string.
pub fn append_xyz_frame(out: &mut String, canvas: &Canvas, comment: &str) {
    out.push_str(&to_xyz_string(canvas, comment));
}

/// Flat sectioned key-value configuration:
///
/// ```text
/// [section]
/// key = value   # comment
/// ```
///
/// Keys before any section header land in the "" section.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let mut config = Config::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = match raw.split_once('#') {
                Some((before, _)) => before.trim(),
                None => raw.trim(),
            };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(ln, "unterminated section header"))?;
                section = name.trim().to_string();
                config.sections.entry(section.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(ln, format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(parse_err(ln, "empty key"));
            }
            config
                .sections
                .entry(section.clone())
                .or_default()
                .insert(key.to_string(), value.trim().to_string());
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|s| s.as_str())
    }

    /// Typed lookup; the Err carries a readable location for CLI messages.
    pub fn get_parsed<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
    ) -> Result<Option<T>, String> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| format!("[{section}] {key}: cannot parse {raw:?}")),
        }
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, entries) in &self.sections {
            if !name.is_empty() {
                writeln!(out, "[{name}]").unwrap();
            }
            for (k, v) in entries {
                writeln!(out, "{k} = {v}").unwrap();
            }
        }
        out
    }
}

/// One parsed metrics row (see `ppo::METRICS_HEADER`).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub seed: u64,
    pub bag: String,
    pub eval_return: Real,
    pub policy_loss: Real,
    pub value_loss: Real,
    pub entropy: Real,
    pub clip_fraction: Real,
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == crate::ppo::METRICS_HEADER => {}
        other => {
            return Err(parse_err(1, format!("bad metrics header {:?}", other.map(|(_, l)| l))));
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(parse_err(ln, format!("expected 8 fields, got {}", fields.len())));
        }
        let num = |f: &str| -> Result<Real, IoError> {
            f.parse().map_err(|_| parse_err(ln, format!("bad number {f:?}")))
        };
        rows.push(MetricsRow {
            step: fields[0]
                .parse()
                .map_err(|_| parse_err(ln, format!("bad step {:?}", fields[0])))?,
            seed: fields[1]
                .parse()
                .map_err(|_| parse_err(ln, format!("bad seed {:?}", fields[1])))?,
            bag: fields[2].to_string(),
            eval_return: num(fields[3])?,
            policy_loss: num(fields[4])?,
            value_loss: num(fields[5])?,
            entropy: num(fields[6])?,
            clip_fraction: num(fields[7])?,
        });
    }
    Ok(rows)
}

/// Aggregate metrics rows across seeds: per (step, bag), the mean return
/// and a 2-sigma band. Output is a tidy CSV for external plotting.
pub fn summarize_metrics(rows: &[MetricsRow]) -> String {
    let mut groups: BTreeMap<(usize, &str), Vec<Real>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.step, r.bag.as_str())).or_default().push(r.eval_return);
    }
    let mut out = String::from("step,bag,mean_return,two_sigma,n\n");
    for ((step, bag), values) in groups {
        let n = values.len() as Real;
        let mean = values.iter().sum::<Real>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<Real>() / n;
        let two_sigma = 2.0 * var.sqrt();
        writeln!(out, "{step},{bag},{mean},{two_sigma},{}", values.len()).unwrap();
    }
    out
}

/// One row of the baseline results file.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub bag: String,
    pub optimal_return: Real,
    pub xyz_path: String,
    pub restarts: usize,
    pub seed: u64,
}

pub const BASELINE_HEADER: &str = "bag,optimal_return,xyz_path,restarts,seed";

pub fn write_baseline_file(rows: &[BaselineRow], path: &Path) -> Result<(), IoError> {
    let mut out = String::from(BASELINE_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.bag, r.optimal_return, r.xyz_path, r.restarts, r.seed)
            .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_baseline_file(path: &Path) -> Result<Vec<BaselineRow>, IoError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == BASELINE_HEADER => {}
        other => {
            return Err(parse_err(1, format!("bad baseline header {:?}", other.map(|(_, l)| l))));
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(ln, format!("expected 5 fields, got {}", fields.len())));
        }
        rows.push(BaselineRow {
            bag: fields[0].to_string(),
            optimal_return: fields[1]
                .parse()
                .map_err(|_| parse_err(ln, format!("bad return {:?}", fields[1])))?,
            xyz_path: fields[2].to_string(),
            restarts: fields[3]
                .parse()
                .map_err(|_| parse_err(ln, format!("bad restarts {:?}", fields[3])))?,
            seed: fields[4]
                .parse()
                .map_err(|_| parse_err(ln, format!("bad seed {:?}", fields[4])))?,
        });
    }
    Ok(rows)
}
