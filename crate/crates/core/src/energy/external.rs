//! Client for external energy engines running as child processes.
//!
//! Protocol (line-oriented text over stdio): for each evaluation the client
//! writes a standard XYZ block (atom count, comment line, one
//! `SYMBOL x y z` line per atom in angstrom) followed by a line `END`;
//! the engine replies with a single line `ENERGY <value>` (Hartree) or
//! `ERROR <message>`. One request/response pair per evaluation.
//!
//! Results are cached keyed by the element sequence and positions rounded
//! to 1e-6 angstrom, since real engines take hundreds of milliseconds per
//! call.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use crate::chem::Canvas;

use super::{EnergyBackend, EnergyError};

#[derive(Debug, Clone)]
pub struct ExternalBackendConfig {
    /// Program to execute.
    pub command: String,
    /// Arguments passed to the program.
    pub args: Vec<String>,
    /// Per-request timeout.
    pub timeout: Duration,
}

impl ExternalBackendConfig {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalBackendConfig {
            command: command.into(),
            args: Vec::new(),
            timeout: Duration::from_secs(30),
        }
    }
}

struct ChildHandle {
    child: Child,
    stdin: std::process::ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl ChildHandle {
    fn spawn(config: &ExternalBackendConfig) -> Result<Self, EnergyError> {
        let mut child = Command::new(&config.command)
            .args(&config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| {
                EnergyError::BackendFailure(format!(
                    "failed to start {:?}: {e}",
                    config.command
                ))
            })?;
        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = child.stdout.take().expect("stdout was piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ChildHandle { child, stdin, lines: rx })
    }
}

impl Drop for ChildHandle {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

type CacheKey = (Vec<u8>, Vec<[i64; 3]>);

/// Energy backend delegating to a child process.
pub struct ExternalBackend {
    config: ExternalBackendConfig,
    // Requests are serialized per child process.
    child: Mutex<Option<ChildHandle>>,
    cache: RwLock<HashMap<CacheKey, f64>>,
}

impl ExternalBackend {
    pub fn new(config: ExternalBackendConfig) -> Self {
        ExternalBackend { config, child: Mutex::new(None), cache: RwLock::new(HashMap::new()) }
    }

    fn cache_key(canvas: &Canvas<f64>) -> CacheKey {
        let elements = canvas.elements().map(|e| e.atomic_number()).collect();
        let positions = canvas
            .positions()
            .map(|p| [round_key(p.x()), round_key(p.y()), round_key(p.z())])
            .collect();
        (elements, positions)
    }

    fn request(&self, canvas: &Canvas<f64>) -> Result<f64, EnergyError> {
        let mut guard = self.child.lock().expect("backend mutex poisoned");
        if guard.is_none() {
            *guard = Some(ChildHandle::spawn(&self.config)?);
        }
        let handle = guard.as_mut().unwrap();

        let mut request = format!("{}\n\n", canvas.len());
        for atom in canvas.atoms() {
            request.push_str(&format!(
                "{} {:.10} {:.10} {:.10}\n",
                atom.element.symbol(),
                atom.position.x(),
                atom.position.y(),
                atom.position.z()
            ));
        }
        request.push_str("END\n");

        let write_result = handle
            .stdin
            .write_all(request.as_bytes())
            .and_then(|_| handle.stdin.flush());
        if write_result.is_err() {
            let status = handle.child.wait().ok();
            *guard = None;
            return Err(EnergyError::BackendFailure(format!(
                "child process closed stdin (exit status {status:?})"
            )));
        }

        let reply = match handle.lines.recv_timeout(self.config.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => {
                *guard = None;
                return Err(EnergyError::BackendFailure(format!("read error: {e}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                // Kill the stuck child; a fresh one is spawned on the next call.
                *guard = None;
                return Err(EnergyError::BackendTimeout(self.config.timeout));
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = handle.child.wait().ok();
                *guard = None;
                return Err(EnergyError::BackendFailure(format!(
                    "child process exited (status {status:?})"
                )));
            }
        };

        parse_reply(&reply)
    }
}

fn round_key(v: f64) -> i64 {
    (v * 1e6).round() as i64
}

fn parse_reply(line: &str) -> Result<f64, EnergyError> {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix("ENERGY ") {
        rest.trim()
            .parse::<f64>()
            .map_err(|_| EnergyError::BackendProtocolError(format!("bad energy value {rest:?}")))
    } else if let Some(msg) = line.strip_prefix("ERROR") {
        Err(EnergyError::BackendFailure(msg.trim().to_string()))
    } else {
        Err(EnergyError::BackendProtocolError(format!("unexpected reply {line:?}")))
    }
}

impl EnergyBackend<f64> for ExternalBackend {
    fn evaluate(&self, canvas: &Canvas<f64>) -> Result<f64, EnergyError> {
        if canvas.is_empty() {
            return Ok(0.0);
        }
        let key = Self::cache_key(canvas);
        if let Some(&cached) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(cached);
        }
        let energy = self.request(canvas)?;
        self.cache.write().expect("cache lock").insert(key, energy);
        Ok(energy)
    }
}
