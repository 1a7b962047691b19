//! Run manifests: written before a command does any work, and sufficient to
//! re-run it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use iter_core::RunConfig;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub command: String,
    /// Command arguments other than the config (paths, item lists).
    pub args: BTreeMap<String, String>,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub config: BTreeMap<String, String>,
    /// Outputs planned before the run, relative to the run directory.
    pub outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).with_context(|| format!("cannot resolve {}", path.display()))
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            args: BTreeMap::new(),
            inputs: BTreeMap::new(),
            config: config.as_map(),
            outputs: Vec::new(),
        }
    }

    pub fn arg(&mut self, key: &str, value: impl Into<String>) -> &mut Self {
        self.args.insert(key.to_string(), value.into());
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(self)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        for (k, v) in &self.config {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Fails if any recorded input no longer hashes to its recorded value.
    pub fn verify_inputs(&self) -> Result<()> {
        for (path, want) in &self.inputs {
            let got = sha256_file(Path::new(path))?;
            if &got != want {
                bail!("input {path} changed since the manifest was written (sha256 {got}, expected {want})");
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("command = {}\n", self.command);
        for (k, v) in &self.args {
            s.push_str(&format!("arg.{k} = {v}\n"));
        }
        for (k, v) in &self.inputs {
            s.push_str(&format!("input.{k} = {v}\n"));
        }
        for k in RunConfig::KEYS {
            if let Some(v) = self.config.get(*k) {
                s.push_str(&format!("config.{k} = {v}\n"));
            }
        }
        for o in &self.outputs {
            s.push_str(&format!("output = {o}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest {
            command: String::new(),
            args: BTreeMap::new(),
            inputs: BTreeMap::new(),
            config: BTreeMap::new(),
            outputs: Vec::new(),
        };
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once(" = ") else {
                bail!("manifest line {} is not `key = value`", n + 1);
            };
            let v = v.to_string();
            if k == "command" {
                m.command = v;
            } else if k == "output" {
                m.outputs.push(v);
            } else if let Some(a) = k.strip_prefix("arg.") {
                m.args.insert(a.to_string(), v);
            } else if let Some(p) = k.strip_prefix("input.") {
                m.inputs.insert(p.to_string(), v);
            } else if let Some(c) = k.strip_prefix("config.") {
                m.config.insert(c.to_string(), v);
            } else {
                bail!("unknown manifest key `{k}`");
            }
        }
        if m.command.is_empty() {
            bail!("manifest has no command");
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_text()).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }
}
