use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const ABSENT: &str = "NA";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Key-value record of one run, written next to its outputs.
pub struct Manifest {
    started: Instant,
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(subcommand: &str) -> Self {
        let mut m = Self {
            started: Instant::now(),
            lines: Vec::new(),
        };
        m.set("subcommand", subcommand);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.set(&format!("input.{role}"), format!("{} sha256:{}", path.display(), sha256_hex(bytes)));
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "duration_secs = {:.3}", self.started.elapsed().as_secs_f64());
        s
    }
}

/// Output files of a run; nothing is written without an output directory.
pub struct Outputs {
    dir: Option<PathBuf>,
    pub manifest: Manifest,
}

impl Outputs {
    pub fn new(dir: Option<&Path>, subcommand: &str) -> Result<Self, CliError> {
        if let Some(d) = dir {
            fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
            manifest: Manifest::new(subcommand),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        if let Some(d) = &self.dir {
            let path = d.join(name);
            fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
            self.manifest.set(&format!("output.{name}"), format!("sha256:{}", sha256_hex(contents.as_bytes())));
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), CliError> {
        if let Some(d) = &self.dir {
            let path = d.join("manifest.txt");
            fs::write(&path, self.manifest.render()).map_err(|e| CliError::io(&path, e))?;
        }
        Ok(())
    }
}

pub fn raw(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => ABSENT.to_string(),
    }
}

/// Survival printed in units of 10^-2.
pub fn percent(v: Option<f64>) -> String {
    scaled(v, 1e2)
}

/// Standard errors printed in units of 10^-3.
pub fn permille(v: Option<f64>) -> String {
    scaled(v, 1e3)
}

fn scaled(v: Option<f64>, factor: f64) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{:.1}", x * factor),
        _ => ABSENT.to_string(),
    }
}

/// Right-aligned plain-text table.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut s = String::new();
    let line = |s: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(s, "{}", parts.join("  "));
    };
    line(&mut s, &mut header.iter().copied());
    for row in rows {
        line(&mut s, &mut row.iter().map(String::as_str));
    }
    s
}
