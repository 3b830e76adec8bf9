//! Table and manifest writers. Output depends only on the configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    /// Column names carry their unit as a suffix.
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        assert_eq!(cells.len(), self.columns.len(), "row width");
        self.rows.push(cells.into_iter().map(|c| c.to_string()).collect());
    }

    fn render(&self, title: &str, config_hash: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {title}");
        let _ = writeln!(out, "# config_sha256={config_hash}");
        let _ = writeln!(out, "{}", self.columns.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }
}

pub enum Cell {
    F(f64),
    U(u64),
    S(String),
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::F(x) if x.is_finite() => write!(f, "{x:.9e}"),
            Cell::F(_) => write!(f, "nan"),
            Cell::U(x) => write!(f, "{x}"),
            Cell::S(s) => write!(f, "{s}"),
        }
    }
}

pub struct Output {
    dir: PathBuf,
    config_hash: String,
    files: BTreeMap<String, String>,
    summary: BTreeMap<String, Value>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Output {
    pub fn create(dir: &Path, config_hash: &str) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), config_hash: config_hash.into(), files: BTreeMap::new(), summary: BTreeMap::new() })
    }

    fn write(&mut self, name: &str, text: &str) -> std::io::Result<()> {
        fs::write(self.dir.join(name), text)?;
        self.files.insert(name.into(), sha256_hex(text.as_bytes()));
        Ok(())
    }

    pub fn table(&mut self, name: &str, title: &str, table: &Table) -> std::io::Result<()> {
        let text = table.render(title, &self.config_hash);
        self.write(name, &text)
    }

    pub fn text(&mut self, name: &str, text: &str) -> std::io::Result<()> {
        self.write(name, text)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn summary<T: Serialize>(&mut self, key: &str, value: T) {
        self.summary.insert(key.into(), serde_json::to_value(value).expect("summary value serialises"));
    }

    /// Writes `manifest.json` listing every file with its digest.
    pub fn finish(mut self, command: &str, config_text: &str) -> std::io::Result<()> {
        self.write("config.toml", config_text)?;
        #[derive(Serialize)]
        struct Manifest<'a> {
            tool: &'a str,
            version: &'a str,
            command: &'a str,
            config_sha256: &'a str,
            files: &'a BTreeMap<String, String>,
            summary: &'a BTreeMap<String, Value>,
        }
        let m = Manifest {
            tool: "tgate",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256: &self.config_hash,
            files: &self.files,
            summary: &self.summary,
        };
        let mut text = serde_json::to_string_pretty(&m).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), text)
    }
}
