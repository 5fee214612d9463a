use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a run: the resolved config, the library
/// versions and digests of the files it wrote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub platform: String,
    pub config: RunConfig,
    pub outputs: Vec<OutputFile>,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: malformed manifest: {e}", path.display())))
    }
}

pub fn platform() -> String {
    format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS)
}

/// Single writer for a run; remembers what it wrote.
#[derive(Debug, Default)]
pub struct Sink {
    files: Vec<OutputFile>,
}

impl Sink {
    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }

    pub fn bytes(&mut self, path: &Path, data: &[u8]) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, data).map_err(|e| CliError::io(path, e))?;
        self.files.push(OutputFile {
            path: path.to_path_buf(),
            sha256: hex_digest(data),
        });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, path: &Path, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
        text.push('\n');
        self.bytes(path, text.as_bytes())
    }

    pub fn csv(&mut self, path: &Path, table: &Table) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::io(path, std::io::Error::other(e));
        w.write_record(&table.header).map_err(io)?;
        for row in &table.rows {
            w.write_record(row).map_err(io)?;
        }
        let data = w.into_inner().map_err(|e| CliError::io(path, std::io::Error::other(e.to_string())))?;
        self.bytes(path, &data)
    }

    /// Writes `table` as CSV, or as a JSON array of row objects.
    pub fn table(&mut self, path: &Path, table: &Table, format: crate::args::Format) -> CliResult<()> {
        match format {
            crate::args::Format::Csv => self.csv(path, table),
            crate::args::Format::Json => self.json(path, &table.to_json()),
        }
    }

    /// Writes the manifest last, listing every file written before it.
    pub fn manifest(mut self, cfg: &RunConfig) -> CliResult<Vec<OutputFile>> {
        let m = Manifest {
            tool: "gendyne".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: gendyne_core::VERSION.into(),
            platform: platform(),
            config: cfg.clone(),
            outputs: self.files.clone(),
        };
        self.json(&cfg.companion("manifest.json"), &m)?;
        Ok(self.files)
    }
}

pub fn hex_digest(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

/// Column-ordered rows of preformatted cells; an empty cell is a missing value.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    fn to_json(&self) -> serde_json::Value {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let obj = self
                    .header
                    .iter()
                    .zip(row)
                    .map(|(k, v)| {
                        let val = if v.is_empty() {
                            serde_json::Value::Null
                        } else if let Ok(x) = v.parse::<f64>() {
                            serde_json::Number::from_f64(x).map(serde_json::Value::Number).unwrap_or_else(|| v.clone().into())
                        } else {
                            v.clone().into()
                        };
                        (k.clone(), val)
                    })
                    .collect::<serde_json::Map<_, _>>();
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::Value::Array(rows)
    }
}

/// Shortest round-trip representation, so reruns compare byte for byte.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
