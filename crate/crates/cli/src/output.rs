//! Result serialization: fixed-layout CSV files plus a manifest that
//! hashes every artifact. Numbers are written with 17 significant digits
//! so re-reading them reproduces the binary values exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Render a float in scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// A CSV table under construction: a header and rows of preformatted
/// cells. The writer owns quoting rules (none: cells must not contain
/// commas or newlines, which `push_text` enforces by substitution).
pub struct Table {
    file: &'static str,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: &'static str, header: Vec<String>) -> Table {
        Table {
            file,
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cells: Vec<String>) {
        assert_eq!(
            cells.len(),
            self.header.len(),
            "row width mismatch in {}",
            self.file
        );
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }
}

/// Free-text cell sanitizer: commas and newlines would break the fixed
/// column layout, so they are replaced before the cell is stored.
pub fn text_cell(s: &str) -> String {
    s.replace(',', ";").replace(['\n', '\r'], " ")
}

#[derive(Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub rows: usize,
    pub wall_time_s: f64,
}

#[derive(Serialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub experiment: String,
    pub versions: Versions,
    pub outputs: Vec<ManifestEntry>,
}

#[derive(Serialize)]
pub struct Versions {
    pub cli: &'static str,
    pub core: &'static str,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write every table plus the manifest into `dir`, creating it if needed.
/// Returns the paths written (manifest last).
pub fn write_outputs(
    dir: &Path,
    config_bytes: &[u8],
    seed: u64,
    experiment: &str,
    tables: Vec<(Table, f64)>,
) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(CliError::Io)?;
    let mut written = Vec::new();
    let mut entries = Vec::new();
    for (table, wall_time_s) in &tables {
        let text = table.render();
        let path = dir.join(table.file);
        fs::write(&path, text.as_bytes()).map_err(CliError::Io)?;
        entries.push(ManifestEntry {
            file: table.file.to_string(),
            sha256: sha256_hex(text.as_bytes()),
            rows: table.rows(),
            wall_time_s: *wall_time_s,
        });
        written.push(path);
    }
    let manifest = Manifest {
        config_sha256: sha256_hex(config_bytes),
        seed,
        experiment: experiment.to_string(),
        versions: Versions {
            cli: env!("CARGO_PKG_VERSION"),
            core: carnotlab::VERSION,
        },
        outputs: entries,
    };
    let manifest_text = serde_json::to_string_pretty(&manifest)
        .expect("manifest serialization cannot fail")
        + "\n";
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, manifest_text).map_err(CliError::Io)?;
    written.push(manifest_path);
    Ok(written)
}
