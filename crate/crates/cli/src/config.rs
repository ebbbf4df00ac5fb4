//! Run configuration files.

use std::path::{Path, PathBuf};

use lsmtune::bench::{SessionCategory, DEFAULT_BENCH_SIZE, DEFAULT_QUERIES_PER_WORKLOAD, DEFAULT_SESSION_WORKLOADS};
use lsmtune::{Family, SolverOptions, SystemParams, TuningBounds};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub workload: Option<WorkloadSource>,
    #[serde(default = "default_family")]
    pub family: Family,
    #[serde(default)]
    pub bounds: TuningBounds,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub rho: Option<RhoSource>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub drift: DriftConfig,
    #[serde(default)]
    pub session: SessionConfig,
}

fn default_family() -> Family {
    Family::Klsm
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            system: SystemConfig::default(),
            workload: None,
            family: default_family(),
            bounds: TuningBounds::default(),
            solver: SolverOptions::default(),
            rho: None,
            seed: 0,
            bench: BenchConfig::default(),
            sweep: SweepConfig::default(),
            drift: DriftConfig::default(),
            session: SessionConfig::default(),
        }
    }
}

/// A number of bits, or a string such as `"2MB"`, `"512 bits"` or `"10 bpe"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Bits(f64),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default)]
    pub preset: Preset,
    pub entries: Option<f64>,
    pub entry_size: Option<Quantity>,
    pub entries_per_page: Option<f64>,
    pub memory: Option<Quantity>,
    pub asymmetry: Option<f64>,
    pub seq_factor: Option<f64>,
    /// Defaults to one page worth of entries, `B / N`.
    pub range_selectivity: Option<f64>,
}

impl SystemConfig {
    pub fn resolve(&self) -> Result<SystemParams, CliError> {
        let base = match self.preset {
            Preset::Desk => SystemParams::desk(),
            Preset::Reference => SystemParams::reference(),
        };
        let entries = self.entries.unwrap_or(base.entries);
        let entry_bits = match &self.entry_size {
            Some(q) => parse_quantity(q, entries)?,
            None => base.entry_bits,
        };
        let entries_per_page = self.entries_per_page.unwrap_or(base.entries_per_page);
        let memory_bits = match &self.memory {
            Some(q) => parse_quantity(q, entries)?,
            None => base.memory_bits / base.entries * entries,
        };
        let sys = SystemParams {
            entries,
            entry_bits,
            entries_per_page,
            memory_bits,
            asymmetry: self.asymmetry.unwrap_or(base.asymmetry),
            seq_factor: self.seq_factor.unwrap_or(base.seq_factor),
            range_selectivity: self.range_selectivity.unwrap_or(entries_per_page / entries),
        };
        sys.validate()?;
        Ok(sys)
    }
}

/// Converts a memory or size quantity to bits. Byte units are binary
/// (`1KB = 1024 bytes`); `bpe` multiplies by the entry count.
pub fn parse_memory(text: &str, entries: f64) -> Result<f64, CliError> {
    let t = text.trim();
    let split = t
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || c == '-' || c == '+'))
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("cannot parse quantity '{text}'")))?;
    let scale = match unit.trim() {
        "" | "b" | "bit" | "bits" => 1.0,
        "B" | "bytes" => 8.0,
        "KB" | "kB" | "KiB" | "kb" => 8.0 * 1024.0,
        "MB" | "MiB" | "mb" => 8.0 * 1024.0 * 1024.0,
        "GB" | "GiB" | "gb" => 8.0 * 1024.0 * 1024.0 * 1024.0,
        "bpe" | "bits-per-entry" | "bits/entry" => entries,
        other => return Err(CliError::Config(format!("unknown unit '{other}' in '{text}'"))),
    };
    let bits = value * scale;
    if !bits.is_finite() || bits < 0.0 {
        return Err(CliError::Config(format!("quantity '{text}' must be finite and non-negative")));
    }
    Ok(bits)
}

fn parse_quantity(q: &Quantity, entries: f64) -> Result<f64, CliError> {
    match q {
        Quantity::Bits(b) => Ok(*b),
        Quantity::Text(s) => parse_memory(s, entries),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadSource {
    /// Row of the expected-workload table.
    Index(usize),
    Inline([f64; 4]),
    /// First row of a CSV file with `z0,z1,q,w` columns.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSource {
    Value(f64),
    History { history: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub size: usize,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
    /// Load a stored benchmark set instead of sampling one.
    pub file: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { size: DEFAULT_BENCH_SIZE, seed: None, file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Expected-workload indices; all of them when absent.
    pub centers: Option<Vec<usize>>,
    pub rhos: Vec<f64>,
    pub write_records: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { centers: None, rhos: (1..=15).map(|i| 0.25 * i as f64).collect(), write_records: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    pub families: Vec<Family>,
    pub rho: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            families: vec![Family::Klsm, Family::Fluid, Family::Lazy, Family::Leveling, Family::Tiering],
            rho: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub category: SessionCategory,
    pub workloads: usize,
    pub queries_per_workload: u64,
    pub update_ratio: f64,
    /// Entries inserted before the session; defaults to the system's `N`.
    pub preload: Option<usize>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            category: SessionCategory::Expected,
            workloads: DEFAULT_SESSION_WORKLOADS,
            queries_per_workload: DEFAULT_QUERIES_PER_WORKLOAD,
            update_ratio: 0.0,
            preload: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("parsing config {}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }
}
