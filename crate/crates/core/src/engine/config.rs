use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dense::EmbedderSpec;
use crate::error::{Error, IoContext, Result};
use crate::fusion::{QarMode, ADAPTIVE_BETA, RRF_K};
use crate::hot::HotGraphConfig;

pub const GIB: u64 = 1 << 30;
/// Laptop-profile memory ceiling, 15.5 GiB.
pub const LAPTOP_CEILING: u64 = 31 * GIB / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Laptop,
    Full,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "laptop" => Ok(Profile::Laptop),
            "full" => Ok(Profile::Full),
            other => Err(Error::InvalidConfig(format!("unknown profile {other:?} (laptop|full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostInfo {
    pub total_ram_bytes: u64,
    pub physical_cores: usize,
}

impl HostInfo {
    /// Read RAM from `/proc/meminfo` and physical cores from
    /// `/proc/cpuinfo`, falling back to the available parallelism.
    pub fn detect() -> Self {
        let logical = std::thread::available_parallelism().map_or(1, |n| n.get());
        let ram = std::fs::read_to_string("/proc/meminfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("MemTotal:"))
                    .and_then(|l| l.split_whitespace().nth(1))
                    .and_then(|kb| kb.parse::<u64>().ok())
            })
            .map_or(16 * GIB, |kb| kb * 1024);
        let cores = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .map(|s| physical_cores_from_cpuinfo(&s))
            .filter(|&n| n > 0)
            .unwrap_or(logical);
        HostInfo {
            total_ram_bytes: ram,
            physical_cores: cores.min(logical.max(1)).max(1),
        }
    }
}

fn physical_cores_from_cpuinfo(s: &str) -> usize {
    let mut seen = HashSet::new();
    let mut phys = "0";
    let mut any = false;
    for line in s.lines() {
        let mut kv = line.splitn(2, ':');
        let (k, v) = (kv.next().unwrap_or("").trim(), kv.next().unwrap_or("").trim());
        match k {
            "physical id" => phys = v,
            "core id" => {
                any = true;
                seen.insert((phys.to_string(), v.to_string()));
            }
            _ => {}
        }
    }
    if any {
        seen.len()
    } else {
        s.lines().filter(|l| l.starts_with("processor")).count()
    }
}

/// Everything the engine reads at startup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub profile: Profile,
    pub laptop_mode: bool,
    pub memory_ceiling_bytes: u64,
    pub idle_unload_seconds: u64,
    pub worker_count: usize,
    pub threads: usize,
    pub reranking: bool,
    pub enrichment: bool,
    pub summary_prefilter: bool,
    pub embedder: EmbedderSpec,
    /// Declared resident size of the embedding model.
    pub embedder_bytes: u64,
    /// Artificial per-call embedding latency in milliseconds.
    pub embed_cost_ms: u64,
    pub hot: HotGraphConfig,
    /// Migrate the oldest hot batch on ingest once this many seconds have
    /// passed since the last migration. Off when unset.
    pub migration_interval_secs: Option<u64>,
    pub nprobe: usize,
    pub rrf_k: u32,
    /// Dense weight for fixed fusion; 0.5 is plain RRF.
    pub alpha: f64,
    pub beta_adaptive: f64,
    pub qar_mode: QarMode,
    pub search_depth: usize,
    pub cache_enabled: bool,
    pub cache_capacity: usize,
    pub cache_threshold: f32,
    pub store_path: Option<PathBuf>,
    pub sparse_path: Option<PathBuf>,
    pub dense_path: Option<PathBuf>,
    pub hot_path: Option<PathBuf>,
    pub calibration_path: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig::for_profile(Profile::Laptop, HostInfo {
            total_ram_bytes: 16 * GIB,
            physical_cores: 4,
        })
    }
}

impl EngineConfig {
    pub fn for_profile(profile: Profile, host: HostInfo) -> Self {
        let laptop = profile == Profile::Laptop;
        let cores = host.physical_cores.max(1);
        EngineConfig {
            profile,
            laptop_mode: laptop,
            memory_ceiling_bytes: if laptop {
                LAPTOP_CEILING
            } else {
                host.total_ram_bytes / 10 * 9
            },
            idle_unload_seconds: 300,
            worker_count: cores.saturating_sub(1).max(1),
            threads: cores,
            reranking: !laptop,
            enrichment: !laptop,
            summary_prefilter: !laptop,
            embedder: EmbedderSpec::default(),
            embedder_bytes: 300 << 20,
            embed_cost_ms: 0,
            hot: HotGraphConfig::default(),
            migration_interval_secs: None,
            nprobe: 10,
            rrf_k: RRF_K,
            alpha: 0.5,
            beta_adaptive: ADAPTIVE_BETA,
            qar_mode: QarMode::Dampen,
            search_depth: 100,
            cache_enabled: true,
            cache_capacity: 500,
            cache_threshold: 0.92,
            store_path: None,
            sparse_path: None,
            dense_path: None,
            hot_path: None,
            calibration_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.memory_ceiling_bytes == 0 {
            return Err(Error::InvalidConfig("memory ceiling must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.rrf_k == 0 {
            return Err(Error::InvalidConfig("rrf_k must be at least 1".into()));
        }
        self.hot.validate()
    }

    /// Resolve a component path: explicit config, else `<dir>/<name>`.
    pub fn path_in(&self, dir: &Path, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| dir.join(name))
    }
}

/// Defaults for `host`: laptop mode when RAM ≤ 16 GiB or ≤ 6 physical cores.
pub fn detect_profile(host: HostInfo) -> EngineConfig {
    let laptop = host.total_ram_bytes <= 16 * GIB || host.physical_cores <= 6;
    EngineConfig::for_profile(if laptop { Profile::Laptop } else { Profile::Full }, host)
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// Detection, then `profile_override` (TIERKITE_PROFILE), then the JSON
/// overlay file (TIERKITE_CONFIG); later sources win.
pub fn resolve_config(host: HostInfo, profile_override: Option<&str>, overlay: Option<&Path>) -> Result<EngineConfig> {
    let mut cfg = detect_profile(host);
    if let Some(p) = profile_override.filter(|p| !p.trim().is_empty()) {
        cfg = EngineConfig::for_profile(p.parse()?, host);
    }
    if let Some(path) = overlay {
        let text = std::fs::read_to_string(path).at(path)?;
        let over: serde_json::Value = serde_json::from_str(&text)?;
        if let Some(p) = over.get("profile").and_then(|p| p.as_str()) {
            cfg = EngineConfig::for_profile(p.parse()?, host);
        }
        let mut base = serde_json::to_value(&cfg)?;
        merge(&mut base, over);
        cfg = serde_json::from_value(base)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// [`resolve_config`] driven by the process environment.
pub fn config_from_env() -> Result<EngineConfig> {
    let profile = std::env::var("TIERKITE_PROFILE").ok();
    let overlay = std::env::var_os("TIERKITE_CONFIG").map(PathBuf::from);
    resolve_config(HostInfo::detect(), profile.as_deref(), overlay.as_deref())
}
