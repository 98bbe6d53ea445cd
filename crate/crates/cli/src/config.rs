//! Scenario configuration: one JSON document, every section optional.

use std::path::{Path, PathBuf};

use fastr::calibration::CalibrationSettings;
use fastr::io::{DeviceJson, ReadoutConfig, TopologyJson};
use fastr::metrology::Inversion;
use fastr::planner::TABLE_CELLS;
use fastr::shift_register::ProcessorTopology;
use fastr::squid::{Device, Prototype};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Problems with the scenario itself (exit code 2).
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ConfigError {
    fn invalid(e: impl std::fmt::Display) -> Self {
        Self::Invalid(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceSpec {
    pub n_per_axis: usize,
    pub flux_max: f64,
}

impl Default for SurfaceSpec {
    fn default() -> Self {
        Self {
            n_per_axis: 64,
            flux_max: 0.49,
        }
    }
}

/// How array devices are designed before fabrication scatter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Each device is designed for its own slot, with the reachability margin.
    PerSlot,
    /// Every device is a copy of the template design.
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySpec {
    pub n_devices: usize,
    pub placement: Placement,
    /// Dielectric thickness scatter, drawn uniformly from `[-scatter, scatter]`.
    pub scatter: f64,
    /// Designed distance above the slot at the thinnest dielectric (linewidths).
    pub margin_linewidths: f64,
    pub r_target: f64,
    /// Explicit slot frequencies; the planner grid over the readout band
    /// is used when absent.
    pub slots_hz: Option<Vec<f64>>,
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self {
            n_devices: 32,
            placement: Placement::PerSlot,
            scatter: 0.1,
            margin_linewidths: 6.0,
            r_target: 1.0,
            slots_hz: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelitySpec {
    /// Run at this SNR instead of the readout drive power.
    pub forced_snr: Option<f64>,
    pub pattern_bits: usize,
    pub n_repeats: usize,
    pub calibration_shots: usize,
    pub dump_limit: usize,
}

impl Default for FidelitySpec {
    fn default() -> Self {
        Self {
            forced_snr: None,
            pattern_bits: 8,
            n_repeats: 125_000,
            calibration_shots: 2000,
            dump_limit: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsdSpec {
    /// Transition width W (Phi0).
    pub width_phi0: f64,
    pub center_phi0: f64,
    pub tau_s: f64,
    pub n_samples: usize,
    pub shots_per_sample: u64,
    /// 1/f amplitude at 1 Hz (Phi0 / sqrt(Hz)).
    pub one_over_f_amplitude: f64,
    pub alpha: f64,
    pub inversion: Inversion,
}

impl Default for PsdSpec {
    fn default() -> Self {
        Self {
            width_phi0: 210.8e-6,
            center_phi0: 0.0,
            tau_s: 3.6e-6,
            n_samples: 1 << 20,
            shots_per_sample: 1,
            one_over_f_amplitude: 11e-6,
            alpha: 1.0,
            inversion: Inversion::Linearized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSpec {
    pub n_cells: Vec<u64>,
}

impl Default for PlanSpec {
    fn default() -> Self {
        Self {
            n_cells: TABLE_CELLS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Device JSON, relative to the config file.
    #[serde(default)]
    pub device_file: Option<PathBuf>,
    #[serde(default)]
    pub device: Option<DeviceJson>,
    #[serde(default)]
    pub surface: SurfaceSpec,
    #[serde(default)]
    pub array: ArraySpec,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default)]
    pub readout: ReadoutConfig,
    #[serde(default)]
    pub fidelity: FidelitySpec,
    #[serde(default)]
    pub psd: PsdSpec,
    #[serde(default)]
    pub plan: PlanSpec,
    /// Topology JSON, relative to the config file.
    #[serde(default)]
    pub topology_file: Option<PathBuf>,
    #[serde(default)]
    pub topology: Option<TopologyJson>,
}

fn default_seed() -> u64 {
    1
}

impl Default for Scenario {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty scenario is valid")
    }
}

impl Scenario {
    /// Parse and check a scenario without touching the filesystem.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = serde_json::from_str(text).map_err(ConfigError::invalid)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.device.is_some() && self.device_file.is_some() {
            return Err(ConfigError::invalid("give either device or device_file, not both"));
        }
        if self.topology.is_some() && self.topology_file.is_some() {
            return Err(ConfigError::invalid("give either topology or topology_file, not both"));
        }
        if let Some(d) = self.device {
            d.into_device().map_err(ConfigError::invalid)?;
        }
        if let Some(t) = &self.topology {
            t.clone().into_topology().map_err(ConfigError::invalid)?;
        }
        self.calibration.validate().map_err(ConfigError::invalid)?;
        self.readout.validate().map_err(ConfigError::invalid)?;
        let s = &self.surface;
        if !(16..=4096).contains(&s.n_per_axis) || !(s.flux_max > 0.0 && s.flux_max <= 0.5) {
            return Err(ConfigError::invalid("surface needs 16 <= n_per_axis <= 4096 and 0 < flux_max <= 0.5"));
        }
        let a = &self.array;
        if a.n_devices == 0 || a.n_devices > 100_000 {
            return Err(ConfigError::invalid("array.n_devices must be in 1..=100000"));
        }
        if !(0.0..1.0).contains(&a.scatter) || !(a.margin_linewidths >= 0.0) || !(a.r_target > 0.0) {
            return Err(ConfigError::invalid(
                "array needs 0 <= scatter < 1, margin_linewidths >= 0 and r_target > 0",
            ));
        }
        if let Some(slots) = &a.slots_hz {
            if slots.len() != a.n_devices || slots.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
                return Err(ConfigError::invalid("array.slots_hz needs n_devices positive frequencies"));
            }
        }
        let f = &self.fidelity;
        if f.pattern_bits == 0 || f.pattern_bits > 4096 || f.n_repeats == 0 {
            return Err(ConfigError::invalid("fidelity needs 1 <= pattern_bits <= 4096 and n_repeats > 0"));
        }
        if f.pattern_bits.saturating_mul(f.n_repeats) > 1 << 32 {
            return Err(ConfigError::invalid("fidelity run exceeds 2^32 shots"));
        }
        if let Some(snr) = f.forced_snr {
            if !(snr > 0.0 && snr.is_finite()) {
                return Err(ConfigError::invalid("fidelity.forced_snr must be positive"));
            }
        }
        let p = &self.psd;
        if !(p.width_phi0 > 0.0 && p.tau_s > 0.0 && p.center_phi0.is_finite())
            || p.shots_per_sample == 0
            || !(256..=1 << 24).contains(&p.n_samples)
            || !(p.one_over_f_amplitude >= 0.0)
            || !(p.alpha > 0.0 && p.alpha < 2.0)
        {
            return Err(ConfigError::invalid(
                "psd needs positive width and tau_s, 256 <= n_samples <= 2^24, shots >= 1, amplitude >= 0, 0 < alpha < 2",
            ));
        }
        if self.plan.n_cells.is_empty() {
            return Err(ConfigError::invalid("plan.n_cells is empty"));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })
}

/// A scenario with its external files read and its seed settled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub scenario: Scenario,
    /// Device in use; `None` means the built-in prototype.
    pub device: Option<DeviceJson>,
    pub topology: Option<TopologyJson>,
}

impl Resolved {
    /// Load `config` (or the defaults) and apply a seed override.
    pub fn load(config: Option<&Path>, seed: Option<u64>) -> Result<Self, ConfigError> {
        let (mut scenario, base) = match config {
            Some(path) => (
                Scenario::parse(&read(path)?)?,
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (Scenario::default(), PathBuf::new()),
        };
        if let Some(seed) = seed {
            scenario.seed = seed;
        }
        let device = match (&scenario.device_file, scenario.device) {
            (Some(file), _) => {
                let text = read(&base.join(file))?;
                let json: DeviceJson = serde_json::from_str(&text).map_err(|e| {
                    ConfigError::Invalid(format!("{}: {e}", base.join(file).display()))
                })?;
                json.into_device().map_err(ConfigError::invalid)?;
                Some(json)
            }
            (None, d) => d,
        };
        let topology = match (&scenario.topology_file, &scenario.topology) {
            (Some(file), _) => {
                let text = read(&base.join(file))?;
                let json: TopologyJson = serde_json::from_str(&text).map_err(|e| {
                    ConfigError::Invalid(format!("{}: {e}", base.join(file).display()))
                })?;
                json.clone().into_topology().map_err(ConfigError::invalid)?;
                Some(json)
            }
            (None, t) => t.clone(),
        };
        Ok(Self {
            scenario,
            device,
            topology,
        })
    }

    pub fn device(&self) -> Device {
        match self.device {
            Some(d) => d.into_device().expect("validated on load"),
            None => Prototype::new().device,
        }
    }

    pub fn topology(&self) -> ProcessorTopology {
        match &self.topology {
            Some(t) => t.clone().into_topology().expect("validated on load"),
            None => ProcessorTopology::new(64, 30, &[]).expect("default topology is valid"),
        }
    }

    /// SHA-256 of the canonical resolved configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let s = Scenario::parse("{}").unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(s.seed, 1);
        assert_eq!(s.array.n_devices, 32);
        assert_eq!(s.plan.n_cells, TABLE_CELLS.to_vec());
    }

    #[test]
    fn rejects_unknown_and_invalid_fields() {
        assert!(Scenario::parse(r#"{"sed": 3}"#).is_err());
        assert!(Scenario::parse(r#"{"surface": {"n_per_axis": 3}}"#).is_err());
        assert!(Scenario::parse(r#"{"array": {"scatter": 1.5}}"#).is_err());
        assert!(Scenario::parse(r#"{"fidelity": {"forced_snr": -1}}"#).is_err());
        assert!(Scenario::parse(r#"{"readout": {"lo_offset_hz": 1e9}}"#).is_err());
        assert!(Scenario::parse("[").is_err());
    }

    #[test]
    fn seed_override_changes_hash() {
        let a = Resolved::load(None, None).unwrap();
        let b = Resolved::load(None, Some(7)).unwrap();
        assert_eq!(b.scenario.seed, 7);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), Resolved::load(None, None).unwrap().hash());
    }

    #[test]
    fn missing_device_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"device_file": "nope.json"}"#).unwrap();
        let err = Resolved::load(Some(&cfg), None).unwrap_err();
        assert!(err.to_string().contains("nope.json"), "{err}");
    }
}
