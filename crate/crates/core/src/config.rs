//! Run configuration: one TOML document with `[sim]`, `[bss]`, `[decode]`,
//! and `[eval]` sections plus a top-level master seed. Missing keys take the
//! documented defaults; unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully resolved pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; all stage seeds derive from it.
    pub seed: u64,
    pub sim: SimConfig,
    pub bss: BssConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            sim: SimConfig::default(),
            bss: BssConfig::default(),
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.bss.validate()?;
        self.decode.validate()?;
        self.eval.validate()?;
        Ok(())
    }

    /// Trial duration in seconds: explicit `[decode] trial_s` when set,
    /// otherwise derived from the simulated cue layout.
    pub fn trial_s(&self) -> f64 {
        self.decode.trial_s.unwrap_or_else(|| self.sim.trial_s())
    }
}

/// `[sim]`: the synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub channels: usize,
    pub neurons_per_dof: usize,
    pub sample_rate_hz: f64,
    /// MUAP template length in samples.
    pub muap_length: usize,
    pub snr_db: f64,
    /// ISI coefficient of variation of the renewal firing model.
    pub isi_cv: f64,
    pub refractory_ms: f64,
    pub min_rate_hz: f64,
    pub peak_rate_hz: f64,
    pub threshold_min: f64,
    pub threshold_max: f64,
    /// Per-second multiplicative MUAP amplitude ramp; 0 disables drift.
    pub amplitude_drift_per_s: f64,
    pub dof_labels: Vec<String>,
    pub trials: usize,
    pub ramp_up_s: f64,
    pub ramp_down_s: f64,
    pub rest_s: f64,
    /// Onset shift between successive DoF cues within a trial.
    pub stagger_s: f64,
    pub peak: f64,
    pub excitation_rate_hz: f64,
    pub kinematics_gains_deg: Vec<f64>,
    pub reference_cutoff_hz: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            neurons_per_dof: 10,
            sample_rate_hz: 2048.0,
            muap_length: 30,
            snr_db: 20.0,
            isi_cv: 0.15,
            refractory_ms: 10.0,
            min_rate_hz: 8.0,
            peak_rate_hz: 30.0,
            threshold_min: 0.05,
            threshold_max: 0.75,
            amplitude_drift_per_s: 0.0,
            dof_labels: vec!["EF".to_string()],
            trials: 3,
            ramp_up_s: 3.0,
            ramp_down_s: 3.0,
            rest_s: 1.0,
            stagger_s: 2.0,
            peak: 1.0,
            excitation_rate_hz: 64.0,
            kinematics_gains_deg: vec![90.0],
            reference_cutoff_hz: 1.0,
        }
    }
}

impl SimConfig {
    pub fn trial_s(&self) -> f64 {
        2.0 * self.rest_s
            + self.ramp_up_s
            + self.ramp_down_s
            + self.stagger_s * (self.dof_labels.len().saturating_sub(1)) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.dof_labels.is_empty() {
            return Err(Error::Config("sim.dof_labels must not be empty".into()));
        }
        if self.kinematics_gains_deg.len() != self.dof_labels.len() {
            return Err(Error::Config(format!(
                "sim.kinematics_gains_deg has {} entries for {} DoFs",
                self.kinematics_gains_deg.len(),
                self.dof_labels.len()
            )));
        }
        if self.channels == 0 || self.neurons_per_dof == 0 || self.muap_length == 0 {
            return Err(Error::Config("sim dimensions must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("sim.trials must be positive".into()));
        }
        if self.sample_rate_hz < 2.0 * self.excitation_rate_hz {
            return Err(Error::Config(
                "sim.sample_rate_hz must be at least twice excitation_rate_hz".into(),
            ));
        }
        if self.stagger_s < 0.0 {
            return Err(Error::Config("sim.stagger_s must be non-negative".into()));
        }
        Ok(())
    }
}

/// ICA contrast nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    /// g(u) = u²: skewness-seeking, suits non-negative sparse pulse trains.
    Square,
    /// g(u) = tanh(u): the log-cosh contrast.
    LogCosh,
}

/// Spike detector selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    /// Locally adaptive threshold tracking the running accepted-peak mean.
    Adaptive,
    /// Two-class K-means on squared peak amplitudes (fixed-threshold baseline).
    Kmeans,
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(DetectorKind::Adaptive),
            "kmeans" => Ok(DetectorKind::Kmeans),
            other => Err(Error::Config(format!("unknown detector {other:?}"))),
        }
    }
}

/// `[bss]`: decomposition knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BssConfig {
    /// Extension factor R: delays 0..R-1 per channel.
    pub extension_factor: usize,
    /// Eigenvalue regularization floor as a fraction of the largest eigenvalue.
    pub eig_floor: f64,
    pub max_sources: usize,
    /// Fixed-point convergence tolerance on |⟨w_new, w_old⟩| − 1.
    pub tol: f64,
    pub max_iter: usize,
    pub contrast: Contrast,
    pub detector: DetectorKind,
    /// Trailing window of the adaptive threshold, seconds.
    pub window_s: f64,
    /// Fraction of the running accepted-peak mean a candidate must exceed.
    pub rel_threshold: f64,
    pub sil_threshold: f64,
    pub refractory_ms: f64,
}

impl Default for BssConfig {
    fn default() -> Self {
        Self {
            extension_factor: 5,
            eig_floor: 1e-8,
            max_sources: 64,
            tol: 1e-6,
            max_iter: 100,
            contrast: Contrast::Square,
            detector: DetectorKind::Adaptive,
            window_s: 1.0,
            rel_threshold: 0.5,
            sil_threshold: 0.8,
            refractory_ms: 10.0,
        }
    }
}

impl BssConfig {
    pub fn validate(&self) -> Result<()> {
        if self.extension_factor == 0 {
            return Err(Error::Config("bss.extension_factor must be ≥ 1".into()));
        }
        if self.max_sources == 0 {
            return Err(Error::Config("bss.max_sources must be positive".into()));
        }
        if !(0.0 < self.rel_threshold && self.rel_threshold < 1.0) {
            return Err(Error::Config("bss.rel_threshold must lie in (0, 1)".into()));
        }
        if self.refractory_ms <= 0.0 || self.window_s <= 0.0 {
            return Err(Error::Config("bss timing knobs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eig_floor) {
            return Err(Error::Config("bss.eig_floor must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `[decode]`: binning, smoothing, projection, assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub bin_ms: f64,
    pub cutoff_hz: f64,
    /// Projection dimension d.
    pub dims: usize,
    pub varimax_tol: f64,
    pub varimax_max_sweeps: usize,
    /// Minimum |Pearson r| for a DoF to be considered assigned.
    pub corr_floor: f64,
    pub train_trials: usize,
    /// Trial duration; None derives it from the `[sim]` cue layout.
    pub trial_s: Option<f64>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            bin_ms: 50.0,
            cutoff_hz: 1.0,
            dims: 12,
            varimax_tol: 1e-10,
            varimax_max_sweeps: 1000,
            corr_floor: 0.2,
            train_trials: 2,
            trial_s: None,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bin_ms <= 0.0 {
            return Err(Error::Config("decode.bin_ms must be positive".into()));
        }
        if self.dims == 0 {
            return Err(Error::Config("decode.dims must be positive".into()));
        }
        if self.train_trials == 0 {
            return Err(Error::Config("decode.train_trials must be positive".into()));
        }
        if self.cutoff_hz <= 0.0 {
            return Err(Error::Config("decode.cutoff_hz must be positive".into()));
        }
        Ok(())
    }
}

/// Channel selection order of a multiplexing schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuxSelection {
    /// Fresh seeded shuffle of the scheduled channels every revisit cycle.
    Random,
    /// Fixed round-robin partition in channel order.
    Periodic,
}

/// One time-multiplexing setup (a `[[eval.mux_setups]]` entry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuxSetupConfig {
    /// How many channels the schedule covers (drawn from the available set).
    pub scheduled_channels: usize,
    pub subset_size: usize,
    /// Block duration T_B in milliseconds; must be a multiple of the bin size.
    pub block_ms: f64,
    /// Number of switchings N per revisit cycle; T_R = N · T_B.
    pub switches: usize,
    #[serde(default = "default_mux_selection")]
    pub selection: MuxSelection,
}

fn default_mux_selection() -> MuxSelection {
    MuxSelection::Random
}

/// `[eval]`: robustness studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Channel subset sizes of the reduced-set sweep.
    pub sizes: Vec<usize>,
    /// Independent runs per size/setup.
    pub runs: usize,
    /// Spike-match tolerance for rate of agreement, milliseconds.
    pub roa_tolerance_ms: f64,
    /// Maximum constant lag searched when aligning a source to a truth train.
    pub roa_max_lag_ms: f64,
    /// Rate of agreement above which a truth neuron counts as matched.
    pub match_min_roa: f64,
    pub mux_setups: Vec<MuxSetupConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sizes: vec![8, 16, 32, 48, 96, 192],
            runs: 50,
            roa_tolerance_ms: 1.0,
            roa_max_lag_ms: 20.0,
            match_min_roa: 0.9,
            mux_setups: vec![
                MuxSetupConfig {
                    scheduled_channels: 224,
                    subset_size: 32,
                    block_ms: 200.0,
                    switches: 7,
                    selection: MuxSelection::Random,
                },
                MuxSetupConfig {
                    scheduled_channels: 96,
                    subset_size: 32,
                    block_ms: 100.0,
                    switches: 3,
                    selection: MuxSelection::Random,
                },
                MuxSetupConfig {
                    scheduled_channels: 96,
                    subset_size: 32,
                    block_ms: 50.0,
                    switches: 3,
                    selection: MuxSelection::Random,
                },
            ],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("eval.runs must be positive".into()));
        }
        if self.roa_tolerance_ms < 0.0 || self.roa_max_lag_ms < 0.0 {
            return Err(Error::Config("eval tolerances must be non-negative".into()));
        }
        for (i, m) in self.mux_setups.iter().enumerate() {
            if m.subset_size == 0 || m.switches == 0 || m.scheduled_channels == 0 {
                return Err(Error::Config(format!(
                    "eval.mux_setups[{i}]: counts must be positive"
                )));
            }
            if m.subset_size * m.switches < m.scheduled_channels {
                return Err(Error::Config(format!(
                    "eval.mux_setups[{i}]: subset_size × switches must cover scheduled_channels"
                )));
            }
            if m.block_ms <= 0.0 {
                return Err(Error::Config(format!(
                    "eval.mux_setups[{i}]: block_ms must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// FNV-1a hash of a config document; recorded in serialized models so a model
/// file can be traced back to the exact configuration that produced it.
pub fn config_hash(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
