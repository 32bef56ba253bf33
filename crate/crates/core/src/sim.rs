//! Synthetic EMG generation from a ground-truth motor neuron pool.
//!
//! Builds everything the downstream stages can be verified against: a pool of
//! rate-coded motor neurons recruited by threshold, a bank of per-channel
//! action-potential templates, trapezoid excitation cues, renewal-process
//! spike trains, the convolutive EMG mixture, and the mirror-side reference
//! kinematics.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::config::SimConfig;
use crate::decode;
use crate::error::{Error, Result};
use crate::rng::{child_seed, rng};

/// One spinal motor neuron: recruited at a drive threshold, firing between
/// `min_rate_hz` (at recruitment) and `peak_rate_hz` (at full drive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorNeuron {
    /// Fraction of maximum voluntary contraction in [0, 1).
    pub recruitment_threshold: f64,
    pub min_rate_hz: f64,
    pub peak_rate_hz: f64,
}

/// A pool of motor neurons ordered by recruitment threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MotorNeuronPool {
    neurons: Vec<MotorNeuron>,
}

impl MotorNeuronPool {
    /// Validates the size-principle ordering (strictly increasing thresholds)
    /// and the rate bounds `0 < min_rate < peak_rate`.
    pub fn new(neurons: Vec<MotorNeuron>) -> Result<Self> {
        if neurons.is_empty() {
            return Err(Error::invalid("motor neuron pool must not be empty"));
        }
        for (i, n) in neurons.iter().enumerate() {
            if !(0.0..1.0).contains(&n.recruitment_threshold) {
                return Err(Error::invalid(format!(
                    "neuron {i}: recruitment threshold {} outside [0, 1)",
                    n.recruitment_threshold
                )));
            }
            if !(n.min_rate_hz > 0.0 && n.min_rate_hz < n.peak_rate_hz) {
                return Err(Error::invalid(format!(
                    "neuron {i}: rates must satisfy 0 < min ({}) < peak ({})",
                    n.min_rate_hz, n.peak_rate_hz
                )));
            }
            if i > 0 && neurons[i - 1].recruitment_threshold >= n.recruitment_threshold {
                return Err(Error::invalid(format!(
                    "recruitment thresholds must be strictly increasing (neuron {i})"
                )));
            }
        }
        Ok(Self { neurons })
    }

    /// Evenly spaced recruitment ladder from `threshold_min` to
    /// `threshold_max`, all neurons sharing the same rate range.
    pub fn recruitment_ladder(
        size: usize,
        threshold_min: f64,
        threshold_max: f64,
        min_rate_hz: f64,
        peak_rate_hz: f64,
    ) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("pool size must be positive"));
        }
        if threshold_min > threshold_max {
            return Err(Error::invalid("threshold_min above threshold_max"));
        }
        let neurons = (0..size)
            .map(|i| {
                let frac = if size == 1 {
                    0.0
                } else {
                    i as f64 / (size - 1) as f64
                };
                MotorNeuron {
                    recruitment_threshold: threshold_min + frac * (threshold_max - threshold_min),
                    min_rate_hz,
                    peak_rate_hz,
                }
            })
            .collect();
        Self::new(neurons)
    }

    pub fn neurons(&self) -> &[MotorNeuron] {
        &self.neurons
    }

    pub fn size(&self) -> usize {
        self.neurons.len()
    }
}

/// Motor unit action potential templates, one finite impulse response of
/// `length` samples per (neuron, channel) pair.
#[derive(Debug, Clone)]
pub struct MuapBank {
    /// One (channels × length) template matrix per neuron.
    templates: Vec<Array2<f64>>,
    channels: usize,
    length: usize,
    /// Per-neuron multiplicative amplitude ramp in 1/s; templates of neuron j
    /// are scaled by `max(0, 1 + drift_j · t)` at spike time `t`.
    amplitude_drift: Option<Vec<f64>>,
}

impl MuapBank {
    pub fn new(templates: Vec<Array2<f64>>, amplitude_drift: Option<Vec<f64>>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::invalid("MUAP bank must hold at least one neuron"));
        }
        let channels = templates[0].nrows();
        let length = templates[0].ncols();
        if channels == 0 || length == 0 {
            return Err(Error::invalid("MUAP templates must be non-empty"));
        }
        for (j, t) in templates.iter().enumerate() {
            if t.nrows() != channels || t.ncols() != length {
                return Err(Error::invalid(format!(
                    "neuron {j}: template shape {:?} differs from ({channels}, {length})",
                    t.dim()
                )));
            }
        }
        if let Some(d) = &amplitude_drift {
            if d.len() != templates.len() {
                return Err(Error::DimensionMismatch {
                    context: "amplitude_drift",
                    expected: templates.len(),
                    actual: d.len(),
                });
            }
        }
        Ok(Self {
            templates,
            channels,
            length,
            amplitude_drift,
        })
    }

    /// Seeded random bank of smooth biphasic shapes (difference of Gaussians).
    ///
    /// Each neuron gets a home electrode; its amplitude decays across channels
    /// away from that electrode, which is what makes the spatial signatures of
    /// different neurons separable.
    pub fn generate(
        neuron_count: usize,
        channels: usize,
        length: usize,
        seed: u64,
    ) -> Result<Self> {
        if neuron_count == 0 || channels == 0 || length == 0 {
            return Err(Error::invalid("MUAP bank dimensions must be positive"));
        }
        let mut templates = Vec::with_capacity(neuron_count);
        for j in 0..neuron_count {
            let mut r = rng(child_seed(seed, 0xa1, j as u64));
            let home = r.gen_range(0.0..channels as f64);
            let spread = channels as f64 / 8.0 + r.gen_range(0.0..channels as f64 / 8.0);
            let base = r.gen_range(0.7..1.3);
            let mut t = Array2::zeros((channels, length));
            for c in 0..channels {
                let dist = (c as f64 - home).abs();
                let gain = base * (-dist / spread).exp() + 0.02 * r.gen_range(-1.0..1.0);
                let center = length as f64 * r.gen_range(0.35..0.55);
                let width1 = length as f64 * r.gen_range(0.06..0.12);
                let width2 = width1 * r.gen_range(1.4..2.2);
                let delay = width1 * r.gen_range(0.5..1.2);
                for l in 0..length {
                    let x = l as f64;
                    let g1 = (-((x - center) / width1).powi(2) / 2.0).exp();
                    let g2 = (-((x - center - delay) / width2).powi(2) / 2.0).exp();
                    t[(c, l)] = gain * (g1 - 0.8 * g2);
                }
            }
            templates.push(t);
        }
        Self::new(templates, None)
    }

    /// Returns the bank with per-neuron amplitude drift installed.
    pub fn with_drift(mut self, drift_per_s: Vec<f64>) -> Result<Self> {
        if drift_per_s.len() != self.templates.len() {
            return Err(Error::DimensionMismatch {
                context: "amplitude_drift",
                expected: self.templates.len(),
                actual: drift_per_s.len(),
            });
        }
        self.amplitude_drift = Some(drift_per_s);
        Ok(self)
    }

    pub fn neuron_count(&self) -> usize {
        self.templates.len()
    }

    pub fn channel_count(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn template(&self, neuron: usize) -> &Array2<f64> {
        &self.templates[neuron]
    }

    pub fn amplitude_drift(&self) -> Option<&[f64]> {
        self.amplitude_drift.as_deref()
    }
}

/// Shape metadata of a generated cue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CueShape {
    pub ramp_up_s: f64,
    pub ramp_down_s: f64,
    pub peak: f64,
}

/// Sampled drive for one degree of freedom, as a fraction of MVC in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationTrajectory {
    values: Vec<f64>,
    sample_rate_hz: f64,
    cue: Option<CueShape>,
}

impl ExcitationTrajectory {
    pub fn new(values: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if sample_rate_hz <= 0.0 {
            return Err(Error::invalid("excitation sample rate must be positive"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("excitation values must lie in [0, 1]"));
        }
        Ok(Self {
            values,
            sample_rate_hz,
            cue: None,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn cue(&self) -> Option<CueShape> {
        self.cue
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate_hz
    }

    /// Linear interpolation at time `t` seconds; zero outside the record.
    pub fn at(&self, t: f64) -> f64 {
        if t < 0.0 || self.values.is_empty() {
            return 0.0;
        }
        let pos = t * self.sample_rate_hz;
        let lo = pos.floor() as usize;
        if lo + 1 >= self.values.len() {
            return if lo < self.values.len() {
                self.values[lo]
            } else {
                0.0
            };
        }
        let frac = pos - lo as f64;
        self.values[lo] * (1.0 - frac) + self.values[lo + 1] * frac
    }

    /// Concatenates trajectories end to end (equal sample rates required).
    pub fn concat(parts: &[ExcitationTrajectory]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("cannot concatenate zero trajectories"));
        }
        let rate = parts[0].sample_rate_hz;
        if parts.iter().any(|p| p.sample_rate_hz != rate) {
            return Err(Error::invalid("sample rates differ across parts"));
        }
        let values = parts
            .iter()
            .flat_map(|p| p.values.iter().copied())
            .collect();
        Self::new(values, rate)
    }
}

/// Trapezoid drive cue: `rest_s` of silence, a linear rise to `peak` over
/// `ramp_up_s`, a linear fall over `ramp_down_s`, and `rest_s` of silence.
pub fn generate_cue(
    ramp_up_s: f64,
    ramp_down_s: f64,
    peak: f64,
    sample_rate_hz: f64,
    rest_s: f64,
) -> Result<ExcitationTrajectory> {
    if ramp_up_s <= 0.0 || ramp_down_s <= 0.0 {
        return Err(Error::invalid("ramp durations must be positive"));
    }
    if sample_rate_hz <= 0.0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    if rest_s < 0.0 {
        return Err(Error::invalid("rest duration must be non-negative"));
    }
    if !(0.0..=1.0).contains(&peak) {
        return Err(Error::invalid("cue peak must lie in [0, 1]"));
    }
    let total_s = rest_s + ramp_up_s + ramp_down_s + rest_s;
    let len = (total_s * sample_rate_hz).round() as usize;
    let up_end = rest_s + ramp_up_s;
    let down_end = up_end + ramp_down_s;
    let values = (0..len)
        .map(|k| {
            let t = k as f64 / sample_rate_hz;
            if t < rest_s {
                0.0
            } else if t < up_end {
                peak * (t - rest_s) / ramp_up_s
            } else if t < down_end {
                peak * (1.0 - (t - up_end) / ramp_down_s)
            } else {
                0.0
            }
        })
        .collect();
    let mut traj = ExcitationTrajectory::new(values, sample_rate_hz)?;
    traj.cue = Some(CueShape {
        ramp_up_s,
        ramp_down_s,
        peak,
    });
    Ok(traj)
}

/// Per-source lists of discharge sample indices over a fixed recording window.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrainSet {
    trains: Vec<Vec<usize>>,
    source_labels: Vec<String>,
    sample_rate_hz: f64,
    duration_samples: usize,
}

impl SpikeTrainSet {
    pub fn new(
        trains: Vec<Vec<usize>>,
        source_labels: Vec<String>,
        sample_rate_hz: f64,
        duration_samples: usize,
    ) -> Result<Self> {
        if sample_rate_hz <= 0.0 {
            return Err(Error::invalid("spike train sample rate must be positive"));
        }
        if source_labels.len() != trains.len() {
            return Err(Error::DimensionMismatch {
                context: "source_labels",
                expected: trains.len(),
                actual: source_labels.len(),
            });
        }
        for (j, train) in trains.iter().enumerate() {
            for w in train.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::invalid(format!(
                        "train {j}: spike indices must be strictly increasing"
                    )));
                }
            }
            if let Some(&last) = train.last() {
                if last >= duration_samples {
                    return Err(Error::invalid(format!(
                        "train {j}: spike index {last} beyond duration {duration_samples}"
                    )));
                }
            }
        }
        Ok(Self {
            trains,
            source_labels,
            sample_rate_hz,
            duration_samples,
        })
    }

    pub fn trains(&self) -> &[Vec<usize>] {
        &self.trains
    }

    pub fn labels(&self) -> &[String] {
        &self.source_labels
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn duration_samples(&self) -> usize {
        self.duration_samples
    }

    pub fn source_count(&self) -> usize {
        self.trains.len()
    }

    pub fn total_spikes(&self) -> usize {
        self.trains.iter().map(Vec::len).sum()
    }

    /// Merges per-source trains of two sets defined over the same window.
    /// Sources are matched by position; spike sets must not collide.
    pub fn union(&self, other: &SpikeTrainSet) -> Result<SpikeTrainSet> {
        if self.trains.len() != other.trains.len()
            || self.duration_samples != other.duration_samples
            || self.sample_rate_hz != other.sample_rate_hz
        {
            return Err(Error::invalid("spike train sets are not congruent"));
        }
        let trains = self
            .trains
            .iter()
            .zip(&other.trains)
            .map(|(a, b)| {
                let mut merged: Vec<usize> = a.iter().chain(b.iter()).copied().collect();
                merged.sort_unstable();
                merged
            })
            .collect();
        SpikeTrainSet::new(
            trains,
            self.source_labels.clone(),
            self.sample_rate_hz,
            self.duration_samples,
        )
    }
}

/// Firing-statistics knobs of the renewal model.
#[derive(Debug, Clone, Copy)]
pub struct FiringParams {
    /// Coefficient of variation of the inter-spike interval jitter.
    pub isi_cv: f64,
    /// Absolute refractory period enforced on generated trains.
    pub refractory_ms: f64,
}

impl Default for FiringParams {
    fn default() -> Self {
        Self {
            isi_cv: 0.15,
            refractory_ms: 10.0,
        }
    }
}

/// Renewal-process spike trains for a pool driven by a common excitation.
///
/// A neuron is active while the excitation is at or above its recruitment
/// threshold (and non-zero); it fires immediately when recruited and then at a
/// rate interpolating linearly from `min_rate_hz` at recruitment to
/// `peak_rate_hz` at full drive, with seeded ISI jitter.
pub fn generate_spike_trains(
    pool: &MotorNeuronPool,
    excitation: &ExcitationTrajectory,
    emg_rate_hz: f64,
    params: &FiringParams,
    seed: u64,
) -> Result<SpikeTrainSet> {
    if pool.size() == 0 {
        return Err(Error::invalid("empty motor neuron pool"));
    }
    if emg_rate_hz < 2.0 * excitation.sample_rate_hz() {
        return Err(Error::invalid(format!(
            "EMG rate {emg_rate_hz} Hz must be at least twice the excitation rate {} Hz",
            excitation.sample_rate_hz()
        )));
    }
    if params.isi_cv < 0.0 || params.refractory_ms <= 0.0 {
        return Err(Error::invalid("firing parameters out of range"));
    }

    let n_samples = (excitation.duration_s() * emg_rate_hz).round() as usize;
    let refractory = (params.refractory_ms / 1000.0 * emg_rate_hz).round() as usize;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut trains = Vec::with_capacity(pool.size());
    for (j, neuron) in pool.neurons().iter().enumerate() {
        let mut r = rng(child_seed(seed, 0x5f, j as u64));
        let draw_target = |r: &mut crate::rng::Rng| -> f64 {
            if params.isi_cv == 0.0 {
                1.0
            } else {
                (1.0 + params.isi_cv * normal.sample(r)).max(0.1)
            }
        };

        let thr = neuron.recruitment_threshold;
        let mut spikes = Vec::new();
        let mut recruited = false;
        let mut phase = 0.0;
        let mut target = 1.0;
        let mut last_spike: Option<usize> = None;

        for k in 0..n_samples {
            let e = excitation.at(k as f64 / emg_rate_hz);
            let active = e > 0.0 && e >= thr;
            if !active {
                recruited = false;
                continue;
            }
            let ok_refractory = |last: Option<usize>| match last {
                Some(l) => k - l >= refractory,
                None => true,
            };
            if !recruited {
                recruited = true;
                phase = 0.0;
                target = draw_target(&mut r);
                if ok_refractory(last_spike) {
                    spikes.push(k);
                    last_spike = Some(k);
                }
                continue;
            }
            let drive = if thr < 1.0 {
                ((e - thr) / (1.0 - thr)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            let rate = neuron.min_rate_hz + drive * (neuron.peak_rate_hz - neuron.min_rate_hz);
            phase += rate / emg_rate_hz;
            if phase >= target && ok_refractory(last_spike) {
                spikes.push(k);
                last_spike = Some(k);
                phase = 0.0;
                target = draw_target(&mut r);
            }
        }
        trains.push(spikes);
    }

    let labels = (0..pool.size()).map(|j| format!("mn{j:03}")).collect();
    SpikeTrainSet::new(trains, labels, emg_rate_hz, n_samples)
}

/// Multichannel sampled EMG.
#[derive(Debug, Clone, PartialEq)]
pub struct EmgRecording {
    samples: Array2<f64>,
    sample_rate_hz: f64,
}

impl EmgRecording {
    pub fn new(samples: Array2<f64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::invalid("EMG recording needs at least one channel"));
        }
        if sample_rate_hz <= 0.0 {
            return Err(Error::invalid("EMG sample rate must be positive"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("EMG samples must be finite"));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn channel_count(&self) -> usize {
        self.samples.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.ncols()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }
}

/// Convolutive mixture of spike trains and MUAP templates plus white noise.
///
/// `noise_snr_db = None` disables noise entirely. Otherwise the noise variance
/// is set so that the clean mixture power over the noise power equals the
/// requested SNR; a silent mixture falls back to unit reference power.
pub fn synthesize_emg(
    spikes: &SpikeTrainSet,
    muaps: &MuapBank,
    noise_snr_db: Option<f64>,
    seed: u64,
) -> Result<EmgRecording> {
    if spikes.source_count() != muaps.neuron_count() {
        return Err(Error::DimensionMismatch {
            context: "synthesize_emg sources",
            expected: muaps.neuron_count(),
            actual: spikes.source_count(),
        });
    }
    let channels = muaps.channel_count();
    let len = spikes.duration_samples();
    let template_len = muaps.length();
    if len < template_len {
        return Err(Error::invalid(format!(
            "recording length {len} shorter than MUAP length {template_len}"
        )));
    }
    let fs = spikes.sample_rate_hz();

    let mut clean = Array2::<f64>::zeros((channels, len));
    for (j, train) in spikes.trains().iter().enumerate() {
        let template = muaps.template(j);
        let drift = muaps.amplitude_drift().map(|d| d[j]).unwrap_or(0.0);
        for &k0 in train {
            let scale = (1.0 + drift * k0 as f64 / fs).max(0.0);
            let span = template_len.min(len - k0);
            for c in 0..channels {
                for l in 0..span {
                    clean[(c, k0 + l)] += scale * template[(c, l)];
                }
            }
        }
    }

    if let Some(snr_db) = noise_snr_db {
        let clean_power = clean.iter().map(|x| x * x).sum::<f64>() / (channels * len) as f64;
        let reference = if clean_power > 0.0 { clean_power } else { 1.0 };
        let sigma = (reference / 10f64.powf(snr_db / 10.0)).sqrt();
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut r = rng(child_seed(seed, 0xe0, 0));
        for v in clean.iter_mut() {
            *v += normal.sample(&mut r);
        }
    }

    EmgRecording::new(clean, fs)
}

/// Per-DoF joint-angle time series in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsTrajectory {
    angles: Array2<f64>,
    dof_labels: Vec<String>,
    sample_rate_hz: f64,
}

impl KinematicsTrajectory {
    pub fn new(angles: Array2<f64>, dof_labels: Vec<String>, sample_rate_hz: f64) -> Result<Self> {
        if angles.nrows() == 0 {
            return Err(Error::invalid("kinematics needs at least one DoF"));
        }
        if dof_labels.len() != angles.nrows() {
            return Err(Error::DimensionMismatch {
                context: "dof_labels",
                expected: angles.nrows(),
                actual: dof_labels.len(),
            });
        }
        if sample_rate_hz <= 0.0 {
            return Err(Error::invalid("kinematics sample rate must be positive"));
        }
        if angles.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kinematics angles must be finite"));
        }
        Ok(Self {
            angles,
            dof_labels,
            sample_rate_hz,
        })
    }

    pub fn angles(&self) -> &Array2<f64> {
        &self.angles
    }

    pub fn dof_labels(&self) -> &[String] {
        &self.dof_labels
    }

    pub fn dof_count(&self) -> usize {
        self.angles.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.angles.ncols()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Copy restricted to samples `range` (used for trial splits).
    pub fn window(&self, range: std::ops::Range<usize>) -> Result<KinematicsTrajectory> {
        if range.end > self.sample_count() || range.is_empty() {
            return Err(Error::invalid("window out of range"));
        }
        let angles = self
            .angles
            .slice(ndarray::s![.., range.start..range.end])
            .to_owned();
        KinematicsTrajectory::new(angles, self.dof_labels.clone(), self.sample_rate_hz)
    }

    /// Bin-averaged copy at the spike-count bin rate: sample `b` of the output
    /// is the mean over the window `[b·bin, (b+1)·bin)`; a trailing partial
    /// bin is dropped. Used to time-align references with binned activity.
    pub fn bin_average(&self, bin_ms: f64, n_bins: usize) -> Result<KinematicsTrajectory> {
        if bin_ms <= 0.0 {
            return Err(Error::invalid("bin size must be positive"));
        }
        let bin_samples = bin_ms / 1000.0 * self.sample_rate_hz;
        let mut out = Array2::zeros((self.dof_count(), n_bins));
        for b in 0..n_bins {
            let start = (b as f64 * bin_samples).round() as usize;
            let end = (((b + 1) as f64) * bin_samples).round() as usize;
            let end = end.min(self.sample_count());
            if start >= end {
                return Err(Error::invalid(format!(
                    "bin {b} exceeds the kinematics record"
                )));
            }
            for d in 0..self.dof_count() {
                let mut acc = 0.0;
                for k in start..end {
                    acc += self.angles[(d, k)];
                }
                out[(d, b)] = acc / (end - start) as f64;
            }
        }
        KinematicsTrajectory::new(out, self.dof_labels.clone(), 1000.0 / bin_ms)
    }
}

/// Mirror-side ground truth: each DoF's angle is its drive passed through the
/// same first-order smoother the decoder uses, scaled to `gain` degrees.
pub fn generate_reference_kinematics(
    excitations: &[ExcitationTrajectory],
    gains_deg: &[f64],
    cutoff_hz: f64,
    dof_labels: &[String],
) -> Result<KinematicsTrajectory> {
    if excitations.is_empty() {
        return Err(Error::invalid("need one excitation per DoF"));
    }
    if gains_deg.len() != excitations.len() || dof_labels.len() != excitations.len() {
        return Err(Error::DimensionMismatch {
            context: "reference kinematics inputs",
            expected: excitations.len(),
            actual: gains_deg.len().min(dof_labels.len()),
        });
    }
    let rate = excitations[0].sample_rate_hz();
    let len = excitations[0].len();
    if excitations
        .iter()
        .any(|e| e.sample_rate_hz() != rate || e.len() != len)
    {
        return Err(Error::invalid("excitations must share rate and length"));
    }
    let alpha = decode::smoothing_alpha(cutoff_hz, rate)?;
    let mut angles = Array2::zeros((excitations.len(), len));
    for (d, exc) in excitations.iter().enumerate() {
        let filtered = decode::lowpass(exc.values(), alpha);
        for (k, v) in filtered.into_iter().enumerate() {
            angles[(d, k)] = gains_deg[d] * v;
        }
    }
    KinematicsTrajectory::new(angles, dof_labels.to_vec(), rate)
}

/// Outputs of a full synthetic scene: the EMG, the ground-truth trains that
/// produced it, the per-DoF excitations, and the reference kinematics.
#[derive(Debug, Clone)]
pub struct Scene {
    pub emg: EmgRecording,
    pub truth: SpikeTrainSet,
    pub excitations: Vec<ExcitationTrajectory>,
    pub reference: KinematicsTrajectory,
    /// Duration of one trial in seconds (all trials are congruent).
    pub trial_s: f64,
    pub trials: usize,
}

/// Builds the configured multi-DoF, multi-trial scene.
///
/// Each DoF drives its own recruitment ladder of `neurons_per_dof` neurons;
/// within a trial the DoF cues are staggered by `stagger_s` so concurrent
/// drives stay linearly independent. All trains share one MUAP bank across
/// `channels` electrodes.
pub fn simulate_scene(cfg: &SimConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let dofs = cfg.dof_labels.len();
    let trial_s =
        2.0 * cfg.rest_s + cfg.ramp_up_s + cfg.ramp_down_s + cfg.stagger_s * (dofs - 1) as f64;

    // Per-DoF excitation over all trials.
    let ex_rate = cfg.excitation_rate_hz;
    let cue = generate_cue(
        cfg.ramp_up_s,
        cfg.ramp_down_s,
        cfg.peak,
        ex_rate,
        cfg.rest_s,
    )?;
    let trial_len = (trial_s * ex_rate).round() as usize;
    let mut excitations = Vec::with_capacity(dofs);
    for d in 0..dofs {
        let lead = (d as f64 * cfg.stagger_s * ex_rate).round() as usize;
        let mut trial_values = vec![0.0; trial_len];
        for (k, &v) in cue.values().iter().enumerate() {
            if lead + k < trial_len {
                trial_values[lead + k] = v;
            }
        }
        let full: Vec<f64> = std::iter::repeat_n(trial_values.iter().copied(), cfg.trials)
            .flatten()
            .collect();
        excitations.push(ExcitationTrajectory::new(full, ex_rate)?);
    }

    // Per-DoF pools, merged into one spike train set.
    let firing = FiringParams {
        isi_cv: cfg.isi_cv,
        refractory_ms: cfg.refractory_ms,
    };
    let mut trains = Vec::new();
    let mut labels = Vec::new();
    let mut duration = 0;
    for (d, exc) in excitations.iter().enumerate() {
        let pool = MotorNeuronPool::recruitment_ladder(
            cfg.neurons_per_dof,
            cfg.threshold_min,
            cfg.threshold_max,
            cfg.min_rate_hz,
            cfg.peak_rate_hz,
        )?;
        let set = generate_spike_trains(
            &pool,
            exc,
            cfg.sample_rate_hz,
            &firing,
            child_seed(seed, 0xd0, d as u64),
        )?;
        duration = set.duration_samples();
        for (j, train) in set.trains().iter().enumerate() {
            trains.push(train.clone());
            labels.push(format!("{}_mn{j:03}", cfg.dof_labels[d]));
        }
    }
    let truth = SpikeTrainSet::new(trains, labels, cfg.sample_rate_hz, duration)?;

    let total_neurons = cfg.neurons_per_dof * dofs;
    let mut bank = MuapBank::generate(
        total_neurons,
        cfg.channels,
        cfg.muap_length,
        child_seed(seed, 0xb0, 0),
    )?;
    if cfg.amplitude_drift_per_s != 0.0 {
        bank = bank.with_drift(vec![cfg.amplitude_drift_per_s; total_neurons])?;
    }

    let emg = synthesize_emg(&truth, &bank, Some(cfg.snr_db), child_seed(seed, 0xc0, 0))?;

    let reference = generate_reference_kinematics(
        &excitations,
        &cfg.kinematics_gains_deg,
        cfg.reference_cutoff_hz,
        &cfg.dof_labels,
    )?;

    Ok(Scene {
        emg,
        truth,
        excitations,
        reference,
        trial_s,
        trials: cfg.trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn cue_oracle(t: f64, rest: f64, up: f64, down: f64, peak: f64) -> f64 {
        // Independent piecewise-linear evaluation.
        if t < rest {
            0.0
        } else if t < rest + up {
            peak * (t - rest) / up
        } else if t < rest + up + down {
            peak - peak * (t - rest - up) / down
        } else {
            0.0
        }
    }

    #[test]
    fn cue_is_a_flanked_trapezoid() {
        let c = generate_cue(3.0, 3.0, 1.0, 20.0, 1.0).unwrap();
        assert_eq!(c.len(), 160);
        assert!((c.values()[80] - 1.0).abs() < 1e-12);
        for k in 0..20 {
            assert_eq!(c.values()[k], 0.0);
        }
        for k in 140..160 {
            assert_eq!(c.values()[k], 0.0);
        }
        for (k, &v) in c.values().iter().enumerate() {
            let want = cue_oracle(k as f64 / 20.0, 1.0, 3.0, 3.0, 1.0);
            assert!((v - want).abs() < 1e-12, "sample {k}");
        }
    }

    #[test]
    fn cue_zero_peak_is_all_zero() {
        let c = generate_cue(1.0, 1.0, 0.0, 20.0, 0.0).unwrap();
        assert!(c.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cue_half_ramp_value() {
        let c = generate_cue(1.0, 1.0, 0.5, 10.0, 0.0).unwrap();
        assert!((c.values()[5] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn cue_rejects_bad_arguments() {
        assert!(generate_cue(0.0, 1.0, 0.5, 10.0, 0.0).is_err());
        assert!(generate_cue(1.0, -1.0, 0.5, 10.0, 0.0).is_err());
        assert!(generate_cue(1.0, 1.0, 0.5, 0.0, 0.0).is_err());
        assert!(generate_cue(1.0, 1.0, 1.5, 10.0, 0.0).is_err());
    }

    #[test]
    fn pool_enforces_size_principle_ordering() {
        let bad = vec![
            MotorNeuron {
                recruitment_threshold: 0.3,
                min_rate_hz: 8.0,
                peak_rate_hz: 30.0,
            },
            MotorNeuron {
                recruitment_threshold: 0.2,
                min_rate_hz: 8.0,
                peak_rate_hz: 30.0,
            },
        ];
        assert!(MotorNeuronPool::new(bad).is_err());
        assert!(MotorNeuronPool::recruitment_ladder(5, 0.05, 0.75, 8.0, 30.0).is_ok());
        assert!(MotorNeuronPool::recruitment_ladder(3, 0.1, 0.5, 30.0, 8.0).is_err());
    }

    #[test]
    fn zero_drive_produces_no_spikes() {
        let pool = MotorNeuronPool::recruitment_ladder(4, 0.05, 0.5, 8.0, 30.0).unwrap();
        let exc = ExcitationTrajectory::new(vec![0.0; 200], 20.0).unwrap();
        let set = generate_spike_trains(&pool, &exc, 2048.0, &FiringParams::default(), 1).unwrap();
        assert!(set.trains().iter().all(|t| t.is_empty()));
    }

    #[test]
    fn constant_full_drive_spike_count_matches_rate() {
        // Oracle: count = duration × rate for a jitter-free renewal process.
        let pool = MotorNeuronPool::new(vec![MotorNeuron {
            recruitment_threshold: 0.0,
            min_rate_hz: 1.0,
            peak_rate_hz: 20.0,
        }])
        .unwrap();
        let exc = ExcitationTrajectory::new(vec![1.0; 200], 20.0).unwrap();
        assert!((exc.duration_s() - 10.0).abs() < 1e-12);
        let params = FiringParams {
            isi_cv: 0.0,
            refractory_ms: 10.0,
        };
        let set = generate_spike_trains(&pool, &exc, 2048.0, &params, 7).unwrap();
        let count = set.trains()[0].len() as i64;
        assert!((count - 200).abs() <= 1, "got {count} spikes");
    }

    #[test]
    fn spike_trains_are_deterministic() {
        let pool = MotorNeuronPool::recruitment_ladder(6, 0.05, 0.6, 8.0, 30.0).unwrap();
        let exc = generate_cue(3.0, 3.0, 1.0, 20.0, 1.0).unwrap();
        let a = generate_spike_trains(&pool, &exc, 2048.0, &FiringParams::default(), 9).unwrap();
        let b = generate_spike_trains(&pool, &exc, 2048.0, &FiringParams::default(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_spikes_follow_recruitment_order() {
        // Give later-recruited neurons much faster rates; the ordering must
        // still hold because the first spike lands at the recruitment instant.
        let neurons = (0..8)
            .map(|i| MotorNeuron {
                recruitment_threshold: 0.05 + 0.1 * i as f64,
                min_rate_hz: 5.0 + i as f64 * 4.0,
                peak_rate_hz: 30.0 + i as f64 * 10.0,
            })
            .collect();
        let pool = MotorNeuronPool::new(neurons).unwrap();
        let ramp: Vec<f64> = (0..400).map(|k| k as f64 / 399.0).collect();
        let exc = ExcitationTrajectory::new(ramp, 40.0).unwrap();
        let set = generate_spike_trains(&pool, &exc, 2048.0, &FiringParams::default(), 3).unwrap();
        let firsts: Vec<Option<usize>> = set.trains().iter().map(|t| t.first().copied()).collect();
        for w in firsts.windows(2) {
            if let (Some(a), Some(b)) = (w[0], w[1]) {
                assert!(b >= a, "recruitment order violated: {a} then {b}");
            }
        }
    }

    #[test]
    fn trains_respect_refractory_period() {
        let pool = MotorNeuronPool::recruitment_ladder(3, 0.05, 0.3, 8.0, 35.0).unwrap();
        let exc = generate_cue(3.0, 3.0, 1.0, 20.0, 1.0).unwrap();
        let set = generate_spike_trains(&pool, &exc, 2048.0, &FiringParams::default(), 5).unwrap();
        let refr = (0.010_f64 * 2048.0).round() as usize;
        for train in set.trains() {
            for w in train.windows(2) {
                assert!(w[1] - w[0] >= refr);
            }
        }
    }

    #[test]
    fn synthesis_places_single_template_exactly() {
        // Direct convolution oracle: one spike, one channel, template [1,2,1].
        let spikes = SpikeTrainSet::new(vec![vec![100]], vec!["s".into()], 1000.0, 200).unwrap();
        let bank = MuapBank::new(vec![arr2(&[[1.0, 2.0, 1.0]])], None).unwrap();
        let emg = synthesize_emg(&spikes, &bank, None, 0).unwrap();
        for k in 0..200 {
            let want = match k {
                100 => 1.0,
                101 => 2.0,
                102 => 1.0,
                _ => 0.0,
            };
            assert_eq!(emg.samples()[(0, k)], want, "sample {k}");
        }
    }

    #[test]
    fn silent_sources_give_pure_noise_at_reference_power() {
        let spikes = SpikeTrainSet::new(vec![vec![]], vec!["s".into()], 2048.0, 40_960).unwrap();
        let bank = MuapBank::generate(1, 8, 30, 1).unwrap();
        let snr_db = 20.0;
        let emg = synthesize_emg(&spikes, &bank, Some(snr_db), 3).unwrap();
        let power = emg.samples().iter().map(|x| x * x).sum::<f64>()
            / (emg.channel_count() * emg.sample_count()) as f64;
        let want = 10f64.powf(-snr_db / 10.0);
        assert!(
            (power - want).abs() < 0.05 * want,
            "noise power {power}, wanted {want}"
        );
    }

    #[test]
    fn synthesis_is_linear_over_disjoint_trains() {
        let bank = MuapBank::generate(2, 4, 20, 11).unwrap();
        let a = SpikeTrainSet::new(
            vec![vec![50, 300], vec![120]],
            vec!["a".into(), "b".into()],
            1000.0,
            600,
        )
        .unwrap();
        let b = SpikeTrainSet::new(
            vec![vec![170, 450], vec![520]],
            vec!["a".into(), "b".into()],
            1000.0,
            600,
        )
        .unwrap();
        let ab = a.union(&b).unwrap();
        let x_a = synthesize_emg(&a, &bank, None, 0).unwrap();
        let x_b = synthesize_emg(&b, &bank, None, 0).unwrap();
        let x_ab = synthesize_emg(&ab, &bank, None, 0).unwrap();
        // Spikes are separated by more than the template length, so the sum
        // must be reproduced bit for bit.
        for (i, (&u, (&v, &w))) in x_ab
            .samples()
            .iter()
            .zip(x_a.samples().iter().zip(x_b.samples().iter()))
            .enumerate()
        {
            assert_eq!(u, v + w, "sample {i}");
        }
    }

    #[test]
    fn synthesis_rejects_count_mismatch() {
        let spikes = SpikeTrainSet::new(vec![vec![10]], vec!["s".into()], 1000.0, 100).unwrap();
        let bank = MuapBank::generate(2, 4, 20, 1).unwrap();
        assert!(synthesize_emg(&spikes, &bank, None, 0).is_err());
    }

    #[test]
    fn reference_kinematics_tracks_gain() {
        // Constant full drive: the DC gain of the smoother is exactly one, so
        // the angle converges to the gain.
        let exc = ExcitationTrajectory::new(vec![1.0; 400], 20.0).unwrap();
        let traj =
            generate_reference_kinematics(&[exc], &[90.0], 1.0, &["EF".to_string()]).unwrap();
        let last = traj.angles()[(0, 399)];
        assert!((last - 90.0).abs() < 0.9, "settled at {last}");
        // Zero drive stays at zero.
        let zero = ExcitationTrajectory::new(vec![0.0; 100], 20.0).unwrap();
        let traj0 =
            generate_reference_kinematics(&[zero], &[90.0], 1.0, &["EF".to_string()]).unwrap();
        assert!(traj0.angles().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reference_kinematics_peak_close_to_gain_after_settling() {
        // Step-response oracle: with time constant τ = 1/(2πf) and ramp time T,
        // a up/down trapezoid peaks at gain·(1 − ln2·τ/T); T = 8 s at 1 Hz
        // leaves the peak within 2% of the gain.
        let exc = generate_cue(8.0, 8.0, 1.0, 50.0, 1.0).unwrap();
        let traj =
            generate_reference_kinematics(&[exc], &[90.0], 1.0, &["EF".to_string()]).unwrap();
        let peak = traj.angles().iter().cloned().fold(f64::MIN, f64::max);
        assert!((peak - 90.0).abs() < 0.02 * 90.0, "peak {peak}");
        let tau = 1.0 / (2.0 * std::f64::consts::PI);
        let oracle = 90.0 * (1.0 - std::f64::consts::LN_2 * tau / 8.0);
        assert!(
            (peak - oracle).abs() < 0.01 * 90.0,
            "peak {peak} vs oracle {oracle}"
        );
    }

    #[test]
    fn bin_average_downsamples_reference() {
        let angles = Array2::from_shape_fn((1, 100), |(_, k)| k as f64);
        let traj = KinematicsTrajectory::new(angles, vec!["EF".into()], 100.0).unwrap();
        let binned = traj.bin_average(50.0, 20).unwrap();
        assert_eq!(binned.sample_count(), 20);
        // First 50 ms window covers samples 0..5 → mean 2.
        assert!((binned.angles()[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((binned.sample_rate_hz() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn scene_is_deterministic_and_consistent() {
        let cfg = SimConfig {
            channels: 8,
            neurons_per_dof: 3,
            dof_labels: vec!["EF".into(), "WP".into()],
            kinematics_gains_deg: vec![90.0, 80.0],
            trials: 2,
            ..SimConfig::default()
        };
        let a = simulate_scene(&cfg, 42).unwrap();
        let b = simulate_scene(&cfg, 42).unwrap();
        assert_eq!(a.emg, b.emg);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.reference, b.reference);
        assert_eq!(a.truth.source_count(), 6);
        assert_eq!(a.emg.channel_count(), 8);
        let want_len = (a.trial_s * 2.0 * cfg.sample_rate_hz).round() as usize;
        assert_eq!(a.emg.sample_count(), want_len);
    }
}
