//! Performance quantification and the robustness studies: multivariate R²,
//! spike-train matching against ground truth, reduced-channel sweeps,
//! time-multiplexed acquisition, and the adaptive-vs-fixed thresholding
//! comparison.

use ndarray::Array2;
use rand::Rng as _;

use crate::bss;
use crate::config::{BssConfig, DecodeConfig, DetectorKind, MuxSelection, MuxSetupConfig};
use crate::decode::{self, BinnedActivity};
use crate::error::{Error, Result};
use crate::linalg::quantile;
use crate::rng::{child_seed, rng};
use crate::sim::{EmgRecording, KinematicsTrajectory, SpikeTrainSet};

/// Pooled multivariate R²: `1 − SSE/SST` over all DoFs and samples, with SST
/// taken about the per-DoF reference means. 1 means perfect reconstruction;
/// the value may be negative.
pub fn multivariate_r2(
    est: &KinematicsTrajectory,
    reference: &KinematicsTrajectory,
) -> Result<f64> {
    if est.dof_labels() != reference.dof_labels() {
        return Err(Error::invalid(
            "DoF labels differ between est and reference",
        ));
    }
    if est.sample_count() != reference.sample_count() {
        return Err(Error::DimensionMismatch {
            context: "multivariate_r2",
            expected: reference.sample_count(),
            actual: est.sample_count(),
        });
    }
    let t = reference.sample_count();
    let mut sse = 0.0;
    let mut sst = 0.0;
    for d in 0..reference.dof_count() {
        let mean = reference.angles().row(d).sum() / t as f64;
        for k in 0..t {
            let r = reference.angles()[(d, k)];
            let e = est.angles()[(d, k)];
            sse += (e - r) * (e - r);
            sst += (r - mean) * (r - mean);
        }
    }
    if sst == 0.0 {
        return Err(Error::UndefinedMetric(
            "reference is constant (zero total variation)".into(),
        ));
    }
    Ok(1.0 - sse / sst)
}

/// Best-lag agreement between one truth train and one detected train.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    /// Rate of agreement: common / (truth + detected − common).
    pub roa: f64,
    /// Lag (in samples) applied to the detected train at the optimum.
    pub lag: i64,
    /// Matched spikes at that lag.
    pub common: usize,
}

// Matched-pair count between two sorted trains with `detected` shifted left
// by `lag` and a ±tolerance, each spike used at most once.
fn matched_count(truth: &[usize], detected: &[usize], lag: i64, tol: i64) -> usize {
    let mut i = 0;
    let mut j = 0;
    let mut common = 0;
    while i < truth.len() && j < detected.len() {
        let a = truth[i] as i64;
        let b = detected[j] as i64 - lag;
        if (a - b).abs() <= tol {
            common += 1;
            i += 1;
            j += 1;
        } else if b < a {
            j += 1;
        } else {
            i += 1;
        }
    }
    common
}

/// Scans constant lags in ±`max_lag` samples and returns the best agreement.
/// The lag search absorbs the delay ambiguity of extended sources.
pub fn rate_of_agreement(
    truth: &[usize],
    detected: &[usize],
    tol_samples: i64,
    max_lag_samples: i64,
) -> Agreement {
    if truth.is_empty() && detected.is_empty() {
        return Agreement {
            roa: 0.0,
            lag: 0,
            common: 0,
        };
    }
    let mut best = Agreement {
        roa: 0.0,
        lag: 0,
        common: 0,
    };
    for lag in -max_lag_samples..=max_lag_samples {
        let common = matched_count(truth, detected, lag, tol_samples);
        let denom = truth.len() + detected.len() - common;
        let roa = if denom == 0 {
            0.0
        } else {
            common as f64 / denom as f64
        };
        if roa > best.roa {
            best = Agreement { roa, lag, common };
        }
    }
    best
}

/// One greedily matched (truth neuron, detected source) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub truth_index: usize,
    pub source_index: usize,
    pub agreement: Agreement,
}

/// Greedy matching of detected sources to ground-truth neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    /// Pairs in descending rate-of-agreement order, without replacement.
    pub pairs: Vec<MatchedPair>,
    /// Truth neurons matched with at least `min_roa`.
    pub matched_neurons: usize,
    pub truth_neurons: usize,
    /// matched_neurons / truth_neurons.
    pub neuron_recall: f64,
    /// Spikes recovered across all greedy pairs over all truth spikes;
    /// unlike `neuron_recall`, no RoA floor applies, so partial detection of
    /// a drifting source still counts.
    pub spike_recall: f64,
}

/// Matches detected sources to truth neurons greedily by descending rate of
/// agreement, one source per neuron.
pub fn match_sources(
    truth: &SpikeTrainSet,
    detected: &SpikeTrainSet,
    tol_ms: f64,
    max_lag_ms: f64,
    min_roa: f64,
) -> MatchReport {
    let fs = truth.sample_rate_hz();
    let tol = (tol_ms / 1000.0 * fs).round() as i64;
    let max_lag = (max_lag_ms / 1000.0 * fs).round() as i64;

    let mut candidates: Vec<MatchedPair> = Vec::new();
    for (ti, t) in truth.trains().iter().enumerate() {
        for (si, s) in detected.trains().iter().enumerate() {
            let agreement = rate_of_agreement(t, s, tol, max_lag);
            if agreement.roa > 0.0 {
                candidates.push(MatchedPair {
                    truth_index: ti,
                    source_index: si,
                    agreement,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.agreement
            .roa
            .partial_cmp(&a.agreement.roa)
            .unwrap()
            .then(a.truth_index.cmp(&b.truth_index))
            .then(a.source_index.cmp(&b.source_index))
    });

    let mut truth_taken = vec![false; truth.source_count()];
    let mut source_taken = vec![false; detected.source_count()];
    let mut pairs = Vec::new();
    for p in candidates {
        if !truth_taken[p.truth_index] && !source_taken[p.source_index] {
            truth_taken[p.truth_index] = true;
            source_taken[p.source_index] = true;
            pairs.push(p);
        }
    }

    let matched_neurons = pairs.iter().filter(|p| p.agreement.roa >= min_roa).count();
    let total_truth_spikes: usize = truth.trains().iter().map(Vec::len).sum();
    let matched_spikes: usize = pairs.iter().map(|p| p.agreement.common).sum();
    let truth_neurons = truth.source_count();
    MatchReport {
        pairs,
        matched_neurons,
        truth_neurons,
        neuron_recall: if truth_neurons == 0 {
            0.0
        } else {
            matched_neurons as f64 / truth_neurons as f64
        },
        spike_recall: if total_truth_spikes == 0 {
            0.0
        } else {
            matched_spikes as f64 / total_truth_spikes as f64
        },
    }
}

/// Uniform trial layout in bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSplit {
    pub bins_per_trial: usize,
    pub trials: usize,
    pub train_trials: usize,
}

impl TrialSplit {
    pub fn new(trial_s: f64, bin_ms: f64, trials: usize, train_trials: usize) -> Result<Self> {
        if trials < 2 || train_trials == 0 || train_trials >= trials {
            return Err(Error::invalid(format!(
                "need 1 ≤ train_trials ({train_trials}) < trials ({trials}) ≥ 2"
            )));
        }
        let bins_per_trial = (trial_s * 1000.0 / bin_ms + 1e-9).floor() as usize;
        if bins_per_trial < 2 {
            return Err(Error::invalid("trials shorter than two bins"));
        }
        Ok(Self {
            bins_per_trial,
            trials,
            train_trials,
        })
    }

    pub fn total_bins(&self) -> usize {
        self.bins_per_trial * self.trials
    }

    pub fn train_bins(&self) -> std::ops::Range<usize> {
        0..self.bins_per_trial * self.train_trials
    }

    pub fn test_bins(&self) -> std::ops::Range<usize> {
        self.bins_per_trial * self.train_trials..self.total_bins()
    }

    pub fn first_trial_bins(&self) -> std::ops::Range<usize> {
        0..self.bins_per_trial
    }
}

/// Binned inputs shared by every run of a study: raw counts for all channels,
/// the bin-aligned reference, and the trial split.
#[derive(Debug, Clone)]
pub struct PreparedDecode {
    pub binned: BinnedActivity,
    pub reference: KinematicsTrajectory,
    pub split: TrialSplit,
}

/// Bins the spike trains and the reference once for a whole study.
pub fn prepare_decode(
    musts: &SpikeTrainSet,
    reference: &KinematicsTrajectory,
    cfg: &DecodeConfig,
    trial_s: f64,
    trials: usize,
) -> Result<PreparedDecode> {
    cfg.validate()?;
    let split = TrialSplit::new(trial_s, cfg.bin_ms, trials, cfg.train_trials)?;
    let duration_s = trial_s * trials as f64;
    let binned = decode::bin_spikes(musts, cfg.bin_ms, duration_s)?;
    if binned.bins() < split.total_bins() {
        return Err(Error::invalid(format!(
            "recording yields {} bins, trial layout needs {}",
            binned.bins(),
            split.total_bins()
        )));
    }
    let reference = reference.bin_average(cfg.bin_ms, split.total_bins())?;
    Ok(PreparedDecode {
        binned,
        reference,
        split,
    })
}

/// Result of one end-to-end decode fit/evaluation.
#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub r2_train: f64,
    pub r2_test: f64,
    pub model: decode::ProjectionModel,
    pub estimate_train: KinematicsTrajectory,
    pub estimate_test: KinematicsTrajectory,
}

fn rows_to_binned(
    source: &BinnedActivity,
    range: std::ops::Range<usize>,
) -> Result<BinnedActivity> {
    BinnedActivity::new(
        source.rows(range),
        source.bin_ms(),
        source.column_labels().to_vec(),
    )
}

/// Fits the projection on the training trials and evaluates train/test R².
///
/// `columns` restricts the channel set, `mux` applies a multiplexing schedule
/// to the raw counts before smoothing. The projection dimension is clamped to
/// what the subset can support (small subsets cannot span the configured
/// manifold); training data that is rank-deficient below the DoF count still
/// fails.
pub fn run_decode(
    prepared: &PreparedDecode,
    columns: Option<&[usize]>,
    mux: Option<&MuxSchedule>,
    cfg: &DecodeConfig,
) -> Result<DecodeOutcome> {
    let selected = match columns {
        Some(cols) => prepared.binned.select_columns(cols)?,
        None => prepared.binned.clone(),
    };
    let muxed = match mux {
        Some(schedule) => time_multiplex(&selected, schedule)?,
        None => selected,
    };
    let smoothed = decode::smooth(&muxed, cfg.cutoff_hz)?;

    let split = prepared.split;
    let train = rows_to_binned(&smoothed, split.train_bins())?;
    let test = rows_to_binned(&smoothed, split.test_bins())?;
    let ref_train = prepared.reference.window(split.train_bins())?;
    let ref_test = prepared.reference.window(split.test_bins())?;

    let d_cap = cfg.dims.min(train.channels()).min(train.bins());
    let model = match decode::fit_pca(&train, d_cap) {
        Ok(m) => m,
        Err(Error::RankDeficient { rank, .. }) if rank >= ref_train.dof_count() && rank > 0 => {
            decode::fit_pca(&train, rank)?
        }
        Err(e) => return Err(e),
    };
    let model = model.with_smoothing_cutoff(cfg.cutoff_hz);
    let rotation = decode::varimax(model.loadings(), cfg.varimax_tol, cfg.varimax_max_sweeps)?;
    let mut model = decode::rotate_model(&model, &rotation)?;
    let train_scores = model.transform(&train)?;
    decode::assign_dofs(
        &mut model,
        &train_scores,
        &ref_train,
        split.first_trial_bins(),
        cfg.corr_floor,
    )?;
    let estimate_train = decode::project(&model, &train)?;
    let estimate_test = decode::project(&model, &test)?;
    let r2_train = multivariate_r2(&estimate_train, &ref_train)?;
    let r2_test = multivariate_r2(&estimate_test, &ref_test)?;
    Ok(DecodeOutcome {
        r2_train,
        r2_test,
        model,
        estimate_train,
        estimate_test,
    })
}

/// Aggregate statistics over the runs of one sweep entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub values: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

impl RunStats {
    pub fn from_values(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "stats over zero runs");
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = if values.len() < 2 {
            0.0
        } else {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        };
        RunStats {
            mean,
            variance,
            median: quantile(&values, 0.5),
            p25: quantile(&values, 0.25),
            p75: quantile(&values, 0.75),
            values,
        }
    }
}

/// One row of a study report: a subset size or a multiplexing setup.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub label: String,
    /// Channel count of the entry, when it is size-like.
    pub size: Option<usize>,
    pub train: RunStats,
    pub test: RunStats,
}

/// Results of a sweep: one entry per size/setup, each over the same number of
/// per-run evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub seed: u64,
    pub runs: usize,
    pub warnings: Vec<String>,
}

// Evaluation thread pool, capped by MYODECODE_THREADS when set.
fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var("MYODECODE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

fn sample_without_replacement(total: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..total).collect();
    let mut r = rng(seed);
    for i in 0..k {
        let j = r.gen_range(i..total);
        indices.swap(i, j);
    }
    let mut chosen: Vec<usize> = indices[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Reduced-channel robustness sweep: for every size and run, draws that many
/// channels without replacement, refits the whole decode pipeline on the
/// training trials, and evaluates train/test R². Child seeds are keyed by
/// (size, run), so extending the run count never changes earlier draws.
#[allow(clippy::too_many_arguments)]
pub fn reduced_set_sweep(
    musts: &SpikeTrainSet,
    reference: &KinematicsTrajectory,
    sizes: &[usize],
    runs: usize,
    seed: u64,
    cfg: &DecodeConfig,
    trial_s: f64,
    trials: usize,
) -> Result<SweepReport> {
    if runs == 0 {
        return Err(Error::invalid("need at least one run"));
    }
    let prepared = prepare_decode(musts, reference, cfg, trial_s, trials)?;
    let available = prepared.binned.channels();

    let mut warnings = Vec::new();
    let mut usable = Vec::new();
    for &size in sizes {
        if size == 0 {
            warnings.push("skipping size 0".to_string());
        } else if size > available {
            warnings.push(format!(
                "skipping size {size}: only {available} channels available"
            ));
        } else {
            usable.push(size);
        }
    }

    // A small random subset can leave a DoF without any correlated
    // component; the study records the resulting (poor) R² instead of
    // aborting, which is precisely the low-size outlier behavior the sweep
    // measures. Selection is unchanged where the floor would not bind.
    let run_cfg = DecodeConfig {
        corr_floor: 0.0,
        ..cfg.clone()
    };
    let tasks: Vec<(usize, usize)> = usable
        .iter()
        .flat_map(|&size| (0..runs).map(move |run| (size, run)))
        .collect();
    let results: Result<Vec<(f64, f64)>> = thread_pool().install(|| {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .map(|&(size, run)| {
                let child = child_seed(seed, size as u64, run as u64);
                let columns = sample_without_replacement(available, size, child);
                let outcome = run_decode(&prepared, Some(&columns), None, &run_cfg)?;
                Ok((outcome.r2_train, outcome.r2_test))
            })
            .collect()
    });
    let results = results?;

    let mut entries = Vec::new();
    for (si, &size) in usable.iter().enumerate() {
        let slice = &results[si * runs..(si + 1) * runs];
        entries.push(SweepEntry {
            label: format!("size-{size}"),
            size: Some(size),
            train: RunStats::from_values(slice.iter().map(|r| r.0).collect()),
            test: RunStats::from_values(slice.iter().map(|r| r.1).collect()),
        });
    }
    Ok(SweepReport {
        entries,
        seed,
        runs,
        warnings,
    })
}

/// A concrete time-multiplexing schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuxSchedule {
    /// Channels the schedule covers; the input must have exactly this many.
    pub scheduled_channels: usize,
    /// Channels read fresh per block.
    pub subset_size: usize,
    /// Block duration T_B in milliseconds.
    pub block_ms: f64,
    /// Switchings N per revisit cycle.
    pub switches: usize,
    pub selection: MuxSelection,
    pub seed: u64,
}

impl MuxSchedule {
    pub fn from_config(cfg: &MuxSetupConfig, seed: u64) -> Self {
        MuxSchedule {
            scheduled_channels: cfg.scheduled_channels,
            subset_size: cfg.subset_size,
            block_ms: cfg.block_ms,
            switches: cfg.switches,
            selection: cfg.selection,
            seed,
        }
    }

    /// Revisit time T_R = N × T_B, exactly.
    pub fn revisit_ms(&self) -> f64 {
        self.switches as f64 * self.block_ms
    }

    pub fn validate(&self) -> Result<()> {
        if self.subset_size == 0 || self.switches == 0 || self.scheduled_channels == 0 {
            return Err(Error::invalid("schedule counts must be positive"));
        }
        if self.subset_size > self.scheduled_channels {
            return Err(Error::invalid("subset larger than the scheduled set"));
        }
        if self.subset_size * self.switches < self.scheduled_channels {
            return Err(Error::invalid(
                "subset_size × switches must cover every scheduled channel",
            ));
        }
        if self.block_ms <= 0.0 {
            return Err(Error::invalid("block duration must be positive"));
        }
        Ok(())
    }
}

/// Expands a schedule into per-block channel subsets for `n_blocks` blocks.
///
/// Within one revisit cycle of N blocks every scheduled channel appears at
/// least once; when subset_size × N exceeds the channel count the final block
/// is padded by re-drawing from channels already visited this cycle.
pub fn expand_schedule(schedule: &MuxSchedule, n_blocks: usize) -> Result<Vec<Vec<usize>>> {
    schedule.validate()?;
    let c = schedule.scheduled_channels;
    let n = schedule.switches;
    let mut blocks = Vec::with_capacity(n_blocks);
    let mut cycle = 0u64;
    'outer: loop {
        let order: Vec<usize> = match schedule.selection {
            MuxSelection::Periodic => (0..c).collect(),
            MuxSelection::Random => {
                let mut v: Vec<usize> = (0..c).collect();
                let mut r = rng(child_seed(schedule.seed, 0x30c, cycle));
                for i in (1..c).rev() {
                    let j = r.gen_range(0..=i);
                    v.swap(i, j);
                }
                v
            }
        };
        for b in 0..n {
            if blocks.len() == n_blocks {
                break 'outer;
            }
            let start = b * schedule.subset_size;
            let mut subset = Vec::with_capacity(schedule.subset_size);
            for k in 0..schedule.subset_size {
                // Indices past the end wrap onto already-visited channels.
                subset.push(order[(start + k) % c]);
            }
            subset.sort_unstable();
            subset.dedup();
            blocks.push(subset);
        }
        cycle += 1;
    }
    Ok(blocks)
}

/// Core multiplexing reconstruction over explicit per-block subsets: fresh
/// columns carry true bin values, all others hold their last-updated value
/// (zero before the first visit).
pub fn time_multiplex_blocks(
    binned: &BinnedActivity,
    blocks: &[Vec<usize>],
    block_bins: usize,
) -> Result<BinnedActivity> {
    if block_bins == 0 {
        return Err(Error::invalid("block must span at least one bin"));
    }
    let t = binned.bins();
    let c = binned.channels();
    let needed = t.div_ceil(block_bins);
    if blocks.len() < needed {
        return Err(Error::invalid(format!(
            "{} blocks cannot cover {t} bins at {block_bins} bins per block",
            blocks.len()
        )));
    }
    let mut held = vec![0.0; c];
    let mut fresh = vec![false; c];
    let mut out = Array2::zeros((t, c));
    for (b, subset) in blocks.iter().take(needed).enumerate() {
        for ch in fresh.iter_mut() {
            *ch = false;
        }
        for &ch in subset {
            if ch >= c {
                return Err(Error::invalid(format!(
                    "scheduled channel {ch} out of range"
                )));
            }
            fresh[ch] = true;
        }
        let k0 = b * block_bins;
        let k1 = ((b + 1) * block_bins).min(t);
        for k in k0..k1 {
            for ch in 0..c {
                if fresh[ch] {
                    held[ch] = binned.values()[(k, ch)];
                }
                out[(k, ch)] = held[ch];
            }
        }
    }
    BinnedActivity::new(out, binned.bin_ms(), binned.column_labels().to_vec())
}

/// Applies a multiplexing schedule to binned activity. The block duration
/// must be a whole number of bins and the input channel count must equal the
/// schedule's scheduled channel count.
pub fn time_multiplex(binned: &BinnedActivity, schedule: &MuxSchedule) -> Result<BinnedActivity> {
    schedule.validate()?;
    if binned.channels() != schedule.scheduled_channels {
        return Err(Error::DimensionMismatch {
            context: "time_multiplex channels",
            expected: schedule.scheduled_channels,
            actual: binned.channels(),
        });
    }
    let ratio = schedule.block_ms / binned.bin_ms();
    let block_bins = ratio.round();
    if (ratio - block_bins).abs() > 1e-9 || block_bins < 1.0 {
        return Err(Error::invalid(format!(
            "block duration {} ms is not a multiple of the {} ms bin",
            schedule.block_ms,
            binned.bin_ms()
        )));
    }
    let block_bins = block_bins as usize;
    let n_blocks = binned.bins().div_ceil(block_bins);
    let blocks = expand_schedule(schedule, n_blocks)?;
    time_multiplex_blocks(binned, &blocks, block_bins)
}

/// Time-multiplexing study: every setup is evaluated over `runs` random
/// channel draws and schedules, next to the no-switching baselines (the
/// reduced sets matching the setups' subset and scheduled sizes, plus the
/// full channel set).
#[allow(clippy::too_many_arguments)]
pub fn mux_study(
    musts: &SpikeTrainSet,
    reference: &KinematicsTrajectory,
    setups: &[MuxSetupConfig],
    runs: usize,
    seed: u64,
    cfg: &DecodeConfig,
    trial_s: f64,
    trials: usize,
) -> Result<SweepReport> {
    if runs == 0 {
        return Err(Error::invalid("need at least one run"));
    }
    let prepared = prepare_decode(musts, reference, cfg, trial_s, trials)?;
    let available = prepared.binned.channels();
    let mut warnings = Vec::new();

    enum Task {
        Mux { setup: usize, run: usize },
        Reduced { size: usize, run: usize },
        Full,
    }

    let mut usable_setups = Vec::new();
    for (i, s) in setups.iter().enumerate() {
        if s.scheduled_channels > available {
            warnings.push(format!(
                "skipping setup {}: schedules {} of {} available channels",
                i + 1,
                s.scheduled_channels,
                available
            ));
        } else {
            usable_setups.push((i, s.clone()));
        }
    }

    // No-switching baselines: the distinct subset/scheduled sizes, then full.
    let mut baseline_sizes: Vec<usize> = usable_setups
        .iter()
        .flat_map(|(_, s)| [s.subset_size, s.scheduled_channels])
        .filter(|&z| z < available)
        .collect();
    baseline_sizes.sort_unstable();
    baseline_sizes.dedup();

    let mut tasks = Vec::new();
    for (idx, _) in &usable_setups {
        for run in 0..runs {
            tasks.push(Task::Mux { setup: *idx, run });
        }
    }
    for &size in &baseline_sizes {
        for run in 0..runs {
            tasks.push(Task::Reduced { size, run });
        }
    }
    tasks.push(Task::Full);

    // Best-effort assignment, as in the reduced-set sweep: random draws and
    // frozen multiplexed columns must never abort the study.
    let run_cfg = DecodeConfig {
        corr_floor: 0.0,
        ..cfg.clone()
    };
    let setups_owned: Vec<MuxSetupConfig> = setups.to_vec();
    let results: Result<Vec<(f64, f64)>> = thread_pool().install(|| {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .map(|task| match task {
                Task::Mux { setup, run } => {
                    let s = &setups_owned[*setup];
                    let child = child_seed(seed, 0x100 + *setup as u64, *run as u64);
                    let columns =
                        sample_without_replacement(available, s.scheduled_channels, child);
                    let schedule = MuxSchedule::from_config(s, child_seed(child, 0x7e, 0));
                    let outcome = run_decode(&prepared, Some(&columns), Some(&schedule), &run_cfg)?;
                    Ok((outcome.r2_train, outcome.r2_test))
                }
                Task::Reduced { size, run } => {
                    let child = child_seed(seed, *size as u64, *run as u64);
                    let columns = sample_without_replacement(available, *size, child);
                    let outcome = run_decode(&prepared, Some(&columns), None, &run_cfg)?;
                    Ok((outcome.r2_train, outcome.r2_test))
                }
                Task::Full => {
                    let outcome = run_decode(&prepared, None, None, &run_cfg)?;
                    Ok((outcome.r2_train, outcome.r2_test))
                }
            })
            .collect()
    });
    let results = results?;

    let mut entries = Vec::new();
    let mut cursor = 0;
    for (idx, s) in &usable_setups {
        let slice = &results[cursor..cursor + runs];
        cursor += runs;
        entries.push(SweepEntry {
            label: format!(
                "setup-{}: {} of {} channels, TB={}ms, N={}",
                idx + 1,
                s.subset_size,
                s.scheduled_channels,
                s.block_ms,
                s.switches
            ),
            size: None,
            train: RunStats::from_values(slice.iter().map(|r| r.0).collect()),
            test: RunStats::from_values(slice.iter().map(|r| r.1).collect()),
        });
    }
    for &size in &baseline_sizes {
        let slice = &results[cursor..cursor + runs];
        cursor += runs;
        entries.push(SweepEntry {
            label: format!("reduced-{size} (no switching)"),
            size: Some(size),
            train: RunStats::from_values(slice.iter().map(|r| r.0).collect()),
            test: RunStats::from_values(slice.iter().map(|r| r.1).collect()),
        });
    }
    let full = results[cursor];
    entries.push(SweepEntry {
        label: format!("full-{available} (no switching)"),
        size: Some(available),
        train: RunStats::from_values(vec![full.0]),
        test: RunStats::from_values(vec![full.1]),
    });

    Ok(SweepReport {
        entries,
        seed,
        runs,
        warnings,
    })
}

/// Outcome of one detector arm of the thresholding comparison.
#[derive(Debug, Clone)]
pub struct DetectorOutcome {
    pub detector: DetectorKind,
    pub qualified_sources: usize,
    pub total_spikes: usize,
    pub musts: SpikeTrainSet,
    /// Matching against ground truth, when truth was supplied.
    pub matching: Option<MatchReport>,
    pub r2_train: Option<f64>,
    pub r2_test: Option<f64>,
}

/// Paired adaptive-vs-K-means report.
#[derive(Debug, Clone)]
pub struct ThresholdingReport {
    pub adaptive: DetectorOutcome,
    pub kmeans: DetectorOutcome,
    /// Percent improvement of adaptive over K-means test R², when both exist.
    pub improvement_percent: Option<f64>,
    pub warnings: Vec<String>,
}

/// Decomposes the recording once per detector (one shared separation, which
/// determinism makes identical to two full runs), decodes both MUST sets, and
/// reports spike counts, matched-source recall, and train/test R² for each.
#[allow(clippy::too_many_arguments)]
pub fn thresholding_comparison(
    emg: &EmgRecording,
    reference: &KinematicsTrajectory,
    truth: Option<&SpikeTrainSet>,
    bss_cfg: &BssConfig,
    decode_cfg: &DecodeConfig,
    trial_s: f64,
    trials: usize,
    tol_ms: f64,
    max_lag_ms: f64,
    min_roa: f64,
    seed: u64,
) -> Result<ThresholdingReport> {
    let ipts = bss::separate(emg, bss_cfg, seed)?;
    let mut warnings = Vec::new();

    let mut arm = |detector: DetectorKind| -> Result<DetectorOutcome> {
        let cfg = BssConfig {
            detector,
            ..bss_cfg.clone()
        };
        let decomposition = bss::detect_and_qualify(&ipts, emg.sample_count(), &cfg, seed)?;
        let musts = decomposition.spike_trains();
        let matching = truth.map(|t| match_sources(t, &musts, tol_ms, max_lag_ms, min_roa));
        let (r2_train, r2_test) = if musts.source_count() == 0 {
            warnings.push(format!(
                "{detector:?}: no qualified sources, skipping decode"
            ));
            (None, None)
        } else {
            match prepare_decode(&musts, reference, decode_cfg, trial_s, trials)
                .and_then(|prepared| run_decode(&prepared, None, None, decode_cfg))
            {
                Ok(outcome) => (Some(outcome.r2_train), Some(outcome.r2_test)),
                Err(e) => {
                    warnings.push(format!("{detector:?}: decode failed: {e}"));
                    (None, None)
                }
            }
        };
        Ok(DetectorOutcome {
            detector,
            qualified_sources: musts.source_count(),
            total_spikes: musts.total_spikes(),
            musts,
            matching,
            r2_train,
            r2_test,
        })
    };

    let adaptive = arm(DetectorKind::Adaptive)?;
    let kmeans = arm(DetectorKind::Kmeans)?;
    let improvement_percent = match (adaptive.r2_test, kmeans.r2_test) {
        (Some(a), Some(k)) if k != 0.0 => Some(100.0 * (a - k) / k.abs()),
        _ => None,
    };
    Ok(ThresholdingReport {
        adaptive,
        kmeans,
        improvement_percent,
        warnings,
    })
}
