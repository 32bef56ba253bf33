//! Blind source separation of multichannel EMG into motor unit spike trains:
//! channel extension, spatial whitening, deflationary fixed-point ICA, spike
//! detection (locally adaptive threshold or the 2-class K-means baseline),
//! refractory enforcement, and silhouette-based source qualification.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use std::collections::VecDeque;

use crate::config::{BssConfig, Contrast, DetectorKind};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigh;
use crate::rng::{child_seed, rng};
use crate::sim::{EmgRecording, SpikeTrainSet};

/// Time-extended observations: each original channel contributes one row per
/// delay 0..R−1, turning the convolutive mixture into an instantaneous one.
#[derive(Debug, Clone)]
pub struct ExtendedObservations {
    matrix: Array2<f64>,
    extension_factor: usize,
    /// Row index → (original channel, delay).
    channel_origin: Vec<(usize, usize)>,
    sample_rate_hz: f64,
}

impl ExtendedObservations {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn extension_factor(&self) -> usize {
        self.extension_factor
    }

    pub fn channel_origin(&self) -> &[(usize, usize)] {
        &self.channel_origin
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn samples(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }
}

/// Extends every channel with its delayed copies (delays 0..R−1), zero-padded
/// at the left edge. Row order is channel-major.
pub fn extend(emg: &EmgRecording, extension_factor: usize) -> Result<ExtendedObservations> {
    if extension_factor < 1 {
        return Err(Error::invalid("extension factor must be at least 1"));
    }
    let m = emg.channel_count();
    let n = emg.sample_count();
    let mut matrix = Array2::zeros((m * extension_factor, n));
    let mut channel_origin = Vec::with_capacity(m * extension_factor);
    for ch in 0..m {
        for delay in 0..extension_factor {
            let row = ch * extension_factor + delay;
            for k in delay..n {
                matrix[(row, k)] = emg.samples()[(ch, k - delay)];
            }
            channel_origin.push((ch, delay));
        }
    }
    Ok(ExtendedObservations {
        matrix,
        extension_factor,
        channel_origin,
        sample_rate_hz: emg.sample_rate_hz(),
    })
}

/// Spatial whitening model fitted on extended observations.
#[derive(Debug, Clone)]
pub struct WhiteningModel {
    /// W̄ = U · D^(−1/2) · Uᵀ after eigenvalue flooring.
    whitening_matrix: Array2<f64>,
    eigenvectors: Array2<f64>,
    /// Raw covariance eigenvalues, descending.
    eigenvalues: Array1<f64>,
    regularization_floor: f64,
    /// Per-row mean of the training data, removed before whitening.
    mean: Array1<f64>,
}

impl WhiteningModel {
    pub fn whitening_matrix(&self) -> &Array2<f64> {
        &self.whitening_matrix
    }

    pub fn eigenvectors(&self) -> &Array2<f64> {
        &self.eigenvectors
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    pub fn regularization_floor(&self) -> f64 {
        self.regularization_floor
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }
}

/// Fits the whitening transform: eigendecomposition of the sample covariance
/// of the mean-removed extended observations, with eigenvalues below
/// `floor × λ_max` clamped to that floor before the −1/2 power.
pub fn fit_whitening(extended: &ExtendedObservations, floor: f64) -> Result<WhiteningModel> {
    let rows = extended.rows();
    let n = extended.samples();
    if n <= rows {
        return Err(Error::invalid(format!(
            "whitening needs more samples ({n}) than extended channels ({rows})"
        )));
    }
    if !(0.0..=1.0).contains(&floor) {
        return Err(Error::invalid("regularization floor must lie in [0, 1]"));
    }

    let mean = extended
        .matrix()
        .mean_axis(Axis(1))
        .expect("non-empty extension");
    let centered = extended.matrix() - &mean.view().insert_axis(Axis(1));
    let covariance = centered.dot(&centered.t()) / (n as f64 - 1.0);

    let (eigenvalues, eigenvectors) = symmetric_eigh(&covariance)?;
    let lead = eigenvalues[0];
    if !lead.is_finite() || lead <= 0.0 {
        return Err(Error::DegenerateInput(
            "extended observations have no variance".into(),
        ));
    }
    let floor_value = floor * lead;
    let inv_sqrt: Array1<f64> = eigenvalues
        .iter()
        .map(|&l| 1.0 / l.max(floor_value).sqrt())
        .collect();

    // U · D^(−1/2) · Uᵀ
    let scaled = &eigenvectors * &inv_sqrt.view().insert_axis(Axis(0));
    let whitening_matrix = scaled.dot(&eigenvectors.t());

    Ok(WhiteningModel {
        whitening_matrix,
        eigenvectors,
        eigenvalues,
        regularization_floor: floor,
        mean,
    })
}

/// Applies a fitted whitening model: `W̄ · (x̄ − training mean)`.
pub fn whiten(model: &WhiteningModel, extended: &ExtendedObservations) -> Result<Array2<f64>> {
    if extended.rows() != model.mean.len() {
        return Err(Error::DimensionMismatch {
            context: "whiten",
            expected: model.mean.len(),
            actual: extended.rows(),
        });
    }
    let centered = extended.matrix() - &model.mean.view().insert_axis(Axis(1));
    Ok(model.whitening_matrix.dot(&centered))
}

/// Innervation pulse trains and the separation vectors that produced them.
#[derive(Debug, Clone)]
pub struct IptSet {
    /// q × D_r source estimates.
    sources: Array2<f64>,
    /// q × (m·R) unit-norm separation vectors, pairwise orthogonal.
    separation_vectors: Array2<f64>,
    sample_rate_hz: f64,
}

impl IptSet {
    pub fn sources(&self) -> &Array2<f64> {
        &self.sources
    }

    pub fn separation_vectors(&self) -> &Array2<f64> {
        &self.separation_vectors
    }

    pub fn source_count(&self) -> usize {
        self.sources.nrows()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.sources.row(i).to_vec()
    }
}

// z = wᵀY, streamed row-major; ndarray's vector-matrix product walks the
// data column-wise and is several times slower at these shapes.
fn project_rows(y: &Array2<f64>, w: &Array1<f64>) -> Array1<f64> {
    let n = y.ncols();
    let mut z = vec![0.0f64; n];
    for (r, row) in y.rows().into_iter().enumerate() {
        let wr = w[r];
        if wr == 0.0 {
            continue;
        }
        let row = row.as_slice().expect("whitened data is row-major");
        for (acc, &v) in z.iter_mut().zip(row) {
            *acc += wr * v;
        }
    }
    Array1::from_vec(z)
}

fn contrast_eval(contrast: Contrast, z: &Array1<f64>) -> (Array1<f64>, f64) {
    let n = z.len() as f64;
    match contrast {
        Contrast::Square => {
            let g = z.mapv(|u| u * u);
            let g_prime_mean = 2.0 * z.sum() / n;
            (g, g_prime_mean)
        }
        Contrast::LogCosh => {
            let g = z.mapv(f64::tanh);
            let g_prime_mean = g.iter().map(|t| 1.0 - t * t).sum::<f64>() / n;
            (g, g_prime_mean)
        }
    }
}

// Removes the projections of `w` onto every accepted vector, in order.
fn gram_schmidt(w: &mut Array1<f64>, accepted: &[Array1<f64>]) {
    for b in accepted {
        let proj = w.dot(b);
        w.scaled_add(-proj, b);
    }
}

/// Deflationary fixed-point ICA on whitened data.
///
/// Each candidate iterates `w ← E[ȳ·g(wᵀȳ)] − E[g′(wᵀȳ)]·w`, is
/// Gram–Schmidt-orthogonalized against previously accepted vectors and
/// renormalized, until `|⟨w_new, w_old⟩| > 1 − tol`. Candidates that fail to
/// converge within `max_iter` are skipped. Accepted IPT rows are `wᵀȳ`,
/// sign-fixed to positive skewness.
pub fn fixed_point_ica(
    whitened: &Array2<f64>,
    max_sources: usize,
    tol: f64,
    max_iter: usize,
    contrast: Contrast,
    sample_rate_hz: f64,
    seed: u64,
) -> Result<IptSet> {
    let rows = whitened.nrows();
    let n = whitened.ncols();
    if max_sources == 0 {
        return Err(Error::invalid("max_sources must be positive"));
    }
    if max_sources > rows {
        return Err(Error::invalid(format!(
            "max_sources {max_sources} exceeds {rows} whitened rows"
        )));
    }
    if n == 0 {
        return Err(Error::DegenerateInput(
            "whitened data has no samples".into(),
        ));
    }

    let mut accepted: Vec<Array1<f64>> = Vec::new();
    for attempt in 0..max_sources {
        let mut r = rng(child_seed(seed, 0x1ca, attempt as u64));
        let mut w: Array1<f64> =
            Array1::from_iter((0..rows).map(|_| StandardNormal.sample(&mut r)));
        gram_schmidt(&mut w, &accepted);
        let norm = w.dot(&w).sqrt();
        if norm < 1e-12 {
            break; // span exhausted
        }
        w.mapv_inplace(|v| v / norm);

        let mut converged = false;
        for _ in 0..max_iter {
            let z = project_rows(whitened, &w);
            let (g, g_prime_mean) = contrast_eval(contrast, &z);
            let mut w_new = whitened.dot(&g) / n as f64;
            w_new.scaled_add(-g_prime_mean, &w);

            gram_schmidt(&mut w_new, &accepted);
            let norm = w_new.dot(&w_new).sqrt();
            if norm < 1e-12 {
                break;
            }
            w_new.mapv_inplace(|v| v / norm);

            let overlap = w_new.dot(&w).abs();
            w = w_new;
            if overlap > 1.0 - tol {
                converged = true;
                break;
            }
        }
        if !converged {
            continue;
        }
        let z = project_rows(whitened, &w);
        let skewness = z.iter().map(|v| v.powi(3)).sum::<f64>();
        if skewness < 0.0 {
            w.mapv_inplace(|v| -v);
        }
        accepted.push(w);
    }

    let q = accepted.len();
    let mut separation_vectors = Array2::zeros((q, rows));
    let mut sources = Array2::zeros((q, n));
    for (i, w) in accepted.iter().enumerate() {
        separation_vectors.row_mut(i).assign(w);
        sources.row_mut(i).assign(&project_rows(whitened, w));
    }
    Ok(IptSet {
        sources,
        separation_vectors,
        sample_rate_hz,
    })
}

/// Indices and squared amplitudes of the local maxima of the squared series.
fn squared_peaks(series: &[f64]) -> Vec<(usize, f64)> {
    let sq: Vec<f64> = series.iter().map(|v| v * v).collect();
    let mut peaks = Vec::new();
    for i in 1..sq.len().saturating_sub(1) {
        if sq[i] > sq[i - 1] && sq[i] >= sq[i + 1] && sq[i] > 0.0 {
            peaks.push((i, sq[i]));
        }
    }
    peaks
}

// Greedy refractory pass over time-ordered candidates: of any two candidates
// closer than the refractory distance, the larger survives.
fn enforce_refractory(candidates: Vec<(usize, f64)>, refractory: usize) -> Vec<usize> {
    let mut kept: Vec<(usize, f64)> = Vec::with_capacity(candidates.len());
    for (i, amp) in candidates {
        match kept.last() {
            Some(&(last_i, last_amp)) if i - last_i < refractory => {
                if amp > last_amp {
                    kept.pop();
                    kept.push((i, amp));
                }
            }
            _ => kept.push((i, amp)),
        }
    }
    kept.into_iter().map(|(i, _)| i).collect()
}

/// Locally adaptive spike detection on one IPT row.
///
/// Works on the squared series: a local maximum is accepted when it exceeds
/// `rel_threshold ×` the running mean of already-accepted peak amplitudes
/// inside the trailing `window_s`; the reference starts at the global maximum
/// peak and persists through silent stretches, so the effective threshold
/// tracks amplitude drift. Candidates closer than the refractory period are
/// resolved in favor of the larger.
pub fn detect_spikes_adaptive(
    ipt_row: &[f64],
    sample_rate_hz: f64,
    refractory_ms: f64,
    window_s: f64,
    rel_threshold: f64,
) -> Result<Vec<usize>> {
    if refractory_ms <= 0.0 {
        return Err(Error::invalid("refractory period must be positive"));
    }
    if !(0.0 < rel_threshold && rel_threshold < 1.0) {
        return Err(Error::invalid("relative threshold must lie in (0, 1)"));
    }
    if window_s <= 0.0 {
        return Err(Error::invalid("window must be positive"));
    }
    let peaks = squared_peaks(ipt_row);
    if peaks.is_empty() {
        return Ok(Vec::new());
    }
    let window = ((window_s * sample_rate_hz).round() as usize).max(1);
    let refractory = ((refractory_ms / 1000.0 * sample_rate_hz).round() as usize).max(1);

    let mut reference = peaks.iter().map(|&(_, a)| a).fold(f64::MIN, f64::max);
    let mut window_peaks: VecDeque<(usize, f64)> = VecDeque::new();
    let mut window_sum = 0.0;
    let mut accepted: Vec<(usize, f64)> = Vec::new();

    for &(i, amp) in &peaks {
        while let Some(&(front_i, front_a)) = window_peaks.front() {
            if front_i + window < i {
                window_peaks.pop_front();
                window_sum -= front_a;
            } else {
                break;
            }
        }
        if !window_peaks.is_empty() {
            reference = window_sum / window_peaks.len() as f64;
        }
        if amp <= rel_threshold * reference {
            continue;
        }
        if let Some(&(last_i, last_amp)) = accepted.last() {
            if i - last_i < refractory {
                if amp > last_amp {
                    accepted.pop();
                    if window_peaks.back() == Some(&(last_i, last_amp)) {
                        window_peaks.pop_back();
                        window_sum -= last_amp;
                    }
                    accepted.push((i, amp));
                    window_peaks.push_back((i, amp));
                    window_sum += amp;
                }
                continue;
            }
        }
        accepted.push((i, amp));
        window_peaks.push_back((i, amp));
        window_sum += amp;
    }
    Ok(accepted.into_iter().map(|(i, _)| i).collect())
}

// Lloyd's algorithm for two clusters on scalar amplitudes. Returns the final
// (low, high) centroids; `None` when the data cannot support two clusters.
fn two_means(amplitudes: &[f64], seed: u64) -> Option<(f64, f64)> {
    let mut distinct = amplitudes.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 2 {
        return None;
    }
    let mut r = rng(seed);
    let c1 = amplitudes[r.gen_range(0..amplitudes.len())];
    let c2 = amplitudes
        .iter()
        .copied()
        .max_by(|a, b| (a - c1).abs().partial_cmp(&(b - c1).abs()).unwrap())
        .expect("non-empty amplitudes");
    let (mut lo, mut hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let (mut sum_lo, mut n_lo, mut sum_hi, mut n_hi) = (0.0, 0usize, 0.0, 0usize);
        for &a in amplitudes {
            if a <= mid {
                sum_lo += a;
                n_lo += 1;
            } else {
                sum_hi += a;
                n_hi += 1;
            }
        }
        if n_lo == 0 || n_hi == 0 {
            return None;
        }
        let new_lo = sum_lo / n_lo as f64;
        let new_hi = sum_hi / n_hi as f64;
        if new_lo == lo && new_hi == hi {
            break;
        }
        lo = new_lo;
        hi = new_hi;
    }
    Some((lo, hi))
}

/// Fixed-threshold baseline: 2-means on squared peak amplitudes; the
/// higher-centroid class is the spike class. Degenerate inputs (fewer than
/// two distinct peak values) yield an empty spike list.
pub fn detect_spikes_kmeans(
    ipt_row: &[f64],
    sample_rate_hz: f64,
    refractory_ms: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if refractory_ms <= 0.0 {
        return Err(Error::invalid("refractory period must be positive"));
    }
    let peaks = squared_peaks(ipt_row);
    if peaks.is_empty() {
        return Ok(Vec::new());
    }
    let amplitudes: Vec<f64> = peaks.iter().map(|&(_, a)| a).collect();
    let Some((lo, hi)) = two_means(&amplitudes, seed) else {
        return Ok(Vec::new());
    };
    let boundary = 0.5 * (lo + hi);
    let refractory = ((refractory_ms / 1000.0 * sample_rate_hz).round() as usize).max(1);
    let candidates: Vec<(usize, f64)> = peaks.into_iter().filter(|&(_, a)| a > boundary).collect();
    Ok(enforce_refractory(candidates, refractory))
}

/// Silhouette of the {spike peaks} / {non-spike peaks} split of the squared
/// peak amplitudes: the difference between the summed between- and
/// within-cluster point-to-centroid distances, normalized by the larger of
/// the two sums. Lies in [−1, 1]; 0 when both sums vanish.
pub fn silhouette(ipt_row: &[f64], spikes: &[usize]) -> Result<f64> {
    let peaks = squared_peaks(ipt_row);
    let mut spike_amps = Vec::new();
    let mut rest_amps = Vec::new();
    for (i, amp) in peaks {
        if spikes.binary_search(&i).is_ok() {
            spike_amps.push(amp);
        } else {
            rest_amps.push(amp);
        }
    }
    if spike_amps.is_empty() || rest_amps.is_empty() {
        return Err(Error::UndefinedSilhouette(format!(
            "need both clusters populated (spikes: {}, non-spikes: {})",
            spike_amps.len(),
            rest_amps.len()
        )));
    }
    let centroid = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let c_spike = centroid(&spike_amps);
    let c_rest = centroid(&rest_amps);
    let mut within = 0.0;
    let mut between = 0.0;
    for &a in &spike_amps {
        within += (a - c_spike).abs();
        between += (a - c_rest).abs();
    }
    for &a in &rest_amps {
        within += (a - c_rest).abs();
        between += (a - c_spike).abs();
    }
    let denom = within.max(between);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((between - within) / denom)
}

/// Detection + qualification record for one IPT candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDiagnostic {
    pub source: usize,
    pub spike_count: usize,
    /// None when the silhouette is undefined (an empty cluster).
    pub sil: Option<f64>,
    pub qualified: bool,
}

/// One qualified motor unit spike train channel.
#[derive(Debug, Clone, PartialEq)]
pub struct QualifiedSource {
    /// Index of the IPT this source came from.
    pub origin: usize,
    pub spike_indices: Vec<usize>,
    pub sil: f64,
}

/// Output of the full decomposition: qualified sources (delayed replicas
/// deliberately retained) plus a per-candidate diagnostic report.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub qualified: Vec<QualifiedSource>,
    pub diagnostics: Vec<SourceDiagnostic>,
    sample_rate_hz: f64,
    duration_samples: usize,
}

impl Decomposition {
    /// The qualified sources as a spike train set (MUST channels).
    pub fn spike_trains(&self) -> SpikeTrainSet {
        let trains = self
            .qualified
            .iter()
            .map(|q| q.spike_indices.clone())
            .collect();
        let labels = self
            .qualified
            .iter()
            .map(|q| format!("ipt{:03}", q.origin))
            .collect();
        SpikeTrainSet::new(trains, labels, self.sample_rate_hz, self.duration_samples)
            .expect("qualified sources are valid trains")
    }

    pub fn qualified_count(&self) -> usize {
        self.qualified.len()
    }
}

/// Extension → whitening → ICA, without detection. Exposed so the detector
/// comparison can reuse one separation; `decompose` is this plus
/// `detect_and_qualify`, and determinism makes the staging equivalent to
/// running the full pipeline twice.
pub fn separate(emg: &EmgRecording, config: &BssConfig, seed: u64) -> Result<IptSet> {
    config.validate()?;
    let extended = extend(emg, config.extension_factor)?;
    let whitening = fit_whitening(&extended, config.eig_floor)?;
    let whitened = whiten(&whitening, &extended)?;
    drop(extended);
    let max_sources = config.max_sources.min(whitened.nrows());
    fixed_point_ica(
        &whitened,
        max_sources,
        config.tol,
        config.max_iter,
        config.contrast,
        emg.sample_rate_hz(),
        child_seed(seed, 0x5e9, 0),
    )
}

/// Runs the configured detector and the silhouette gate over every IPT.
pub fn detect_and_qualify(
    ipts: &IptSet,
    duration_samples: usize,
    config: &BssConfig,
    seed: u64,
) -> Result<Decomposition> {
    let fs = ipts.sample_rate_hz();
    let mut qualified = Vec::new();
    let mut diagnostics = Vec::new();
    for i in 0..ipts.source_count() {
        let row = ipts.row(i);
        let spikes = match config.detector {
            DetectorKind::Adaptive => detect_spikes_adaptive(
                &row,
                fs,
                config.refractory_ms,
                config.window_s,
                config.rel_threshold,
            )?,
            DetectorKind::Kmeans => detect_spikes_kmeans(
                &row,
                fs,
                config.refractory_ms,
                child_seed(seed, 0x2c1, i as u64),
            )?,
        };
        let sil = silhouette(&row, &spikes).ok();
        let is_qualified = sil.is_some_and(|s| s > config.sil_threshold);
        diagnostics.push(SourceDiagnostic {
            source: i,
            spike_count: spikes.len(),
            sil,
            qualified: is_qualified,
        });
        if is_qualified {
            qualified.push(QualifiedSource {
                origin: i,
                spike_indices: spikes,
                sil: sil.expect("qualified implies defined silhouette"),
            });
        }
    }
    Ok(Decomposition {
        qualified,
        diagnostics,
        sample_rate_hz: fs,
        duration_samples,
    })
}

/// The full decomposition pipeline: extend → whiten → ICA → detect →
/// silhouette gate. Zero qualified sources is not an error; the diagnostics
/// report every candidate either way.
pub fn decompose(emg: &EmgRecording, config: &BssConfig, seed: u64) -> Result<Decomposition> {
    let ipts = separate(emg, config, seed)?;
    detect_and_qualify(&ipts, emg.sample_count(), config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pearson;
    use ndarray::arr2;

    fn recording(rows: Vec<Vec<f64>>, fs: f64) -> EmgRecording {
        let m = rows.len();
        let n = rows[0].len();
        let mut a = Array2::zeros((m, n));
        for (i, row) in rows.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                a[(i, k)] = v;
            }
        }
        EmgRecording::new(a, fs).unwrap()
    }

    #[test]
    fn extend_identity_at_factor_one() {
        let emg = recording(vec![vec![1.0, 2.0, 3.0, 4.0]], 1000.0);
        let ext = extend(&emg, 1).unwrap();
        assert_eq!(ext.matrix(), emg.samples());
        assert_eq!(ext.channel_origin(), &[(0, 0)]);
    }

    #[test]
    fn extend_shifts_with_zero_padding() {
        // Manual shift oracle.
        let emg = recording(vec![vec![1.0, 2.0, 3.0, 4.0]], 1000.0);
        let ext = extend(&emg, 2).unwrap();
        assert_eq!(ext.rows(), 2);
        assert_eq!(ext.matrix().row(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ext.matrix().row(1).to_vec(), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(ext.channel_origin(), &[(0, 0), (0, 1)]);
    }

    #[test]
    fn extend_row_count_scales_with_factor() {
        let mut rows = Vec::new();
        let mut r = crate::rng::rng(2);
        use rand::Rng as _;
        for _ in 0..64 {
            rows.push((0..100).map(|_| r.gen_range(-1.0..1.0)).collect());
        }
        let emg = recording(rows, 2048.0);
        let ext = extend(&emg, 5).unwrap();
        assert_eq!(ext.rows(), 320);
        assert_eq!(ext.samples(), 100);
        assert!(extend(&emg, 0).is_err());
    }

    // Two zero-mean rows with exact unit sample covariance.
    fn identity_covariance_rows(n: usize) -> (Vec<f64>, Vec<f64>) {
        assert!(n.is_multiple_of(4));
        let a = ((n as f64 - 1.0) / n as f64).sqrt();
        let r1: Vec<f64> = (0..n).map(|k| if k % 2 == 0 { a } else { -a }).collect();
        let r2: Vec<f64> = (0..n)
            .map(|k| if (k / 2) % 2 == 0 { a } else { -a })
            .collect();
        (r1, r2)
    }

    #[test]
    fn whitening_of_identity_covariance_is_identity() {
        let (r1, r2) = identity_covariance_rows(400);
        let emg = recording(vec![r1, r2], 1000.0);
        let ext = extend(&emg, 1).unwrap();
        let model = fit_whitening(&ext, 1e-8).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (model.whitening_matrix()[(i, j)] - want).abs() < 1e-6,
                    "W[{i},{j}] = {}",
                    model.whitening_matrix()[(i, j)]
                );
            }
        }
        // W = I on zero-mean data → whiten output equals input.
        let y = whiten(&model, &ext).unwrap();
        for (u, v) in y.iter().zip(ext.matrix().iter()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn whitening_equalizes_known_variances() {
        // Closed-form 2×2 oracle: uncorrelated rows with variances 4 and 1
        // whiten to unit variance each.
        let (r1, r2) = identity_covariance_rows(400);
        let r1: Vec<f64> = r1.iter().map(|v| 2.0 * v).collect();
        let emg = recording(vec![r1, r2], 1000.0);
        let ext = extend(&emg, 1).unwrap();
        let model = fit_whitening(&ext, 1e-8).unwrap();
        let y = whiten(&model, &ext).unwrap();
        let n = y.ncols() as f64;
        for i in 0..2 {
            let var = y.row(i).iter().map(|v| v * v).sum::<f64>() / (n - 1.0);
            assert!((var - 1.0).abs() < 1e-6, "row {i} variance {var}");
        }
    }

    #[test]
    fn whitened_training_covariance_is_identity() {
        let mut r = crate::rng::rng(3);
        use rand::Rng as _;
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                (0..500)
                    .map(|k| r.gen_range(-1.0..1.0) + 0.3 * ((k as f64 / 17.0) + i as f64).sin())
                    .collect()
            })
            .collect();
        let emg = recording(rows, 1000.0);
        let ext = extend(&emg, 2).unwrap();
        let model = fit_whitening(&ext, 1e-8).unwrap();
        let y = whiten(&model, &ext).unwrap();
        let n = y.ncols() as f64;
        let cov = y.dot(&y.t()) / (n - 1.0);
        for i in 0..cov.nrows() {
            for j in 0..cov.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (cov[(i, j)] - want).abs() < 1e-6,
                    "cov[{i},{j}] = {}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn whitening_linearity_on_zero_mean_data() {
        let (r1, r2) = identity_covariance_rows(400);
        let emg = recording(vec![r1.clone(), r2.clone()], 1000.0);
        let ext = extend(&emg, 1).unwrap();
        let model = fit_whitening(&ext, 1e-8).unwrap();
        let doubled = recording(
            vec![
                r1.iter().map(|v| 2.0 * v).collect(),
                r2.iter().map(|v| 2.0 * v).collect(),
            ],
            1000.0,
        );
        let ext2 = extend(&doubled, 1).unwrap();
        let y1 = whiten(&model, &ext).unwrap();
        let y2 = whiten(&model, &ext2).unwrap();
        for (a, b) in y2.iter().zip(y1.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-9);
        }
    }

    #[test]
    fn whitening_rejects_degenerate_inputs() {
        let emg = recording(vec![vec![0.0; 100], vec![0.0; 100]], 1000.0);
        let ext = extend(&emg, 1).unwrap();
        match fit_whitening(&ext, 1e-8) {
            Err(Error::DegenerateInput(_)) => {}
            other => panic!("expected DegenerateInput, got {other:?}"),
        }
        // Too few samples.
        let emg = recording(vec![vec![1.0, 2.0], vec![0.5, 1.5]], 1000.0);
        let ext = extend(&emg, 1).unwrap();
        assert!(fit_whitening(&ext, 1e-8).is_err());
    }

    // Two sparse non-negative pulse trains mixed instantaneously.
    fn sparse_mixture(n: usize) -> (Vec<f64>, Vec<f64>, EmgRecording) {
        let mut s1 = vec![0.0; n];
        let mut s2 = vec![0.0; n];
        let mut k = 37;
        while k < n {
            s1[k] = 1.0;
            k += 97;
        }
        let mut k = 11;
        while k < n {
            s2[k] = 1.0;
            k += 131;
        }
        let h = arr2(&[[0.9, 0.3], [0.2, 1.1], [0.7, 0.6], [0.4, 0.8]]);
        let mut x = Array2::zeros((4, n));
        for k in 0..n {
            for i in 0..4 {
                x[(i, k)] = h[(i, 0)] * s1[k] + h[(i, 1)] * s2[k];
            }
        }
        (s1, s2, EmgRecording::new(x, 1000.0).unwrap())
    }

    #[test]
    fn ica_recovers_sparse_sources() {
        let (s1, s2, emg) = sparse_mixture(4000);
        let ext = extend(&emg, 1).unwrap();
        let model = fit_whitening(&ext, 1e-8).unwrap();
        let y = whiten(&model, &ext).unwrap();
        let ipts = fixed_point_ica(&y, 2, 1e-8, 200, Contrast::Square, 1000.0, 77).unwrap();
        assert_eq!(ipts.source_count(), 2);

        // Each IPT must align with a distinct true source.
        let c = |a: &[f64], b: &[f64]| pearson(a, b).abs();
        let i0 = ipts.row(0);
        let i1 = ipts.row(1);
        let direct = c(&i0, &s1).min(c(&i1, &s2));
        let crossed = c(&i0, &s2).min(c(&i1, &s1));
        assert!(
            direct.max(crossed) > 0.95,
            "direct {direct}, crossed {crossed}"
        );

        // Separation vectors are orthonormal.
        let b = ipts.separation_vectors();
        let btb = b.dot(&b.t());
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((btb[(i, j)] - want).abs() < 1e-6);
            }
        }

        // Determinism.
        let again = fixed_point_ica(&y, 2, 1e-8, 200, Contrast::Square, 1000.0, 77).unwrap();
        assert_eq!(ipts.sources(), again.sources());
    }

    #[test]
    fn ica_rejects_bad_source_counts() {
        let (_, _, emg) = sparse_mixture(1000);
        let ext = extend(&emg, 1).unwrap();
        let model = fit_whitening(&ext, 1e-8).unwrap();
        let y = whiten(&model, &ext).unwrap();
        assert!(fixed_point_ica(&y, 0, 1e-6, 50, Contrast::Square, 1000.0, 1).is_err());
        assert!(fixed_point_ica(&y, 5, 1e-6, 50, Contrast::Square, 1000.0, 1).is_err());
    }

    // A synthetic IPT: triangular pulses of given amplitudes at given centers
    // over a small noise floor.
    fn synthetic_ipt(n: usize, spikes: &[(usize, f64)], noise_amp: f64) -> Vec<f64> {
        let mut r = crate::rng::rng(99);
        use rand::Rng as _;
        let mut x: Vec<f64> = if noise_amp > 0.0 {
            (0..n).map(|_| r.gen_range(-noise_amp..noise_amp)).collect()
        } else {
            vec![0.0; n]
        };
        for &(c, a) in spikes {
            x[c - 1] = a * 0.5;
            x[c] = a;
            x[c + 1] = a * 0.4;
        }
        x
    }

    #[test]
    fn adaptive_detector_finds_equal_spikes_without_false_positives() {
        let fs = 2048.0;
        let truth: Vec<(usize, f64)> = (0..40).map(|k| (500 + k * 400, 1.0)).collect();
        let ipt = synthetic_ipt(18_000, &truth, 0.05);
        let found = detect_spikes_adaptive(&ipt, fs, 10.0, 1.0, 0.5).unwrap();
        let want: Vec<usize> = truth.iter().map(|&(i, _)| i).collect();
        assert_eq!(found, want);
    }

    #[test]
    fn adaptive_detector_keeps_larger_of_close_candidates() {
        let fs = 2048.0;
        // 5 ms apart = ~10 samples at 2048 Hz.
        let close = vec![(1000, 0.8), (1010, 1.0), (3000, 0.9)];
        let ipt = synthetic_ipt(5000, &close, 0.01);
        let found = detect_spikes_adaptive(&ipt, fs, 10.0, 1.0, 0.5).unwrap();
        assert_eq!(found, vec![1010, 3000]);
    }

    #[test]
    fn adaptive_detector_handles_silence() {
        let ipt = vec![0.0; 4096];
        let found = detect_spikes_adaptive(&ipt, 2048.0, 10.0, 1.0, 0.5).unwrap();
        assert!(found.is_empty());
    }

    #[test]
    fn adaptive_tracks_decay_better_than_kmeans() {
        let fs = 2048.0;
        let n = 61_440; // 30 s
        let count = 60;
        let truth: Vec<(usize, f64)> = (0..count)
            .map(|k| {
                let frac = k as f64 / (count - 1) as f64;
                (500 + k * 1000, 1.0 - 0.6 * frac)
            })
            .collect();
        let ipt = synthetic_ipt(n, &truth, 0.05);
        let adaptive = detect_spikes_adaptive(&ipt, fs, 10.0, 1.0, 0.5).unwrap();
        let kmeans = detect_spikes_kmeans(&ipt, fs, 10.0, 5).unwrap();
        assert!(
            adaptive.len() >= kmeans.len(),
            "adaptive {} < kmeans {}",
            adaptive.len(),
            kmeans.len()
        );
        assert!(
            adaptive.len() >= count * 9 / 10,
            "adaptive found {}",
            adaptive.len()
        );
    }

    #[test]
    fn kmeans_separates_bimodal_amplitudes_exactly() {
        let fs = 2048.0;
        let mut spikes = Vec::new();
        for k in 0..20 {
            spikes.push((1000 + k * 2000, 1.0));
        }
        for k in 0..200 {
            spikes.push((1100 + k * 200, 0.1));
        }
        spikes.sort_by_key(|&(i, _)| i);
        spikes.dedup_by_key(|&mut (i, _)| i);
        let big: Vec<usize> = spikes
            .iter()
            .filter(|&&(_, a)| a == 1.0)
            .map(|&(i, _)| i)
            .collect();
        let ipt = synthetic_ipt(42_000, &spikes, 0.0);
        let found = detect_spikes_kmeans(&ipt, fs, 10.0, 3).unwrap();
        assert_eq!(found, big);
    }

    #[test]
    fn kmeans_degenerate_cases_return_empty() {
        // All peaks equal.
        let spikes: Vec<(usize, f64)> = (0..10).map(|k| (100 + k * 300, 1.0)).collect();
        let ipt = synthetic_ipt(4000, &spikes, 0.0);
        assert!(detect_spikes_kmeans(&ipt, 2048.0, 10.0, 1)
            .unwrap()
            .is_empty());
        // Flat series has no peaks at all.
        let flat = vec![0.25; 1000];
        assert!(detect_spikes_kmeans(&flat, 2048.0, 10.0, 1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn kmeans_is_deterministic_per_seed() {
        let spikes: Vec<(usize, f64)> = (0..30)
            .map(|k| (200 + k * 500, if k % 3 == 0 { 1.0 } else { 0.2 }))
            .collect();
        let ipt = synthetic_ipt(16_000, &spikes, 0.02);
        let a = detect_spikes_kmeans(&ipt, 2048.0, 10.0, 9).unwrap();
        let b = detect_spikes_kmeans(&ipt, 2048.0, 10.0, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn silhouette_extremes() {
        // Perfectly separated constant clusters → exactly 1.
        let spikes: Vec<(usize, f64)> = (0..10).map(|k| (100 + k * 400, 1.0)).collect();
        let mut all = spikes.clone();
        for k in 0..10 {
            all.push((300 + k * 400, 0.1));
        }
        all.sort_by_key(|&(i, _)| i);
        let ipt = synthetic_ipt(8000, &all, 0.0);
        let spike_idx: Vec<usize> = spikes.iter().map(|&(i, _)| i).collect();
        let sil = silhouette(&ipt, &spike_idx).unwrap();
        assert!((sil - 1.0).abs() < 1e-9, "sil {sil}");

        // Identical clusters → exactly 0.
        let idx: Vec<usize> = all.iter().map(|&(i, _)| i).collect();
        let ipt_eq = synthetic_ipt(
            8000,
            &idx.iter().map(|&i| (i, 1.0)).collect::<Vec<_>>(),
            0.0,
        );
        let (first_half, _) = idx.split_at(10);
        let sil0 = silhouette(&ipt_eq, first_half).unwrap();
        assert!(sil0.abs() < 1e-9, "sil {sil0}");

        // Empty cluster is an error.
        assert!(silhouette(&ipt, &[]).is_err());
        assert!(silhouette(&ipt, &idx).is_err());
    }

    #[test]
    fn silhouette_grows_with_separation() {
        // Clusters keep a fixed internal spread while the gap between them
        // widens, so the silhouette must increase strictly.
        let mut last = -1.0;
        for gap in [0.2, 0.4, 0.6, 0.8] {
            let mut all: Vec<(usize, f64)> = Vec::new();
            for k in 0..20 {
                let jitter = if k % 2 == 0 { 0.03 } else { -0.03 };
                all.push((100 + k * 400, 1.0 + jitter));
                all.push((300 + k * 400, 1.0 - gap + jitter));
            }
            all.sort_by_key(|&(i, _)| i);
            let ipt = synthetic_ipt(9000, &all, 0.0);
            let spike_idx: Vec<usize> = all
                .iter()
                .filter(|&&(_, a)| a > 1.0 - gap + 0.04)
                .map(|&(i, _)| i)
                .collect();
            assert_eq!(spike_idx.len(), 20);
            let sil = silhouette(&ipt, &spike_idx).unwrap();
            assert!(sil > last, "gap {gap}: {sil} ≤ {last}");
            assert!((-1.0..=1.0).contains(&sil));
            last = sil;
        }
    }
}
