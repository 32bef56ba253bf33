//! Metric projection from qualified spike-train channels to joint angles:
//! spike-count binning, first-order IIR smoothing, PCA of the column-centered
//! data matrix, VARIMAX rotation of the retained subspace, correlation-based
//! DoF assignment, and gain-calibrated projection.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{pearson, symmetric_eigh};
use crate::sim::{KinematicsTrajectory, SpikeTrainSet};

/// Binned spike counts (later smoothed real values): one row per time bin,
/// one column per spike-train channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedActivity {
    values: Array2<f64>,
    bin_ms: f64,
    column_labels: Vec<String>,
}

impl BinnedActivity {
    pub fn new(values: Array2<f64>, bin_ms: f64, column_labels: Vec<String>) -> Result<Self> {
        if bin_ms <= 0.0 {
            return Err(Error::invalid("bin size must be positive"));
        }
        if values.nrows() < 2 {
            return Err(Error::invalid("binned activity needs at least two bins"));
        }
        if column_labels.len() != values.ncols() {
            return Err(Error::DimensionMismatch {
                context: "binned column labels",
                expected: values.ncols(),
                actual: column_labels.len(),
            });
        }
        Ok(Self {
            values,
            bin_ms,
            column_labels,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn bin_ms(&self) -> f64 {
        self.bin_ms
    }

    /// Bin rate in Hz.
    pub fn bin_rate_hz(&self) -> f64 {
        1000.0 / self.bin_ms
    }

    pub fn column_labels(&self) -> &[String] {
        &self.column_labels
    }

    pub fn bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    /// Copy restricted to the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<BinnedActivity> {
        for &c in columns {
            if c >= self.channels() {
                return Err(Error::invalid(format!("column {c} out of range")));
            }
        }
        let values = self.values.select(Axis(1), columns);
        let labels = columns
            .iter()
            .map(|&c| self.column_labels[c].clone())
            .collect();
        BinnedActivity::new(values, self.bin_ms, labels)
    }

    /// Rows `range` as an owned matrix (used for trial splits).
    pub fn rows(&self, range: std::ops::Range<usize>) -> Array2<f64> {
        self.values
            .slice(ndarray::s![range.start..range.end, ..])
            .to_owned()
    }
}

/// Spike counts per bin of width `bin_ms`; a trailing partial bin is dropped.
pub fn bin_spikes(musts: &SpikeTrainSet, bin_ms: f64, duration_s: f64) -> Result<BinnedActivity> {
    if bin_ms <= 0.0 {
        return Err(Error::invalid("bin size must be positive"));
    }
    if musts.source_count() == 0 {
        return Err(Error::invalid("cannot bin an empty spike train set"));
    }
    let n_bins = (duration_s * 1000.0 / bin_ms + 1e-9).floor() as usize;
    if n_bins < 2 {
        return Err(Error::invalid("duration shorter than two bins"));
    }
    let fs = musts.sample_rate_hz();
    let mut values = Array2::zeros((n_bins, musts.source_count()));
    for (c, train) in musts.trains().iter().enumerate() {
        for &idx in train {
            let t_ms = idx as f64 / fs * 1000.0;
            let b = (t_ms / bin_ms).floor() as usize;
            if b < n_bins {
                values[(b, c)] += 1.0;
            }
        }
    }
    BinnedActivity::new(values, bin_ms, musts.labels().to_vec())
}

/// Smoothing coefficient of the first-order IIR: `a = exp(−2π·cutoff/rate)`.
pub fn smoothing_alpha(cutoff_hz: f64, rate_hz: f64) -> Result<f64> {
    if cutoff_hz <= 0.0 {
        return Err(Error::invalid("cutoff must be positive"));
    }
    if cutoff_hz >= rate_hz / 2.0 {
        return Err(Error::invalid(format!(
            "cutoff {cutoff_hz} Hz at or above Nyquist of the {rate_hz} Hz rate"
        )));
    }
    Ok((-2.0 * std::f64::consts::PI * cutoff_hz / rate_hz).exp())
}

/// First-order low-pass `y[k] = a·y[k−1] + (1−a)·x[k]`, zero initial state.
/// The coefficients sum to one, so the DC gain is exactly 1.
pub fn lowpass(x: &[f64], alpha: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    let mut state = 0.0;
    for &v in x {
        state = alpha * state + (1.0 - alpha) * v;
        y.push(state);
    }
    y
}

/// Low-passes every channel of the binned activity.
pub fn smooth(binned: &BinnedActivity, cutoff_hz: f64) -> Result<BinnedActivity> {
    let alpha = smoothing_alpha(cutoff_hz, binned.bin_rate_hz())?;
    let mut values = binned.values().clone();
    for mut col in values.columns_mut() {
        let mut state = 0.0;
        for v in col.iter_mut() {
            state = alpha * state + (1.0 - alpha) * *v;
            *v = state;
        }
    }
    BinnedActivity::new(values, binned.bin_ms(), binned.column_labels().to_vec())
}

/// A DoF bound to one rotated component.
#[derive(Debug, Clone, PartialEq)]
pub struct DofAssignment {
    pub dof: String,
    /// Index of the rotated component driving this DoF.
    pub component: usize,
    /// ±1, the sign of the training correlation.
    pub sign: f64,
    /// Degrees per unit score.
    pub gain: f64,
}

/// Fitted projection: PCA loadings, the orthogonal rotation applied on top,
/// and (after assignment) the per-DoF component map and gains.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    column_labels: Vec<String>,
    column_means: Array1<f64>,
    /// Unrotated loadings W_d (D × d), orthonormal columns.
    loadings: Array2<f64>,
    /// Top-d singular values, descending.
    singular_values: Array1<f64>,
    /// Orthogonal rotation R (d × d).
    rotation: Array2<f64>,
    /// Cached W_d · R.
    rotated_loadings: Array2<f64>,
    bin_ms: f64,
    /// Cutoff of the smoother applied to the training inputs, if recorded.
    smoothing_cutoff_hz: Option<f64>,
    assignments: Vec<DofAssignment>,
}

impl ProjectionModel {
    pub fn column_labels(&self) -> &[String] {
        &self.column_labels
    }

    pub fn column_means(&self) -> &Array1<f64> {
        &self.column_means
    }

    pub fn loadings(&self) -> &Array2<f64> {
        &self.loadings
    }

    pub fn singular_values(&self) -> &Array1<f64> {
        &self.singular_values
    }

    pub fn rotation(&self) -> &Array2<f64> {
        &self.rotation
    }

    pub fn rotated_loadings(&self) -> &Array2<f64> {
        &self.rotated_loadings
    }

    pub fn bin_ms(&self) -> f64 {
        self.bin_ms
    }

    pub fn smoothing_cutoff_hz(&self) -> Option<f64> {
        self.smoothing_cutoff_hz
    }

    pub fn assignments(&self) -> &[DofAssignment] {
        &self.assignments
    }

    pub fn dims(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn feature_count(&self) -> usize {
        self.loadings.nrows()
    }

    /// Records the smoother applied to the model's training inputs.
    pub fn with_smoothing_cutoff(mut self, cutoff_hz: f64) -> Self {
        self.smoothing_cutoff_hz = Some(cutoff_hz);
        self
    }

    /// Rebuilds a model from stored parts (deserialization path).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        column_labels: Vec<String>,
        column_means: Array1<f64>,
        loadings: Array2<f64>,
        singular_values: Array1<f64>,
        rotation: Array2<f64>,
        bin_ms: f64,
        smoothing_cutoff_hz: Option<f64>,
        assignments: Vec<DofAssignment>,
    ) -> Result<Self> {
        let d = loadings.ncols();
        if column_means.len() != loadings.nrows()
            || column_labels.len() != loadings.nrows()
            || singular_values.len() != d
            || rotation.dim() != (d, d)
        {
            return Err(Error::invalid("inconsistent projection model parts"));
        }
        let rotated_loadings = loadings.dot(&rotation);
        Ok(Self {
            column_labels,
            column_means,
            loadings,
            singular_values,
            rotation,
            rotated_loadings,
            bin_ms,
            smoothing_cutoff_hz,
            assignments,
        })
    }

    /// Rotated scores of (possibly out-of-sample) binned activity: centers the
    /// data with the training column means and projects onto W_d · R.
    pub fn transform(&self, binned: &BinnedActivity) -> Result<Array2<f64>> {
        if binned.column_labels() != self.column_labels.as_slice() {
            return Err(Error::invalid(
                "binned columns do not match the model's training columns",
            ));
        }
        let centered = binned.values() - &self.column_means.view().insert_axis(Axis(0));
        Ok(centered.dot(&self.rotated_loadings))
    }
}

/// PCA of the column-centered data matrix via SVD: the loadings are the top-d
/// right singular vectors, with singular values stored in descending order.
pub fn fit_pca(x: &BinnedActivity, d: usize) -> Result<ProjectionModel> {
    let t = x.bins();
    let n_features = x.channels();
    if d == 0 {
        return Err(Error::invalid("projection dimension must be positive"));
    }
    if d > t.min(n_features) {
        return Err(Error::invalid(format!(
            "projection dimension {d} exceeds min(bins {t}, channels {n_features})"
        )));
    }

    let means = x
        .values()
        .mean_axis(Axis(0))
        .expect("non-empty binned activity");
    let centered = x.values() - &means.view().insert_axis(Axis(0));

    // Right singular vectors from the Gram matrix XᵀX: eigenvalues are the
    // squared singular values.
    let gram = centered.t().dot(&centered);
    let (eigenvalues, mut vectors) = symmetric_eigh(&gram)?;

    let lead = eigenvalues[0].max(0.0);
    if lead <= 0.0 {
        return Err(Error::RankDeficient {
            requested: d,
            rank: 0,
        });
    }
    let rank = eigenvalues.iter().filter(|&&l| l > lead * 1e-18).count();
    if d > rank {
        return Err(Error::RankDeficient { requested: d, rank });
    }

    // Sign convention: make each retained column's largest-magnitude entry
    // positive so the factorization is reproducible across eigensolvers.
    for c in 0..d {
        let col = vectors.column(c);
        let mut best = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            for v in vectors.column_mut(c).iter_mut() {
                *v = -*v;
            }
        }
    }

    let loadings = vectors.slice(ndarray::s![.., ..d]).to_owned();
    let singular_values = Array1::from_iter(eigenvalues.iter().take(d).map(|&l| l.max(0.0).sqrt()));
    let rotation = Array2::eye(d);
    let rotated_loadings = loadings.clone();

    Ok(ProjectionModel {
        column_labels: x.column_labels().to_vec(),
        column_means: means,
        loadings,
        singular_values,
        rotation,
        rotated_loadings,
        bin_ms: x.bin_ms(),
        smoothing_cutoff_hz: None,
        assignments: Vec::new(),
    })
}

/// VARIMAX simplicity criterion: the summed variance, over input channels, of
/// the squared loadings of each rotated direction.
pub fn varimax_criterion(loadings: &Array2<f64>) -> f64 {
    let n = loadings.nrows() as f64;
    loadings
        .columns()
        .into_iter()
        .map(|col| {
            let m2 = col.iter().map(|v| v * v).sum::<f64>() / n;
            let m4 = col.iter().map(|v| v.powi(4)).sum::<f64>() / n;
            m4 - m2 * m2
        })
        .sum()
}

// Criterion contribution of a single column; the criterion is column-separable
// so a planar rotation only changes two terms.
fn column_simplicity(col: &[f64]) -> f64 {
    let n = col.len() as f64;
    let m2 = col.iter().map(|v| v * v).sum::<f64>() / n;
    let m4 = col.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    m4 - m2 * m2
}

/// VARIMAX rotation by pairwise planar sweeps over raw loadings (no Kaiser
/// row normalization). The criterion is non-decreasing every sweep; sweeping
/// stops when a full sweep gains less than `tol` or after `max_sweeps`.
pub fn varimax(loadings: &Array2<f64>, tol: f64, max_sweeps: usize) -> Result<Array2<f64>> {
    let d = loadings.ncols();
    let n = loadings.nrows();
    if d == 0 {
        return Err(Error::invalid("varimax needs at least one column"));
    }
    if d == 1 {
        return Ok(Array2::eye(1));
    }
    if n == 0 {
        return Err(Error::invalid("varimax needs at least one row"));
    }

    let mut lam = loadings.clone();
    let mut rotation = Array2::eye(d);

    for _ in 0..max_sweeps {
        let mut sweep_gain = 0.0;
        for p in 0..(d - 1) {
            for q in (p + 1)..d {
                // Kaiser's closed-form stationary angle in the (p, q) plane.
                let mut a = 0.0;
                let mut b = 0.0;
                let mut c_acc = 0.0;
                let mut d_acc = 0.0;
                for i in 0..n {
                    let x = lam[(i, p)];
                    let y = lam[(i, q)];
                    let u = x * x - y * y;
                    let v = 2.0 * x * y;
                    a += u;
                    b += v;
                    c_acc += u * u - v * v;
                    d_acc += 2.0 * u * v;
                }
                let nf = n as f64;
                let num = d_acc - 2.0 * a * b / nf;
                let den = c_acc - (a * a - b * b) / nf;
                if num == 0.0 && den == 0.0 {
                    continue;
                }
                let phi = 0.25 * num.atan2(den);
                if phi.abs() < 1e-15 {
                    continue;
                }
                let (s, c) = phi.sin_cos();

                let before = {
                    let colp: Vec<f64> = lam.column(p).to_vec();
                    let colq: Vec<f64> = lam.column(q).to_vec();
                    column_simplicity(&colp) + column_simplicity(&colq)
                };
                let mut newp = vec![0.0; n];
                let mut newq = vec![0.0; n];
                for i in 0..n {
                    let x = lam[(i, p)];
                    let y = lam[(i, q)];
                    newp[i] = c * x + s * y;
                    newq[i] = -s * x + c * y;
                }
                let after = column_simplicity(&newp) + column_simplicity(&newq);
                // The stationary angle maximizes the planar criterion; the
                // guard keeps numerical corner cases from ever regressing it.
                if after < before {
                    continue;
                }
                for i in 0..n {
                    lam[(i, p)] = newp[i];
                    lam[(i, q)] = newq[i];
                }
                for i in 0..d {
                    let x = rotation[(i, p)];
                    let y = rotation[(i, q)];
                    rotation[(i, p)] = c * x + s * y;
                    rotation[(i, q)] = -s * x + c * y;
                }
                sweep_gain += after - before;
            }
        }
        if sweep_gain < tol {
            break;
        }
    }
    Ok(rotation)
}

fn orthogonality_defect(r: &Array2<f64>) -> f64 {
    let rtr = r.t().dot(r);
    let mut worst = 0.0f64;
    for i in 0..rtr.nrows() {
        for j in 0..rtr.ncols() {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((rtr[(i, j)] - want).abs());
        }
    }
    worst
}

/// Applies an orthogonal rotation to the model subspace: the rotated loadings
/// become `W_d · R` and rotated scores `S_d · R`, leaving the reconstruction
/// `S·Wᵀ` and the total retained variance unchanged.
pub fn rotate_model(model: &ProjectionModel, r: &Array2<f64>) -> Result<ProjectionModel> {
    let d = model.dims();
    if r.dim() != (d, d) {
        return Err(Error::DimensionMismatch {
            context: "rotation",
            expected: d,
            actual: r.nrows(),
        });
    }
    if orthogonality_defect(r) > 1e-6 {
        return Err(Error::invalid("rotation matrix is not orthogonal"));
    }
    let rotation = model.rotation.dot(r);
    let rotated_loadings = model.loadings.dot(&rotation);
    Ok(ProjectionModel {
        rotation,
        rotated_loadings,
        assignments: Vec::new(),
        ..model.clone()
    })
}

/// Binds each DoF to the rotated component that best tracks its reference
/// angle over the training window: candidate pairs are taken greedily by
/// descending |Pearson r| without replacement; the sign comes from the
/// correlation, the gain from the first trial's peaks.
pub fn assign_dofs(
    model: &mut ProjectionModel,
    training_scores: &Array2<f64>,
    reference: &KinematicsTrajectory,
    first_trial_bins: std::ops::Range<usize>,
    corr_floor: f64,
) -> Result<()> {
    let t = training_scores.nrows();
    let d = training_scores.ncols();
    if d != model.dims() {
        return Err(Error::DimensionMismatch {
            context: "training scores",
            expected: model.dims(),
            actual: d,
        });
    }
    if reference.sample_count() != t {
        return Err(Error::DimensionMismatch {
            context: "reference alignment",
            expected: t,
            actual: reference.sample_count(),
        });
    }
    let dofs = reference.dof_count();
    if dofs > d {
        return Err(Error::invalid(format!(
            "{dofs} DoFs exceed the {d}-dimensional projection"
        )));
    }
    if first_trial_bins.end > t || first_trial_bins.is_empty() {
        return Err(Error::invalid("first trial window out of range"));
    }

    // All (dof, component) correlations over the training window.
    let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(dofs * d);
    for dof in 0..dofs {
        let r: Vec<f64> = reference.angles().row(dof).to_vec();
        for comp in 0..d {
            let s: Vec<f64> = training_scores.column(comp).to_vec();
            pairs.push((dof, comp, pearson(&r, &s)));
        }
    }
    pairs.sort_by(|x, y| {
        y.2.abs()
            .partial_cmp(&x.2.abs())
            .unwrap()
            .then(x.0.cmp(&y.0))
            .then(x.1.cmp(&y.1))
    });

    let mut chosen: Vec<Option<(usize, f64)>> = vec![None; dofs];
    let mut taken = vec![false; d];
    for (dof, comp, r) in pairs {
        if chosen[dof].is_none() && !taken[comp] {
            chosen[dof] = Some((comp, r));
            taken[comp] = true;
        }
    }

    let mut assignments = Vec::with_capacity(dofs);
    for (dof, slot) in chosen.iter().enumerate() {
        let (comp, r) = slot.expect("greedy assignment covers every DoF");
        if r.abs() < corr_floor {
            return Err(Error::UnassignedDof {
                dof: reference.dof_labels()[dof].clone(),
                best_correlation: r,
                floor: corr_floor,
            });
        }
        let sign = if r >= 0.0 { 1.0 } else { -1.0 };
        let ref_peak = reference
            .angles()
            .row(dof)
            .iter()
            .skip(first_trial_bins.start)
            .take(first_trial_bins.len())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        let score_peak = training_scores
            .column(comp)
            .iter()
            .skip(first_trial_bins.start)
            .take(first_trial_bins.len())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        if score_peak == 0.0 {
            return Err(Error::UnassignedDof {
                dof: reference.dof_labels()[dof].clone(),
                best_correlation: r,
                floor: corr_floor,
            });
        }
        assignments.push(DofAssignment {
            dof: reference.dof_labels()[dof].clone(),
            component: comp,
            sign,
            gain: ref_peak / score_peak,
        });
    }
    model.assignments = assignments;
    Ok(())
}

/// Projects binned activity through the fitted, assigned model to a joint
/// angle trajectory at the bin rate.
pub fn project(model: &ProjectionModel, binned: &BinnedActivity) -> Result<KinematicsTrajectory> {
    if model.assignments.is_empty() {
        return Err(Error::invalid("model has no DoF assignment"));
    }
    let scores = model.transform(binned)?;
    let t = scores.nrows();
    let mut angles = Array2::zeros((model.assignments.len(), t));
    let mut labels = Vec::with_capacity(model.assignments.len());
    for (i, a) in model.assignments.iter().enumerate() {
        for k in 0..t {
            angles[(i, k)] = a.sign * a.gain * scores[(k, a.component)];
        }
        labels.push(a.dof.clone());
    }
    KinematicsTrajectory::new(angles, labels, binned.bin_rate_hz())
}
