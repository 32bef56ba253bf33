//! File formats: binary-first matrix and spike files with CSV fallbacks, the
//! projection model document, study report CSVs, and the run manifest. Every
//! format round-trips bit-exactly (write → read → write reproduces identical
//! bytes).

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::decode::{DofAssignment, ProjectionModel};
use crate::error::{Error, Result};
use crate::eval::{SweepReport, ThresholdingReport};
use crate::sim::{KinematicsTrajectory, SpikeTrainSet};

const MATRIX_MAGIC: &[u8; 4] = b"MDM1";
const SPIKE_MAGIC: &[u8; 4] = b"MSP1";

/// On-disk representation selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Bin,
    Csv,
}

impl std::str::FromStr for FileFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bin" => Ok(FileFormat::Bin),
            "csv" => Ok(FileFormat::Csv),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

impl FileFormat {
    pub fn matrix_extension(self) -> &'static str {
        match self {
            FileFormat::Bin => "mdm",
            FileFormat::Csv => "csv",
        }
    }

    pub fn spike_extension(self) -> &'static str {
        match self {
            FileFormat::Bin => "msp",
            FileFormat::Csv => "csv",
        }
    }
}

// Shortest representation that parses back to the identical bits.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::format(path.display(), format!("bad float {s:?}")))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes a real matrix with an optional sample rate.
///
/// Binary layout: magic `MDM1`, rows u64, cols u64, rate-present u8, rate f64,
/// then rows×cols f64 payload, all little-endian, row-major. The CSV variant
/// has one header line `MDM1,<rows>,<cols>,<rate|->` followed by one line per
/// row.
pub fn write_matrix(
    path: &Path,
    matrix: &Array2<f64>,
    sample_rate_hz: Option<f64>,
    format: FileFormat,
) -> Result<()> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path.display(), "non-finite value in matrix"));
    }
    let (rows, cols) = matrix.dim();
    match format {
        FileFormat::Bin => {
            let mut bytes = Vec::with_capacity(4 + 8 + 8 + 1 + 8 + rows * cols * 8);
            bytes.extend_from_slice(MATRIX_MAGIC);
            bytes.extend_from_slice(&(rows as u64).to_le_bytes());
            bytes.extend_from_slice(&(cols as u64).to_le_bytes());
            bytes.push(u8::from(sample_rate_hz.is_some()));
            bytes.extend_from_slice(&sample_rate_hz.unwrap_or(0.0).to_le_bytes());
            for v in matrix.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            write_bytes(path, &bytes)
        }
        FileFormat::Csv => {
            let mut text = String::new();
            let rate = match sample_rate_hz {
                Some(r) => fmt_f64(r),
                None => "-".to_string(),
            };
            text.push_str(&format!("MDM1,{rows},{cols},{rate}\n"));
            for r in 0..rows {
                let line: Vec<String> = (0..cols).map(|c| fmt_f64(matrix[(r, c)])).collect();
                text.push_str(&line.join(","));
                text.push('\n');
            }
            write_bytes(path, text.as_bytes())
        }
    }
}

/// Reads a matrix file in either format (detected from the leading bytes).
pub fn read_matrix(path: &Path) -> Result<(Array2<f64>, Option<f64>)> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(MATRIX_MAGIC) && !bytes.starts_with(b"MDM1,") {
        if bytes.len() < 4 + 8 + 8 + 1 + 8 {
            return Err(Error::format(path.display(), "truncated header"));
        }
        let rows = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let has_rate = bytes[20] != 0;
        let rate = f64::from_le_bytes(bytes[21..29].try_into().unwrap());
        let payload = &bytes[29..];
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::format(path.display(), "dimension overflow"))?;
        if payload.len() != expected {
            return Err(Error::format(
                path.display(),
                format!("payload is {} bytes, expected {expected}", payload.len()),
            ));
        }
        let mut matrix = Array2::zeros((rows, cols));
        for (i, chunk) in payload.chunks_exact(8).enumerate() {
            matrix[(i / cols.max(1), i % cols.max(1))] =
                f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok((matrix, has_rate.then_some(rate)))
    } else {
        let text =
            String::from_utf8(bytes).map_err(|_| Error::format(path.display(), "not UTF-8"))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(path.display(), "empty file"))?;
        let fields: Vec<&str> = header.split(',').collect();
        if fields.len() != 4 || fields[0] != "MDM1" {
            return Err(Error::format(path.display(), "bad matrix header"));
        }
        let rows: usize = fields[1]
            .parse()
            .map_err(|_| Error::format(path.display(), "bad row count"))?;
        let cols: usize = fields[2]
            .parse()
            .map_err(|_| Error::format(path.display(), "bad column count"))?;
        let rate = if fields[3] == "-" {
            None
        } else {
            Some(parse_f64(fields[3], path)?)
        };
        let mut matrix = Array2::zeros((rows, cols));
        for r in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| Error::format(path.display(), format!("missing row {r}")))?;
            let values: Vec<&str> = line.split(',').collect();
            if values.len() != cols {
                return Err(Error::format(
                    path.display(),
                    format!("row {r} has {} values, expected {cols}", values.len()),
                ));
            }
            for (c, s) in values.iter().enumerate() {
                matrix[(r, c)] = parse_f64(s, path)?;
            }
        }
        if lines.next().is_some_and(|l| !l.trim().is_empty()) {
            return Err(Error::format(path.display(), "trailing data"));
        }
        Ok((matrix, rate))
    }
}

/// Writes spike trains.
///
/// Binary layout: magic `MSP1`, channel count u64, sample rate f64, duration
/// u64, record count u64, then (channel u64, sample u64) pairs sorted by
/// channel then sample. The CSV variant has one header line
/// `MSP1,<channels>,<sample_rate>,<duration>` followed by `channel,sample`
/// rows in the same order.
pub fn write_spikes(path: &Path, spikes: &SpikeTrainSet, format: FileFormat) -> Result<()> {
    let channels = spikes.source_count();
    let records: Vec<(u64, u64)> = spikes
        .trains()
        .iter()
        .enumerate()
        .flat_map(|(c, train)| train.iter().map(move |&s| (c as u64, s as u64)))
        .collect();
    match format {
        FileFormat::Bin => {
            let mut bytes = Vec::with_capacity(4 + 8 * 4 + records.len() * 16);
            bytes.extend_from_slice(SPIKE_MAGIC);
            bytes.extend_from_slice(&(channels as u64).to_le_bytes());
            bytes.extend_from_slice(&spikes.sample_rate_hz().to_le_bytes());
            bytes.extend_from_slice(&(spikes.duration_samples() as u64).to_le_bytes());
            bytes.extend_from_slice(&(records.len() as u64).to_le_bytes());
            for (c, s) in records {
                bytes.extend_from_slice(&c.to_le_bytes());
                bytes.extend_from_slice(&s.to_le_bytes());
            }
            write_bytes(path, &bytes)
        }
        FileFormat::Csv => {
            let mut text = format!(
                "MSP1,{channels},{},{}\n",
                fmt_f64(spikes.sample_rate_hz()),
                spikes.duration_samples()
            );
            for (c, s) in records {
                text.push_str(&format!("{c},{s}\n"));
            }
            write_bytes(path, text.as_bytes())
        }
    }
}

/// Reads a spike file in either format. Channel labels are regenerated as
/// `src{index}` (the format stores none).
pub fn read_spikes(path: &Path) -> Result<SpikeTrainSet> {
    let bytes = read_bytes(path)?;
    let (channels, rate, duration, records) =
        if bytes.starts_with(SPIKE_MAGIC) && !bytes.starts_with(b"MSP1,") {
            if bytes.len() < 4 + 32 {
                return Err(Error::format(path.display(), "truncated header"));
            }
            let channels = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
            let rate = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
            let duration = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
            let count = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
            let payload = &bytes[36..];
            if payload.len() != count * 16 {
                return Err(Error::format(
                    path.display(),
                    format!(
                        "payload is {} bytes, expected {}",
                        payload.len(),
                        count * 16
                    ),
                ));
            }
            let mut records = Vec::with_capacity(count);
            for chunk in payload.chunks_exact(16) {
                let c = u64::from_le_bytes(chunk[..8].try_into().unwrap()) as usize;
                let s = u64::from_le_bytes(chunk[8..].try_into().unwrap()) as usize;
                records.push((c, s));
            }
            (channels, rate, duration, records)
        } else {
            let text =
                String::from_utf8(bytes).map_err(|_| Error::format(path.display(), "not UTF-8"))?;
            let mut lines = text.lines();
            let header = lines
                .next()
                .ok_or_else(|| Error::format(path.display(), "empty file"))?;
            let fields: Vec<&str> = header.split(',').collect();
            if fields.len() != 4 || fields[0] != "MSP1" {
                return Err(Error::format(path.display(), "bad spike header"));
            }
            let channels: usize = fields[1]
                .parse()
                .map_err(|_| Error::format(path.display(), "bad channel count"))?;
            let rate = parse_f64(fields[2], path)?;
            let duration: usize = fields[3]
                .trim()
                .parse()
                .map_err(|_| Error::format(path.display(), "bad duration"))?;
            let mut records = Vec::new();
            for (i, line) in lines.enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parts: Vec<&str> = line.split(',').collect();
                if parts.len() != 2 {
                    return Err(Error::format(path.display(), format!("bad record {i}")));
                }
                let c: usize = parts[0].parse().map_err(|_| {
                    Error::format(path.display(), format!("bad channel in record {i}"))
                })?;
                let s: usize = parts[1].trim().parse().map_err(|_| {
                    Error::format(path.display(), format!("bad sample in record {i}"))
                })?;
                records.push((c, s));
            }
            (channels, rate, duration, records)
        };

    let mut trains = vec![Vec::new(); channels];
    let mut last: Option<(usize, usize)> = None;
    for (c, s) in records {
        if c >= channels {
            return Err(Error::format(
                path.display(),
                format!("channel {c} out of range"),
            ));
        }
        if let Some((lc, ls)) = last {
            if (c, s) <= (lc, ls) {
                return Err(Error::format(
                    path.display(),
                    "records not sorted by channel then sample",
                ));
            }
        }
        last = Some((c, s));
        trains[c].push(s);
    }
    let labels = (0..channels).map(|c| format!("src{c:03}")).collect();
    SpikeTrainSet::new(trains, labels, rate, duration)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssignmentDoc {
    dof: String,
    component: usize,
    sign: f64,
    gain: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    bin_ms: f64,
    smoothing_cutoff_hz: Option<f64>,
    config_hash: Option<String>,
    column_labels: Vec<String>,
    column_means: Vec<f64>,
    singular_values: Vec<f64>,
    /// Row-major D×d.
    loadings: Vec<Vec<f64>>,
    /// Row-major d×d.
    rotation: Vec<Vec<f64>>,
    assignments: Vec<AssignmentDoc>,
}

/// Serializes a fitted projection model as a single TOML document. All reals
/// survive the round trip bit-exactly.
pub fn write_model(path: &Path, model: &ProjectionModel, config_hash: Option<u64>) -> Result<()> {
    let doc = ModelDoc {
        format: "myodecode-model-v1".to_string(),
        bin_ms: model.bin_ms(),
        smoothing_cutoff_hz: model.smoothing_cutoff_hz(),
        config_hash: config_hash.map(|h| format!("{h:016x}")),
        column_labels: model.column_labels().to_vec(),
        column_means: model.column_means().to_vec(),
        singular_values: model.singular_values().to_vec(),
        loadings: model
            .loadings()
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
        rotation: model
            .rotation()
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
        assignments: model
            .assignments()
            .iter()
            .map(|a| AssignmentDoc {
                dof: a.dof.clone(),
                component: a.component,
                sign: a.sign,
                gain: a.gain,
            })
            .collect(),
    };
    let text =
        toml::to_string_pretty(&doc).map_err(|e| Error::format(path.display(), e.to_string()))?;
    write_bytes(path, text.as_bytes())
}

fn rows_to_array(rows: &[Vec<f64>], path: &Path) -> Result<Array2<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::format(path.display(), "ragged matrix rows"));
    }
    let mut out = Array2::zeros((nrows, ncols));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Reads a projection model document; returns the model and the recorded
/// config hash when present.
pub fn read_model(path: &Path) -> Result<(ProjectionModel, Option<u64>)> {
    let text = String::from_utf8(read_bytes(path)?)
        .map_err(|_| Error::format(path.display(), "not UTF-8"))?;
    let doc: ModelDoc =
        toml::from_str(&text).map_err(|e| Error::format(path.display(), e.to_string()))?;
    if doc.format != "myodecode-model-v1" {
        return Err(Error::format(
            path.display(),
            format!("unsupported model format {:?}", doc.format),
        ));
    }
    let loadings = rows_to_array(&doc.loadings, path)?;
    let rotation = rows_to_array(&doc.rotation, path)?;
    let assignments = doc
        .assignments
        .into_iter()
        .map(|a| DofAssignment {
            dof: a.dof,
            component: a.component,
            sign: a.sign,
            gain: a.gain,
        })
        .collect();
    let hash = match doc.config_hash {
        Some(h) => Some(
            u64::from_str_radix(&h, 16)
                .map_err(|_| Error::format(path.display(), "bad config hash"))?,
        ),
        None => None,
    };
    let model = ProjectionModel::from_parts(
        doc.column_labels,
        Array1::from_vec(doc.column_means),
        loadings,
        Array1::from_vec(doc.singular_values),
        rotation,
        doc.bin_ms,
        doc.smoothing_cutoff_hz,
        assignments,
    )?;
    Ok((model, hash))
}

/// Per-run rows of a sweep report: `label,size,run,r2_train,r2_test`.
pub fn sweep_runs_csv(report: &SweepReport) -> String {
    let mut text = String::from("label,size,run,r2_train,r2_test\n");
    for entry in &report.entries {
        let size = entry.size.map_or(String::new(), |s| s.to_string());
        for run in 0..entry.train.values.len() {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                entry.label,
                size,
                run,
                fmt_f64(entry.train.values[run]),
                fmt_f64(entry.test.values[run]),
            ));
        }
    }
    text
}

/// Aggregate rows of a sweep report (mean/variance/median/quartiles), shaped
/// for percentile plots.
pub fn sweep_aggregate_csv(report: &SweepReport) -> String {
    let mut text = String::from(
        "label,size,runs,train_mean,train_variance,train_median,train_p25,train_p75,\
         test_mean,test_variance,test_median,test_p25,test_p75\n",
    );
    for entry in &report.entries {
        let size = entry.size.map_or(String::new(), |s| s.to_string());
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            entry.label,
            size,
            entry.train.values.len(),
            fmt_f64(entry.train.mean),
            fmt_f64(entry.train.variance),
            fmt_f64(entry.train.median),
            fmt_f64(entry.train.p25),
            fmt_f64(entry.train.p75),
            fmt_f64(entry.test.mean),
            fmt_f64(entry.test.variance),
            fmt_f64(entry.test.median),
            fmt_f64(entry.test.p25),
            fmt_f64(entry.test.p75),
        ));
    }
    text
}

/// Raster rows for plotting: `source,label,sample,time_s`.
pub fn raster_csv(spikes: &SpikeTrainSet) -> String {
    let mut text = String::from("source,label,sample,time_s\n");
    let fs = spikes.sample_rate_hz();
    for (c, train) in spikes.trains().iter().enumerate() {
        for &s in train {
            text.push_str(&format!(
                "{c},{},{s},{}\n",
                spikes.labels()[c],
                fmt_f64(s as f64 / fs)
            ));
        }
    }
    text
}

/// Per-candidate decomposition diagnostics: `source,spike_count,sil,qualified`.
pub fn diagnostics_csv(diagnostics: &[crate::bss::SourceDiagnostic]) -> String {
    let mut text = String::from("source,spike_count,sil,qualified\n");
    for d in diagnostics {
        text.push_str(&format!(
            "{},{},{},{}\n",
            d.source,
            d.spike_count,
            d.sil.map_or(String::new(), fmt_f64),
            d.qualified
        ));
    }
    text
}

/// Estimates next to the reference: `time_s,est_<dof>…,ref_<dof>…`.
pub fn estimates_csv(
    estimate: &KinematicsTrajectory,
    reference: &KinematicsTrajectory,
) -> Result<String> {
    if estimate.sample_count() != reference.sample_count()
        || estimate.dof_labels() != reference.dof_labels()
    {
        return Err(Error::invalid("estimate and reference are not congruent"));
    }
    let mut text = String::from("time_s");
    for label in estimate.dof_labels() {
        text.push_str(&format!(",est_{label}"));
    }
    for label in reference.dof_labels() {
        text.push_str(&format!(",ref_{label}"));
    }
    text.push('\n');
    let rate = estimate.sample_rate_hz();
    for k in 0..estimate.sample_count() {
        text.push_str(&fmt_f64(k as f64 / rate));
        for d in 0..estimate.dof_count() {
            text.push_str(&format!(",{}", fmt_f64(estimate.angles()[(d, k)])));
        }
        for d in 0..reference.dof_count() {
            text.push_str(&format!(",{}", fmt_f64(reference.angles()[(d, k)])));
        }
        text.push('\n');
    }
    Ok(text)
}

#[derive(Debug, Serialize)]
struct DetectorSummaryDoc {
    detector: String,
    qualified_sources: usize,
    total_spikes: usize,
    neuron_recall: Option<f64>,
    spike_recall: Option<f64>,
    r2_train: Option<f64>,
    r2_test: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ThresholdingDoc {
    improvement_percent: Option<f64>,
    warnings: Vec<String>,
    adaptive: DetectorSummaryDoc,
    kmeans: DetectorSummaryDoc,
}

/// Serializes the thresholding comparison summary as TOML.
pub fn thresholding_summary_toml(report: &ThresholdingReport) -> String {
    let arm = |o: &crate::eval::DetectorOutcome| DetectorSummaryDoc {
        detector: format!("{:?}", o.detector).to_lowercase(),
        qualified_sources: o.qualified_sources,
        total_spikes: o.total_spikes,
        neuron_recall: o.matching.as_ref().map(|m| m.neuron_recall),
        spike_recall: o.matching.as_ref().map(|m| m.spike_recall),
        r2_train: o.r2_train,
        r2_test: o.r2_test,
    };
    let doc = ThresholdingDoc {
        improvement_percent: report.improvement_percent,
        warnings: report.warnings.clone(),
        adaptive: arm(&report.adaptive),
        kmeans: arm(&report.kmeans),
    };
    toml::to_string_pretty(&doc).expect("summary serializes")
}

/// The manifest written next to every CLI output set: the resolved config,
/// the seed, and the produced files. Re-running from a manifest reproduces
/// the outputs byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub format: FileFormat,
    pub outputs: Vec<String>,
    pub config: RunConfig,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let text = toml::to_string_pretty(manifest)
        .map_err(|e| Error::format(path.display(), e.to_string()))?;
    write_bytes(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = String::from_utf8(read_bytes(path)?)
        .map_err(|_| Error::format(path.display(), "not UTF-8"))?;
    toml::from_str(&text).map_err(|e| Error::format(path.display(), e.to_string()))
}
