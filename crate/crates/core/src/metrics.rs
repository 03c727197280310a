//! Outcome metrics: the ten per-sample measurements, their dataset means, and
//! the three composite indices (creditor recovery, debtor health, and their
//! weighted harmonic mean).

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DebtRecord, NegotiationOutcome, Transcript};
use crate::projection::{
    build_schedule, recovery_days, simulate, DayCaps, ProjectionConfig, ProjectionError, RepaymentSchedule,
    Trajectory,
};

/// Number of daily tier observations in the one-year variance window.
pub const ATV_WINDOW_DAYS: usize = 365;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot evaluate an empty dataset")]
    EmptyDataset,
    #[error("no debt record with id `{0}`")]
    MissingRecord(String),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("csv: {0}")]
    Csv(String),
}

/// Which CCI coefficient to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CciForm {
    /// `(1+θ²)·CRI·DHI / (CRI + θ²·DHI)`; reproduces the reference index values.
    #[default]
    Harmonic,
    /// `2θ²·CRI·DHI / (CRI + θ²·DHI)`, kept for comparison only.
    Printed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
    pub w7: f64,
    pub w8: f64,
    pub theta: f64,
    pub max_qrd: f64,
    pub max_hrd: f64,
    pub max_cd: f64,
    pub max_l1d: f64,
    pub max_l2d: f64,
    pub cci_form: CciForm,
}

impl Default for MetricWeights {
    fn default() -> Self {
        MetricWeights {
            w1: 0.25,
            w2: 0.25,
            w3: 0.2,
            w4: 0.15,
            w5: 0.15,
            w6: 1.5,
            w7: 0.8,
            w8: 1.0,
            theta: 2.0,
            max_qrd: 180.0,
            max_hrd: 360.0,
            max_cd: 720.0,
            max_l1d: 30.0,
            max_l2d: 250.0,
            cci_form: CciForm::Harmonic,
        }
    }
}

impl MetricWeights {
    pub fn day_caps(&self) -> DayCaps {
        DayCaps {
            qrd: self.max_qrd.round() as u32,
            hrd: self.max_hrd.round() as u32,
            cd: self.max_cd.round() as u32,
        }
    }
}

/// Metrics for one negotiated case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub record_id: String,
    pub agreed: bool,
    pub success: bool,
    pub rr: f64,
    pub qrd: u32,
    pub hrd: u32,
    pub cd: u32,
    pub l1d: u32,
    pub l2d: u32,
    pub atv: f64,
    pub dc: f64,
    /// Human-annotated dialogue soundness, if imported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ds: Option<f64>,
}

impl SampleMetrics {
    /// Indices of this sample taken alone (SR is 0 or 1).
    pub fn indices(&self, weights: &MetricWeights) -> Indices {
        Aggregates::from_samples(std::slice::from_ref(self))
            .expect("one sample")
            .indices(weights)
    }
}

/// Dataset means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n: usize,
    pub n_success: usize,
    pub dc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ds: Option<f64>,
    pub sr: f64,
    pub rr: f64,
    pub qrd: f64,
    pub hrd: f64,
    pub cd: f64,
    pub l1d: f64,
    pub l2d: f64,
    pub atv: f64,
}

impl Aggregates {
    pub fn from_samples(samples: &[SampleMetrics]) -> Result<Self, MetricsError> {
        if samples.is_empty() {
            return Err(MetricsError::EmptyDataset);
        }
        let n = samples.len();
        let mean = |f: &dyn Fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / n as f64;
        let n_success = samples.iter().filter(|s| s.success).count();
        let ds_values: Vec<f64> = samples.iter().filter_map(|s| s.ds).collect();
        Ok(Aggregates {
            n,
            n_success,
            dc: mean(&|s| s.dc),
            ds: (!ds_values.is_empty()).then(|| ds_values.iter().sum::<f64>() / ds_values.len() as f64),
            sr: n_success as f64 / n as f64,
            rr: mean(&|s| s.rr),
            qrd: mean(&|s| s.qrd as f64),
            hrd: mean(&|s| s.hrd as f64),
            cd: mean(&|s| s.cd as f64),
            l1d: mean(&|s| s.l1d as f64),
            l2d: mean(&|s| s.l2d as f64),
            atv: mean(&|s| s.atv),
        })
    }

    pub fn indices(&self, weights: &MetricWeights) -> Indices {
        let cri = cri(self, weights);
        let dhi = dhi(self, weights);
        Indices { cri, dhi, cci: cci_with(cri, dhi, weights.theta, weights.cci_form) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Indices {
    pub cri: f64,
    pub dhi: f64,
    pub cci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: Vec<SampleMetrics>,
    pub aggregates: Aggregates,
    pub indices: Indices,
}

impl MetricsReport {
    pub fn from_samples(samples: Vec<SampleMetrics>, weights: &MetricWeights) -> Result<Self, MetricsError> {
        let aggregates = Aggregates::from_samples(&samples)?;
        let indices = aggregates.indices(weights);
        Ok(MetricsReport { samples, aggregates, indices })
    }

    /// Attaches human dialogue-soundness scores by record id and refreshes the mean.
    pub fn attach_ds(&mut self, scores: &HashMap<String, f64>) {
        for s in &mut self.samples {
            if let Some(v) = scores.get(&s.record_id) {
                s.ds = Some(*v);
            }
        }
        let ds: Vec<f64> = self.samples.iter().filter_map(|s| s.ds).collect();
        self.aggregates.ds = (!ds.is_empty()).then(|| ds.iter().sum::<f64>() / ds.len() as f64);
    }
}

pub const CSV_HEADER: [&str; 13] = [
    "run", "DC", "SR", "RR", "QRD", "HRD", "CD", "L1D", "L2D", "ATV", "CRI", "DHI", "CCI",
];

/// Writes one summary row per labelled report.
pub fn write_summary_csv<W: Write>(writer: W, rows: &[(&str, &MetricsReport)]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| MetricsError::Csv(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for (label, report) in rows {
        let a = &report.aggregates;
        let i = &report.indices;
        let mut row = vec![label.to_string()];
        row.extend(
            [a.dc, a.sr, a.rr, a.qrd, a.hrd, a.cd, a.l1d, a.l2d, a.atv, i.cri, i.dhi, i.cci]
                .iter()
                .map(|v| format!("{v:.6}")),
        );
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

/// Reads `record_id,ds` annotation rows.
pub fn read_ds_csv<R: Read>(reader: R) -> Result<HashMap<String, f64>, MetricsError> {
    #[derive(Deserialize)]
    struct Row {
        record_id: String,
        ds: f64,
    }
    let mut r = csv::Reader::from_reader(reader);
    let mut out = HashMap::new();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(|e| MetricsError::Csv(e.to_string()))?;
        out.insert(row.record_id, row.ds);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Per-sample metrics
// ---------------------------------------------------------------------------

/// Assets stayed strictly above the floor on every projected day.
pub fn success(traj: &Trajectory, cfg: &ProjectionConfig) -> bool {
    traj.min_assets() > cfg.success_floor
}

/// `1 - disc_ratio` for a successful agreement, else 0.
pub fn recovery_ratio(outcome: Option<&NegotiationOutcome>, success: bool) -> f64 {
    match outcome {
        Some(o) if success => o.disc_ratio().complement().as_f64(),
        _ => 0.0,
    }
}

/// Days (0 through horizon inclusive) spent in tier 1 and tier 2.
pub fn tier_days(traj: &Trajectory) -> (u32, u32) {
    let count = |tier: u8| traj.tier.iter().filter(|t| **t == tier).count() as u32;
    (count(1), count(2))
}

/// Sample variance of the tier series over the first year.
pub fn atv(traj: &Trajectory) -> f64 {
    let window = &traj.tier[..traj.tier.len().min(ATV_WINDOW_DAYS)];
    if window.len() < 2 {
        return 0.0;
    }
    let n = window.len() as f64;
    let mean = window.iter().map(|t| *t as f64).sum::<f64>() / n;
    window.iter().map(|t| (*t as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Share of the four dimensions that any action in the transcript touched.
pub fn dialogue_completeness(transcript: &Transcript) -> f64 {
    let dims: BTreeSet<_> = transcript.turns.iter().flat_map(|t| t.actions.iter().map(|a| a.dim)).collect();
    dims.len() as f64 / 4.0
}

fn normalized_gap(value: f64, max: f64) -> f64 {
    if max <= 0.0 {
        return 0.0;
    }
    (max - value.clamp(0.0, max)) / max
}

pub fn cri(a: &Aggregates, w: &MetricWeights) -> f64 {
    w.w1 * a.sr.clamp(0.0, 1.0)
        + w.w2 * a.rr.clamp(0.0, 1.0)
        + w.w3 * normalized_gap(a.qrd, w.max_qrd)
        + w.w4 * normalized_gap(a.hrd, w.max_hrd)
        + w.w5 * normalized_gap(a.cd, w.max_cd)
}

pub fn dhi(a: &Aggregates, w: &MetricWeights) -> f64 {
    w.w6 * normalized_gap(a.l1d, w.max_l1d) + w.w7 * normalized_gap(a.l2d, w.max_l2d) - w.w8 * a.atv
}

/// θ-weighted harmonic mean of CRI and DHI. Returns 0 when the denominator is not positive.
pub fn cci(cri: f64, dhi: f64, theta: f64) -> f64 {
    cci_with(cri, dhi, theta, CciForm::Harmonic)
}

pub fn cci_with(cri: f64, dhi: f64, theta: f64, form: CciForm) -> f64 {
    let t2 = theta * theta;
    let denom = cri + t2 * dhi;
    if denom <= 0.0 {
        return 0.0;
    }
    let coef = match form {
        CciForm::Harmonic => 1.0 + t2,
        CciForm::Printed => 2.0 * t2,
    };
    coef * cri * dhi / denom
}

/// Everything derived for one transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEvaluation {
    pub metrics: SampleMetrics,
    pub schedule: RepaymentSchedule,
    pub trajectory: Trajectory,
}

/// Projects one transcript's outcome and measures it. Sessions without
/// agreement are projected with an empty schedule and count as failures.
pub fn evaluate_sample(
    transcript: &Transcript,
    record: &DebtRecord,
    cfg: &ProjectionConfig,
    weights: &MetricWeights,
) -> Result<SampleEvaluation, MetricsError> {
    let schedule = match &transcript.outcome {
        Some(o) => build_schedule(o, record.amount(), cfg)?,
        None => RepaymentSchedule::empty(),
    };
    let trajectory = simulate(record.profile(), &schedule, cfg);
    let ok = transcript.outcome.is_some() && success(&trajectory, cfg);
    let days = recovery_days(&trajectory, &schedule, weights.day_caps());
    let (l1d, l2d) = tier_days(&trajectory);
    let metrics = SampleMetrics {
        record_id: transcript.record_id.clone(),
        agreed: transcript.outcome.is_some(),
        success: ok,
        rr: recovery_ratio(transcript.outcome.as_ref(), ok),
        qrd: days.qrd,
        hrd: days.hrd,
        cd: days.cd,
        l1d,
        l2d,
        atv: atv(&trajectory),
        dc: dialogue_completeness(transcript),
        ds: None,
    };
    Ok(SampleEvaluation { metrics, schedule, trajectory })
}

/// Scores a set of transcripts against their records. Per-sample work runs in
/// parallel; sample order follows the input transcripts.
pub fn evaluate_dataset(
    transcripts: &[Transcript],
    records: &[DebtRecord],
    cfg: &ProjectionConfig,
    weights: &MetricWeights,
) -> Result<MetricsReport, MetricsError> {
    if transcripts.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let by_id: HashMap<&str, &DebtRecord> = records.iter().map(|r| (r.record_id(), r)).collect();
    let samples = transcripts
        .par_iter()
        .map(|t| {
            let record = by_id
                .get(t.record_id.as_str())
                .ok_or_else(|| MetricsError::MissingRecord(t.record_id.clone()))?;
            evaluate_sample(t, record, cfg, weights).map(|e| e.metrics)
        })
        .collect::<Result<Vec<_>, _>>()?;
    MetricsReport::from_samples(samples, weights)
}
