use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train_model, BenchError, ClipSource, ExperimentConfig};
use crate::losses::LossWeights;
use crate::metrics::EvalReport;
use crate::par::{self, Execution};
use crate::trainer::{synth_corpus, CorpusSpec, SnrPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TrainingSnr,
    Layer,
    LossWeights,
    PretrainData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepPoint {
    TrainingSnr(SnrPolicy),
    Layer(usize),
    LossWeights(LossWeights),
    PretrainData { label: String, corpus: CorpusSpec },
}

impl SweepPoint {
    pub fn axis(&self) -> SweepAxis {
        match self {
            SweepPoint::TrainingSnr(_) => SweepAxis::TrainingSnr,
            SweepPoint::Layer(_) => SweepAxis::Layer,
            SweepPoint::LossWeights(_) => SweepAxis::LossWeights,
            SweepPoint::PretrainData { .. } => SweepAxis::PretrainData,
        }
    }

    /// Row label in the comparison table.
    pub fn label(&self) -> String {
        match self {
            SweepPoint::TrainingSnr(p) => p.label(),
            SweepPoint::Layer(l) => format!("Layer {l}"),
            SweepPoint::LossWeights(w) => {
                let name = match (w.alpha > 0.0, w.beta > 0.0) {
                    (true, false) => "Tagging Loss",
                    (false, true) => "Mixture Loss",
                    _ => "Tagging Loss + Mixture Loss",
                };
                format!("{name} (α={}, β={})", w.alpha, w.beta)
            }
            SweepPoint::PretrainData { label, .. } => label.clone(),
        }
    }

    /// The experiment this point trains, or `None` for points that reuse the base model.
    fn apply(&self, base: &ExperimentConfig) -> Option<ExperimentConfig> {
        let mut c = base.clone();
        match self {
            SweepPoint::TrainingSnr(p) => c.train.snr_policy = *p,
            SweepPoint::LossWeights(w) => c.train.loss_weights = *w,
            SweepPoint::PretrainData { corpus, .. } => c.corpus = corpus.clone(),
            SweepPoint::Layer(_) => return None,
        }
        Some(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub base: ExperimentConfig,
    /// Train points concurrently. Every point keeps the base seeds, so results
    /// match the sequential order.
    #[serde(default)]
    pub parallel: bool,
}

impl SweepPlan {
    pub fn new(axis: SweepAxis, points: Vec<SweepPoint>, base: ExperimentConfig) -> Self {
        Self { axis, points, base, parallel: false }
    }

    pub fn training_snr(policies: &[SnrPolicy], base: ExperimentConfig) -> Self {
        Self::new(SweepAxis::TrainingSnr, policies.iter().map(|p| SweepPoint::TrainingSnr(*p)).collect(), base)
    }

    /// Every block of the base encoder.
    pub fn layers(base: ExperimentConfig) -> Self {
        let n = base.train.encoder.n_layers;
        Self::new(SweepAxis::Layer, (1..=n).map(SweepPoint::Layer).collect(), base)
    }

    pub fn loss_weights(weights: &[(f64, f64)], base: ExperimentConfig) -> Self {
        let points = weights
            .iter()
            .map(|&(a, b)| SweepPoint::LossWeights(LossWeights { alpha: a, beta: b, ..base.train.loss_weights }))
            .collect();
        Self::new(SweepAxis::LossWeights, points, base)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.points.is_empty() {
            return Err(BenchError::InvalidSpec("sweep has no points".into()));
        }
        if let Some(p) = self.points.iter().find(|p| p.axis() != self.axis) {
            return Err(BenchError::InvalidSpec(format!("point {p:?} is not on the {:?} axis", self.axis)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub point: SweepPoint,
    pub report: EvalReport,
}

impl SweepRow {
    pub fn labeled(&self) -> (&str, &EvalReport) {
        (&self.label, &self.report)
    }
}

fn point_path(dir: &Path, i: usize) -> std::path::PathBuf {
    dir.join("points").join(format!("point_{i:03}.json"))
}

/// Trains and evaluates every point with the base seeds. With `out_dir`, each
/// finished point is written to `points/` and `comparison.csv` is refreshed;
/// points already on disk are loaded instead of recomputed.
pub fn sweep(plan: &SweepPlan, out_dir: Option<&Path>, mode: Execution) -> Result<Vec<SweepRow>, BenchError> {
    plan.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join("points"))?;
        fs::write(dir.join("plan.json"), serde_json::to_vec_pretty(plan)?)?;
    }
    let base = &plan.base;
    let (machines, noises) = base.synth_pools(mode)?;
    let subsets = base.build_subsets(&machines, &noises, mode)?;
    let sources: Vec<&dyn ClipSource> = subsets.iter().map(|s| s as &dyn ClipSource).collect();

    let cached = |i: usize| -> Result<Option<SweepRow>, BenchError> {
        match out_dir.map(|d| point_path(d, i)) {
            Some(p) if p.exists() => Ok(Some(serde_json::from_slice(&fs::read(p)?)?)),
            _ => Ok(None),
        }
    };
    let persist = |i: usize, row: &SweepRow| -> Result<(), BenchError> {
        if let Some(dir) = out_dir {
            fs::write(point_path(dir, i), serde_json::to_vec_pretty(row)?)?;
        }
        Ok(())
    };

    let mut rows: Vec<Option<SweepRow>> = (0..plan.points.len()).map(cached).collect::<Result<_, _>>()?;

    if plan.axis == SweepAxis::Layer {
        let todo: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].is_none()).collect();
        if !todo.is_empty() {
            let corpus = base.synth_corpus(mode)?;
            let model = train_model(&corpus, &base.train, mode, None)?;
            let layers: Vec<usize> = todo
                .iter()
                .map(|&i| match plan.points[i] {
                    SweepPoint::Layer(l) => l,
                    _ => unreachable!("validated axis"),
                })
                .collect();
            let reports = model.evaluate(&sources, &layers, &base.eval)?;
            for (&i, report) in todo.iter().zip(reports) {
                let row = SweepRow { label: plan.points[i].label(), point: plan.points[i].clone(), report };
                persist(i, &row)?;
                rows[i] = Some(row);
            }
        }
    } else {
        let run_point = |i: usize, inner: Execution| -> Result<SweepRow, BenchError> {
            let point = &plan.points[i];
            let cfg = point.apply(base).expect("training axis");
            let corpus = synth_corpus(&cfg.corpus, inner)?;
            let model = train_model(&corpus, &cfg.train, inner, None)?;
            let layer = model.scoring_layer(cfg.layer)?;
            let eval = crate::bench::EvalSettings { mode: inner, ..cfg.eval };
            let report = model.evaluate(&sources, &[layer], &eval)?.remove(0);
            let row = SweepRow { label: point.label(), point: point.clone(), report };
            persist(i, &row)?;
            Ok(row)
        };
        let todo: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].is_none()).collect();
        if plan.parallel {
            let done = par::try_map(Execution::Parallel, &todo, |&i| run_point(i, mode))?;
            for (i, row) in todo.into_iter().zip(done) {
                rows[i] = Some(row);
            }
        } else {
            for i in todo {
                rows[i] = Some(run_point(i, mode)?);
                if let Some(dir) = out_dir {
                    let partial: Vec<SweepRow> = rows.iter().flatten().cloned().collect();
                    fs::write(dir.join("comparison.csv"), comparison_csv(partial.iter().map(SweepRow::labeled)))?;
                }
            }
        }
    }

    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.expect("every point filled")).collect();
    if let Some(dir) = out_dir {
        fs::write(dir.join("comparison.csv"), comparison_csv(rows.iter().map(SweepRow::labeled)))?;
    }
    Ok(rows)
}

/// One row per point: cell scores per subset and SNR, then the low-SNR and
/// overall harmonic means. Scores are percentages.
pub fn comparison_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a EvalReport)>) -> String {
    let rows: Vec<(&str, &EvalReport)> = rows.into_iter().collect();
    let mut subsets: Vec<String> = Vec::new();
    let mut snrs: Vec<i64> = Vec::new();
    for (_, r) in &rows {
        for s in r.subsets() {
            if !subsets.contains(&s) {
                subsets.push(s);
            }
        }
        snrs.extend(r.snrs());
    }
    snrs.sort_unstable();
    snrs.dedup();

    let mut out = String::from("label");
    for s in &subsets {
        for snr in &snrs {
            let _ = write!(out, ",{s}_{snr}");
        }
    }
    out.push_str(",hmean_low_snr,hmean_all\n");
    let pct = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{:.2}", x * 100.0));
    for (label, r) in rows {
        out.push_str(&csv_field(label));
        for s in &subsets {
            for &snr in &snrs {
                let _ = write!(out, ",{}", pct(r.cell(s, snr)));
            }
        }
        let _ = writeln!(out, ",{},{}", pct(r.hmean_low_snr), pct(Some(r.hmean_all)));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
