//! ROC AUC, partial AUC and the DCASE official score.
//!
//! Domain-wise AUCs follow the DCASE Task 2 evaluator: the source AUC compares
//! source-domain normal clips against every anomalous clip, likewise for the
//! target AUC. pAUC pools both domains.

mod report;

pub use report::{render_grid, CellRow, EvalReport, ReportRow, LOW_SNR_SET};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default false-positive-rate bound for pAUC.
pub const DEFAULT_PAUC_P: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("need at least one normal and one anomalous clip")]
    OneClassOnly,
    #[error("pAUC bound {0} outside (0, 1]")]
    InvalidP(f64),
    #[error("harmonic mean component is zero or negative")]
    ZeroComponent,
    #[error("non-finite anomaly score")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredClip {
    pub clip_id: String,
    pub anomaly_score: f64,
    pub is_anomalous: bool,
    pub domain: Domain,
}

/// ROC vertices `(fpr, tpr)` from the strictest threshold down; tied scores form one step.
fn roc_points(clips: &[&ScoredClip]) -> Result<Vec<(f64, f64)>, MetricError> {
    if clips.iter().any(|c| !c.anomaly_score.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let n_pos = clips.iter().filter(|c| c.is_anomalous).count();
    let n_neg = clips.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::OneClassOnly);
    }
    let mut sorted: Vec<&&ScoredClip> = clips.iter().collect();
    sorted.sort_by(|a, b| b.anomaly_score.total_cmp(&a.anomaly_score));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].anomaly_score;
        while i < sorted.len() && sorted[i].anomaly_score == score {
            if sorted[i].is_anomalous {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under the ROC polyline for fpr in [0, p], divided by p.
fn area_to(points: &[(f64, f64)], p: f64) -> f64 {
    let mut area = 0.0;
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= p {
            break;
        }
        if x1 <= p {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_cut = y0 + (y1 - y0) * (p - x0) / (x1 - x0);
            area += (p - x0) * (y0 + y_cut) / 2.0;
        }
    }
    area / p
}

/// Mann-Whitney AUC with ties counted as one half.
pub fn auc(clips: &[ScoredClip]) -> Result<f64, MetricError> {
    let refs: Vec<&ScoredClip> = clips.iter().collect();
    Ok(area_to(&roc_points(&refs)?, 1.0))
}

/// Partial AUC over false-positive rates in `[0, p]`, normalized by `p`.
pub fn pauc(clips: &[ScoredClip], p: f64) -> Result<f64, MetricError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(MetricError::InvalidP(p));
    }
    let refs: Vec<&ScoredClip> = clips.iter().collect();
    Ok(area_to(&roc_points(&refs)?, p))
}

fn auc_of(clips: &[&ScoredClip]) -> Result<f64, MetricError> {
    Ok(area_to(&roc_points(clips)?, 1.0))
}

/// Harmonic mean of source AUC, target AUC and pAUC.
pub fn official_score(source_auc: f64, target_auc: f64, pauc: f64) -> Result<f64, MetricError> {
    aggregate_hmean(&[source_auc, target_auc, pauc])
}

/// Harmonic mean of strictly positive values.
pub fn aggregate_hmean(values: &[f64]) -> Result<f64, MetricError> {
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0)) {
        return Err(MetricError::ZeroComponent);
    }
    Ok(values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>())
}

/// Harmonic mean that returns its limit, 0, when any component is 0.
pub fn hmean_or_zero(values: &[f64]) -> f64 {
    aggregate_hmean(values).unwrap_or(0.0)
}

/// Source AUC, target AUC and pooled pAUC of one machine's test clips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub source_auc: f64,
    pub target_auc: f64,
    pub pauc: f64,
}

impl DomainMetrics {
    pub fn compute(clips: &[ScoredClip], p: f64) -> Result<Self, MetricError> {
        let domain_auc = |d: Domain| {
            let sel: Vec<&ScoredClip> = clips
                .iter()
                .filter(|c| c.is_anomalous || c.domain == d)
                .collect();
            auc_of(&sel)
        };
        Ok(Self {
            source_auc: domain_auc(Domain::Source)?,
            target_auc: domain_auc(Domain::Target)?,
            pauc: pauc(clips, p)?,
        })
    }

    pub fn components(&self) -> [f64; 3] {
        [self.source_auc, self.target_auc, self.pauc]
    }

    pub fn official(&self) -> f64 {
        hmean_or_zero(&self.components())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clips(normals: &[f64], anomalies: &[f64]) -> Vec<ScoredClip> {
        normals
            .iter()
            .map(|s| (s, false))
            .chain(anomalies.iter().map(|s| (s, true)))
            .enumerate()
            .map(|(i, (s, a))| ScoredClip {
                clip_id: format!("c{i}"),
                anomaly_score: *s,
                is_anomalous: a,
                domain: if i % 2 == 0 { Domain::Source } else { Domain::Target },
            })
            .collect()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&clips(&[0.1, 0.2], &[0.8, 0.9])).unwrap(), 1.0);
        assert_eq!(auc(&clips(&[0.4, 0.8], &[0.6, 0.9])).unwrap(), 0.75);
        assert_eq!(auc(&clips(&[0.5, 0.5, 0.5], &[0.5, 0.5])).unwrap(), 0.5);
        assert_eq!(auc(&clips(&[0.1], &[])), Err(MetricError::OneClassOnly));
    }

    #[test]
    fn pauc_examples() {
        let c = clips(&[0.4, 0.8, 0.3], &[0.6, 0.9]);
        assert!((pauc(&c, 1.0).unwrap() - auc(&c).unwrap()).abs() < 1e-12);
        assert_eq!(pauc(&clips(&[0.1, 0.2], &[0.8, 0.9]), 0.1).unwrap(), 1.0);
        assert_eq!(pauc(&c, 0.0), Err(MetricError::InvalidP(0.0)));
        assert_eq!(pauc(&c, 1.5), Err(MetricError::InvalidP(1.5)));
        // five normals score above the lone anomaly, so TPR stays 0 until FPR = 0.5
        let tenths: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(pauc(&clips(&tenths, &[0.55]), 0.5).unwrap(), 0.0);
    }

    #[test]
    fn official_examples() {
        assert_eq!(official_score(1.0, 1.0, 1.0).unwrap(), 1.0);
        let v = official_score(0.6, 0.9, 0.9).unwrap();
        assert!((v - 3.0 / (1.0 / 0.6 + 2.0 / 0.9)).abs() < 1e-15);
        assert!((v - 0.7714285714285715).abs() < 1e-12);
        assert_eq!(official_score(0.0, 1.0, 1.0), Err(MetricError::ZeroComponent));
    }

    #[test]
    fn hmean_examples() {
        assert!((aggregate_hmean(&[72.0, 72.0, 72.0]).unwrap() - 72.0).abs() < 1e-12);
        assert!((aggregate_hmean(&[60.0, 90.0]).unwrap() - 72.0).abs() < 1e-12);
        assert_eq!(hmean_or_zero(&[0.0, 1.0]), 0.0);
    }

    #[test]
    fn published_low_snr_hmean_recomputes() {
        // BEATs iter3 row: Factory A, Factory B and Mismatch at -10, -5, 0 dB
        let cells = [62.0, 77.2, 86.8, 69.3, 78.3, 86.3, 47.7, 50.9, 61.5];
        let h = aggregate_hmean(&cells).unwrap();
        assert!((h - 66.0).abs() < 0.05, "{h}");
    }

    #[test]
    fn domain_split_uses_all_anomalies() {
        let c = vec![
            ScoredClip { clip_id: "a".into(), anomaly_score: 0.1, is_anomalous: false, domain: Domain::Source },
            ScoredClip { clip_id: "b".into(), anomaly_score: 0.9, is_anomalous: false, domain: Domain::Target },
            ScoredClip { clip_id: "c".into(), anomaly_score: 0.5, is_anomalous: true, domain: Domain::Source },
            ScoredClip { clip_id: "d".into(), anomaly_score: 0.6, is_anomalous: true, domain: Domain::Target },
        ];
        let m = DomainMetrics::compute(&c, 0.1).unwrap();
        assert_eq!(m.source_auc, 1.0);
        assert_eq!(m.target_auc, 0.0);
        assert_eq!(m.official(), 0.0);
    }
}
