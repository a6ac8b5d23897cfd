use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{hmean_or_zero, DomainMetrics};

/// SNRs aggregated in the low-SNR harmonic mean column.
pub const LOW_SNR_SET: [i64; 3] = [-10, -5, 0];

/// One machine type in one (subset, SNR) cell. Scores are fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub machine_type: String,
    pub subset: String,
    pub snr_db: i64,
    pub source_auc: f64,
    pub target_auc: f64,
    pub pauc: f64,
    pub official_score: f64,
}

/// Official score of a (subset, SNR) cell: harmonic mean over every machine's
/// three components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub subset: String,
    pub snr_db: i64,
    pub official_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub cells: Vec<CellRow>,
    pub hmean_low_snr: Option<f64>,
    pub hmean_all: f64,
}

impl EvalReport {
    /// Builds cells and aggregates from per-machine metrics keyed by (subset, snr, machine).
    pub fn from_metrics(metrics: &BTreeMap<(String, i64, String), DomainMetrics>) -> Self {
        let rows: Vec<ReportRow> = metrics
            .iter()
            .map(|((subset, snr, machine), m)| ReportRow {
                machine_type: machine.clone(),
                subset: subset.clone(),
                snr_db: *snr,
                source_auc: m.source_auc,
                target_auc: m.target_auc,
                pauc: m.pauc,
                official_score: m.official(),
            })
            .collect();
        let mut grouped: BTreeMap<(String, i64), Vec<f64>> = BTreeMap::new();
        for ((subset, snr, _), m) in metrics {
            grouped
                .entry((subset.clone(), *snr))
                .or_default()
                .extend(m.components());
        }
        let cells: Vec<CellRow> = grouped
            .into_iter()
            .map(|((subset, snr_db), comps)| CellRow {
                subset,
                snr_db,
                official_score: hmean_or_zero(&comps),
            })
            .collect();
        Self::with_cells(rows, cells)
    }

    pub fn with_cells(rows: Vec<ReportRow>, cells: Vec<CellRow>) -> Self {
        let low: Vec<f64> = cells
            .iter()
            .filter(|c| LOW_SNR_SET.contains(&c.snr_db))
            .map(|c| c.official_score)
            .collect();
        let all: Vec<f64> = cells.iter().map(|c| c.official_score).collect();
        Self {
            hmean_low_snr: (!low.is_empty()).then(|| hmean_or_zero(&low)),
            hmean_all: hmean_or_zero(&all),
            rows,
            cells,
        }
    }

    pub fn cell(&self, subset: &str, snr_db: i64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.subset == subset && c.snr_db == snr_db)
            .map(|c| c.official_score)
    }

    /// Harmonic mean over the cells of the given subsets and SNRs.
    pub fn hmean_over(&self, subsets: &[&str], snrs: &[i64]) -> f64 {
        let vals: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| subsets.contains(&c.subset.as_str()) && snrs.contains(&c.snr_db))
            .map(|c| c.official_score)
            .collect();
        hmean_or_zero(&vals)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, json + "\n")
    }

    pub fn read_json(path: impl AsRef<Path>) -> std::io::Result<Self> {
        serde_json::from_slice(&std::fs::read(path)?).map_err(std::io::Error::other)
    }

    pub fn subsets(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for c in &self.cells {
            if !seen.contains(&c.subset) {
                seen.push(c.subset.clone());
            }
        }
        seen
    }

    pub fn snrs(&self) -> Vec<i64> {
        let mut s: Vec<i64> = self.cells.iter().map(|c| c.snr_db).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

fn fmt_score(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", x * 100.0))
}

/// Renders labelled reports as a grid with one column group per subset, one
/// column per SNR and the two harmonic-mean columns. Scores are shown x100.
pub fn render_grid(rows: &[(String, EvalReport)]) -> String {
    let mut subsets: Vec<String> = Vec::new();
    let mut snrs: Vec<i64> = Vec::new();
    for (_, r) in rows {
        for s in r.subsets() {
            if !subsets.contains(&s) {
                subsets.push(s);
            }
        }
        snrs.extend(r.snrs());
    }
    snrs.sort_unstable();
    snrs.dedup();
    let label_w = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(12);

    let mut out = String::new();
    let _ = write!(out, "{:label_w$}", "");
    let cols = snrs.len() * 7;
    let widths: Vec<usize> = subsets.iter().map(|s| s.chars().count().max(cols.saturating_sub(1))).collect();
    for (s, w) in subsets.iter().zip(&widths) {
        let _ = write!(out, " | {s:^w$}");
    }
    let _ = writeln!(out, " | {:^13}", "Hmean");
    let _ = write!(out, "{:label_w$}", "");
    for w in &widths {
        out.push_str(" |");
        for snr in &snrs {
            let _ = write!(out, " {snr:>6}");
        }
        let _ = write!(out, "{:pad$}", "", pad = (w + 1).saturating_sub(cols));
    }
    let low = LOW_SNR_SET.map(|v| v.to_string()).join(",");
    let _ = writeln!(out, " | {{{low}}}    All");
    for (label, r) in rows {
        let _ = write!(out, "{label:label_w$}");
        for (s, w) in subsets.iter().zip(&widths) {
            out.push_str(" |");
            for snr in &snrs {
                let _ = write!(out, " {:>6}", fmt_score(r.cell(s, *snr)));
            }
            let _ = write!(out, "{:pad$}", "", pad = (w + 1).saturating_sub(cols));
        }
        let _ = writeln!(
            out,
            " | {:>12} {:>6}",
            fmt_score(r.hmean_low_snr),
            fmt_score(Some(r.hmean_all))
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perfect() -> DomainMetrics {
        DomainMetrics {
            source_auc: 1.0,
            target_auc: 1.0,
            pauc: 1.0,
        }
    }

    #[test]
    fn aggregates_and_grid() {
        let mut m = BTreeMap::new();
        for snr in [-10, 0, 30] {
            m.insert(("mismatch".to_string(), snr, "fan".to_string()), perfect());
            m.insert(
                ("mismatch".to_string(), snr, "pump".to_string()),
                DomainMetrics {
                    source_auc: 0.5,
                    target_auc: 1.0,
                    pauc: 1.0,
                },
            );
        }
        let r = EvalReport::from_metrics(&m);
        assert_eq!(r.rows.len(), 6);
        assert_eq!(r.cells.len(), 3);
        let expected = 6.0 / (5.0 + 2.0);
        assert!((r.cell("mismatch", 0).unwrap() - expected).abs() < 1e-12);
        assert!((r.hmean_low_snr.unwrap() - expected).abs() < 1e-12);
        let grid = render_grid(&[("Ours".into(), r)]);
        assert!(grid.contains("mismatch") && grid.contains("85.7") && grid.contains("{-10,-5,0}"));
    }

    #[test]
    fn perfect_report_renders_100() {
        let mut m = BTreeMap::new();
        m.insert(("factory_a".to_string(), 0, "fan".to_string()), perfect());
        let r = EvalReport::from_metrics(&m);
        assert_eq!(r.hmean_all, 1.0);
        assert!(render_grid(&[("x".into(), r)]).contains("100.0"));
    }
}
