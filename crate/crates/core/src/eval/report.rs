//! Per-domain metric tables with a mean row, as CSV and JSON.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRow {
    pub domain: String,
    pub metrics: MetricsReport,
}

/// Metrics of every domain of one run. Means are taken over domains, not
/// pooled over points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub method: String,
    pub classes: usize,
    pub rows: Vec<DomainRow>,
    pub mean_oa: Option<f64>,
    pub mean_miou: Option<f64>,
    /// How the mean row is formed.
    pub mean_kind: String,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl StreamReport {
    pub fn new(
        method: impl Into<String>,
        classes: usize,
        domains: Vec<(String, ConfusionMatrix)>,
    ) -> Self {
        let rows: Vec<DomainRow> = domains
            .into_iter()
            .map(|(domain, cm)| DomainRow {
                domain,
                metrics: cm.report(),
            })
            .collect();
        Self {
            method: method.into(),
            classes,
            mean_oa: mean(rows.iter().map(|r| r.metrics.oa)),
            mean_miou: mean(rows.iter().map(|r| r.metrics.miou)),
            rows,
            mean_kind: "per-domain mean".into(),
        }
    }

    /// Mean of each class's IoU over the domains where it is defined.
    pub fn mean_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| mean(self.rows.iter().map(|r| r.metrics.iou[c])))
            .collect()
    }

    /// `domain,oa,iou_0..iou_{C-1},miou`, one line per domain, then the mean row.
    /// Undefined values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("domain,oa");
        for c in 0..self.classes {
            write!(out, ",iou_{c}").unwrap();
        }
        out.push_str(",miou\n");
        let mut line = |name: &str, oa: Option<f64>, iou: &[Option<f64>], miou: Option<f64>| {
            out.push_str(name);
            out.push(',');
            out.push_str(&cell(oa));
            for v in iou {
                out.push(',');
                out.push_str(&cell(*v));
            }
            out.push(',');
            out.push_str(&cell(miou));
            out.push('\n');
        };
        for r in &self.rows {
            line(&r.domain, r.metrics.oa, &r.metrics.iou, r.metrics.miou);
        }
        line("mean", self.mean_oa, &self.mean_class_iou(), self.mean_miou);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> StreamReport {
        let a = ConfusionMatrix::from_counts(2, vec![3, 1, 2, 4]).unwrap();
        let b = ConfusionMatrix::from_counts(2, vec![5, 0, 0, 0]).unwrap();
        StreamReport::new(
            "source",
            2,
            vec![("sunlight".into(), a), ("space".into(), b)],
        )
    }

    #[test]
    fn means_are_over_domains() {
        let r = report();
        assert!((r.mean_oa.unwrap() - 0.85).abs() < 1e-15);
        let m_a = (3.0 / 6.0 + 4.0 / 7.0) / 2.0;
        assert!((r.mean_miou.unwrap() - (m_a + 1.0) / 2.0).abs() < 1e-15);
        assert_eq!(r.rows[1].metrics.iou[1], None);
    }

    #[test]
    fn csv_layout() {
        let csv = report().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "domain,oa,iou_0,iou_1,miou");
        assert_eq!(lines[1], "sunlight,0.700000,0.500000,0.571429,0.535714");
        assert_eq!(lines[2], "space,1.000000,1.000000,,1.000000");
        assert!(lines[3].starts_with("mean,0.850000,0.750000,0.571429,"));
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn json_round_trip() {
        let r = report();
        let back: StreamReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
