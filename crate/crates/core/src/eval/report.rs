use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

/// Metrics of one named run. Retrieval-only and accuracy-only rows exist so
/// that search and answering experiments can be reported on their own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunMetrics {
    Full {
        mean_a: f64,
        mean_d: f64,
        mean_p: f64,
        #[serde(rename = "final")]
        final_score: f64,
    },
    Retrieval {
        mean_d: f64,
        mean_p: f64,
    },
    Accuracy {
        llm_only: Option<f64>,
        with_context: Option<f64>,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub metrics: RunMetrics,
}

impl ReportRow {
    pub fn new(name: impl Into<String>, metrics: RunMetrics) -> Self {
        Self {
            name: name.into(),
            metrics,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportShape {
    /// Method | Mean d_i | Mean p_i
    Search,
    /// Method | LLM-only | With context
    Accuracy,
    /// Method | Final metric
    FinalMetric,
    /// Method | Mean a_i | Mean d_i | Mean p_i | Final metric
    Breakdown,
    /// Breakdown transposed: one row per metric, one column per run.
    Comparison,
}

impl ReportShape {
    /// Search for all-retrieval rows, Accuracy for all-accuracy rows,
    /// Breakdown otherwise.
    pub fn infer(rows: &[ReportRow]) -> Self {
        let live: Vec<&RunMetrics> = rows
            .iter()
            .map(|r| &r.metrics)
            .filter(|m| !matches!(m, RunMetrics::Failed { .. }))
            .collect();
        if !live.is_empty() && live.iter().all(|m| matches!(m, RunMetrics::Retrieval { .. })) {
            ReportShape::Search
        } else if !live.is_empty() && live.iter().all(|m| matches!(m, RunMetrics::Accuracy { .. })) {
            ReportShape::Accuracy
        } else {
            ReportShape::Breakdown
        }
    }

    fn columns(self) -> &'static [&'static str] {
        match self {
            ReportShape::Search => &["Mean d_i", "Mean p_i"],
            ReportShape::Accuracy => &["LLM-only", "With context"],
            ReportShape::FinalMetric => &["Final metric"],
            ReportShape::Breakdown | ReportShape::Comparison => {
                &["Mean a_i", "Mean d_i", "Mean p_i", "Final metric"]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Json,
}

fn cell(metrics: &RunMetrics, column: &str) -> Option<f64> {
    match (metrics, column) {
        (RunMetrics::Full { mean_a, .. }, "Mean a_i") => Some(*mean_a),
        (RunMetrics::Full { mean_d, .. } | RunMetrics::Retrieval { mean_d, .. }, "Mean d_i") => {
            Some(*mean_d)
        }
        (RunMetrics::Full { mean_p, .. } | RunMetrics::Retrieval { mean_p, .. }, "Mean p_i") => {
            Some(*mean_p)
        }
        (RunMetrics::Full { final_score, .. }, "Final metric") => Some(*final_score),
        (RunMetrics::Accuracy { llm_only, .. }, "LLM-only") => *llm_only,
        (RunMetrics::Accuracy { with_context, .. }, "With context") => *with_context,
        _ => None,
    }
}

fn fmt4(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn render_cell(metrics: &RunMetrics, column: &str) -> String {
    match metrics {
        RunMetrics::Failed { .. } => "FAILED".to_string(),
        m => fmt4(cell(m, column)),
    }
}

fn pipe_table(header: &[String], body: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            body.iter()
                .map(|r| r[c].chars().count())
                .chain([header[c].chars().count(), 3])
                .max()
                .unwrap_or(3)
        })
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&line(&rule));
    for row in body {
        out.push_str(&line(row));
    }
    out
}

fn table(rows: &[ReportRow], shape: ReportShape, window: u32) -> String {
    let mut out = format!("# proximity window W={window}\n");
    if shape == ReportShape::Comparison {
        let mut header = vec!["Metric".to_string()];
        header.extend(rows.iter().map(|r| r.name.clone()));
        let body: Vec<Vec<String>> = shape
            .columns()
            .iter()
            .map(|col| {
                let mut line = vec![col.to_string()];
                line.extend(rows.iter().map(|r| render_cell(&r.metrics, col)));
                line
            })
            .collect();
        out.push_str(&pipe_table(&header, &body));
    } else {
        let mut header = vec!["Method".to_string()];
        header.extend(shape.columns().iter().map(|c| c.to_string()));
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let mut line = vec![r.name.clone()];
                line.extend(shape.columns().iter().map(|c| render_cell(&r.metrics, c)));
                line
            })
            .collect();
        out.push_str(&pipe_table(&header, &body));
    }
    for r in rows {
        if let RunMetrics::Failed { reason } = &r.metrics {
            out.push_str(&format!("# {} FAILED: {reason}\n", r.name));
        }
    }
    out
}

fn structured(rows: &[ReportRow], shape: ReportShape, window: u32) -> String {
    let columns = shape.columns();
    let rows: Vec<Value> = rows
        .iter()
        .map(|r| {
            let mut values = Map::new();
            for col in columns {
                values.insert(col.to_string(), cell(&r.metrics, col).map_or(Value::Null, |v| json!(v)));
            }
            let mut row = json!({ "method": r.name, "values": values });
            if let RunMetrics::Failed { reason } = &r.metrics {
                row["failed"] = json!(reason);
            }
            row
        })
        .collect();
    let doc = json!({ "window": window, "shape": shape, "columns": columns, "rows": rows });
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

/// Renders named runs as a text table (4 decimals) or a JSON document
/// (full precision). Row order follows `rows`.
pub fn ablation_report(rows: &[ReportRow], shape: ReportShape, format: ReportFormat, window: u32) -> String {
    match format {
        ReportFormat::Table => table(rows, shape, window),
        ReportFormat::Json => structured(rows, shape, window),
    }
}
