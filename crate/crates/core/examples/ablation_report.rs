//! Runs the four rephrase/retry ablations in memory and prints the report
//! as a table and as JSON.

use std::num::NonZeroUsize;

use agentic_rag::agent::{run_pipeline, MonotonicClock};
use agentic_rag::cli::standard_ablations;
use agentic_rag::config::{EngineConfig, Runtime};
use agentic_rag::eval::{ablation_report, score, ReportFormat, ReportRow, ReportShape};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = EngineConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/agentic.toml"))?;
    let window = config.proximity.window;
    let mut rows = Vec::new();
    for spec in standard_ablations(&config) {
        let runtime = Runtime::build(spec.config)?;
        let clock = MonotonicClock::start();
        let traces = run_pipeline(&runtime.questions, &runtime.engine(spec.mode), &clock, NonZeroUsize::new(4));
        let predictions: Vec<_> = traces.into_iter().map(|t| t.prediction).collect();
        let b = score(&predictions, &runtime.questions, runtime.config.proximity, false)?;
        rows.push(ReportRow::new(spec.name, b.metrics()));
    }
    print!("{}", ablation_report(&rows, ReportShape::Breakdown, ReportFormat::Table, window));
    println!();
    print!("{}", ablation_report(&rows, ReportShape::FinalMetric, ReportFormat::Json, window));
    Ok(())
}
