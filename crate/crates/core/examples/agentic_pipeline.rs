//! The full agentic loop over the fixture questions, showing how many
//! attempts each question took and which one was kept.

use std::num::NonZeroUsize;

use agentic_rag::agent::{run_pipeline, Mode, MonotonicClock};
use agentic_rag::config::{EngineConfig, Runtime};
use agentic_rag::eval::score;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = EngineConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/agentic.toml"))?;
    let runtime = Runtime::build(config)?;
    let clock = MonotonicClock::start();
    let traces = run_pipeline(&runtime.questions, &runtime.engine(Mode::Agentic), &clock, NonZeroUsize::new(4));

    for t in &traces {
        let confidences: Vec<String> = t.attempts.iter().map(|a| format!("{:.2}", a.attempt.confidence)).collect();
        println!(
            "{}  [{}] -> #{} {} {}",
            t.question_id,
            confidences.join(", "),
            t.selected + 1,
            t.prediction.answer,
            t.prediction.page_key()
        );
    }
    let predictions: Vec<_> = traces.iter().map(|t| t.prediction.clone()).collect();
    let b = score(&predictions, &runtime.questions, runtime.config.proximity, false)?;
    println!("final metric {:.4}", b.final_score);
    Ok(())
}
