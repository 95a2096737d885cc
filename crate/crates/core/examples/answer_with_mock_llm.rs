//! One retrieval-augmented answer from a scripted chat backend.

use std::time::Duration;

use agentic_rag::agent::{answer_question, BudgetGovernor, ManualClock, Mode};
use agentic_rag::config::{EngineConfig, Runtime};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = EngineConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/agentic.toml"))?;
    let runtime = Runtime::build(config)?;
    let engine = runtime.engine(Mode::Rag);
    let clock = ManualClock::default();
    let governor = BudgetGovernor::new(Duration::from_secs(60), Duration::ZERO, 1, &clock);

    let question = &runtime.questions[0];
    governor.start_question();
    let trace = answer_question(question, &engine, &governor)?;
    let attempt = &trace.attempts[trace.selected].attempt;
    println!("{}", question.text);
    for option in &question.options {
        println!("  {}) {}", option.label, option.text);
    }
    println!(
        "answer {} (confidence {:.3}, {:?}) citing {}",
        attempt.label,
        attempt.confidence,
        attempt.source,
        trace.prediction.page_key()
    );
    Ok(())
}
