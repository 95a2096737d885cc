//! Scores a predictions file against gold labels at a few proximity windows.
//!
//!     cargo run --example score_predictions -- predictions.jsonl questions.jsonl

use agentic_rag::corpus::load_questions;
use agentic_rag::eval::{load_predictions, score, ProximityConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let preds = args.next().unwrap_or(format!("{fixtures}/expected_predictions_agentic.jsonl"));
    let gold = args.next().unwrap_or(format!("{fixtures}/questions.jsonl"));

    let predictions = load_predictions(&preds)?;
    let questions = load_questions(&gold)?;
    println!("   W   mean a   mean d   mean p   final");
    for w in [1, 3, 10, 30] {
        let b = score(&predictions, &questions, ProximityConfig::new(w)?, false)?;
        println!("{w:>4}   {:.4}   {:.4}   {:.4}   {:.4}", b.mean_a, b.mean_d, b.mean_p, b.final_score);
    }
    Ok(())
}
