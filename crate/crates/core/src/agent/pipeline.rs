use std::io::Write;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{answer_question, fallback_trace, BudgetGovernor, Clock, Engine, QuestionTrace};
use crate::corpus::Question;

/// Answers every question, `workers` at a time, and returns the traces in
/// input order. A question whose answer loop fails gets a similarity-baseline
/// prediction instead, so the output always covers every question.
pub fn run_pipeline(
    questions: &[Question],
    engine: &Engine<'_>,
    clock: &dyn Clock,
    workers: Option<NonZeroUsize>,
) -> Vec<QuestionTrace> {
    let governor = BudgetGovernor::new(
        engine.agent.total_budget,
        engine.agent.per_question_reserve,
        questions.len(),
        clock,
    );
    let workers = workers
        .or_else(|| std::thread::available_parallelism().ok())
        .map_or(1, NonZeroUsize::get)
        .min(questions.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<QuestionTrace>>> = Mutex::new(vec![None; questions.len()]);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(question) = questions.get(i) else {
                    break;
                };
                governor.start_question();
                let trace = answer_question(question, engine, &governor).unwrap_or_else(|e| {
                    tracing::warn!(question = %question.question_id, error = %e, "falling back to the similarity baseline");
                    fallback_trace(question, engine, e.to_string())
                });
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(trace);
            });
        }
    });

    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|t| t.expect("every question index is claimed exactly once"))
        .collect()
}

/// One JSON record per question.
pub fn write_traces(traces: &[QuestionTrace], mut out: impl Write) -> std::io::Result<()> {
    for t in traces {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
