//! Word, character and hybrid TF-IDF search over the bundled corpus.
//!
//!     cargo run --example sparse_search -- "ставка податку на додану вартість"

use agentic_rag::corpus::load_corpus;
use agentic_rag::sparse::{SparseConfig, TfidfIndex, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let query = std::env::args().nth(1).unwrap_or_else(|| "мова освітнього процесу".into());
    let corpus = load_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/corpus.jsonl"), false)?;

    for variant in [Variant::Word, Variant::Char, Variant::Hybrid] {
        let index = TfidfIndex::build(&corpus, variant, SparseConfig::default())?;
        println!("{variant:?} ({} terms)", index.vocabulary_size());
        for hit in &index.query(&query, 3).entries {
            println!("  {:.4}  {}", hit.score, hit.key);
        }
    }
    Ok(())
}
