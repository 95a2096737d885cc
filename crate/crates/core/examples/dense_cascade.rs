//! Dense first stage over mock embeddings, then a token-overlap reranker.

use agentic_rag::backends::mock::{MockEmbedder, OverlapReranker};
use agentic_rag::corpus::load_corpus;
use agentic_rag::dense::{Cascade, CascadeConfig, FirstStage, VectorStore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = load_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/corpus.jsonl"), false)?;
    let embedder = MockEmbedder::new(64, 42);
    let store = VectorStore::build(&corpus, &embedder, 16)?;
    println!("{} vectors of dimension {}", store.len(), store.dimension());

    let config = CascadeConfig {
        first_stage: FirstStage::Dense,
        first_stage_k: 10,
        rerank_k: 5,
        context_pages: 3,
        ..CascadeConfig::default()
    };
    let cascade = |reranker| Cascade {
        config,
        corpus: &corpus,
        sparse: None,
        store: Some(&store),
        embedder: Some(&embedder),
        reranker,
    };

    let query = "Хто заснував Київ за літописом?";
    let before = cascade(None).first_stage(query)?;
    let after = cascade(Some(&OverlapReranker)).retrieve(query)?;
    println!("first stage:");
    for hit in before.entries.iter().take(5) {
        println!("  {:.4}  {}", hit.score, hit.key);
    }
    println!("reranked:");
    for hit in &after.entries {
        println!("  {:.4}  {}", hit.score, hit.key);
    }
    Ok(())
}
