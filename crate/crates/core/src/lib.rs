//! Page-graph retrieval for long multi-page documents.
//!
//! Pages are embedded as sets of unit vectors and linked into a similarity
//! graph. Retrieval seeds from the best semantic matches and walks the graph,
//! asking a relevance oracle to grade each newly reached page; final ranks
//! blend semantic and graded scores.
//!
//! ```no_run
//! use pagegraph::{build_graph, load_store, traverse, Format, MockOracle, TraversalConfig};
//!
//! let store = load_store("doc.mve".as_ref(), Format::Binary).unwrap();
//! let queries = pagegraph::load_queries("queries.json".as_ref(), Format::Json).unwrap();
//! let graph = build_graph(&store, 0.4).unwrap();
//! let oracle = MockOracle::load("fixture.jsonl".as_ref()).unwrap();
//! let run = traverse(&queries[0], "what is shown?", &store, &graph, &oracle,
//!                    &TraversalConfig::default()).unwrap();
//! println!("{:?}", run.topk(5).unwrap());
//! ```

pub mod cli;
pub mod datagen;
pub mod embedding;
pub mod fixtures;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod retrieval;

pub use embedding::{
    load_queries, load_store, page_page_similarity, query_page_score, EmbeddingError,
    EmbeddingStore, Format, MultiVector, QueryEmbedding,
};
pub use graph::{build_graph, GraphError, PageGraph};
pub use metrics::{evaluate, EvalSample, MetricReport, MetricSet, NdcgVariant};
pub use oracle::{
    GenOracle, HttpOracle, LogicalOracle, LogicalScore, MockGenOracle, MockOracle, OracleError,
    PageRef,
};
pub use retrieval::{
    topk, traverse, Mode, RetrievalError, RetrievalRun, ScoredPage, TraversalConfig,
};
