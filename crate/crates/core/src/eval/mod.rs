//! Frozen-encoder evaluation: pooled embeddings, linear probe, cosine k-NN
//! and the class-balanced N-shot protocol.

pub mod embed;
pub mod fewshot;
pub mod probe;

pub use embed::{
    extract_embeddings, read_embeddings, worker_threads, write_embeddings, EmbeddingSet, LabeledVectors,
};
pub use fewshot::{few_shot_eval, sample_shots, write_results_csv, FewShotResult, Method, ResultRow, ShotProtocol};
pub use probe::{knn_classify, knn_predict, linear_probe, LinearProbe, ProbeConfig};
