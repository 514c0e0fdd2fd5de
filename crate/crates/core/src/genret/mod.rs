//! Generative retrieval over semantic IDs: next-SID models, trie-constrained
//! beam search, budgeted item resolution and ranking metrics.

pub mod beam;
pub mod checkpoint;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod ngram;
pub mod retrieve;
pub mod train;
pub mod trie;
pub mod vocab;

pub use beam::{beam_search_constrained, PrefixScorer, SequenceModel};
pub use dataset::{build_training_sequences, group_events, split_last, DatasetSplit, Example, SequenceDataset, UserSequence};
pub use model::{GrContext, GrModel, GrShape};
pub use eval::{eval_recall_ndcg, MetricAtK, MetricTable};
pub use ngram::NgramModel;
pub use retrieve::{retrieve, RetrievalConfig, Retrieved};
pub use train::{train_gr, GrEpoch, GrTrainConfig};
pub use trie::{SidTrie, ROOT};
pub use vocab::SidVocabulary;
