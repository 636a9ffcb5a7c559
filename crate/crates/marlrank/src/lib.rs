//! MarlRank: learning to rank as a multi-agent MDP.
//!
//! Every document of a query is an agent that repeatedly predicts a discrete
//! relevance level from its own query-document features plus its most similar
//! neighbors' features and previous actions. The shared policy is warm-started
//! with supervised cross-entropy and then trained with REINFORCE on an
//! NDCG-based terminal reward.

pub mod env;
pub mod letor;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod toy;
pub mod trainer;

pub use letor::{Dataset, DocumentRecord, FoldSplit, QueryGroup};
pub use nn::ModelParams;
pub use trainer::TrainConfig;
