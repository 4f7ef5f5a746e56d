//! Federated resource selection with a relational graph convolutional network.

mod codec;
pub mod corpus;
pub mod embedding;
pub mod graph;
pub mod metrics;
pub mod tensor;
pub mod rgcn;
pub mod training;
pub mod synth;
pub mod broker;
pub mod cli;
