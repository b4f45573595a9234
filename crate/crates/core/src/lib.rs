//! Duplex dialogue management: a four-token control state machine, turn
//! classifiers, silence endpointing, synthetic data generation, evaluation
//! and a tick-driven session orchestrator.

pub mod machine;
pub mod text;
pub mod token;
pub mod transcript;
pub mod classifier;
pub mod vad;
pub mod datagen;
pub mod eval;
pub mod jsonl;
pub mod session;
