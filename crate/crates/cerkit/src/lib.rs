//! Conversational emotion recognition (CER) as frame-level sequence labeling.
//!
//! The crate is organized around a small numerical core and the pipeline built
//! on top of it:
//!
//! - [`tensor`]: dense tensors with reverse-mode autodiff, row-wise softmax /
//!   self-attention primitives, and a finite-difference gradient checker.
//! - [`features`]: WAV ingestion, MFCC extraction, and the binary `FMX`
//!   feature-matrix file format.
//! - [`corpus`]: diarized, emotion-labeled conversations; segment file
//!   ingestion, frame-level label alignment, synthetic corpus generation, and
//!   leave-one-session-out splits.
//! - [`augment`]: training-sequence construction, including the
//!   diversity-raising concatenation scheme (DCA) for conversations and
//!   isolated utterances.
//! - [`model`]: transformer encoder with learned positional embeddings, an
//!   optional convolutional front-end, optional interlocutor index embeddings,
//!   and checkpoint persistence.
//! - [`train`]: the training loop over the four data regimes, full-conversation
//!   prediction, metrics, and corpus analyses (trigram table, emotional
//!   inertia).
//! - [`cli`]: the `cerkit` command-line surface.
//!
//! Every capability has a runnable demo under `examples/`; start with
//! `cargo run --release -p cerkit --example train_tiny`.

pub mod augment;
pub mod cli;
pub mod corpus;
pub mod features;
pub mod model;
pub mod tensor;
pub mod train;
