//! Quantum variational classifier (QVC) simulation, gradient-based
//! adversarial attacks against it, and a classical convolutional
//! encoder-decoder that purifies the attacked images.
//!
//! The crate is organized bottom-up:
//!
//! * [`statevec`]: pure-state register, rotations, CZ, `⟨Z⟩` readout.
//! * [`diffsim`]: circuit tapes, adjoint differentiation, shift rule.
//! * [`qvc`]: the classifier, its loss and training loop.
//! * [`attacks`]: FGSM and PGD in pixel space.
//! * [`numerics`] and [`cednet`]: tensors, Adam, and the encoder-decoder.
//! * [`dataio`]: IDX parsing, normalization, subsets, batches.
//! * [`pipeline`]: white-box / black-box experiments, checkpoints, reports.

pub mod attacks;
pub mod cednet;
pub mod checkpoint;
pub mod dataio;
pub mod diffsim;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod qvc;
pub mod report;
pub mod rng;
pub mod statevec;

pub use error::{Error, Result};
