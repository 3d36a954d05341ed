//! Creativity measurement for token-sequence artifacts.
//!
//! The crate trains three small networks on a "context" corpus and scores
//! candidate artifacts along three axes:
//!
//! * **value** — the belief of an adversarially trained discriminator that
//!   the artifact belongs to the context distribution,
//! * **novelty** — one minus the normalized distance between a style
//!   classifier's posterior and the uniform distribution,
//! * **surprise** — the mean relative weight correction a context language
//!   model would undergo if it were fit to the artifact.
//!
//! Everything is built on a scratch reverse-mode autodiff engine
//! ([`tensor`]) so that per-parameter gradients are available to the
//! surprise measure. The crate is `no_std` (with `alloc`); all IO lives in
//! the companion CLI crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod error;
pub mod measures;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::CoreError;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, CoreError>;
