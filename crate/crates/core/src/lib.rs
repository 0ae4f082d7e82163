//! Atomic transfer graphs compiled to conditional timelock contracts.
//!
//! The pipeline: an ATG ([`graph`]) is unfolded into its transfer tree
//! ([`unfold`]), whose game-level outcomes are characterised in
//! [`outcomes`]. [`synth`] turns a tree specification into a batch of CTLCs,
//! executed under the small-step rules of [`semantics`] by [`honest`] users
//! and an [`adversary`] scheduler ([`runner`]). [`verifier`] checks the
//! security and correctness guarantees on completed runs; [`sweep`] runs
//! them over random graphs.

pub mod adversary;
pub mod graph;
pub mod honest;
pub mod ids;
pub mod outcomes;
pub mod run;
pub mod runner;
pub mod semantics;
pub mod sweep;
pub mod synth;
pub mod time;
pub mod unfold;
pub mod verifier;
