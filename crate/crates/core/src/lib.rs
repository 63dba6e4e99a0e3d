//! Core primitives for cross-modal backdoor data poisoning.
//!
//! This crate implements the attack pipeline end to end at the library level:
//! mining modality-invariant regions and keywords from image-text pairs,
//! training an invisible visual trigger generator, synthesizing textual
//! triggers by greedy synonym substitution, assembling poisoned training
//! sets, and scoring attack effectiveness and stealthiness against a toy
//! retrieval victim.
//!
//! The crate is `no_std` (with `alloc`); file formats, image codecs and the
//! command-line driver live in the companion `cmbd` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;

pub mod dataset;
pub mod image;
pub mod label;
pub mod metrics;
pub mod mining;
pub mod nn;
pub mod poisoner;
pub mod rng;
pub mod surrogate;
pub mod text;
pub mod textual_trigger;
pub mod victim;
pub mod visual_trigger;

pub use error::{Error, Result};
pub use image::{ImageSample, PixelMask};
pub use label::LabelVector;
pub use text::TextSample;
