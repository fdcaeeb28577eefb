//! Decoding visual object categories from EEG with an attention-driven
//! dual-branch CNN, plus the preprocessing chain, baseline models and
//! cross-validation harness needed to evaluate it.

pub mod datamodel;
pub mod dsp;
pub mod evaluation;
pub mod models;
pub mod tensor;
