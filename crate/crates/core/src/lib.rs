//! Caption generation with coherence-relation prompting, and the evaluation
//! harness that compares it against a plain diversity prompt.

pub mod datasets;
pub mod image;
pub mod metrics;
pub mod prompting;
pub mod providers;
pub mod relations;
pub mod runner;
pub mod scoring;
