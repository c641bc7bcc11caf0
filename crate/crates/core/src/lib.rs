//! Hard negative captions from scene graphs.
//!
//! Scene graphs are parsed into [`scene_graph::SceneGraph`]s, summarized
//! into corpus co-occurrence tables, and turned into positive captions and
//! minimally edited negatives by [`caption_gen::Generator`]. The
//! [`bias_audit`] module measures how much a text-only classifier can learn
//! from the negatives alone.

pub mod assets;
pub mod bias_audit;
pub mod caption_gen;
pub mod constraints;
pub mod corpus_stats;
pub mod dataset;
pub mod foil_sampler;
pub mod scene_graph;
pub mod synth;
