//! Unified no-reference / full-reference quality assessment for images and
//! videos: a residual backbone with global average pooling and a two-layer
//! regression head, trained with an MAE plus pairwise ranking objective.

pub mod datapipe;
pub mod diffcore;
pub mod gradsuite;
pub mod par;
pub mod qloss;
pub mod qmetrics;
pub mod qmodel;
pub mod qoptim;
pub mod trainer;
pub mod videoqa;
