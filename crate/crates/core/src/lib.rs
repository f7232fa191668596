//! Unsupervised transfer of wearable activity classifiers between body
//! locations by embedding replication.

pub mod numerics;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod training;
