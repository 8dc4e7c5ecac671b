//! Hardware-aware ensemble anomaly detection for capsule-endoscopy style
//! images.
//!
//! Three base learners share one depthwise-separable encoder architecture: a
//! supervised classifier, an unsupervised autoencoder, and a semi-supervised
//! autoencoder with a small classification head. Their outputs form a
//! three-feature vector per image that a random forest or an SVM combines into
//! the final normal/anomaly decision.

pub mod tensor;
pub mod train;
pub mod data;
pub mod ensemble;
pub mod metrics;
pub mod nets;
pub mod seed;
