//! Keypoint ingestion, face blurring, feature preparation, rater agreement and
//! synthetic fixtures for general-movement classification experiments.

pub mod agreement;
pub mod blur;
pub mod features;
pub mod keypoints;
pub mod testkit;
