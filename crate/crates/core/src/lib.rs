//! Vessel arrival-time prediction to a pilot boarding ground.
//!
//! Historical tracks give a statistical arrival contour (density filter,
//! clustering, convex hull); AIS, booking and weather streams are fused into
//! fixed-length windows; a residual temporal convolutional network regresses
//! minutes-to-arrival.

pub mod contour;
pub mod fusion;
pub mod geo;
pub mod ingest;
pub mod tcn;
pub mod eval;
pub mod synth;
pub mod pipeline;
