//! Matrix inequalities for the switching event-triggered design: assembly,
//! a small SDP engine, gain synthesis, H-infinity level optimization and
//! certificate checks.

pub mod affine;
pub mod assembly;
pub mod certificate;
pub mod sdp;
pub mod synthesis;
