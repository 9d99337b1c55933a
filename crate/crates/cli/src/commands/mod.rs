pub mod eval;
pub mod register;
pub mod synth;
pub mod tune;
pub mod warp;
