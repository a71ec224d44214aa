//! Numerical checks of weighted energy estimates for parabolic equations and
//! the linearized coupled system, plus the stability experiments built on them.

pub mod stability;
pub mod trial;
pub mod verify;
pub mod weights;

pub use stability::*;
pub use trial::{Bandwidth, Quadrature, TrialField};
pub use verify::*;
pub use weights::{SpaceTimeWeight, TimeWeight, UcpWeight};
