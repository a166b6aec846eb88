//! Joint scheduling and collision-free path planning for a small fleet of
//! vehicles that must land one at a time on a shared target among moving
//! obstacles.

pub mod hjb;
pub mod scenario;
pub mod duration;
pub mod lp;
pub mod bnb;
pub mod model;
pub mod refine;
pub mod trajectory;
pub mod pipeline;
