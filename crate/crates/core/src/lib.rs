pub mod expr;
pub mod problem;
pub mod radial;
pub mod modal;
pub mod forward;
pub mod outer;
