pub mod expr;
pub mod model;
pub mod par;
pub mod ranktest;
pub mod sim;
pub mod transform;
