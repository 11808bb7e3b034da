pub mod rational;
pub mod minkowski;
pub mod dynamics;
pub mod linalg;
pub mod observable;
pub mod stats;
pub mod transfer;
pub mod renewal;
pub mod limits;
pub mod checks;
pub mod cli;
