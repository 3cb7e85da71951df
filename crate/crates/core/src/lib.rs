pub mod data;
pub mod error;
pub mod layers;
pub mod numerics;
pub mod model;
pub mod optim;
pub mod metrics;
pub mod training;
pub mod cli;
