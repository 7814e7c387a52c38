pub mod attacks;
pub mod data;
pub mod encoding;
pub mod experiment;
pub mod grad;
pub mod models;
pub mod qstate;
pub mod rng;
pub mod steering;
