pub mod geodesy;
pub mod protocol;
pub mod raster;
pub mod tools;
pub mod agent;
pub mod datagen;
pub mod rl;
pub mod eval;
pub mod cli;
