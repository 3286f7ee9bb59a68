pub mod bnb;
pub mod cloud;
pub mod geometry;
pub mod harness;
pub mod voxelmap;
