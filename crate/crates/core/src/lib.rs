pub mod assembly;
pub mod basis;
pub mod bench;
pub mod dense;
pub mod flops;
pub mod geometry;
pub mod ilg;
pub mod linear_solve;
pub mod mesh;
pub mod poly;
pub mod quadrature;
pub mod verify;
