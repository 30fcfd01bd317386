//! Special functions and quadrature shared by the kernel and covariance code.

pub mod quadrature;
pub mod special;
