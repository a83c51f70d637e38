pub mod cauchy;
pub mod error;
pub mod factorizer;
pub mod funcspace;
pub mod gallery;
pub mod indices;
