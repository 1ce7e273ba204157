pub mod activation;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod reduce;
pub mod shape;
