pub mod data;
pub mod dic;
pub mod eval;
pub mod image;
pub mod network;
pub mod speed;
pub mod tensor;
pub mod train;
