pub mod app;
pub mod error;
pub mod image;
pub mod inference;
pub mod io;
pub mod losses;
pub mod mask;
pub mod nets;
pub mod train;
