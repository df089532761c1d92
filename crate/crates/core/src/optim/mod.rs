pub mod adam;
pub mod gradcheck;
pub mod loss;
pub mod train;
