//! One module per subcommand.

pub mod eval;
pub mod gradcam;
pub mod preprocess;
pub mod split;
pub mod train;
