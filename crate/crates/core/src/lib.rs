pub mod chamfer;
pub mod error;
pub mod evaluate;
pub mod export;
pub mod fitting;
pub mod io;
pub mod kinematics;
pub mod losses;
pub mod mesh;
pub mod optim;
pub mod optimizer;
pub mod render;
pub mod sq;
pub mod surface;
pub mod synthetic;
pub mod templates;

pub use error::{Error, Result};
