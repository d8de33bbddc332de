//! Multi-domain cooperative image-to-image translation: a multi-head energy
//! based descriptor and a style-diversified translator trained jointly with
//! Langevin revision and progressive growth.

pub mod arch;
pub mod autodiff;
pub mod data;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod generator;
pub mod gradcheck;
pub mod langevin;
pub mod nn;
pub mod optim;
pub mod progressive;
pub mod tensor;
pub mod trainer;

pub use arch::{ArchConfig, ChannelPlan};
pub use autodiff::{Grad, Tape, Var};
pub use descriptor::Descriptor;
pub use error::{Error, Result};
pub use generator::{LossWeights, StyleEncoder, StyleGenerator, Translator};
pub use nn::Module;
pub use tensor::{Float, Tensor};
