//! Conceptor matrix algebra and conceptor-based gradient projection for
//! continual learning of multilayer perceptrons.
pub mod checkpoint;
pub mod conceptor;
pub mod data;
pub mod error;
pub mod harness;
pub mod network;
pub mod random;
pub mod trainer;

pub use conceptor::{intersection_basis, pseudo_inverse, Conceptor, FeatureBatch, OrthonormalBasis};
pub use error::{Error, Result};
pub use network::{project_gradients, ForwardTrace, GradientSet, LinearLayer, MlpModel};
pub use trainer::{ConceptorBank, Method, TrainSchedule, Trainer};
