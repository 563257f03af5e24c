//! Data handling, initialization, training and persistence.

pub mod build;
pub mod checkpoint;
pub mod data;
pub mod experiment;
pub mod kmeans;
pub mod toy;
pub mod train;

pub use build::{build_model, AnyModel, ModelConfig};
pub use checkpoint::Checkpoint;
pub use data::{load_csv, Dataset, Standardization};
pub use experiment::{benchmark, run_split, SplitResult};
pub use kmeans::kmeans_init;
pub use toy::{gen_toy, ToyCase};
pub use train::{adam_train, Adam, TraceRow, TrainConfig};
