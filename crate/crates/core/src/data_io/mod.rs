//! Dataset ingestion and model persistence.

pub mod mnist;
pub mod model_file;

pub use mnist::{load_mnist, Dataset, Split};
pub use model_file::{
    load_checkpoint, load_model, load_sparse, save_checkpoint, save_sparse, Checkpoint, ModelArtifact,
};
