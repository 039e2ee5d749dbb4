//! Dataset ingestion and construction.

mod export;
mod idx;
mod resize;
mod task;

pub use export::{export_dataset_csv, format_sig9};
pub use idx::{load_idx, write_idx, IdxData, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use resize::downsample;
pub use task::{build_task, synthetic_task, BuiltTask, SampleOrdering, Teacher};
