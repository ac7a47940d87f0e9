//! Scene, template and annotation documents, OBJ ingestion and dataset
//! statistics.

pub mod annotation;
pub mod fs;
pub mod manifest;
pub mod obj;
pub mod scene;

pub use annotation::{load_record, parse_record, replay, verify_record, AnnotationRecord, UhOp, UhOpKind};
pub use fs::{atomic_write, FileLock};
pub use manifest::{manifest_stats, Manifest};
pub use obj::{load_obj, parse_obj};
pub use scene::{load_scene, load_template, parse_pose, save_scene, save_template, Scene, TemplateLibrary};
