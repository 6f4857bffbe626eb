//! Parameter partitioning, the checkpoint format and checkpoint surgery.

mod checkpoint;
mod partition;
mod surgery;

pub use checkpoint::{
    fnv1a, hex64, Checkpoint, Manifest, ParentLink, Stage, TensorRecord, MANIFEST_FILE, SCHEMA_VERSION,
    TENSORS_FILE,
};
pub use partition::{partition_parameters, ParameterPartition, Role};
pub use surgery::{compose, diff, freeze_verify, splice, FreezeReport};
