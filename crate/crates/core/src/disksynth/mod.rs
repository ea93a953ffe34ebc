//! Reflectance disks: the disk type, a synthetic renderer for a mirror rig,
//! exposure merging, friction reference data and dataset manifests.

mod dataset;
mod disk;
mod friction;
mod hdr;
mod render;

pub use dataset::{
    make_synthetic_dataset, synthesize_dataset, Dataset, DatasetSpec, DiskRef, Manifest,
    SurfaceEntry, SyntheticDataset, MANIFEST_FILE, MANIFEST_VERSION, RIG_ILLUMINATION_ANGLES,
};
pub use disk::{in_mask, DiskMeta, ReflectanceDisk, MIN_DIAMETER_PX};
pub use friction::{
    class_mean_friction, class_names, friction_from_angle, parse_friction_csv,
    read_friction_csv, reference_friction_table, write_friction_csv, FrictionRecord,
    REFERENCE_FRICTION_CSV,
};
pub use hdr::{hat_weight, merge_exposures};
pub use render::{render_disk, RenderOptions, RigGeometry, SyntheticMaterial};
