//! Temporal compositing and label preparation.

mod composite;
mod labels;

pub use composite::{apply_quality_mask, median_composite, MaskGrid, ObservationStack};
pub use labels::{
    class_counts, class_distribution, distribution_from_counts, esri_codes_from_targets,
    fuse_builtarea, remap_esri, ClassMap, CLASS_NAMES, SmodMerge, BUILT_AREA_INTERIM, ESRI_BUILT_AREA,
    ESRI_NODATA, NUM_TARGET_CLASSES, SMOD_RURAL_CLUSTER, SMOD_URBAN_CENTRE, SMOD_WATER,
};
