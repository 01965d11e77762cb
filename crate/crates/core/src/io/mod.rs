//! Files: images, dataset manifests and checkpoints.

mod checkpoint;
mod dataset;
mod image_io;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use dataset::{
    export_scene, load_dataset, load_entries, read_manifest, write_manifest, InterpTag, Manifest, ManifestEntry,
    HELDOUT_MANIFEST, MANIFEST_VERSION, TRAIN_MANIFEST,
};
pub use image_io::{byte_to_unit, decode_image, encode_png, encode_ppm, read_image, unit_to_byte, write_image};
