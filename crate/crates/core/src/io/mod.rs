//! File formats, scene directories and the synthetic scene generator.
//!
//! Binary formats are little-endian with a four-byte magic and a `u16`
//! version. Every write goes to a temporary file in the destination
//! directory and is renamed into place.

mod checkpoint;
mod config;
mod dir;
mod formats;
mod synth;
mod tensor;

use std::io::Write;
use std::path::Path;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, DirCheckpoints,
    CHECKPOINT_MAGIC,
};
pub use config::{config_to_text, parse_config, read_config, DataOptions, CONFIG_KEYS};
pub use dir::{
    augment_scene, find_scene_dirs, metrics_csv, read_ground_truth, read_scene_dir, view_file,
    write_metrics_csv, write_scene_dir, CAMERA_FILE, GROUND_TRUTH_FILE, METRICS_HEADER, SCENE_FILE,
};
pub use formats::{
    cameras_from_text, cameras_to_text, ppm_from_bytes, ppm_to_bytes, quantize, read_cameras,
    read_ppm, read_scene, scene_from_bytes, scene_to_bytes, write_cameras, write_ppm, write_scene,
    Image, SCENE_MAGIC,
};
pub use synth::{
    class_embedding, gaussians_from_rows, gaussians_to_rows, project, render_targets, synth_scene,
    SynthSpec, VALID_TRANSMITTANCE,
};
pub use tensor::{DType, TensorFile, TENSOR_MAGIC};

use crate::error::{Error, Result};

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(parent, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(read_bytes(&p).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn unwritable_destination_reports_path() {
        let err = write_atomic(Path::new("/nonexistent-dir/sub/x.bin"), b"x").unwrap_err();
        assert!(err.to_string().contains("nonexistent-dir"));
    }
}
