#![allow(dead_code)]

use std::path::PathBuf;

/// `SSNNBP_DATA_DIR`, else `data/` at the workspace root.
pub fn data_dir() -> PathBuf {
    std::env::var_os("SSNNBP_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

pub fn has_dataset(subdir: &str) -> bool {
    data_dir().join(subdir).is_dir()
}
