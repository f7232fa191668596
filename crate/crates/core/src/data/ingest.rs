use std::path::{Path, PathBuf};

use super::{
    convert_units, interpolate_missing, parse_recording, relabel, resample, windowize, DataError, DatasetDescriptor, LabelScheme, PairedWindow, Recording,
    WindowArchive, TARGET_RATE_HZ,
};

/// Longest run of missing samples repaired by interpolation (about 0.5 s at 30 Hz).
pub const DEFAULT_MAX_GAP: usize = 15;

/// Runs one parsed recording through gap repair, unit conversion,
/// resampling, relabeling and windowing.
pub fn ingest_recording(recording: &Recording, descriptor: &DatasetDescriptor, scheme: &LabelScheme) -> Result<Vec<PairedWindow>, DataError> {
    let r = interpolate_missing(recording, DEFAULT_MAX_GAP);
    let r = convert_units(&r, descriptor)?;
    let r = resample(&r, TARGET_RATE_HZ)?;
    let r = relabel(&r, descriptor, scheme)?;
    windowize(&r)
}

/// Raw files in `dir` with the descriptor's extension, sorted by name.
pub fn raw_files(dir: impl AsRef<Path>, descriptor: &DatasetDescriptor) -> Result<Vec<PathBuf>, DataError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().map(|e| e == descriptor.file_extension.as_str()).unwrap_or(false))
        .collect();
    files.sort();
    Ok(files)
}

/// Ingests every raw file of a dataset directory into one archive. Pair ids
/// are renumbered consecutively in file order.
pub fn ingest_directory(dir: impl AsRef<Path>, descriptor: &DatasetDescriptor, scheme: &LabelScheme) -> Result<WindowArchive, DataError> {
    let dir = dir.as_ref();
    let files = raw_files(dir, descriptor)?;
    if files.is_empty() {
        return Err(DataError::Invalid(format!(
            "no .{} files in {}",
            descriptor.file_extension,
            dir.display()
        )));
    }
    let mut windows = Vec::new();
    for file in &files {
        let recording = parse_recording(file, descriptor)?;
        let found = ingest_recording(&recording, descriptor, scheme)?;
        log::info!("{}: {} windows", file.display(), found.len());
        windows.extend(found);
    }
    for (i, w) in windows.iter_mut().enumerate() {
        w.pair_id = i as u64;
    }
    WindowArchive::new(scheme.class_names(), windows)
}
