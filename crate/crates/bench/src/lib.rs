//! Shared fixtures for the criterion benches.

use std::path::Path;

use bankforge::ProblemFile;

/// Loads one of the shipped problem files by name.
pub fn problem(name: &str) -> ProblemFile {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name);
    ProblemFile::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
