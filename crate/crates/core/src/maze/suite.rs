//! Maze suite manifests and the bundled seven-maze curriculum.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grid::MazeSpec;
use crate::error::{Error, Result};

pub const SUITE_FORMAT: &str = "maze-suite/1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    /// Expected start-goal shortest distance in meters, checked by env-check.
    #[serde(default)]
    pub distance: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    #[serde(rename = "maze")]
    pub mazes: Vec<ManifestEntry>,
}

/// Mazes in curriculum order with their expected start-goal distances.
#[derive(Clone, Debug)]
pub struct Suite {
    pub mazes: Vec<MazeSpec>,
    pub expected_distances: Vec<Option<f64>>,
}

const BUNDLED: [(&str, &str, f64); 7] = [
    ("line", include_str!("../../mazes/line.txt"), 8.0),
    ("corner 1", include_str!("../../mazes/corner1.txt"), 8.0),
    ("corner 2", include_str!("../../mazes/corner2.txt"), 16.0),
    ("square 1", include_str!("../../mazes/square1.txt"), 8.0),
    ("square 2", include_str!("../../mazes/square2.txt"), 12.0),
    ("maze 1", include_str!("../../mazes/maze1.txt"), 16.0),
    ("maze 2", include_str!("../../mazes/maze2.txt"), 16.0),
];

/// Path of the bundled manifest inside the source tree.
pub fn bundled_manifest_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("mazes/suite.toml")
}

impl Suite {
    /// The seven bundled mazes, compiled into the binary.
    pub fn bundled() -> Self {
        let mazes = BUNDLED
            .iter()
            .map(|(name, text, _)| MazeSpec::parse(name, text).expect("bundled maze parses"))
            .collect();
        Suite {
            mazes,
            expected_distances: BUNDLED.iter().map(|b| Some(b.2)).collect(),
        }
    }

    /// The first `n` bundled mazes.
    pub fn bundled_prefix(n: usize) -> Self {
        let mut s = Self::bundled();
        s.mazes.truncate(n);
        s.expected_distances.truncate(n);
        s
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path)?;
        let manifest: Manifest = toml::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
        if manifest.format != SUITE_FORMAT {
            return Err(Error::Format(format!(
                "{}: unsupported suite format `{}` (expected `{SUITE_FORMAT}`)",
                manifest_path.display(),
                manifest.format
            )));
        }
        if manifest.mazes.is_empty() {
            return Err(Error::Format("suite lists no mazes".into()));
        }
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut mazes = Vec::new();
        let mut expected = Vec::new();
        for e in &manifest.mazes {
            let path = dir.join(&e.file);
            let text = std::fs::read_to_string(&path)
                .map_err(|err| Error::Format(format!("{}: {err}", path.display())))?;
            mazes.push(MazeSpec::parse(&e.name, &text)?);
            expected.push(e.distance);
        }
        Ok(Suite {
            mazes,
            expected_distances: expected,
        })
    }

    pub fn len(&self) -> usize {
        self.mazes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mazes.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.mazes.iter().map(|m| m.name.clone()).collect()
    }
}
