use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{pnm, LabeledImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One dataset entry. Relative paths resolve against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

pub fn parse_manifest(bytes: &[u8]) -> Result<Vec<ManifestEntry>> {
    let entries: Vec<ManifestEntry> = serde_json::from_slice(bytes)?;
    if entries.is_empty() {
        return Err(Error::Data("manifest lists no images".into()));
    }
    Ok(entries)
}

/// Reads a manifest and every file it references.
pub fn load_manifest(path: &Path) -> Result<Vec<LabeledImage>> {
    let entries = parse_manifest(&fs::read(path)?)?;
    let root = path.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .map(|e| {
            let pixels = pnm::load_image(&root.join(&e.image))?;
            let labels = pnm::load_labels(&root.join(&e.labels))?;
            let weights = match &e.weights {
                Some(p) => Some(Tensor::load_ptnt(root.join(p))?),
                None => None,
            };
            LabeledImage::new(pixels, labels, weights)
                .map_err(|err| Error::Data(format!("{}: {err}", e.image.display())))
        })
        .collect()
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    Ok(fs::write(path, serde_json::to_string_pretty(entries)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_scene, SceneKind};

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = generate_synthetic_scene(SceneKind::Road, 3);
        pnm::save_image(&dir.path().join("a.ppm"), &img.pixels).unwrap();
        pnm::save_labels(&dir.path().join("a.pgm"), &img.labels).unwrap();
        img.weight_map
            .as_ref()
            .unwrap()
            .save_ptnt(dir.path().join("a.ptnt"))
            .unwrap();
        let entries = vec![ManifestEntry {
            image: "a.ppm".into(),
            labels: "a.pgm".into(),
            weights: Some("a.ptnt".into()),
        }];
        let mpath = dir.path().join("manifest.json");
        write_manifest(&mpath, &entries).unwrap();
        let loaded = load_manifest(&mpath).unwrap();
        assert_eq!(loaded, vec![img]);
    }

    #[test]
    fn rejects_bad_manifests() {
        assert!(parse_manifest(b"[]").is_err());
        assert!(parse_manifest(b"{").is_err());
        assert!(parse_manifest(br#"[{"image":"a","labels":"b","extra":1}]"#).is_err());
        assert!(parse_manifest(br#"[{"image":"a"}]"#).is_err());
    }
}
