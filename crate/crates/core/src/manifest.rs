//! Dataset manifest: the contract between the extractor and the engine.
//!
//! A dataset lives in one directory. `manifest.nsx` is a TOML header that
//! lists layers, images and class names; each layer's activations sit in a
//! binary `.actb` payload next to it:
//!
//! ```text
//! magic    8 bytes   "NSXACT\x01\x00"
//! values   f32 LE    neuron_count x image_count, neuron-major
//! argmax   u16 LE    (row, col) per value, same order
//! ```
//!
//! One record per (neuron, image): the spatial maximum of the activation map.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.nsx";
pub const ACTIVATION_EXT: &str = "actb";
pub const FORMAT_VERSION: u32 = 1;
pub const ACTIVATION_MAGIC: [u8; 8] = *b"NSXACT\x01\x00";

/// Which side of the rectifier the extractor sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationConvention {
    PreRectification,
    PostRectification,
    #[default]
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub neuron_count: usize,
    /// (rows, cols) of the layer's activation map.
    pub spatial_dims: (usize, usize),
    pub activation_file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: usize,
    pub path: PathBuf,
    pub class_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(default)]
    pub activation_convention: ActivationConvention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ontology_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture_path: Option<PathBuf>,
    pub class_names: Vec<String>,
    pub layers: Vec<LayerEntry>,
    pub images: Vec<ImageRecord>,
    /// Directory the relative paths resolve against; set on read/write.
    #[serde(skip)]
    pub root: PathBuf,
}

impl PartialEq for DatasetManifest {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.activation_convention == other.activation_convention
            && self.ontology_path == other.ontology_path
            && self.architecture_path == other.architecture_path
            && self.class_names == other.class_names
            && self.layers == other.layers
            && self.images == other.images
    }
}

impl DatasetManifest {
    pub fn new(class_names: Vec<String>, layers: Vec<LayerEntry>, images: Vec<ImageRecord>) -> Self {
        DatasetManifest {
            version: FORMAT_VERSION,
            activation_convention: ActivationConvention::Unspecified,
            ontology_path: None,
            architecture_path: None,
            class_names,
            layers,
            images,
            root: PathBuf::new(),
        }
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn layer(&self, name: &str) -> Result<&LayerEntry> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|r| r.class_index).collect()
    }

    /// Structural invariants that do not touch the filesystem.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |reason: String| Error::Manifest {
            path: self.root.join(MANIFEST_FILE),
            reason,
        };
        if self.version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.version,
                expected: FORMAT_VERSION,
            });
        }
        let mut names = HashSet::new();
        for layer in &self.layers {
            if !names.insert(layer.name.as_str()) {
                return Err(bad(format!("duplicate layer name `{}`", layer.name)));
            }
            if layer.neuron_count == 0 {
                return Err(bad(format!("layer `{}` has no neurons", layer.name)));
            }
            let (r, c) = layer.spatial_dims;
            if r == 0 || c == 0 {
                return Err(bad(format!("layer `{}` has empty spatial dims", layer.name)));
            }
            if r > u16::MAX as usize + 1 || c > u16::MAX as usize + 1 {
                return Err(bad(format!("layer `{}` spatial dims exceed u16 range", layer.name)));
            }
        }
        for (pos, img) in self.images.iter().enumerate() {
            if img.image_id != pos {
                return Err(bad(format!(
                    "image_id {} at position {pos}; ids must equal list position",
                    img.image_id
                )));
            }
            if img.class_index >= self.class_names.len() {
                return Err(Error::OutOfRange {
                    what: "class_index",
                    index: img.class_index,
                    limit: self.class_names.len(),
                });
            }
        }
        Ok(())
    }

    fn expected_payload_len(&self, layer: &LayerEntry) -> u64 {
        8 + (layer.neuron_count as u64) * (self.image_count() as u64) * 8
    }
}

/// Dense per-layer activation table.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTable {
    pub layer: String,
    pub neuron_count: usize,
    pub image_count: usize,
    /// neuron-major: `values[neuron * image_count + image]`
    pub values: Vec<f32>,
    /// (row, col) of each maximum, same layout as `values`.
    pub argmax: Vec<(u16, u16)>,
}

impl ActivationTable {
    pub fn new(
        layer: impl Into<String>,
        neuron_count: usize,
        image_count: usize,
        values: Vec<f32>,
        argmax: Vec<(u16, u16)>,
    ) -> Result<Self> {
        let n = neuron_count * image_count;
        if values.len() != n || argmax.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "table {neuron_count}x{image_count} needs {n} values and positions, got {} and {}",
                values.len(),
                argmax.len()
            )));
        }
        Ok(ActivationTable {
            layer: layer.into(),
            neuron_count,
            image_count,
            values,
            argmax,
        })
    }

    /// Table with all positions at (0, 0).
    pub fn from_values(layer: impl Into<String>, neuron_count: usize, image_count: usize, values: Vec<f32>) -> Result<Self> {
        let argmax = vec![(0, 0); values.len()];
        Self::new(layer, neuron_count, image_count, values, argmax)
    }

    pub fn row(&self, neuron: usize) -> &[f32] {
        &self.values[neuron * self.image_count..(neuron + 1) * self.image_count]
    }

    pub fn positions(&self, neuron: usize) -> &[(u16, u16)] {
        &self.argmax[neuron * self.image_count..(neuron + 1) * self.image_count]
    }

    pub fn check(&self, spatial_dims: (usize, usize)) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "layer `{}`: non-finite activation at neuron {}, image {}",
                self.layer,
                i / self.image_count.max(1),
                i % self.image_count.max(1)
            )));
        }
        if let Some(i) = self
            .argmax
            .iter()
            .position(|&(r, c)| r as usize >= spatial_dims.0 || c as usize >= spatial_dims.1)
        {
            return Err(Error::Validation(format!(
                "layer `{}`: argmax {:?} outside spatial dims {:?} (record {i})",
                self.layer, self.argmax[i], spatial_dims
            )));
        }
        Ok(())
    }

    fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + self.values.len() * 8);
        buf.extend_from_slice(&ACTIVATION_MAGIC);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &(r, c) in &self.argmax {
            buf.extend_from_slice(&r.to_le_bytes());
            buf.extend_from_slice(&c.to_le_bytes());
        }
        buf
    }
}

fn manifest_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Reads and validates a manifest. `path` is either the header file or
/// the dataset directory.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = manifest_file(path);
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let mut manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Manifest {
        path: file.clone(),
        reason: e.to_string(),
    })?;
    manifest.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.check_invariants()?;

    for layer in &manifest.layers {
        let act = manifest.resolve(&layer.activation_file);
        let meta = fs::metadata(&act).map_err(|e| Error::io(&act, e))?;
        let expected = manifest.expected_payload_len(layer);
        if meta.len() != expected {
            return Err(Error::CountMismatch {
                path: act,
                expected,
                found: meta.len(),
            });
        }
    }
    if let Some(onto) = &manifest.ontology_path {
        let p = manifest.resolve(onto);
        if !p.is_file() {
            return Err(Error::Manifest {
                path: file,
                reason: format!("ontology file {} not found", p.display()),
            });
        }
    }
    Ok(manifest)
}

/// Writes the header and one payload per layer. `tables` must follow the
/// manifest's layer order. Everything is validated before any byte hits disk.
pub fn write_manifest(manifest: &DatasetManifest, tables: &[ActivationTable], path: &Path) -> Result<()> {
    manifest.check_invariants()?;
    if tables.len() != manifest.layers.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} layers declared, {} tables supplied",
            manifest.layers.len(),
            tables.len()
        )));
    }
    for (layer, table) in manifest.layers.iter().zip(tables) {
        if table.layer != layer.name
            || table.neuron_count != layer.neuron_count
            || table.image_count != manifest.image_count()
        {
            return Err(Error::DimensionMismatch(format!(
                "table `{}` ({}x{}) does not match layer `{}` ({}x{})",
                table.layer,
                table.neuron_count,
                table.image_count,
                layer.name,
                layer.neuron_count,
                manifest.image_count()
            )));
        }
        table.check(layer.spatial_dims)?;
    }

    let file = if path.extension().is_some_and(|e| e == "nsx") {
        path.to_path_buf()
    } else {
        path.join(MANIFEST_FILE)
    };
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (layer, table) in manifest.layers.iter().zip(tables) {
        let target = dir.join(&layer.activation_file);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&target, table.encode()).map_err(|e| Error::io(&target, e))?;
    }
    let text = toml::to_string(manifest).map_err(|e| Error::Manifest {
        path: file.clone(),
        reason: e.to_string(),
    })?;
    fs::write(&file, text).map_err(|e| Error::io(&file, e))
}

pub fn load_activations(manifest: &DatasetManifest, layer: &str) -> Result<ActivationTable> {
    let entry = manifest.layer(layer)?;
    let path = manifest.resolve(&entry.activation_file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let table = decode_payload(&bytes, entry, manifest.image_count(), &path)?;
    table.check(entry.spatial_dims)?;
    Ok(table)
}

fn decode_payload(bytes: &[u8], entry: &LayerEntry, image_count: usize, path: &Path) -> Result<ActivationTable> {
    if bytes.len() < 8 || bytes[..8] != ACTIVATION_MAGIC {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            reason: "missing or corrupt magic".into(),
        });
    }
    let n = entry.neuron_count * image_count;
    let expected = 8 + n * 8;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            reason: format!("{} of {expected} bytes present", bytes.len()),
        });
    }
    if bytes.len() > expected {
        return Err(Error::CountMismatch {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    let (vals, pos) = bytes[8..].split_at(n * 4);
    let values = vals
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let argmax = pos
        .chunks_exact(4)
        .map(|b| (u16::from_le_bytes([b[0], b[1]]), u16::from_le_bytes([b[2], b[3]])))
        .collect();
    ActivationTable::new(entry.name.clone(), entry.neuron_count, image_count, values, argmax)
}

/// Full dataset check: header, every payload, and every image header.
/// Returns the list of problems found (empty when valid).
pub fn validate_dataset(manifest: &DatasetManifest) -> Vec<String> {
    let mut problems = Vec::new();
    for layer in &manifest.layers {
        if let Err(e) = load_activations(manifest, &layer.name) {
            problems.push(e.to_string());
        }
    }
    for img in &manifest.images {
        let p = manifest.resolve(&img.path);
        if let Err(e) = ::image::image_dimensions(&p) {
            problems.push(format!("image {} ({}): {e}", img.image_id, p.display()));
        }
    }
    problems
}
