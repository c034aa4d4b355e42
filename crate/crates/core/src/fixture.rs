//! Deterministic synthetic datasets with planted selectivities.
//!
//! Images are split into *stimulus groups* and a background pool. A group
//! either carries a hue (a constant-intensity chroma sawtooth along the
//! columns) or a grey texture, and optionally a class label with a given
//! purity. Planted neurons respond strongly to exactly one group and weakly
//! everywhere else; unplanted neurons respond uniformly at random over the
//! background pool, whose images all carry distinct labels where the class
//! count allows it. Dead neurons never exceed zero.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorsel::rgb_from_opp;
use crate::error::{Error, Result};
use crate::geometry::{ArchitectureSpec, RfGeometry};
use crate::manifest::{write_manifest, ActivationConvention, ActivationTable, DatasetManifest, ImageRecord, LayerEntry};
use crate::raster::RgbGrid;

/// Column period of the hue sawtooth; planted crops start on a period boundary.
pub const SAWTOOTH_PERIOD: usize = 16;
pub const ARCH_FILE: &str = "architecture.arch";
pub const ONTOLOGY_FILE: &str = "ontology.tsv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureLayer {
    pub name: String,
    pub neuron_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub name: String,
    pub images: usize,
    /// Opponent-plane hue in degrees; `None` gives grey texture.
    #[serde(default)]
    pub hue: Option<f64>,
    #[serde(default)]
    pub class: Option<usize>,
    /// Fraction of the group labelled `class`; the rest get distinct labels.
    #[serde(default = "one")]
    pub purity: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedNeuron {
    pub layer: String,
    pub neuron: usize,
    #[serde(default)]
    pub stimulus: Option<String>,
    #[serde(default)]
    pub dead: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub image_count: usize,
    pub image_size: (usize, usize),
    pub class_count: usize,
    /// Architecture description text (same syntax as `.arch` files).
    pub architecture: String,
    pub layers: Vec<FixtureLayer>,
    #[serde(default)]
    pub stimuli: Vec<Stimulus>,
    #[serde(default)]
    pub planted: Vec<PlantedNeuron>,
}

const DEFAULT_ARCH: &str = "\
input 64 64
conv conv1 k=5 s=1 p=2
pool k=2 s=2 p=0
conv conv2 k=3 s=1 p=1
pool k=2 s=2 p=0
conv conv3 k=3 s=1 p=1
";

pub const DEFAULT_HUES: [f64; 8] = [0.0, 30.0, 75.0, 120.0, 180.0, 210.0, 260.0, 320.0];

impl FixtureSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("fixture spec: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("fixture spec serializes")
    }

    /// Three layers of 32 neurons over 500 images of 64x64.
    ///
    /// * conv1: 16 color neurons (two per hue), 2 class-pure, 2 dead
    /// * conv2: 8 color neurons, 6 class-pure, 2 dead
    /// * conv3: 4 color neurons, 6 class-pure, 1 half-pure, 2 dead
    ///
    /// Everything else is unplanted.
    pub fn standard() -> Self {
        let mut stimuli: Vec<Stimulus> = DEFAULT_HUES
            .iter()
            .enumerate()
            .map(|(i, &h)| Stimulus {
                name: format!("hue{i}"),
                images: 12,
                hue: Some(h),
                class: None,
                purity: 1.0,
            })
            .collect();
        let classes = [7usize, 113, 256, 402, 640, 999];
        stimuli.extend(classes.iter().enumerate().map(|(i, &c)| Stimulus {
            name: format!("class{i}"),
            images: 12,
            hue: None,
            class: Some(c),
            purity: 1.0,
        }));
        stimuli.push(Stimulus {
            name: "mixed".into(),
            images: 12,
            hue: None,
            class: Some(500),
            purity: 0.5,
        });

        let mut planted = Vec::new();
        let mut plant = |layer: &str, neuron: usize, stimulus: Option<String>, dead: bool| {
            planted.push(PlantedNeuron {
                layer: layer.into(),
                neuron,
                stimulus,
                dead,
            })
        };
        // conv1: interleave so planted neurons are not one contiguous block
        for i in 0..16 {
            plant("conv1", i * 2, Some(format!("hue{}", i % 8)), false);
        }
        plant("conv1", 1, Some("class0".into()), false);
        plant("conv1", 3, Some("class1".into()), false);
        plant("conv1", 5, None, true);
        plant("conv1", 31, None, true);

        for i in 0..8 {
            plant("conv2", i * 3, Some(format!("hue{i}")), false);
        }
        for i in 0..6 {
            plant("conv2", i * 3 + 1, Some(format!("class{i}")), false);
        }
        plant("conv2", 26, None, true);
        plant("conv2", 29, None, true);

        for i in 0..4 {
            plant("conv3", i * 7, Some(format!("hue{}", i * 2)), false);
        }
        for i in 0..6 {
            plant("conv3", 3 + i * 5, Some(format!("class{i}")), false);
        }
        plant("conv3", 30, Some("mixed".into()), false);
        plant("conv3", 4, None, true);
        plant("conv3", 9, None, true);

        FixtureSpec {
            image_count: 500,
            image_size: (64, 64),
            class_count: 1000,
            architecture: DEFAULT_ARCH.into(),
            layers: ["conv1", "conv2", "conv3"]
                .iter()
                .map(|n| FixtureLayer {
                    name: n.to_string(),
                    neuron_count: 32,
                })
                .collect(),
            stimuli,
            planted,
        }
    }

    pub fn stimulus(&self, name: &str) -> Option<&Stimulus> {
        self.stimuli.iter().find(|s| s.name == name)
    }

    pub fn planted_for(&self, layer: &str, neuron: usize) -> Option<&PlantedNeuron> {
        self.planted.iter().find(|p| p.layer == layer && p.neuron == neuron)
    }

    fn validate(&self, arch: &ArchitectureSpec) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("fixture spec: {m}")));
        if self.image_count == 0 || self.class_count == 0 || self.layers.is_empty() {
            return bad("image_count, class_count and layers must be non-empty".into());
        }
        if arch.input_size != self.image_size {
            return bad(format!(
                "architecture input {:?} differs from image size {:?}",
                arch.input_size, self.image_size
            ));
        }
        let grouped: usize = self.stimuli.iter().map(|s| s.images).sum();
        if grouped > self.image_count {
            return bad(format!("stimuli need {grouped} images, only {} available", self.image_count));
        }
        let mut names = HashSet::new();
        for s in &self.stimuli {
            if !names.insert(&s.name) || s.images == 0 || !(0.0..=1.0).contains(&s.purity) {
                return bad(format!("stimulus `{}` is duplicated, empty, or has bad purity", s.name));
            }
            if let Some(c) = s.class {
                if c >= self.class_count {
                    return Err(Error::OutOfRange {
                        what: "planted class",
                        index: c,
                        limit: self.class_count,
                    });
                }
            }
        }
        let planted_classes: BTreeSet<usize> = self.stimuli.iter().filter_map(|s| s.class).collect();
        if planted_classes.len() >= self.class_count {
            return bad(format!(
                "{} planted classes leave no background labels among {} classes",
                planted_classes.len(),
                self.class_count
            ));
        }
        let mut seen = HashSet::new();
        for p in &self.planted {
            let layer = self
                .layers
                .iter()
                .find(|l| l.name == p.layer)
                .ok_or_else(|| Error::UnknownLayer(p.layer.clone()))?;
            if p.neuron >= layer.neuron_count {
                return Err(Error::OutOfRange {
                    what: "planted neuron",
                    index: p.neuron,
                    limit: layer.neuron_count,
                });
            }
            if !seen.insert((&p.layer, p.neuron)) {
                return bad(format!("{}#{} planted twice", p.layer, p.neuron));
            }
            match (&p.stimulus, p.dead) {
                (Some(s), false) if self.stimulus(s).is_some() => {}
                (None, true) => {}
                _ => return bad(format!("{}#{} needs exactly one of a known stimulus or dead", p.layer, p.neuron)),
            }
        }
        for l in &self.layers {
            arch.receptive_field(&l.name)?;
        }
        Ok(())
    }
}

fn grey_texture(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> RgbGrid {
    let mut g = RgbGrid::new(rows, cols);
    for px in g.data.chunks_exact_mut(3) {
        let l: f64 = rng.random_range(0.15..0.85);
        for v in px.iter_mut() {
            *v = l + rng.random_range(-0.02..0.02);
        }
    }
    g
}

fn hue_sawtooth(rng: &mut ChaCha8Rng, rows: usize, cols: usize, hue_deg: f64) -> RgbGrid {
    let grey: f64 = rng.random_range(0.45..0.55);
    let amp: f64 = rng.random_range(0.4..0.5);
    let (s, c) = hue_deg.to_radians().sin_cos();
    let o1 = grey * 3f64.sqrt();
    RgbGrid::from_fn(rows, cols, |_, col| {
        let t = (col % SAWTOOTH_PERIOD) as f64 / (SAWTOOTH_PERIOD - 1) as f64;
        rgb_from_opp([o1, amp * t * c, amp * t * s])
    })
}

/// Activation-map positions whose footprint stays inside the image, along one axis.
fn interior(rf: &RfGeometry, map_len: usize, image_len: usize) -> Vec<usize> {
    (0..map_len)
        .filter(|&p| {
            let first = rf.start + (p * rf.jump) as i64;
            first >= 0 && first + rf.size as i64 <= image_len as i64
        })
        .collect()
}

struct LayerGeometry {
    rf: RfGeometry,
    dims: (usize, usize),
    interior_rows: Vec<usize>,
    interior_cols: Vec<usize>,
    aligned_cols: Vec<usize>,
}

impl LayerGeometry {
    fn new(arch: &ArchitectureSpec, layer: &str, image_size: (usize, usize)) -> Result<Self> {
        let rf = arch.receptive_field(layer)?;
        let dims = arch.output_dims(layer)?;
        let interior_rows = interior(&rf, dims.0, image_size.0);
        let interior_cols = interior(&rf, dims.1, image_size.1);
        let aligned_cols = interior_cols
            .iter()
            .copied()
            .filter(|&c| (rf.start + (c * rf.jump) as i64).rem_euclid(SAWTOOTH_PERIOD as i64) == 0)
            .collect();
        Ok(LayerGeometry {
            rf,
            dims,
            interior_rows,
            interior_cols,
            aligned_cols,
        })
    }

    fn pick(rng: &mut ChaCha8Rng, options: &[usize], fallback: usize) -> usize {
        options.choose(rng).copied().unwrap_or(fallback)
    }

    fn random(&self, rng: &mut ChaCha8Rng) -> (u16, u16) {
        (rng.random_range(0..self.dims.0) as u16, rng.random_range(0..self.dims.1) as u16)
    }

    fn planted(&self, rng: &mut ChaCha8Rng, aligned: bool) -> (u16, u16) {
        let r = Self::pick(rng, &self.interior_rows, self.dims.0 / 2);
        let cols = if aligned && !self.aligned_cols.is_empty() { &self.aligned_cols } else { &self.interior_cols };
        let c = Self::pick(rng, cols, self.dims.1 / 2);
        (r as u16, c as u16)
    }
}

/// Writes a complete dataset (images, payloads, architecture, ontology,
/// manifest) under `out_dir` and returns the manifest as read back.
pub fn generate_synthetic_fixture(spec: &FixtureSpec, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    let arch: ArchitectureSpec = spec.architecture.parse()?;
    spec.validate(&arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = spec.image_size;

    // image assignment
    let mut order: Vec<usize> = (0..spec.image_count).collect();
    order.shuffle(&mut rng);
    let mut group_of = vec![None::<usize>; spec.image_count];
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(spec.stimuli.len());
    let mut cursor = 0;
    for (g, s) in spec.stimuli.iter().enumerate() {
        let mut ids = order[cursor..cursor + s.images].to_vec();
        ids.sort_unstable();
        for &id in &ids {
            group_of[id] = Some(g);
        }
        groups.push(ids);
        cursor += s.images;
    }

    // labels
    let reserved: BTreeSet<usize> = spec.stimuli.iter().filter_map(|s| s.class).collect();
    let mut pool: Vec<usize> = (0..spec.class_count).filter(|c| !reserved.contains(c)).collect();
    pool.shuffle(&mut rng);
    let mut next_pool = {
        let mut i = 0;
        move || {
            let c = pool[i % pool.len()];
            i += 1;
            c
        }
    };
    let mut labels = vec![0usize; spec.image_count];
    for (g, s) in spec.stimuli.iter().enumerate() {
        let pure = s.class.map(|_| (s.purity * s.images as f64).round() as usize).unwrap_or(0);
        for (k, &id) in groups[g].iter().enumerate() {
            labels[id] = match s.class {
                Some(c) if k < pure => c,
                _ => next_pool(),
            };
        }
    }
    for id in 0..spec.image_count {
        if group_of[id].is_none() {
            labels[id] = next_pool();
        }
    }

    // images
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut records = Vec::with_capacity(spec.image_count);
    for id in 0..spec.image_count {
        let img = match group_of[id].and_then(|g| spec.stimuli[g].hue) {
            Some(h) => hue_sawtooth(&mut rng, rows, cols, h),
            None => grey_texture(&mut rng, rows, cols),
        };
        let rel = PathBuf::from("images").join(format!("{id:06}.png"));
        img.save_png(&out_dir.join(&rel))?;
        records.push(ImageRecord {
            image_id: id,
            path: rel,
            class_index: labels[id],
        });
    }

    // activations
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut tables = Vec::with_capacity(spec.layers.len());
    for fl in &spec.layers {
        let geo = LayerGeometry::new(&arch, &fl.name, spec.image_size)?;
        let n_img = spec.image_count;
        let mut values = Vec::with_capacity(fl.neuron_count * n_img);
        let mut argmax = Vec::with_capacity(fl.neuron_count * n_img);
        for neuron in 0..fl.neuron_count {
            let planted = spec.planted_for(&fl.name, neuron);
            let target = planted
                .and_then(|p| p.stimulus.as_deref())
                .and_then(|s| spec.stimuli.iter().position(|st| st.name == s));
            let dead = planted.is_some_and(|p| p.dead);
            let first_of_group = target.map(|g| groups[g][0]);
            for id in 0..n_img {
                let u: f64 = rng.random();
                let (a, pos) = if dead {
                    (-0.5 * u, geo.random(&mut rng))
                } else if let Some(g) = target {
                    if group_of[id] == Some(g) {
                        let a = if Some(id) == first_of_group { 1.0 } else { 0.8 + 0.2 * u };
                        (a, geo.planted(&mut rng, spec.stimuli[g].hue.is_some()))
                    } else {
                        (0.4 * u, geo.random(&mut rng))
                    }
                } else if group_of[id].is_some() {
                    (0.3 * u, geo.random(&mut rng))
                } else {
                    (u, geo.random(&mut rng))
                };
                values.push(a as f32);
                argmax.push(pos);
            }
        }
        tables.push(ActivationTable::new(fl.name.clone(), fl.neuron_count, n_img, values, argmax)?);
        layers.push(LayerEntry {
            name: fl.name.clone(),
            neuron_count: fl.neuron_count,
            spatial_dims: geo.dims,
            activation_file: format!("{}.actb", fl.name).into(),
        });
        let _ = geo.rf;
    }

    // three-level ontology: class -> group (10) -> family (100) -> entity
    let class_names: Vec<String> = (0..spec.class_count).map(|c| format!("class_{c:04}")).collect();
    let mut onto = String::new();
    for (c, name) in class_names.iter().enumerate() {
        onto.push_str(&format!("{name}\tgroup_{:03}\n", c / 10));
    }
    for g in 0..spec.class_count.div_ceil(10) {
        onto.push_str(&format!("group_{g:03}\tfamily_{:02}\n", g / 10));
    }
    for f in 0..spec.class_count.div_ceil(100) {
        onto.push_str(&format!("family_{f:02}\tentity\n"));
    }
    let onto_path = out_dir.join(ONTOLOGY_FILE);
    fs::write(&onto_path, onto).map_err(|e| Error::io(&onto_path, e))?;
    let arch_path = out_dir.join(ARCH_FILE);
    fs::write(&arch_path, &spec.architecture).map_err(|e| Error::io(&arch_path, e))?;

    let mut manifest = DatasetManifest::new(class_names, layers, records);
    manifest.activation_convention = ActivationConvention::PreRectification;
    manifest.ontology_path = Some(ONTOLOGY_FILE.into());
    manifest.architecture_path = Some(ARCH_FILE.into());
    write_manifest(&manifest, &tables, out_dir)?;
    manifest.root = out_dir.to_path_buf();
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{load_activations, read_manifest};
    use crate::ranking::detect_dead;

    fn tiny() -> FixtureSpec {
        FixtureSpec {
            image_count: 40,
            image_size: (16, 16),
            class_count: 50,
            architecture: "input 16 16\nconv c1 k=3 s=1 p=1\n".into(),
            layers: vec![FixtureLayer {
                name: "c1".into(),
                neuron_count: 10,
            }],
            stimuli: vec![Stimulus {
                name: "red".into(),
                images: 5,
                hue: Some(0.0),
                class: Some(3),
                purity: 1.0,
            }],
            planted: [2usize, 5, 7]
                .iter()
                .map(|&n| PlantedNeuron {
                    layer: "c1".into(),
                    neuron: n,
                    stimulus: None,
                    dead: true,
                })
                .chain(std::iter::once(PlantedNeuron {
                    layer: "c1".into(),
                    neuron: 0,
                    stimulus: Some("red".into()),
                    dead: false,
                }))
                .collect(),
        }
    }

    #[test]
    fn planted_dead_neurons_are_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_fixture(&tiny(), 3, dir.path()).unwrap();
        let t = load_activations(&m, "c1").unwrap();
        let dead: Vec<usize> = detect_dead(&t, 0.0)
            .iter()
            .enumerate()
            .filter_map(|(i, &d)| d.then_some(i))
            .collect();
        assert_eq!(dead, vec![2, 5, 7]);
    }

    #[test]
    fn output_validates_and_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_synthetic_fixture(&tiny(), 11, a.path()).unwrap();
        generate_synthetic_fixture(&tiny(), 11, b.path()).unwrap();
        let back = read_manifest(a.path()).unwrap();
        assert_eq!(back, ma);
        for rel in ["manifest.nsx", "c1.actb", "images/000017.png", ONTOLOGY_FILE] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
        }
        assert!(crate::manifest::validate_dataset(&back).is_empty());
    }

    #[test]
    fn too_many_planted_classes() {
        let mut spec = tiny();
        spec.stimuli[0].class = Some(50);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            generate_synthetic_fixture(&spec, 0, dir.path()),
            Err(Error::OutOfRange { .. })
        ));
        let mut spec = tiny();
        spec.class_count = 1;
        spec.stimuli[0].class = Some(0);
        assert!(generate_synthetic_fixture(&spec, 0, dir.path()).is_err());
    }

    #[test]
    fn spec_toml_round_trip() {
        let s = FixtureSpec::standard();
        assert_eq!(FixtureSpec::from_toml(&s.to_toml()).unwrap(), s);
    }
}
