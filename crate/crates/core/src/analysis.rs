//! Per-layer passes: rank, crop, composite, index.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::classsel::{class_frequencies, class_selectivity_index, ClassDistribution, ClassSelectivity, DEFAULT_TH};
use crate::colorsel::{nf_color_selectivity, ColorSelectivity, DEFAULT_ALPHA_THRESHOLD, DEFAULT_STD_EPSILON};
use crate::error::{Error, Result};
use crate::geometry::{crop_image, project_to_image, ArchitectureSpec, CroppedImage, PadPolicy, RfGeometry};
use crate::manifest::{load_activations, ActivationTable, DatasetManifest};
use crate::nf::{compute_nf, nf_sharpness, pixel_std_map, NeuronFeature, NfOptions};
use crate::ranking::{rank_layer, ActivationCurve, NeuronRanking, RankOutcome, RankingParams};
use crate::raster::RgbGrid;
use crate::report::{IndexValue, NeuronIndexRecord};

/// Env var capping worker threads (0 or unset = one per core).
pub const THREADS_ENV: &str = "NEUROSCOPE_THREADS";

/// Sizes the global rayon pool from `NEUROSCOPE_THREADS`. Safe to call
/// more than once; only the first call takes effect.
pub fn configure_threads() {
    let n = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    pub ranking: RankingParams,
    pub nf: NfOptions,
    pub pad: PadPolicy,
    pub std_epsilon: f64,
    pub th: f64,
    pub alpha_threshold: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            ranking: RankingParams::default(),
            nf: NfOptions::default(),
            pad: PadPolicy::Zero,
            std_epsilon: DEFAULT_STD_EPSILON,
            th: DEFAULT_TH,
            alpha_threshold: DEFAULT_ALPHA_THRESHOLD,
        }
    }
}

/// Decoded images shared across layers.
#[derive(Debug, Default)]
pub struct ImageCache {
    images: HashMap<usize, Arc<RgbGrid>>,
}

impl ImageCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: usize, image: RgbGrid) {
        self.images.insert(id, Arc::new(image));
    }

    pub fn get(&self, id: usize) -> Option<&Arc<RgbGrid>> {
        self.images.get(&id)
    }

    /// Decodes every id not already cached, in parallel.
    pub fn ensure(&mut self, manifest: &DatasetManifest, ids: impl IntoIterator<Item = usize>) -> Result<()> {
        let mut missing: Vec<usize> = ids.into_iter().filter(|id| !self.images.contains_key(id)).collect();
        missing.sort_unstable();
        missing.dedup();
        let loaded: Vec<(usize, RgbGrid)> = missing
            .into_par_iter()
            .map(|id| {
                let rec = manifest.images.get(id).ok_or(Error::OutOfRange {
                    what: "image_id",
                    index: id,
                    limit: manifest.image_count(),
                })?;
                Ok((id, RgbGrid::load_png(&manifest.resolve(&rec.path))?))
            })
            .collect::<Result<_>>()?;
        for (id, img) in loaded {
            self.insert(id, img);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NeuronAnalysis {
    pub neuron: usize,
    pub outcome: RankOutcome,
    pub nf: Option<NeuronFeature>,
    pub sharpness: Option<f64>,
    pub color: Option<ColorSelectivity>,
    pub class_distribution: Option<ClassDistribution>,
    /// `None` when dead or when only one image was ranked.
    pub class: Option<ClassSelectivity>,
}

impl NeuronAnalysis {
    pub fn is_dead(&self) -> bool {
        self.outcome.is_dead()
    }

    pub fn ranking(&self) -> Option<&NeuronRanking> {
        self.outcome.ranking()
    }
}

#[derive(Debug, Clone)]
pub struct LayerAnalysis {
    pub layer: String,
    pub layer_index: usize,
    pub rf: RfGeometry,
    pub neurons: Vec<NeuronAnalysis>,
}

impl LayerAnalysis {
    pub fn alpha_values(&self) -> Vec<IndexValue> {
        self.neurons
            .iter()
            .map(|n| match (&n.color, n.is_dead()) {
                (_, true) => IndexValue::Dead,
                (Some(c), _) => IndexValue::Value(c.alpha),
                (None, _) => IndexValue::Undefined,
            })
            .collect()
    }

    pub fn gamma_values(&self) -> Vec<IndexValue> {
        self.neurons
            .iter()
            .map(|n| match (&n.class, n.is_dead()) {
                (_, true) => IndexValue::Dead,
                (Some(c), _) => IndexValue::Value(c.gamma),
                (None, _) => IndexValue::Undefined,
            })
            .collect()
    }

    pub fn records(&self, curves: Option<&[Option<ActivationCurve>]>) -> Vec<NeuronIndexRecord> {
        self.neurons
            .iter()
            .map(|n| NeuronIndexRecord {
                layer: self.layer.clone(),
                layer_index: self.layer_index,
                neuron: n.neuron,
                dead: n.is_dead(),
                alpha: n.color.map(|c| c.alpha),
                hue: n.color.and_then(|c| c.hue.degrees),
                gamma: n.class.as_ref().map(|c| c.gamma),
                auc: curves.and_then(|c| c.get(n.neuron)).and_then(|c| c.as_ref()).map(|c| c.auc_fraction),
            })
            .collect()
    }
}

/// Crops feeding one neuron's ranked images, with their weights.
pub fn neuron_crops(ranking: &NeuronRanking, rf: &RfGeometry, images: &ImageCache, pad: PadPolicy) -> Result<(Vec<CroppedImage>, Vec<f64>)> {
    let mut crops = Vec::with_capacity(ranking.entries.len());
    let mut weights = Vec::with_capacity(ranking.entries.len());
    for e in &ranking.entries {
        let img = images.get(e.image_id).ok_or(Error::OutOfRange {
            what: "image cache",
            index: e.image_id,
            limit: 0,
        })?;
        let pos = (e.position.0 as usize, e.position.1 as usize);
        let rect = project_to_image(rf, pos, (img.rows, img.cols));
        crops.push(crop_image(img, &rect, pad));
        weights.push(e.weight);
    }
    Ok((crops, weights))
}

pub fn analyze_neuron(
    outcome: RankOutcome,
    neuron: usize,
    rf: &RfGeometry,
    images: &ImageCache,
    labels: &[usize],
    cfg: &AnalysisConfig,
) -> Result<NeuronAnalysis> {
    let mut out = NeuronAnalysis {
        neuron,
        outcome,
        nf: None,
        sharpness: None,
        color: None,
        class_distribution: None,
        class: None,
    };
    let Some(ranking) = out.outcome.ranking() else {
        return Ok(out);
    };
    let (crops, weights) = neuron_crops(ranking, rf, images, cfg.pad)?;
    let nf = compute_nf(&crops, &weights, cfg.ranking.n_max, cfg.nf)?;
    let std = pixel_std_map(&crops, &weights)?;
    let dist = class_frequencies(ranking, labels)?;
    out.color = Some(nf_color_selectivity(&nf, &std, cfg.std_epsilon)?);
    out.class = match class_selectivity_index(&dist, cfg.th) {
        Ok(c) => Some(c),
        Err(Error::SingularClassIndex) => None,
        Err(e) => return Err(e),
    };
    out.sharpness = Some(nf_sharpness(&nf));
    out.nf = Some(nf);
    out.class_distribution = Some(dist);
    Ok(out)
}

/// Runs the full per-neuron pipeline over a loaded table.
pub fn analyze_table(
    manifest: &DatasetManifest,
    arch: &ArchitectureSpec,
    table: &ActivationTable,
    layer_index: usize,
    cfg: &AnalysisConfig,
    images: &mut ImageCache,
) -> Result<LayerAnalysis> {
    let rf = arch.receptive_field(&table.layer)?;
    let outcomes = rank_layer(table, &cfg.ranking)?;
    images.ensure(
        manifest,
        outcomes
            .iter()
            .filter_map(RankOutcome::ranking)
            .flat_map(|r| r.entries.iter().map(|e| e.image_id)),
    )?;
    let labels = manifest.labels();
    let images = &*images;
    let neurons = outcomes
        .into_par_iter()
        .enumerate()
        .map(|(n, o)| analyze_neuron(o, n, &rf, images, &labels, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerAnalysis {
        layer: table.layer.clone(),
        layer_index,
        rf,
        neurons,
    })
}

pub fn analyze_layer(
    manifest: &DatasetManifest,
    arch: &ArchitectureSpec,
    layer: &str,
    cfg: &AnalysisConfig,
    images: &mut ImageCache,
) -> Result<LayerAnalysis> {
    let layer_index = manifest
        .layers
        .iter()
        .position(|l| l.name == layer)
        .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
    let table = load_activations(manifest, layer)?;
    analyze_table(manifest, arch, &table, layer_index, cfg, images)
}

/// Architecture referenced by the manifest, if any.
pub fn manifest_architecture(manifest: &DatasetManifest) -> Result<Option<ArchitectureSpec>> {
    manifest
        .architecture_path
        .as_ref()
        .map(|p| ArchitectureSpec::from_file(&manifest.resolve(p)))
        .transpose()
}
