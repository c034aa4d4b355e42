//! C ABI for the neuroscope engine.
//!
//! Every fallible call returns an [`NsStatus`]; on failure a message is
//! available from [`ns_last_error_message`] on the same thread. Objects
//! are opaque handles released with their matching `_free` function.
//! Strings returned as `char *` are owned by the caller and released with
//! [`ns_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use neuroscope::analysis::{analyze_layer, manifest_architecture, AnalysisConfig, ImageCache, LayerAnalysis};
use neuroscope::classsel::{class_frequencies, class_selectivity_index};
use neuroscope::colorsel::{color_selectivity, opp_from_rgb, OppPixelCloud};
use neuroscope::geometry::ArchitectureSpec;
use neuroscope::manifest::{read_manifest, ActivationTable, DatasetManifest};
use neuroscope::nf::{MaskHandling, NfNormalization};
use neuroscope::ranking::{rank_neuron, NeuronRanking, RankEntry, RankOutcome, RankingParams};
use neuroscope::Error;

/// Result codes. `NS_OK` is zero; everything else is a failure.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsStatus {
    NsOk = 0,
    NsNullPointer = 1,
    NsInvalidArgument = 2,
    NsIo = 3,
    NsValidation = 4,
    NsUnknownLayer = 5,
    NsOutOfRange = 6,
    NsDeadNeuron = 7,
    NsSingularClassIndex = 8,
    NsBufferTooSmall = 9,
    NsPanic = 10,
}

impl From<&Error> for NsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } | Error::Csv(_) | Error::MissingThumbnail(_) | Error::Image { .. } => NsStatus::NsIo,
            Error::InvalidArgument(_) | Error::MissingKey(_) => NsStatus::NsInvalidArgument,
            Error::UnknownLayer(_) => NsStatus::NsUnknownLayer,
            Error::OutOfRange { .. } => NsStatus::NsOutOfRange,
            Error::DeadNeuron { .. } => NsStatus::NsDeadNeuron,
            Error::SingularClassIndex => NsStatus::NsSingularClassIndex,
            _ => NsStatus::NsValidation,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(NsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(NsStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> NsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NsStatus::NsOk,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NsStatus::NsPanic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(NsStatus::NsNullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(NsStatus::NsInvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ns_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ns_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn ns_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------- geometry

/// Network geometry description.
pub struct NsArchitecture(ArchitectureSpec);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NsReceptiveField {
    /// Side of the square input footprint.
    pub size: usize,
    /// Input-pixel step between neighbouring activations.
    pub jump: usize,
    /// Input coordinate of the first footprint pixel of activation (0, 0).
    pub start: i64,
    /// Input coordinate of the center of that footprint.
    pub offset: f64,
}

fn boxed<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    let out = unsafe { out_arg(out, "out")? };
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Built-in VGG-M geometry.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ns_arch_vgg_m(out: *mut *mut NsArchitecture) -> NsStatus {
    guard(|| boxed(out, NsArchitecture(ArchitectureSpec::vgg_m())))
}

/// Parses an architecture description from text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ns_arch_parse(text: *const c_char, out: *mut *mut NsArchitecture) -> NsStatus {
    guard(|| {
        let arch: ArchitectureSpec = str_arg(text, "text")?.parse()?;
        boxed(out, NsArchitecture(arch))
    })
}

/// Reads an architecture description file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ns_arch_open(path: *const c_char, out: *mut *mut NsArchitecture) -> NsStatus {
    guard(|| {
        let arch = ArchitectureSpec::from_file(Path::new(str_arg(path, "path")?))?;
        boxed(out, NsArchitecture(arch))
    })
}

/// # Safety
/// `arch` must come from an `ns_arch_*` constructor, or be null.
#[no_mangle]
pub unsafe extern "C" fn ns_arch_free(arch: *mut NsArchitecture) {
    if !arch.is_null() {
        drop(Box::from_raw(arch));
    }
}

/// # Safety
/// `arch` must be a live handle, `layer` a NUL-terminated string and
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ns_arch_receptive_field(
    arch: *const NsArchitecture,
    layer: *const c_char,
    out: *mut NsReceptiveField,
) -> NsStatus {
    guard(|| {
        let rf = handle(arch, "arch")?.0.receptive_field(str_arg(layer, "layer")?)?;
        *out_arg(out, "out")? = NsReceptiveField {
            size: rf.size,
            jump: rf.jump,
            start: rf.start,
            offset: rf.offset,
        };
        Ok(())
    })
}

/// Activation-map size of a layer for the architecture's input size.
///
/// # Safety
/// `arch` must be a live handle, `layer` a NUL-terminated string, and
/// `rows`/`cols` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ns_arch_output_dims(
    arch: *const NsArchitecture,
    layer: *const c_char,
    rows: *mut usize,
    cols: *mut usize,
) -> NsStatus {
    guard(|| {
        let (r, c) = handle(arch, "arch")?.0.output_dims(str_arg(layer, "layer")?)?;
        *out_arg(rows, "rows")? = r;
        *out_arg(cols, "cols")? = c;
        Ok(())
    })
}

// ---------------------------------------------------------------- dataset

/// A dataset opened from its manifest.
pub struct NsDataset(DatasetManifest);

/// Opens a dataset directory or `manifest.nsx` file and checks payload sizes.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ns_dataset_open(path: *const c_char, out: *mut *mut NsDataset) -> NsStatus {
    guard(|| {
        let m = read_manifest(Path::new(str_arg(path, "path")?))?;
        boxed(out, NsDataset(m))
    })
}

/// # Safety
/// `ds` must come from [`ns_dataset_open`], or be null.
#[no_mangle]
pub unsafe extern "C" fn ns_dataset_free(ds: *mut NsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of layers, or 0 for a null handle.
///
/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ns_dataset_layer_count(ds: *const NsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.layers.len())
}

/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ns_dataset_image_count(ds: *const NsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.image_count())
}

/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ns_dataset_class_count(ds: *const NsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.class_names.len())
}

/// Name of layer `index`; free with [`ns_string_free`].
///
/// # Safety
/// `ds` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ns_dataset_layer_name(ds: *const NsDataset, index: usize, out: *mut *mut c_char) -> NsStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let layer = ds.0.layers.get(index).ok_or(Error::OutOfRange {
            what: "layer",
            index,
            limit: ds.0.layers.len(),
        })?;
        let s = CString::new(layer.name.as_str()).map_err(|_| Fail(NsStatus::NsValidation, "layer name has NUL".into()))?;
        *out_arg(out, "out")? = s.into_raw();
        Ok(())
    })
}

// ---------------------------------------------------------------- indexes

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NsColorResult {
    /// Color selectivity index in [0, 1].
    pub alpha: f64,
    /// Hue of the first axis in degrees, NaN when achromatic.
    pub hue_degrees: f64,
    pub chroma_magnitude: f64,
    /// Nonzero when the color cloud had no spread.
    pub degenerate: u8,
}

/// Color selectivity of `n` RGB pixels (`3n` values in [0, 1]) with
/// optional per-pixel weights (null = uniform).
///
/// # Safety
/// `rgb` must hold `3 * n` values, `weights` `n` values or be null, and
/// `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ns_color_selectivity_rgb(
    rgb: *const f64,
    weights: *const f64,
    n: usize,
    out: *mut NsColorResult,
) -> NsStatus {
    guard(|| {
        let rgb = slice_arg(rgb, n * 3, "rgb")?;
        if let Some(v) = rgb.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Fail(NsStatus::NsInvalidArgument, format!("RGB value {v} outside [0, 1]")));
        }
        let points: Vec<[f64; 3]> = rgb.chunks_exact(3).map(|c| opp_from_rgb([c[0], c[1], c[2]])).collect();
        let cloud = if weights.is_null() {
            OppPixelCloud::uniform(points)
        } else {
            OppPixelCloud::new(points, slice_arg(weights, n, "weights")?.to_vec())?
        };
        let c = color_selectivity(&cloud)?;
        *out_arg(out, "out")? = NsColorResult {
            alpha: c.alpha,
            hue_degrees: c.hue.degrees.unwrap_or(f64::NAN),
            chroma_magnitude: c.hue.chroma_magnitude,
            degenerate: c.degenerate as u8,
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NsClassResult {
    /// Class selectivity index in [0, 1].
    pub gamma: f64,
    /// Number of classes needed to reach the threshold.
    pub covering_classes: usize,
    /// Number of contributing images.
    pub images: usize,
}

/// Class selectivity of `n` ranked images given their class labels and
/// normalized weights, at cumulative threshold `th` in (0, 1].
///
/// # Safety
/// `labels` and `weights` must hold `n` values; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ns_class_selectivity(
    labels: *const usize,
    weights: *const f64,
    n: usize,
    th: f64,
    out: *mut NsClassResult,
) -> NsStatus {
    guard(|| {
        let labels = slice_arg(labels, n, "labels")?;
        let weights = slice_arg(weights, n, "weights")?;
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
            return Err(Fail(NsStatus::NsInvalidArgument, format!("weight {w} outside (0, 1]")));
        }
        let ranking = NeuronRanking {
            layer: String::new(),
            neuron: 0,
            a_max: 1.0,
            entries: weights
                .iter()
                .enumerate()
                .map(|(i, &w)| RankEntry {
                    image_id: i,
                    activation: w,
                    weight: w,
                    position: (0, 0),
                })
                .collect(),
        };
        let dist = class_frequencies(&ranking, labels)?;
        let s = class_selectivity_index(&dist, th)?;
        *out_arg(out, "out")? = NsClassResult {
            gamma: s.gamma,
            covering_classes: s.m,
            images: s.n,
        };
        Ok(())
    })
}

/// Ranks one neuron's per-image maxima. Writes up to `capacity` image ids
/// and weights in rank order and the selected count to `out_len`. A dead
/// neuron yields `NS_DEAD_NEURON`.
///
/// # Safety
/// `values` must hold `n_images` values; `ids` and `weights` must hold
/// `capacity` values; `out_len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ns_rank_neuron(
    values: *const f32,
    n_images: usize,
    n_max: usize,
    min_ratio: f64,
    ids: *mut usize,
    weights: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> NsStatus {
    guard(|| {
        let values = slice_arg(values, n_images, "values")?;
        let params = RankingParams {
            n_max,
            min_ratio,
            dead_epsilon: 0.0,
        };
        params.validate()?;
        let table = ActivationTable::from_values("ffi", 1, n_images, values.to_vec())?;
        let ranking = match rank_neuron(&table, 0, &params)? {
            RankOutcome::Ranked(r) => r,
            RankOutcome::Dead { a_max } => {
                *out_arg(out_len, "out_len")? = 0;
                return Err(Error::DeadNeuron {
                    layer: "ffi".into(),
                    neuron: 0,
                    a_max,
                }
                .into());
            }
        };
        let len = ranking.entries.len();
        *out_arg(out_len, "out_len")? = len;
        if len > capacity {
            return Err(Fail(NsStatus::NsBufferTooSmall, format!("{len} entries, capacity {capacity}")));
        }
        if len > 0 && (ids.is_null() || weights.is_null()) {
            return Err(null("ids/weights"));
        }
        for (i, e) in ranking.entries.iter().enumerate() {
            *ids.add(i) = e.image_id;
            *weights.add(i) = e.weight;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- analysis

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsAnalysisConfig {
    pub n_max: usize,
    pub min_ratio: f64,
    pub dead_epsilon: f64,
    pub th: f64,
    /// Nonzero divides the NF by the per-pixel weight sum instead of `n_max`.
    pub weight_sum_normalization: u8,
    /// Nonzero counts out-of-image pixels as zeros.
    pub include_masked: u8,
}

/// Default analysis settings.
#[no_mangle]
pub extern "C" fn ns_analysis_config_default() -> NsAnalysisConfig {
    let d = AnalysisConfig::default();
    NsAnalysisConfig {
        n_max: d.ranking.n_max,
        min_ratio: d.ranking.min_ratio,
        dead_epsilon: d.ranking.dead_epsilon,
        th: d.th,
        weight_sum_normalization: 0,
        include_masked: 0,
    }
}

impl NsAnalysisConfig {
    fn to_config(self) -> AnalysisConfig {
        let mut cfg = AnalysisConfig {
            ranking: RankingParams {
                n_max: self.n_max,
                min_ratio: self.min_ratio,
                dead_epsilon: self.dead_epsilon,
            },
            th: self.th,
            ..AnalysisConfig::default()
        };
        if self.weight_sum_normalization != 0 {
            cfg.nf.normalization = NfNormalization::WeightSum;
        }
        if self.include_masked != 0 {
            cfg.nf.masked = MaskHandling::Include;
        }
        cfg
    }
}

/// Per-layer analysis results.
pub struct NsLayerReport(LayerAnalysis);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NsNeuronSummary {
    pub dead: u8,
    /// Color selectivity index, NaN when dead.
    pub alpha: f64,
    /// Hue in degrees, NaN when dead or achromatic.
    pub hue_degrees: f64,
    /// Class selectivity index, NaN when dead or undefined.
    pub gamma: f64,
    /// Classes covering the threshold, 0 when undefined.
    pub covering_classes: usize,
    /// Images that passed the ranking threshold.
    pub images_used: usize,
    /// Mean squared gradient of the neuron feature, NaN when dead.
    pub sharpness: f64,
    /// Neuron feature side in pixels, 0 when dead.
    pub nf_rows: usize,
    pub nf_cols: usize,
}

/// Ranks, composites and indexes every neuron of `layer`. `arch` may be
/// null to use the dataset's own description (or VGG-M when it has none);
/// `config` may be null for defaults.
///
/// # Safety
/// Handles must be live, `layer` NUL-terminated, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ns_analyze_layer(
    ds: *const NsDataset,
    arch: *const NsArchitecture,
    layer: *const c_char,
    config: *const NsAnalysisConfig,
    out: *mut *mut NsLayerReport,
) -> NsStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let layer = str_arg(layer, "layer")?;
        let owned;
        let arch = match arch.as_ref() {
            Some(a) => &a.0,
            None => {
                owned = manifest_architecture(ds)?.unwrap_or_else(ArchitectureSpec::vgg_m);
                &owned
            }
        };
        let cfg = config.as_ref().copied().unwrap_or_else(|| ns_analysis_config_default()).to_config();
        cfg.ranking.validate()?;
        let la = analyze_layer(ds, arch, layer, &cfg, &mut ImageCache::new())?;
        boxed(out, NsLayerReport(la))
    })
}

/// # Safety
/// `report` must come from [`ns_analyze_layer`], or be null.
#[no_mangle]
pub unsafe extern "C" fn ns_layer_report_free(report: *mut NsLayerReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `report` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ns_layer_report_neuron_count(report: *const NsLayerReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.neurons.len())
}

/// # Safety
/// `report` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ns_layer_report_neuron(report: *const NsLayerReport, neuron: usize, out: *mut NsNeuronSummary) -> NsStatus {
    guard(|| {
        let r = &handle(report, "report")?.0;
        let n = r.neurons.get(neuron).ok_or(Error::OutOfRange {
            what: "neuron",
            index: neuron,
            limit: r.neurons.len(),
        })?;
        *out_arg(out, "out")? = NsNeuronSummary {
            dead: n.is_dead() as u8,
            alpha: n.color.map_or(f64::NAN, |c| c.alpha),
            hue_degrees: n.color.and_then(|c| c.hue.degrees).unwrap_or(f64::NAN),
            gamma: n.class.as_ref().map_or(f64::NAN, |c| c.gamma),
            covering_classes: n.class.as_ref().map_or(0, |c| c.m),
            images_used: n.ranking().map_or(0, |r| r.entries.len()),
            sharpness: n.sharpness.unwrap_or(f64::NAN),
            nf_rows: n.nf.as_ref().map_or(0, |f| f.pixels.rows),
            nf_cols: n.nf.as_ref().map_or(0, |f| f.pixels.cols),
        };
        Ok(())
    })
}

/// Copies a neuron feature as row-major RGB doubles (`rows * cols * 3`).
///
/// # Safety
/// `report` must be a live handle and `buf` hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ns_layer_report_nf(report: *const NsLayerReport, neuron: usize, buf: *mut f64, capacity: usize) -> NsStatus {
    guard(|| {
        let r = &handle(report, "report")?.0;
        let n = r.neurons.get(neuron).ok_or(Error::OutOfRange {
            what: "neuron",
            index: neuron,
            limit: r.neurons.len(),
        })?;
        let nf = n.nf.as_ref().ok_or(Error::DeadNeuron {
            layer: r.layer.clone(),
            neuron,
            a_max: n.ranking().map_or(0.0, |r| r.a_max),
        })?;
        let data = &nf.pixels.data;
        if data.len() > capacity {
            return Err(Fail(NsStatus::NsBufferTooSmall, format!("{} values, capacity {capacity}", data.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}
