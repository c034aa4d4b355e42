//! Ranked tables and figures.
//!
//! All emitters are deterministic: no randomness, fixed float formatting in
//! SVG markup, and shortest round-trip formatting in CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::colorsel::rgb_from_opp;
use crate::error::{Error, Result};
use crate::raster::RgbGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronIndexRecord {
    pub layer: String,
    /// Position of the layer in network order, used for tie-breaks.
    pub layer_index: usize,
    pub neuron: usize,
    pub dead: bool,
    pub alpha: Option<f64>,
    pub hue: Option<f64>,
    pub gamma: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortKey {
    Alpha,
    Gamma,
    Auc,
    /// min(alpha, gamma): neurons selective to both color and class.
    Joint,
}

impl SortKey {
    pub fn name(self) -> &'static str {
        match self {
            SortKey::Alpha => "alpha",
            SortKey::Gamma => "gamma",
            SortKey::Auc => "auc",
            SortKey::Joint => "joint",
        }
    }

    pub fn value(self, r: &NeuronIndexRecord) -> Option<f64> {
        match self {
            SortKey::Alpha => r.alpha,
            SortKey::Gamma => r.gamma,
            SortKey::Auc => r.auc,
            SortKey::Joint => Some(r.alpha?.min(r.gamma?)),
        }
    }
}

impl std::str::FromStr for SortKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SortKey::Alpha),
            "gamma" => Ok(SortKey::Gamma),
            "auc" => Ok(SortKey::Auc),
            "joint" => Ok(SortKey::Joint),
            other => Err(Error::InvalidArgument(format!("unknown sort key `{other}`"))),
        }
    }
}

/// Records holding a value for `key`, descending, ties by (layer, neuron).
pub fn rank_records(records: &[NeuronIndexRecord], key: SortKey) -> Result<Vec<(f64, &NeuronIndexRecord)>> {
    let mut rows: Vec<(f64, &NeuronIndexRecord)> = records
        .iter()
        .filter_map(|r| key.value(r).map(|v| (v, r)))
        .collect();
    if rows.is_empty() && records.iter().any(|r| !r.dead) {
        return Err(Error::MissingKey(key.name().into()));
    }
    rows.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.layer_index.cmp(&b.1.layer_index))
            .then(a.1.neuron.cmp(&b.1.neuron))
    });
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV: rank, layer, neuron, score (the sort key), alpha, hue, gamma, auc.
pub fn rank_table(records: &[NeuronIndexRecord], key: SortKey) -> Result<String> {
    let rows = rank_records(records, key)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "layer", "neuron", "score", "alpha", "hue", "gamma", "auc"])?;
    for (i, (v, r)) in rows.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.layer.clone(),
            r.neuron.to_string(),
            v.to_string(),
            opt(r.alpha),
            opt(r.hue),
            opt(r.gamma),
            opt(r.auc),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndexValue {
    Value(f64),
    Dead,
    /// Live neuron whose index is undefined (e.g. a single ranked image).
    Undefined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerHistogram {
    pub layer: String,
    pub counts: Vec<usize>,
    pub dead_count: usize,
    pub undefined_count: usize,
}

impl LayerHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.dead_count + self.undefined_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Palette {
    /// grey to red
    Color,
    /// grey to blue
    Class,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSpec {
    pub index_name: String,
    pub bin_edges: Vec<f64>,
    pub layers: Vec<LayerHistogram>,
    pub palette: Palette,
}

pub fn default_bin_edges() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
}

fn bin_of(edges: &[f64], v: f64) -> usize {
    let nbins = edges.len() - 1;
    edges[1..nbins].iter().take_while(|&&e| v >= e).count()
}

impl HistogramSpec {
    pub fn from_values(index_name: &str, bin_edges: Vec<f64>, palette: Palette, layers: &[(String, Vec<IndexValue>)]) -> Result<Self> {
        if bin_edges.len() < 2
            || bin_edges[0] != 0.0
            || *bin_edges.last().unwrap() != 1.0
            || bin_edges.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidArgument(
                "bin edges must increase strictly from 0 to 1".into(),
            ));
        }
        let mut out = Vec::with_capacity(layers.len());
        for (name, values) in layers {
            if values.is_empty() {
                return Err(Error::InvalidArgument(format!("layer `{name}` has no neurons")));
            }
            let mut h = LayerHistogram {
                layer: name.clone(),
                counts: vec![0; bin_edges.len() - 1],
                dead_count: 0,
                undefined_count: 0,
            };
            for v in values {
                match *v {
                    IndexValue::Value(x) if (-1e-9..=1.0 + 1e-9).contains(&x) => {
                        h.counts[bin_of(&bin_edges, x.clamp(0.0, 1.0))] += 1
                    }
                    IndexValue::Value(x) => {
                        return Err(Error::InvalidArgument(format!("index value {x} outside [0, 1]")))
                    }
                    IndexValue::Dead => h.dead_count += 1,
                    IndexValue::Undefined => h.undefined_count += 1,
                }
            }
            out.push(h);
        }
        Ok(HistogramSpec {
            index_name: index_name.to_string(),
            bin_edges,
            layers: out,
            palette,
        })
    }

    /// Fraction of each layer's neurons at or above `threshold`. The
    /// threshold must be a bin edge.
    pub fn share_at_least(&self, threshold: f64) -> Result<Vec<f64>> {
        let from = self
            .bin_edges
            .iter()
            .position(|&e| e == threshold)
            .ok_or_else(|| Error::InvalidArgument(format!("{threshold} is not a bin edge")))?;
        Ok(self
            .layers
            .iter()
            .map(|l| l.counts[from.min(l.counts.len())..].iter().sum::<usize>() as f64 / l.total() as f64)
            .collect())
    }

    /// CSV: layer, bin, lower, upper, count. Dead and undefined neurons get
    /// their own rows with empty bounds.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "bin", "lower", "upper", "count"])?;
        for l in &self.layers {
            for (i, c) in l.counts.iter().enumerate() {
                w.write_record([
                    l.layer.clone(),
                    i.to_string(),
                    self.bin_edges[i].to_string(),
                    self.bin_edges[i + 1].to_string(),
                    c.to_string(),
                ])?;
            }
            w.write_record([l.layer.as_str(), "dead", "", "", &l.dead_count.to_string()])?;
            w.write_record([l.layer.as_str(), "undefined", "", "", &l.undefined_count.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    fn band_color(&self, bin: usize) -> String {
        let nbins = self.bin_edges.len() - 1;
        let t = if nbins == 1 { 1.0 } else { bin as f64 / (nbins - 1) as f64 };
        let grey = [190.0, 190.0, 190.0];
        let hot = match self.palette {
            Palette::Color => [200.0, 30.0, 30.0],
            Palette::Class => [30.0, 70.0, 200.0],
        };
        let c: Vec<u8> = (0..3).map(|i| (grey[i] + (hot[i] - grey[i]) * t).round() as u8).collect();
        format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
    }

    /// Stacked bars, one per layer, segments = share of neurons per bin.
    pub fn to_svg(&self) -> String {
        let bar_w = 60.0;
        let gap = 30.0;
        let plot_h = 300.0;
        let left = 60.0;
        let top = 40.0;
        let width = left + self.layers.len() as f64 * (bar_w + gap) + gap + 120.0;
        let height = top + plot_h + 60.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{left:.1}" y="24" font-family="sans-serif" font-size="14">{} index through layers</text>"#,
            escape(&self.index_name)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{left:.1}" y1="{top:.1}" x2="{left:.1}" y2="{:.1}" stroke="black"/>"#,
            top + plot_h
        );
        for tick in 0..=4 {
            let y = top + plot_h - plot_h * tick as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{}%</text>"#,
                left - 6.0,
                y + 3.0,
                tick * 25
            );
        }
        for (li, l) in self.layers.iter().enumerate() {
            let x = left + gap + li as f64 * (bar_w + gap);
            let total = l.total() as f64;
            let mut y = top + plot_h;
            let mut segments: Vec<(usize, String, &str)> = vec![(l.dead_count, "#202020".into(), "dead")];
            if l.undefined_count > 0 {
                segments.push((l.undefined_count, "#ffffff".into(), "undefined"));
            }
            segments.extend(l.counts.iter().enumerate().map(|(b, &c)| (c, self.band_color(b), "bin")));
            for (count, color, kind) in segments {
                if count == 0 {
                    continue;
                }
                let h = plot_h * count as f64 / total;
                y -= h;
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.1}" y="{y:.3}" width="{bar_w:.1}" height="{h:.3}" fill="{color}" stroke="black" stroke-width="0.5"><title>{} {kind}: {count}</title></rect>"#,
                    escape(&l.layer)
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
                x + bar_w / 2.0,
                top + plot_h + 18.0,
                escape(&l.layer)
            );
        }
        let lx = left + self.layers.len() as f64 * (bar_w + gap) + gap + 10.0;
        for b in 0..self.bin_edges.len() - 1 {
            let y = top + b as f64 * 18.0;
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.1}" y="{y:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10">[{}, {}{}</text>"#,
                self.band_color(b),
                lx + 16.0,
                y + 10.0,
                self.bin_edges[b],
                self.bin_edges[b + 1],
                if b + 2 == self.bin_edges.len() { "]" } else { ")" }
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

pub fn emit_histogram(spec: &HistogramSpec, svg_path: &Path, csv_path: &Path) -> Result<()> {
    write_file(svg_path, spec.to_svg().as_bytes())?;
    write_file(csv_path, spec.to_csv()?.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[derive(Debug, Clone, PartialEq)]
pub struct HueWheelEntry {
    pub layer: String,
    pub neuron: usize,
    pub hue: f64,
    pub alpha: f64,
    /// NF image, relative to the SVG's directory unless absolute.
    pub thumbnail: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HueWheelSpec {
    /// Ring order, innermost first.
    pub rings: Vec<String>,
    pub alpha_threshold: f64,
    pub entries: Vec<HueWheelEntry>,
}

pub type WheelMark<'a> = (usize, &'a HueWheelEntry, (f64, f64));

pub const WHEEL_CENTER: f64 = 400.0;
const WHEEL_INNER: f64 = 90.0;
const WHEEL_STEP: f64 = 60.0;
const THUMB: f64 = 28.0;

impl HueWheelSpec {
    /// Keeps candidates at or above the threshold on a known ring.
    pub fn new(rings: Vec<String>, alpha_threshold: f64, candidates: Vec<HueWheelEntry>) -> Self {
        let entries = candidates
            .into_iter()
            .filter(|e| e.alpha >= alpha_threshold && rings.contains(&e.layer))
            .collect();
        HueWheelSpec {
            rings,
            alpha_threshold,
            entries,
        }
    }

    pub fn ring_radius(ring: usize) -> f64 {
        WHEEL_INNER + ring as f64 * WHEEL_STEP
    }

    /// Center of a mark: angle measured counter-clockwise from +x.
    pub fn position(ring: usize, hue_deg: f64) -> (f64, f64) {
        let r = Self::ring_radius(ring);
        let t = hue_deg.to_radians();
        (WHEEL_CENTER + r * t.cos(), WHEEL_CENTER - r * t.sin())
    }

    /// (ring, entry, center) per included neuron.
    pub fn marks(&self) -> Result<Vec<WheelMark<'_>>> {
        self.entries
            .iter()
            .map(|e| {
                let ring = self
                    .rings
                    .iter()
                    .position(|r| *r == e.layer)
                    .ok_or_else(|| Error::UnknownLayer(e.layer.clone()))?;
                Ok((ring, e, Self::position(ring, e.hue)))
            })
            .collect()
    }

    pub fn to_svg(&self) -> Result<String> {
        let size = 2.0 * WHEEL_CENTER;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" width="{size:.0}" height="{size:.0}" viewBox="0 0 {size:.0} {size:.0}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        // chroma reference band outside the last ring
        let band = Self::ring_radius(self.rings.len().max(1)) + 10.0;
        for step in 0..72 {
            let a0 = (step as f64 * 5.0).to_radians();
            let a1 = ((step + 1) as f64 * 5.0).to_radians();
            let mid = (step as f64 * 5.0 + 2.5).to_radians();
            let rgb = rgb_from_opp([0.5 * 3f64.sqrt(), 0.35 * mid.cos(), 0.35 * mid.sin()]);
            let hex: Vec<u8> = rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
            let (x0, y0) = (WHEEL_CENTER + band * a0.cos(), WHEEL_CENTER - band * a0.sin());
            let (x1, y1) = (WHEEL_CENTER + band * a1.cos(), WHEEL_CENTER - band * a1.sin());
            let _ = writeln!(
                s,
                r##"<path d="M {x0:.3} {y0:.3} A {band:.3} {band:.3} 0 0 0 {x1:.3} {y1:.3}" stroke="#{:02x}{:02x}{:02x}" stroke-width="12" fill="none"/>"##,
                hex[0], hex[1], hex[2]
            );
        }
        for (i, name) in self.rings.iter().enumerate() {
            let r = Self::ring_radius(i);
            let _ = writeln!(
                s,
                r#"<circle cx="{WHEEL_CENTER:.1}" cy="{WHEEL_CENTER:.1}" r="{r:.1}" fill="none" stroke="gray" stroke-dasharray="4 4"/>"#
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" fill="gray">{}</text>"#,
                WHEEL_CENTER + 3.0,
                WHEEL_CENTER - r - 3.0,
                escape(name)
            );
        }
        for (_, e, (x, y)) in self.marks()? {
            let _ = writeln!(
                s,
                r#"<image x="{:.3}" y="{:.3}" width="{THUMB:.1}" height="{THUMB:.1}" xlink:href="{}" href="{}"><title>{} #{} alpha={} hue={}</title></image>"#,
                x - THUMB / 2.0,
                y - THUMB / 2.0,
                escape(&e.thumbnail.to_string_lossy()),
                escape(&e.thumbnail.to_string_lossy()),
                escape(&e.layer),
                e.neuron,
                e.alpha,
                e.hue
            );
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

pub fn emit_hue_wheel(spec: &HueWheelSpec, svg_path: &Path) -> Result<()> {
    let base = svg_path.parent().unwrap_or(Path::new(""));
    for e in &spec.entries {
        let p = if e.thumbnail.is_absolute() { e.thumbnail.clone() } else { base.join(&e.thumbnail) };
        if !p.is_file() {
            return Err(Error::MissingThumbnail(p));
        }
    }
    write_file(svg_path, spec.to_svg()?.as_bytes())
}

/// Nearest-neighbour resampling to a `size` x `size` grid.
pub fn resample_nearest(g: &RgbGrid, size: usize) -> RgbGrid {
    RgbGrid::from_fn(size, size, |r, c| {
        let sr = (r * g.rows / size).min(g.rows - 1);
        let sc = (c * g.cols / size).min(g.cols - 1);
        g.get(sr, sc)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mosaic {
    pub image: RgbGrid,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub cell: usize,
    /// (neuron, grid row, grid col) per cell.
    pub labels: Vec<(usize, usize, usize)>,
}

pub const MOSAIC_GAP: usize = 2;

/// Lays out features on a near-square grid of equal cells. `cell` defaults
/// to the largest feature side.
pub fn nf_mosaic(features: &[(usize, &RgbGrid)], cell: Option<usize>) -> Result<Mosaic> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("empty mosaic selection".into()));
    }
    let cell = cell.unwrap_or_else(|| features.iter().map(|(_, g)| g.rows.max(g.cols)).max().unwrap_or(1));
    let n = features.len();
    let grid_cols = (n as f64).sqrt().ceil() as usize;
    let grid_rows = n.div_ceil(grid_cols);
    let rows = grid_rows * cell + (grid_rows - 1) * MOSAIC_GAP;
    let cols = grid_cols * cell + (grid_cols - 1) * MOSAIC_GAP;
    let mut image = RgbGrid::filled(rows, cols, [1.0; 3]);
    let mut labels = Vec::with_capacity(n);
    for (i, (neuron, g)) in features.iter().enumerate() {
        let (gr, gc) = (i / grid_cols, i % grid_cols);
        let scaled = resample_nearest(g, cell);
        let (y0, x0) = (gr * (cell + MOSAIC_GAP), gc * (cell + MOSAIC_GAP));
        for r in 0..cell {
            for c in 0..cell {
                image.set(y0 + r, x0 + c, scaled.get(r, c));
            }
        }
        labels.push((*neuron, gr, gc));
    }
    Ok(Mosaic {
        image,
        grid_rows,
        grid_cols,
        cell,
        labels,
    })
}

/// Writes `<layer>_mosaic.png` and `<layer>_mosaic.csv` (neuron, row, col).
pub fn emit_nf_mosaic(layer: &str, features: &[(usize, &RgbGrid)], cell: Option<usize>, dir: &Path) -> Result<Mosaic> {
    let mosaic = nf_mosaic(features, cell)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    mosaic.image.save_png(&dir.join(format!("{layer}_mosaic.png")))?;
    let mut csv = String::from("neuron,row,col\n");
    for (n, r, c) in &mosaic.labels {
        let _ = writeln!(csv, "{n},{r},{c}");
    }
    write_file(&dir.join(format!("{layer}_mosaic.csv")), csv.as_bytes())?;
    Ok(mosaic)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(layer_index: usize, neuron: usize, alpha: Option<f64>, gamma: Option<f64>) -> NeuronIndexRecord {
        NeuronIndexRecord {
            layer: format!("conv{}", layer_index + 1),
            layer_index,
            neuron,
            dead: alpha.is_none() && gamma.is_none(),
            alpha,
            hue: None,
            gamma,
            auc: None,
        }
    }

    #[test]
    fn gamma_ranking_puts_pure_neuron_first() {
        let rs = vec![rec(0, 0, Some(0.1), Some(0.3)), rec(0, 1, Some(0.2), Some(1.0)), rec(1, 0, Some(0.9), Some(0.5))];
        let rows = rank_records(&rs, SortKey::Gamma).unwrap();
        assert_eq!((rows[0].1.layer_index, rows[0].1.neuron), (0, 1));
    }

    #[test]
    fn ties_by_layer_then_neuron() {
        let rs = vec![rec(1, 0, Some(0.5), None), rec(0, 7, Some(0.5), None), rec(0, 3, Some(0.5), None)];
        let rows = rank_records(&rs, SortKey::Alpha).unwrap();
        let order: Vec<(usize, usize)> = rows.iter().map(|(_, r)| (r.layer_index, r.neuron)).collect();
        assert_eq!(order, vec![(0, 3), (0, 7), (1, 0)]);
    }

    #[test]
    fn joint_is_min() {
        let r = rec(0, 0, Some(0.9), Some(0.2));
        assert_eq!(SortKey::Joint.value(&r), Some(0.2));
        assert_eq!(SortKey::Joint.value(&rec(0, 0, Some(0.9), None)), None);
    }

    #[test]
    fn missing_key_errors() {
        let rs = vec![rec(0, 0, Some(0.9), Some(0.2))];
        assert!(matches!(rank_table(&rs, SortKey::Auc), Err(Error::MissingKey(_))));
        assert!("joint".parse::<SortKey>().is_ok());
        assert!("beta".parse::<SortKey>().is_err());
    }

    #[test]
    fn rank_table_dead_rows_dropped() {
        let rs = vec![rec(0, 0, None, None), rec(0, 1, Some(0.25), Some(0.5))];
        let csv = rank_table(&rs, SortKey::Alpha).unwrap();
        assert_eq!(csv, "rank,layer,neuron,score,alpha,hue,gamma,auc\n1,conv1,1,0.25,0.25,,0.5,\n");
    }

    #[test]
    fn histogram_single_bin_and_conservation() {
        let vals = vec![IndexValue::Value(0.0); 7];
        let h = HistogramSpec::from_values("color", default_bin_edges(), Palette::Color, &[("conv1".into(), vals)]).unwrap();
        assert_eq!(h.layers[0].counts, vec![7, 0, 0, 0, 0]);

        let vals = vec![
            IndexValue::Value(1.0),
            IndexValue::Value(0.4),
            IndexValue::Value(0.39999),
            IndexValue::Dead,
            IndexValue::Undefined,
        ];
        let h = HistogramSpec::from_values("class", default_bin_edges(), Palette::Class, &[("conv5".into(), vals)]).unwrap();
        assert_eq!(h.layers[0].counts, vec![0, 1, 1, 0, 1]);
        assert_eq!(h.layers[0].total(), 5);
        assert_eq!(h.share_at_least(0.4).unwrap(), vec![0.4]);
    }

    #[test]
    fn histogram_rejects_empty_layer_and_bad_edges() {
        assert!(HistogramSpec::from_values("x", default_bin_edges(), Palette::Color, &[("conv1".into(), vec![])]).is_err());
        assert!(HistogramSpec::from_values("x", vec![0.0, 0.5, 0.5, 1.0], Palette::Color, &[]).is_err());
        assert!(HistogramSpec::from_values("x", vec![0.1, 1.0], Palette::Color, &[]).is_err());
    }

    #[test]
    fn histogram_svg_is_deterministic() {
        let vals = vec![IndexValue::Value(0.1), IndexValue::Value(0.95), IndexValue::Dead];
        let h = HistogramSpec::from_values("color", default_bin_edges(), Palette::Color, &[("conv1".into(), vals)]).unwrap();
        let a = h.to_svg();
        assert_eq!(a, h.clone().to_svg());
        assert!(a.starts_with("<svg"));
        assert_eq!(a.matches("</title></rect>").count(), 3);
    }

    fn entry(layer: &str, hue: f64, alpha: f64) -> HueWheelEntry {
        HueWheelEntry {
            layer: layer.into(),
            neuron: 0,
            hue,
            alpha,
            thumbnail: "t.png".into(),
        }
    }

    #[test]
    fn hue_wheel_layout() {
        let rings = vec!["conv1".to_string(), "conv2".to_string()];
        let spec = HueWheelSpec::new(
            rings,
            0.4,
            vec![entry("conv1", 0.0, 0.9), entry("conv2", 0.0, 0.5), entry("conv2", 90.0, 0.1)],
        );
        assert_eq!(spec.entries.len(), 2);
        let marks = spec.marks().unwrap();
        let (x0, y0) = marks[0].2;
        assert!((x0 - (WHEEL_CENTER + HueWheelSpec::ring_radius(0))).abs() < 1e-9);
        assert!((y0 - WHEEL_CENTER).abs() < 1e-9);
        let (x1, y1) = marks[1].2;
        assert!(y1 == y0 && x1 > x0);
        let (_, y90) = HueWheelSpec::position(0, 90.0);
        assert!(y90 < WHEEL_CENTER);
    }

    #[test]
    fn hue_wheel_missing_thumbnail() {
        let dir = tempfile::tempdir().unwrap();
        let spec = HueWheelSpec::new(vec!["conv1".into()], 0.4, vec![entry("conv1", 10.0, 0.9)]);
        assert!(matches!(
            emit_hue_wheel(&spec, &dir.path().join("wheel.svg")),
            Err(Error::MissingThumbnail(_))
        ));
        RgbGrid::filled(2, 2, [0.5; 3]).save_png(&dir.path().join("t.png")).unwrap();
        emit_hue_wheel(&spec, &dir.path().join("wheel.svg")).unwrap();
    }

    #[test]
    fn mosaic_layout() {
        let g = RgbGrid::filled(3, 3, [0.2; 3]);
        let feats: Vec<(usize, &RgbGrid)> = (0..20).map(|i| (i, &g)).collect();
        let m = nf_mosaic(&feats, None).unwrap();
        assert_eq!((m.grid_rows, m.grid_cols), (4, 5));
        assert_eq!(m.labels[7], (7, 1, 2));
        assert!(nf_mosaic(&[], None).is_err());
    }

    #[test]
    fn single_cell_mosaic_is_the_feature() {
        let g = RgbGrid::from_fn(4, 4, |r, c| [r as f64 / 4.0, c as f64 / 4.0, 0.0]);
        let m = nf_mosaic(&[(3, &g)], None).unwrap();
        assert_eq!(m.image, g);
        let m = nf_mosaic(&[(3, &g)], Some(8)).unwrap();
        assert_eq!(m.image.get(7, 7), g.get(3, 3));
        assert_eq!(m.image.get(1, 2), g.get(0, 1));
    }
}
