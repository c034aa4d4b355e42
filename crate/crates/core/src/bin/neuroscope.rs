use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use neuroscope::analysis::{analyze_table, configure_threads, manifest_architecture, AnalysisConfig, ImageCache, LayerAnalysis};
use neuroscope::classsel::{rollup_ontology, write_class_csv, write_tag_cloud, ClassRecord, OntologyMap};
use neuroscope::colorsel::{write_color_csv, ColorRecord};
use neuroscope::fixture::{generate_synthetic_fixture, FixtureSpec};
use neuroscope::geometry::{ArchitectureSpec, PadPolicy};
use neuroscope::manifest::{load_activations, read_manifest, validate_dataset, ActivationTable, DatasetManifest};
use neuroscope::nf::{export_nf, MaskHandling, NfNormalization};
use neuroscope::ranking::{activation_curves, rank_layer, write_rankings_csv, ActivationCurve, RankingParams, DEFAULT_CURVE_LEN};
use neuroscope::report::{
    default_bin_edges, emit_histogram, emit_hue_wheel, emit_nf_mosaic, rank_table, HistogramSpec, HueWheelEntry, HueWheelSpec, Palette,
    SortKey,
};
use neuroscope::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "neuroscope", version, about = "Neuron feature and selectivity indexes for convolutional networks")]
struct Cli {
    /// Dataset directory or manifest.nsx file.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Architecture description; defaults to the manifest's, then VGG-M.
    #[arg(long, global = true)]
    arch: Option<PathBuf>,
    /// Comma-separated layer names (default: all).
    #[arg(long, global = true, value_delimiter = ',')]
    layers: Vec<String>,
    #[arg(long, global = true, default_value_t = neuroscope::ranking::DEFAULT_N_MAX)]
    n_max: usize,
    #[arg(long, global = true, default_value_t = neuroscope::ranking::DEFAULT_MIN_RATIO)]
    min_ratio: f64,
    #[arg(long, global = true, default_value_t = 0.0)]
    dead_epsilon: f64,
    /// Cumulative class-frequency threshold.
    #[arg(long, global = true, default_value_t = neuroscope::classsel::DEFAULT_TH)]
    th: f64,
    #[arg(long, global = true, default_value_t = neuroscope::colorsel::DEFAULT_ALPHA_THRESHOLD)]
    alpha_threshold: f64,
    /// Activation-curve length.
    #[arg(long, global = true, default_value_t = DEFAULT_CURVE_LEN)]
    k: usize,
    #[arg(long, global = true, value_enum, default_value_t = Normalization::Literal)]
    normalization: Normalization,
    /// Count out-of-image pixels as zeros instead of skipping them.
    #[arg(long, global = true)]
    include_masked: bool,
    #[arg(long, global = true, value_enum, default_value_t = Pad::Zero)]
    pad: Pad,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Normalization {
    Literal,
    WeightSum,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Pad {
    Zero,
    Clamp,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a dataset: header, payloads, images.
    Validate,
    /// Generate a synthetic dataset with planted selectivities.
    Fixture {
        /// TOML fixture description (default: the built-in three-layer set).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Receptive-field geometry per layer.
    Rf,
    /// Top-ranked images per neuron.
    Rank,
    /// Activation-curve areas.
    Auc,
    /// Neuron feature images and per-layer mosaics.
    Nf {
        /// Mosaic cell side in pixels (default: largest NF).
        #[arg(long)]
        cell: Option<usize>,
    },
    /// Color selectivity per neuron.
    ColorIndex,
    /// Class selectivity per neuron.
    ClassIndex,
    /// Histograms, hue wheel, ranked tables, mosaics and tag clouds.
    Report,
}

impl Cli {
    fn config(&self) -> AnalysisConfig {
        let mut cfg = AnalysisConfig {
            ranking: RankingParams {
                n_max: self.n_max,
                min_ratio: self.min_ratio,
                dead_epsilon: self.dead_epsilon,
            },
            th: self.th,
            alpha_threshold: self.alpha_threshold,
            pad: match self.pad {
                Pad::Zero => PadPolicy::Zero,
                Pad::Clamp => PadPolicy::Clamp,
            },
            ..AnalysisConfig::default()
        };
        cfg.nf.normalization = match self.normalization {
            Normalization::Literal => NfNormalization::Literal,
            Normalization::WeightSum => NfNormalization::WeightSum,
        };
        if self.include_masked {
            cfg.nf.masked = MaskHandling::Include;
        }
        cfg
    }

    fn manifest(&self) -> Result<DatasetManifest> {
        let path = self
            .manifest
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--manifest is required".into()))?;
        read_manifest(path)
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--out-dir is required".into()))
    }

    fn architecture(&self, manifest: Option<&DatasetManifest>) -> Result<ArchitectureSpec> {
        if let Some(p) = &self.arch {
            return ArchitectureSpec::from_file(p);
        }
        if let Some(m) = manifest {
            if let Some(a) = manifest_architecture(m)? {
                return Ok(a);
            }
        }
        Ok(ArchitectureSpec::vgg_m())
    }

    fn layer_names(&self, manifest: &DatasetManifest) -> Result<Vec<String>> {
        if self.layers.is_empty() {
            return Ok(manifest.layers.iter().map(|l| l.name.clone()).collect());
        }
        for l in &self.layers {
            manifest.layer(l)?;
        }
        Ok(self.layers.clone())
    }

    fn tables(&self, manifest: &DatasetManifest) -> Result<Vec<ActivationTable>> {
        self.layer_names(manifest)?
            .iter()
            .map(|l| load_activations(manifest, l))
            .collect()
    }

    /// Writes to `<out-dir>/<name>` when an output directory was given,
    /// otherwise to stdout.
    fn emit(&self, name: &str, bytes: &[u8]) -> Result<()> {
        match &self.out_dir {
            Some(dir) => write_file(&dir.join(name), bytes),
            None => std::io::stdout().write_all(bytes).map_err(|e| Error::io("<stdout>", e)),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn file_stem(layer: &str) -> String {
    layer.replace(['/', '\\'], "_")
}

struct Analysed {
    manifest: DatasetManifest,
    tables: Vec<ActivationTable>,
    layers: Vec<LayerAnalysis>,
}

fn analyse(cli: &Cli) -> Result<Analysed> {
    let cfg = cli.config();
    cfg.ranking.validate()?;
    let manifest = cli.manifest()?;
    let arch = cli.architecture(Some(&manifest))?;
    let tables = cli.tables(&manifest)?;
    let mut cache = ImageCache::new();
    let layers = tables
        .iter()
        .map(|t| {
            let index = manifest.layers.iter().position(|l| l.name == t.layer).unwrap_or(0);
            analyze_table(&manifest, &arch, t, index, &cfg, &mut cache)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Analysed { manifest, tables, layers })
}

fn cmd_validate(cli: &Cli) -> Result<()> {
    let m = cli.manifest()?;
    let problems = validate_dataset(&m);
    if problems.is_empty() {
        println!("ok: {} layers, {} images, {} classes", m.layers.len(), m.image_count(), m.class_names.len());
        Ok(())
    } else {
        for p in &problems {
            eprintln!("{p}");
        }
        Err(Error::Validation(format!("{} problem(s) found", problems.len())))
    }
}

fn cmd_fixture(cli: &Cli, spec: Option<&Path>) -> Result<()> {
    let spec = match spec {
        Some(p) => FixtureSpec::from_toml(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => FixtureSpec::standard(),
    };
    let out = cli.out_dir()?;
    let m = generate_synthetic_fixture(&spec, cli.seed, out)?;
    println!("wrote {} images and {} layers to {}", m.image_count(), m.layers.len(), out.display());
    Ok(())
}

fn cmd_rf(cli: &Cli) -> Result<()> {
    let manifest = cli.manifest.as_ref().map(|p| read_manifest(p)).transpose()?;
    let arch = cli.architecture(manifest.as_ref())?;
    let layers = if cli.layers.is_empty() { arch.conv_layer_names() } else { cli.layers.clone() };
    let mut s = String::from("layer,size,jump,start,offset,rows,cols\n");
    for l in &layers {
        let rf = arch.receptive_field(l)?;
        let (r, c) = arch.output_dims(l)?;
        s.push_str(&format!("{l},{},{},{},{},{r},{c}\n", rf.size, rf.jump, rf.start, rf.offset));
    }
    cli.emit("rf.csv", s.as_bytes())
}

fn cmd_rank(cli: &Cli) -> Result<()> {
    let params = cli.config().ranking;
    let manifest = cli.manifest()?;
    let mut rankings = Vec::new();
    for t in cli.tables(&manifest)? {
        rankings.extend(rank_layer(&t, &params)?.into_iter().filter_map(|o| o.ranking().cloned()));
    }
    let mut buf = Vec::new();
    write_rankings_csv(&mut buf, &rankings)?;
    cli.emit("rankings.csv", &buf)
}

fn curves_csv(tables: &[ActivationTable], curves: &[Vec<Option<ActivationCurve>>]) -> String {
    let mut s = String::from("layer,neuron,auc,auc_fraction,dead\n");
    for (t, layer) in tables.iter().zip(curves) {
        for (n, c) in layer.iter().enumerate() {
            match c {
                Some(c) => s.push_str(&format!("{},{n},{},{},false\n", t.layer, c.auc, c.auc_fraction)),
                None => s.push_str(&format!("{},{n},,,true\n", t.layer)),
            }
        }
    }
    s
}

fn cmd_auc(cli: &Cli) -> Result<()> {
    let manifest = cli.manifest()?;
    let tables = cli.tables(&manifest)?;
    let refs: Vec<&ActivationTable> = tables.iter().collect();
    let curves = activation_curves(&refs, cli.k, cli.dead_epsilon)?;
    cli.emit("auc.csv", curves_csv(&tables, &curves).as_bytes())
}

fn export_features(layers: &[LayerAnalysis], out: &Path, cell: Option<usize>) -> Result<()> {
    for la in layers {
        let stem = file_stem(&la.layer);
        let dir = out.join("nf").join(&stem);
        for n in &la.neurons {
            if let Some(nf) = &n.nf {
                export_nf(nf, &dir, &format!("{:04}", n.neuron))?;
            }
        }
        let features: Vec<(usize, &_)> = la
            .neurons
            .iter()
            .filter_map(|n| n.nf.as_ref().map(|f| (n.neuron, &f.pixels)))
            .collect();
        if !features.is_empty() {
            emit_nf_mosaic(&stem, &features, cell, &out.join("mosaics"))?;
        }
    }
    Ok(())
}

fn cmd_nf(cli: &Cli, cell: Option<usize>) -> Result<()> {
    let out = cli.out_dir()?.to_path_buf();
    let a = analyse(cli)?;
    export_features(&a.layers, &out, cell)
}

fn color_records(layers: &[LayerAnalysis]) -> Vec<ColorRecord> {
    layers
        .iter()
        .flat_map(|la| {
            la.neurons.iter().map(|n| ColorRecord {
                layer: la.layer.clone(),
                neuron: n.neuron,
                selectivity: n.color,
            })
        })
        .collect()
}

fn class_records(layers: &[LayerAnalysis]) -> Vec<ClassRecord> {
    layers
        .iter()
        .flat_map(|la| {
            la.neurons.iter().map(|n| ClassRecord {
                layer: la.layer.clone(),
                neuron: n.neuron,
                selectivity: n.class.clone(),
                dead: n.is_dead(),
            })
        })
        .collect()
}

fn cmd_color(cli: &Cli) -> Result<()> {
    let a = analyse(cli)?;
    let mut buf = Vec::new();
    write_color_csv(&mut buf, &color_records(&a.layers))?;
    cli.emit("color_index.csv", &buf)
}

fn cmd_class(cli: &Cli) -> Result<()> {
    let a = analyse(cli)?;
    let mut buf = Vec::new();
    write_class_csv(&mut buf, &class_records(&a.layers), &a.manifest.class_names)?;
    cli.emit("class_index.csv", &buf)
}

fn cmd_report(cli: &Cli) -> Result<()> {
    let out = cli.out_dir()?.to_path_buf();
    let a = analyse(cli)?;
    let m = &a.manifest;

    let refs: Vec<&ActivationTable> = a.tables.iter().collect();
    let k = cli.k.min(m.image_count());
    let curves = activation_curves(&refs, k, cli.dead_epsilon)?;
    write_file(&out.join("auc.csv"), curves_csv(&a.tables, &curves).as_bytes())?;

    let mut buf = Vec::new();
    write_color_csv(&mut buf, &color_records(&a.layers))?;
    write_file(&out.join("color_index.csv"), &buf)?;
    let mut buf = Vec::new();
    write_class_csv(&mut buf, &class_records(&a.layers), &m.class_names)?;
    write_file(&out.join("class_index.csv"), &buf)?;

    for (name, palette, values) in [
        ("color", Palette::Color, a.layers.iter().map(|l| (l.layer.clone(), l.alpha_values())).collect::<Vec<_>>()),
        ("class", Palette::Class, a.layers.iter().map(|l| (l.layer.clone(), l.gamma_values())).collect()),
    ] {
        let spec = HistogramSpec::from_values(name, default_bin_edges(), palette, &values)?;
        emit_histogram(
            &spec,
            &out.join(format!("{name}_histogram.svg")),
            &out.join(format!("{name}_histogram.csv")),
        )?;
    }

    let records: Vec<_> = a
        .layers
        .iter()
        .zip(&curves)
        .flat_map(|(la, c)| la.records(Some(c)))
        .collect();
    for key in [SortKey::Alpha, SortKey::Gamma, SortKey::Auc, SortKey::Joint] {
        match rank_table(&records, key) {
            Ok(t) => write_file(&out.join(format!("rank_{}.csv", key.name())), t.as_bytes())?,
            Err(Error::MissingKey(k)) => eprintln!("skipping rank_{k}.csv: no neuron has this index"),
            Err(e) => return Err(e),
        }
    }

    export_features(&a.layers, &out, None)?;
    let candidates = a
        .layers
        .iter()
        .flat_map(|la| {
            la.neurons.iter().filter_map(move |n| {
                let c = n.color?;
                Some(HueWheelEntry {
                    layer: la.layer.clone(),
                    neuron: n.neuron,
                    hue: c.hue.degrees?,
                    alpha: c.alpha,
                    thumbnail: Path::new("nf").join(file_stem(&la.layer)).join(format!("{:04}.png", n.neuron)),
                })
            })
        })
        .collect();
    let rings = a.layers.iter().map(|l| l.layer.clone()).collect();
    emit_hue_wheel(&HueWheelSpec::new(rings, cli.alpha_threshold, candidates), &out.join("hue_wheel.svg"))?;

    if let Some(p) = &m.ontology_path {
        let onto = OntologyMap::from_file(&m.resolve(p))?;
        for la in &a.layers {
            let mut buf = Vec::new();
            for n in &la.neurons {
                let Some(dist) = &n.class_distribution else { continue };
                let leaf: Vec<(String, f64)> = dist
                    .sorted()
                    .into_iter()
                    .map(|(c, f)| (m.class_names[c].clone(), f))
                    .collect();
                let generic = rollup_ontology(dist, &onto, &m.class_names)?;
                write_tag_cloud(&mut buf, &la.layer, n.neuron, &leaf, &generic)?;
            }
            write_file(&out.join("tags").join(format!("{}.txt", file_stem(&la.layer))), &buf)?;
        }
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Validate => cmd_validate(cli),
        Command::Fixture { spec } => cmd_fixture(cli, spec.as_deref()),
        Command::Rf => cmd_rf(cli),
        Command::Rank => cmd_rank(cli),
        Command::Auc => cmd_auc(cli),
        Command::Nf { cell } => cmd_nf(cli, *cell),
        Command::ColorIndex => cmd_color(cli),
        Command::ClassIndex => cmd_class(cli),
        Command::Report => cmd_report(cli),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
