//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use neuroscope::analysis::{analyze_layer, manifest_architecture, AnalysisConfig, ImageCache, LayerAnalysis};
use neuroscope::classsel::{class_selectivity_index, gamma, ClassDistribution};
use neuroscope::colorsel::{color_selectivity_index, weighted_pca_axis, OppPixelCloud, Vec3};
use neuroscope::fixture::{generate_synthetic_fixture, FixtureSpec};
use neuroscope::geometry::{ArchitectureSpec, CroppedImage};
use neuroscope::manifest::{read_manifest, ActivationTable, DatasetManifest};
use neuroscope::nf::{compute_nf, NfNormalization, NfOptions};
use neuroscope::ranking::{rank_neuron, RankOutcome, RankingParams};
use neuroscope::raster::RgbGrid;
use neuroscope::report::{default_bin_edges, HistogramSpec, IndexValue, Palette};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

fn receptive_field_sizes() -> Outcome {
    let t0 = Instant::now();
    let arch = ArchitectureSpec::vgg_m();
    let sizes: Vec<usize> = ["conv1", "conv2", "conv3", "conv4", "conv5"]
        .iter()
        .map(|l| arch.receptive_field(l).map(|rf| rf.size))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    ensure!(sizes == [7, 27, 75, 107, 139], "sizes {sizes:?}");
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{sizes:?} in {elapsed:?}"))
}

/// Input indices reachable from one output index, by enumerating every tap.
fn dependency_set(ops: &[(usize, usize, usize)], pos: i64) -> BTreeSet<i64> {
    let mut set = BTreeSet::from([pos]);
    for &(k, s, p) in ops.iter().rev() {
        set = set
            .iter()
            .flat_map(|&o| (0..k as i64).map(move |t| o * s as i64 - p as i64 + t))
            .collect();
    }
    set
}

fn geometry_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e6f);
    let mut checked = 0;
    for case in 0..200 {
        let depth = rng.random_range(1..=6);
        let mut text = String::from("input 4096 4096\n");
        let mut ops = Vec::new();
        let mut named = Vec::new();
        for i in 0..depth {
            let k = rng.random_range(1..=7);
            let s = rng.random_range(1..=3);
            let p = rng.random_range(0..=3);
            ops.push((k, s, p));
            if rng.random_bool(0.6) || i == depth - 1 {
                text.push_str(&format!("conv l{i} k={k} s={s} p={p}\n"));
                named.push((format!("l{i}"), ops.len()));
            } else {
                text.push_str(&format!("pool k={k} s={s} p={p}\n"));
            }
        }
        let arch: ArchitectureSpec = text.parse().map_err(|e| format!("case {case}: {e}"))?;
        for (name, upto) in named {
            let rf = arch.receptive_field(&name).map_err(|e| e.to_string())?;
            let d0 = dependency_set(&ops[..upto], 0);
            let d1 = dependency_set(&ops[..upto], 1);
            let (lo, hi) = (*d0.first().unwrap(), *d0.last().unwrap());
            let size = (hi - lo + 1) as usize;
            let jump = (d1.first().unwrap() - lo) as usize;
            ensure!(
                rf.size == size && rf.jump == jump && rf.start == lo,
                "case {case} {name}: got ({}, {}, {}), oracle ({size}, {jump}, {lo})\n{text}",
                rf.size,
                rf.jump,
                rf.start
            );
            checked += 1;
        }
    }
    Ok(format!("200 architectures, {checked} layers"))
}

fn random_cloud(rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let n = rng.random_range(10..=500);
    let scales = [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)];
    let rot = nalgebra::Rotation3::from_euler_angles(
        rng.random_range(0.0..6.3),
        rng.random_range(0.0..6.3),
        rng.random_range(0.0..6.3),
    );
    let offset = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    (0..n)
        .map(|_| {
            let v = Vector3::new(
                scales[0] * rng.random_range(-1.0..1.0),
                scales[1] * rng.random_range(-1.0..1.0),
                scales[2] * rng.random_range(-1.0..1.0),
            );
            let p = rot * v + offset;
            [p.x, p.y, p.z]
        })
        .collect()
}

fn dense_weighted_axis(points: &[Vec3], weights: &[f64]) -> Vector3<f64> {
    let total: f64 = weights.iter().sum();
    let mean = points
        .iter()
        .zip(weights)
        .fold(Vector3::zeros(), |acc, (p, w)| acc + Vector3::from(*p) * *w)
        / total;
    let cov = points.iter().zip(weights).fold(Matrix3::zeros(), |acc, (p, w)| {
        let d = Vector3::from(*p) - mean;
        acc + d * d.transpose() * *w
    }) / total;
    let eig = SymmetricEigen::new(cov);
    eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned()
}

fn svd_axis(points: &[Vec3]) -> Vector3<f64> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / n;
    let data = DMatrix::from_fn(points.len(), 3, |r, c| points[r][c] - mean[c]);
    let svd = data.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let i = svd.singular_values.imax();
    Vector3::new(v_t[(i, 0)], v_t[(i, 1)], v_t[(i, 2)])
}

fn alignment(axis: Vec3, oracle: &Vector3<f64>) -> f64 {
    (Vector3::from(axis).dot(oracle) / oracle.norm()).abs()
}

fn weighted_pca_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9ca);
    let mut worst_weighted = 1.0f64;
    let mut worst_uniform = 1.0f64;
    for case in 0..1000 {
        let points = random_cloud(&mut rng);
        let weights: Vec<f64> = (0..points.len()).map(|_| rng.random_range(0.01..10.0)).collect();
        let ours = weighted_pca_axis(&OppPixelCloud::new(points.clone(), weights.clone()).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let cos = alignment(ours.axis, &dense_weighted_axis(&points, &weights));
        worst_weighted = worst_weighted.min(cos);
        ensure!(cos >= 1.0 - 1e-6, "case {case}: weighted |cos| {cos}");

        let uniform = weighted_pca_axis(&OppPixelCloud::uniform(points.clone())).map_err(|e| e.to_string())?;
        let cos = alignment(uniform.axis, &svd_axis(&points));
        worst_uniform = worst_uniform.min(cos);
        ensure!(cos >= 1.0 - 1e-9, "case {case}: uniform |cos| {cos}");
    }
    Ok(format!(
        "1000 clouds, worst 1-|cos| weighted {:.1e}, uniform {:.1e}",
        1.0 - worst_weighted,
        1.0 - worst_uniform
    ))
}

fn alpha_analytic_points() -> Outcome {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let cases = [
        ([1.0, 0.0, 0.0], 0.0),
        ([0.0, 1.0, 0.0], 1.0),
        ([0.0, 0.0, 1.0], 1.0),
        ([0.0, s, s], 1.0),
        ([s, s, 0.0], 0.5),
    ];
    for (axis, want) in cases {
        let got = color_selectivity_index(axis);
        ensure!((got - want).abs() <= 1e-9, "alpha({axis:?}) = {got}, want {want}");
    }
    Ok("intensity 0, chroma 1, (1,1,0)/sqrt2 0.5".into())
}

fn min_cover_oracle(freqs: &[f64], th: f64) -> usize {
    let k = freqs.len();
    (1..(1usize << k))
        .filter(|mask| {
            let sum: f64 = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| freqs[i]).sum();
            sum >= th - 1e-12
        })
        .map(|mask: usize| mask.count_ones() as usize)
        .min()
        .unwrap_or(k)
}

fn gamma_points() -> Outcome {
    ensure!(gamma(100, 1) == 1.0, "gamma(100, 1) = {}", gamma(100, 1));
    ensure!(gamma(100, 100) == 0.0, "gamma(100, 100) = {}", gamma(100, 100));
    for m in 1..=100 {
        ensure!((gamma(100, m) >= 0.6) == (m <= 40), "M = {m}: gamma {}", gamma(100, m));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a);
    for case in 0..500 {
        let k = rng.random_range(1..=12);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.001..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let freqs: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let th = if rng.random_bool(0.2) { 1.0 } else { rng.random_range(0.05..1.0) };
        let dist = ClassDistribution {
            layer: "l".into(),
            neuron: case,
            freqs: freqs.iter().copied().enumerate().collect::<BTreeMap<_, _>>(),
            n: k + rng.random_range(1..50),
        };
        let got = class_selectivity_index(&dist, th).map_err(|e| e.to_string())?;
        let want = min_cover_oracle(&freqs, th);
        ensure!(got.m == want, "case {case}: M {} vs oracle {want} (th {th}, f {freqs:?})", got.m);
    }
    Ok("extremes, M <= 40 <=> gamma >= 0.6, 500 random covers".into())
}

fn nf_mean_oracle(layers: &[LayerAnalysis]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..40);
        let side = rng.random_range(1..12);
        let crops: Vec<CroppedImage> = (0..n)
            .map(|_| {
                let mut g = RgbGrid::new(side, side);
                g.data.iter_mut().for_each(|v| *v = rng.random());
                CroppedImage::unmasked(g)
            })
            .collect();
        let ones = vec![1.0; n];
        for (norm, n_max) in [(NfNormalization::Literal, n), (NfNormalization::WeightSum, n + 7)] {
            let opts = NfOptions {
                normalization: norm,
                ..NfOptions::default()
            };
            let nf = compute_nf(&crops, &ones, n_max, opts).map_err(|e| e.to_string())?;
            for i in 0..nf.pixels.data.len() {
                let mean = crops.iter().map(|c| c.pixels.data[i]).sum::<f64>() / n as f64;
                worst = worst.max((nf.pixels.data[i] - mean).abs());
            }
        }
    }
    ensure!(worst <= 1e-9, "max deviation from mean {worst}");
    let mut checked = 0;
    for l in layers {
        for n in &l.neurons {
            if let Some(nf) = &n.nf {
                ensure!(
                    nf.pixels.data.iter().all(|v| (0.0..=1.0).contains(v)),
                    "{} #{}: NF pixel outside [0, 1]",
                    l.layer,
                    n.neuron
                );
                checked += 1;
            }
        }
    }
    Ok(format!("max deviation {worst:.1e}; bounds hold on {checked} fixture NFs"))
}

struct Fixture {
    spec: FixtureSpec,
    manifest: DatasetManifest,
    layers: Vec<LayerAnalysis>,
    elapsed: Duration,
}

fn build_fixture(dir: &Path) -> Fixture {
    let t0 = Instant::now();
    let spec = FixtureSpec::standard();
    generate_synthetic_fixture(&spec, 2016, dir).expect("fixture");
    let manifest = read_manifest(dir).expect("manifest");
    let arch = manifest_architecture(&manifest).expect("arch").expect("arch path");
    let mut cache = ImageCache::new();
    let layers = manifest
        .layers
        .iter()
        .map(|l| analyze_layer(&manifest, &arch, &l.name, &AnalysisConfig::default(), &mut cache).expect("layer"))
        .collect();
    Fixture {
        spec,
        manifest,
        layers,
        elapsed: t0.elapsed(),
    }
}

fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn planted_recovery(fx: &Fixture) -> Outcome {
    ensure!(fx.elapsed < Duration::from_secs(30), "took {:?}", fx.elapsed);
    ensure!(
        fx.layers.len() == 3 && fx.layers.iter().all(|l| l.neurons.len() == 32) && fx.manifest.image_count() == 500,
        "fixture shape"
    );
    let (mut colors, mut pure, mut uniform, mut worst_hue) = (0, 0, 0, 0.0f64);
    for l in &fx.layers {
        for n in &l.neurons {
            let planted = fx.spec.planted_for(&l.layer, n.neuron);
            if planted.is_some_and(|p| p.dead) {
                ensure!(n.is_dead(), "{} #{} should be dead", l.layer, n.neuron);
                continue;
            }
            let stim = planted.and_then(|p| p.stimulus.as_deref()).and_then(|s| fx.spec.stimulus(s));
            let color = n.color.ok_or(format!("{} #{} has no color index", l.layer, n.neuron))?;
            match stim.and_then(|s| s.hue) {
                Some(h) => {
                    ensure!(color.alpha >= 0.40, "{} #{} planted color, alpha {}", l.layer, n.neuron, color.alpha);
                    let got = color.hue.degrees.ok_or("hue undefined")?;
                    let err = hue_distance(got, h);
                    ensure!(err <= 5.0, "{} #{} hue {got} vs {h}", l.layer, n.neuron);
                    worst_hue = worst_hue.max(err);
                    colors += 1;
                }
                None => ensure!(color.alpha < 0.40, "{} #{} unplanted, alpha {}", l.layer, n.neuron, color.alpha),
            }
            let class = n.class.as_ref().ok_or("class index undefined")?;
            match stim {
                Some(s) if s.class.is_some() && s.purity == 1.0 => {
                    ensure!(class.gamma == 1.0, "{} #{} planted class, gamma {}", l.layer, n.neuron, class.gamma);
                    pure += 1;
                }
                None => {
                    ensure!(class.gamma < 0.1, "{} #{} uniform, gamma {}", l.layer, n.neuron, class.gamma);
                    uniform += 1;
                }
                _ => {}
            }
        }
    }
    Ok(format!(
        "{colors} color (worst hue error {worst_hue:.2} deg), {pure} class-pure, {uniform} uniform; {:.2?}",
        fx.elapsed
    ))
}

fn filter_then_sort(row: &[f32], n_max: usize, min_ratio: f64) -> Vec<(usize, f64)> {
    let a_max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    if a_max <= 0.0 {
        return vec![];
    }
    let mut kept: Vec<(usize, f64)> = row
        .iter()
        .enumerate()
        .map(|(i, &a)| (i, a as f64))
        .filter(|&(_, a)| a / a_max >= min_ratio && a > 0.0)
        .collect();
    kept.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    kept.truncate(n_max);
    kept.into_iter().map(|(i, a)| (i, a / a_max)).collect()
}

fn ranked(t: &ActivationTable, neuron: usize, params: &RankingParams) -> Result<Vec<(usize, f64)>, String> {
    Ok(match rank_neuron(t, neuron, params).map_err(|e| e.to_string())? {
        RankOutcome::Ranked(r) => r.entries.iter().map(|e| (e.image_id, e.weight)).collect(),
        RankOutcome::Dead { .. } => vec![],
    })
}

fn ranking_protocol() -> Outcome {
    let params = RankingParams::default();
    ensure!(params.n_max == 100 && params.min_ratio == 0.70, "defaults {params:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(0x70);
    let mut selected = 0;
    for case in 0..100 {
        let neurons = rng.random_range(1..6);
        let images = rng.random_range(1..1500);
        let quantized = rng.random_bool(0.3);
        let values: Vec<f32> = (0..neurons * images)
            .map(|_| {
                let v: f32 = rng.random_range(-0.5..1.0);
                if quantized {
                    (v * 8.0).round() / 8.0
                } else {
                    v
                }
            })
            .collect();
        let t = ActivationTable::from_values("l", neurons, images, values.clone()).map_err(|e| e.to_string())?;
        let scaled = ActivationTable::from_values("l", neurons, images, values.iter().map(|v| v * 4.0).collect())
            .map_err(|e| e.to_string())?;
        let mut perm: Vec<usize> = (0..images).collect();
        perm.shuffle(&mut rng);
        let mut pv = vec![0f32; values.len()];
        for n in 0..neurons {
            for (old, &new) in perm.iter().enumerate() {
                pv[n * images + new] = values[n * images + old];
            }
        }
        let permuted = ActivationTable::from_values("l", neurons, images, pv).map_err(|e| e.to_string())?;
        for n in 0..neurons {
            let got = ranked(&t, n, &params)?;
            let want = filter_then_sort(t.row(n), 100, 0.70);
            ensure!(got == want, "case {case} neuron {n}: selection differs from oracle");
            ensure!(ranked(&scaled, n, &params)? == got, "case {case} neuron {n}: scale changed selection");
            let p = ranked(&permuted, n, &params)?;
            let mut a: Vec<(usize, f64)> = got.iter().map(|&(i, w)| (perm[i], w)).collect();
            let mut b = p.clone();
            let wa: Vec<f64> = a.iter().map(|e| e.1).collect();
            let wb: Vec<f64> = b.iter().map(|e| e.1).collect();
            ensure!(wa == wb, "case {case} neuron {n}: permutation changed weights");
            if !quantized {
                a.sort_by_key(|e| e.0);
                b.sort_by_key(|e| e.0);
                ensure!(a == b, "case {case} neuron {n}: permutation changed selected images");
            }
            selected += got.len();
        }
    }
    Ok(format!("100 tables, {selected} selected entries match"))
}

fn report_structure(fx: &Fixture) -> Outcome {
    let mut out = Vec::new();
    for (name, palette, values) in [
        ("color", Palette::Color, fx.layers.iter().map(|l| (l.layer.clone(), l.alpha_values())).collect::<Vec<_>>()),
        ("class", Palette::Class, fx.layers.iter().map(|l| (l.layer.clone(), l.gamma_values())).collect()),
    ] {
        let h = HistogramSpec::from_values(name, default_bin_edges(), palette, &values).map_err(|e| e.to_string())?;
        for (l, (_, v)) in h.layers.iter().zip(&values) {
            ensure!(l.total() == v.len(), "{name} {}: counts do not conserve", l.layer);
        }
        let csv = h.to_csv().map_err(|e| e.to_string())?;
        let mut rd = csv::Reader::from_reader(csv.as_bytes());
        let mut reread: BTreeMap<(String, String), usize> = BTreeMap::new();
        for row in rd.records() {
            let row = row.map_err(|e| e.to_string())?;
            reread.insert((row[0].to_string(), row[1].to_string()), row[4].parse().map_err(|_| "bad count")?);
        }
        for l in &h.layers {
            for (b, &c) in l.counts.iter().enumerate() {
                ensure!(reread[&(l.layer.clone(), b.to_string())] == c, "{name} CSV count mismatch");
            }
            ensure!(reread[&(l.layer.clone(), "dead".into())] == l.dead_count, "{name} CSV dead mismatch");
        }
        for (l, (_, vals)) in h.layers.iter().zip(&values) {
            let planted = |pred: &dyn Fn(&neuroscope::fixture::Stimulus) -> bool| {
                fx.spec
                    .planted
                    .iter()
                    .filter(|p| p.layer == l.layer)
                    .filter_map(|p| p.stimulus.as_deref().and_then(|s| fx.spec.stimulus(s)))
                    .filter(|s| pred(s))
                    .count()
            };
            let want = match name {
                "color" => planted(&|s| s.hue.is_some()),
                _ => planted(&|s| s.class.is_some() && s.purity == 1.0),
            };
            let top = *l.counts.last().unwrap();
            ensure!(top == want, "{name} {}: top band {top}, planted {want}", l.layer);
            let dead = vals.iter().filter(|v| matches!(v, IndexValue::Dead)).count();
            ensure!(l.dead_count == dead, "{name} {}: dead count", l.layer);
            out.push(format!("{name}:{}={}/{}", l.layer, top, l.total()));
        }
    }
    Ok(out.join(" "))
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let fixture = catch_unwind(AssertUnwindSafe(|| build_fixture(dir.path())));
    let fx = fixture.as_ref().ok();

    let criteria: Vec<Criterion> = vec![
        ("receptive-field sizes", Box::new(receptive_field_sizes)),
        ("geometry oracle", Box::new(geometry_oracle)),
        ("weighted PCA oracle", Box::new(weighted_pca_oracle)),
        ("color index analytic points", Box::new(alpha_analytic_points)),
        ("class index analytic points and cover oracle", Box::new(gamma_points)),
        (
            "neuron feature mean oracle and bounds",
            Box::new(|| nf_mean_oracle(&fx.ok_or("fixture failed to build")?.layers)),
        ),
        (
            "planted-selectivity recovery",
            Box::new(|| planted_recovery(fx.ok_or("fixture failed to build")?)),
        ),
        ("ranking protocol", Box::new(ranking_protocol)),
        (
            "report structure",
            Box::new(|| report_structure(fx.ok_or("fixture failed to build")?)),
        ),
    ];

    let mut failed = 0;
    for (name, check) in &criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
