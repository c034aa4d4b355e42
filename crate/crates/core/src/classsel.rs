//! Class selectivity index.
//!
//! Each ranked image votes for its ground-truth class with its normalized
//! activation. `M` is the smallest number of classes whose summed relative
//! frequency reaches `th`, and `gamma = (N - M) / (N - 1)` with `N` the
//! number of ranked images.
//!
//! Taking classes greedily in descending frequency gives the minimum `M`:
//! frequencies are nonnegative, so the `m` largest values dominate the sum
//! of any other `m` classes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ranking::NeuronRanking;

pub const DEFAULT_TH: f64 = 1.0;
/// Slack on the cumulative sum so that `th = 1` is reached despite rounding.
pub const COVER_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    pub layer: String,
    pub neuron: usize,
    /// class index -> relative frequency f_c (all > 0, summing to 1)
    pub freqs: BTreeMap<usize, f64>,
    /// Number of contributing images.
    pub n: usize,
}

impl ClassDistribution {
    /// Classes by descending frequency, ties by ascending class index.
    pub fn sorted(&self) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self.freqs.iter().map(|(&c, &f)| (c, f)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSelectivity {
    pub gamma: f64,
    pub m: usize,
    pub n: usize,
    /// The M covering classes with their frequencies, descending.
    pub covering_set: Vec<(usize, f64)>,
    pub th: f64,
}

pub fn class_frequencies(ranking: &NeuronRanking, labels: &[usize]) -> Result<ClassDistribution> {
    if ranking.entries.is_empty() {
        return Err(Error::DeadNeuron {
            layer: ranking.layer.clone(),
            neuron: ranking.neuron,
            a_max: ranking.a_max,
        });
    }
    let mut mass: BTreeMap<usize, f64> = BTreeMap::new();
    let mut total = 0.0;
    for e in &ranking.entries {
        let class = *labels.get(e.image_id).ok_or(Error::OutOfRange {
            what: "image_id",
            index: e.image_id,
            limit: labels.len(),
        })?;
        *mass.entry(class).or_default() += e.weight;
        total += e.weight;
    }
    mass.values_mut().for_each(|m| *m /= total);
    Ok(ClassDistribution {
        layer: ranking.layer.clone(),
        neuron: ranking.neuron,
        freqs: mass,
        n: ranking.entries.len(),
    })
}

pub fn class_selectivity_index(dist: &ClassDistribution, th: f64) -> Result<ClassSelectivity> {
    if !(th > 0.0 && th <= 1.0) {
        return Err(Error::InvalidArgument(format!("th {th} outside (0, 1]")));
    }
    if dist.n < 2 {
        return Err(Error::SingularClassIndex);
    }
    let sorted = dist.sorted();
    let mut cum = 0.0;
    let mut m = sorted.len();
    for (i, (_, f)) in sorted.iter().enumerate() {
        cum += f;
        if cum >= th - COVER_TOLERANCE {
            m = i + 1;
            break;
        }
    }
    Ok(ClassSelectivity {
        gamma: gamma(dist.n, m),
        m,
        n: dist.n,
        covering_set: sorted[..m].to_vec(),
        th,
    })
}

pub fn gamma(n: usize, m: usize) -> f64 {
    (n - m) as f64 / (n - 1) as f64
}

/// Child -> parent map over class labels and their ancestors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OntologyMap {
    pub parent: BTreeMap<String, String>,
    pub roots: BTreeSet<String>,
}

impl OntologyMap {
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut parent = BTreeMap::new();
        for (c, p) in pairs {
            let (c, p) = (c.into(), p.into());
            if c == p {
                return Err(Error::Ontology(format!("`{c}` is its own parent")));
            }
            if let Some(prev) = parent.insert(c.clone(), p.clone()) {
                if prev != p {
                    return Err(Error::Ontology(format!("`{c}` has two parents: `{prev}` and `{p}`")));
                }
            }
        }
        let roots = parent
            .values()
            .filter(|p| !parent.contains_key(*p))
            .cloned()
            .collect();
        let map = OntologyMap { parent, roots };
        for label in map.parent.keys() {
            map.ancestors(label)?;
        }
        Ok(map)
    }

    /// `child<TAB>parent` per line; blank lines and `#` comments skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (c, p) = line
                .split_once('\t')
                .ok_or_else(|| Error::Ontology(format!("line {}: expected child<TAB>parent", i + 1)))?;
            pairs.push((c.trim().to_string(), p.trim().to_string()));
        }
        Self::from_pairs(pairs)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.parent.contains_key(label) || self.roots.contains(label)
    }

    /// Ancestors from parent up to the root.
    pub fn ancestors(&self, label: &str) -> Result<Vec<&str>> {
        let mut out: Vec<&str> = Vec::new();
        let mut cur = label;
        while let Some(p) = self.parent.get(cur) {
            if p == label || out.contains(&p.as_str()) {
                return Err(Error::Ontology(format!("cycle through `{label}`")));
            }
            out.push(p);
            cur = p;
        }
        Ok(out)
    }

    /// Distance from the label's root (roots are at depth 0).
    pub fn depth(&self, label: &str) -> Result<usize> {
        Ok(self.ancestors(label)?.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenericMass {
    pub label: String,
    /// Depth below the root (0 = root).
    pub depth: usize,
    pub mass: f64,
}

/// Ancestor-class masses. Each ancestor collects the frequency of every
/// descendant class present in `dist`; masses at different depths overlap.
/// Sorted by depth, then descending mass, then label.
pub fn rollup_ontology(dist: &ClassDistribution, ontology: &OntologyMap, class_names: &[String]) -> Result<Vec<GenericMass>> {
    let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
    for (&class, &f) in &dist.freqs {
        let name = class_names.get(class).ok_or(Error::OutOfRange {
            what: "class_index",
            index: class,
            limit: class_names.len(),
        })?;
        if !ontology.contains(name) {
            return Err(Error::Ontology(format!("class `{name}` missing from ontology")));
        }
        for a in ontology.ancestors(name)? {
            *mass.entry(a).or_default() += f;
        }
    }
    let mut out = mass
        .into_iter()
        .map(|(label, mass)| {
            Ok(GenericMass {
                label: label.to_string(),
                depth: ontology.depth(label)?,
                mass,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| {
        a.depth
            .cmp(&b.depth)
            .then(b.mass.total_cmp(&a.mass))
            .then(a.label.cmp(&b.label))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRecord {
    pub layer: String,
    pub neuron: usize,
    /// `None` when dead or when the index is undefined (one image).
    pub selectivity: Option<ClassSelectivity>,
    pub dead: bool,
}

/// CSV: layer, neuron, gamma, M, N, then up to five (class, f_c) pairs.
pub fn write_class_csv<W: Write>(out: W, records: &[ClassRecord], class_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["layer".to_string(), "neuron".into(), "gamma".into(), "M".into(), "N".into()];
    for i in 1..=5 {
        header.push(format!("class{i}"));
        header.push(format!("f{i}"));
    }
    header.push("dead".into());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.layer.clone(), r.neuron.to_string()];
        match &r.selectivity {
            Some(s) => {
                row.extend([s.gamma.to_string(), s.m.to_string(), s.n.to_string()]);
                for i in 0..5 {
                    match s.covering_set.get(i) {
                        Some((c, f)) => {
                            row.push(class_names.get(*c).cloned().unwrap_or_else(|| c.to_string()));
                            row.push(f.to_string());
                        }
                        None => row.extend([String::new(), String::new()]),
                    }
                }
            }
            None => row.extend(std::iter::repeat_n(String::new(), 13)),
        }
        row.push(r.dead.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Tag-cloud export: one `label<TAB>mass` line per entry, under a
/// `[layer/neuron leaf|generic]` heading.
pub fn write_tag_cloud<W: Write>(mut out: W, layer: &str, neuron: usize, leaf: &[(String, f64)], generic: &[GenericMass]) -> Result<()> {
    let io = |e| Error::io("<tag cloud>", e);
    writeln!(out, "[{layer}/{neuron} leaf]").map_err(io)?;
    for (label, f) in leaf {
        writeln!(out, "{label}\t{f}").map_err(io)?;
    }
    writeln!(out, "[{layer}/{neuron} generic]").map_err(io)?;
    for g in generic {
        writeln!(out, "{}\t{}\t{}", g.label, g.mass, g.depth).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::RankEntry;

    fn ranking(weights: &[f64]) -> NeuronRanking {
        NeuronRanking {
            layer: "conv5".into(),
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
        }
    }

    fn dist(freqs: &[(usize, f64)], n: usize) -> ClassDistribution {
        ClassDistribution {
            layer: "x".into(),
            neuron: 0,
            freqs: freqs.iter().copied().collect(),
            n,
        }
    }

    #[test]
    fn weighted_frequencies() {
        let d = class_frequencies(&ranking(&[1.0, 0.8, 0.2]), &[0, 0, 1]).unwrap();
        assert!((d.freqs[&0] - 0.9).abs() < 1e-15);
        assert!((d.freqs[&1] - 0.1).abs() < 1e-15);
        assert_eq!(d.n, 3);
    }

    #[test]
    fn single_class_and_equal_weights() {
        let d = class_frequencies(&ranking(&[1.0, 0.9, 0.75]), &[4, 4, 4]).unwrap();
        assert_eq!(d.freqs.len(), 1);
        assert_eq!(d.freqs[&4], 1.0);

        let d = class_frequencies(&ranking(&[1.0; 4]), &[0, 1, 1, 1]).unwrap();
        assert_eq!(d.freqs[&0], 0.25);
        assert_eq!(d.freqs[&1], 0.75);
    }

    #[test]
    fn empty_ranking_errors() {
        assert!(class_frequencies(&ranking(&[]), &[]).is_err());
    }

    #[test]
    fn gamma_extremes() {
        let pure = dist(&[(7, 1.0)], 100);
        let s = class_selectivity_index(&pure, 1.0).unwrap();
        assert_eq!((s.m, s.gamma), (1, 1.0));

        let uniform: Vec<(usize, f64)> = (0..100).map(|c| (c, 0.01)).collect();
        let s = class_selectivity_index(&dist(&uniform, 100), 1.0).unwrap();
        assert_eq!((s.m, s.gamma), (100, 0.0));
    }

    #[test]
    fn gamma_at_forty_classes() {
        assert!((gamma(100, 40) - 60.0 / 99.0).abs() < 1e-15);
    }

    #[test]
    fn partial_threshold_and_ties() {
        let d = dist(&[(3, 0.4), (1, 0.3), (2, 0.3)], 10);
        let s = class_selectivity_index(&d, 0.6).unwrap();
        assert_eq!(s.m, 2);
        assert_eq!(s.covering_set, vec![(3, 0.4), (1, 0.3)]);
        assert!(class_selectivity_index(&d, 0.0).is_err());
        assert!(class_selectivity_index(&d, 1.1).is_err());
    }

    #[test]
    fn single_image_is_singular() {
        let d = dist(&[(0, 1.0)], 1);
        assert!(matches!(class_selectivity_index(&d, 1.0), Err(Error::SingularClassIndex)));
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rollup_sums_siblings() {
        let onto = OntologyMap::parse("husky\tdog\nbeagle\tdog\ndog\tanimal\n").unwrap();
        let d = dist(&[(0, 0.6), (1, 0.4)], 10);
        let r = rollup_ontology(&d, &onto, &names(&["husky", "beagle"])).unwrap();
        assert_eq!(r[0].label, "animal");
        assert_eq!(r[0].depth, 0);
        assert!((r[0].mass - 1.0).abs() < 1e-15);
        assert_eq!(r[1].label, "dog");
        assert!((r[1].mass - 1.0).abs() < 1e-15);
    }

    #[test]
    fn only_child_passes_mass_through() {
        let onto = OntologyMap::parse("tabby\tcat\ncat\tanimal\nhusky\tdog\ndog\tanimal").unwrap();
        let d = dist(&[(0, 0.3), (1, 0.7)], 5);
        let r = rollup_ontology(&d, &onto, &names(&["tabby", "husky"])).unwrap();
        let cat = r.iter().find(|g| g.label == "cat").unwrap();
        assert!((cat.mass - 0.3).abs() < 1e-15);
    }

    #[test]
    fn ontology_errors() {
        assert!(OntologyMap::parse("a\tb\nb\tc\nc\ta").is_err());
        assert!(OntologyMap::parse("a\ta").is_err());
        assert!(OntologyMap::parse("a b").is_err());
        assert!(OntologyMap::parse("a\tb\na\tc").is_err());
        let onto = OntologyMap::parse("a\tb").unwrap();
        let d = dist(&[(0, 1.0)], 3);
        assert!(rollup_ontology(&d, &onto, &names(&["zzz"])).is_err());
    }

    #[test]
    fn csv_has_top_five() {
        let d = dist(&[(0, 0.5), (1, 0.2), (2, 0.1), (3, 0.1), (4, 0.05), (5, 0.05)], 20);
        let s = class_selectivity_index(&d, 1.0).unwrap();
        let rec = ClassRecord {
            layer: "conv5".into(),
            neuron: 3,
            selectivity: Some(s),
            dead: false,
        };
        let mut buf = Vec::new();
        write_class_csv(&mut buf, &[rec], &names(&["a", "b", "c", "d", "e", "f"])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert!(row.starts_with("conv5,3,0.7368421052631579,6,20,a,0.5,b,0.2,c,0.1,d,0.1,e,0.05,false"), "{row}");
    }
}
