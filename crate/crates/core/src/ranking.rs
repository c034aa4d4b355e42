//! Per-neuron image rankings, activation curves and dead-neuron detection.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::ActivationTable;

pub const DEFAULT_N_MAX: usize = 100;
pub const DEFAULT_MIN_RATIO: f64 = 0.70;
pub const DEFAULT_CURVE_LEN: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingParams {
    pub n_max: usize,
    pub min_ratio: f64,
    /// A neuron is dead when its maximum activation is `<=` this.
    pub dead_epsilon: f64,
}

impl Default for RankingParams {
    fn default() -> Self {
        RankingParams {
            n_max: DEFAULT_N_MAX,
            min_ratio: DEFAULT_MIN_RATIO,
            dead_epsilon: 0.0,
        }
    }
}

impl RankingParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_max == 0 {
            return Err(Error::InvalidArgument("n_max must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_ratio) {
            return Err(Error::InvalidArgument(format!("min_ratio {} outside [0, 1]", self.min_ratio)));
        }
        if !self.dead_epsilon.is_finite() {
            return Err(Error::InvalidArgument("dead_epsilon must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankEntry {
    pub image_id: usize,
    pub activation: f64,
    /// activation / a_max, in (0, 1]
    pub weight: f64,
    pub position: (u16, u16),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronRanking {
    pub layer: String,
    pub neuron: usize,
    pub a_max: f64,
    /// Sorted by weight descending, ties by ascending image id.
    pub entries: Vec<RankEntry>,
}

impl NeuronRanking {
    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    pub fn image_ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.image_id).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RankOutcome {
    Ranked(NeuronRanking),
    Dead { a_max: f64 },
}

impl RankOutcome {
    pub fn ranking(&self) -> Option<&NeuronRanking> {
        match self {
            RankOutcome::Ranked(r) => Some(r),
            RankOutcome::Dead { .. } => None,
        }
    }

    pub fn is_dead(&self) -> bool {
        matches!(self, RankOutcome::Dead { .. })
    }
}

fn row_max(row: &[f32]) -> f64 {
    row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64
}

/// Descending activation, then ascending image id.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Sorted prefix of the `n` best candidates.
fn top_n(mut candidates: Vec<(usize, f64)>, n: usize) -> Vec<(usize, f64)> {
    if candidates.len() > n {
        candidates.select_nth_unstable_by(n - 1, rank_order);
        candidates.truncate(n);
    }
    candidates.sort_unstable_by(rank_order);
    candidates
}

pub fn rank_neuron(table: &ActivationTable, neuron: usize, params: &RankingParams) -> Result<RankOutcome> {
    params.validate()?;
    if neuron >= table.neuron_count {
        return Err(Error::OutOfRange {
            what: "neuron",
            index: neuron,
            limit: table.neuron_count,
        });
    }
    let row = table.row(neuron);
    let a_max = row_max(row);
    if row.is_empty() || a_max <= params.dead_epsilon {
        return Ok(RankOutcome::Dead { a_max });
    }
    let candidates: Vec<(usize, f64)> = row
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| {
            let a = a as f64;
            let w = a / a_max;
            (w > 0.0 && w >= params.min_ratio).then_some((i, a))
        })
        .collect();
    let positions = table.positions(neuron);
    let entries = top_n(candidates, params.n_max)
        .into_iter()
        .map(|(image_id, activation)| RankEntry {
            image_id,
            activation,
            weight: activation / a_max,
            position: positions[image_id],
        })
        .collect();
    Ok(RankOutcome::Ranked(NeuronRanking {
        layer: table.layer.clone(),
        neuron,
        a_max,
        entries,
    }))
}

pub fn rank_layer(table: &ActivationTable, params: &RankingParams) -> Result<Vec<RankOutcome>> {
    params.validate()?;
    (0..table.neuron_count)
        .into_par_iter()
        .map(|n| rank_neuron(table, n, params))
        .collect()
}

pub fn detect_dead(table: &ActivationTable, dead_epsilon: f64) -> Vec<bool> {
    (0..table.neuron_count)
        .map(|n| table.image_count == 0 || row_max(table.row(n)) <= dead_epsilon)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCurve {
    pub layer: String,
    pub neuron: usize,
    /// First K normalized weights in rank order; negative activations count as 0.
    pub weights: Vec<f64>,
    /// Rectangle-rule area: the plain sum of `weights`.
    pub auc: f64,
    /// `auc` over the largest `auc` among all neurons considered.
    pub auc_fraction: f64,
}

/// Top-K normalized weights of one neuron and their sum.
pub fn curve_weights(table: &ActivationTable, neuron: usize, k: usize, dead_epsilon: f64) -> Result<(Vec<f64>, f64)> {
    if k == 0 || k > table.image_count {
        return Err(Error::InvalidArgument(format!(
            "curve length {k} must be in 1..={}",
            table.image_count
        )));
    }
    if neuron >= table.neuron_count {
        return Err(Error::OutOfRange {
            what: "neuron",
            index: neuron,
            limit: table.neuron_count,
        });
    }
    let row = table.row(neuron);
    let a_max = row_max(row);
    if a_max <= dead_epsilon || a_max <= 0.0 {
        return Err(Error::DeadNeuron {
            layer: table.layer.clone(),
            neuron,
            a_max,
        });
    }
    let all: Vec<(usize, f64)> = row.iter().enumerate().map(|(i, &a)| (i, a as f64)).collect();
    let weights: Vec<f64> = top_n(all, k)
        .into_iter()
        .map(|(_, a)| (a / a_max).max(0.0))
        .collect();
    let auc = weights.iter().sum();
    Ok((weights, auc))
}

/// Curves for every neuron of every table; fractions are relative to the
/// network-wide maximum area. Dead neurons come back as `None`.
pub fn activation_curves(tables: &[&ActivationTable], k: usize, dead_epsilon: f64) -> Result<Vec<Vec<Option<ActivationCurve>>>> {
    let mut per_layer = Vec::with_capacity(tables.len());
    for table in tables {
        let curves: Vec<Option<(Vec<f64>, f64)>> = (0..table.neuron_count)
            .into_par_iter()
            .map(|n| match curve_weights(table, n, k, dead_epsilon) {
                Ok(c) => Ok(Some(c)),
                Err(Error::DeadNeuron { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        per_layer.push(curves);
    }
    let max_auc = per_layer
        .iter()
        .flatten()
        .flatten()
        .map(|(_, auc)| *auc)
        .fold(0.0f64, f64::max);
    Ok(per_layer
        .into_iter()
        .zip(tables)
        .map(|(curves, table)| {
            curves
                .into_iter()
                .enumerate()
                .map(|(neuron, c)| {
                    c.map(|(weights, auc)| ActivationCurve {
                        layer: table.layer.clone(),
                        neuron,
                        weights,
                        auc,
                        auc_fraction: auc / max_auc,
                    })
                })
                .collect()
        })
        .collect())
}

/// CSV: layer, neuron, rank, image_id, activation, weight, row, col.
pub fn write_rankings_csv<W: Write>(out: W, rankings: &[NeuronRanking]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "neuron", "rank", "image_id", "activation", "weight", "row", "col"])?;
    for r in rankings {
        for (rank, e) in r.entries.iter().enumerate() {
            w.write_record([
                r.layer.clone(),
                r.neuron.to_string(),
                (rank + 1).to_string(),
                e.image_id.to_string(),
                e.activation.to_string(),
                e.weight.to_string(),
                e.position.0.to_string(),
                e.position.1.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
