//! Training losses and evaluation metrics as pure reductions over batches
//! and simulations.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::ccd::ContactField;
use crate::error::{Error, Result};

type V3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_d: f64,
    pub w_c: f64,
}

impl LossWeights {
    pub fn dynamic_only() -> Self {
        LossWeights { w_d: 1.0, w_c: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_d.is_finite() && self.w_c.is_finite()) {
            return Err(Error::InvalidConfig("loss weights must be finite".into()));
        }
        if self.w_d < 0.0 || self.w_c < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be nonnegative".into()));
        }
        if self.w_d == 0.0 && self.w_c == 0.0 {
            return Err(Error::InvalidConfig("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

fn check_batch_shapes(a: &[Vec<V3>], b: &[Vec<V3>], what: &str) -> Result<(usize, usize)> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(format!(
            "{what}: {} graphs vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::DimMismatch(format!("{what}: empty batch")));
    }
    let n_nodes = a[0].len();
    for (k, (pa, pb)) in a.iter().zip(b.iter()).enumerate() {
        if pa.len() != n_nodes || pb.len() != n_nodes {
            return Err(Error::DimMismatch(format!(
                "{what}: graph {k} has {} and {} nodes, batch leads with {n_nodes}",
                pa.len(),
                pb.len()
            )));
        }
    }
    if n_nodes == 0 {
        return Err(Error::DimMismatch(format!("{what}: graphs have no nodes")));
    }
    Ok((a.len(), n_nodes))
}

/// Mean squared acceleration error over a batch, denominator
/// 3 * n_batch * n_nodes.
pub fn dynamic_loss(pred: &[Vec<V3>], target: &[Vec<V3>]) -> Result<f64> {
    let (n_batch, n_nodes) = check_batch_shapes(pred, target, "dynamic loss")?;
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(target.iter()) {
        for (yp, yt) in p.iter().zip(t.iter()) {
            let d = yp - yt;
            sum += d.x * d.x + d.y * d.y + d.z * d.z;
        }
    }
    Ok(sum / (3.0 * n_batch as f64 * n_nodes as f64))
}

/// Mean absolute normalized contact response over every triangle of every
/// graph. Triangles without contact contribute zero to the numerator and one
/// to the denominator.
pub fn contact_loss(fields: &[ContactField], l_c: f64) -> Result<f64> {
    if !(l_c.is_finite() && l_c > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "length scale must be positive, got {l_c}"
        )));
    }
    let count: usize = fields.iter().map(|f| f.num_triangles).sum();
    if count == 0 {
        return Err(Error::DimMismatch(
            "contact loss over zero triangles".into(),
        ));
    }
    let mut sum = 0.0;
    for f in fields {
        for &(_, r) in &f.entries {
            sum += (r / l_c).abs();
        }
    }
    Ok(sum / count as f64)
}

pub fn total_loss(l_d: f64, l_c: f64, weights: &LossWeights) -> f64 {
    weights.w_d * l_d + weights.w_c * l_c
}

/// Mean absolute componentwise displacement-step error, normalized by the
/// length scale: denominator n_batch * n_nodes * 3 * l_c.
pub fn position_loss(pred_dr: &[Vec<V3>], true_dr: &[Vec<V3>], l_c: f64) -> Result<f64> {
    if !(l_c.is_finite() && l_c > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "length scale must be positive, got {l_c}"
        )));
    }
    let (n_batch, n_nodes) = check_batch_shapes(pred_dr, true_dr, "position loss")?;
    let mut sum = 0.0;
    for (p, t) in pred_dr.iter().zip(true_dr.iter()) {
        for (dp, dt) in p.iter().zip(t.iter()) {
            let d = dp - dt;
            sum += d.x.abs() + d.y.abs() + d.z.abs();
        }
    }
    Ok(sum / (n_batch as f64 * n_nodes as f64 * 3.0 * l_c))
}

/// Per-node position errors of one graph: the Euclidean norm of the
/// displacement-step mismatch over the length scale.
pub fn error_set(pred_dr: &[V3], true_dr: &[V3], l_c: f64) -> Result<Vec<f64>> {
    if pred_dr.len() != true_dr.len() {
        return Err(Error::DimMismatch(format!(
            "error set: {} predicted vs {} true displacements",
            pred_dr.len(),
            true_dr.len()
        )));
    }
    if !(l_c.is_finite() && l_c > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "length scale must be positive, got {l_c}"
        )));
    }
    Ok(pred_dr
        .iter()
        .zip(true_dr.iter())
        .map(|(p, t)| ((t - p) / l_c).norm())
        .collect())
}

/// Summary statistics of a scalar sample with interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Sorts a copy and interpolates quartiles linearly at positions
/// q * (count - 1). Returns None on an empty sample.
pub fn error_stats(values: &[f64]) -> Option<ErrorStats> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite metric value"));
    let quantile = |q: f64| -> f64 {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    };
    Some(ErrorStats {
        count: sorted.len(),
        min: sorted[0],
        q1: quantile(0.25),
        median: quantile(0.5),
        q3: quantile(0.75),
        max: sorted[sorted.len() - 1],
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
    })
}

/// Accumulated one-step errors of a single simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimErrorAccumulation {
    /// Node-mean one-step error per time step.
    pub mean_e_per_step: Vec<f64>,
    /// Node-mean accumulated error per time step; entry M-1 sums the
    /// one-step errors of steps before M, so entry 0 is zero.
    pub mean_acc_per_step: Vec<f64>,
    /// Grand mean of one-step errors over steps and nodes.
    pub mean_e: f64,
    /// Grand mean of accumulated errors over steps and nodes.
    pub mean_acc: f64,
    /// Accumulated error per step and node.
    pub acc_per_node: Vec<Vec<f64>>,
}

/// Folds the time-ordered per-node error vectors of one simulation into
/// accumulated errors and their node and grand means.
pub fn accumulate_errors(e: &[Vec<f64>]) -> Result<SimErrorAccumulation> {
    if e.is_empty() {
        return Err(Error::DimMismatch("no time steps to accumulate".into()));
    }
    let n_nodes = e[0].len();
    if n_nodes == 0 {
        return Err(Error::DimMismatch("error vectors are empty".into()));
    }
    if e.iter().any(|step| step.len() != n_nodes) {
        return Err(Error::DimMismatch(
            "error vectors change length across time steps".into(),
        ));
    }

    let n_steps = e.len();
    let mut acc_per_node = Vec::with_capacity(n_steps);
    let mut running = vec![0.0; n_nodes];
    for step in e {
        acc_per_node.push(running.clone());
        for (r, &v) in running.iter_mut().zip(step.iter()) {
            *r += v;
        }
    }

    let node_mean = |row: &Vec<f64>| row.iter().sum::<f64>() / n_nodes as f64;
    let mean_e_per_step: Vec<f64> = e.iter().map(node_mean).collect();
    let mean_acc_per_step: Vec<f64> = acc_per_node.iter().map(node_mean).collect();
    let mean_e = mean_e_per_step.iter().sum::<f64>() / n_steps as f64;
    let mean_acc = mean_acc_per_step.iter().sum::<f64>() / n_steps as f64;
    Ok(SimErrorAccumulation {
        mean_e_per_step,
        mean_acc_per_step,
        mean_e,
        mean_acc,
        acc_per_node,
    })
}

/// Averages per-step curves across simulations of different lengths over
/// their least common time slice. Returns (mean one-step error,
/// mean accumulated error) per step.
pub fn cross_sim_average(sims: &[SimErrorAccumulation]) -> Result<(Vec<f64>, Vec<f64>)> {
    if sims.is_empty() {
        return Err(Error::DimMismatch("no simulations to average".into()));
    }
    let len = sims
        .iter()
        .map(|s| s.mean_e_per_step.len())
        .min()
        .unwrap();
    let avg = |pick: fn(&SimErrorAccumulation) -> &Vec<f64>| -> Vec<f64> {
        (0..len)
            .map(|k| sims.iter().map(|s| pick(s)[k]).sum::<f64>() / sims.len() as f64)
            .collect()
    };
    Ok((
        avg(|s| &s.mean_e_per_step),
        avg(|s| &s.mean_acc_per_step),
    ))
}

/// Per-graph evaluation row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub sim: usize,
    pub step: usize,
    pub position_loss: f64,
    pub contact_loss: f64,
    pub mean_error: f64,
}

/// Per-simulation evaluation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSummary {
    pub sim: usize,
    pub mean_e_per_step: Vec<f64>,
    pub mean_acc_per_step: Vec<f64>,
    pub mean_e: f64,
    pub mean_acc: f64,
}

/// Full evaluation report for one dataset split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: String,
    pub per_graph: Vec<GraphMetrics>,
    pub position_loss_stats: Option<ErrorStats>,
    pub contact_loss_stats: Option<ErrorStats>,
    /// Statistics of the pooled per-node error set across all graphs.
    pub error_stats: Option<ErrorStats>,
    pub per_sim: Vec<SimSummary>,
    /// Cross-simulation averages over the least common time slice.
    pub mean_e_per_step: Vec<f64>,
    pub mean_acc_per_step: Vec<f64>,
}

impl MetricReport {
    /// One CSV row per graph.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,sim,step,position_loss,contact_loss,mean_error\n");
        for g in &self.per_graph {
            out.push_str(&format!(
                "{},{},{},{:.16e},{:.16e},{:.16e}\n",
                self.split, g.sim, g.step, g.position_loss, g.contact_loss, g.mean_error
            ));
        }
        out
    }
}
