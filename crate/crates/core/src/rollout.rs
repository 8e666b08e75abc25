//! Rollout evaluation over dataset splits.
//!
//! Teacher-forced mode predicts every step from the ground-truth state and
//! measures one-step errors; self mode feeds each predicted state into the
//! next step, so deviations compound. Both evaluate the per-step contact
//! field on the predicted trajectory, and both report the losses_metrics
//! quantities per graph, per simulation, and pooled.

use serde::{Deserialize, Serialize};

use crate::ccd::{detect_contacts, CcdConfig, ContactField, ContactScene};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gnn::{integrate_step, predict_accelerations, predicted_trajectory, GnnParams};
use crate::graph::{assemble_graph_sample, GraphSample, NodeState};
use crate::loss::{
    accumulate_errors, contact_loss, cross_sim_average, error_set, error_stats, position_loss,
    GraphMetrics, MetricReport, SimErrorAccumulation, SimSummary,
};

type V3 = nalgebra::Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RolloutMode {
    /// Predict each step from the ground-truth state.
    #[serde(rename = "tf")]
    TeacherForced,
    /// Feed predictions forward.
    #[serde(rename = "self")]
    SelfRollout,
}

/// Anything that can predict nodal accelerations for a sample. The
/// simulation name and step index allow test stubs to look up ground truth;
/// the network ignores them.
pub trait Predictor {
    fn predict(&self, sim: &str, step: usize, sample: &GraphSample) -> Result<Vec<V3>>;
}

impl Predictor for GnnParams {
    fn predict(&self, _sim: &str, _step: usize, sample: &GraphSample) -> Result<Vec<V3>> {
        predict_accelerations(sample, self)
    }
}

/// Predicted trajectory of one simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimRollout {
    pub name: String,
    /// Node positions after each evaluated step.
    pub predicted_positions: Vec<Vec<[f64; 3]>>,
    /// Contact field of each predicted step.
    pub fields: Vec<ContactField>,
}

#[derive(Debug, Clone)]
pub struct RolloutOutput {
    pub report: MetricReport,
    pub sims: Vec<SimRollout>,
}

pub fn rollout(
    params: &GnnParams,
    dataset: &Dataset,
    split: &str,
    mode: RolloutMode,
    ccd_cfg: &CcdConfig,
) -> Result<RolloutOutput> {
    rollout_with(params, dataset, split, mode, ccd_cfg)
}

pub fn rollout_with<P: Predictor>(
    predictor: &P,
    dataset: &Dataset,
    split: &str,
    mode: RolloutMode,
    ccd_cfg: &CcdConfig,
) -> Result<RolloutOutput> {
    let split_sims = dataset.split_sims(split)?;
    let mesh = &dataset.mesh;
    let l_c = dataset.meta.l_c;

    let mut per_graph = Vec::new();
    let mut pos_losses = Vec::new();
    let mut con_losses = Vec::new();
    let mut pooled_errors = Vec::new();
    let mut per_sim = Vec::new();
    let mut accs: Vec<SimErrorAccumulation> = Vec::new();
    let mut sims_out = Vec::new();

    for (si, sim) in split_sims.iter().enumerate() {
        let mut state: Vec<NodeState> = sim.samples[0].nodes.clone();
        let mut sim_errors: Vec<Vec<f64>> = Vec::with_capacity(sim.samples.len());
        let mut fields = Vec::with_capacity(sim.samples.len());
        let mut predicted_positions = Vec::with_capacity(sim.samples.len());

        for (k, truth) in sim.samples.iter().enumerate() {
            let targets = truth.targets.as_ref().ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "simulation {:?} step {k} lacks target accelerations",
                    sim.name
                ))
            })?;
            let dt = truth.dt();

            let y_hat = match mode {
                RolloutMode::TeacherForced => {
                    state = truth.nodes.clone();
                    predictor.predict(&sim.name, k, truth)?
                }
                RolloutMode::SelfRollout => {
                    let sample = assemble_graph_sample(
                        mesh,
                        state.clone(),
                        &truth.g[2..],
                        truth.time(),
                        dt,
                        dataset.meta.r_collision,
                        None,
                    )?;
                    predictor.predict(&sim.name, k, &sample)?
                }
            };

            let traj = predicted_trajectory(&state, &y_hat, dt)?;
            let scene = ContactScene::self_contact(traj, mesh.triangles.clone())?;
            let field = detect_contacts(&scene, ccd_cfg)?;

            let next = integrate_step(&state, &y_hat, dt)?;
            let pred_next: Vec<V3> = next.iter().map(|n| n.r).collect();
            let true_next: Vec<V3> = if k + 1 < sim.samples.len() {
                sim.samples[k + 1].nodes.iter().map(|n| n.r).collect()
            } else {
                integrate_step(&truth.nodes, targets, dt)?
                    .iter()
                    .map(|n| n.r)
                    .collect()
            };

            let e = error_set(&pred_next, &true_next, l_c)?;
            let mean_error = e.iter().sum::<f64>() / e.len() as f64;
            let pos = position_loss(
                &[pred_next.clone()],
                &[true_next.clone()],
                l_c,
            )?;
            let con = contact_loss(std::slice::from_ref(&field), l_c)?;
            per_graph.push(GraphMetrics {
                sim: si,
                step: k,
                position_loss: pos,
                contact_loss: con,
                mean_error,
            });
            pos_losses.push(pos);
            con_losses.push(con);
            pooled_errors.extend_from_slice(&e);
            sim_errors.push(e);
            predicted_positions.push(pred_next.iter().map(|p| [p.x, p.y, p.z]).collect());
            fields.push(field);

            if mode == RolloutMode::SelfRollout {
                state = next;
            }
        }

        let acc = accumulate_errors(&sim_errors)?;
        per_sim.push(SimSummary {
            sim: si,
            mean_e_per_step: acc.mean_e_per_step.clone(),
            mean_acc_per_step: acc.mean_acc_per_step.clone(),
            mean_e: acc.mean_e,
            mean_acc: acc.mean_acc,
        });
        accs.push(acc);
        sims_out.push(SimRollout {
            name: sim.name.clone(),
            predicted_positions,
            fields,
        });
    }

    let (mean_e_per_step, mean_acc_per_step) = if accs.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        cross_sim_average(&accs)?
    };
    let report = MetricReport {
        split: split.to_string(),
        per_graph,
        position_loss_stats: error_stats(&pos_losses),
        contact_loss_stats: error_stats(&con_losses),
        error_stats: error_stats(&pooled_errors),
        per_sim,
        mean_e_per_step,
        mean_acc_per_step,
    };
    Ok(RolloutOutput {
        report,
        sims: sims_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::GnnConfig;
    use crate::scene::{generate_scene, SceneSpec};
    use std::collections::HashMap;

    fn tiny_membranes(seed: u64) -> Dataset {
        generate_scene(&SceneSpec::UndulatingMembranes {
            dt: 0.025,
            resolution: 3,
            gap: 0.4,
            amplitude: 0.15,
            k1u: None,
            k2u: None,
            k1l: None,
            k2l: None,
            steps: 5,
            sims: 4,
            r_collision: 0.25,
            seed,
        })
        .unwrap()
        .dataset
        .unwrap()
    }

    /// Returns the stored ground-truth target for every queried step, plus
    /// an optional constant bias.
    struct OracleStub {
        targets: HashMap<(String, usize), Vec<V3>>,
        bias: V3,
    }

    impl OracleStub {
        fn new(ds: &Dataset, bias: V3) -> Self {
            let mut targets = HashMap::new();
            for sim in &ds.sims {
                for (k, s) in sim.samples.iter().enumerate() {
                    targets.insert((sim.name.clone(), k), s.targets.clone().unwrap());
                }
            }
            OracleStub { targets, bias }
        }
    }

    impl Predictor for OracleStub {
        fn predict(&self, sim: &str, step: usize, _sample: &GraphSample) -> Result<Vec<V3>> {
            let y = self
                .targets
                .get(&(sim.to_string(), step))
                .expect("stub queried for an unknown step");
            Ok(y.iter().map(|v| v + self.bias).collect())
        }
    }

    #[test]
    fn perfect_oracle_has_zero_position_error_in_both_modes() {
        let ds = tiny_membranes(31);
        let stub = OracleStub::new(&ds, V3::zeros());
        for mode in [RolloutMode::TeacherForced, RolloutMode::SelfRollout] {
            let out = rollout_with(&stub, &ds, "train", mode, &CcdConfig::default()).unwrap();
            for g in &out.report.per_graph {
                assert_eq!(g.position_loss, 0.0, "mode {mode:?}");
                assert_eq!(g.mean_error, 0.0, "mode {mode:?}");
            }
            let stats = out.report.error_stats.unwrap();
            assert_eq!(stats.max, 0.0);
        }
    }

    #[test]
    fn biased_predictor_accumulates_in_self_mode_only() {
        let ds = tiny_membranes(8);
        let stub = OracleStub::new(&ds, V3::new(0.0, 0.0, 0.3));
        let cfg = CcdConfig::default();
        let tf =
            rollout_with(&stub, &ds, "train", RolloutMode::TeacherForced, &cfg).unwrap();
        let own = rollout_with(&stub, &ds, "train", RolloutMode::SelfRollout, &cfg).unwrap();

        // Accumulated error curves never decrease.
        for sim in &own.report.per_sim {
            for w in sim.mean_acc_per_step.windows(2) {
                assert!(w[1] >= w[0], "accumulation must be monotone: {w:?}");
            }
        }
        // Teacher forcing resets each step: its one-step error stays flat
        // while self rollout drifts further every step.
        let tf_last = *tf.report.per_sim[0].mean_e_per_step.last().unwrap();
        let own_last = *own.report.per_sim[0].mean_e_per_step.last().unwrap();
        assert!(own_last > 2.0 * tf_last, "self {own_last} vs tf {tf_last}");
    }

    #[test]
    fn unequal_sim_lengths_average_over_the_least_common_slice() {
        let mut ds = tiny_membranes(12);
        ds.sims[1].samples.truncate(3);
        let stub = OracleStub::new(&ds, V3::new(0.0, 0.0, 0.1));
        let out = rollout_with(
            &stub,
            &ds,
            "train",
            RolloutMode::TeacherForced,
            &CcdConfig::default(),
        )
        .unwrap();
        let lens: Vec<usize> = out
            .report
            .per_sim
            .iter()
            .map(|s| s.mean_e_per_step.len())
            .collect();
        assert!(lens.contains(&3) && lens.contains(&5), "{lens:?}");
        assert_eq!(out.report.mean_e_per_step.len(), 3);
        assert_eq!(out.report.mean_acc_per_step.len(), 3);
    }

    #[test]
    fn network_rollout_produces_finite_metrics_and_fields() {
        let ds = tiny_membranes(19);
        let params = GnnParams::init(GnnConfig::tiny(4), 7).unwrap();
        let out = rollout(
            &params,
            &ds,
            "test",
            RolloutMode::SelfRollout,
            &CcdConfig::default(),
        )
        .unwrap();
        assert_eq!(out.sims.len(), 1);
        let sim = &out.sims[0];
        assert_eq!(sim.fields.len(), 5);
        assert_eq!(sim.predicted_positions.len(), 5);
        for f in &sim.fields {
            assert_eq!(f.num_triangles, ds.mesh.num_triangles());
        }
        for g in &out.report.per_graph {
            assert!(g.position_loss.is_finite());
            assert!(g.contact_loss.is_finite());
            assert!(g.mean_error.is_finite());
        }
        assert_eq!(out.report.split, "test");
    }

    #[test]
    fn rollout_mode_serializes_as_tf_and_self() {
        assert_eq!(
            serde_json::to_string(&RolloutMode::TeacherForced).unwrap(),
            "\"tf\""
        );
        let m: RolloutMode = serde_json::from_str("\"self\"").unwrap();
        assert_eq!(m, RolloutMode::SelfRollout);
    }
}
