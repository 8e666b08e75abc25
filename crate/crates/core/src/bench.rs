//! Wall-clock benchmarks for the detection pipeline and network inference.
//!
//! Each stage is timed over a fixed number of repetitions and summarized by
//! median with min/max spread. The report embeds a machine descriptor and
//! makes no claim beyond this machine and these inputs.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ccd::cubic::{cubic_roots_in_interval, coplanarity_cubic, CubicRoots, RootConfig};
use crate::ccd::{
    broad, detect_contacts, event_node_quad, event_response_at, sufficiency_at, CcdConfig,
    ContactScene, ALL_SUBTESTS,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gnn::{predict_accelerations, GnnParams};

/// Median and spread of one timed stage, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStat {
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub reps: usize,
}

impl TimingStat {
    fn from_samples(mut secs: Vec<f64>) -> Self {
        secs.sort_by(f64::total_cmp);
        let n = secs.len();
        let median = if n % 2 == 1 {
            secs[n / 2]
        } else {
            0.5 * (secs[n / 2 - 1] + secs[n / 2])
        };
        TimingStat {
            median_s: median,
            min_s: secs[0],
            max_s: secs[n - 1],
            reps: n,
        }
    }
}

fn time_reps(reps: usize, mut work: impl FnMut() -> f64) -> TimingStat {
    let mut secs = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let sink = work();
        let elapsed = start.elapsed().as_secs_f64();
        black_box(sink);
        secs.push(elapsed);
    }
    TimingStat::from_samples(secs)
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < 3 {
        return Err(Error::InvalidConfig(format!(
            "need at least 3 repetitions, got {reps}"
        )));
    }
    Ok(())
}

pub fn machine_descriptor() -> String {
    let cpus = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!(
        "{}-{}, {} logical cpus",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cpus
    )
}

/// Stage timings of the detection pipeline on one scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneBench {
    pub machine: String,
    pub num_triangles: usize,
    pub num_candidates: usize,
    pub broad_phase: TimingStat,
    pub narrow_phase: TimingStat,
    pub response: TimingStat,
    pub detect_total: TimingStat,
}

impl SceneBench {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,median_s,min_s,max_s,reps\n");
        for (name, s) in [
            ("broad_phase", self.broad_phase),
            ("narrow_phase", self.narrow_phase),
            ("response", self.response),
            ("detect_total", self.detect_total),
        ] {
            out.push_str(&format!(
                "{name},{:.16e},{:.16e},{:.16e},{}\n",
                s.median_s, s.min_s, s.max_s, s.reps
            ));
        }
        out
    }
}

pub fn bench_scene(scene: &ContactScene, config: &CcdConfig, reps: usize) -> Result<SceneBench> {
    check_reps(reps)?;
    scene.validate()?;
    let scale = scene.scale();
    let pad = config.aabb_pad_factor * scale;
    let area_tol = config.area_tol_factor * scale * scale;
    let coeff_scale = scale * scale * scale;
    let root_cfg = RootConfig {
        root_tol: config.root_tol,
        degeneracy_tol: config.degeneracy_tol,
        newton_iters: config.newton_iters,
    };
    let dt = scene.traj.dt;

    let broad_stat = time_reps(reps, || {
        broad::broad_phase(&scene.traj, &scene.triangles, pad, |i, j| {
            scene.admissible(i, j)
        })
        .len() as f64
    });
    let candidates = broad::broad_phase(&scene.traj, &scene.triangles, pad, |i, j| {
        scene.admissible(i, j)
    });

    // Narrow phase alone: the cubic, its roots, and the sufficiency checks
    // for every candidate pair, without response evaluation.
    let narrow_stat = time_reps(reps, || {
        let mut hits = 0usize;
        for &(i, j) in &candidates {
            let ta = scene.triangles[i];
            let tb = scene.triangles[j];
            for kind in ALL_SUBTESTS {
                let quad = event_node_quad(kind, ta, tb);
                let p = quad.map(|n| scene.traj.r0[n]);
                let w = quad.map(|n| scene.traj.v[n]);
                let coeffs = coplanarity_cubic(p, w);
                let found = match cubic_roots_in_interval(coeffs, dt, &root_cfg, coeff_scale) {
                    CubicRoots::Roots(roots) => roots
                        .into_iter()
                        .any(|s| sufficiency_at(kind, scene, (i, j), s, config, area_tol)),
                    CubicRoots::AlwaysCoplanar => [0.0, 0.5 * dt, dt]
                        .into_iter()
                        .any(|s| sufficiency_at(kind, scene, (i, j), s, config, area_tol)),
                };
                hits += found as usize;
            }
        }
        hits as f64
    });

    let field = detect_contacts(scene, config)?;
    let end = scene.traj.end_positions();
    let response_stat = time_reps(reps, || {
        let mut sum = 0.0;
        for e in &field.events {
            let quad = event_node_quad(e.kind, scene.triangles[e.tri_a], scene.triangles[e.tri_b]);
            let quad_end = quad.map(|n| end[n]);
            sum += event_response_at(e.kind, quad_end, area_tol).0;
        }
        sum
    });

    let total_stat = time_reps(reps, || {
        detect_contacts(scene, config)
            .map(|f| f.events.len() as f64)
            .unwrap_or(f64::NAN)
    });

    Ok(SceneBench {
        machine: machine_descriptor(),
        num_triangles: scene.triangles.len(),
        num_candidates: candidates.len(),
        broad_phase: broad_stat,
        narrow_phase: narrow_stat,
        response: response_stat,
        detect_total: total_stat,
    })
}

/// One row of the per-simulation inference table: the wall-clock time to
/// predict every step of the simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimInferenceRow {
    pub sim: String,
    pub num_nodes: usize,
    pub num_steps: usize,
    pub time: TimingStat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceBench {
    pub machine: String,
    /// Single forward pass on one representative sample.
    pub forward: TimingStat,
    pub per_sim: Vec<SimInferenceRow>,
}

impl InferenceBench {
    /// Per-simulation inference times, one row per simulation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sim,num_nodes,num_steps,median_s,min_s,max_s\n");
        for row in &self.per_sim {
            out.push_str(&format!(
                "{},{},{},{:.16e},{:.16e},{:.16e}\n",
                row.sim,
                row.num_nodes,
                row.num_steps,
                row.time.median_s,
                row.time.min_s,
                row.time.max_s
            ));
        }
        out
    }
}

pub fn bench_inference(
    params: &GnnParams,
    dataset: &Dataset,
    reps: usize,
) -> Result<InferenceBench> {
    check_reps(reps)?;
    let first = dataset
        .sims
        .first()
        .and_then(|s| s.samples.first())
        .ok_or_else(|| Error::InvalidConfig("dataset has no samples to benchmark".into()))?;
    let forward = time_reps(reps, || {
        predict_accelerations(first, params)
            .map(|y| y.iter().map(|v| v.x).sum())
            .unwrap_or(f64::NAN)
    });

    let mut per_sim = Vec::with_capacity(dataset.sims.len());
    for sim in &dataset.sims {
        let stat = time_reps(reps, || {
            let mut sum = 0.0;
            for sample in &sim.samples {
                match predict_accelerations(sample, params) {
                    Ok(y) => sum += y.iter().map(|v| v.x).sum::<f64>(),
                    Err(_) => return f64::NAN,
                }
            }
            sum
        });
        per_sim.push(SimInferenceRow {
            sim: sim.name.clone(),
            num_nodes: sim.samples.first().map_or(0, |s| s.num_nodes()),
            num_steps: sim.samples.len(),
            time: stat,
        });
    }

    Ok(InferenceBench {
        machine: machine_descriptor(),
        forward,
        per_sim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::GnnConfig;
    use crate::scene::{generate_scene, SceneSpec};

    #[test]
    fn timing_stat_orders_and_interpolates() {
        let odd = TimingStat::from_samples(vec![3.0, 1.0, 2.0]);
        assert_eq!((odd.min_s, odd.median_s, odd.max_s), (1.0, 2.0, 3.0));
        let even = TimingStat::from_samples(vec![4.0, 1.0, 2.0, 3.0]);
        assert_eq!(even.median_s, 2.5);
        assert_eq!(even.reps, 4);
    }

    #[test]
    fn too_few_repetitions_are_rejected() {
        let scene = generate_scene(&SceneSpec::RandomMicro {
            seed: 1,
            dt: 1.0,
            speed: 2.0,
        })
        .unwrap()
        .scene
        .to_contact_scene()
        .unwrap();
        assert!(bench_scene(&scene, &CcdConfig::default(), 2).is_err());
    }

    #[test]
    fn scene_bench_reports_ordered_finite_stats() {
        let scene = generate_scene(&SceneSpec::ParabolaSheets {
            dt: 1.0,
            resolution: 4,
            gap: 0.4,
            curvature: 0.5,
            approach_speed: None,
        })
        .unwrap()
        .scene
        .to_contact_scene()
        .unwrap();
        let b = bench_scene(&scene, &CcdConfig::default(), 3).unwrap();
        for s in [b.broad_phase, b.narrow_phase, b.response, b.detect_total] {
            assert!(s.min_s <= s.median_s && s.median_s <= s.max_s);
            assert!(s.min_s >= 0.0 && s.max_s.is_finite());
            assert_eq!(s.reps, 3);
        }
        assert!(b.num_candidates > 0);
        let csv = b.to_csv();
        assert!(csv.starts_with("stage,median_s"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn broad_phase_scales_with_mesh_size_advisory() {
        let scene_for = |resolution| {
            generate_scene(&SceneSpec::ParabolaSheets {
                dt: 1.0,
                resolution,
                gap: 0.4,
                curvature: 0.5,
                approach_speed: None,
            })
            .unwrap()
            .scene
            .to_contact_scene()
            .unwrap()
        };
        let small = bench_scene(&scene_for(3), &CcdConfig::default(), 5).unwrap();
        let large = bench_scene(&scene_for(9), &CcdConfig::default(), 5).unwrap();
        // Workload monotonicity is expected but noisy; report, never fail.
        if large.broad_phase.median_s < small.broad_phase.median_s {
            eprintln!(
                "advisory: broad phase timing inversion ({:.3e}s on {} tris vs {:.3e}s on {} tris)",
                large.broad_phase.median_s,
                large.num_triangles,
                small.broad_phase.median_s,
                small.num_triangles
            );
        }
        assert!(large.num_triangles > small.num_triangles);
    }

    #[test]
    fn inference_bench_rows_mirror_the_dataset() {
        let ds = generate_scene(&SceneSpec::UndulatingMembranes {
            dt: 0.025,
            resolution: 3,
            gap: 0.4,
            amplitude: 0.15,
            k1u: None,
            k2u: None,
            k1l: None,
            k2l: None,
            steps: 4,
            sims: 3,
            r_collision: 0.25,
            seed: 6,
        })
        .unwrap()
        .dataset
        .unwrap();
        let params = GnnParams::init(GnnConfig::tiny(4), 0).unwrap();
        let b = bench_inference(&params, &ds, 3).unwrap();
        assert_eq!(b.per_sim.len(), 3);
        for row in &b.per_sim {
            assert_eq!(row.num_nodes, 18);
            assert_eq!(row.num_steps, 4);
            assert!(row.time.median_s > 0.0);
        }
        let csv = b.to_csv();
        assert!(csv.starts_with("sim,num_nodes,num_steps,median_s"));
        assert_eq!(csv.lines().count(), 4);
        assert!(!b.machine.is_empty());
    }
}
