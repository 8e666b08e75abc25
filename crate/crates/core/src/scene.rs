//! Scene specifications, deterministic generators, and scene files.
//!
//! A scene file is JSON with two trajectory blocks (r0, v, dt) plus triangle
//! lists, ready for detection. Generators cover the regression scenes
//! (collinear edge-edge encounters, complete one-step tunneling), the
//! undulating-membrane training data with prescribed kinematic motion, and
//! randomized micro scenes for oracle comparisons. Every generator is a
//! deterministic function of its spec, including the seed.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::ccd::{ContactScene, Trajectory};
use crate::dataset::{Dataset, DatasetMeta, SimTrajectory, SplitLists};
use crate::error::{Error, Result};
use crate::graph::{assemble_graph_sample, NodeState};
use crate::jsonio;
use crate::mesh::{quad_to_tri, TriMesh};

type V3 = Vector3<f64>;

/// Wavenumbers the membrane sampler draws from.
pub const K_SET: [f64; 4] = [FRAC_PI_2, PI, 2.0 * PI, 4.0 * PI];

/// One body of a scene file: per-vertex start positions and velocities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BodyInit {
    pub r0: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl BodyInit {
    fn trajectory(&self, dt: f64) -> Trajectory {
        Trajectory {
            r0: self.r0.iter().map(|p| V3::new(p[0], p[1], p[2])).collect(),
            v: self.v.iter().map(|p| V3::new(p[0], p[1], p[2])).collect(),
            dt,
        }
    }

    fn from_parts(positions: &[V3], velocities: &[V3], triangles: Vec<[usize; 3]>) -> Self {
        BodyInit {
            r0: positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
            v: velocities.iter().map(|p| [p.x, p.y, p.z]).collect(),
            triangles,
        }
    }
}

/// Two-body scene over one time step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub dt: f64,
    pub body_a: BodyInit,
    pub body_b: BodyInit,
}

impl SceneFile {
    pub fn to_contact_scene(&self) -> Result<ContactScene> {
        ContactScene::two_body(
            &self.body_a.trajectory(self.dt),
            &self.body_a.triangles,
            &self.body_b.trajectory(self.dt),
            &self.body_b.triangles,
        )
    }

    /// Triangle-index range of a body inside the merged contact scene.
    pub fn body_triangles(&self, body: usize) -> std::ops::Range<usize> {
        let na = self.body_a.triangles.len();
        match body {
            0 => 0..na,
            _ => na..na + self.body_b.triangles.len(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        jsonio::load_json(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        jsonio::save_json(path, self)
    }
}

fn default_dt() -> f64 {
    1.0
}
fn default_membrane_dt() -> f64 {
    0.025
}
fn default_parabola_res() -> usize {
    8
}
fn default_membrane_res() -> usize {
    5
}
fn default_gap() -> f64 {
    0.4
}
fn default_curvature() -> f64 {
    0.5
}
fn default_amplitude() -> f64 {
    0.15
}
fn default_steps() -> usize {
    13
}
fn default_sims() -> usize {
    20
}
fn default_r_collision() -> f64 {
    0.25
}
fn default_speed() -> f64 {
    2.0
}

/// Everything needed to build a scene (and, for the membrane and parabola
/// generators, a kinematic dataset) deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum SceneSpec {
    /// Two in-plane strips sliding past each other while sharing an edge
    /// line, so the parallel edge-edge degeneracy is exercised without any
    /// true contact.
    CollinearEdges {
        #[serde(default = "default_dt")]
        dt: f64,
    },
    /// Two parabolic caps that swap sides completely within one step.
    ParabolaSheets {
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default = "default_parabola_res")]
        resolution: usize,
        #[serde(default = "default_gap")]
        gap: f64,
        #[serde(default = "default_curvature")]
        curvature: f64,
        /// Closing speed of the two bodies together; the default is fast
        /// enough that the sheets pass each other entirely.
        #[serde(default)]
        approach_speed: Option<f64>,
    },
    /// Two undulating sheets z = A sin(k1 x) sin(k2 y) +- gap/2 closing on
    /// each other: a crossing one-step scene plus a multi-step kinematic
    /// dataset of parabolic grazing passes whose apexes stop a hair short
    /// of contact: the true motion is contact-free, so contact events in a
    /// prediction always indicate prediction error.
    UndulatingMembranes {
        #[serde(default = "default_membrane_dt")]
        dt: f64,
        #[serde(default = "default_membrane_res")]
        resolution: usize,
        #[serde(default = "default_gap")]
        gap: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        /// Fixed wavenumbers; sampled from `K_SET` when absent.
        #[serde(default)]
        k1u: Option<f64>,
        #[serde(default)]
        k2u: Option<f64>,
        #[serde(default)]
        k1l: Option<f64>,
        #[serde(default)]
        k2l: Option<f64>,
        #[serde(default = "default_steps")]
        steps: usize,
        #[serde(default = "default_sims")]
        sims: usize,
        #[serde(default = "default_r_collision")]
        r_collision: f64,
        #[serde(default)]
        seed: u64,
    },
    /// A random pair of moving triangles, rejected until the start
    /// configuration is intersection free.
    RandomMicro {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default = "default_speed")]
        speed: f64,
    },
}

/// Output of a generator: the one-step scene and, where the spec defines
/// one, a kinematic training dataset.
#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub scene: SceneFile,
    pub dataset: Option<Dataset>,
}

pub fn generate_scene(spec: &SceneSpec) -> Result<GeneratedScene> {
    match spec {
        SceneSpec::CollinearEdges { dt } => {
            check_positive("dt", *dt)?;
            Ok(GeneratedScene {
                scene: collinear_edges_scene(*dt)?,
                dataset: None,
            })
        }
        SceneSpec::ParabolaSheets {
            dt,
            resolution,
            gap,
            curvature,
            approach_speed,
        } => {
            check_positive("dt", *dt)?;
            check_positive("gap", *gap)?;
            check_resolution(*resolution)?;
            if *curvature < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "curvature must be nonnegative, got {curvature}"
                )));
            }
            let (scene, dataset) =
                parabola_sheets(*dt, *resolution, *gap, *curvature, *approach_speed)?;
            Ok(GeneratedScene {
                scene,
                dataset: Some(dataset),
            })
        }
        SceneSpec::UndulatingMembranes {
            dt,
            resolution,
            gap,
            amplitude,
            k1u,
            k2u,
            k1l,
            k2l,
            steps,
            sims,
            r_collision,
            seed,
        } => {
            check_positive("dt", *dt)?;
            check_positive("gap", *gap)?;
            check_positive("r_collision", *r_collision)?;
            check_resolution(*resolution)?;
            if !(*amplitude >= 0.0 && *amplitude < 0.5 * *gap) {
                return Err(Error::InvalidConfig(format!(
                    "amplitude must satisfy 0 <= A < gap/2, got A={amplitude} gap={gap}"
                )));
            }
            if *steps < 2 {
                return Err(Error::InvalidConfig("need at least 2 steps".into()));
            }
            if *sims < 3 {
                return Err(Error::InvalidConfig(
                    "need at least 3 simulations for train/val/test splits".into(),
                ));
            }
            let (scene, dataset) = undulating_membranes(MembraneParams {
                dt: *dt,
                resolution: *resolution,
                gap: *gap,
                amplitude: *amplitude,
                k_fixed: [*k1u, *k2u, *k1l, *k2l],
                steps: *steps,
                sims: *sims,
                r_collision: *r_collision,
                seed: *seed,
            })?;
            Ok(GeneratedScene {
                scene,
                dataset: Some(dataset),
            })
        }
        SceneSpec::RandomMicro { seed, dt, speed } => {
            check_positive("dt", *dt)?;
            check_positive("speed", *speed)?;
            Ok(GeneratedScene {
                scene: random_micro(*seed, *dt, *speed)?,
                dataset: None,
            })
        }
    }
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "{name} must be positive, got {x}"
        )));
    }
    Ok(())
}

fn check_resolution(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "mesh resolution must be at least 2 nodes per side, got {n}"
        )));
    }
    Ok(())
}

/// Regular grid sheet over [0,1]^2 with `n` nodes per side and a height
/// function; returns the triangulated mesh (node id = iy * n + ix).
fn sheet_mesh(n: usize, z: impl Fn(f64, f64) -> f64) -> Result<TriMesh> {
    let h = 1.0 / (n - 1) as f64;
    let mut positions = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            let (x, y) = (ix as f64 * h, iy as f64 * h);
            positions.push(V3::new(x, y, z(x, y)));
        }
    }
    let mut quads = Vec::with_capacity((n - 1) * (n - 1));
    for iy in 0..n - 1 {
        for ix in 0..n - 1 {
            let a = iy * n + ix;
            quads.push([a, a + 1, a + n + 1, a + n]);
        }
    }
    quad_to_tri(positions, &quads)
}

/// The collinear edge-edge regression scene. Both strips live in the z = 0
/// plane; the large strip spans x in [0,3], y in [-1,0] and is static, while
/// the small one spans x in [5,6], y in [0,0.5] and races left so fast that
/// at the sampled instants (start, midpoint, end of step) it is never
/// x-adjacent to the large strip. The small strip's bottom edges share the
/// y = 0 line with the large strip's top edges for the whole step: a
/// parallel-degenerate edge-edge family with no true contact anywhere.
fn collinear_edges_scene(dt: f64) -> Result<SceneFile> {
    let mut pos_a = Vec::new();
    for y in [-1.0, 0.0] {
        for x in 0..4 {
            pos_a.push(V3::new(x as f64, y, 0.0));
        }
    }
    let quads_a: Vec<[usize; 4]> = (0..3).map(|i| [i, i + 1, i + 5, i + 4]).collect();
    let mesh_a = quad_to_tri(pos_a, &quads_a)?;

    let mut pos_b = Vec::new();
    for y in [0.0, 0.5] {
        for x in 0..3 {
            pos_b.push(V3::new(5.0 + 0.5 * x as f64, y, 0.0));
        }
    }
    let quads_b: Vec<[usize; 4]> = (0..2).map(|i| [i, i + 1, i + 4, i + 3]).collect();
    let mesh_b = quad_to_tri(pos_b, &quads_b)?;

    let vel_a = vec![V3::zeros(); mesh_a.num_nodes()];
    let vel_b = vec![V3::new(-16.0 / dt, 0.0, 0.0); mesh_b.num_nodes()];
    Ok(SceneFile {
        dt,
        body_a: BodyInit::from_parts(&mesh_a.positions_ref, &vel_a, mesh_a.triangles),
        body_b: BodyInit::from_parts(&mesh_b.positions_ref, &vel_b, mesh_b.triangles),
    })
}

/// Two parabolic caps facing each other across `gap`, closing fast enough
/// (by default) that they trade places entirely within the step: the
/// end-time configuration is again intersection free even though every
/// central element pair crossed. Also emits a single-simulation kinematic
/// dataset of the same uniform motion.
fn parabola_sheets(
    dt: f64,
    resolution: usize,
    gap: f64,
    curvature: f64,
    approach_speed: Option<f64>,
) -> Result<(SceneFile, Dataset)> {
    // Height of the rim above the apex on the mapped [-1,1]^2 domain.
    let depth = 2.0 * curvature;
    let closing = match approach_speed {
        Some(s) => {
            check_positive("approach_speed", s)?;
            s
        }
        None => 2.0 * (gap + depth) / dt,
    };
    let bowl = |x: f64, y: f64| {
        let (u, v) = (2.0 * x - 1.0, 2.0 * y - 1.0);
        curvature * (u * u + v * v)
    };
    let upper = sheet_mesh(resolution, |x, y| 0.5 * gap + bowl(x, y))?;
    let lower = sheet_mesh(resolution, |x, y| -0.5 * gap - bowl(x, y))?;
    let v_up = vec![V3::new(0.0, 0.0, -0.5 * closing); upper.num_nodes()];
    let v_lo = vec![V3::new(0.0, 0.0, 0.5 * closing); lower.num_nodes()];

    let scene = SceneFile {
        dt,
        body_a: BodyInit::from_parts(&upper.positions_ref, &v_up, upper.triangles.clone()),
        body_b: BodyInit::from_parts(&lower.positions_ref, &v_lo, lower.triangles.clone()),
    };

    // One uniform-motion simulation: the crossing happens inside step 0.
    let mesh = merge_sheets(&upper, &lower)?;
    let velocities: Vec<V3> = v_up.iter().chain(v_lo.iter()).copied().collect();
    let steps = 3;
    let mut samples = Vec::with_capacity(steps);
    let mut state: Vec<NodeState> = mesh
        .positions_ref
        .iter()
        .zip(velocities.iter())
        .map(|(&r, &v)| NodeState {
            r,
            v,
            a: V3::zeros(),
        })
        .collect();
    for k in 0..steps {
        let last = k + 1 == steps;
        let y: Vec<V3> = if last {
            state.iter().map(|s| s.v * (-2.0 / dt)).collect()
        } else {
            vec![V3::zeros(); state.len()]
        };
        samples.push(assemble_graph_sample(
            &mesh,
            state.clone(),
            &[closing],
            k as f64 * dt,
            dt,
            0.5 * gap,
            Some(y.clone()),
        )?);
        state = crate::gnn::integrate_step(&state, &y, dt)?;
    }
    let meta = DatasetMeta {
        r_collision: 0.5 * gap,
        l_c: gap,
        n_g: 1,
        dt,
        splits: SplitLists {
            train: vec!["sim_000".into()],
            val: vec![],
            test: vec![],
        },
        units: Default::default(),
    };
    let dataset = Dataset {
        meta,
        mesh,
        sims: vec![SimTrajectory {
            name: "sim_000".into(),
            samples,
        }],
    };
    Ok((scene, dataset))
}

/// Single mesh holding both sheets; lower-sheet node ids are offset.
fn merge_sheets(upper: &TriMesh, lower: &TriMesh) -> Result<TriMesh> {
    let offset = upper.num_nodes();
    let mut positions = upper.positions_ref.clone();
    positions.extend_from_slice(&lower.positions_ref);
    let mut triangles = upper.triangles.clone();
    triangles.extend(
        lower
            .triangles
            .iter()
            .map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]),
    );
    TriMesh::from_triangles(positions, triangles)
}

struct MembraneParams {
    dt: f64,
    resolution: usize,
    gap: f64,
    amplitude: f64,
    /// [k1u, k2u, k1l, k2l]; any None is sampled from `K_SET`.
    k_fixed: [Option<f64>; 4],
    steps: usize,
    sims: usize,
    r_collision: f64,
    seed: u64,
}

/// 8:1:1 split by position, at least one simulation in val and test.
pub fn split_8_1_1(names: &[String]) -> SplitLists {
    let n = names.len();
    let hold = (n / 10).max(1);
    let train = n - 2 * hold;
    SplitLists {
        train: names[..train].to_vec(),
        val: names[train..train + hold].to_vec(),
        test: names[train + hold..].to_vec(),
    }
}

/// Builds the crossing scene from the first simulation's geometry and the
/// kinematic dataset. Each simulation is a parabolic pass: the sheets fly
/// at each other, decelerate under a constant per-node target
/// acceleration, reach closest approach at mid-time, and recede
/// symmetrically. Every grid column stops a sampled sliver above zero
/// clearance, so the true trajectories never touch; a predictor whose
/// apex-step error exceeds that sliver on any column crosses the other
/// sheet there and emits contact events.
fn undulating_membranes(p: MembraneParams) -> Result<(SceneFile, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut scene = None;
    let mut sims = Vec::with_capacity(p.sims);
    let steps = p.steps;

    for s in 0..p.sims {
        let mut k = [0.0; 4];
        for (slot, fixed) in k.iter_mut().zip(p.k_fixed.iter()) {
            *slot = match fixed {
                Some(v) => {
                    check_positive("wavenumber", *v)?;
                    *v
                }
                None => K_SET[rng.gen_range(0..K_SET.len())],
            };
        }
        // Surface clearance left at the apex. Far below the free clearance
        // (>= gap - 2 * amplitude) and sized to the displacement error of a
        // converged surrogate, so the exact kinematics never cross while a
        // trained predictor's apex-step error routinely does.
        let clearance: f64 = rng.gen_range(1e-5..3e-5);

        let (a, gap) = (p.amplitude, p.gap);
        let upper = sheet_mesh(p.resolution, |x, y| {
            0.5 * gap + a * (k[0] * x).sin() * (k[1] * y).sin()
        })?;
        let lower = sheet_mesh(p.resolution, |x, y| {
            -0.5 * gap + a * (k[2] * x).sin() * (k[3] * y).sin()
        })?;

        if s == 0 {
            // Crossing variant for detection demos: each sheet sweeps 0.75
            // of the gap in one step, so the mean planes swap by half a gap.
            let v = 0.75 * gap / p.dt;
            let v_up = vec![V3::new(0.0, 0.0, -v); upper.num_nodes()];
            let v_lo = vec![V3::new(0.0, 0.0, v); lower.num_nodes()];
            scene = Some(SceneFile {
                dt: p.dt,
                body_a: BodyInit::from_parts(&upper.positions_ref, &v_up, upper.triangles.clone()),
                body_b: BodyInit::from_parts(&lower.positions_ref, &v_lo, lower.triangles.clone()),
            });
        }

        let mesh = merge_sheets(&upper, &lower)?;
        let n_upper = upper.num_nodes();
        // Both sheets sample the same (x, y) grid, so the gap between the
        // two piecewise-linear surfaces is minimized at a same-column node
        // pair at every instant. Each column dives as its own parabola:
        // the pair jointly covers that column's free clearance minus the
        // apex sliver, split unevenly between the sheets, and every node
        // brakes to a standstill exactly at mid-time. Each column's
        // clearance is then a parabola in time with minimum `clearance` at
        // t_mid, so the exact kinematics never cross, while the per-node
        // acceleration field is rough rather than a rigid translation.
        let t_mid = 0.5 * (steps - 1) as f64 * p.dt;
        let mut accel = vec![0.0; mesh.num_nodes()];
        for i in 0..n_upper {
            let c_col = upper.positions_ref[i].z - lower.positions_ref[i].z;
            let joint = c_col - clearance;
            if joint <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "column clearance {c_col} cannot absorb the apex sliver {clearance}"
                )));
            }
            // Per node: depth = accel * t_mid^2 / 2, apex at mid-time.
            let share: f64 = rng.gen_range(0.3..0.7);
            accel[i] = 2.0 * share * joint / (t_mid * t_mid);
            accel[n_upper + i] = 2.0 * (1.0 - share) * joint / (t_mid * t_mid);
        }

        let mut state: Vec<NodeState> = mesh
            .positions_ref
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let sign = if i < n_upper { -1.0 } else { 1.0 };
                NodeState {
                    r,
                    v: V3::new(0.0, 0.0, sign * accel[i] * t_mid),
                    a: V3::zeros(),
                }
            })
            .collect();
        // Targets are a constant per-node acceleration at every step,
        // including the last; the motion simply continues past the window.
        let y: Vec<V3> = (0..state.len())
            .map(|i| {
                let sign = if i < n_upper { 1.0 } else { -1.0 };
                V3::new(0.0, 0.0, sign * accel[i])
            })
            .collect();
        let mut samples = Vec::with_capacity(steps);
        for kstep in 0..steps {
            samples.push(assemble_graph_sample(
                &mesh,
                state.clone(),
                &[clearance, a],
                kstep as f64 * p.dt,
                p.dt,
                p.r_collision,
                Some(y.clone()),
            )?);
            let next = crate::gnn::integrate_step(&state, &y, p.dt)?;
            // Keep the stored acceleration feature consistent with the
            // motion: the acceleration that produced the new state.
            state = next
                .into_iter()
                .zip(y.iter())
                .map(|(mut st, &yk)| {
                    st.a = yk;
                    st
                })
                .collect();
        }
        sims.push(SimTrajectory {
            name: format!("sim_{s:03}"),
            samples,
        });
    }

    let names: Vec<String> = sims.iter().map(|s| s.name.clone()).collect();
    let meta = DatasetMeta {
        r_collision: p.r_collision,
        l_c: p.gap,
        n_g: 2,
        dt: p.dt,
        splits: split_8_1_1(&names),
        units: Default::default(),
    };
    let mesh = merge_sheets(
        &sheet_mesh(p.resolution, |_, _| 0.0)?,
        &sheet_mesh(p.resolution, |_, _| 0.0)?,
    )?;
    // The reference mesh stores the first simulation's undulated geometry;
    // per-step positions carry each simulation's own geometry.
    let mesh = TriMesh::from_triangles(
        sims[0].samples[0].nodes.iter().map(|n| n.r).collect(),
        mesh.triangles,
    )?;
    let dataset = Dataset {
        meta,
        mesh,
        sims,
    };
    Ok((scene.expect("at least one simulation"), dataset))
}

/// Random two-triangle scene with per-vertex velocities, resampled until
/// the triangles start well-shaped and separated.
fn random_micro(seed: u64, dt: f64, speed: f64) -> Result<SceneFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tri = |rng: &mut ChaCha8Rng| -> [V3; 3] {
        std::array::from_fn(|_| {
            V3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    };
    for _ in 0..1000 {
        let a = tri(&mut rng);
        let b = tri(&mut rng);
        let area = |t: &[V3; 3]| 0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm();
        if area(&a) < 1e-2 || area(&b) < 1e-2 {
            continue;
        }
        if crate::ccd::oracle::tri_tri_intersect(a, b, 1e-9) {
            continue;
        }
        let vel = |rng: &mut ChaCha8Rng| -> Vec<V3> {
            (0..3)
                .map(|_| {
                    V3::new(
                        rng.gen_range(-speed..speed),
                        rng.gen_range(-speed..speed),
                        rng.gen_range(-speed..speed),
                    )
                })
                .collect()
        };
        let va = vel(&mut rng);
        let vb = vel(&mut rng);
        return Ok(SceneFile {
            dt,
            body_a: BodyInit::from_parts(&a, &va, vec![[0, 1, 2]]),
            body_b: BodyInit::from_parts(&b, &vb, vec![[0, 1, 2]]),
        });
    }
    Err(Error::InvalidConfig(
        "could not sample a separated start configuration".into(),
    ))
}
