//! Dataset bundles on disk.
//!
//! A bundle is a directory with `meta.json` (collision radius, length scale,
//! global-feature count, time step, split lists, units), `mesh.json`
//! (reference positions plus triangles or quads), and per-step records
//! `steps/<sim>/<k>.json` holding t, globals, per-node r/v/a, and target
//! accelerations. Every float is written with 17 significant digits so a
//! save/load cycle is bit-identical.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{assemble_graph_sample, GraphSample, NodeState};
use crate::jsonio;
use crate::mesh::{quad_to_tri, TriMesh};

/// Simulation names belonging to each split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitLists {
    pub fn get(&self, split: &str) -> Result<&[String]> {
        match split {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidConfig(format!(
                "unknown split {other:?}; expected train, val, or test"
            ))),
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(self.val.iter()).chain(self.test.iter())
    }
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// World-edge collision radius R.
    pub r_collision: f64,
    /// Characteristic length scale normalizing contact responses and errors.
    pub l_c: f64,
    /// Number of problem globals per step (g gains 2 more slots for t, dt).
    pub n_g: usize,
    pub dt: f64,
    pub splits: SplitLists,
    #[serde(default)]
    pub units: BTreeMap<String, String>,
}

impl DatasetMeta {
    fn validate(&self, path: &str) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::schema(path, format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.r_collision.is_finite() && self.r_collision >= 0.0) {
            return Err(Error::schema(
                path,
                format!("r_collision must be nonnegative, got {}", self.r_collision),
            ));
        }
        if !(self.l_c.is_finite() && self.l_c > 0.0) {
            return Err(Error::schema(path, format!("l_c must be positive, got {}", self.l_c)));
        }
        let mut seen = HashSet::new();
        for name in self.splits.all() {
            if !seen.insert(name.as_str()) {
                return Err(Error::schema(
                    path,
                    format!("simulation {name:?} appears in more than one split"),
                ));
            }
        }
        Ok(())
    }
}

/// Contents of `mesh.json`: exactly one of `triangles` or `quads`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshRecord {
    pub positions_ref: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triangles: Option<Vec<[usize; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quads: Option<Vec<[usize; 4]>>,
}

impl MeshRecord {
    pub fn into_mesh(self, path: &str) -> Result<TriMesh> {
        let positions: Vec<Vector3<f64>> =
            self.positions_ref.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
        match (self.triangles, self.quads) {
            (Some(tris), None) => TriMesh::from_triangles(positions, tris),
            (None, Some(quads)) => quad_to_tri(positions, &quads),
            (Some(_), Some(_)) => {
                Err(Error::schema(path, "mesh defines both triangles and quads"))
            }
            (None, None) => Err(Error::schema(path, "mesh defines neither triangles nor quads")),
        }
    }
}

/// On-disk form of one step record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub globals: Vec<f64>,
    pub r: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    pub a: Vec<[f64; 3]>,
    /// Target accelerations; may be absent only on the final step, where the
    /// loader synthesizes the zero-displacement target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<[f64; 3]>>,
}

/// All steps of one simulation, assembled into graph samples in time order.
#[derive(Debug, Clone)]
pub struct SimTrajectory {
    pub name: String,
    pub samples: Vec<GraphSample>,
}

/// A fully loaded and validated bundle.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub mesh: TriMesh,
    /// Sorted by simulation name.
    pub sims: Vec<SimTrajectory>,
}

fn to_vec3(p: [f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

fn to_arr3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Zero-displacement target: v dt + y dt^2 / 2 = 0.
pub fn terminal_zero_target(v: &Vector3<f64>, dt: f64) -> Vector3<f64> {
    v * (-2.0 / dt)
}

fn sample_from_record(
    rec: &StepRecord,
    mesh: &TriMesh,
    meta: &DatasetMeta,
    is_last: bool,
    path: &str,
) -> Result<GraphSample> {
    let n = mesh.num_nodes();
    if rec.globals.len() != meta.n_g {
        return Err(Error::schema(
            path,
            format!("field globals has {} values, meta.n_g says {}", rec.globals.len(), meta.n_g),
        ));
    }
    for (field, len) in [("r", rec.r.len()), ("v", rec.v.len()), ("a", rec.a.len())] {
        if len != n {
            return Err(Error::schema(
                path,
                format!("field {field} has {len} rows, mesh has {n} nodes"),
            ));
        }
    }
    let nodes: Vec<NodeState> = (0..n)
        .map(|i| NodeState {
            r: to_vec3(rec.r[i]),
            v: to_vec3(rec.v[i]),
            a: to_vec3(rec.a[i]),
        })
        .collect();
    let targets: Vec<Vector3<f64>> = match &rec.y {
        Some(rows) => {
            if rows.len() != n {
                return Err(Error::schema(
                    path,
                    format!("field y has {} rows, mesh has {n} nodes", rows.len()),
                ));
            }
            rows.iter().map(|p| to_vec3(*p)).collect()
        }
        None if is_last => nodes.iter().map(|s| terminal_zero_target(&s.v, meta.dt)).collect(),
        None => {
            return Err(Error::schema(
                path,
                "field y missing on a non-final step; targets may be omitted only on the last step",
            ));
        }
    };
    assemble_graph_sample(
        mesh,
        nodes,
        &rec.globals,
        rec.t,
        meta.dt,
        meta.r_collision,
        Some(targets),
    )
    .map_err(|e| Error::schema(path, e.to_string()))
}

fn load_sim(dir: &Path, name: &str, mesh: &TriMesh, meta: &DatasetMeta) -> Result<SimTrajectory> {
    let mut indices: Vec<usize> = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let fname = entry.file_name();
        let fname = fname.to_string_lossy();
        if let Some(stem) = fname.strip_suffix(".json") {
            match stem.parse::<usize>() {
                Ok(k) => indices.push(k),
                Err(_) => {
                    return Err(Error::schema(
                        entry.path().display().to_string(),
                        format!("simulation {name}: step files must be named <k>.json"),
                    ));
                }
            }
        }
    }
    if indices.is_empty() {
        return Err(Error::schema(
            dir.display().to_string(),
            format!("simulation {name} has no step files"),
        ));
    }
    indices.sort_unstable();
    let count = *indices.last().unwrap() + 1;
    if indices.len() != count {
        for (want, &have) in indices.iter().enumerate() {
            if want != have {
                return Err(Error::schema(
                    dir.display().to_string(),
                    format!("simulation {name} is missing step {want}"),
                ));
            }
        }
    }

    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let path = dir.join(format!("{k}.json"));
        let path_str = path.display().to_string();
        let rec: StepRecord = jsonio::load_json(&path)?;
        samples.push(sample_from_record(&rec, mesh, meta, k + 1 == count, &path_str)?);
    }
    Ok(SimTrajectory {
        name: name.to_string(),
        samples,
    })
}

impl Dataset {
    /// Loads and fully validates a bundle directory.
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let meta_path = root.join("meta.json");
        let meta: DatasetMeta = jsonio::load_json(&meta_path)?;
        meta.validate(&meta_path.display().to_string())?;

        let mesh_path = root.join("mesh.json");
        let mesh_rec: MeshRecord = jsonio::load_json(&mesh_path)?;
        let mesh = mesh_rec.into_mesh(&mesh_path.display().to_string())?;

        let steps_root = root.join("steps");
        let mut sim_dirs: Vec<(String, PathBuf)> = Vec::new();
        let entries = std::fs::read_dir(&steps_root)
            .map_err(|e| Error::io(steps_root.display().to_string(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(steps_root.display().to_string(), e))?;
            if entry.path().is_dir() {
                sim_dirs.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
            }
        }
        sim_dirs.sort();
        if sim_dirs.is_empty() {
            return Err(Error::schema(
                steps_root.display().to_string(),
                "bundle contains no simulations",
            ));
        }

        let known: HashSet<&str> = sim_dirs.iter().map(|(n, _)| n.as_str()).collect();
        for name in meta.splits.all() {
            if !known.contains(name.as_str()) {
                return Err(Error::schema(
                    meta_path.display().to_string(),
                    format!("split lists reference unknown simulation {name:?}"),
                ));
            }
        }

        let mut sims = Vec::with_capacity(sim_dirs.len());
        for (name, dir) in &sim_dirs {
            sims.push(load_sim(dir, name, &mesh, &meta)?);
        }
        Ok(Dataset { meta, mesh, sims })
    }

    /// Writes the bundle under `root`, creating directories as needed.
    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        jsonio::save_json(root.join("meta.json"), &self.meta)?;
        let mesh_rec = MeshRecord {
            positions_ref: self.mesh.positions_ref.iter().map(to_arr3).collect(),
            triangles: Some(self.mesh.triangles.clone()),
            quads: None,
        };
        jsonio::save_json(root.join("mesh.json"), &mesh_rec)?;
        for sim in &self.sims {
            for (k, sample) in sim.samples.iter().enumerate() {
                let rec = StepRecord {
                    t: sample.time(),
                    globals: sample.g[2..].to_vec(),
                    r: sample.nodes.iter().map(|s| to_arr3(&s.r)).collect(),
                    v: sample.nodes.iter().map(|s| to_arr3(&s.v)).collect(),
                    a: sample.nodes.iter().map(|s| to_arr3(&s.a)).collect(),
                    y: sample
                        .targets
                        .as_ref()
                        .map(|ys| ys.iter().map(to_arr3).collect()),
                };
                jsonio::save_json(root.join("steps").join(&sim.name).join(format!("{k}.json")), &rec)?;
            }
        }
        Ok(())
    }

    pub fn sim(&self, name: &str) -> Option<&SimTrajectory> {
        self.sims.iter().find(|s| s.name == name)
    }

    /// Simulations of a named split, in split-list order.
    pub fn split_sims(&self, split: &str) -> Result<Vec<&SimTrajectory>> {
        let names = self.meta.splits.get(split)?;
        names
            .iter()
            .map(|n| {
                self.sim(n).ok_or_else(|| {
                    Error::InvalidConfig(format!("split {split} references unknown simulation {n:?}"))
                })
            })
            .collect()
    }

    /// All samples of a split flattened in (sim, step) order.
    pub fn split_samples(&self, split: &str) -> Result<Vec<&GraphSample>> {
        Ok(self
            .split_sims(split)?
            .into_iter()
            .flat_map(|s| s.samples.iter())
            .collect())
    }

    pub fn num_samples(&self) -> usize {
        self.sims.iter().map(|s| s.samples.len()).sum()
    }
}
