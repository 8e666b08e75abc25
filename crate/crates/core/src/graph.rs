//! Per-step graph assembly: node states, world-edge search, edge features.

use nalgebra::Vector3;
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
}

impl NodeState {
    pub fn check_finite(&self, node: usize) -> Result<()> {
        for (what, vec) in [("position", self.r), ("velocity", self.v), ("acceleration", self.a)] {
            if !(vec.x.is_finite() && vec.y.is_finite() && vec.z.is_finite()) {
                return Err(Error::NonFinite {
                    node,
                    what: what.into(),
                });
            }
        }
        Ok(())
    }

    /// Flat 9-component feature vector [r, v, a].
    pub fn features(&self) -> [f64; 9] {
        [
            self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z, self.a.x, self.a.y,
            self.a.z,
        ]
    }
}

/// One time step of a simulation, ready for the network.
#[derive(Debug, Clone)]
pub struct GraphSample {
    /// Graph-level features [t, dt, globals...].
    pub g: Vec<f64>,
    pub nodes: Vec<NodeState>,
    pub mesh_edges: Vec<(usize, usize)>,
    pub mesh_edge_feats: Vec<[f64; 4]>,
    pub world_edges: Vec<(usize, usize)>,
    pub world_edge_feats: Vec<[f64; 4]>,
    /// Ground-truth accelerations, when known.
    pub targets: Option<Vec<Vector3<f64>>>,
}

impl GraphSample {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn time(&self) -> f64 {
        self.g[0]
    }

    pub fn dt(&self) -> f64 {
        self.g[1]
    }
}

/// All directed node pairs within `r_collision` of each other, minus
/// excluded pairs. Distances come from an explicit per-pair difference; the
/// boundary (distance exactly R) is included. Output is sorted.
pub fn build_world_edges(
    positions: &[Vector3<f64>],
    r_collision: f64,
    excluded: &HashSet<(usize, usize)>,
) -> Vec<(usize, usize)> {
    let n = positions.len();
    let mut edges = Vec::new();
    for k in 0..n {
        for l in 0..n {
            if k == l || excluded.contains(&(k, l)) {
                continue;
            }
            let d = positions[k] - positions[l];
            if d.norm() <= r_collision {
                edges.push((k, l));
            }
        }
    }
    edges
}

/// Edge feature rows [dx, dy, dz, |d|] with d = r_i - r_j for edge (i, j).
pub fn edge_features(positions: &[Vector3<f64>], pairs: &[(usize, usize)]) -> Vec<[f64; 4]> {
    pairs
        .iter()
        .map(|&(i, j)| {
            let d = positions[i] - positions[j];
            [d.x, d.y, d.z, d.norm()]
        })
        .collect()
}

/// Builds a complete graph sample for one step: graph features
/// [t, dt, globals...], mesh-edge features from current positions, and
/// freshly searched world edges (mesh edges and self pairs excluded).
pub fn assemble_graph_sample(
    mesh: &TriMesh,
    nodes: Vec<NodeState>,
    globals: &[f64],
    t: f64,
    dt: f64,
    r_collision: f64,
    targets: Option<Vec<Vector3<f64>>>,
) -> Result<GraphSample> {
    if nodes.len() != mesh.num_nodes() {
        return Err(Error::DimMismatch(format!(
            "mesh has {} nodes but state has {}",
            mesh.num_nodes(),
            nodes.len()
        )));
    }
    if let Some(y) = &targets {
        if y.len() != nodes.len() {
            return Err(Error::DimMismatch(format!(
                "{} nodes but {} target rows",
                nodes.len(),
                y.len()
            )));
        }
        for (i, yi) in y.iter().enumerate() {
            if !(yi.x.is_finite() && yi.y.is_finite() && yi.z.is_finite()) {
                return Err(Error::NonFinite {
                    node: i,
                    what: "target acceleration".into(),
                });
            }
        }
    }
    for (i, s) in nodes.iter().enumerate() {
        s.check_finite(i)?;
    }
    if !(t.is_finite() && dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("bad time step t={t}, dt={dt}")));
    }
    if !(r_collision.is_finite() && r_collision >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "collision radius must be finite and nonnegative, got {r_collision}"
        )));
    }

    let positions: Vec<Vector3<f64>> = nodes.iter().map(|s| s.r).collect();
    let mut g = Vec::with_capacity(2 + globals.len());
    g.push(t);
    g.push(dt);
    g.extend_from_slice(globals);

    let excluded: HashSet<(usize, usize)> = mesh.mesh_edges.iter().copied().collect();
    let world_edges = build_world_edges(&positions, r_collision, &excluded);
    let mesh_edge_feats = edge_features(&positions, &mesh.mesh_edges);
    let world_edge_feats = edge_features(&positions, &world_edges);

    Ok(GraphSample {
        g,
        nodes,
        mesh_edges: mesh.mesh_edges.clone(),
        mesh_edge_feats,
        world_edges,
        world_edge_feats,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn st(r: Vector3<f64>) -> NodeState {
        NodeState {
            r,
            v: Vector3::zeros(),
            a: Vector3::zeros(),
        }
    }

    fn tiny_mesh() -> TriMesh {
        TriMesh::from_triangles(
            vec![
                v(0.0, 0.0, 0.0),
                v(1.0, 0.0, 0.0),
                v(0.0, 1.0, 0.0),
                v(5.0, 5.0, 0.25),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn world_edges_exclude_mesh_edges_and_self() {
        let mesh = tiny_mesh();
        let nodes: Vec<NodeState> = mesh.positions_ref.iter().map(|&p| st(p)).collect();
        let sample =
            assemble_graph_sample(&mesh, nodes, &[], 0.0, 0.1, 2.0, None).unwrap();
        // Nodes 0,1,2 are all within 2.0 of each other but connected by mesh
        // edges; node 3 is far from everything.
        assert!(sample.world_edges.is_empty());
        for &(i, j) in &sample.world_edges {
            assert_ne!(i, j);
        }
    }

    #[test]
    fn boundary_distance_is_included() {
        let positions = vec![v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0)];
        let edges = build_world_edges(&positions, 2.0, &HashSet::new());
        assert_eq!(edges, vec![(0, 1), (1, 0)]);
        let edges = build_world_edges(&positions, 1.9999999, &HashSet::new());
        assert!(edges.is_empty());
    }

    #[test]
    fn graph_features_are_time_dt_globals() {
        let mesh = tiny_mesh();
        let nodes: Vec<NodeState> = mesh.positions_ref.iter().map(|&p| st(p)).collect();
        let sample =
            assemble_graph_sample(&mesh, nodes, &[7.0, 8.0], 1.5, 0.025, 0.1, None).unwrap();
        assert_eq!(sample.g, vec![1.5, 0.025, 7.0, 8.0]);
    }

    #[test]
    fn edge_feature_norm_matches_components() {
        let positions = vec![v(1.0, 2.0, 2.0), v(0.0, 0.0, 0.0)];
        let feats = edge_features(&positions, &[(0, 1)]);
        assert_eq!(feats[0], [1.0, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn translation_invariance_exact_on_dyadic_inputs() {
        let a = vec![v(0.25, -1.5, 3.0), v(2.0, 0.75, -0.5)];
        let b: Vec<_> = a.iter().map(|p| p + v(16.0, -8.0, 4.0)).collect();
        assert_eq!(
            edge_features(&a, &[(0, 1), (1, 0)]),
            edge_features(&b, &[(0, 1), (1, 0)])
        );
    }

    #[test]
    fn non_finite_velocity_names_node() {
        let mesh = tiny_mesh();
        let mut nodes: Vec<NodeState> = mesh.positions_ref.iter().map(|&p| st(p)).collect();
        nodes[2].v.x = f64::NAN;
        let err = assemble_graph_sample(&mesh, nodes, &[], 0.0, 0.1, 1.0, None).unwrap_err();
        match err {
            Error::NonFinite { node, ref what } => {
                assert_eq!(node, 2);
                assert_eq!(what, "velocity");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    proptest! {
        /// The grid-free search must agree with a plain quadratic scan.
        #[test]
        fn world_edges_match_brute_force(
            pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 2..30),
            radius in 0.1f64..8.0,
        ) {
            let positions: Vec<Vector3<f64>> =
                pts.iter().map(|&(x, y, z)| v(x, y, z)).collect();
            let edges = build_world_edges(&positions, radius, &HashSet::new());

            let mut expect = Vec::new();
            for i in 0..positions.len() {
                for j in 0..positions.len() {
                    if i != j {
                        let dx = positions[i].x - positions[j].x;
                        let dy = positions[i].y - positions[j].y;
                        let dz = positions[i].z - positions[j].z;
                        if (dx * dx + dy * dy + dz * dz).sqrt() <= radius {
                            expect.push((i, j));
                        }
                    }
                }
            }
            prop_assert_eq!(edges, expect);
        }

        /// Features built from differences do not depend on a common shift
        /// beyond roundoff.
        #[test]
        fn translation_changes_features_only_by_roundoff(
            pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 2..10),
            shift in (-100.0f64..100.0, -100.0f64..100.0, -100.0f64..100.0),
        ) {
            let a: Vec<Vector3<f64>> = pts.iter().map(|&(x, y, z)| v(x, y, z)).collect();
            let s = v(shift.0, shift.1, shift.2);
            let b: Vec<Vector3<f64>> = a.iter().map(|p| p + s).collect();
            let pairs: Vec<(usize, usize)> =
                (1..a.len()).map(|i| (0, i)).collect();
            let fa = edge_features(&a, &pairs);
            let fb = edge_features(&b, &pairs);
            for (ra, rb) in fa.iter().zip(fb.iter()) {
                for k in 0..4 {
                    prop_assert!((ra[k] - rb[k]).abs() <= 1e-9 * (1.0 + ra[k].abs()));
                }
            }
        }
    }
}
