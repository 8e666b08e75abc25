//! Triangle mesh container, quad splitting, and the directed mesh-edge set.

use nalgebra::Vector3;
use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Relative factor applied to (bounding-box diagonal)^2 when rejecting
/// degenerate triangles.
pub const AREA_TOL_FACTOR: f64 = 1e-14;

/// Relative tolerance for the quad-diagonal tie break.
pub const DIAGONAL_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub positions_ref: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    /// Directed closure of the triangle edges, sorted lexicographically.
    /// Both (i, j) and (j, i) are present for every mesh edge.
    pub mesh_edges: Vec<(usize, usize)>,
}

pub fn triangle_area(p0: Vector3<f64>, p1: Vector3<f64>, p2: Vector3<f64>) -> f64 {
    0.5 * (p1 - p0).cross(&(p2 - p0)).norm()
}

pub fn bbox_diagonal(points: &[Vector3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (hi - lo).norm()
}

/// Builds the sorted directed edge list of a triangle soup: every triangle
/// side appears in both orientations, duplicates collapsed.
pub fn build_mesh_edges(triangles: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for tri in triangles {
        for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
            set.insert((a, b));
            set.insert((b, a));
        }
    }
    set.into_iter().collect()
}

impl TriMesh {
    pub fn from_triangles(
        positions_ref: Vec<Vector3<f64>>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Self> {
        for (i, p) in positions_ref.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::NonFinite {
                    node: i,
                    what: "reference position".into(),
                });
            }
        }
        let n = positions_ref.len();
        let area_tol = AREA_TOL_FACTOR * bbox_diagonal(&positions_ref).powi(2);
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(Error::InvalidMesh(format!(
                        "triangle {t} references node {v} but mesh has {n} nodes"
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} has repeated node indices {:?}",
                    tri
                )));
            }
            let area = triangle_area(
                positions_ref[tri[0]],
                positions_ref[tri[1]],
                positions_ref[tri[2]],
            );
            if area < area_tol {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} is degenerate (area {area:.3e} < tol {area_tol:.3e})"
                )));
            }
        }
        let mesh_edges = build_mesh_edges(&triangles);
        Ok(TriMesh {
            positions_ref,
            triangles,
            mesh_edges,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.positions_ref.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }
}

/// Splits each quad along its shorter diagonal (in reference coordinates)
/// and builds the resulting triangle mesh.
///
/// Ties within `DIAGONAL_TIE_TOL` relative are broken toward the diagonal
/// with the lower node index pair.
pub fn quad_to_tri(positions_ref: Vec<Vector3<f64>>, quads: &[[usize; 4]]) -> Result<TriMesh> {
    let n = positions_ref.len();
    let area_tol = AREA_TOL_FACTOR * bbox_diagonal(&positions_ref).powi(2);
    let mut triangles = Vec::with_capacity(quads.len() * 2);
    for (qi, q) in quads.iter().enumerate() {
        for &v in q {
            if v >= n {
                return Err(Error::InvalidMesh(format!(
                    "quad {qi} references node {v} but mesh has {n} nodes"
                )));
            }
        }
        for a in 0..4 {
            for b in (a + 1)..4 {
                if q[a] == q[b] {
                    return Err(Error::InvalidMesh(format!(
                        "quad {qi} has repeated node indices {:?}",
                        q
                    )));
                }
            }
        }
        let p = [
            positions_ref[q[0]],
            positions_ref[q[1]],
            positions_ref[q[2]],
            positions_ref[q[3]],
        ];
        // Any collinear corner triple makes both splits unusable.
        for (a, b, c) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
            if triangle_area(p[a], p[b], p[c]) < area_tol {
                return Err(Error::DegenerateQuad { index: qi });
            }
        }
        let d02 = (p[2] - p[0]).norm();
        let d13 = (p[3] - p[1]).norm();
        let tie = (d02 - d13).abs() <= DIAGONAL_TIE_TOL * d02.max(d13);
        let use02 = if tie {
            let key02 = (q[0].min(q[2]), q[0].max(q[2]));
            let key13 = (q[1].min(q[3]), q[1].max(q[3]));
            key02 < key13
        } else {
            d02 < d13
        };
        if use02 {
            triangles.push([q[0], q[1], q[2]]);
            triangles.push([q[0], q[2], q[3]]);
        } else {
            triangles.push([q[1], q[2], q[3]]);
            triangles.push([q[1], q[3], q[0]]);
        }
    }
    TriMesh::from_triangles(positions_ref, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    /// Planar quad grid: (nx+1)*(ny+1) nodes over [0,sx]x[0,sy].
    fn grid_quads(nx: usize, ny: usize, sx: f64, sy: f64) -> (Vec<Vector3<f64>>, Vec<[usize; 4]>) {
        let mut pos = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                pos.push(v(
                    sx * i as f64 / nx as f64,
                    sy * j as f64 / ny as f64,
                    0.0,
                ));
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut quads = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                quads.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        (pos, quads)
    }

    /// Cylindrical shell: `rings+1` rings of `around` nodes, periodic in the
    /// angular direction.
    fn cylinder_quads(rings: usize, around: usize) -> (Vec<Vector3<f64>>, Vec<[usize; 4]>) {
        let mut pos = Vec::new();
        for j in 0..=rings {
            for i in 0..around {
                let th = std::f64::consts::TAU * i as f64 / around as f64;
                pos.push(v(th.cos(), th.sin(), j as f64 / rings as f64));
            }
        }
        let id = |i: usize, j: usize| j * around + (i % around);
        let mut quads = Vec::new();
        for j in 0..rings {
            for i in 0..around {
                quads.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        (pos, quads)
    }

    #[test]
    fn unit_square_tie_breaks_to_low_diagonal() {
        let pos = vec![
            v(0.0, 0.0, 0.0),
            v(1.0, 0.0, 0.0),
            v(1.0, 1.0, 0.0),
            v(0.0, 1.0, 0.0),
        ];
        let mesh = quad_to_tri(pos, &[[0, 1, 2, 3]]).unwrap();
        assert_eq!(mesh.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn stretched_quad_picks_shorter_diagonal() {
        let pos = vec![
            v(0.0, 0.0, 0.0),
            v(2.0, 0.0, 0.0),
            v(2.2, 1.0, 0.0),
            v(0.0, 1.0, 0.0),
        ];
        let mesh = quad_to_tri(pos, &[[0, 1, 2, 3]]).unwrap();
        assert_eq!(mesh.triangles, vec![[1, 2, 3], [1, 3, 0]]);
    }

    #[test]
    fn repeated_quad_index_rejected() {
        let pos = vec![v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(1.0, 1.0, 0.0)];
        let err = quad_to_tri(pos, &[[0, 1, 2, 1]]).unwrap_err();
        assert!(matches!(err, Error::InvalidMesh(_)), "{err}");
    }

    #[test]
    fn collinear_quad_rejected_with_index() {
        let pos = vec![
            v(0.0, 0.0, 0.0),
            v(1.0, 0.0, 0.0),
            v(2.0, 0.0, 0.0),
            v(0.0, 1.0, 0.0),
            v(3.0, 5.0, 0.0),
        ];
        let err = quad_to_tri(pos.clone(), &[[0, 1, 2, 3]]).unwrap_err();
        match err {
            Error::DegenerateQuad { index } => assert_eq!(index, 0),
            other => panic!("unexpected error {other}"),
        }
        // A healthy quad before it shifts the reported index.
        let err = quad_to_tri(pos, &[[0, 1, 4, 3], [0, 1, 2, 3]]).unwrap_err();
        match err {
            Error::DegenerateQuad { index } => assert_eq!(index, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn single_triangle_has_six_directed_edges() {
        let edges = build_mesh_edges(&[[0, 1, 2]]);
        assert_eq!(edges.len(), 6);
        assert_eq!(
            edges,
            vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
        );
    }

    #[test]
    fn shared_edge_counted_once_per_direction() {
        let edges = build_mesh_edges(&[[0, 1, 2], [0, 2, 3]]);
        assert_eq!(edges.len(), 10);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let pos = vec![v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(2.0, 0.0, 0.0)];
        assert!(TriMesh::from_triangles(pos, vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn out_of_range_triangle_rejected() {
        let pos = vec![v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0)];
        assert!(TriMesh::from_triangles(pos, vec![[0, 1, 3]]).is_err());
    }

    #[test]
    fn valve_scale_cylinder_edge_count() {
        // A tube with the same graph shape as the 1014-node, 1872-triangle
        // shell mesh: 12 rings of 78 quads. The directed edge count must
        // come out at 5772.
        let (pos, quads) = cylinder_quads(12, 78);
        let mesh = quad_to_tri(pos, &quads).unwrap();
        assert_eq!(mesh.num_nodes(), 1014);
        assert_eq!(mesh.num_triangles(), 1872);
        assert_eq!(mesh.mesh_edges.len(), 5772);
    }

    #[test]
    fn two_sheet_membrane_edge_count() {
        // Two 25x25-node square sheets (24x24 quads each): 1250 nodes,
        // 2304 triangles, 7104 directed mesh edges.
        let (pos_a, quads_a) = grid_quads(24, 24, 1.0, 1.0);
        let offset = pos_a.len();
        let mut pos = pos_a.clone();
        pos.extend(pos_a.iter().map(|p| p + v(0.0, 0.0, 1.0)));
        let mut quads = quads_a.clone();
        quads.extend(quads_a.iter().map(|q| {
            [
                q[0] + offset,
                q[1] + offset,
                q[2] + offset,
                q[3] + offset,
            ]
        }));
        let mesh = quad_to_tri(pos, &quads).unwrap();
        assert_eq!(mesh.num_nodes(), 1250);
        assert_eq!(mesh.num_triangles(), 2304);
        assert_eq!(mesh.mesh_edges.len(), 7104);
    }

    proptest! {
        #[test]
        fn directed_edges_are_symmetric_and_sorted(
            tris in proptest::collection::vec((0usize..20, 0usize..20, 0usize..20), 1..40)
        ) {
            let tris: Vec<[usize; 3]> = tris
                .into_iter()
                .filter(|(a, b, c)| a != b && b != c && a != c)
                .map(|(a, b, c)| [a, b, c])
                .collect();
            let edges = build_mesh_edges(&tris);
            let mut sorted = edges.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(&sorted, &edges);
            for &(i, j) in &edges {
                prop_assert_ne!(i, j);
                prop_assert!(edges.binary_search(&(j, i)).is_ok());
            }
        }
    }
}
