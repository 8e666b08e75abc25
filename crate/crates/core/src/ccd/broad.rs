//! Swept axis-aligned bounding boxes and the all-pairs broad phase.

use nalgebra::Vector3;

use super::Trajectory;

#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub lo: Vector3<f64>,
    pub hi: Vector3<f64>,
}

impl Aabb {
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.lo[k] <= other.hi[k] && other.lo[k] <= self.hi[k])
    }
}

/// Box covering a triangle's three vertices at both ends of the step,
/// inflated by `pad` on every side. Linear motion keeps the swept triangle
/// inside the hull of its endpoints, so this is conservative.
pub fn swept_aabb(traj: &Trajectory, tri: &[usize; 3], pad: f64) -> Aabb {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &node in tri {
        for s in [0.0, traj.dt] {
            let p = traj.position(node, s);
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
    }
    Aabb {
        lo: lo.map(|x| x - pad),
        hi: hi.map(|x| x + pad),
    }
}

/// Candidate triangle pairs (i < j, sorted) whose padded swept boxes
/// overlap, filtered by the scene's admissibility rule.
pub fn broad_phase(
    traj: &Trajectory,
    triangles: &[[usize; 3]],
    pad: f64,
    admissible: impl Fn(usize, usize) -> bool,
) -> Vec<(usize, usize)> {
    let boxes: Vec<Aabb> = triangles
        .iter()
        .map(|tri| swept_aabb(traj, tri, pad))
        .collect();
    let mut pairs = Vec::new();
    for i in 0..triangles.len() {
        for j in (i + 1)..triangles.len() {
            if admissible(i, j) && boxes[i].overlaps(&boxes[j]) {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn two_triangle_traj(sep: f64, approach: f64) -> (Trajectory, Vec<[usize; 3]>) {
        let r0 = vec![
            v(0.0, 0.0, 0.0),
            v(1.0, 0.0, 0.0),
            v(0.0, 1.0, 0.0),
            v(0.0, 0.0, sep),
            v(1.0, 0.0, sep),
            v(0.0, 1.0, sep),
        ];
        let mut vel = vec![Vector3::zeros(); 6];
        for node in 3..6 {
            vel[node] = v(0.0, 0.0, -approach);
        }
        (
            Trajectory {
                r0,
                v: vel,
                dt: 1.0,
            },
            vec![[0, 1, 2], [3, 4, 5]],
        )
    }

    #[test]
    fn separated_static_pair_culled() {
        let (traj, tris) = two_triangle_traj(5.0, 0.0);
        let pairs = broad_phase(&traj, &tris, 1e-9, |_, _| true);
        assert!(pairs.is_empty());
    }

    #[test]
    fn approaching_pair_survives() {
        let (traj, tris) = two_triangle_traj(5.0, 5.0);
        let pairs = broad_phase(&traj, &tris, 1e-9, |_, _| true);
        assert_eq!(pairs, vec![(0, 1)]);
    }

    #[test]
    fn touching_boxes_count_as_overlap() {
        let (traj, tris) = two_triangle_traj(5.0, 5.0);
        // Boxes meet exactly at z = 0 without the pad.
        let pairs = broad_phase(&traj, &tris, 0.0, |_, _| true);
        assert_eq!(pairs, vec![(0, 1)]);
    }

    #[test]
    fn admissibility_filter_applies() {
        let (traj, tris) = two_triangle_traj(5.0, 5.0);
        let pairs = broad_phase(&traj, &tris, 1e-9, |_, _| false);
        assert!(pairs.is_empty());
    }

    #[test]
    fn candidate_set_grows_with_pad() {
        let (traj, tris) = two_triangle_traj(5.0, 2.0);
        let tight = broad_phase(&traj, &tris, 1e-9, |_, _| true);
        assert!(tight.is_empty(), "gap of 3 remains at the end of the step");
        let padded = broad_phase(&traj, &tris, 4.0, |_, _| true);
        assert_eq!(padded, vec![(0, 1)]);
        // Monotonic: everything found with a smaller pad persists.
        for (small, large) in [(0.0, 1e-3), (1e-3, 1.0), (1.0, 10.0)] {
            let a = broad_phase(&traj, &tris, small, |_, _| true);
            let b = broad_phase(&traj, &tris, large, |_, _| true);
            for p in a {
                assert!(b.contains(&p));
            }
        }
    }
}
