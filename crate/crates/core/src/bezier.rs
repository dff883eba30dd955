//! Cubic Bezier triangles in Bernstein-Bezier form.
//!
//! A patch is `p(u, v, w) = sum_{i+j+k=3} 3!/(i! j! k!) u^i v^j w^k b_ijk`
//! over the barycentric domain. The multinomial weight is what makes the
//! basis a partition of unity and pins the corners to `b300`, `b030`, `b003`.

use crate::error::{Error, Result};
use crate::Vec3;

const BARY_TOL: f64 = 1e-12;

/// `(i, j, k)` exponents of the ten control points, in storage order.
pub const CONTROL_INDICES: [[u8; 3]; 10] = [
    [3, 0, 0],
    [0, 3, 0],
    [0, 0, 3],
    [2, 1, 0],
    [2, 0, 1],
    [1, 2, 0],
    [0, 2, 1],
    [1, 0, 2],
    [0, 1, 2],
    [1, 1, 1],
];

/// Storage slot of the control point with exponents `(i, j, k)`.
pub fn control_slot(i: u8, j: u8, k: u8) -> usize {
    match (i, j, k) {
        (3, 0, 0) => 0,
        (0, 3, 0) => 1,
        (0, 0, 3) => 2,
        (2, 1, 0) => 3,
        (2, 0, 1) => 4,
        (1, 2, 0) => 5,
        (0, 2, 1) => 6,
        (1, 0, 2) => 7,
        (0, 1, 2) => 8,
        (1, 1, 1) => 9,
        _ => panic!("({i}, {j}, {k}) is not a cubic control index"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barycentric {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl Barycentric {
    pub fn new(u: f64, v: f64, w: f64) -> Result<Self> {
        let ok_range = [u, v, w]
            .iter()
            .all(|c| c.is_finite() && *c >= -BARY_TOL && *c <= 1.0 + BARY_TOL);
        if !ok_range || (u + v + w - 1.0).abs() > BARY_TOL {
            return Err(Error::InvalidParameter(format!(
                "({u}, {v}, {w}) is not a barycentric coordinate"
            )));
        }
        Ok(Self { u, v, w })
    }

    /// Grid point `(i/m, j/m, k/m)`; `i + j + k` must equal `m`.
    pub fn from_grid(i: usize, j: usize, k: usize, m: usize) -> Self {
        debug_assert_eq!(i + j + k, m);
        let m = m as f64;
        Self {
            u: i as f64 / m,
            v: j as f64 / m,
            w: k as f64 / m,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.u, self.v, self.w]
    }

    /// Point of the parent domain reached from this coordinate inside the
    /// child triangle with parent-domain corners `corners`.
    pub fn through(&self, corners: &[Barycentric; 3]) -> Barycentric {
        let c = corners;
        Barycentric {
            u: self.u * c[0].u + self.v * c[1].u + self.w * c[2].u,
            v: self.u * c[0].v + self.v * c[1].v + self.w * c[2].v,
            w: self.u * c[0].w + self.v * c[1].w + self.w * c[2].w,
        }
    }
}

/// The ten cubic Bernstein basis values at `bc`, in storage order.
pub fn basis(bc: &Barycentric) -> [f64; 10] {
    let (u, v, w) = (bc.u, bc.v, bc.w);
    [
        u * u * u,
        v * v * v,
        w * w * w,
        3.0 * u * u * v,
        3.0 * u * u * w,
        3.0 * u * v * v,
        3.0 * v * v * w,
        3.0 * u * w * w,
        3.0 * v * w * w,
        6.0 * u * v * w,
    ]
}

/// Barycentric corners of the four children produced by [`BezierTriangle::subdivide`].
pub fn child_corners() -> [[Barycentric; 3]; 4] {
    let a = Barycentric { u: 1.0, v: 0.0, w: 0.0 };
    let b = Barycentric { u: 0.0, v: 1.0, w: 0.0 };
    let c = Barycentric { u: 0.0, v: 0.0, w: 1.0 };
    let ab = Barycentric { u: 0.5, v: 0.5, w: 0.0 };
    let bc = Barycentric { u: 0.0, v: 0.5, w: 0.5 };
    let ca = Barycentric { u: 0.5, v: 0.0, w: 0.5 };
    [[a, ab, ca], [ab, b, bc], [ca, bc, c], [bc, ca, ab]]
}

/// Barycentric grid `{(i/m, j/m, k/m)}` with `m = 2^level`, ordered by
/// descending `i`, then descending `j`.
pub fn grid_indices(level: u32) -> Vec<[usize; 3]> {
    let m = 1usize << level;
    let mut out = Vec::with_capacity((m + 1) * (m + 2) / 2);
    for i in (0..=m).rev() {
        for j in (0..=m - i).rev() {
            out.push([i, j, m - i - j]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierTriangle {
    /// b300, b030, b003, b210, b201, b120, b021, b102, b012, b111.
    pub points: [Vec3; 10],
}

impl BezierTriangle {
    pub fn new(points: [Vec3; 10]) -> Self {
        Self { points }
    }

    /// The flat patch over triangle `(a, b, c)`: control points at the
    /// barycentric third-points, so it reproduces the affine map exactly.
    pub fn flat(a: Vec3, b: Vec3, c: Vec3) -> Self {
        let points = CONTROL_INDICES.map(|[i, j, k]| {
            (a * f64::from(i) + b * f64::from(j) + c * f64::from(k)) / 3.0
        });
        Self { points }
    }

    pub fn corners(&self) -> [Vec3; 3] {
        [self.points[0], self.points[1], self.points[2]]
    }

    pub fn evaluate(&self, bc: &Barycentric) -> Vec3 {
        basis(bc)
            .iter()
            .zip(&self.points)
            .fold(Vec3::zeros(), |acc, (b, p)| acc + p * *b)
    }

    /// Polar form (blossom) of the patch: three successive de Casteljau
    /// steps taken with different barycentric arguments.
    pub fn blossom(&self, x: &Barycentric, y: &Barycentric, z: &Barycentric) -> Vec3 {
        let (x, y, z) = (x.as_array(), y.as_array(), z.as_array());
        let mut acc = Vec3::zeros();
        for (a, xa) in x.iter().enumerate() {
            for (b, yb) in y.iter().enumerate() {
                for (c, zc) in z.iter().enumerate() {
                    let mut e = [0u8; 3];
                    e[a] += 1;
                    e[b] += 1;
                    e[c] += 1;
                    acc += self.points[control_slot(e[0], e[1], e[2])] * (xa * yb * zc);
                }
            }
        }
        acc
    }

    /// Restriction of the patch to the sub-triangle with parent-domain
    /// corners `corners`, re-expressed as a cubic Bezier triangle.
    pub fn restrict(&self, corners: &[Barycentric; 3]) -> Self {
        let points = CONTROL_INDICES.map(|[i, j, k]| {
            let mut args = Vec::with_capacity(3);
            args.extend(std::iter::repeat_n(corners[0], i as usize));
            args.extend(std::iter::repeat_n(corners[1], j as usize));
            args.extend(std::iter::repeat_n(corners[2], k as usize));
            self.blossom(&args[0], &args[1], &args[2])
        });
        Self { points }
    }

    /// Midpoint (1-to-4) subdivision; children follow [`child_corners`].
    pub fn subdivide(&self) -> [BezierTriangle; 4] {
        child_corners().map(|c| self.restrict(&c))
    }

    /// Evaluates the patch on the level-`level` barycentric grid.
    pub fn sample_grid(&self, level: u32) -> Vec<(Barycentric, Vec3)> {
        let m = 1usize << level;
        grid_indices(level)
            .into_iter()
            .map(|[i, j, k]| {
                let bc = Barycentric::from_grid(i, j, k, m);
                (bc, self.evaluate(&bc))
            })
            .collect()
    }

    pub fn map_points(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            points: self.points.map(|p| f(&p)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bc(rng: &mut impl Rng) -> Barycentric {
        let a: f64 = rng.random();
        let b: f64 = rng.random();
        let (s, t) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
        Barycentric { u: s, v: t, w: 1.0 - s - t }
    }

    fn random_patch(rng: &mut impl Rng) -> BezierTriangle {
        BezierTriangle::new(std::array::from_fn(|_| {
            Vec3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            )
        }))
    }

    #[test]
    fn corners_interpolate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_patch(&mut rng);
        assert_eq!(p.evaluate(&Barycentric::new(1.0, 0.0, 0.0).unwrap()), p.points[0]);
        assert_eq!(p.evaluate(&Barycentric::new(0.0, 1.0, 0.0).unwrap()), p.points[1]);
        assert_eq!(p.evaluate(&Barycentric::new(0.0, 0.0, 1.0).unwrap()), p.points[2]);
    }

    #[test]
    fn constant_patch_is_constant() {
        let q = Vec3::new(1.5, -2.0, 0.25);
        let p = BezierTriangle::new([q; 10]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert!((p.evaluate(&random_bc(&mut rng)) - q).norm() < 1e-12);
        }
    }

    #[test]
    fn basis_multinomials_match_factorial_formula() {
        let fact = |n: u8| (1..=n as u32).product::<u32>() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let bc = random_bc(&mut rng);
            let b = basis(&bc);
            for (slot, &[i, j, k]) in CONTROL_INDICES.iter().enumerate() {
                let expected = 6.0 / (fact(i) * fact(j) * fact(k))
                    * bc.u.powi(i as i32)
                    * bc.v.powi(j as i32)
                    * bc.w.powi(k as i32);
                assert!((b[slot] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn flat_patch_has_linear_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b, c) = (
            Vec3::new(0.0, 1.0, 2.0),
            Vec3::new(3.0, -1.0, 0.5),
            Vec3::new(-2.0, 4.0, 1.0),
        );
        let patch = BezierTriangle::flat(a, b, c);
        for _ in 0..50 {
            let bc = random_bc(&mut rng);
            let direct = a * bc.u + b * bc.v + c * bc.w;
            assert!((patch.evaluate(&bc) - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = random_patch(&mut rng);
            let m = Matrix3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let t = Vec3::new(rng.random(), rng.random(), rng.random());
            let mapped = p.map_points(|x| m * x + t);
            let bc = random_bc(&mut rng);
            let lhs = mapped.evaluate(&bc);
            let rhs = m * p.evaluate(&bc) + t;
            assert!((lhs - rhs).norm() < 1e-9);
        }
    }

    #[test]
    fn child_corner_is_edge_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_patch(&mut rng);
        let kids = p.subdivide();
        let mid = p.evaluate(&Barycentric::new(0.5, 0.5, 0.0).unwrap());
        assert!((kids[0].points[1] - mid).norm() < 1e-12);
        assert!((kids[1].points[0] - mid).norm() < 1e-12);
    }

    #[test]
    fn children_lie_on_parent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_patch(&mut rng);
        for (child, corners) in p.subdivide().iter().zip(child_corners()) {
            for _ in 0..200 {
                let bc = random_bc(&mut rng);
                let on_child = child.evaluate(&bc);
                let on_parent = p.evaluate(&bc.through(&corners));
                assert!((on_child - on_parent).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn children_keep_parent_winding() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(0.0, 1.0, 0.0);
        let c = Vec3::new(0.0, 0.0, 1.0);
        let n = (b - a).cross(&(c - a));
        for kid in BezierTriangle::flat(a, b, c).subdivide() {
            let [p, q, r] = kid.corners();
            assert!((q - p).cross(&(r - p)).dot(&n) > 0.0);
        }
    }

    #[test]
    fn flat_patch_subdivides_flat() {
        let a = Vec3::new(1.0, 0.0, 0.0);
        let b = Vec3::new(0.0, 1.0, 0.0);
        let c = Vec3::new(0.0, 0.0, 1.0);
        let normal = (b - a).cross(&(c - a));
        for kid in BezierTriangle::flat(a, b, c).subdivide() {
            for pt in kid.points {
                assert!(normal.dot(&(pt - a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sample_grid_counts_and_corners() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_patch(&mut rng);
        let s0 = p.sample_grid(0);
        assert_eq!(s0.len(), 3);
        assert_eq!(s0[0].1, p.points[0]);
        assert_eq!(s0[1].1, p.points[1]);
        assert_eq!(s0[2].1, p.points[2]);
        assert_eq!(p.sample_grid(2).len(), 15);
        assert_eq!(p.sample_grid(3).len(), 45);
    }

    #[test]
    fn grid_equals_recursive_flat_subdivision() {
        // subdividing the flat domain triangle twice and collecting the
        // child corners yields exactly the level-2 barycentric grid
        let a = Vec3::new(1.0, 0.0, 0.0);
        let b = Vec3::new(0.0, 1.0, 0.0);
        let c = Vec3::new(0.0, 0.0, 1.0);
        let mut tris = vec![BezierTriangle::flat(a, b, c)];
        for _ in 0..2 {
            tris = tris.iter().flat_map(|t| t.subdivide()).collect();
        }
        let key = |p: &Vec3| [p[0], p[1], p[2]].map(|x| (x * 4.0).round() as i64);
        let mut from_subdiv: Vec<[i64; 3]> =
            tris.iter().flat_map(|t| t.corners()).map(|p| key(&p)).collect();
        from_subdiv.sort_unstable();
        from_subdiv.dedup();
        let mut from_grid: Vec<[i64; 3]> = grid_indices(2)
            .into_iter()
            .map(|g| g.map(|x| x as i64))
            .collect();
        from_grid.sort_unstable();
        assert_eq!(from_subdiv, from_grid);
    }

    #[test]
    fn invalid_barycentric_rejected() {
        assert!(Barycentric::new(0.5, 0.6, 0.0).is_err());
        assert!(Barycentric::new(-0.1, 0.6, 0.5).is_err());
        assert!(Barycentric::new(0.2, 0.3, 0.5).is_ok());
    }
}
