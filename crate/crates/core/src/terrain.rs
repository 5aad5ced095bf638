//! Planar walls with convex contact regions and a spatially varying
//! friction coefficient.
//!
//! Points on a wall are addressed by 2-D wall coordinates `(u, v)`:
//! `p = origin + u * u_axis + v * v_axis`.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::robot::ContactFrame;

/// Convex polygon in wall coordinates, stored as half-planes `a . q <= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Vector2<f64>>,
    normals: Vec<Vector2<f64>>,
    offsets: Vec<f64>,
}

impl ConvexPolygon {
    /// Builds a polygon from vertices in either winding order.
    pub fn new(mut vertices: Vec<Vector2<f64>>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidInput(
                "a contact polygon needs at least three vertices".into(),
            ));
        }
        let area2: f64 = (0..n)
            .map(|i| {
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                a.x * b.y - b.x * a.y
            })
            .sum();
        if area2.abs() < 1e-12 {
            return Err(Error::InvalidInput("contact polygon is degenerate".into()));
        }
        if area2 < 0.0 {
            vertices.reverse();
        }
        let mut normals = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b, c) = (vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]);
            let e = b - a;
            let turn = e.x * (c - b).y - e.y * (c - b).x;
            if turn < -1e-12 {
                return Err(Error::InvalidInput("contact polygon is not convex".into()));
            }
            let nrm = Vector2::new(e.y, -e.x).normalize();
            normals.push(nrm);
            offsets.push(nrm.dot(&a));
        }
        Ok(Self {
            vertices,
            normals,
            offsets,
        })
    }

    pub fn rectangle(u_min: f64, u_max: f64, v_min: f64, v_max: f64) -> Result<Self> {
        Self::new(vec![
            Vector2::new(u_min, v_min),
            Vector2::new(u_max, v_min),
            Vector2::new(u_max, v_max),
            Vector2::new(u_min, v_max),
        ])
    }

    pub fn vertices(&self) -> &[Vector2<f64>] {
        &self.vertices
    }

    /// Half-planes `(a, b)` with `a . q <= b` inside; `a` has unit length.
    pub fn half_planes(&self) -> impl Iterator<Item = (Vector2<f64>, f64)> + '_ {
        self.normals
            .iter()
            .copied()
            .zip(self.offsets.iter().copied())
    }

    pub fn n_edges(&self) -> usize {
        self.normals.len()
    }

    /// Largest `a . q - b` over all edges; non-positive inside.
    pub fn max_violation(&self, q: &Vector2<f64>) -> f64 {
        self.half_planes()
            .map(|(a, b)| a.dot(q) - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// C1 parabolic ramp from 0 at `t <= 0` to 1 at `t >= 1`, with derivative.
pub fn parabola_step(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t <= 0.5 {
        (2.0 * t * t, 4.0 * t)
    } else if t < 1.0 {
        let s = 1.0 - t;
        (1.0 - 2.0 * s * s, 4.0 * s)
    } else {
        (1.0, 0.0)
    }
}

/// Rectangle of different friction, blended into whatever lies beneath it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrictionPatch {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub lambda: f64,
}

impl FrictionPatch {
    /// Blend weight and its gradient. The ramp of width `w` is centred on
    /// each edge.
    fn weight(&self, q: &Vector2<f64>, w: f64) -> (f64, Vector2<f64>) {
        let ramp = |x: f64, lo: f64, hi: f64| -> (f64, f64) {
            let (a, da) = parabola_step((x - lo) / w + 0.5);
            let (b, db) = parabola_step((hi - x) / w + 0.5);
            (a * b, (da * b - a * db) / w)
        };
        let (wu, dwu) = ramp(q.x, self.u_min, self.u_max);
        let (wv, dwv) = ramp(q.y, self.v_min, self.v_max);
        (wu * wv, Vector2::new(dwu * wv, wu * dwv))
    }
}

/// Friction coefficient over a wall: a base value overlaid by patches in order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrictionField {
    pub base: f64,
    pub patches: Vec<FrictionPatch>,
    /// Width of the blending ramp across patch edges, metres.
    pub blend_width: f64,
}

impl FrictionField {
    pub fn uniform(lambda: f64) -> Self {
        Self {
            base: lambda,
            patches: Vec::new(),
            blend_width: 0.05,
        }
    }

    /// Friction coefficient and its gradient in wall coordinates.
    pub fn eval(&self, q: &Vector2<f64>) -> (f64, Vector2<f64>) {
        let mut lam = self.base;
        let mut grad = Vector2::zeros();
        for p in &self.patches {
            let (w, dw) = p.weight(q, self.blend_width);
            grad = grad * (1.0 - w) + dw * (p.lambda - lam);
            lam += (p.lambda - lam) * w;
        }
        (lam, grad)
    }

    pub fn value(&self, q: &Vector2<f64>) -> f64 {
        self.eval(q).0
    }

    fn validate(&self) -> Result<()> {
        if !(self.base >= 0.0) || self.patches.iter().any(|p| !(p.lambda >= 0.0)) {
            return Err(Error::InvalidInput(
                "friction coefficients must be non-negative".into(),
            ));
        }
        if !(self.blend_width > 0.0) {
            return Err(Error::InvalidInput(
                "friction blend width must be positive".into(),
            ));
        }
        if self
            .patches
            .iter()
            .any(|p| !(p.u_min < p.u_max && p.v_min < p.v_max))
        {
            return Err(Error::InvalidInput(
                "friction patch bounds must satisfy min < max".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Wall {
    pub name: String,
    pub origin: Vector3<f64>,
    pub u_axis: Vector3<f64>,
    pub v_axis: Vector3<f64>,
    pub frame: ContactFrame<f64>,
    pub region: ConvexPolygon,
    pub friction: FrictionField,
}

impl Wall {
    pub fn point(&self, q: &Vector2<f64>) -> Vector3<f64> {
        self.origin + self.u_axis * q.x + self.v_axis * q.y
    }

    /// Wall coordinates of the orthogonal projection of `p` onto the wall.
    pub fn coords(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let d = p - self.origin;
        Vector2::new(d.dot(&self.u_axis), d.dot(&self.v_axis))
    }

    /// Signed distance of `p` from the wall plane along the inward normal.
    pub fn plane_offset(&self, p: &Vector3<f64>) -> f64 {
        (p - self.origin).dot(&self.frame.n)
    }

    pub fn friction_at(&self, q: &Vector2<f64>) -> f64 {
        self.friction.value(q)
    }

    fn validate(&self) -> Result<()> {
        let tol = 1e-10;
        let ok = (self.u_axis.norm() - 1.0).abs() < tol
            && (self.v_axis.norm() - 1.0).abs() < tol
            && self.u_axis.dot(&self.v_axis).abs() < tol
            && self.u_axis.dot(&self.frame.n).abs() < tol
            && self.v_axis.dot(&self.frame.n).abs() < tol;
        if !ok {
            return Err(Error::InvalidInput(format!(
                "wall `{}`: u and v axes must be orthonormal and tangent to the wall",
                self.name
            )));
        }
        self.friction.validate()
    }
}

/// A set of walls.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainMap {
    pub walls: Vec<Wall>,
}

impl TerrainMap {
    /// Two parallel vertical walls at `y = +gap/2` (left) and `y = -gap/2`
    /// (right), both addressed by `u = x`, `v = z`.
    pub fn parallel_walls(
        gap: f64,
        region: ConvexPolygon,
        left: FrictionField,
        right: FrictionField,
    ) -> Result<Self> {
        let h = 0.5 * gap;
        let left_frame = ContactFrame::new(-Vector3::y(), Vector3::x(), Vector3::z())?;
        let right_frame = ContactFrame::new(Vector3::y(), Vector3::z(), Vector3::x())?;
        let t = Self {
            walls: vec![
                Wall {
                    name: "left".into(),
                    origin: Vector3::new(0.0, h, 0.0),
                    u_axis: Vector3::x(),
                    v_axis: Vector3::z(),
                    frame: left_frame,
                    region: region.clone(),
                    friction: left,
                },
                Wall {
                    name: "right".into(),
                    origin: Vector3::new(0.0, -h, 0.0),
                    u_axis: Vector3::x(),
                    v_axis: Vector3::z(),
                    frame: right_frame,
                    region,
                    friction: right,
                },
            ],
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.walls.is_empty() {
            return Err(Error::InvalidInput(
                "terrain needs at least one wall".into(),
            ));
        }
        self.walls.iter().try_for_each(|w| w.validate())
    }

    pub fn wall_index(&self, name: &str) -> Option<usize> {
        self.walls.iter().position(|w| w.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn patchy() -> FrictionField {
        FrictionField {
            base: 2.3,
            patches: vec![
                FrictionPatch {
                    u_min: -0.1,
                    u_max: 0.1,
                    v_min: 0.2,
                    v_max: 0.5,
                    lambda: 1.1,
                },
                FrictionPatch {
                    u_min: 0.0,
                    u_max: 0.3,
                    v_min: 0.4,
                    v_max: 0.6,
                    lambda: 0.0,
                },
            ],
            blend_width: 0.05,
        }
    }

    #[test]
    fn parabola_step_is_c1() {
        assert_eq!(parabola_step(-1.0), (0.0, 0.0));
        assert_eq!(parabola_step(0.5).0, 0.5);
        assert_eq!(parabola_step(2.0), (1.0, 0.0));
        let (l, r) = (parabola_step(0.5 - 1e-12), parabola_step(0.5 + 1e-12));
        assert!((l.1 - r.1).abs() < 1e-9);
    }

    #[test]
    fn patch_interior_takes_patch_value() {
        let f = patchy();
        assert_relative_eq!(f.value(&Vector2::new(0.0, 0.3)), 1.1);
        assert_relative_eq!(f.value(&Vector2::new(0.2, 0.5)), 0.0);
        assert_relative_eq!(f.value(&Vector2::new(-0.4, 0.0)), 2.3);
        // Halfway across an edge the blend is even.
        assert_relative_eq!(
            f.value(&Vector2::new(-0.1, 0.3)),
            0.5 * (1.1 + 2.3),
            epsilon = 1e-12
        );
    }

    #[test]
    fn polygon_orientation_and_membership() {
        let sq = ConvexPolygon::new(vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(0.0, 1.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(1.0, 0.0),
        ])
        .unwrap();
        assert!(sq.max_violation(&Vector2::new(0.5, 0.5)) < 0.0);
        assert_relative_eq!(sq.max_violation(&Vector2::new(1.5, 0.5)), 0.5);
        let bowtie = ConvexPolygon::new(vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(0.0, 1.0),
        ]);
        assert!(bowtie.is_err());
    }

    #[test]
    fn walls_face_each_other() {
        let t = TerrainMap::parallel_walls(
            1.2,
            ConvexPolygon::rectangle(-1.0, 1.0, -1.0, 2.0).unwrap(),
            FrictionField::uniform(2.3),
            FrictionField::uniform(2.3),
        )
        .unwrap();
        let (l, r) = (&t.walls[0], &t.walls[1]);
        assert_relative_eq!(l.frame.n.dot(&r.frame.n), -1.0);
        let mid = Vector3::zeros();
        assert_relative_eq!(l.plane_offset(&mid), 0.6);
        assert_relative_eq!(r.plane_offset(&mid), 0.6);
        let q = Vector2::new(0.2, 0.7);
        assert_relative_eq!(l.coords(&l.point(&q)), q);
    }

    proptest! {
        #[test]
        fn friction_gradient_matches_finite_differences(u in -0.5..0.5f64, v in -0.1..0.8f64) {
            let f = patchy();
            let q = Vector2::new(u, v);
            let (lam, g) = f.eval(&q);
            prop_assert!((0.0..=2.3 + 1e-12).contains(&lam));
            let h = 1e-7;
            let du = (f.value(&Vector2::new(u + h, v)) - f.value(&Vector2::new(u - h, v))) / (2.0 * h);
            let dv = (f.value(&Vector2::new(u, v + h)) - f.value(&Vector2::new(u, v - h))) / (2.0 * h);
            prop_assert!((g.x - du).abs() < 1e-5 * (1.0 + du.abs()));
            prop_assert!((g.y - dv).abs() < 1e-5 * (1.0 + dv.abs()));
        }
    }
}
