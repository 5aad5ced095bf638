//! Quasi-static compliance of a planned stance.
//!
//! Each load-bearing limb behaves as a spring `f = K (delta_wall - delta_com)`
//! with Cartesian stiffness `K = (J k^-1 J^T)^-1`. Here `delta_wall` is the
//! world-frame displacement the wall imposes on the foot (pointing into the
//! body compresses the limb) and `delta_com` is the body displacement.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::robot::{cartesian_compliance, RobotModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactDeflection {
    pub limb: usize,
    pub delta_wall: [f64; 3],
    pub norm: f64,
    /// `|f - K (delta_wall - delta_com)|`, newtons.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstantDeflection {
    pub instant: usize,
    pub delta_com: [f64; 3],
    /// True when the body displacement had to be moved off the mean-centred
    /// choice to respect the bound.
    pub recentred: bool,
    pub contacts: Vec<ContactDeflection>,
}

impl InstantDeflection {
    pub fn max_norm(&self) -> f64 {
        self.contacts.iter().map(|c| c.norm).fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.contacts.iter().map(|c| c.residual).fold(0.0, f64::max)
    }
}

/// Centre and radius of the smallest ball containing every point.
pub fn smallest_enclosing_ball(points: &[Vector3<f64>]) -> (Vector3<f64>, f64) {
    assert!(!points.is_empty(), "enclosing ball of an empty set");
    let n = points.len();
    let mut best = (points[0], f64::INFINITY);
    let mut consider = |c: Vector3<f64>, r: f64| {
        if r < best.1
            && points
                .iter()
                .all(|p| (p - c).norm() <= r * (1.0 + 1e-12) + 1e-15)
        {
            best = (c, r);
        }
    };
    if n == 1 {
        return (points[0], 0.0);
    }
    for i in 0..n {
        for j in i + 1..n {
            let c = (points[i] + points[j]) * 0.5;
            consider(c, (points[i] - c).norm());
            for k in j + 1..n {
                let (a, u, v) = (points[i], points[j] - points[i], points[k] - points[i]);
                let w = u.cross(&v);
                if w.norm_squared() > 1e-30 {
                    let c = a
                        + (v * u.norm_squared() - u * v.norm_squared()).cross(&w)
                            / (2.0 * w.norm_squared());
                    consider(c, (a - c).norm());
                }
                for l in k + 1..n {
                    let t = points[l] - a;
                    let m =
                        Matrix3::from_rows(&[u.transpose(), v.transpose(), t.transpose()]) * 2.0;
                    let rhs = Vector3::new(u.norm_squared(), v.norm_squared(), t.norm_squared());
                    if let Some(inv) = m.try_inverse() {
                        let c = a + inv * rhs;
                        consider(c, (a - c).norm());
                    }
                }
            }
        }
    }
    best
}

/// Wall deflections and body displacement at every instant of a plan.
///
/// The body displacement is chosen as minus the mean of the compliant foot
/// displacements `C_i f_i`, which minimizes the sum of squared wall
/// deflections. If that leaves a deflection above `bound`, the centre of the
/// smallest ball around the `C_i f_i` is used instead; if even that ball is
/// wider than `bound`, no body displacement can satisfy the bound.
pub fn solve_deflection(
    robot: &RobotModel<f64>,
    traj: &Trajectory,
    bound: f64,
) -> Result<Vec<InstantDeflection>> {
    let mut out = Vec::with_capacity(traj.instants.len());
    for (t, inst) in traj.instants.iter().enumerate() {
        let pose = inst.pose();
        let mut disp = Vec::with_capacity(inst.contacts.len());
        let mut stiff = Vec::with_capacity(inst.contacts.len());
        for c in &inst.contacts {
            let k = robot.world_stiffness(&pose, c.limb, &c.joints)?;
            let r = pose.rotation() * robot.limbs[c.limb].mount_rotation();
            let comp =
                r * cartesian_compliance(
                    &robot.jacobian(c.limb, &c.joints),
                    &robot.limbs[c.limb].stiffness,
                ) * r.transpose();
            disp.push(comp * Vector3::from(c.force));
            stiff.push(k);
        }
        let mean = disp.iter().sum::<Vector3<f64>>() / disp.len() as f64;
        let mut delta_com = -mean;
        let mut recentred = false;
        if disp.iter().any(|d| (d + delta_com).norm() > bound) {
            let (centre, radius) = smallest_enclosing_ball(&disp);
            if radius > bound {
                let worst = disp
                    .iter()
                    .enumerate()
                    .max_by(|a, b| (a.1 - centre).norm().total_cmp(&(b.1 - centre).norm()))
                    .map(|(i, _)| inst.contacts[i].limb)
                    .unwrap_or(0);
                return Err(Error::DeflectionBoundExceeded {
                    instant: t,
                    limb: worst,
                    norm: radius,
                    bound,
                });
            }
            delta_com = -centre;
            recentred = true;
        }
        let contacts = inst
            .contacts
            .iter()
            .zip(disp.iter().zip(&stiff))
            .map(|(c, (d, k))| {
                let wall = d + delta_com;
                let f = Vector3::from(c.force);
                ContactDeflection {
                    limb: c.limb,
                    delta_wall: wall.into(),
                    norm: wall.norm(),
                    residual: (f - k * (wall - delta_com)).norm(),
                }
            })
            .collect();
        out.push(InstantDeflection {
            instant: t,
            delta_com: delta_com.into(),
            recentred,
            contacts,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ball_of_two_points_is_diametral() {
        let (c, r) =
            smallest_enclosing_ball(&[Vector3::new(0.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0)]);
        assert_relative_eq!(c, Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(r, 1.0);
    }

    #[test]
    fn ball_of_tetrahedron_vertices() {
        let s = 1.0 / 3f64.sqrt();
        let pts = [
            Vector3::new(s, s, s),
            Vector3::new(s, -s, -s),
            Vector3::new(-s, s, -s),
            Vector3::new(-s, -s, s),
            Vector3::new(0.1, 0.0, 0.0),
        ];
        let (c, r) = smallest_enclosing_ball(&pts);
        assert_relative_eq!(c, Vector3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(r, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ball_of_obtuse_triangle_uses_longest_side() {
        let pts = [
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 0.2, 0.0),
        ];
        let (c, r) = smallest_enclosing_ball(&pts);
        assert_relative_eq!(c, Vector3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(r, 1.0);
    }
}
