//! Limb kinematics, joint torques and virtual-joint stiffness.
//!
//! Frames: each limb chain is expressed in its mount frame, which sits on the
//! body at `mount_position` rotated by `mount_rpy`. Links run along the local
//! x axis of the frame produced by their joint. Orientations use roll-pitch-yaw
//! with `R = Rz(yaw) * Ry(pitch) * Rx(roll)` throughout.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn rot_x<T: Real>(a: T) -> Matrix3<T> {
    let (s, c) = (a.sin(), a.cos());
    Matrix3::new(
        T::one(),
        T::zero(),
        T::zero(),
        T::zero(),
        c,
        -s,
        T::zero(),
        s,
        c,
    )
}

pub fn rot_y<T: Real>(a: T) -> Matrix3<T> {
    let (s, c) = (a.sin(), a.cos());
    Matrix3::new(
        c,
        T::zero(),
        s,
        T::zero(),
        T::one(),
        T::zero(),
        -s,
        T::zero(),
        c,
    )
}

pub fn rot_z<T: Real>(a: T) -> Matrix3<T> {
    let (s, c) = (a.sin(), a.cos());
    Matrix3::new(
        c,
        -s,
        T::zero(),
        s,
        c,
        T::zero(),
        T::zero(),
        T::zero(),
        T::one(),
    )
}

/// `Rz(rpy[2]) * Ry(rpy[1]) * Rx(rpy[0])`
pub fn rpy_matrix<T: Real>(rpy: &Vector3<T>) -> Matrix3<T> {
    rot_z(rpy[2]) * rot_y(rpy[1]) * rot_x(rpy[0])
}

/// Partial derivatives of [`rpy_matrix`] with respect to roll, pitch and yaw.
pub fn rpy_matrix_derivatives<T: Real>(rpy: &Vector3<T>) -> [Matrix3<T>; 3] {
    let (rx, ry, rz) = (rot_x(rpy[0]), rot_y(rpy[1]), rot_z(rpy[2]));
    let dx = drot_x(rpy[0]);
    let dy = drot_y(rpy[1]);
    let dz = drot_z(rpy[2]);
    [rz * ry * dx, rz * dy * rx, dz * ry * rx]
}

fn drot_x<T: Real>(a: T) -> Matrix3<T> {
    let (s, c) = (a.sin(), a.cos());
    let z = T::zero();
    Matrix3::new(z, z, z, z, -s, -c, z, c, -s)
}

fn drot_y<T: Real>(a: T) -> Matrix3<T> {
    let (s, c) = (a.sin(), a.cos());
    let z = T::zero();
    Matrix3::new(-s, z, c, z, z, z, -c, z, -s)
}

fn drot_z<T: Real>(a: T) -> Matrix3<T> {
    let (s, c) = (a.sin(), a.cos());
    let z = T::zero();
    Matrix3::new(-s, -c, z, c, -s, z, z, z, z)
}

/// Roll, pitch and yaw of a rotation matrix. Pitch is taken in
/// `[-pi/2, pi/2]`; near `|pitch| = pi/2` roll and yaw are not separable.
pub fn rpy_from_matrix<T: Real>(r: &Matrix3<T>) -> Vector3<T> {
    let mut sp = -r[(2, 0)];
    if sp > T::one() {
        sp = T::one();
    }
    if sp < -T::one() {
        sp = -T::one();
    }
    let pitch = sp.asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    Vector3::new(roll, pitch, yaw)
}

/// Derivative of [`rpy_from_matrix`] along a direction `dr` in matrix space.
pub fn rpy_from_matrix_derivative<T: Real>(r: &Matrix3<T>, dr: &Matrix3<T>) -> Vector3<T> {
    let (r21, r22, r20, r10, r00) = (r[(2, 1)], r[(2, 2)], r[(2, 0)], r[(1, 0)], r[(0, 0)]);
    let droll = (r22 * dr[(2, 1)] - r21 * dr[(2, 2)]) / (r21 * r21 + r22 * r22);
    let dpitch = -dr[(2, 0)] / (T::one() - r20 * r20).sqrt();
    let dyaw = (r00 * dr[(1, 0)] - r10 * dr[(0, 0)]) / (r00 * r00 + r10 * r10);
    Vector3::new(droll, dpitch, dyaw)
}

fn skew<T: Real>(a: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -a.z, a.y, a.z, z, -a.x, -a.y, a.x, z)
}

fn axis_rotation<T: Real>(axis: &Vector3<T>, angle: T) -> Matrix3<T> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}

/// Body position (world frame) and roll-pitch-yaw orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPose<T: Real> {
    pub position: Vector3<T>,
    pub rpy: Vector3<T>,
}

impl<T: Real> BodyPose<T> {
    pub fn new(position: Vector3<T>, rpy: Vector3<T>) -> Self {
        Self { position, rpy }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn rotation(&self) -> Matrix3<T> {
        rpy_matrix(&self.rpy)
    }

    /// World coordinates of a body-frame point.
    pub fn transform(&self, p_body: &Vector3<T>) -> Vector3<T> {
        self.rotation() * p_body + self.position
    }
}

/// Orthonormal contact triad: inward normal `n` and two wall tangents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactFrame<T: Real> {
    pub n: Vector3<T>,
    pub zeta: Vector3<T>,
    pub xi: Vector3<T>,
}

impl<T: Real> ContactFrame<T> {
    /// Checks that `(zeta, xi, n)` is a right-handed orthonormal triad.
    pub fn new(n: Vector3<T>, zeta: Vector3<T>, xi: Vector3<T>) -> Result<Self> {
        let tol = T::lit(1e-10);
        let unit = |v: &Vector3<T>| (v.norm() - T::one()).abs() <= tol;
        let ok = unit(&n)
            && unit(&zeta)
            && unit(&xi)
            && n.dot(&zeta).abs() <= tol
            && n.dot(&xi).abs() <= tol
            && zeta.dot(&xi).abs() <= tol
            && (zeta.cross(&xi) - n).norm() <= tol;
        if ok {
            Ok(Self { n, zeta, xi })
        } else {
            Err(Error::InvalidInput(
                "contact frame must be a right-handed orthonormal triad (zeta x xi = n)".into(),
            ))
        }
    }

    /// Columns `[zeta, xi, n]`: maps wall coordinates to world coordinates.
    pub fn matrix(&self) -> Matrix3<T> {
        Matrix3::from_columns(&[self.zeta, self.xi, self.n])
    }
}

/// One serial limb with revolute joints.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbChain<T: Real> {
    pub name: String,
    pub mount_position: Vector3<T>,
    pub mount_rpy: Vector3<T>,
    /// Joint axes, each in the frame of the preceding link.
    pub axes: Vec<Vector3<T>>,
    pub links: Vec<T>,
    /// Virtual-joint stiffness per joint, N m / rad.
    pub stiffness: Vec<T>,
    pub torque_limit: T,
    pub joint_lower: Vec<T>,
    pub joint_upper: Vec<T>,
    /// Fixed rotation from the last link frame to the gripper frame.
    pub gripper_rpy: Vector3<T>,
}

/// Chain quantities in the mount frame.
#[derive(Debug, Clone)]
pub struct ChainState<T: Real> {
    pub foot: Vector3<T>,
    /// Rotation of the last link frame.
    pub tip_rotation: Matrix3<T>,
    /// `3 x H` positional Jacobian.
    pub jacobian: DMatrix<T>,
    pub joint_origins: Vec<Vector3<T>>,
    pub joint_axes: Vec<Vector3<T>>,
}

impl<T: Real> LimbChain<T> {
    /// Yaw-pitch-pitch chain (z, y, y axes) with the given link lengths.
    pub fn yaw_pitch_pitch(
        name: &str,
        mount_position: Vector3<T>,
        mount_yaw: T,
        links: [T; 3],
        k: T,
        torque_limit: T,
    ) -> Self {
        let z = Vector3::z();
        let y = Vector3::y();
        let deg = T::pi() / T::lit(180.0);
        Self {
            name: name.to_string(),
            mount_position,
            mount_rpy: Vector3::new(T::zero(), T::zero(), mount_yaw),
            axes: vec![z, y, y],
            links: links.to_vec(),
            stiffness: vec![k; 3],
            torque_limit,
            joint_lower: vec![
                T::lit(-60.0) * deg,
                T::lit(-100.0) * deg,
                T::lit(10.0) * deg,
            ],
            joint_upper: vec![T::lit(60.0) * deg, T::lit(60.0) * deg, T::lit(160.0) * deg],
            gripper_rpy: Vector3::zeros(),
        }
    }

    pub fn dof(&self) -> usize {
        self.axes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.dof();
        if h == 0
            || self.links.len() != h
            || self.stiffness.len() != h
            || self.joint_lower.len() != h
            || self.joint_upper.len() != h
        {
            return Err(Error::InvalidInput(format!(
                "limb `{}`: axes, links, stiffness and joint limits must all have length H >= 1",
                self.name
            )));
        }
        if self.links.iter().any(|l| !(*l > T::zero())) {
            return Err(Error::InvalidInput(format!(
                "limb `{}`: link lengths must be positive",
                self.name
            )));
        }
        if self.stiffness.iter().any(|k| !(*k > T::zero())) {
            return Err(Error::InvalidInput(format!(
                "limb `{}`: joint stiffness must be positive",
                self.name
            )));
        }
        if !(self.torque_limit > T::zero()) {
            return Err(Error::InvalidInput(format!(
                "limb `{}`: torque limit must be positive",
                self.name
            )));
        }
        if self.axes.iter().any(|a| !(a.norm() > T::zero())) {
            return Err(Error::InvalidInput(format!(
                "limb `{}`: joint axes must be non-zero",
                self.name
            )));
        }
        if (0..h).any(|i| !(self.joint_lower[i] < self.joint_upper[i])) {
            return Err(Error::InvalidInput(format!(
                "limb `{}`: joint lower limits must be below upper limits",
                self.name
            )));
        }
        Ok(())
    }

    pub fn mount_rotation(&self) -> Matrix3<T> {
        rpy_matrix(&self.mount_rpy)
    }

    /// Forward kinematics and Jacobian in the mount frame.
    pub fn chain(&self, theta: &[T]) -> ChainState<T> {
        assert_eq!(theta.len(), self.dof(), "joint vector length");
        let h = self.dof();
        let mut r = Matrix3::identity();
        let mut p = Vector3::zeros();
        let mut origins = Vec::with_capacity(h);
        let mut axes = Vec::with_capacity(h);
        for i in 0..h {
            let a = r * self.axes[i].normalize();
            origins.push(p);
            axes.push(a);
            r *= axis_rotation(&self.axes[i], theta[i]);
            p += r * Vector3::new(self.links[i], T::zero(), T::zero());
        }
        let mut j = DMatrix::zeros(3, h);
        for i in 0..h {
            let c = axes[i].cross(&(p - origins[i]));
            j.set_column(i, &c);
        }
        ChainState {
            foot: p,
            tip_rotation: r,
            jacobian: j,
            joint_origins: origins,
            joint_axes: axes,
        }
    }

    /// Foot position in the body frame.
    pub fn foot_in_body(&self, theta: &[T]) -> Vector3<T> {
        self.mount_position + self.mount_rotation() * self.chain(theta).foot
    }

    /// `dp/dtheta` in the mount frame.
    pub fn jacobian(&self, theta: &[T]) -> DMatrix<T> {
        self.chain(theta).jacobian
    }

    /// Cartesian stiffness in the mount frame.
    pub fn stiffness_matrix(&self, theta: &[T]) -> Result<Matrix3<T>> {
        cartesian_stiffness(&self.jacobian(theta), &self.stiffness)
    }

    /// `J^T f` with `f` in the mount frame.
    pub fn joint_torque(&self, theta: &[T], f: &Vector3<T>) -> DVector<T> {
        self.jacobian(theta).transpose() * f
    }

    /// `dJ/dtheta_m` for every joint `m`, in the mount frame.
    pub fn jacobian_derivatives(&self, state: &ChainState<T>) -> Vec<DMatrix<T>> {
        let h = self.dof();
        let col = |i: usize| {
            Vector3::new(
                state.jacobian[(0, i)],
                state.jacobian[(1, i)],
                state.jacobian[(2, i)],
            )
        };
        (0..h)
            .map(|m| {
                let mut d = DMatrix::zeros(3, h);
                for i in 0..h {
                    let c = if m < i {
                        state.joint_axes[m].cross(&col(i))
                    } else {
                        state.joint_axes[i].cross(&col(m))
                    };
                    d.set_column(i, &c);
                }
                d
            })
            .collect()
    }

    /// Joint angles placing the foot at `target` (mount frame), found by
    /// damped least squares from `seed` and kept within the joint limits.
    pub fn inverse_kinematics(&self, target: &Vector3<T>, seed: &[T]) -> Result<Vec<T>> {
        let mut theta = seed.to_vec();
        let damping = T::lit(1e-4);
        for _ in 0..500 {
            let st = self.chain(&theta);
            let err = target - st.foot;
            if err.norm() < T::lit(1e-12) {
                return Ok(theta);
            }
            let j = &st.jacobian;
            let jjt = j * j.transpose() + DMatrix::identity(3, 3) * damping;
            let Some(inv) = jjt.try_inverse() else { break };
            let e = DVector::from_column_slice(err.as_slice());
            let step = j.transpose() * (inv * e);
            for i in 0..theta.len() {
                let v = theta[i] + step[i];
                theta[i] = if v < self.joint_lower[i] {
                    self.joint_lower[i]
                } else if v > self.joint_upper[i] {
                    self.joint_upper[i]
                } else {
                    v
                };
            }
        }
        let miss = (target - self.chain(&theta).foot).norm();
        if miss < T::lit(1e-9) {
            Ok(theta)
        } else {
            Err(Error::Domain(format!(
                "limb `{}`: target is out of reach (closest approach {:.3e} m)",
                self.name,
                miss.to_f64_lossy()
            )))
        }
    }
}

/// Ratio of extreme singular values of a `3 x H` Jacobian; infinite when
/// the rank is below three.
pub fn jacobian_condition<T: Real>(j: &DMatrix<T>) -> T {
    if j.ncols() < 3 {
        return T::lit(f64::INFINITY);
    }
    let sv = j.clone().svd(false, false).singular_values;
    let max = sv
        .iter()
        .fold(T::zero(), |m, v| if *v > m { *v } else { m });
    let min = sv
        .iter()
        .take(3)
        .fold(max, |m, v| if *v < m { *v } else { m });
    if min > T::zero() {
        max / min
    } else {
        T::lit(f64::INFINITY)
    }
}

/// Numerical rank of `j` with singular values below `tol * max` treated as zero.
pub fn jacobian_rank<T: Real>(j: &DMatrix<T>, tol: T) -> usize {
    let sv = j.clone().svd(false, false).singular_values;
    let max = sv
        .iter()
        .fold(T::zero(), |m, v| if *v > m { *v } else { m });
    sv.iter().filter(|v| **v > tol * max).count()
}

/// `J diag(k)^-1 J^T`, the Cartesian compliance of a limb.
pub fn cartesian_compliance<T: Real>(j: &DMatrix<T>, k: &[T]) -> Matrix3<T> {
    let mut c = Matrix3::zeros();
    for (i, ki) in k.iter().enumerate() {
        let col = Vector3::new(j[(0, i)], j[(1, i)], j[(2, i)]);
        c += col * col.transpose() / *ki;
    }
    c
}

/// `(J diag(k)^-1 J^T)^-1`. Fails when the Jacobian condition number exceeds `1e8`.
pub fn cartesian_stiffness<T: Real>(j: &DMatrix<T>, k: &[T]) -> Result<Matrix3<T>> {
    let cond = jacobian_condition(j);
    if !(cond <= T::lit(1e8)) {
        return Err(Error::SingularJacobian {
            condition: cond.to_f64_lossy(),
        });
    }
    let c = cartesian_compliance(j, k);
    let inv = c.try_inverse().ok_or(Error::SingularJacobian {
        condition: f64::INFINITY,
    })?;
    Ok((inv + inv.transpose()) * T::lit(0.5))
}

/// Foot position and gripper orientation in the world frame.
#[derive(Debug, Clone, Copy)]
pub struct FootState<T: Real> {
    pub position: Vector3<T>,
    pub gripper_rotation: Matrix3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel<T: Real> {
    pub limbs: Vec<LimbChain<T>>,
    pub mass: T,
    pub gravity: T,
    pub body_length: T,
    pub body_width: T,
}

impl<T: Real> RobotModel<T> {
    pub fn validate(&self) -> Result<()> {
        if self.limbs.len() < 2 {
            return Err(Error::InvalidInput(
                "a robot needs at least two limbs".into(),
            ));
        }
        if !(self.mass > T::zero()) || !(self.gravity > T::zero()) {
            return Err(Error::InvalidInput(
                "mass and gravity must be positive".into(),
            ));
        }
        self.limbs.iter().try_for_each(|l| l.validate())
    }

    pub fn n_limbs(&self) -> usize {
        self.limbs.len()
    }

    pub fn weight(&self) -> T {
        self.mass * self.gravity
    }

    pub fn forward_kinematics(&self, pose: &BodyPose<T>, limb: usize, theta: &[T]) -> FootState<T> {
        let l = &self.limbs[limb];
        let c = l.chain(theta);
        let rb = pose.rotation();
        let rm = l.mount_rotation();
        FootState {
            position: rb * (l.mount_position + rm * c.foot) + pose.position,
            gripper_rotation: rb * rm * c.tip_rotation * rpy_matrix(&l.gripper_rpy),
        }
    }

    /// Gripper orientation relative to the wall frame, as the
    /// `(alpha, beta, gamma)` angles the gripping-force model is indexed by.
    pub fn gripper_angles(
        &self,
        pose: &BodyPose<T>,
        limb: usize,
        theta: &[T],
        frame: &ContactFrame<T>,
    ) -> Vector3<T> {
        let fs = self.forward_kinematics(pose, limb, theta);
        rpy_from_matrix(&(frame.matrix().transpose() * fs.gripper_rotation))
    }

    /// [`RobotModel::gripper_angles`] with its derivatives with respect to the
    /// body roll, pitch and yaw and to each joint angle.
    pub fn gripper_angles_with_jacobian(
        &self,
        pose: &BodyPose<T>,
        limb: usize,
        theta: &[T],
        frame: &ContactFrame<T>,
    ) -> (Vector3<T>, [Vector3<T>; 3], Vec<Vector3<T>>) {
        let l = &self.limbs[limb];
        let c = l.chain(theta);
        let wt = frame.matrix().transpose();
        let rm = l.mount_rotation();
        let tail = rm * c.tip_rotation * rpy_matrix(&l.gripper_rpy);
        let rb = pose.rotation();
        let rel = wt * rb * tail;
        let angles = rpy_from_matrix(&rel);
        let drb = rpy_matrix_derivatives(&pose.rpy);
        let d_body = [0, 1, 2].map(|k| rpy_from_matrix_derivative(&rel, &(wt * drb[k] * tail)));
        let front = wt * rb * rm;
        let d_joint = c
            .joint_axes
            .iter()
            .map(|a| {
                rpy_from_matrix_derivative(
                    &rel,
                    &(front * skew(a) * c.tip_rotation * rpy_matrix(&l.gripper_rpy)),
                )
            })
            .collect();
        (angles, d_body, d_joint)
    }

    /// Sets a limb's gripper offset so that, at the given pose and joint
    /// angles, [`RobotModel::gripper_angles`] returns `target`.
    pub fn calibrate_gripper(
        &mut self,
        pose: &BodyPose<T>,
        limb: usize,
        theta: &[T],
        frame: &ContactFrame<T>,
        target: &Vector3<T>,
    ) {
        let l = &self.limbs[limb];
        let tip = pose.rotation() * l.mount_rotation() * l.chain(theta).tip_rotation;
        let want = frame.matrix() * rpy_matrix(target);
        self.limbs[limb].gripper_rpy = rpy_from_matrix(&(tip.transpose() * want));
    }

    /// Limb Jacobian in the mount frame.
    pub fn jacobian(&self, limb: usize, theta: &[T]) -> DMatrix<T> {
        self.limbs[limb].jacobian(theta)
    }

    /// Limb Jacobian in the world frame for the given body orientation.
    pub fn world_jacobian(&self, pose: &BodyPose<T>, limb: usize, theta: &[T]) -> DMatrix<T> {
        let r = pose.rotation() * self.limbs[limb].mount_rotation();
        let j = self.limbs[limb].jacobian(theta);
        let mut out = DMatrix::zeros(3, j.ncols());
        for c in 0..j.ncols() {
            let col = r * Vector3::new(j[(0, c)], j[(1, c)], j[(2, c)]);
            out.set_column(c, &col);
        }
        out
    }

    /// Cartesian stiffness in the mount frame.
    pub fn stiffness(&self, limb: usize, theta: &[T]) -> Result<Matrix3<T>> {
        self.limbs[limb].stiffness_matrix(theta)
    }

    /// Cartesian stiffness in the world frame.
    pub fn world_stiffness(
        &self,
        pose: &BodyPose<T>,
        limb: usize,
        theta: &[T],
    ) -> Result<Matrix3<T>> {
        let r = pose.rotation() * self.limbs[limb].mount_rotation();
        Ok(r * self.stiffness(limb, theta)? * r.transpose())
    }

    /// Joint torques for a foot force given in the mount frame.
    pub fn joint_torque(&self, limb: usize, theta: &[T], f: &Vector3<T>) -> DVector<T> {
        self.limbs[limb].joint_torque(theta, f)
    }
}

pub const LIMB_NAMES: [&str; 6] = ["LF", "LM", "LR", "RF", "RM", "RR"];

impl RobotModel<f64> {
    /// Six-limbed climber: 11.5 kg, 27 N m joint torque limit, 0.442 m body
    /// width. Limbs are ordered left front, middle, rear, then right front,
    /// middle, rear; left limbs point along +y.
    pub fn hexapod() -> Self {
        let links = [0.08, 0.22, 0.22];
        let half_w = 0.221;
        let xs = [0.2, 0.0, -0.2];
        let mut limbs = Vec::with_capacity(6);
        for (side, yaw) in [
            (1.0, std::f64::consts::FRAC_PI_2),
            (-1.0, -std::f64::consts::FRAC_PI_2),
        ] {
            for x in xs {
                let name = LIMB_NAMES[limbs.len()];
                let mount = Vector3::new(x, side * half_w, 0.0);
                limbs.push(LimbChain::yaw_pitch_pitch(
                    name, mount, yaw, links, 700.0, 27.0,
                ));
            }
        }
        Self {
            limbs,
            mass: 11.5,
            gravity: 9.81,
            body_length: 0.4,
            body_width: 2.0 * half_w,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use proptest::prelude::*;

    fn homogeneous(r: Matrix3<f64>, t: Vector3<f64>) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        m
    }

    fn one_link(len: f64) -> LimbChain<f64> {
        LimbChain {
            name: "t".into(),
            mount_position: Vector3::zeros(),
            mount_rpy: Vector3::zeros(),
            axes: vec![Vector3::z()],
            links: vec![len],
            stiffness: vec![100.0],
            torque_limit: 10.0,
            joint_lower: vec![-1.0],
            joint_upper: vec![1.0],
            gripper_rpy: Vector3::zeros(),
        }
    }

    #[test]
    fn identity_pose_gives_body_frame_foot() {
        let r = RobotModel::hexapod();
        let th = [0.1, -0.5, 1.2];
        let fk = r.forward_kinematics(&BodyPose::identity(), 0, &th);
        assert_relative_eq!(fk.position, r.limbs[0].foot_in_body(&th), epsilon = 1e-15);
    }

    #[test]
    fn yaw_quarter_turn_rotates_x_to_y() {
        let pose = BodyPose::new(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
        );
        let p = pose.transform(&Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(p, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn chain_matches_transform_stack() {
        let r = RobotModel::hexapod();
        let l = &r.limbs[4];
        let d = std::f64::consts::PI / 180.0;
        let th = [10.0 * d, 20.0 * d, -30.0 * d];
        let pose = BodyPose::new(Vector3::new(0.1, -0.2, 0.3), Vector3::new(0.05, -0.1, 0.2));
        let mut t = homogeneous(pose.rotation(), pose.position)
            * homogeneous(l.mount_rotation(), l.mount_position);
        t *= homogeneous(rot_z(th[0]), Vector3::zeros())
            * homogeneous(Matrix3::identity(), Vector3::new(0.08, 0.0, 0.0));
        t *= homogeneous(rot_y(th[1]), Vector3::zeros())
            * homogeneous(Matrix3::identity(), Vector3::new(0.22, 0.0, 0.0));
        t *= homogeneous(rot_y(th[2]), Vector3::zeros())
            * homogeneous(Matrix3::identity(), Vector3::new(0.22, 0.0, 0.0));
        let fk = r.forward_kinematics(&pose, 4, &th);
        for i in 0..3 {
            assert!((fk.position[i] - t[(i, 3)]).abs() < 1e-10);
        }
    }

    #[test]
    fn single_link_jacobian() {
        let j = one_link(0.3).jacobian(&[0.0]);
        assert_relative_eq!(j[(0, 0)], 0.0);
        assert_relative_eq!(j[(1, 0)], 0.3);
        assert_relative_eq!(j[(2, 0)], 0.0);
    }

    #[test]
    fn straight_limb_is_singular() {
        let r = RobotModel::hexapod();
        let j = r.jacobian(0, &[0.0, 0.0, 0.0]);
        assert!(jacobian_rank(&j, 1e-9) < 3);
        assert!(matches!(
            r.stiffness(0, &[0.0, 0.0, 0.0]),
            Err(Error::SingularJacobian { .. })
        ));
    }

    #[test]
    fn identity_jacobian_stiffness_is_joint_stiffness() {
        let k = cartesian_stiffness(&DMatrix::identity(3, 3), &[100.0, 200.0, 300.0]).unwrap();
        assert_relative_eq!(
            k,
            Matrix3::from_diagonal(&Vector3::new(100.0, 200.0, 300.0)),
            epsilon = 1e-10
        );
        let tau =
            DMatrix::<f64>::identity(3, 3).transpose() * DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(tau.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn stiffness_is_homogeneous_in_k() {
        let r = RobotModel::hexapod();
        let th = [0.2, -0.8, 1.6];
        let mut doubled = r.clone();
        doubled.limbs[2]
            .stiffness
            .iter_mut()
            .for_each(|k| *k *= 2.0);
        let k1 = r.stiffness(2, &th).unwrap();
        let k2 = doubled.stiffness(2, &th).unwrap();
        assert_relative_eq!(k2, k1 * 2.0, max_relative = 1e-10);
    }

    #[test]
    fn zero_force_zero_torque() {
        let r = RobotModel::hexapod();
        assert!(r
            .joint_torque(1, &[0.3, -0.7, 1.4], &Vector3::zeros())
            .iter()
            .all(|t| *t == 0.0));
    }

    #[test]
    fn rpy_round_trip() {
        let a = Vector3::new(0.3, -0.4, 2.0);
        assert_relative_eq!(rpy_from_matrix(&rpy_matrix(&a)), a, epsilon = 1e-12);
    }

    #[test]
    fn contact_frame_rejects_left_handed() {
        assert!(ContactFrame::<f64>::new(Vector3::z(), Vector3::x(), Vector3::y()).is_ok());
        assert!(ContactFrame::<f64>::new(-Vector3::z(), Vector3::x(), Vector3::y()).is_err());
    }

    #[test]
    fn calibrated_gripper_reports_target_angles() {
        let mut r = RobotModel::hexapod();
        let frame = ContactFrame::new(-Vector3::y(), Vector3::x(), Vector3::z()).unwrap();
        let pose = BodyPose::identity();
        let th = [0.0, -0.8, 1.6];
        let target = Vector3::new(0.0, 0.0, 30f64.to_radians());
        r.calibrate_gripper(&pose, 0, &th, &frame, &target);
        assert_relative_eq!(
            r.gripper_angles(&pose, 0, &th, &frame),
            target,
            epsilon = 1e-12
        );
    }

    fn arb_theta() -> impl Strategy<Value = [f64; 3]> {
        (-1.0..1.0f64, -1.5..1.0f64, 0.2..2.7f64).prop_map(|(a, b, c)| [a, b, c])
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(th in arb_theta(), limb in 0usize..6) {
            let l = &RobotModel::hexapod().limbs[limb];
            let j = l.jacobian(&th);
            let h = 1e-6;
            for c in 0..3 {
                let mut p = th;
                let mut m = th;
                p[c] += h;
                m[c] -= h;
                let fd = (l.chain(&p).foot - l.chain(&m).foot) / (2.0 * h);
                for r in 0..3 {
                    prop_assert!((j[(r, c)] - fd[r]).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn stiffness_inverts_compliance(th in arb_theta(), limb in 0usize..6) {
            let r = RobotModel::hexapod();
            let j = r.jacobian(limb, &th);
            prop_assume!(jacobian_condition(&j) < 1e4);
            let k = r.stiffness(limb, &th).unwrap();
            let c = cartesian_compliance(&j, &r.limbs[limb].stiffness);
            let prod = k * c;
            prop_assert!((prod - Matrix3::identity()).abs().max() < 1e-8);
            prop_assert!((k - k.transpose()).abs().max() < 1e-10 * k.abs().max());
            prop_assert!(k.symmetric_eigenvalues().min() > 0.0);
        }

        #[test]
        fn virtual_work_holds(th in arb_theta(), f in prop::array::uniform3(-50.0..50.0f64), dth in prop::array::uniform3(-1.0..1.0f64)) {
            let r = RobotModel::hexapod();
            let f = Vector3::from(f);
            let tau = r.joint_torque(3, &th, &f);
            let dth = DVector::from_row_slice(&dth);
            let j = r.jacobian(3, &th);
            let lhs = tau.dot(&dth);
            let rhs = f.dot(&Vector3::from_iterator((&j * &dth).iter().copied()));
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
            prop_assert!(tau.norm() <= j.norm() * f.norm() + 1e-12);
        }

        #[test]
        fn translation_invariance(t in prop::array::uniform3(-5.0..5.0f64), th in arb_theta()) {
            let r = RobotModel::hexapod();
            let pose = BodyPose::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.1, 0.0, -0.2));
            let moved = BodyPose::new(pose.position + Vector3::from(t), pose.rpy);
            let a = r.forward_kinematics(&pose, 5, &th).position + Vector3::from(t);
            let b = r.forward_kinematics(&moved, 5, &th).position;
            prop_assert!((a - b).abs().max() < 1e-12);
        }

        #[test]
        fn rpy_derivatives_match_finite_differences(rpy in prop::array::uniform3(-1.2..1.2f64)) {
            let v = Vector3::from(rpy);
            let d = rpy_matrix_derivatives(&v);
            let h = 1e-6;
            for k in 0..3 {
                let mut p = v;
                let mut m = v;
                p[k] += h;
                m[k] -= h;
                let fd = (rpy_matrix(&p) - rpy_matrix(&m)) / (2.0 * h);
                prop_assert!((fd - d[k]).abs().max() < 1e-8);
            }
        }
            #[test]
        fn jacobian_derivatives_match_finite_differences(th in arb_theta()) {
            let l = &RobotModel::hexapod().limbs[1];
            let d = l.jacobian_derivatives(&l.chain(&th));
            let h = 1e-6;
            for m in 0..3 {
                let mut p = th;
                let mut q = th;
                p[m] += h;
                q[m] -= h;
                let fd = (l.jacobian(&p) - l.jacobian(&q)) / (2.0 * h);
                prop_assert!((fd - &d[m]).abs().max() < 1e-8);
            }
        }
    }

    #[test]
    fn gripper_angle_jacobian_matches_finite_differences() {
        let r = RobotModel::hexapod();
        let frame = ContactFrame::new(-Vector3::y(), Vector3::x(), Vector3::z()).unwrap();
        let pose = BodyPose::new(Vector3::new(0.0, 0.0, 0.5), Vector3::new(0.05, -0.1, 0.2));
        let th = [0.1, -0.7, 1.5];
        let (a, db, dj) = r.gripper_angles_with_jacobian(&pose, 1, &th, &frame);
        assert_relative_eq!(a, r.gripper_angles(&pose, 1, &th, &frame), epsilon = 1e-14);
        let h = 1e-6;
        for k in 0..3 {
            let (mut p, mut m) = (pose, pose);
            p.rpy[k] += h;
            m.rpy[k] -= h;
            let fd = (r.gripper_angles(&p, 1, &th, &frame) - r.gripper_angles(&m, 1, &th, &frame))
                / (2.0 * h);
            assert_relative_eq!(fd, db[k], epsilon = 1e-8);
        }
        for j in 0..3 {
            let (mut p, mut m) = (th, th);
            p[j] += h;
            m[j] -= h;
            let fd = (r.gripper_angles(&pose, 1, &p, &frame)
                - r.gripper_angles(&pose, 1, &m, &frame))
                / (2.0 * h);
            assert_relative_eq!(fd, dj[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn inverse_kinematics_reaches_wall_point() {
        let l = &RobotModel::hexapod().limbs[0];
        // Mount frame x points at the left wall, 0.379 m away.
        let target = Vector3::new(0.379, 0.0, 0.0);
        let th = l.inverse_kinematics(&target, &[0.0, -0.8, 1.6]).unwrap();
        assert!((l.chain(&th).foot - target).norm() < 1e-9);
        assert!(th[1] < 0.0 && th[2] > 0.0, "{th:?}");
        assert!(l
            .inverse_kinematics(&Vector3::new(2.0, 0.0, 0.0), &[0.0, -0.8, 1.6])
            .is_err());
    }
}
