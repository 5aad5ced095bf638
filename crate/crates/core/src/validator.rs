//! Independent checks of a planned trajectory.
//!
//! [`audit`] recomputes every constraint from the recorded joint angles,
//! poses, footholds and forces using homogeneous transforms, without going
//! through the planner's evaluators. [`certify`] samples the gripping forces
//! and counts how often the original (un-reformulated) friction-cone rows are
//! violated.

use nalgebra::{
    Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpModel, GripState};
use crate::planner::{PlanProblem, Trajectory};
use crate::risk;
use crate::robot::{LimbChain, RobotModel};
use crate::terrain::TerrainMap;

/// Tolerance above which a residual or negative margin is listed in
/// [`AuditReport::items`].
pub const AUDIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    ForceBalance,
    MomentBalance,
    Kinematics,
    NormalForce,
    FrictionCone,
    Torque,
    Region,
    Stride,
    JointLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditItem {
    pub kind: AuditKind,
    pub instant: Option<usize>,
    pub limb: Option<usize>,
    /// Residual or margin shortfall, in the unit of the check.
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// `|sum f + F_ext|`, newtons.
    pub max_force_residual: f64,
    /// `|sum p x f + P x F_ext|`, newton metres.
    pub max_moment_residual: f64,
    /// Distance between the forward-kinematics foot and its foothold, metres.
    pub max_kinematic_error: f64,
    /// Smallest normal force, newtons.
    pub min_normal_force: f64,
    /// Smallest reformulated tangential margin, newtons.
    pub min_cone_margin: f64,
    /// Smallest `tau_max - |tau|`, newton metres.
    pub min_torque_margin: f64,
    pub max_region_violation: f64,
    /// Largest stride excess, in metres or radians.
    pub max_stride_violation: f64,
    pub max_joint_violation: f64,
    pub items: Vec<AuditItem>,
}

impl AuditReport {
    /// Largest residual or margin shortfall over every check.
    pub fn max_violation(&self) -> f64 {
        [
            self.max_force_residual,
            self.max_moment_residual,
            self.max_kinematic_error,
            -self.min_normal_force,
            -self.min_cone_margin,
            -self.min_torque_margin,
            self.max_region_violation,
            self.max_stride_violation,
            self.max_joint_violation,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }

    fn note(&mut self, kind: AuditKind, instant: Option<usize>, limb: Option<usize>, amount: f64) {
        if amount > AUDIT_TOL {
            self.items.push(AuditItem {
                kind,
                instant,
                limb,
                amount,
            });
        }
    }
}

fn rpy_rotation(rpy: &[f64; 3]) -> Rotation3<f64> {
    Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2])
}

/// Frames along a limb: one isometry per joint (placed at the joint, before
/// its rotation) and the tip frame.
struct LimbFrames {
    joints: Vec<Isometry3<f64>>,
    tip: Isometry3<f64>,
}

fn limb_frames(body: &Isometry3<f64>, limb: &LimbChain<f64>, theta: &[f64]) -> LimbFrames {
    let mount = Isometry3::from_parts(
        Translation3::from(limb.mount_position),
        UnitQuaternion::from_rotation_matrix(&rpy_rotation(&limb.mount_rpy.into())),
    );
    let mut t = body * mount;
    let mut joints = Vec::with_capacity(theta.len());
    for (i, &q) in theta.iter().enumerate() {
        joints.push(t);
        let spin = Isometry3::rotation(limb.axes[i].normalize() * q);
        let link = Isometry3::translation(limb.links[i], 0.0, 0.0);
        t = t * spin * link;
    }
    LimbFrames { joints, tip: t }
}

fn gripper_angles(
    tip: &Isometry3<f64>,
    limb: &LimbChain<f64>,
    wall_basis: &Matrix3<f64>,
) -> Vector3<f64> {
    let grip = tip.rotation.to_rotation_matrix() * rpy_rotation(&limb.gripper_rpy.into());
    let rel = Rotation3::from_matrix_unchecked(wall_basis.transpose() * grip.into_inner());
    let (r, p, y) = rel.euler_angles();
    Vector3::new(r, p, y)
}

/// Re-evaluates every constraint of a planned trajectory.
pub fn audit(traj: &Trajectory, problem: &PlanProblem) -> AuditReport {
    let robot: &RobotModel<f64> = &problem.robot;
    let terrain = &problem.terrain;
    let gp = &problem.gp;
    let mut rep = AuditReport {
        max_force_residual: 0.0,
        max_moment_residual: 0.0,
        max_kinematic_error: 0.0,
        min_normal_force: f64::INFINITY,
        min_cone_margin: f64::INFINITY,
        min_torque_margin: f64::INFINITY,
        max_region_violation: 0.0,
        max_stride_violation: 0.0,
        max_joint_violation: 0.0,
        items: Vec::new(),
    };
    let quantile = risk::inv_norm_cdf(1.0 - traj.delta_jk).unwrap_or(f64::INFINITY);
    let gravity = Vector3::new(0.0, 0.0, -robot.weight());

    for (t, inst) in traj.instants.iter().enumerate() {
        let centre = Vector3::from(inst.position);
        let body = Isometry3::from_parts(
            Translation3::from(centre),
            UnitQuaternion::from_rotation_matrix(&rpy_rotation(&inst.rpy)),
        );
        let mut force_sum = gravity;
        let mut moment_sum = centre.cross(&gravity);
        for c in &inst.contacts {
            let limb = &robot.limbs[c.limb];
            let wall = &terrain.walls[c.wall];
            let f = Vector3::from(c.force);
            let frames = limb_frames(&body, limb, &c.joints);
            let foot = frames.tip * Point3::origin();
            let q = Vector2::from(c.foothold_uv);
            let target = wall.origin + wall.u_axis * q.x + wall.v_axis * q.y;
            let miss = (foot.coords - target).norm();
            rep.max_kinematic_error = rep.max_kinematic_error.max(miss);
            rep.note(AuditKind::Kinematics, Some(t), Some(c.limb), miss);

            force_sum += f;
            moment_sum += foot.coords.cross(&f);

            // Torques by virtual work with joint axes and origins taken from
            // the transform chain.
            let tau_sq: f64 = frames
                .joints
                .iter()
                .zip(&limb.axes)
                .map(|(j, a)| {
                    let axis = j.rotation * a.normalize();
                    let origin = j.translation.vector;
                    axis.cross(&(foot.coords - origin)).dot(&f).powi(2)
                })
                .sum();
            let tm = limb.torque_limit - tau_sq.sqrt();
            rep.min_torque_margin = rep.min_torque_margin.min(tm);
            rep.note(AuditKind::Torque, Some(t), Some(c.limb), -tm);

            for (j, &v) in c.joints.iter().enumerate() {
                let over = (limb.joint_lower[j] - v)
                    .max(v - limb.joint_upper[j])
                    .max(0.0);
                rep.max_joint_violation = rep.max_joint_violation.max(over);
                rep.note(AuditKind::JointLimit, Some(t), Some(c.limb), over);
            }

            let fr = &wall.frame;
            let nf = fr.n.dot(&f);
            rep.min_normal_force = rep.min_normal_force.min(nf);
            rep.note(AuditKind::NormalForce, Some(t), Some(c.limb), -nf);

            let lambda = wall.friction.value(&q);
            let basis = Matrix3::from_columns(&[fr.zeta, fr.xi, fr.n]);
            let ang = gripper_angles(&frames.tip, limb, &basis);
            let (mean, var) = gp.predict_observation(&GripState::new(ang.x, ang.y, ang.z, lambda));
            let usable = mean - quantile * var.sqrt();
            let tangential = fr.zeta.dot(&f).abs().max(fr.xi.dot(&f).abs());
            let cm = usable + lambda * nf - tangential;
            rep.min_cone_margin = rep.min_cone_margin.min(cm);
            rep.note(AuditKind::FrictionCone, Some(t), Some(c.limb), -cm);
        }
        let fres = force_sum.norm();
        let mres = moment_sum.norm();
        rep.max_force_residual = rep.max_force_residual.max(fres);
        rep.max_moment_residual = rep.max_moment_residual.max(mres);
        rep.note(AuditKind::ForceBalance, Some(t), None, fres);
        rep.note(AuditKind::MomentBalance, Some(t), None, mres);
    }

    for fh in &traj.footholds {
        let region = &terrain.walls[fh.wall].region;
        let v = region.max_violation(&Vector2::from(fh.uv)).max(0.0);
        rep.max_region_violation = rep.max_region_violation.max(v);
        rep.note(AuditKind::Region, None, Some(fh.limb), v);
    }

    audit_strides(traj, problem, &mut rep);
    if rep.min_normal_force == f64::INFINITY {
        rep.min_normal_force = 0.0;
        rep.min_cone_margin = 0.0;
        rep.min_torque_margin = 0.0;
    }
    rep
}

fn audit_strides(traj: &Trajectory, problem: &PlanProblem, rep: &mut AuditReport) {
    let st = &problem.stride;
    let per_round = problem.gait.instants_per_round();
    let p0 = problem.initial_pose.position;
    let r0 = problem.initial_pose.rpy;
    for (t, inst) in traj.instants.iter().enumerate() {
        let (prev_p, prev_r) = if t < per_round {
            ([p0.x, p0.y, p0.z], [r0.x, r0.y, r0.z])
        } else {
            (
                traj.instants[t - per_round].position,
                traj.instants[t - per_round].rpy,
            )
        };
        for k in 0..3 {
            let dp = (inst.position[k] - prev_p[k]).abs() - st.body_position;
            let dr = (inst.rpy[k] - prev_r[k]).abs() - st.body_rotation;
            let over = dp.max(dr).max(0.0);
            rep.max_stride_violation = rep.max_stride_violation.max(over);
            rep.note(AuditKind::Stride, Some(t), None, over);
        }
    }
    for fh in traj.footholds.iter().filter(|f| f.round >= 1) {
        let Some(prev) = traj
            .footholds
            .iter()
            .find(|p| p.round + 1 == fh.round && p.limb == fh.limb)
        else {
            continue;
        };
        for k in 0..2 {
            let over = ((fh.uv[k] - prev.uv[k]).abs() - st.foothold).max(0.0);
            rep.max_stride_violation = rep.max_stride_violation.max(over);
            rep.note(AuditKind::Stride, None, Some(fh.limb), over);
        }
    }
}

/// Empirical violation rate of one stochastic cone row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRate {
    pub constraint_id: usize,
    pub instant: usize,
    pub round: usize,
    pub limb: usize,
    /// `+zeta`, `-zeta`, `+xi` or `-xi`.
    pub row: String,
    pub rate: f64,
    /// Half-width of the 99% normal-approximation interval.
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub n_samples: usize,
    pub seed: u64,
    pub delta: f64,
    pub delta_jk: f64,
    /// Fraction of samples violating at least one row anywhere in the plan.
    pub joint_rate: f64,
    pub joint_half_width: f64,
    pub constraints: Vec<ConstraintRate>,
}

impl RiskReport {
    pub fn max_rate(&self) -> f64 {
        self.constraints.iter().map(|c| c.rate).fold(0.0, f64::max)
    }

    pub fn sum_of_rates(&self) -> f64 {
        self.constraints.iter().map(|c| c.rate).sum()
    }

    /// Writes `constraint_id,round,limb,rate,delta_jk`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["constraint_id", "round", "limb", "rate", "delta_jk"])
            .map_err(csv_error)?;
        for c in &self.constraints {
            w.write_record([
                c.constraint_id.to_string(),
                c.round.to_string(),
                c.limb.to_string(),
                format!("{:e}", c.rate),
                format!("{:e}", self.delta_jk),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

const Z_99: f64 = 2.5758293035489004;
const CHUNK: usize = 4096;
const ROW_NAMES: [&str; 4] = ["+zeta", "-zeta", "+xi", "-xi"];

/// Standard normals from a counter-based stream: chunk `k` of the sample
/// space always reads stream `k` of the seeded generator, so results do not
/// depend on how chunks are scheduled.
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    fn uniform(&mut self) -> f64 {
        // 53 random bits in (0, 1].
        ((self.rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64
    }

    /// Box-Muller, returning both normals of each pair in turn.
    pub fn draw(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let r = (-2.0 * self.uniform().ln()).sqrt();
        let a = std::f64::consts::TAU * self.uniform();
        self.spare = Some(r * a.sin());
        r * a.cos()
    }
}

/// Fraction of `n_samples` standard-normal draws below each threshold,
/// sharing one draw per sample across all thresholds.
pub fn tail_rates(thresholds: &[f64], n_samples: usize, seed: u64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..thresholds.len()).collect();
    order.sort_by(|a, b| thresholds[*a].total_cmp(&thresholds[*b]));
    let sorted: Vec<f64> = order.iter().map(|&i| thresholds[i]).collect();
    // hits[k] counts draws falling below sorted[k] but not below sorted[k - 1].
    let hits = (0..n_samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| {
            let mut s = NormalStream::new(seed, k as u64);
            let mut h = vec![0usize; sorted.len() + 1];
            for _ in (k * CHUNK)..((k + 1) * CHUNK).min(n_samples) {
                let z = s.draw();
                h[sorted.partition_point(|t| *t <= z)] += 1;
            }
            h
        })
        .reduce(
            || vec![0; sorted.len() + 1],
            |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect(),
        );
    let mut rates = vec![0.0; thresholds.len()];
    let mut below = 0;
    for (k, &i) in order.iter().enumerate() {
        below += hits[k];
        rates[i] = below as f64 / n_samples as f64;
    }
    rates
}

/// Monte-Carlo estimate of how often the planned forces violate the
/// friction cone when each contact's gripping force is drawn from the model.
///
/// One gripping force is drawn per contact per instant, independently,
/// and shared by that contact's four tangential rows.
pub fn certify(
    traj: &Trajectory,
    terrain: &TerrainMap,
    gp: &GpModel<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<RiskReport> {
    if n_samples < 10_000 {
        return Err(Error::InvalidInput(format!(
            "certification needs at least 10000 samples, got {n_samples}"
        )));
    }
    // Row r at contact c is violated when z < thresholds[c][r].
    let mut contacts = Vec::new();
    let mut meta = Vec::new();
    for (t, inst) in traj.instants.iter().enumerate() {
        for c in &inst.contacts {
            let fr = &terrain.walls[c.wall].frame;
            let f = Vector3::from(c.force);
            let s = GripState::from_array(c.grip_state);
            let (mean, var) = gp.predict_observation(&s);
            let sd = var.sqrt();
            let cone = risk::friction_cone(fr, c.lambda)?;
            let th: Vec<f64> = cone[1..]
                .iter()
                .map(|row| {
                    // alpha.f - f_grip > 0  <=>  z < (alpha.f - mean) / sd
                    let need = row.alpha.dot(&f) - row.beta;
                    if sd > 0.0 {
                        (need - mean) / sd
                    } else if need > mean {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            contacts.push(th);
            meta.push((t, inst.round, c.limb));
        }
    }
    let n_rows: usize = contacts.iter().map(Vec::len).sum();
    let (rows, joint) = (0..n_samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| {
            let mut s = NormalStream::new(seed, k as u64);
            let mut rows = vec![0usize; n_rows];
            let mut joint = 0usize;
            for _ in (k * CHUNK)..((k + 1) * CHUNK).min(n_samples) {
                let mut any = false;
                let mut r = 0;
                for th in &contacts {
                    let z = s.draw();
                    for t in th {
                        if z < *t {
                            rows[r] += 1;
                            any = true;
                        }
                        r += 1;
                    }
                }
                joint += usize::from(any);
            }
            (rows, joint)
        })
        .reduce(
            || (vec![0; n_rows], 0),
            |(a, ja), (b, jb)| (a.iter().zip(&b).map(|(x, y)| x + y).collect(), ja + jb),
        );
    let n = n_samples as f64;
    let hw = |p: f64| Z_99 * (p * (1.0 - p) / n).sqrt();
    let mut constraints = Vec::with_capacity(n_rows);
    let mut r = 0;
    for (ci, th) in contacts.iter().enumerate() {
        let (instant, round, limb) = meta[ci];
        for name in ROW_NAMES.iter().take(th.len()) {
            let rate = rows[r] as f64 / n;
            constraints.push(ConstraintRate {
                constraint_id: r,
                instant,
                round,
                limb,
                row: (*name).to_string(),
                rate,
                half_width: hw(rate),
            });
            r += 1;
        }
    }
    let joint_rate = joint as f64 / n;
    Ok(RiskReport {
        n_samples,
        seed,
        delta: traj.delta,
        delta_jk: traj.delta_jk,
        joint_rate,
        joint_half_width: hw(joint_rate),
        constraints,
    })
}
