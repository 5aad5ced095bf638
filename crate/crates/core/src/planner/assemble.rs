use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

use super::{ContactRecord, FootholdRecord, InstantRecord, PlanProblem, Trajectory};
use crate::error::Result;
use crate::gp::GripState;
use crate::nlp::{NlpProblem, SparseMatrix};
use crate::risk::{self, RiskBudget, ROWS_PER_CONTACT};
use crate::robot::{rpy_matrix_derivatives, BodyPose};

const FK_SCALE: f64 = 10.0;
const MOMENT_ARM: f64 = 0.1;
const REGION_SCALE: f64 = 10.0;
const FORCE_BOUND: f64 = 50.0;

/// Inequality rows per contact: the cone rows followed by the torque row.
pub const INEQ_PER_CONTACT: usize = ROWS_PER_CONTACT + 1;

#[derive(Debug, Clone, Copy)]
enum Foothold {
    Fixed(Vector2<f64>),
    Var(usize),
}

#[derive(Debug, Clone)]
struct ContactSlot {
    limb: usize,
    wall: usize,
    theta: usize,
    force: usize,
    foothold: Foothold,
}

#[derive(Debug, Clone)]
struct InstantSlot {
    round: usize,
    index: usize,
    pose: usize,
    contacts: Vec<ContactSlot>,
    eq_row: usize,
    ineq_row: usize,
}

/// Sizes of the assembled program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemSize {
    pub vars: usize,
    pub eq: usize,
    pub ineq: usize,
}

/// The planning problem as a nonlinear program.
///
/// Variables per critical instant are the body position and orientation
/// followed, for each load-bearing limb, by its joint angles and its contact
/// force in units of `weight / n_limbs`. Footholds for every round and limb
/// come last as wall coordinates.
pub struct PlanNlp<'a> {
    prob: &'a PlanProblem,
    instants: Vec<InstantSlot>,
    footholds: Vec<Vec<usize>>,
    size: ProblemSize,
    region_row: usize,
    stride_row: usize,
    budget: RiskBudget,
    quantile: f64,
    force_scale: f64,
    nominal_angles: Vec<Vector3<f64>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Gripping-force model evaluated at one contact.
struct Grip {
    state: GripState<f64>,
    mean: f64,
    sd: f64,
    /// Derivatives of `mean - z sd` with respect to `(alpha, beta, gamma, lambda)`.
    d_eff: [f64; 4],
}

struct ContactKin {
    rb: Matrix3<f64>,
    drb: [Matrix3<f64>; 3],
    /// Foot in the body frame.
    foot_body: Vector3<f64>,
    /// `3 x H` Jacobian in the body frame.
    jac_body: DMatrix<f64>,
    djac_body: Vec<DMatrix<f64>>,
}

fn cross_matrix(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

impl<'a> PlanNlp<'a> {
    pub fn new(prob: &'a PlanProblem) -> Result<Self> {
        prob.validate()?;
        let robot = &prob.robot;
        let gait = &prob.gait;
        let n_limbs = robot.n_limbs();
        let budget = prob.risk_budget()?;
        let quantile = risk::inv_norm_cdf(1.0 - budget.delta_jk)?;

        let mut lower = Vec::new();
        let mut upper = Vec::new();
        fn push(lower: &mut Vec<f64>, upper: &mut Vec<f64>, lo: f64, hi: f64) {
            lower.push(lo);
            upper.push(hi);
        }

        let init = &prob.initial_pose;
        let stride = &prob.stride;
        let mut instants = Vec::new();
        let mut eq_row = 0;
        let mut ineq_row = 0;
        let mut pending: Vec<(usize, usize, usize)> = Vec::new();
        for round in 1..=gait.rounds {
            let reach = round as f64;
            for (index, inst) in gait.instants.iter().enumerate() {
                let pose = lower.len();
                for k in 0..3 {
                    let d = reach * stride.body_position;
                    push(
                        &mut lower,
                        &mut upper,
                        init.position[k] - d,
                        init.position[k] + d,
                    );
                }
                for k in 0..3 {
                    let d = reach * stride.body_rotation;
                    push(&mut lower, &mut upper, init.rpy[k] - d, init.rpy[k] + d);
                }
                let mut contacts = Vec::new();
                for limb in inst.contact_limbs() {
                    let l = &robot.limbs[limb];
                    let theta = lower.len();
                    for j in 0..l.dof() {
                        push(&mut lower, &mut upper, l.joint_lower[j], l.joint_upper[j]);
                    }
                    let force = lower.len();
                    for _ in 0..3 {
                        push(&mut lower, &mut upper, -FORCE_BOUND, FORCE_BOUND);
                    }
                    let on_round = if inst.stepped[limb] { round } else { round - 1 };
                    let foothold = if on_round == 0 {
                        Foothold::Fixed(prob.initial_footholds[limb])
                    } else {
                        pending.push((instants.len(), contacts.len(), on_round));
                        Foothold::Var(usize::MAX)
                    };
                    contacts.push(ContactSlot {
                        limb,
                        wall: prob.limb_wall[limb],
                        theta,
                        force,
                        foothold,
                    });
                }
                let nc = contacts.len();
                instants.push(InstantSlot {
                    round,
                    index,
                    pose,
                    contacts,
                    eq_row,
                    ineq_row,
                });
                eq_row += 6 + 3 * nc;
                ineq_row += INEQ_PER_CONTACT * nc;
            }
        }
        let mut footholds = Vec::with_capacity(gait.rounds);
        for round in 1..=gait.rounds {
            let reach = round as f64 * stride.foothold;
            let mut per_limb = Vec::with_capacity(n_limbs);
            for limb in 0..n_limbs {
                let q0 = prob.initial_footholds[limb];
                let region = &prob.terrain.walls[prob.limb_wall[limb]].region;
                let (mut lo, mut hi) = (
                    Vector2::repeat(f64::INFINITY),
                    Vector2::repeat(f64::NEG_INFINITY),
                );
                for v in region.vertices() {
                    lo = lo.inf(v);
                    hi = hi.sup(v);
                }
                let off = lower.len();
                for k in 0..2 {
                    push(
                        &mut lower,
                        &mut upper,
                        (q0[k] - reach).max(lo[k]),
                        (q0[k] + reach).min(hi[k]),
                    );
                }
                per_limb.push(off);
            }
            footholds.push(per_limb);
        }
        for (i, c, round) in pending {
            let limb = instants[i].contacts[c].limb;
            instants[i].contacts[c].foothold = Foothold::Var(footholds[round - 1][limb]);
        }

        let region_row = ineq_row;
        let region_rows: usize = (0..n_limbs)
            .map(|l| prob.terrain.walls[prob.limb_wall[l]].region.n_edges())
            .sum::<usize>()
            * gait.rounds;
        let stride_row = region_row + region_rows;
        let stride_rows = (gait.rounds - 1) * (12 * gait.instants_per_round() + 4 * n_limbs);

        let nominal_angles = (0..n_limbs)
            .map(|l| {
                let frame = &prob.terrain.walls[prob.limb_wall[l]].frame;
                robot.gripper_angles(init, l, &prob.initial_joints[l], frame)
            })
            .collect();

        let size = ProblemSize {
            vars: lower.len(),
            eq: eq_row,
            ineq: stride_row + stride_rows,
        };
        Ok(Self {
            prob,
            instants,
            footholds,
            size,
            region_row,
            stride_row,
            budget,
            quantile,
            force_scale: robot.weight() / n_limbs as f64,
            nominal_angles,
            lower,
            upper,
        })
    }

    pub fn size(&self) -> ProblemSize {
        self.size
    }

    pub fn budget(&self) -> &RiskBudget {
        &self.budget
    }

    /// `Phi^-1(1 - delta_jk)`.
    pub fn quantile(&self) -> f64 {
        self.quantile
    }

    fn pose(&self, x: &[f64], inst: &InstantSlot) -> BodyPose<f64> {
        let o = inst.pose;
        BodyPose::new(
            Vector3::new(x[o], x[o + 1], x[o + 2]),
            Vector3::new(x[o + 3], x[o + 4], x[o + 5]),
        )
    }

    fn uv(&self, x: &[f64], f: Foothold) -> Vector2<f64> {
        match f {
            Foothold::Fixed(q) => q,
            Foothold::Var(o) => Vector2::new(x[o], x[o + 1]),
        }
    }

    fn force(&self, x: &[f64], c: &ContactSlot) -> Vector3<f64> {
        Vector3::new(x[c.force], x[c.force + 1], x[c.force + 2])
    }

    fn theta<'x>(&self, x: &'x [f64], c: &ContactSlot) -> &'x [f64] {
        &x[c.theta..c.theta + self.prob.robot.limbs[c.limb].dof()]
    }

    fn kinematics(
        &self,
        pose: &BodyPose<f64>,
        c: &ContactSlot,
        theta: &[f64],
        with_derivatives: bool,
    ) -> ContactKin {
        let l = &self.prob.robot.limbs[c.limb];
        let st = l.chain(theta);
        let rm = l.mount_rotation();
        let h = l.dof();
        let mut jac_body = DMatrix::zeros(3, h);
        for j in 0..h {
            let col = rm
                * Vector3::new(
                    st.jacobian[(0, j)],
                    st.jacobian[(1, j)],
                    st.jacobian[(2, j)],
                );
            jac_body.set_column(j, &col);
        }
        let djac_body = if with_derivatives {
            l.jacobian_derivatives(&st)
                .into_iter()
                .map(|d| {
                    let mut out = DMatrix::zeros(3, h);
                    for j in 0..h {
                        out.set_column(j, &(rm * Vector3::new(d[(0, j)], d[(1, j)], d[(2, j)])));
                    }
                    out
                })
                .collect()
        } else {
            Vec::new()
        };
        ContactKin {
            rb: pose.rotation(),
            drb: rpy_matrix_derivatives(&pose.rpy),
            foot_body: l.mount_position + rm * st.foot,
            jac_body,
            djac_body,
        }
    }

    fn angles(&self, pose: &BodyPose<f64>, c: &ContactSlot, theta: &[f64]) -> Vector3<f64> {
        if self.prob.couple_orientation {
            let frame = &self.prob.terrain.walls[c.wall].frame;
            self.prob.robot.gripper_angles(pose, c.limb, theta, frame)
        } else {
            self.nominal_angles[c.limb]
        }
    }

    fn grip(&self, angles: &Vector3<f64>, lambda: f64, with_gradient: bool) -> Grip {
        let state = GripState::new(angles[0], angles[1], angles[2], lambda);
        let gp = &self.prob.gp;
        let noise = gp.hyperparams().sigma_n * gp.hyperparams().sigma_n;
        if with_gradient {
            let g = gp.predict_with_gradient(&state);
            let sd = (g.variance + noise).sqrt();
            let mut d_eff = [0.0; 4];
            for k in 0..4 {
                let d_sd = if sd > 1e-12 {
                    g.d_variance[k] / (2.0 * sd)
                } else {
                    0.0
                };
                d_eff[k] = g.d_mean[k] - self.quantile * d_sd;
            }
            Grip {
                state,
                mean: g.mean,
                sd,
                d_eff,
            }
        } else {
            let (mean, var) = gp.predict_observation(&state);
            Grip {
                state,
                mean,
                sd: var.sqrt(),
                d_eff: [0.0; 4],
            }
        }
    }

    /// Row values of the cone for a scaled force: `[-n.f, (+/-zeta, +/-xi rows)]`.
    fn cone_values(
        &self,
        c: &ContactSlot,
        x_f: &Vector3<f64>,
        lambda: f64,
        grip: &Grip,
    ) -> [f64; ROWS_PER_CONTACT] {
        let fr = &self.prob.terrain.walls[c.wall].frame;
        let eff = (grip.mean - self.quantile * grip.sd) / self.force_scale;
        let nf = fr.n.dot(x_f);
        let zf = fr.zeta.dot(x_f);
        let xf = fr.xi.dot(x_f);
        [
            -nf,
            zf - lambda * nf - eff,
            -zf - lambda * nf - eff,
            xf - lambda * nf - eff,
            -xf - lambda * nf - eff,
        ]
    }

    fn torque_row(
        &self,
        c: &ContactSlot,
        kin: &ContactKin,
        f_world: &Vector3<f64>,
    ) -> (f64, nalgebra::DVector<f64>) {
        let tau = kin.jac_body.transpose() * (kin.rb.transpose() * f_world);
        let lim = self.prob.robot.limbs[c.limb].torque_limit;
        ((tau.norm_squared() - lim * lim) / (lim * lim), tau)
    }

    /// Stochastic cone margins in newtons at the given contact, positive when
    /// satisfied, plus the gripping model values used.
    fn contact_record(&self, x: &[f64], inst: &InstantSlot, c: &ContactSlot) -> ContactRecord {
        let pose = self.pose(x, inst);
        let theta = self.theta(x, c).to_vec();
        let wall = &self.prob.terrain.walls[c.wall];
        let q = self.uv(x, c.foothold);
        let lambda = wall.friction_at(&q);
        let angles = self.angles(&pose, c, &theta);
        let grip = self.grip(&angles, lambda, false);
        let x_f = self.force(x, c);
        let f = x_f * self.force_scale;
        let rows = self.cone_values(c, &x_f, lambda, &grip);
        let kin = self.kinematics(&pose, c, &theta, false);
        let (_, tau) = self.torque_row(c, &kin, &f);
        let p = wall.point(&q);
        ContactRecord {
            limb: c.limb,
            wall: c.wall,
            foothold_uv: [q.x, q.y],
            foothold: [p.x, p.y, p.z],
            joints: theta,
            force: [f.x, f.y, f.z],
            lambda,
            grip_state: grip.state.to_array(),
            grip_mean: grip.mean,
            grip_sd: grip.sd,
            cone_margins: rows.map(|r| -r * self.force_scale),
            torque: tau.iter().copied().collect(),
        }
    }

    /// Unpacks a solution vector.
    pub fn trajectory(&self, x: &[f64]) -> Trajectory {
        let prob = self.prob;
        let instants = self
            .instants
            .iter()
            .map(|inst| {
                let pose = self.pose(x, inst);
                let gi = &prob.gait.instants[inst.index];
                InstantRecord {
                    round: inst.round,
                    index: inst.index,
                    phase: gi.phase,
                    kind: gi.kind,
                    position: pose.position.into(),
                    rpy: pose.rpy.into(),
                    contacts: inst
                        .contacts
                        .iter()
                        .map(|c| self.contact_record(x, inst, c))
                        .collect(),
                    swing: gi.swing_limbs().collect(),
                }
            })
            .collect();
        let mut footholds = Vec::new();
        for round in 0..=prob.gait.rounds {
            for limb in 0..prob.robot.n_limbs() {
                let q = if round == 0 {
                    prob.initial_footholds[limb]
                } else {
                    let o = self.footholds[round - 1][limb];
                    Vector2::new(x[o], x[o + 1])
                };
                let wall = &prob.terrain.walls[prob.limb_wall[limb]];
                let p = wall.point(&q);
                footholds.push(FootholdRecord {
                    round,
                    limb,
                    wall: prob.limb_wall[limb],
                    uv: [q.x, q.y],
                    position: [p.x, p.y, p.z],
                    lambda: wall.friction_at(&q),
                });
            }
        }
        Trajectory {
            delta: prob.delta,
            delta_jk: self.budget.delta_jk,
            quantile: self.quantile,
            rounds: prob.gait.rounds,
            constraints_per_round: self.budget.constraints_per_round,
            instants,
            footholds,
        }
    }

    /// Packs a trajectory of the same shape back into a variable vector.
    pub fn pack(&self, traj: &Trajectory) -> Vec<f64> {
        let mut x = self.initial_point();
        for (inst, rec) in self.instants.iter().zip(&traj.instants) {
            x[inst.pose..inst.pose + 3].copy_from_slice(&rec.position);
            x[inst.pose + 3..inst.pose + 6].copy_from_slice(&rec.rpy);
            for (c, cr) in inst.contacts.iter().zip(&rec.contacts) {
                x[c.theta..c.theta + cr.joints.len()].copy_from_slice(&cr.joints);
                for k in 0..3 {
                    x[c.force + k] = cr.force[k] / self.force_scale;
                }
            }
        }
        for fr in traj.footholds.iter().filter(|f| f.round >= 1) {
            let o = self.footholds[fr.round - 1][fr.limb];
            x[o] = fr.uv[0];
            x[o + 1] = fr.uv[1];
        }
        x
    }
}

impl NlpProblem<f64> for PlanNlp<'_> {
    fn n_vars(&self) -> usize {
        self.size.vars
    }

    fn n_eq(&self) -> usize {
        self.size.eq
    }

    fn n_ineq(&self) -> usize {
        self.size.ineq
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lower.clone(), self.upper.clone())
    }

    /// Every instant at the initial pose and joints, weight shared equally
    /// by the load-bearing limbs, footholds where they started.
    fn initial_point(&self) -> Vec<f64> {
        let prob = self.prob;
        let mut x = vec![0.0; self.size.vars];
        let up = Vector3::<f64>::z();
        for inst in &self.instants {
            x[inst.pose..inst.pose + 3].copy_from_slice(prob.initial_pose.position.as_slice());
            x[inst.pose + 3..inst.pose + 6].copy_from_slice(prob.initial_pose.rpy.as_slice());
            let share = prob.robot.weight() / inst.contacts.len() as f64 / self.force_scale;
            for c in &inst.contacts {
                let th = &prob.initial_joints[c.limb];
                x[c.theta..c.theta + th.len()].copy_from_slice(th);
                for k in 0..3 {
                    x[c.force + k] = share * up[k];
                }
            }
        }
        for round in &self.footholds {
            for (limb, &o) in round.iter().enumerate() {
                x[o] = prob.initial_footholds[limb].x;
                x[o + 1] = prob.initial_footholds[limb].y;
            }
        }
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
        x
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let w = &self.prob.weights;
        let mut prev = self.prob.initial_pose;
        let mut cost = 0.0;
        for inst in &self.instants {
            let pose = self.pose(x, inst);
            cost += w.body_position * (pose.position - prev.position).norm_squared();
            cost += w.body_rotation * (pose.rpy - prev.rpy).norm_squared();
            prev = pose;
            for c in &inst.contacts {
                cost += w.force * (self.force(x, c) * self.force_scale).norm_squared();
            }
        }
        for limb in 0..self.prob.robot.n_limbs() {
            let mut q_prev = self.prob.initial_footholds[limb];
            for round in &self.footholds {
                let q = Vector2::new(x[round[limb]], x[round[limb] + 1]);
                cost += w.foothold * (q - q_prev).norm_squared();
                q_prev = q;
            }
            cost += w.terminal * (q_prev - self.prob.destination[limb]).norm_squared();
        }
        cost
    }

    fn objective_gradient(&self, x: &[f64], g: &mut [f64]) {
        g.iter_mut().for_each(|v| *v = 0.0);
        let w = &self.prob.weights;
        let mut prev: Option<usize> = None;
        let init = &self.prob.initial_pose;
        for inst in &self.instants {
            let o = inst.pose;
            for k in 0..6 {
                let (wk, before) = if k < 3 {
                    (w.body_position, prev.map_or(init.position[k], |p| x[p + k]))
                } else {
                    (w.body_rotation, prev.map_or(init.rpy[k - 3], |p| x[p + k]))
                };
                let d = 2.0 * wk * (x[o + k] - before);
                g[o + k] += d;
                if let Some(p) = prev {
                    g[p + k] -= d;
                }
            }
            prev = Some(o);
            let s2 = self.force_scale * self.force_scale;
            for c in &inst.contacts {
                for k in 0..3 {
                    g[c.force + k] += 2.0 * w.force * s2 * x[c.force + k];
                }
            }
        }
        for limb in 0..self.prob.robot.n_limbs() {
            let mut prev: Option<usize> = None;
            for round in &self.footholds {
                let o = round[limb];
                for k in 0..2 {
                    let before = prev.map_or(self.prob.initial_footholds[limb][k], |p| x[p + k]);
                    let d = 2.0 * w.foothold * (x[o + k] - before);
                    g[o + k] += d;
                    if let Some(p) = prev {
                        g[p + k] -= d;
                    }
                }
                prev = Some(o);
            }
            let o = prev.expect("at least one round");
            for k in 0..2 {
                g[o + k] += 2.0 * w.terminal * (x[o + k] - self.prob.destination[limb][k]);
            }
        }
    }

    fn eq_values(&self, x: &[f64], out: &mut [f64]) {
        let n_limbs = self.prob.robot.n_limbs() as f64;
        let moment_scale = 1.0 / (n_limbs * MOMENT_ARM);
        for inst in &self.instants {
            let pose = self.pose(x, inst);
            let r = inst.eq_row;
            let mut fsum = Vector3::zeros();
            let mut msum = Vector3::zeros();
            for (ci, c) in inst.contacts.iter().enumerate() {
                let wall = &self.prob.terrain.walls[c.wall];
                let p = wall.point(&self.uv(x, c.foothold));
                let x_f = self.force(x, c);
                fsum += x_f;
                msum += (p - pose.position).cross(&x_f);
                let theta = self.theta(x, c);
                let foot = self
                    .prob
                    .robot
                    .forward_kinematics(&pose, c.limb, theta)
                    .position;
                let e = (foot - p) * FK_SCALE;
                out[r + 6 + 3 * ci..r + 9 + 3 * ci].copy_from_slice(e.as_slice());
            }
            let fe = fsum / n_limbs - Vector3::z();
            out[r..r + 3].copy_from_slice(fe.as_slice());
            out[r + 3..r + 6].copy_from_slice((msum * moment_scale).as_slice());
        }
    }

    fn eq_jacobian(&self, x: &[f64]) -> SparseMatrix<f64> {
        let n_limbs = self.prob.robot.n_limbs() as f64;
        let moment_scale = 1.0 / (n_limbs * MOMENT_ARM);
        let mut jm = SparseMatrix::new(self.size.eq, self.size.vars);
        for inst in &self.instants {
            let pose = self.pose(x, inst);
            let r = inst.eq_row;
            let o = inst.pose;
            let mut d_pos = Matrix3::zeros();
            for (ci, c) in inst.contacts.iter().enumerate() {
                let wall = &self.prob.terrain.walls[c.wall];
                let p = wall.point(&self.uv(x, c.foothold));
                let x_f = self.force(x, c);
                let arm = cross_matrix(&(p - pose.position)) * moment_scale;
                let fx = cross_matrix(&x_f) * moment_scale;
                d_pos += fx;
                for a in 0..3 {
                    jm.push(r + a, c.force + a, 1.0 / n_limbs);
                    for b in 0..3 {
                        jm.push(r + 3 + a, c.force + b, arm[(a, b)]);
                    }
                }
                let kin = self.kinematics(&pose, c, self.theta(x, c), false);
                let fk = r + 6 + 3 * ci;
                for a in 0..3 {
                    jm.push(fk + a, o + a, FK_SCALE);
                }
                for k in 0..3 {
                    let d = kin.drb[k] * kin.foot_body * FK_SCALE;
                    for a in 0..3 {
                        jm.push(fk + a, o + 3 + k, d[a]);
                    }
                }
                let jw = kin.rb * &kin.jac_body * FK_SCALE;
                for j in 0..jw.ncols() {
                    for a in 0..3 {
                        jm.push(fk + a, c.theta + j, jw[(a, j)]);
                    }
                }
                if let Foothold::Var(fo) = c.foothold {
                    for (k, axis) in [wall.u_axis, wall.v_axis].iter().enumerate() {
                        let dm = -(fx * axis);
                        for a in 0..3 {
                            jm.push(fk + a, fo + k, -axis[a] * FK_SCALE);
                            jm.push(r + 3 + a, fo + k, dm[a]);
                        }
                    }
                }
            }
            for a in 0..3 {
                for b in 0..3 {
                    jm.push(r + 3 + a, o + b, d_pos[(a, b)]);
                }
            }
        }
        jm
    }

    fn ineq_values(&self, x: &[f64], out: &mut [f64]) {
        for inst in &self.instants {
            let pose = self.pose(x, inst);
            for (ci, c) in inst.contacts.iter().enumerate() {
                let row = inst.ineq_row + INEQ_PER_CONTACT * ci;
                let wall = &self.prob.terrain.walls[c.wall];
                let q = self.uv(x, c.foothold);
                let lambda = wall.friction_at(&q);
                let theta = self.theta(x, c);
                let grip = self.grip(&self.angles(&pose, c, theta), lambda, false);
                let x_f = self.force(x, c);
                out[row..row + ROWS_PER_CONTACT]
                    .copy_from_slice(&self.cone_values(c, &x_f, lambda, &grip));
                let kin = self.kinematics(&pose, c, theta, false);
                out[row + ROWS_PER_CONTACT] = self.torque_row(c, &kin, &(x_f * self.force_scale)).0;
            }
        }
        let mut row = self.region_row;
        for round in &self.footholds {
            for (limb, &o) in round.iter().enumerate() {
                let q = Vector2::new(x[o], x[o + 1]);
                for (a, b) in self.prob.terrain.walls[self.prob.limb_wall[limb]]
                    .region
                    .half_planes()
                {
                    out[row] = (a.dot(&q) - b) * REGION_SCALE;
                    row += 1;
                }
            }
        }
        self.stride_rows(x, Some(out), None);
    }

    fn ineq_jacobian(&self, x: &[f64]) -> SparseMatrix<f64> {
        let mut jm = SparseMatrix::new(self.size.ineq, self.size.vars);
        for inst in &self.instants {
            let pose = self.pose(x, inst);
            for (ci, c) in inst.contacts.iter().enumerate() {
                self.contact_ineq_jacobian(x, inst, &pose, ci, c, &mut jm);
            }
        }
        let mut row = self.region_row;
        for round in &self.footholds {
            for (limb, &o) in round.iter().enumerate() {
                for (a, _) in self.prob.terrain.walls[self.prob.limb_wall[limb]]
                    .region
                    .half_planes()
                {
                    jm.push(row, o, a.x * REGION_SCALE);
                    jm.push(row, o + 1, a.y * REGION_SCALE);
                    row += 1;
                }
            }
        }
        self.stride_rows(x, None, Some(&mut jm));
        jm
    }
}

impl PlanNlp<'_> {
    fn contact_ineq_jacobian(
        &self,
        x: &[f64],
        inst: &InstantSlot,
        pose: &BodyPose<f64>,
        ci: usize,
        c: &ContactSlot,
        jm: &mut SparseMatrix<f64>,
    ) {
        let row = inst.ineq_row + INEQ_PER_CONTACT * ci;
        let wall = &self.prob.terrain.walls[c.wall];
        let fr = &wall.frame;
        let q = self.uv(x, c.foothold);
        let (lambda, dlambda) = wall.friction.eval(&q);
        let theta = self.theta(x, c);
        let h = theta.len();
        let angles = self.angles(pose, c, theta);
        let grip = self.grip(&angles, lambda, true);
        let x_f = self.force(x, c);
        let nf = fr.n.dot(&x_f);
        let s = self.force_scale;

        // Force columns.
        for a in 0..3 {
            jm.push(row, c.force + a, -fr.n[a]);
        }
        let tangents = [(fr.zeta, 1.0), (fr.zeta, -1.0), (fr.xi, 1.0), (fr.xi, -1.0)];
        for (k, (t, sign)) in tangents.iter().enumerate() {
            for a in 0..3 {
                jm.push(row + 1 + k, c.force + a, sign * t[a] - lambda * fr.n[a]);
            }
        }

        // Dependence on the gripper state: each stochastic row has
        // d/dlambda = -n.f - d_eff/dlambda and d/dangle = -d_eff/dangle.
        let d_row_dlambda = -nf - grip.d_eff[3] / s;
        if let Foothold::Var(fo) = c.foothold {
            for k in 0..4 {
                jm.push(row + 1 + k, fo, d_row_dlambda * dlambda.x);
                jm.push(row + 1 + k, fo + 1, d_row_dlambda * dlambda.y);
            }
        }
        if self.prob.couple_orientation {
            let d_row_dangle =
                Vector3::new(-grip.d_eff[0] / s, -grip.d_eff[1] / s, -grip.d_eff[2] / s);
            let (_, d_body, d_joint) = self
                .prob
                .robot
                .gripper_angles_with_jacobian(pose, c.limb, theta, fr);
            let cols: Vec<(usize, f64)> = (0..3)
                .map(|k| (inst.pose + 3 + k, d_row_dangle.dot(&d_body[k])))
                .chain(
                    d_joint
                        .iter()
                        .enumerate()
                        .map(|(j, d)| (c.theta + j, d_row_dangle.dot(d))),
                )
                .collect();
            for k in 0..4 {
                for &(col, v) in &cols {
                    jm.push(row + 1 + k, col, v);
                }
            }
        }

        // Torque row.
        let kin = self.kinematics(pose, c, theta, true);
        let f = x_f * s;
        let (_, tau) = self.torque_row(c, &kin, &f);
        let lim = self.prob.robot.limbs[c.limb].torque_limit;
        let k2 = 2.0 / (lim * lim);
        let tr = row + ROWS_PER_CONTACT;
        let df = kin.rb * (&kin.jac_body * &tau) * (k2 * s);
        for a in 0..3 {
            jm.push(tr, c.force + a, df[a]);
        }
        for k in 0..3 {
            let t = kin.jac_body.transpose() * (kin.drb[k].transpose() * f);
            jm.push(tr, inst.pose + 3 + k, k2 * tau.dot(&t));
        }
        let fb = kin.rb.transpose() * f;
        for j in 0..h {
            let t = kin.djac_body[j].transpose() * fb;
            jm.push(tr, c.theta + j, k2 * tau.dot(&t));
        }
    }

    /// Stride limits between matching instants and footholds of consecutive
    /// rounds, as `(d - b) / b <= 0` and `(-d - b) / b <= 0`.
    fn stride_rows(
        &self,
        x: &[f64],
        mut out: Option<&mut [f64]>,
        mut jm: Option<&mut SparseMatrix<f64>>,
    ) {
        let mut row = self.stride_row;
        let per_round = self.prob.gait.instants_per_round();
        let st = &self.prob.stride;
        let mut emit = |row: &mut usize, a: usize, b: usize, bound: f64| {
            let d = x[a] - x[b];
            for sign in [1.0, -1.0] {
                if let Some(o) = out.as_deref_mut() {
                    o[*row] = (sign * d - bound) / bound;
                }
                if let Some(j) = jm.as_deref_mut() {
                    j.push(*row, a, sign / bound);
                    j.push(*row, b, -sign / bound);
                }
                *row += 1;
            }
        };
        for t in per_round..self.instants.len() {
            let (cur, before) = (self.instants[t].pose, self.instants[t - per_round].pose);
            for k in 0..6 {
                let bound = if k < 3 {
                    st.body_position
                } else {
                    st.body_rotation
                };
                emit(&mut row, cur + k, before + k, bound);
            }
        }
        for r in 1..self.footholds.len() {
            for limb in 0..self.footholds[r].len() {
                for k in 0..2 {
                    emit(
                        &mut row,
                        self.footholds[r][limb] + k,
                        self.footholds[r - 1][limb] + k,
                        st.foothold,
                    );
                }
            }
        }
    }
}
