//! Multi-round motion planning under a joint risk bound.
//!
//! [`PlanProblem`] describes the robot, walls, gait and risk budget;
//! [`plan`] assembles it into a nonlinear program, solves it and unpacks a
//! [`Trajectory`] of body poses, joint angles, footholds and contact forces
//! at every critical instant.

mod assemble;
mod deflection;

pub use assemble::{PlanNlp, ProblemSize, INEQ_PER_CONTACT};
pub use deflection::{
    smallest_enclosing_ball, solve_deflection, ContactDeflection, InstantDeflection,
};

use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::{GaitSchedule, InstantKind};
use crate::gp::GpModel;
use crate::nlp::{self, IterRecord, SolveOptions, SolveStatus};
use crate::risk::{self, RiskBudget, STOCHASTIC_ROWS_PER_CONTACT};
use crate::robot::{BodyPose, RobotModel};
use crate::terrain::TerrainMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    /// Distance of the last round's footholds from the destination.
    pub terminal: f64,
    /// Body displacement between consecutive instants.
    pub body_position: f64,
    /// Body rotation between consecutive instants.
    pub body_rotation: f64,
    /// Foothold displacement between consecutive rounds.
    pub foothold: f64,
    /// Sum of squared contact forces, per N^2.
    pub force: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            terminal: 10.0,
            body_position: 1.0,
            body_rotation: 1.0,
            foothold: 1.0,
            force: 1e-4,
        }
    }
}

/// Per-component bounds on motion between matching instants of consecutive
/// rounds (the first round is measured from the initial configuration).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrideLimits {
    pub body_position: f64,
    pub body_rotation: f64,
    pub foothold: f64,
}

impl Default for StrideLimits {
    fn default() -> Self {
        Self {
            body_position: 0.1,
            body_rotation: 10f64.to_radians(),
            foothold: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanProblem {
    pub robot: RobotModel<f64>,
    pub terrain: TerrainMap,
    pub gait: GaitSchedule,
    pub gp: Arc<GpModel<f64>>,
    /// Wall each limb grips.
    pub limb_wall: Vec<usize>,
    /// Joint probability of any friction-cone violation over the whole plan.
    pub delta: f64,
    /// Overrides the number of stochastic constraints per round used to split
    /// the budget.
    pub forced_m: Option<usize>,
    pub initial_pose: BodyPose<f64>,
    pub initial_joints: Vec<Vec<f64>>,
    pub initial_footholds: Vec<Vector2<f64>>,
    pub destination: Vec<Vector2<f64>>,
    pub weights: CostWeights,
    pub stride: StrideLimits,
    /// Let the gripper orientation seen by the gripping-force model follow the
    /// joint angles and body pose. When false the orientation is frozen at the
    /// initial configuration and only the friction coefficient varies.
    pub couple_orientation: bool,
    pub deflection_bound: f64,
    pub solver: SolveOptions,
}

impl PlanProblem {
    /// Robot standing at `body` with every foot on the wall it faces, directly
    /// across from its mount, aiming to move all footholds by `climb`.
    ///
    /// Each limb's gripper offset is calibrated so that the standing pose
    /// reads `gripper_target` (roll, pitch, yaw relative to the wall frame).
    pub fn standing(
        mut robot: RobotModel<f64>,
        terrain: TerrainMap,
        gait: GaitSchedule,
        gp: Arc<GpModel<f64>>,
        delta: f64,
        body: BodyPose<f64>,
        climb: Vector2<f64>,
        gripper_target: Vector3<f64>,
    ) -> Result<Self> {
        robot.validate()?;
        terrain.validate()?;
        let rb = body.rotation();
        let mut limb_wall = Vec::new();
        let mut footholds = Vec::new();
        let mut joints = Vec::new();
        for (i, l) in robot.limbs.clone().iter().enumerate() {
            let mount = body.transform(&l.mount_position);
            let heading = rb * l.mount_rotation() * Vector3::x();
            let w = (0..terrain.walls.len())
                .max_by(|a, b| {
                    let sa = -terrain.walls[*a].frame.n.dot(&heading);
                    let sb = -terrain.walls[*b].frame.n.dot(&heading);
                    sa.total_cmp(&sb)
                })
                .expect("terrain has walls");
            let wall = &terrain.walls[w];
            let q = wall.coords(&mount);
            let target = l.mount_rotation().transpose()
                * (rb.transpose() * (wall.point(&q) - body.position) - l.mount_position);
            let seed = vec![0.0, -0.8, 1.6];
            let seed = if l.dof() == 3 {
                seed
            } else {
                vec![0.0; l.dof()]
            };
            let th = l.inverse_kinematics(&target, &seed)?;
            robot.calibrate_gripper(&body, i, &th, &wall.frame, &gripper_target);
            limb_wall.push(w);
            footholds.push(q);
            joints.push(th);
        }
        let destination = footholds.iter().map(|q| q + climb).collect();
        let p = Self {
            robot,
            terrain,
            gait,
            gp,
            limb_wall,
            delta,
            forced_m: None,
            initial_pose: body,
            initial_joints: joints,
            initial_footholds: footholds,
            destination,
            weights: CostWeights::default(),
            stride: StrideLimits::default(),
            couple_orientation: true,
            deflection_bound: 0.02,
            solver: SolveOptions::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.terrain.validate()?;
        self.gait.validate()?;
        let n = self.robot.n_limbs();
        if self.gait.n_limbs != n {
            return Err(Error::InvalidInput(format!(
                "gait is defined for {} limbs, robot has {n}",
                self.gait.n_limbs
            )));
        }
        for (name, len) in [
            ("limb_wall", self.limb_wall.len()),
            ("initial_joints", self.initial_joints.len()),
            ("initial_footholds", self.initial_footholds.len()),
            ("destination", self.destination.len()),
        ] {
            if len != n {
                return Err(Error::InvalidInput(format!(
                    "{name} needs one entry per limb ({n}), got {len}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::InvalidInput(format!(
                "risk bound must lie in [0, 1), got {}",
                self.delta
            )));
        }
        if !(self.stride.body_position > 0.0
            && self.stride.body_rotation > 0.0
            && self.stride.foothold > 0.0)
        {
            return Err(Error::InvalidInput("stride limits must be positive".into()));
        }
        if !(self.deflection_bound > 0.0) {
            return Err(Error::InvalidInput(
                "deflection bound must be positive".into(),
            ));
        }
        for limb in 0..n {
            let Some(wall) = self.terrain.walls.get(self.limb_wall[limb]) else {
                return Err(Error::InvalidInput(format!(
                    "limb {limb} refers to a missing wall"
                )));
            };
            if self.initial_joints[limb].len() != self.robot.limbs[limb].dof() {
                return Err(Error::InvalidInput(format!(
                    "limb {limb}: initial joint vector has the wrong length"
                )));
            }
            let q = self.initial_footholds[limb];
            if wall.region.max_violation(&q) > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "limb {limb}: initial foothold lies outside the contact region"
                )));
            }
            let foot = self
                .robot
                .forward_kinematics(&self.initial_pose, limb, &self.initial_joints[limb])
                .position;
            let miss = (foot - wall.point(&q)).norm();
            if miss > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "limb {limb}: initial joints put the foot {miss:.3e} m away from its initial foothold"
                )));
            }
        }
        Ok(())
    }

    /// Number of stochastic cone rows per round, before any override.
    pub fn counted_constraints(&self) -> usize {
        risk::count_stochastic(&self.gait.contacts_per_instant())
    }

    pub fn risk_budget(&self) -> Result<RiskBudget> {
        let m = self.forced_m.unwrap_or_else(|| self.counted_constraints());
        risk::allocate(self.delta, self.gait.rounds, m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub limb: usize,
    pub wall: usize,
    pub foothold_uv: [f64; 2],
    pub foothold: [f64; 3],
    pub joints: Vec<f64>,
    /// Reaction force on the robot, world frame, newtons.
    pub force: [f64; 3],
    pub lambda: f64,
    /// `(alpha, beta, gamma, lambda)` with angles in radians.
    pub grip_state: [f64; 4],
    pub grip_mean: f64,
    pub grip_sd: f64,
    /// Reformulated cone rows as margins in newtons (non-negative when
    /// satisfied): normal row first, then `+zeta, -zeta, +xi, -xi`.
    pub cone_margins: [f64; 5],
    pub torque: Vec<f64>,
}

impl ContactRecord {
    pub fn min_stochastic_margin(&self) -> f64 {
        self.cone_margins[1..]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstantRecord {
    /// Rounds count from 1.
    pub round: usize,
    /// Position within the round.
    pub index: usize,
    pub phase: usize,
    pub kind: InstantKind,
    pub position: [f64; 3],
    pub rpy: [f64; 3],
    pub contacts: Vec<ContactRecord>,
    pub swing: Vec<usize>,
}

impl InstantRecord {
    pub fn pose(&self) -> BodyPose<f64> {
        BodyPose::new(self.position.into(), self.rpy.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootholdRecord {
    /// Round 0 holds the initial footholds.
    pub round: usize,
    pub limb: usize,
    pub wall: usize,
    pub uv: [f64; 2],
    pub position: [f64; 3],
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub delta: f64,
    pub delta_jk: f64,
    /// `Phi^-1(1 - delta_jk)`.
    pub quantile: f64,
    pub rounds: usize,
    pub constraints_per_round: usize,
    pub instants: Vec<InstantRecord>,
    pub footholds: Vec<FootholdRecord>,
}

impl Trajectory {
    /// Smallest reformulated stochastic cone margin over the plan, newtons.
    pub fn min_margin(&self) -> f64 {
        self.instants
            .iter()
            .flat_map(|i| i.contacts.iter())
            .map(ContactRecord::min_stochastic_margin)
            .fold(f64::INFINITY, f64::min)
    }

    /// Number of stochastic cone rows in the plan.
    pub fn n_stochastic(&self) -> usize {
        self.instants
            .iter()
            .map(|i| i.contacts.len())
            .sum::<usize>()
            * STOCHASTIC_ROWS_PER_CONTACT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyProxy {
    /// Sum over instants and contacts of `|f|^2`, N^2.
    pub force_sq: f64,
    /// Sum over instants and contacts of `|tau|^2`, (N m)^2.
    pub torque_sq: f64,
}

pub fn energy_proxy(traj: &Trajectory) -> EnergyProxy {
    let mut e = EnergyProxy {
        force_sq: 0.0,
        torque_sq: 0.0,
    };
    for c in traj.instants.iter().flat_map(|i| i.contacts.iter()) {
        e.force_sq += c.force.iter().map(|v| v * v).sum::<f64>();
        e.torque_sq += c.torque.iter().map(|v| v * v).sum::<f64>();
    }
    e
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub iterations: usize,
    pub inner_iterations: usize,
    pub objective: f64,
    pub max_eq_residual: f64,
    pub max_ineq_violation: f64,
    pub kkt_residual: f64,
    #[serde(skip)]
    pub wall_time_s: f64,
    pub polished: bool,
    pub history: Vec<IterRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub status: SolveStatus,
    /// Why the plan was rejected without solving, if it was.
    pub reason: Option<String>,
    pub budget: Option<RiskBudget>,
    pub size: Option<[usize; 3]>,
    pub solve: Option<SolveSummary>,
    pub trajectory: Option<Trajectory>,
    pub deflection: Option<Vec<InstantDeflection>>,
}

impl PlanOutcome {
    fn rejected(reason: String) -> Self {
        Self {
            status: SolveStatus::Infeasible,
            reason: Some(reason),
            budget: None,
            size: None,
            solve: None,
            trajectory: None,
            deflection: None,
        }
    }
}

/// Plans from the problem's default initial guess.
pub fn plan(problem: &PlanProblem) -> Result<PlanOutcome> {
    plan_from(problem, None)
}

/// Plans from `warm` if given (it must have the problem's shape).
///
/// A zero risk budget cannot be met by any plan and is reported as
/// infeasible without solving. A converged plan is followed by the
/// compliance analysis, which fails if any wall deflection exceeds the bound.
pub fn plan_from(problem: &PlanProblem, warm: Option<&Trajectory>) -> Result<PlanOutcome> {
    problem.validate()?;
    let nlp = match PlanNlp::new(problem) {
        Ok(n) => n,
        Err(Error::ZeroRisk) => {
            return Ok(PlanOutcome::rejected(
                "zero risk budget: no plan has zero violation probability".into(),
            ))
        }
        Err(e) => return Err(e),
    };
    let x0 = match warm {
        Some(t) => nlp.pack(t),
        None => nlp::NlpProblem::initial_point(&nlp),
    };
    let rep = nlp::solve_from(&nlp, &x0, &problem.solver);
    let traj = nlp.trajectory(&rep.x);
    let deflection = if rep.status == SolveStatus::Converged {
        Some(solve_deflection(
            &problem.robot,
            &traj,
            problem.deflection_bound,
        )?)
    } else {
        None
    };
    let size = nlp.size();
    Ok(PlanOutcome {
        status: rep.status,
        reason: None,
        budget: Some(*nlp.budget()),
        size: Some([size.vars, size.eq, size.ineq]),
        solve: Some(SolveSummary {
            iterations: rep.iterations,
            inner_iterations: rep.inner_iterations,
            objective: rep.objective,
            max_eq_residual: rep.max_eq_residual,
            max_ineq_violation: rep.max_ineq_violation,
            kkt_residual: rep.kkt_residual,
            wall_time_s: rep.wall_time_s,
            polished: rep.polished,
            history: rep.history,
        }),
        trajectory: Some(traj),
        deflection,
    })
}

#[cfg(test)]
mod tests;
