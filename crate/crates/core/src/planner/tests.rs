use std::sync::{Arc, OnceLock};

use approx::assert_relative_eq;
use nalgebra::{Vector2, Vector3};

use super::*;
use crate::gp::{fit, GripGrid, Hyperparams, SyntheticGripModel};
use crate::nlp::{check_derivatives, NlpProblem};
use crate::terrain::{ConvexPolygon, FrictionField};

fn trained_gp() -> Arc<GpModel<f64>> {
    static GP: OnceLock<Arc<GpModel<f64>>> = OnceLock::new();
    GP.get_or_init(|| {
        let samples = SyntheticGripModel::default().generate(&GripGrid::default(), 20, 7);
        Arc::new(fit(&samples, &Hyperparams::heuristic(&samples), true).unwrap())
    })
    .clone()
}

fn walls(lambda: f64) -> TerrainMap {
    TerrainMap::parallel_walls(
        1.2,
        ConvexPolygon::rectangle(-0.8, 0.8, -0.5, 2.0).unwrap(),
        FrictionField::uniform(lambda),
        FrictionField::uniform(lambda),
    )
    .unwrap()
}

fn problem(gait: GaitSchedule, delta: f64) -> PlanProblem {
    PlanProblem::standing(
        RobotModel::hexapod(),
        walls(2.3),
        gait,
        trained_gp(),
        delta,
        BodyPose::new(Vector3::new(0.0, 0.0, 0.5), Vector3::zeros()),
        Vector2::new(0.0, 0.3),
        Vector3::new(0.0, 0.0, 30f64.to_radians()),
    )
    .unwrap()
}

fn one_leg() -> GaitSchedule {
    GaitSchedule::one_leg(6, 1, &[3, 4, 5, 0, 1, 2]).unwrap()
}

#[test]
fn standing_configuration_touches_both_walls() {
    let p = problem(one_leg(), 0.1);
    assert_eq!(p.limb_wall, vec![0, 0, 0, 1, 1, 1]);
    for limb in 0..6 {
        let fs = p
            .robot
            .forward_kinematics(&p.initial_pose, limb, &p.initial_joints[limb]);
        assert_relative_eq!(fs.position.y.abs(), 0.6, epsilon = 1e-9);
        let frame = &p.terrain.walls[p.limb_wall[limb]].frame;
        let ang = p
            .robot
            .gripper_angles(&p.initial_pose, limb, &p.initial_joints[limb], frame);
        assert_relative_eq!(
            ang,
            Vector3::new(0.0, 0.0, 30f64.to_radians()),
            epsilon = 1e-9
        );
    }
}

#[test]
fn one_round_one_leg_counts() {
    let p = problem(one_leg(), 0.1);
    let nlp = PlanNlp::new(&p).unwrap();
    // 12 instants, 66 contacts, 6 limbs with 3 joints, 4-edge regions.
    let size = nlp.size();
    assert_eq!(size.vars, 12 * 6 + 66 * 6 + 2 * 6);
    assert_eq!(size.eq, 12 * 6 + 3 * 66);
    assert_eq!(size.ineq, 6 * 66 + 6 * 4);
    assert_eq!(nlp.budget().constraints_per_round, 264);
    assert_relative_eq!(nlp.budget().delta_jk, 0.1 / 264.0);
}

#[test]
fn stride_rows_appear_with_more_rounds() {
    let p = problem(GaitSchedule::tripod(3).unwrap(), 0.1);
    let nlp = PlanNlp::new(&p).unwrap();
    let size = nlp.size();
    let contacts = 3 * 18;
    assert_eq!(size.vars, 3 * 4 * 6 + contacts * 6 + 3 * 2 * 6);
    assert_eq!(size.eq, 3 * 4 * 6 + 3 * contacts);
    assert_eq!(size.ineq, 6 * contacts + 3 * 6 * 4 + 2 * (12 * 4 + 4 * 6));
}

#[test]
fn forced_count_overrides_allocation() {
    let mut p = problem(one_leg(), 0.1);
    p.forced_m = Some(100);
    assert_relative_eq!(p.risk_budget().unwrap().delta_jk, 1e-3);
}

#[test]
fn derivatives_match_at_initial_point() {
    for gait in [one_leg(), GaitSchedule::tripod(2).unwrap()] {
        let p = problem(gait, 0.05);
        let nlp = PlanNlp::new(&p).unwrap();
        let x0 = nlp.initial_point();
        let c = check_derivatives(&nlp, &x0, 1e-6);
        assert!(c.max_rel_error() <= 1e-4, "{c:?}");
    }
}

#[test]
fn derivatives_match_away_from_initial_point() {
    let p = problem(GaitSchedule::tripod(2).unwrap(), 0.05);
    let nlp = PlanNlp::new(&p).unwrap();
    let mut x = nlp.initial_point();
    let (lo, hi) = nlp.bounds();
    for (i, v) in x.iter_mut().enumerate() {
        let t = ((i * 7919) % 101) as f64 / 101.0 - 0.5;
        *v = (*v + 0.02 * t).clamp(lo[i], hi[i]);
    }
    let c = check_derivatives(&nlp, &x, 1e-6);
    assert!(c.max_rel_error() <= 1e-4, "{c:?}");
}

#[test]
fn zero_risk_is_rejected_without_solving() {
    let p = problem(one_leg(), 0.0);
    let out = plan(&p).unwrap();
    assert_eq!(out.status, SolveStatus::Infeasible);
    assert!(out.reason.unwrap().contains("zero risk"));
    assert!(out.solve.is_none());
}

#[test]
fn initial_point_round_trips_through_trajectory() {
    let p = problem(one_leg(), 0.1);
    let nlp = PlanNlp::new(&p).unwrap();
    let x0 = nlp.initial_point();
    let t = nlp.trajectory(&x0);
    assert_eq!(t.instants.len(), 12);
    assert_eq!(t.footholds.len(), 12);
    let back = nlp.pack(&t);
    for (a, b) in x0.iter().zip(&back) {
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }
    // Weight is shared evenly at the initial guess.
    let e = energy_proxy(&t);
    let w = p.robot.weight();
    assert_relative_eq!(
        e.force_sq,
        6.0 * 5.0 * (w / 5.0).powi(2) + 6.0 * 6.0 * (w / 6.0).powi(2),
        epsilon = 1e-9
    );
}
