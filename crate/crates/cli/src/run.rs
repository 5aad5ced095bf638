use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use rayon::prelude::*;
use riskclimb::gp::{self, GeneratorInfo, GpModel, GpModelDoc, GripGrid, SyntheticGripModel};
use riskclimb::nlp::{write_iteration_log, SolveStatus};
use riskclimb::planner::{
    energy_proxy, plan, EnergyProxy, InstantDeflection, SolveSummary, Trajectory,
};
use riskclimb::risk::RiskBudget;
use riskclimb::validator::{audit, certify, AuditReport, RiskReport, AUDIT_TOL};
use riskclimb::Error;
use serde::{Deserialize, Serialize};

use crate::config::{Scenario, ScenarioConfig};

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    InputError = 1,
    Infeasible = 2,
}

pub const PLAN_FORMAT: &str = "riskclimb-plan/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemCounts {
    pub variables: usize,
    pub equalities: usize,
    pub inequalities: usize,
}

/// Wall-clock information; the only part of a plan document that varies
/// between identical runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub generated_unix_s: u64,
    pub solve_s: f64,
    pub certify_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanDocument {
    pub format: String,
    pub scenario: ScenarioConfig,
    pub delta: f64,
    pub status: SolveStatus,
    pub reason: Option<String>,
    pub budget: Option<RiskBudget>,
    pub size: Option<ProblemCounts>,
    pub solve: Option<SolveSummary>,
    pub energy: Option<EnergyProxy>,
    pub min_margin: Option<f64>,
    pub trajectory: Option<Trajectory>,
    pub deflection: Option<Vec<InstantDeflection>>,
    pub audit: Option<AuditReport>,
    pub risk: Option<RiskReport>,
    pub gp: GpModelDoc,
    pub timing: Timing,
}

impl PlanDocument {
    pub fn exit(&self) -> Exit {
        let audited = self.audit.as_ref().is_some_and(|a| a.passes(AUDIT_TOL));
        if self.status == SolveStatus::Converged && self.reason.is_none() && audited {
            Exit::Ok
        } else {
            Exit::Infeasible
        }
    }
}

/// A fitted gripping-force model shared by every plan of a scenario.
pub struct FittedGp {
    pub model: Arc<GpModel<f64>>,
    pub doc: GpModelDoc,
}

pub fn fit_gp(scn: &Scenario) -> anyhow::Result<FittedGp> {
    let (model, info): (GpModel<f64>, Option<GeneratorInfo>) = scn.config.fit_gp(&scn.base)?;
    let doc = model.to_doc(info);
    Ok(FittedGp {
        model: Arc::new(model),
        doc,
    })
}

/// Plans, replays deflections, audits and certifies one risk bound.
pub fn plan_document(scn: &Scenario, gp: &FittedGp, delta: f64) -> anyhow::Result<PlanDocument> {
    let cfg = &scn.config;
    let problem = cfg.problem(gp.model.clone(), delta)?;
    let t0 = Instant::now();
    let (outcome, reason) = match plan(&problem) {
        Ok(o) => {
            let r = o.reason.clone();
            (Some(o), r)
        }
        Err(e @ Error::DeflectionBoundExceeded { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e).context("planning"),
    };
    let solve_s = t0.elapsed().as_secs_f64();
    let mut doc = PlanDocument {
        format: PLAN_FORMAT.into(),
        scenario: cfg.clone(),
        delta,
        status: outcome
            .as_ref()
            .map_or(SolveStatus::Infeasible, |o| o.status),
        reason,
        budget: outcome.as_ref().and_then(|o| o.budget),
        size: outcome
            .as_ref()
            .and_then(|o| o.size)
            .map(|[v, e, i]| ProblemCounts {
                variables: v,
                equalities: e,
                inequalities: i,
            }),
        solve: outcome.as_ref().and_then(|o| o.solve.clone()),
        energy: None,
        min_margin: None,
        trajectory: None,
        deflection: outcome.as_ref().and_then(|o| o.deflection.clone()),
        audit: None,
        risk: None,
        gp: gp.doc.clone(),
        timing: Timing {
            generated_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            solve_s,
            certify_s: 0.0,
        },
    };
    if let Some(traj) = outcome.and_then(|o| o.trajectory) {
        doc.energy = Some(energy_proxy(&traj));
        doc.min_margin = Some(traj.min_margin());
        doc.audit = Some(audit(&traj, &problem));
        if doc.status == SolveStatus::Converged {
            let t1 = Instant::now();
            let out = &cfg.output;
            doc.risk = Some(certify(
                &traj,
                &problem.terrain,
                &gp.model,
                out.certify_samples,
                out.certify_seed,
            )?);
            doc.timing.certify_s = t1.elapsed().as_secs_f64();
        }
        doc.trajectory = Some(traj);
    }
    Ok(doc)
}

/// Writes `bytes` next to `path` and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct FootholdRow {
    round: usize,
    limb: usize,
    x: f64,
    y: f64,
    z: f64,
    mu_at_foot: f64,
}

pub fn footholds_csv(traj: &Trajectory) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for f in &traj.footholds {
        w.serialize(FootholdRow {
            round: f.round,
            limb: f.limb,
            x: f.position[0],
            y: f.position[1],
            z: f.position[2],
            mu_at_foot: f.lambda,
        })?;
    }
    Ok(w.into_inner()?)
}

/// Writes the plan document and its CSVs into `dir`.
pub fn write_plan(doc: &PlanDocument, dir: &Path, iteration_log: bool) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json = serde_json::to_vec_pretty(doc)?;
    write_atomic(&dir.join("plan.json"), &json)?;
    if let Some(t) = &doc.trajectory {
        write_atomic(&dir.join("footholds.csv"), &footholds_csv(t)?)?;
    }
    if let Some(r) = &doc.risk {
        let mut buf = Vec::new();
        r.write_csv(&mut buf)?;
        write_atomic(&dir.join("risk.csv"), &buf)?;
    }
    if iteration_log {
        if let Some(s) = &doc.solve {
            let mut buf = Vec::new();
            write_iteration_log(&s.history, &mut buf)?;
            write_atomic(&dir.join("iterations.csv"), &buf)?;
        }
    }
    Ok(())
}

fn describe(doc: &PlanDocument) -> String {
    let mut s = format!("delta {}: {:?}", doc.delta, doc.status);
    if let Some(r) = &doc.reason {
        s += &format!(" ({r})");
    }
    if let Some(e) = &doc.energy {
        s += &format!(", energy proxy {:.1} N^2", e.force_sq);
    }
    if let Some(a) = &doc.audit {
        s += &format!(", audit max violation {:.2e}", a.max_violation());
    }
    if let Some(r) = &doc.risk {
        s += &format!(
            ", certified joint violation {:.5} +/- {:.5}",
            r.joint_rate, r.joint_half_width
        );
        if r.joint_rate - r.joint_half_width > doc.delta {
            s += " (above the risk bound: the budget was split over fewer constraints than the plan has)";
        }
    }
    s
}

pub fn run_plan(config: &Path) -> anyhow::Result<Exit> {
    let scn = Scenario::load(config)?;
    let gp = fit_gp(&scn)?;
    let doc = plan_document(&scn, &gp, scn.config.risk.delta)?;
    let dir = scn.output_dir();
    write_plan(&doc, &dir, scn.config.output.iteration_log)?;
    println!("{}", describe(&doc));
    println!("wrote {}", dir.join("plan.json").display());
    if doc.status == SolveStatus::Converged
        && !doc.audit.as_ref().is_some_and(|a| a.passes(AUDIT_TOL))
    {
        eprintln!("converged plan failed the independent audit");
    }
    Ok(doc.exit())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub status: SolveStatus,
    pub energy_proxy: Option<f64>,
    pub min_margin: Option<f64>,
    pub solve_time_s: f64,
}

impl From<&PlanDocument> for SweepRow {
    fn from(d: &PlanDocument) -> Self {
        Self {
            delta: d.delta,
            status: d.status,
            energy_proxy: d.energy.map(|e| e.force_sq),
            min_margin: d.min_margin,
            solve_time_s: d.timing.solve_s,
        }
    }
}

/// Directory holding one sweep row's outputs.
pub fn row_dir(out: &Path, delta: f64) -> PathBuf {
    out.join(format!("delta-{delta}"))
}

/// Plans every risk bound concurrently; returns the documents in input order.
pub fn sweep_documents(
    scn: &Scenario,
    gp: &FittedGp,
    deltas: &[f64],
) -> anyhow::Result<Vec<PlanDocument>> {
    deltas
        .par_iter()
        .map(|d| plan_document(scn, gp, *d))
        .collect()
}

pub fn run_sweep(config: &Path, deltas: Option<Vec<f64>>) -> anyhow::Result<Exit> {
    let scn = Scenario::load(config)?;
    let deltas = deltas.unwrap_or_else(|| scn.config.risk.sweep.clone());
    if deltas.len() < 2 {
        anyhow::bail!("a sweep needs at least two risk bounds (--deltas or risk.sweep)");
    }
    if let Some(d) = deltas.iter().find(|d| !(0.0..1.0).contains(*d)) {
        anyhow::bail!("risk bound {d} lies outside [0, 1)");
    }
    let gp = fit_gp(&scn)?;
    let out = scn.output_dir();
    let docs = sweep_documents(&scn, &gp, &deltas)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for doc in &docs {
        write_plan(
            doc,
            &row_dir(&out, doc.delta),
            scn.config.output.iteration_log,
        )?;
        w.serialize(SweepRow::from(doc))?;
        println!("{}", describe(doc));
    }
    write_atomic(&out.join("sweep.csv"), &w.into_inner()?)?;
    println!("wrote {}", out.join("sweep.csv").display());
    Ok(if docs.iter().all(|d| d.exit() == Exit::Ok) {
        Exit::Ok
    } else {
        Exit::Infeasible
    })
}

pub fn gen_dataset(seed: u64, reps: usize, grid: &GripGrid, out: &Path) -> anyhow::Result<Exit> {
    if grid.is_empty() {
        anyhow::bail!("the orientation grid is empty");
    }
    let samples = SyntheticGripModel::default().generate(grid, reps, seed);
    let mut buf = Vec::new();
    gp::write_dataset(&samples, &mut buf)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_atomic(out, &buf)?;
    println!("wrote {} rows to {}", samples.len(), out.display());
    Ok(Exit::Ok)
}

/// Re-certifies a saved plan with a fresh sample budget and seed.
pub fn run_certify(
    plan_path: &Path,
    samples: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> anyhow::Result<Exit> {
    let text = fs::read_to_string(plan_path)
        .with_context(|| format!("reading {}", plan_path.display()))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let doc: PlanDocument = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        anyhow::anyhow!(
            "{}: plan error at `{}`: {}",
            plan_path.display(),
            e.path(),
            e.inner()
        )
    })?;
    if doc.format != PLAN_FORMAT {
        anyhow::bail!(
            "{}: unsupported plan format `{}`",
            plan_path.display(),
            doc.format
        );
    }
    let Some(traj) = &doc.trajectory else {
        anyhow::bail!("{}: the plan holds no trajectory", plan_path.display());
    };
    let terrain = doc.scenario.terrain()?;
    let gp = GpModel::from_doc(&doc.gp)?;
    let rep = certify(traj, &terrain, &gp, samples, seed)?;
    let out = out.unwrap_or_else(|| plan_path.with_file_name("certify.csv"));
    let mut buf = Vec::new();
    rep.write_csv(&mut buf)?;
    write_atomic(&out, &buf)?;
    let bound = doc.delta + 3.0 * (doc.delta / samples as f64).sqrt();
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "joint violation {:.6} +/- {:.6} over {} samples (bound {:.6}); worst row {:.6}, per-row budget {:.6}",
        rep.joint_rate,
        rep.joint_half_width,
        samples,
        bound,
        rep.max_rate(),
        rep.delta_jk
    )?;
    writeln!(stdout, "wrote {}", out.display())?;
    Ok(if rep.joint_rate <= bound {
        Exit::Ok
    } else {
        Exit::Infeasible
    })
}
