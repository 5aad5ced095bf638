//! Scenario files: TOML, strictly parsed, every key documented in the README.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use nalgebra::{Vector2, Vector3};
use riskclimb::gait::GaitSchedule;
use riskclimb::gp::{
    self, GeneratorInfo, GpModel, GripGrid, GripSample, Hyperparams, SyntheticGripModel,
};
use riskclimb::planner::{CostWeights, PlanProblem, StrideLimits};
use riskclimb::robot::{BodyPose, LimbChain, RobotModel};
use riskclimb::terrain::{ConvexPolygon, FrictionField, FrictionPatch, TerrainMap};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub robot: RobotConfig,
    pub terrain: TerrainConfig,
    pub gait: GaitConfig,
    pub start: StartConfig,
    pub risk: RiskConfig,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub bounds: BoundsConfig,
    pub gp: GpConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Leaving `limbs` out gives the six-limbed reference robot.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub mass: Option<f64>,
    pub gravity: Option<f64>,
    pub limbs: Option<Vec<LimbConfig>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimbConfig {
    pub name: String,
    pub mount: [f64; 3],
    pub mount_yaw_deg: f64,
    pub links: [f64; 3],
    /// Joint stiffness, N m / rad.
    pub stiffness: f64,
    pub torque_limit: f64,
    pub joint_lower_deg: Option<[f64; 3]>,
    pub joint_upper_deg: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainConfig {
    #[serde(default = "default_gap")]
    pub gap: f64,
    /// Contact region vertices `[u, v]`, shared by both walls.
    pub region: Vec<[f64; 2]>,
    #[serde(default = "default_blend")]
    pub blend_width: f64,
    pub left: WallConfig,
    pub right: WallConfig,
}

fn default_gap() -> f64 {
    1.2
}

fn default_blend() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallConfig {
    pub friction: f64,
    #[serde(default)]
    pub patches: Vec<PatchConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub u: [f64; 2],
    pub v: [f64; 2],
    pub friction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitKind {
    OneLeg,
    Tripod,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitConfig {
    #[serde(rename = "type")]
    pub kind: GaitKind,
    pub rounds: usize,
    /// Limb order for `one_leg`.
    pub order: Option<Vec<usize>>,
    /// Limbs lifted together in each phase, for `custom`.
    pub phases: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartConfig {
    pub body: [f64; 3],
    #[serde(default)]
    pub body_rpy_deg: [f64; 3],
    /// Wall-coordinate displacement of every foothold at the destination.
    pub climb: [f64; 2],
    /// Gripper orientation relative to the wall in the standing pose.
    pub gripper_deg: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub delta: f64,
    pub forced_m: Option<usize>,
    /// Risk bounds swept when `--deltas` is not given.
    #[serde(default)]
    pub sweep: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub body_position: f64,
    pub body_rotation_deg: f64,
    pub foothold: f64,
    pub deflection: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        let s = StrideLimits::default();
        Self {
            body_position: s.body_position,
            body_rotation_deg: s.body_rotation.to_degrees(),
            foothold: s.foothold,
            deflection: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    /// Pull-test CSV, relative to the scenario file.
    pub dataset: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default = "yes")]
    pub optimize: bool,
    pub hyperparams: Option<Hyperparams<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
}

fn default_reps() -> usize {
    20
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol_feas: f64,
    pub tol_kkt: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub couple_orientation: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = riskclimb::nlp::SolveOptions::default();
        Self {
            tol_feas: s.tol_feas,
            tol_kkt: s.tol_kkt,
            max_outer: s.max_outer,
            max_inner: s.max_inner,
            couple_orientation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Output directory, relative to the scenario file.
    pub dir: PathBuf,
    pub iteration_log: bool,
    pub certify_samples: usize,
    pub certify_seed: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            iteration_log: false,
            certify_samples: 100_000,
            certify_seed: 1,
        }
    }
}

/// A parsed scenario together with the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub base: PathBuf,
}

impl ScenarioConfig {
    /// Parses TOML, reporting the key path of the first schema error.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("scenario error at `{path}`: {}", e.into_inner().message())
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> anyhow::Result<()> {
        if !(0.0..1.0).contains(&self.risk.delta) {
            bail!(
                "scenario error at `risk.delta`: must lie in [0, 1), got {}",
                self.risk.delta
            );
        }
        if self.gp.dataset.is_some() == self.gp.synthetic.is_some() {
            bail!("scenario error at `gp`: give exactly one of `dataset` or `synthetic`");
        }
        match self.gait.kind {
            GaitKind::OneLeg if self.gait.order.is_none() => {
                bail!("scenario error at `gait.order`: required for a one_leg gait")
            }
            GaitKind::Custom if self.gait.phases.is_none() => {
                bail!("scenario error at `gait.phases`: required for a custom gait")
            }
            _ => {}
        }
        if self.output.certify_samples < 10_000 {
            bail!("scenario error at `output.certify_samples`: needs at least 10000");
        }
        Ok(())
    }

    pub fn robot(&self) -> anyhow::Result<RobotModel<f64>> {
        let mut r = RobotModel::hexapod();
        if let Some(limbs) = &self.robot.limbs {
            r.limbs = limbs
                .iter()
                .map(|l| {
                    let mut c = LimbChain::yaw_pitch_pitch(
                        &l.name,
                        Vector3::from(l.mount),
                        l.mount_yaw_deg.to_radians(),
                        l.links,
                        l.stiffness,
                        l.torque_limit,
                    );
                    if let Some(lo) = l.joint_lower_deg {
                        c.joint_lower = lo.iter().map(|d| d.to_radians()).collect();
                    }
                    if let Some(hi) = l.joint_upper_deg {
                        c.joint_upper = hi.iter().map(|d| d.to_radians()).collect();
                    }
                    c
                })
                .collect();
        }
        if let Some(m) = self.robot.mass {
            r.mass = m;
        }
        if let Some(g) = self.robot.gravity {
            r.gravity = g;
        }
        r.validate().context("scenario error at `robot`")?;
        Ok(r)
    }

    pub fn terrain(&self) -> anyhow::Result<TerrainMap> {
        let t = &self.terrain;
        let region =
            ConvexPolygon::new(t.region.iter().map(|v| Vector2::new(v[0], v[1])).collect())
                .context("scenario error at `terrain.region`")?;
        let field = |w: &WallConfig| FrictionField {
            base: w.friction,
            patches: w
                .patches
                .iter()
                .map(|p| FrictionPatch {
                    u_min: p.u[0],
                    u_max: p.u[1],
                    v_min: p.v[0],
                    v_max: p.v[1],
                    lambda: p.friction,
                })
                .collect(),
            blend_width: t.blend_width,
        };
        TerrainMap::parallel_walls(t.gap, region, field(&t.left), field(&t.right))
            .context("scenario error at `terrain`")
    }

    pub fn gait(&self, n_limbs: usize) -> anyhow::Result<GaitSchedule> {
        let g = &self.gait;
        let s = match g.kind {
            GaitKind::OneLeg => {
                GaitSchedule::one_leg(n_limbs, g.rounds, g.order.as_deref().unwrap_or_default())
            }
            GaitKind::Tripod => GaitSchedule::tripod(g.rounds),
            GaitKind::Custom => GaitSchedule::custom(
                "custom",
                n_limbs,
                g.rounds,
                g.phases.clone().unwrap_or_default(),
            ),
        };
        s.context("scenario error at `gait`")
    }

    /// Training samples and, for synthetic data, how they were generated.
    pub fn samples(
        &self,
        base: &Path,
    ) -> anyhow::Result<(Vec<GripSample<f64>>, Option<GeneratorInfo>)> {
        if let Some(s) = self.gp.synthetic {
            let model = SyntheticGripModel::default();
            let samples = model.generate(&GripGrid::default(), s.reps, s.seed);
            return Ok((
                samples,
                Some(GeneratorInfo {
                    seed: s.seed,
                    reps: s.reps,
                    model,
                }),
            ));
        }
        let path = base.join(self.gp.dataset.as_ref().expect("checked on parse"));
        let samples =
            gp::load_dataset(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok((samples, None))
    }

    pub fn fit_gp(&self, base: &Path) -> anyhow::Result<(GpModel<f64>, Option<GeneratorInfo>)> {
        let (samples, info) = self.samples(base)?;
        let hp = self
            .gp
            .hyperparams
            .unwrap_or_else(|| Hyperparams::heuristic(&samples));
        let model =
            gp::fit(&samples, &hp, self.gp.optimize).context("fitting the gripping-force model")?;
        Ok((model, info))
    }

    /// The planning problem at risk bound `delta`.
    pub fn problem(&self, gp: Arc<GpModel<f64>>, delta: f64) -> anyhow::Result<PlanProblem> {
        let robot = self.robot()?;
        let gait = self.gait(robot.n_limbs())?;
        let deg = |a: [f64; 3]| Vector3::from(a.map(f64::to_radians));
        let mut p = PlanProblem::standing(
            robot,
            self.terrain()?,
            gait,
            gp,
            delta,
            BodyPose::new(Vector3::from(self.start.body), deg(self.start.body_rpy_deg)),
            Vector2::from(self.start.climb),
            deg(self.start.gripper_deg),
        )
        .context("building the standing configuration")?;
        p.forced_m = self.risk.forced_m;
        p.weights = self.weights;
        p.stride = StrideLimits {
            body_position: self.bounds.body_position,
            body_rotation: self.bounds.body_rotation_deg.to_radians(),
            foothold: self.bounds.foothold,
        };
        p.deflection_bound = self.bounds.deflection;
        p.couple_orientation = self.solver.couple_orientation;
        p.solver.tol_feas = self.solver.tol_feas;
        p.solver.tol_kkt = self.solver.tol_kkt;
        p.solver.max_outer = self.solver.max_outer;
        p.solver.max_inner = self.solver.max_inner;
        p.validate().context("scenario error")?;
        Ok(p)
    }
}

impl Scenario {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config =
            ScenarioConfig::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base })
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base.join(&self.config.output.dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden(name: &str) -> ScenarioConfig {
        let p = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("scenarios")
            .join(format!("{name}.toml"));
        Scenario::load(&p).unwrap().config
    }

    #[test]
    fn golden_scenarios_parse_and_build() {
        for name in ["energy_sweep", "nonuniform_walls", "tripod_flip"] {
            let c = golden(name);
            assert_eq!(c.name, name);
            assert!(c.risk.sweep.len() >= 2);
            let t = c.terrain().unwrap();
            assert_eq!(t.walls.len(), 2);
            assert_eq!(c.gait(6).unwrap().rounds, 1);
        }
    }

    #[test]
    fn partial_weights_keep_the_other_defaults() {
        let w = golden("nonuniform_walls").weights;
        assert_eq!(w.force, 3.5e-3);
        assert_eq!(w.terminal, CostWeights::default().terminal);
    }

    #[test]
    fn schema_errors_carry_the_key_path() {
        let text = std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/tripod_flip.toml"),
        )
        .unwrap();
        let e = ScenarioConfig::parse(&text.replace("rounds = 1", "rounds = \"one\"")).unwrap_err();
        assert!(e.to_string().contains("gait.rounds"), "{e}");
        let e = ScenarioConfig::parse(&text.replace("synthetic = { seed = 7, reps = 20 }", ""))
            .unwrap_err();
        assert!(e.to_string().contains("`gp`"), "{e}");
        let e = ScenarioConfig::parse(&text.replace("delta = 0.4", "delta = 1.5")).unwrap_err();
        assert!(e.to_string().contains("risk.delta"), "{e}");
    }

    #[test]
    fn explicit_limbs_replace_the_reference_robot() {
        let text = std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/tripod_flip.toml"),
        )
        .unwrap();
        let mut limbs = String::from("[robot]\nmass = 9.0\n");
        for (i, (y, yaw)) in [(0.2, 90.0), (-0.2, -90.0)].iter().enumerate() {
            limbs += &format!(
                "[[robot.limbs]]\nname = \"l{i}\"\nmount = [0.0, {y}, 0.0]\nmount_yaw_deg = {yaw}\nlinks = [0.1, 0.2, 0.2]\nstiffness = 500.0\ntorque_limit = 20.0\n"
            );
        }
        let c = ScenarioConfig::parse(&format!("{text}\n{limbs}")).unwrap();
        let r = c.robot().unwrap();
        assert_eq!(r.n_limbs(), 2);
        assert_eq!(r.mass, 9.0);
        assert_eq!(r.limbs[1].torque_limit, 20.0);
    }
}
