//! The learning loop: prior certificate, safe exploration, refit, posterior
//! certificate, repeated for a configured number of iterations.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explore::{ExploreConfig, ExploreError, Explorer};
use crate::gp::{Dataset, GpError, GpModel, PolyKernel};
use crate::pendulum::{self, PendulumParams};
use crate::poly::{PolyError, PolyMatrix, PolyVector, Polynomial};
use crate::roa::{
    boundary_points, level_set_box, synthesize, synthesize_from, validate_certificate, volume_estimate, Certificate,
    RobustModel, RoaError, SynthesisOptions, ValidationReport,
};
use crate::sim::{
    finite_difference_labels, integrate, monitor_containment, ContainmentReport, LabelNoise, SimError, Trajectory,
    TrueSystem,
};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no certificate for the prior model: {0}")]
    PriorInfeasible(#[source] RoaError),
    #[error(
        "initial condition {x0:?} for iteration {iteration} is outside the certified region (V = {value:.6e} > {gamma:.6e})"
    )]
    OutsideRegion {
        iteration: usize,
        x0: Vec<f64>,
        value: f64,
        gamma: f64,
    },
    #[error("trajectory of iteration {iteration} left the certified region (excess {excess:.3e})")]
    SafetyViolation {
        iteration: usize,
        excess: f64,
        partial: Box<LearnResult>,
    },
    #[error(transparent)]
    Roa(#[from] RoaError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LearnError + '_ {
    move |source| LearnError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The plant being learned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum SystemSpec {
    #[serde(rename = "pendulum-sat")]
    PendulumSat {
        #[serde(default)]
        params: PendulumParams,
    },
    /// True dynamics `f + w + g u`, all polynomial. Components are written as
    /// `coeff * x1^a x2^b` terms separated by newlines or `;`.
    #[serde(rename = "polynomial")]
    Polynomial {
        f: Vec<String>,
        /// Row-major, one row per state.
        g: Vec<Vec<String>>,
        /// Unmodeled part `w`; empty means exactly known.
        #[serde(default)]
        unmodeled: Vec<String>,
        active_outputs: Vec<usize>,
    },
}

impl SystemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SystemSpec::PendulumSat { .. } => pendulum::SYSTEM_NAME,
            SystemSpec::Polynomial { .. } => "polynomial",
        }
    }
}

/// Baseline model, ground truth and the outputs that carry a GP.
#[derive(Clone, Debug)]
pub struct Plant {
    pub f: PolyVector,
    pub g: PolyMatrix,
    pub truth: TrueSystem,
    pub active: Vec<usize>,
    /// `x1` is an angle in radians.
    pub angular: bool,
}

fn parse_component(text: &str, nx: usize) -> Result<Polynomial, LearnError> {
    Ok(Polynomial::parse(&text.replace(';', "\n"), nx)?)
}

impl Plant {
    pub fn from_spec(spec: &SystemSpec) -> Result<Plant, LearnError> {
        match spec {
            SystemSpec::PendulumSat { params } => {
                params.validate().map_err(LearnError::Config)?;
                let (f, g) = pendulum::baseline_model(params);
                Ok(Plant {
                    f,
                    g,
                    truth: pendulum::true_dynamics(params),
                    active: pendulum::ACTIVE_OUTPUTS.to_vec(),
                    angular: true,
                })
            }
            SystemSpec::Polynomial {
                f,
                g,
                unmodeled,
                active_outputs,
            } => {
                let nx = f.len();
                if nx == 0 || g.len() != nx {
                    return Err(LearnError::Config(format!("f has {nx} entries, g has {} rows", g.len())));
                }
                let nu = g[0].len();
                if g.iter().any(|r| r.len() != nu) {
                    return Err(LearnError::Config("rows of g differ in length".into()));
                }
                if !unmodeled.is_empty() && unmodeled.len() != nx {
                    return Err(LearnError::Config(format!("unmodeled has {} entries", unmodeled.len())));
                }
                if active_outputs.iter().any(|&a| a >= nx) {
                    return Err(LearnError::Config("active output out of range".into()));
                }
                let fv = PolyVector::new(f.iter().map(|s| parse_component(s, nx)).collect::<Result<_, _>>()?, nx);
                let gm = PolyMatrix::new(
                    nx,
                    nu,
                    g.iter()
                        .flatten()
                        .map(|s| parse_component(s, nx))
                        .collect::<Result<_, _>>()?,
                    nx,
                );
                let w = if unmodeled.is_empty() {
                    PolyVector::zeros(nx, nx)
                } else {
                    PolyVector::new(
                        unmodeled.iter().map(|s| parse_component(s, nx)).collect::<Result<_, _>>()?,
                        nx,
                    )
                };
                let truth = TrueSystem::from_polynomial(fv.add(&w), gm.clone())
                    .map_err(|e| LearnError::Config(format!("true dynamics: {e}")))?;
                Ok(Plant {
                    f: fv,
                    g: gm,
                    truth,
                    active: active_outputs.clone(),
                    angular: false,
                })
            }
        }
    }

    pub fn nx(&self) -> usize {
        self.f.len()
    }
}

/// Everything `run_learn` needs. Serialized as the CLI's config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub system: SystemSpec,
    /// Shared by every output with a GP.
    pub kernel: PolyKernel,
    /// Diagonal regularizer of the GP Gram matrix.
    pub noise_reg: f64,
    pub eta: f64,
    pub synthesis: SynthesisOptions,
    /// Number of explore-and-refit iterations.
    pub iterations: usize,
    /// Start state of each iteration; missing entries use a rest state at 2/3
    /// of the current safe range.
    pub initial_conditions: Vec<Vec<f64>>,
    pub dt: f64,
    pub horizon: f64,
    /// Keep every `stride`-th finite-difference label.
    pub stride: usize,
    /// Uniform noise added to the derivative estimates; 0 disables it.
    pub label_noise: f64,
    /// Exploration regularization.
    pub lambda: f64,
    pub volume_samples: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        pendulum::default_config()
    }
}

impl LearnConfig {
    pub fn from_json(text: &str) -> Result<LearnConfig, LearnError> {
        let cfg: LearnConfig = serde_json::from_str(text).map_err(|e| LearnError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: String| Err(LearnError::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        for (name, v) in [
            ("noise_reg", self.noise_reg),
            ("eta", self.eta),
            ("dt", self.dt),
            ("horizon", self.horizon),
            ("lambda", self.lambda),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.label_noise >= 0.0) {
            return bad(format!("label_noise must be non-negative, got {}", self.label_noise));
        }
        let steps = (self.horizon / self.dt).round();
        if steps < 2.0 || (steps * self.dt - self.horizon).abs() > 1e-9 * self.horizon.max(1.0) {
            return bad(format!("horizon {} is not a multiple of dt {}", self.horizon, self.dt));
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        let plant = Plant::from_spec(&self.system)?;
        if let Some(x) = self.initial_conditions.iter().find(|x| x.len() != plant.nx()) {
            return bad(format!("initial condition {x:?} does not have {} entries", plant.nx()));
        }
        if plant.active.is_empty() {
            return bad("at least one output needs a GP".into());
        }
        Ok(())
    }

    fn options(&self) -> SynthesisOptions {
        SynthesisOptions {
            seed: self.seed,
            ..self.synthesis.clone()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 0 is the prior.
    pub index: usize,
    pub certificate: Certificate,
    pub gp: GpModel,
    /// Exploration run whose data produced this iteration's model.
    pub trajectory: Option<Trajectory>,
    /// Containment of `trajectory` in the previous certified region.
    pub containment: Option<ContainmentReport>,
    pub fallback_steps: usize,
    pub dataset_size: usize,
    pub validation: ValidationReport,
    pub volume: Option<f64>,
    /// Rest-start range along `x1`, in degrees for angular plants.
    pub safe_range: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LearnResult {
    pub config: LearnConfig,
    pub iterations: Vec<IterationRecord>,
    /// Why the loop ended early.
    pub stopped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub index: usize,
    pub gamma: f64,
    pub volume: Option<f64>,
    pub safe_range: f64,
    pub dataset_size: usize,
    pub max_excess: Option<f64>,
    pub excursion: bool,
    pub fallback_steps: usize,
    pub validation_violations: usize,
    pub synthesis_rounds: usize,
    pub sdp_solves: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub system: String,
    pub seed: u64,
    pub range_unit: String,
    pub iterations: Vec<IterationSummary>,
    pub stopped: Option<String>,
}

impl LearnResult {
    pub fn summary(&self) -> Summary {
        let angular = matches!(self.config.system, SystemSpec::PendulumSat { .. });
        Summary {
            system: self.config.system.name().to_string(),
            seed: self.config.seed,
            range_unit: if angular { "deg" } else { "x1" }.to_string(),
            iterations: self
                .iterations
                .iter()
                .map(|r| IterationSummary {
                    index: r.index,
                    gamma: r.certificate.gamma,
                    volume: r.volume,
                    safe_range: r.safe_range,
                    dataset_size: r.dataset_size,
                    max_excess: r.containment.as_ref().map(|c| c.max_excess),
                    excursion: r.containment.as_ref().is_some_and(|c| c.excursion),
                    fallback_steps: r.fallback_steps,
                    validation_violations: r.validation.violations,
                    synthesis_rounds: r.certificate.diagnostics.iterations,
                    sdp_solves: r.certificate.diagnostics.sdp_solves,
                })
                .collect(),
            stopped: self.stopped.clone(),
        }
    }

    pub fn prior(&self) -> &IterationRecord {
        &self.iterations[0]
    }

    pub fn last(&self) -> &IterationRecord {
        self.iterations.last().expect("prior is always present")
    }
}

/// Largest rest-start deviation `theta` (degrees) with `V(theta, 0, ..) <= gamma`
/// on both sides, to `resolution` degrees.
pub fn safe_angle_range(cert: &Certificate, resolution: f64) -> f64 {
    let side = |sign: f64| axis_extent(cert, 0, sign, 180.0, resolution, |t| t.to_radians());
    side(1.0).min(side(-1.0))
}

/// Same along `x1` in its own units, searched up to `limit`.
pub fn axis_range(cert: &Certificate, limit: f64, resolution: f64) -> f64 {
    let side = |sign: f64| axis_extent(cert, 0, sign, limit, resolution, |t| t);
    side(1.0).min(side(-1.0))
}

fn axis_extent(cert: &Certificate, axis: usize, sign: f64, limit: f64, res: f64, to_state: impl Fn(f64) -> f64) -> f64 {
    let n = cert.v.nvars();
    let inside = |t: f64| {
        let mut x = vec![0.0; n];
        x[axis] = sign * to_state(t);
        cert.v.eval(&x) <= cert.gamma
    };
    if cert.gamma <= 0.0 {
        return 0.0;
    }
    // first crossing on a coarse grid, then bisection
    let step = (limit / 360.0).max(res);
    let mut lo = 0.0;
    let mut hi = None;
    let mut t = step;
    while t <= limit {
        if !inside(t) {
            hi = Some(t);
            break;
        }
        lo = t;
        t += step;
    }
    let Some(mut hi) = hi else { return lo };
    while hi - lo > res {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn range_of(plant: &Plant, cert: &Certificate) -> f64 {
    if plant.angular {
        safe_angle_range(cert, 0.01)
    } else {
        axis_range(cert, 100.0, 1e-4)
    }
}

fn rest_state(plant: &Plant, range: f64) -> Vec<f64> {
    let mut x = vec![0.0; plant.nx()];
    let r = 2.0 / 3.0 * range;
    x[0] = if plant.angular { r.to_radians() } else { r };
    x
}

fn volume_of(cert: &Certificate, samples: usize, seed: u64) -> Option<f64> {
    if samples == 0 {
        return None;
    }
    let bounds = level_set_box(&cert.v, cert.gamma, 2000, 1.25, seed);
    match volume_estimate(&cert.v, cert.gamma, &bounds, samples, seed) {
        Ok(v) => Some(v),
        Err(e) => {
            warn!("volume estimate failed: {e}");
            None
        }
    }
}

fn kernels(cfg: &LearnConfig, plant: &Plant) -> Vec<(usize, PolyKernel)> {
    plant.active.iter().map(|&a| (a, cfg.kernel.clone())).collect()
}

fn record(
    cfg: &LearnConfig,
    plant: &Plant,
    index: usize,
    cert: Certificate,
    gp: GpModel,
    model: &RobustModel,
) -> IterationRecord {
    let validation = validate_certificate(model, &cert, cfg.synthesis.validation_samples.max(1000), cfg.seed ^ 0x5eed);
    IterationRecord {
        index,
        volume: volume_of(&cert, cfg.volume_samples, cfg.seed),
        safe_range: range_of(plant, &cert),
        dataset_size: gp.data().len(),
        certificate: cert,
        gp,
        trajectory: None,
        containment: None,
        fallback_steps: 0,
        validation,
    }
}

/// Runs the loop and writes the result directory when `output_dir` is set.
pub fn run_learn(cfg: &LearnConfig) -> Result<LearnResult, LearnError> {
    cfg.validate()?;
    let plant = Plant::from_spec(&cfg.system)?;
    let result = run_learn_on(cfg, &plant);
    if let Some(dir) = &cfg.output_dir {
        match &result {
            Ok(r) => write_result(r, dir)?,
            Err(LearnError::SafetyViolation { partial, .. }) => write_result(partial, dir)?,
            Err(_) => {}
        }
    }
    result
}

/// The loop on an explicit plant; the configuration's system entry is ignored.
pub fn run_learn_on(cfg: &LearnConfig, plant: &Plant) -> Result<LearnResult, LearnError> {
    let nx = plant.nx();
    let opts = cfg.options();
    let ks = kernels(cfg, plant);
    let sigma_n = cfg.noise_reg.sqrt();

    let gp0 = GpModel::prior(nx, &ks, cfg.noise_reg)?;
    let model0 = RobustModel::from_gp(plant.f.clone(), plant.g.clone(), &gp0, cfg.eta)?;
    let cert0 = synthesize(&model0, &opts).map_err(LearnError::PriorInfeasible)?;
    info!("prior: level {:.6e}", cert0.gamma);
    let mut result = LearnResult {
        config: cfg.clone(),
        iterations: vec![record(cfg, plant, 0, cert0, gp0, &model0)],
        stopped: None,
    };
    let mut model = model0;

    for i in 1..=cfg.iterations {
        let prev = result.last().clone();
        let x0 = match cfg.initial_conditions.get(i - 1) {
            Some(x) => x.clone(),
            None => rest_state(plant, prev.safe_range),
        };
        let value = prev.certificate.v.eval(&x0);
        if !(value <= prev.certificate.gamma) {
            return Err(LearnError::OutsideRegion {
                iteration: i,
                x0,
                value,
                gamma: prev.certificate.gamma,
            });
        }

        let ecfg = ExploreConfig::for_certificate(&prev.certificate, cfg.lambda, cfg.eta)?;
        let explorer = Explorer::new(&model, &prev.certificate, &ecfg)?;
        let mut fallbacks = 0;
        let mut policy = |x: &[f64]| {
            let a = explorer.action(x);
            fallbacks += usize::from(a.fallback);
            a.u
        };
        let mut traj = integrate(&plant.truth, &mut policy, &x0, cfg.dt, cfg.horizon)?;
        traj.attach_lyapunov(&prev.certificate.v);
        let containment = monitor_containment(&traj, &prev.certificate);
        info!(
            "iteration {i}: explored from {x0:?}, max excess {:.3e}, {fallbacks} fallback steps",
            containment.max_excess
        );

        let noise = (cfg.label_noise > 0.0).then(|| LabelNoise {
            bound: cfg.label_noise,
            seed: cfg.seed.wrapping_add(i as u64),
        });
        let fresh = finite_difference_labels(&traj, &plant.f, &plant.g, &plant.active, noise, sigma_n, cfg.stride)?;
        let mut data: Dataset = prev.gp.data().clone();
        data.extend(&fresh);

        if containment.excursion {
            let excess = containment.max_excess;
            let mut rec = prev.clone();
            rec.index = i;
            rec.trajectory = Some(traj);
            rec.containment = Some(containment);
            rec.fallback_steps = fallbacks;
            result.iterations.push(rec);
            result.stopped = Some(format!("iteration {i} left the certified region"));
            return Err(LearnError::SafetyViolation {
                iteration: i,
                excess,
                partial: Box::new(result),
            });
        }

        let gp = GpModel::fit(nx, &ks, data, cfg.noise_reg)?;
        let next = RobustModel::from_gp(plant.f.clone(), plant.g.clone(), &gp, cfg.eta)?;
        let cert = match synthesize_from(&next, prev.certificate.v.clone(), &opts) {
            Ok(c) => Ok(c),
            Err(e) => {
                warn!("warm-started synthesis failed in iteration {i}: {e}; restarting from LQR");
                synthesize(&next, &opts)
            }
        };
        let cert = match cert {
            Ok(c) => c,
            Err(e) => {
                result.stopped = Some(format!("synthesis failed in iteration {i}: {e}"));
                return Ok(result);
            }
        };
        info!("iteration {i}: level {:.6e}", cert.gamma);
        let mut rec = record(cfg, plant, i, cert, gp, &next);
        rec.trajectory = Some(traj);
        rec.containment = Some(containment);
        rec.fallback_steps = fallbacks;
        result.iterations.push(rec);
        model = next;
    }
    Ok(result)
}

pub const RESULT_FILE: &str = "result.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Writes `result.json` and the report files into `dir`.
pub fn write_result(result: &LearnResult, dir: &Path) -> Result<(), LearnError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(RESULT_FILE);
    fs::write(&path, serde_json::to_string(result)?).map_err(io_err(&path))?;
    write_report(result, dir)
}

/// Boundary and trajectory CSVs per iteration, per-iteration certificates and
/// the summary JSON.
pub fn write_report(result: &LearnResult, dir: &Path) -> Result<(), LearnError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for rec in &result.iterations {
        let i = rec.index;
        let path = dir.join(format!("certificate_{i}.json"));
        fs::write(&path, rec.certificate.to_json()).map_err(io_err(&path))?;

        let path = dir.join(format!("boundary_{i}.csv"));
        let mut wr = csv::Writer::from_path(&path).map_err(|e| LearnError::Sim(e.into()))?;
        wr.write_record(["x1", "x2"]).map_err(|e| LearnError::Sim(e.into()))?;
        if rec.certificate.v.nvars() >= 2 {
            for (a, b) in boundary_points(&rec.certificate.v, rec.certificate.gamma, (0, 1), 360) {
                wr.write_record([a.to_string(), b.to_string()])
                    .map_err(|e| LearnError::Sim(e.into()))?;
            }
        }
        wr.flush().map_err(io_err(&path))?;

        if let Some(t) = &rec.trajectory {
            let path = dir.join(format!("trajectory_{i}.csv"));
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            t.to_csv(std::io::BufWriter::new(file))?;
        }
    }
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, serde_json::to_string_pretty(&result.summary())?).map_err(io_err(&path))?;
    Ok(())
}

pub fn read_result(dir: &Path) -> Result<LearnResult, LearnError> {
    let path = dir.join(RESULT_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Regenerates the report files of a result directory.
pub fn report(dir: &Path) -> Result<Summary, LearnError> {
    let result = read_result(dir)?;
    write_report(&result, dir)?;
    Ok(result.summary())
}

/// Closed-loop run of a certificate's controller on the plant.
pub fn simulate_certificate(
    plant: &Plant,
    cert: &Certificate,
    x0: &[f64],
    dt: f64,
    horizon: f64,
) -> Result<(Trajectory, ContainmentReport), LearnError> {
    if x0.len() != plant.nx() {
        return Err(LearnError::Config(format!("x0 must have {} entries", plant.nx())));
    }
    let mut policy = |x: &[f64]| cert.kappa.eval(x);
    let mut traj = integrate(&plant.truth, &mut policy, x0, dt, horizon)?;
    traj.attach_lyapunov(&cert.v);
    let rep = monitor_containment(&traj, cert);
    Ok((traj, rep))
}
