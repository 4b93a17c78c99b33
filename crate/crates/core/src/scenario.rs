//! Ground truth, measurement synthesis and the Monte-Carlo driver.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{
    BirthComponent, BirthModel, FilterKind, FilterParams, FilterState, ImportMode, MeasurementModel, MotionModel,
};
use crate::metrics::{ospa, OspaParams};
use crate::network::{disseminate_and_fuse, CommMode, FitSettings, FitStats, FusionMethod, Topology, TopologyFile};

const STATE_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthSpec {
    pub existence: f64,
    pub mean: [f64; STATE_DIM],
    /// Standard deviations of the diagonal covariance.
    pub std: [f64; STATE_DIM],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub birth_step: usize,
    pub death_step: usize,
    /// State `[x, vx, y, vy]` at the birth step.
    pub initial: [f64; STATE_DIM],
}

/// Experiment definition. Every field has a default, so a scenario file only
/// needs the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of time steps; steps are numbered from 1.
    pub duration: usize,
    pub dt: f64,
    pub roi_min: [f64; 2],
    pub roi_max: [f64; 2],
    /// Filter run by each sensor, indexed like the topology nodes.
    pub sensors: Vec<FilterKind>,
    /// Inline topology; the default 12-node network when absent.
    pub topology: Option<TopologyFile>,
    pub fusion: FusionMethod,
    pub comm: CommMode,
    /// Dissemination rounds per time step.
    pub rounds: usize,
    pub gamma_g: f64,
    pub max_iter: usize,
    pub survival_prob: f64,
    pub detect_prob: f64,
    pub clutter_rate: f64,
    pub noise_std: f64,
    pub q_scale: f64,
    pub birth: Vec<BirthSpec>,
    pub targets: Vec<TargetSpec>,
    /// Standard deviation of a per-run perturbation of target start positions.
    pub truth_jitter: f64,
    pub ospa: OspaParams,
    pub runs: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let birth_means = [
            [0.0, 0.0, 0.0, 0.0],
            [400.0, 0.0, -600.0, 0.0],
            [-800.0, 0.0, -200.0, 0.0],
            [-200.0, 0.0, 800.0, 0.0],
        ];
        let velocities = [(5.0, 8.0), (-8.0, 6.0), (9.0, -4.0), (6.0, -10.0)];
        let lifetimes = [(1, 70), (10, 100), (20, 100), (30, 90)];
        Self {
            duration: 100,
            dt: 1.0,
            roi_min: [-1000.0, -1000.0],
            roi_max: [1000.0, 1000.0],
            sensors: vec![FilterKind::Phd; 12],
            topology: None,
            fusion: FusionMethod::GmFit,
            comm: CommMode::Flooding,
            rounds: 3,
            gamma_g: crate::fusion::DEFAULT_GAMMA_G,
            max_iter: crate::fusion::DEFAULT_MAX_ITER,
            survival_prob: 0.95,
            detect_prob: 0.9,
            clutter_rate: 10.0,
            noise_std: 10.0,
            q_scale: 25.0,
            birth: birth_means
                .iter()
                .map(|&mean| BirthSpec {
                    existence: 0.03,
                    mean,
                    std: [10.0; STATE_DIM],
                })
                .collect(),
            targets: birth_means
                .iter()
                .zip(velocities)
                .zip(lifetimes)
                .map(|((m, (vx, vy)), (birth_step, death_step))| TargetSpec {
                    birth_step,
                    death_step,
                    initial: [m[0], vx, m[2], vy],
                })
                .collect(),
            truth_jitter: 0.0,
            ospa: OspaParams::default(),
            runs: 10,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad scenario JSON: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} {p} outside [0, 1]")))
            }
        };
        if self.duration < 1 {
            return Err(Error::Config("duration must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.roi_max[0] > self.roi_min[0] && self.roi_max[1] > self.roi_min[1]) {
            return Err(Error::Config("empty region of interest".into()));
        }
        if self.sensors.is_empty() {
            return Err(Error::Config("no sensors".into()));
        }
        prob("survival probability", self.survival_prob)?;
        prob("detection probability", self.detect_prob)?;
        if !(self.clutter_rate >= 0.0) || !(self.noise_std > 0.0) || !(self.q_scale >= 0.0) {
            return Err(Error::Config("clutter rate, noise std and Q scale must be nonnegative".into()));
        }
        if !(self.gamma_g > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("gamma_g must be positive and max_iter at least 1".into()));
        }
        if !(self.truth_jitter >= 0.0) {
            return Err(Error::Config("truth jitter must be nonnegative".into()));
        }
        OspaParams::new(self.ospa.c, self.ospa.p)?;
        for t in &self.targets {
            if t.birth_step < 1 || t.death_step < t.birth_step {
                return Err(Error::Config(format!(
                    "target lifetime {}..{} invalid",
                    t.birth_step, t.death_step
                )));
            }
        }
        self.birth_model()?;
        Ok(())
    }

    pub fn roi_volume(&self) -> f64 {
        (self.roi_max[0] - self.roi_min[0]) * (self.roi_max[1] - self.roi_min[1])
    }

    pub fn in_roi(&self, x: f64, y: f64) -> bool {
        (self.roi_min[0]..=self.roi_max[0]).contains(&x) && (self.roi_min[1]..=self.roi_max[1]).contains(&y)
    }

    pub fn motion_model(&self) -> Result<MotionModel> {
        MotionModel::constant_velocity(self.dt, self.q_scale, self.survival_prob)
    }

    pub fn measurement_model(&self) -> Result<MeasurementModel> {
        MeasurementModel::planar_position(self.noise_std, self.detect_prob, self.clutter_rate, self.roi_volume())
    }

    pub fn birth_model(&self) -> Result<BirthModel> {
        BirthModel::new(
            self.birth
                .iter()
                .map(|b| BirthComponent {
                    existence: b.existence,
                    mean: DVector::from_row_slice(&b.mean),
                    cov: DMatrix::from_diagonal(&DVector::from_iterator(STATE_DIM, b.std.iter().map(|s| s * s))),
                })
                .collect(),
        )
    }

    pub fn topology(&self) -> Result<Topology> {
        match &self.topology {
            Some(spec) => Topology::from_file_spec(spec),
            None => Ok(Topology::default_twelve()),
        }
    }
}

/// Random-stream purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Truth = 0,
    Measurements = 1,
}

/// Independent generator for one `(run, sensor, step, purpose)` slot. The
/// 32-byte ChaCha seed is the concatenation of the master seed, run, sensor
/// and step as little-endian `u64`s and the purpose selects the stream, so
/// distinct slots never share a generator.
pub fn sub_rng(master: u64, run: u64, sensor: u64, step: u64, tag: StreamTag) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    for (chunk, v) in seed.chunks_exact_mut(8).zip([master, run, sensor, step]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(tag as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetTrack {
    pub birth_step: usize,
    /// Last step the target exists.
    pub death_step: usize,
    /// States for steps `birth_step..=death_step`.
    pub states: Vec<DVector<f64>>,
}

impl TargetTrack {
    pub fn state_at(&self, step: usize) -> Option<&DVector<f64>> {
        if step < self.birth_step || step > self.death_step {
            return None;
        }
        self.states.get(step - self.birth_step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub targets: Vec<TargetTrack>,
}

impl GroundTruth {
    pub fn alive_at(&self, step: usize) -> Vec<&DVector<f64>> {
        self.targets.iter().filter_map(|t| t.state_at(step)).collect()
    }

    pub fn cardinality(&self, step: usize) -> usize {
        self.alive_at(step).len()
    }
}

/// Noiseless constant-velocity trajectories. Targets leaving the region of
/// interest end at their last step inside it.
pub fn generate_truth(config: &ScenarioConfig, seed: u64) -> Result<GroundTruth> {
    generate_truth_with(config, &mut sub_rng(seed, 0, 0, 0, StreamTag::Truth))
}

pub fn generate_truth_with(config: &ScenarioConfig, rng: &mut impl Rng) -> Result<GroundTruth> {
    let f = config.motion_model()?.transition;
    let jitter = Normal::new(0.0, config.truth_jitter.max(f64::MIN_POSITIVE)).expect("positive std");
    let mut targets = Vec::with_capacity(config.targets.len());
    for spec in &config.targets {
        let mut x = DVector::from_row_slice(&spec.initial);
        if config.truth_jitter > 0.0 {
            x[0] += jitter.sample(rng);
            x[2] += jitter.sample(rng);
        }
        let last = spec.death_step.min(config.duration);
        let mut states = Vec::new();
        let mut death_step = spec.birth_step;
        for step in spec.birth_step..=last {
            if !config.in_roi(x[0], x[2]) {
                break;
            }
            states.push(x.clone());
            death_step = step;
            x = &f * x;
        }
        if !states.is_empty() {
            targets.push(TargetTrack {
                birth_step: spec.birth_step,
                death_step,
                states,
            });
        }
    }
    Ok(GroundTruth { targets })
}

/// One sensor's scan: detections of alive targets followed by uniform
/// Poisson clutter.
pub fn generate_measurements(
    truth: &GroundTruth,
    config: &ScenarioConfig,
    step: usize,
    rng: &mut impl Rng,
) -> Result<Vec<DVector<f64>>> {
    let meas = config.measurement_model()?;
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    for x in truth.alive_at(step) {
        if rng.gen::<f64>() < config.detect_prob {
            let z = meas.project(x);
            out.push(DVector::from_iterator(z.len(), z.iter().map(|v| v + noise.sample(rng))));
        }
    }
    if config.clutter_rate > 0.0 {
        let count = Poisson::new(config.clutter_rate)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng) as usize;
        for _ in 0..count {
            let x = rng.gen_range(config.roi_min[0]..config.roi_max[0]);
            let y = rng.gen_range(config.roi_min[1]..config.roi_max[1]);
            out.push(DVector::from_vec(vec![x, y]));
        }
    }
    Ok(out)
}

/// One `(run, step, sensor)` record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub step: usize,
    pub sensor: usize,
    pub filter_type: FilterKind,
    pub fusion: FusionMethod,
    pub comm: CommMode,
    pub t: usize,
    pub ospa: f64,
    pub n_hat: f64,
    pub n_true: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub aborted: bool,
    pub abort_reason: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloOutput {
    pub rows: Vec<RunResult>,
    pub runs: Vec<RunSummary>,
    pub stats: FitStats,
}

impl MonteCarloOutput {
    pub fn any_aborted(&self) -> bool {
        self.runs.iter().any(|r| r.aborted)
    }
}

struct Models {
    motion: MotionModel,
    meas: MeasurementModel,
    birth: BirthModel,
    params: FilterParams,
    fit: FitSettings,
}

/// Runs every Monte-Carlo run of `config` on `topology`. Runs that produce
/// non-finite states or numerical failures are stopped and flagged; their
/// rows up to the failure are kept.
pub fn run_monte_carlo(config: &ScenarioConfig, topology: &Topology) -> Result<MonteCarloOutput> {
    config.validate()?;
    if config.sensors.len() != topology.node_count() {
        return Err(Error::Config(format!(
            "{} sensors configured for a {}-node topology",
            config.sensors.len(),
            topology.node_count()
        )));
    }
    if config.fusion == FusionMethod::IsdCdm {
        return Err(Error::NotImplemented("isd-cdm fusion"));
    }
    let models = Models {
        motion: config.motion_model()?,
        meas: config.measurement_model()?,
        birth: config.birth_model()?,
        params: FilterParams::default(),
        fit: FitSettings {
            gamma_g: config.gamma_g,
            max_iter: config.max_iter,
        },
    };
    let mut out = MonteCarloOutput {
        rows: Vec::with_capacity(config.runs * config.duration * config.sensors.len()),
        runs: Vec::with_capacity(config.runs),
        stats: FitStats::default(),
    };
    for run in 0..config.runs {
        let started = Instant::now();
        let mut stats = FitStats::default();
        let result = simulate_run(config, topology, &models, run, &mut out.rows, &mut stats);
        out.stats.absorb(&stats);
        let (aborted, abort_reason) = match result {
            Ok(()) => (false, None),
            Err(e @ Error::NotImplemented(_)) | Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => (true, Some(e.to_string())),
        };
        out.runs.push(RunSummary {
            run,
            aborted,
            abort_reason,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

fn simulate_run(
    config: &ScenarioConfig,
    topology: &Topology,
    models: &Models,
    run: usize,
    rows: &mut Vec<RunResult>,
    stats: &mut FitStats,
) -> Result<()> {
    let truth = generate_truth_with(config, &mut sub_rng(config.seed, run as u64, 0, 0, StreamTag::Truth))?;
    let mut filters: Vec<FilterState> = config.sensors.iter().map(|&k| FilterState::new(k, STATE_DIM)).collect();
    let import_mode = if config.fusion == FusionMethod::GmFit {
        ImportMode::Full
    } else {
        ImportMode::WeightsOnly
    };
    for step in 1..=config.duration {
        for (sensor, filter) in filters.iter_mut().enumerate() {
            let mut rng = sub_rng(config.seed, run as u64, sensor as u64, step as u64, StreamTag::Measurements);
            let z = generate_measurements(&truth, config, step, &mut rng)?;
            let next = filter.predict(&models.motion, &models.birth)?.update(&models.meas, &z, &models.params)?;
            if !next.is_finite() {
                return Err(Error::Divergence { sensor, step });
            }
            *filter = next;
        }

        let exports = filters.iter().map(FilterState::export_phd).collect::<Result<Vec<_>>>()?;
        let locals: Vec<_> = exports.iter().map(|e| e.mixture.clone()).collect();
        let outcome = disseminate_and_fuse(
            topology,
            &locals,
            step,
            config.fusion,
            config.comm,
            config.rounds,
            &models.fit,
            stats,
        )?;
        let cooperative = config.fusion != FusionMethod::None && config.rounds > 0;
        if cooperative {
            for (sensor, ((filter, export), fused)) in filters.iter_mut().zip(&exports).zip(&outcome.fused).enumerate() {
                let next = if fused.adopted {
                    filter.adopt_phd(&fused.mixture, &models.params)?
                } else {
                    filter
                        .import_phd(&fused.mixture, &export.mapping, import_mode)?
                        .prune(&models.params)?
                };
                if !next.is_finite() {
                    return Err(Error::Divergence { sensor, step });
                }
                *filter = next;
            }
        }

        let truth_pos: Vec<DVector<f64>> = truth.alive_at(step).iter().map(|x| models.meas.project(x)).collect();
        for (sensor, filter) in filters.iter().enumerate() {
            let est: Vec<DVector<f64>> = filter
                .extract(models.params.extraction_threshold)
                .iter()
                .map(|e| models.meas.project(&e.state))
                .collect();
            rows.push(RunResult {
                run,
                step,
                sensor,
                filter_type: filter.kind(),
                fusion: config.fusion,
                comm: config.comm,
                t: config.rounds,
                ospa: ospa(&est, &truth_pos, &config.ospa),
                n_hat: filter.cardinality(),
                n_true: truth_pos.len(),
                cost: outcome.costs[sensor],
            });
        }
    }
    Ok(())
}
