//! Ground truth simulation, the two navigation presets and end-to-end runs.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::groups::{
    hat, project_to_group, rotation_exp, AlgebraElement, Dims, GroupElement, SimAlgebraElement,
};
use crate::immersion::{
    immerse, rank_condition, Case, MeasurementKind, MeasurementSpec, RankReport, SystemSpec,
};
use crate::observer::{
    BiasMode, MeasurementBatch, MeasurementValue, Observer, ObserverConfig, StageSamples,
};
use crate::reconstruct::error_metric;
use crate::riccati::GramianMonitor;
use crate::sampling::random_rotation;

/// Earth rotation rate in the world frame, rad/s.
pub const EARTH_RATE: [f64; 3] = [0.0, 0.0, 7.292e-5];
/// Local gravity in the world frame, m/s^2.
pub const GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    /// Inertial navigation on the rotating Earth, TFG(3,2,0).
    RotatingEarth,
    /// SLAM with one estimated landmark and a tracked moving object,
    /// TFG(3,5,0).
    Slam,
}

/// Sinusoidal excitation. The body rates are `amp * sin(freq t + phase)`
/// per axis and the position follows `path_amp * sin(path_freq t)` per
/// axis; the accelerometer reading is whatever realizes that path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputSignal {
    pub gyro_amp: [f64; 3],
    pub gyro_freq: [f64; 3],
    pub gyro_phase: [f64; 3],
    pub path_amp: [f64; 3],
    pub path_freq: [f64; 3],
    /// Constant velocity of the tracked object (SLAM only).
    pub object_velocity: [f64; 3],
}

impl Default for InputSignal {
    fn default() -> Self {
        Self {
            gyro_amp: [0.4, 0.3, 0.5],
            gyro_freq: [0.7, 1.1, 0.5],
            gyro_phase: [0.0, 1.0, 2.0],
            path_amp: [5.0, 4.0, 2.0],
            path_freq: [0.3, 0.5, 0.4],
            object_velocity: [0.3, 0.2, 0.0],
        }
    }
}

impl InputSignal {
    pub fn gyro(&self, t: f64) -> DVector<f64> {
        DVector::from_fn(3, |k, _| {
            self.gyro_amp[k] * (self.gyro_freq[k] * t + self.gyro_phase[k]).sin()
        })
    }

    pub fn position(&self, t: f64) -> DVector<f64> {
        DVector::from_fn(3, |k, _| self.path_amp[k] * (self.path_freq[k] * t).sin())
    }

    pub fn velocity(&self, t: f64) -> DVector<f64> {
        DVector::from_fn(3, |k, _| {
            self.path_amp[k] * self.path_freq[k] * (self.path_freq[k] * t).cos()
        })
    }

    pub fn acceleration(&self, t: f64) -> DVector<f64> {
        DVector::from_fn(3, |k, _| {
            let w = self.path_freq[k];
            -self.path_amp[k] * w * w * (w * t).sin()
        })
    }
}

/// Standard deviations of the measurement noise per channel kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub landmark: f64,
    pub bearing: f64,
    pub range: f64,
}

/// True input bias, `omega` then `rho` column-major. Empty means zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BiasTruth {
    pub omega: Vec<f64>,
    pub rho: Vec<f64>,
}

/// Offset of the initial estimate from the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    /// Rotation error about a random axis, degrees.
    pub rotation_deg: f64,
    /// Norm of the random offset added to every column of `W`.
    pub w_offset: f64,
    /// Scales the initial immersed error `z_hat(0) - z(0)`.
    pub z_scale: f64,
    /// Initial bias estimate (`omega` then `rho`); zero when absent.
    pub bias_guess: Option<BiasTruth>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            rotation_deg: 0.0,
            w_offset: 0.0,
            z_scale: 1.0,
            bias_guess: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GramianConfig {
    pub enabled: bool,
    /// Window length, seconds.
    pub window: f64,
    /// Number of staggered windows.
    pub stagger: usize,
}

impl Default for GramianConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            window: 2.0,
            stagger: 2,
        }
    }
}

fn default_version() -> u32 {
    1
}
fn default_duration() -> f64 {
    30.0
}
fn default_step() -> f64 {
    1e-3
}
fn default_decimate() -> usize {
    1
}
fn default_fit_window() -> [f64; 2] {
    [1.0, 20.0]
}

/// Everything that defines a run. Deterministic given `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub scenario: ScenarioId,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default)]
    pub seed: u64,
    /// Log and reconstruct every `decimate` steps.
    #[serde(default = "default_decimate")]
    pub decimate: usize,
    #[serde(default)]
    pub input: InputSignal,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub bias: BiasTruth,
    #[serde(default)]
    pub observer: ObserverConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub gramian: GramianConfig,
    /// Interval of the log-error slope fit, seconds.
    #[serde(default = "default_fit_window")]
    pub fit_window: [f64; 2],
    /// Known landmark positions; preset values when absent.
    #[serde(default)]
    pub landmarks: Option<Vec<[f64; 3]>>,
    /// Shared-state reduction; on for SLAM and off otherwise when absent.
    #[serde(default)]
    pub merge_shared: Option<bool>,
}

impl ScenarioConfig {
    pub fn new(scenario: ScenarioId) -> Self {
        Self {
            version: default_version(),
            scenario,
            duration: default_duration(),
            step: default_step(),
            seed: 0,
            decimate: default_decimate(),
            input: InputSignal::default(),
            noise: NoiseConfig::default(),
            bias: BiasTruth::default(),
            observer: ObserverConfig::default(),
            init: InitConfig::default(),
            gramian: GramianConfig::default(),
            fit_window: default_fit_window(),
            landmarks: None,
            merge_shared: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if self.version != 1 {
            return bad(
                "version",
                format!("unsupported schema version {}", self.version),
            );
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return bad("step", format!("must be > 0, got {}", self.step));
        }
        if !(self.duration >= 10.0 * self.step) || !self.duration.is_finite() {
            return bad(
                "duration",
                format!("must be at least 10 steps, got {}", self.duration),
            );
        }
        if self.decimate == 0 {
            return bad("decimate", "must be >= 1".into());
        }
        for (name, v) in [
            ("noise.landmark", self.noise.landmark),
            ("noise.bearing", self.noise.bearing),
            ("noise.range", self.noise.range),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(name, format!("must be >= 0, got {v}"));
            }
        }
        if !(self.init.z_scale.is_finite()) {
            return bad("init.z_scale", "must be finite".into());
        }
        if self.gramian.enabled && !(self.gramian.window > 0.0) {
            return bad("gramian.window", "must be > 0".into());
        }
        if !(self.fit_window[0] < self.fit_window[1]) {
            return bad("fit_window", "start must precede end".into());
        }
        if let Some(l) = &self.landmarks {
            let need = match self.scenario {
                ScenarioId::RotatingEarth => 4,
                ScenarioId::Slam => 3,
            };
            if l.len() != need {
                return bad(
                    "landmarks",
                    format!("expected {need} positions, got {}", l.len()),
                );
            }
        }
        let dims = self.dims();
        check_bias_vec("bias", &self.bias, dims)?;
        if let Some(g) = &self.init.bias_guess {
            check_bias_vec("init.bias_guess", g, dims)?;
        }
        self.observer
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        match self.scenario {
            ScenarioId::RotatingEarth => Dims { d: 3, n: 2, m: 0 },
            ScenarioId::Slam => Dims { d: 3, n: 5, m: 0 },
        }
    }

    /// Number of integration steps.
    pub fn steps(&self) -> usize {
        (self.duration / self.step).round() as usize
    }
}

fn check_bias_vec(field: &str, b: &BiasTruth, dims: Dims) -> Result<()> {
    if !b.omega.is_empty() && b.omega.len() != dims.rot_dim() {
        return Err(Error::Config(format!(
            "{field}.omega: expected {} entries, got {}",
            dims.rot_dim(),
            b.omega.len()
        )));
    }
    let k = dims.d * dims.vectors();
    if !b.rho.is_empty() && b.rho.len() != k {
        return Err(Error::Config(format!(
            "{field}.rho: expected {k} entries, got {}",
            b.rho.len()
        )));
    }
    Ok(())
}

fn bias_element(b: &BiasTruth, dims: Dims) -> AlgebraElement {
    let mut e = AlgebraElement::zero(dims);
    if !b.omega.is_empty() {
        e.omega = DVector::from_column_slice(&b.omega);
    }
    if !b.rho.is_empty() {
        e.rho = DMatrix::from_column_slice(dims.d, dims.vectors(), &b.rho);
    }
    e
}

fn vec3(a: [f64; 3]) -> DVector<f64> {
    DVector::from_column_slice(&a)
}

fn unit(k: usize, n: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[k] = 1.0;
    v
}

pub const EARTH_LANDMARKS: [[f64; 3]; 4] = [
    [100.0, 0.0, -10.0],
    [0.0, 120.0, 20.0],
    [-50.0, 60.0, 5.0],
    [30.0, -80.0, 10.0],
];

pub const SLAM_LANDMARKS: [[f64; 3]; 3] = [[8.0, -2.0, 1.0], [-3.0, 9.0, 2.0], [1.0, 2.0, -7.0]];

/// Rotating-Earth navigation with two landmarks, one bearing and one range.
pub fn build_rotating_earth_spec(landmarks: &[[f64; 3]]) -> Result<SystemSpec> {
    dim_check("rotating-Earth landmarks", 4, landmarks.len())?;
    let dims = Dims::new(3, 2, 0)?;
    let mut gamma = DMatrix::zeros(3, 2);
    gamma.set_column(1, &vec3(GRAVITY));
    let mut l = DMatrix::zeros(2, 2);
    l[(1, 0)] = -1.0;
    let generator = SimAlgebraElement::new(dims, -vec3(EARTH_RATE), gamma, l)?;
    let under = DVector::from_vec(vec![1.0, 0.0]);
    let kinds = [
        MeasurementKind::Landmark,
        MeasurementKind::Landmark,
        MeasurementKind::Bearing,
        MeasurementKind::Range,
    ];
    let meas = kinds
        .iter()
        .zip(landmarks)
        .map(|(&k, p)| MeasurementSpec::new(k, vec3(*p), under.clone(), 0.0))
        .collect();
    SystemSpec::new(Case::Case1, dims, generator, meas)
}

/// SLAM with an unknown static landmark `l` and a moving object `(q, c)`;
/// `W = [p, v, l, q, c]`.
pub fn build_slam_mot_spec(landmarks: &[[f64; 3]]) -> Result<SystemSpec> {
    dim_check("SLAM landmarks", 3, landmarks.len())?;
    let dims = Dims::new(3, 5, 0)?;
    let mut gamma = DMatrix::zeros(3, 5);
    gamma.set_column(1, &vec3(GRAVITY));
    let mut l = DMatrix::zeros(5, 5);
    l[(1, 0)] = -1.0;
    l[(4, 3)] = -1.0;
    let generator = SimAlgebraElement::new(dims, DVector::zeros(3), gamma, l)?;
    let e = |k| unit(k, 5);
    let mut meas: Vec<MeasurementSpec> = landmarks
        .iter()
        .map(|p| MeasurementSpec::landmark(vec3(*p), e(0)))
        .collect();
    let zero = DVector::zeros(3);
    meas.push(MeasurementSpec::landmark(zero.clone(), e(0) - e(2)));
    meas.push(MeasurementSpec::landmark(zero.clone(), e(0) - e(3)));
    meas.push(MeasurementSpec::landmark(zero, e(1) - e(4)));
    let spec = SystemSpec::new(Case::Case1, dims, generator, meas)?.with_merging(true);
    let m = DMatrix::from_fn(3, 3, |r, c| landmarks[c][r]);
    if m.clone().svd(false, false).singular_values.min() < 1e-9 * m.amax().max(1.0) {
        log::warn!("SLAM landmarks are not linearly independent");
    }
    Ok(spec)
}

/// Builds the spec of a configured scenario, noise levels included.
pub fn build_spec(cfg: &ScenarioConfig) -> Result<SystemSpec> {
    let mut spec = match cfg.scenario {
        ScenarioId::RotatingEarth => {
            build_rotating_earth_spec(cfg.landmarks.as_deref().unwrap_or(&EARTH_LANDMARKS))?
        }
        ScenarioId::Slam => {
            build_slam_mot_spec(cfg.landmarks.as_deref().unwrap_or(&SLAM_LANDMARKS))?
        }
    };
    if let Some(m) = cfg.merge_shared {
        spec.merge_shared = m;
    }
    for m in &mut spec.measurements {
        m.noise_std = match m.kind {
            MeasurementKind::Landmark => cfg.noise.landmark,
            MeasurementKind::Bearing => cfg.noise.bearing,
            MeasurementKind::Range => cfg.noise.range,
        };
    }
    Ok(spec)
}

/// `dT/dt` in the embedding; `u` is the input actually driving the truth.
pub fn truth_rhs(
    t: &DMatrix<f64>,
    u: &AlgebraElement,
    generator: &SimAlgebraElement,
    case: Case,
) -> DMatrix<f64> {
    let dims = generator.dims();
    let d = dims.d;
    let k = dims.vectors();
    let a = generator.embed();
    let mut lblock = DMatrix::zeros(d + k, d + k);
    lblock.view_mut((d, d), (k, k)).copy_from(&generator.l);
    let u_hat = u.embed();
    match case {
        Case::Case1 => &a * t + t * (u_hat - lblock),
        Case::Case2 => (u_hat + lblock) * t - t * a,
    }
}

/// One RK4 step of the truth with an input that may depend on time and on
/// the current (embedded) state, followed by projection onto the group.
pub fn propagate_truth_with<F>(
    t_elem: &GroupElement,
    t0: f64,
    h: f64,
    generator: &SimAlgebraElement,
    case: Case,
    input: F,
) -> Result<GroupElement>
where
    F: Fn(f64, &DMatrix<f64>) -> AlgebraElement,
{
    let dims = t_elem.dims();
    let x = t_elem.embed();
    let f = |tt: f64, m: &DMatrix<f64>| truth_rhs(m, &input(tt, m), generator, case);
    let k1 = f(t0, &x);
    let k2 = f(t0 + h / 2.0, &(&x + &k1 * (h / 2.0)));
    let k3 = f(t0 + h / 2.0, &(&x + &k2 * (h / 2.0)));
    let k4 = f(t0 + h, &(&x + &k3 * h));
    let next = x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    project_to_group(&next, dims)
}

/// One RK4 step of the truth under a constant input.
pub fn propagate_truth(
    t_elem: &GroupElement,
    u: &AlgebraElement,
    generator: &SimAlgebraElement,
    case: Case,
    h: f64,
) -> Result<GroupElement> {
    propagate_truth_with(t_elem, 0.0, h, generator, case, |_, _| u.clone())
}

/// True (bias-free) input of a scenario at time `t` with the truth at `x`.
/// The accelerometer reading is computed from the rotation block of `x`
/// so the position follows the configured path.
pub fn scenario_input(cfg: &ScenarioConfig, t: f64, x: &DMatrix<f64>) -> AlgebraElement {
    let dims = cfg.dims();
    let r = x.view((0, 0), (3, 3));
    let g = vec3(GRAVITY);
    let mut specific = cfg.input.acceleration(t) - g;
    if cfg.scenario == ScenarioId::RotatingEarth {
        let om = hat(&EARTH_RATE, 3).expect("d = 3");
        let p = cfg.input.position(t);
        let v = cfg.input.velocity(t);
        specific += &om * v * 2.0 + &om * (&om * p);
    }
    let a = r.tr_mul(&specific);
    let mut rho = DMatrix::zeros(3, dims.vectors());
    rho.set_column(1, &a);
    AlgebraElement::new(dims, cfg.input.gyro(t), rho).expect("dims are consistent")
}

/// Initial truth of a scenario.
pub fn initial_truth(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<GroupElement> {
    let dims = cfg.dims();
    let r0 = random_rotation(rng, 3);
    let p = cfg.input.position(0.0);
    let v = cfg.input.velocity(0.0);
    let w = match cfg.scenario {
        ScenarioId::RotatingEarth => {
            let om = hat(&EARTH_RATE, 3)?;
            let col1 = &v + om * &p;
            DMatrix::from_columns(&[p, col1])
        }
        ScenarioId::Slam => DMatrix::from_columns(&[
            p,
            v,
            DVector::from_vec(vec![4.0, 5.0, 3.0]),
            DVector::from_vec(vec![20.0, -5.0, 2.0]),
            vec3(cfg.input.object_velocity),
        ]),
    };
    GroupElement::new(dims, r0, w)
}

/// Initial estimate: the truth with a rotation error about a random axis
/// and a random offset of each `W` column.
pub fn perturbed_guess(
    truth: &GroupElement,
    init: &InitConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GroupElement> {
    let dims = truth.dims();
    let mut axis: DVector<f64> = DVector::from_fn(3, |_, _| StandardNormal.sample(rng));
    axis /= axis.norm().max(1e-12);
    let err = rotation_exp(axis.as_slice(), 3, init.rotation_deg.to_radians())?;
    let mut w = truth.w().clone();
    for mut col in w.column_iter_mut() {
        let mut dir: DVector<f64> = DVector::from_fn(3, |_, _| StandardNormal.sample(rng));
        dir /= dir.norm().max(1e-12);
        col += dir * init.w_offset;
    }
    GroupElement::new(dims, err * truth.rotation(), w)
}

fn measured_block(t: &GroupElement, m: &MeasurementSpec, case: Case) -> DVector<f64> {
    let r = t.rotation();
    let w = t.w();
    match case {
        Case::Case1 => r.tr_mul(&(&m.d_bar - w * &m.d_under)),
        Case::Case2 => r * &m.d_bar + w * &m.d_under,
    }
}

/// Measurements of the truth `t` with Gaussian noise at each channel's
/// standard deviation.
pub fn synthesize_measurements<R: rand::Rng + ?Sized>(
    t: &GroupElement,
    spec: &SystemSpec,
    rng: &mut R,
) -> MeasurementBatch {
    let mut gauss = |n: usize, std: f64| -> DVector<f64> {
        if std == 0.0 {
            DVector::zeros(n)
        } else {
            DVector::from_fn(n, |_, _| {
                let s: f64 = StandardNormal.sample(rng);
                s * std
            })
        }
    };
    let values = spec
        .measurements
        .iter()
        .map(|m| {
            let y = measured_block(t, m, spec.case);
            match m.kind {
                MeasurementKind::Landmark => {
                    let n = y.len();
                    MeasurementValue::Landmark(y + gauss(n, m.noise_std))
                }
                MeasurementKind::Bearing => {
                    let n = y.len();
                    let raw = y + gauss(n, m.noise_std);
                    let norm = raw.norm();
                    if norm < crate::observer::BEARING_MIN_NORM {
                        MeasurementValue::Missing
                    } else {
                        MeasurementValue::Bearing(raw / norm)
                    }
                }
                MeasurementKind::Range => {
                    let r = y.norm() + gauss(1, m.noise_std)[0];
                    MeasurementValue::Range(r.max(0.0))
                }
            }
        })
        .collect();
    MeasurementBatch { values }
}

/// Angle of `R_hat^T R` in degrees.
pub fn rotation_error_deg(r_hat: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let c = ((r_hat.tr_mul(r).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// One logged sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub err_metric: f64,
    pub err_rot_deg: f64,
    pub err_w: Vec<f64>,
    pub err_z: f64,
    pub err_bw: f64,
    pub err_brho: f64,
    pub gram_obs_min: f64,
    pub gram_det_min: f64,
    pub recon_residual: f64,
}

/// Summary of a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: ScenarioId,
    pub seed: u64,
    pub steps: usize,
    pub final_t: f64,
    pub final_err_metric: f64,
    pub final_err_rot_deg: f64,
    pub final_err_z: f64,
    pub final_err_bw: f64,
    pub final_err_brho: f64,
    /// Least-squares slope of `ln err_z` over the fit window, 1/s.
    pub log_slope: f64,
    pub rank: RankReport,
    pub ges_eligible: bool,
    pub p_eig_min: f64,
    pub p_eig_max: f64,
    pub gram_obs_min: f64,
    pub gram_det_min: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub n_w_cols: usize,
    pub rows: Vec<LogRow>,
    pub summary: RunSummary,
}

/// Samples of `ln err_z` below this are left out of the slope fit; they sit
/// on the integration floor.
pub const FIT_FLOOR: f64 = 1e-10;

impl TrajectoryLog {
    pub fn header(n_w_cols: usize) -> Vec<String> {
        let mut h = vec!["t".to_string(), "err_metric".into(), "err_rot_deg".into()];
        h.extend((0..n_w_cols).map(|k| format!("err_W_col{k}")));
        h.extend(
            [
                "err_z",
                "err_bw",
                "err_brho",
                "gram_obs_min",
                "gram_det_min",
                "recon_residual",
            ]
            .map(String::from),
        );
        h
    }

    /// CSV text, every float with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = Self::header(self.n_w_cols).join(",");
        out.push('\n');
        for r in &self.rows {
            let mut vals = vec![r.t, r.err_metric, r.err_rot_deg];
            vals.extend(&r.err_w);
            vals.extend([
                r.err_z,
                r.err_bw,
                r.err_brho,
                r.gram_obs_min,
                r.gram_det_min,
                r.recon_residual,
            ]);
            let line: Vec<String> = vals.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Least-squares slope of `ln y` against `t` on `[t0, t1]`, skipping
/// samples that are not finite or below `floor`.
pub fn fit_log_slope(t: &[f64], y: &[f64], window: [f64; 2], floor: f64) -> f64 {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(&tt, &yy)| tt >= window[0] && tt <= window[1] && yy.is_finite() && yy > floor)
        .map(|(&tt, &yy)| (tt, yy.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    sxy / sxx
}

/// Runs a configured scenario end to end.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<TrajectoryLog> {
    cfg.validate()?;
    let spec = build_spec(cfg)?;
    let dims = spec.dims;
    let case = spec.case;
    let observer = Observer::new(spec.clone(), cfg.observer.clone())?;
    let table = observer.table().clone();
    let layout = observer.layout().clone();
    let rank = rank_condition(&table);
    let mut warnings = Vec::new();
    if !rank.ges_eligible {
        let msg = format!(
            "rank condition fails (rank {} < {}); global convergence is not guaranteed",
            rank.rank, rank.required
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let reconstructor = match observer.reconstructor() {
        Ok(r) => Some(r),
        Err(e) => {
            let msg = format!("reconstruction unavailable: {e}");
            log::warn!("{msg}");
            warnings.push(msg);
            None
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut truth = initial_truth(cfg, &mut rng)?;
    let guess = perturbed_guess(&truth, &cfg.init, &mut rng)?;
    let b_true = bias_element(&cfg.bias, dims);
    let b_guess = cfg
        .init
        .bias_guess
        .as_ref()
        .map(|b| bias_element(b, dims))
        .unwrap_or_else(|| AlgebraElement::zero(dims));

    let z_true0 = immerse(&truth, &table, case).stacked(&layout);
    let z_guess = immerse(&guess, &table, case).stacked(&layout);
    let z0 = &z_true0 + (z_guess - &z_true0) * cfg.init.z_scale;
    let mut state = observer.initial_state_from_z(z0, Some(&b_guess), 0.0)?;

    let mut monitor = if cfg.gramian.enabled {
        Some(GramianMonitor::new(
            observer.state_dim(),
            cfg.gramian.window,
            cfg.gramian.stagger,
        )?)
    } else {
        None
    };

    let measured_input = |t: f64, x: &DMatrix<f64>| {
        let mut u = scenario_input(cfg, t, x);
        u.omega -= &b_true.omega;
        u.rho -= &b_true.rho;
        u
    };
    let true_input = |t: f64, x: &DMatrix<f64>| scenario_input(cfg, t, x);

    let h = cfg.step;
    let steps = cfg.steps();
    let mut y_start = synthesize_measurements(&truth, &spec, &mut rng);
    let mut u_start = measured_input(0.0, &truth.embed());
    let mut rows = Vec::with_capacity(steps / cfg.decimate + 1);
    let (mut p_min, mut p_max) = (f64::INFINITY, 0.0f64);
    let (mut obs_overall, mut det_overall) = (f64::INFINITY, f64::INFINITY);

    let mut record = |state: &crate::observer::ObserverState,
                      truth: &GroupElement,
                      monitor: &Option<GramianMonitor>,
                      rows: &mut Vec<LogRow>|
     -> Result<()> {
        let z_true = immerse(truth, &table, case).stacked(&layout);
        let err_z = (&state.z - z_true).norm();
        let (err_metric, err_rot, err_w, resid) = match &reconstructor {
            Some(rec) => {
                let res = rec.solve(&observer.zbar_matrix(state))?;
                let est = &res.estimate;
                let err_w: Vec<f64> = (0..dims.vectors())
                    .map(|k| (est.w().column(k) - truth.w().column(k)).norm())
                    .collect();
                (
                    error_metric(est, truth, case),
                    rotation_error_deg(est.rotation(), truth.rotation()),
                    err_w,
                    res.residual,
                )
            }
            None => (f64::NAN, f64::NAN, vec![f64::NAN; dims.vectors()], f64::NAN),
        };
        let (err_bw, err_brho) = match (&state.bias, cfg.observer.bias) {
            (Some(b), BiasMode::Full) => (
                (&b.omega - &b_true.omega).norm(),
                (&b.rho - &b_true.rho).norm(),
            ),
            (Some(b), BiasMode::Rho) => (f64::NAN, (&b.rho - &b_true.rho).norm()),
            _ => (f64::NAN, f64::NAN),
        };
        let eig = state.riccati.eigenvalues();
        p_min = p_min.min(eig[0]);
        p_max = p_max.max(eig[eig.len() - 1]);
        let (go, gd) = monitor
            .as_ref()
            .map(|m| (m.obs_min(), m.det_min()))
            .unwrap_or((f64::NAN, f64::NAN));
        if go.is_finite() {
            obs_overall = obs_overall.min(go);
        }
        if gd.is_finite() {
            det_overall = det_overall.min(gd);
        }
        rows.push(LogRow {
            t: state.t,
            err_metric,
            err_rot_deg: err_rot,
            err_w,
            err_z,
            err_bw,
            err_brho,
            gram_obs_min: go,
            gram_det_min: gd,
            recon_residual: resid,
        });
        Ok(())
    };

    record(&state, &truth, &monitor, &mut rows)?;
    for k in 0..steps {
        let t = k as f64 * h;
        let fail = |e: Error| match e {
            Error::Numerical(msg) => Error::Numerical(format!("step {k}: {msg}")),
            other => other,
        };
        let mid = propagate_truth_with(&truth, t, h / 2.0, &spec.generator, case, true_input)
            .map_err(fail)?;
        let end = propagate_truth_with(
            &mid,
            t + h / 2.0,
            h / 2.0,
            &spec.generator,
            case,
            true_input,
        )
        .map_err(fail)?;
        let y_mid = synthesize_measurements(&mid, &spec, &mut rng);
        let y_end = synthesize_measurements(&end, &spec, &mut rng);
        let u_mid = measured_input(t + h / 2.0, &mid.embed());
        let u_end = measured_input(t + h, &end.embed());
        let u = StageSamples {
            start: u_start,
            mid: u_mid,
            end: u_end.clone(),
        };
        let y = StageSamples {
            start: y_start,
            mid: y_mid,
            end: y_end.clone(),
        };
        let (next, report) = observer.step(&state, &u, &y, h).map_err(fail)?;
        if let Some(m) = monitor.as_mut() {
            m.push(
                [&report.f[0], &report.f[1], &report.f[2]],
                [&report.g[0], &report.g[1]],
                h,
            )
            .map_err(fail)?;
        }
        state = next;
        // Keep the logged time exact rather than accumulated.
        state.t = (k + 1) as f64 * h;
        state.riccati.t = state.t;
        truth = end;
        u_start = u_end;
        y_start = y_end;
        if (k + 1) % cfg.decimate == 0 || k + 1 == steps {
            record(&state, &truth, &monitor, &mut rows).map_err(fail)?;
        }
    }

    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let ez: Vec<f64> = rows.iter().map(|r| r.err_z).collect();
    let log_slope = fit_log_slope(&ts, &ez, cfg.fit_window, FIT_FLOOR);
    let last = rows.last().expect("at least the initial row");
    let summary = RunSummary {
        scenario: cfg.scenario,
        seed: cfg.seed,
        steps,
        final_t: last.t,
        final_err_metric: last.err_metric,
        final_err_rot_deg: last.err_rot_deg,
        final_err_z: last.err_z,
        final_err_bw: last.err_bw,
        final_err_brho: last.err_brho,
        log_slope,
        ges_eligible: rank.ges_eligible,
        rank,
        p_eig_min: p_min,
        p_eig_max: p_max,
        gram_obs_min: if obs_overall.is_finite() {
            obs_overall
        } else {
            f64::NAN
        },
        gram_det_min: if det_overall.is_finite() {
            det_overall
        } else {
            f64::NAN
        },
        warnings,
    };
    Ok(TrajectoryLog {
        n_w_cols: dims.vectors(),
        rows,
        summary,
    })
}
