//! Quarter-car model with a current-controlled damper, used to synthesize
//! surrogate test-run data.
//!
//! Vertical dynamics of one wheel corner, positions measured from static
//! equilibrium (gravity cancels out):
//!
//! ```text
//! m_s z_s'' = -k_s (z_s - z_u) - F_D + F_ext
//! m_u z_u'' =  k_s (z_s - z_u) + F_D - k_t (z_u - z_r)
//! F_D       =  k_D(I) f(z_s' - z_u')
//! ```
//!
//! The recorded rod displacement is the suspension deflection `z_s - z_u`
//! in millimetres.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{fill_deltas, RawDataset, RawRecord};
use crate::error::{Error, Result};

/// Static damper characteristic `f` mapping relative velocity (m/s) to the
/// quantity multiplied by the damping coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DamperCurve {
    #[default]
    Linear,
    /// Linear interpolation between `(velocity, output)` knots, extrapolated
    /// from the outermost segments.
    PiecewiseLinear { points: Vec<[f64; 2]> },
}

impl DamperCurve {
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            DamperCurve::Linear => v,
            DamperCurve::PiecewiseLinear { points } => {
                let seg = points
                    .windows(2)
                    .position(|w| v <= w[1][0])
                    .unwrap_or(points.len() - 2);
                let ([x0, y0], [x1, y1]) = (points[seg], points[seg + 1]);
                y0 + (y1 - y0) * (v - x0) / (x1 - x0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let DamperCurve::PiecewiseLinear { points } = self {
            if points.len() < 2 {
                return Err(Error::InvalidParameter(
                    "damper curve needs at least 2 points".into(),
                ));
            }
            if points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                return Err(Error::InvalidParameter(
                    "damper curve velocities must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Physical and sensor parameters of the quarter-car.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// kg
    pub sprung_mass: f64,
    /// kg
    pub unsprung_mass: f64,
    /// N/m
    pub spring_stiffness: f64,
    /// N/m
    pub tire_stiffness: f64,
    /// N·s/m at `current_min`.
    pub damping_min: f64,
    /// N·s/m at `current_max`.
    pub damping_max: f64,
    /// A
    pub current_min: f64,
    /// A
    pub current_max: f64,
    /// Integration step and sample period, s.
    pub dt: f64,
    /// Standard deviation of additive displacement sensor noise, mm.
    pub sensor_noise_sd: f64,
    pub damper_curve: DamperCurve,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            sprung_mass: 475.0,
            unsprung_mass: 45.0,
            spring_stiffness: 30_000.0,
            tire_stiffness: 250_000.0,
            damping_min: 800.0,
            damping_max: 4_000.0,
            current_min: 0.0,
            current_max: 1.6,
            dt: 1e-3,
            sensor_noise_sd: 0.02,
            damper_curve: DamperCurve::Linear,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sprung_mass", self.sprung_mass),
            ("unsprung_mass", self.unsprung_mass),
            ("spring_stiffness", self.spring_stiffness),
            ("tire_stiffness", self.tire_stiffness),
            ("damping_min", self.damping_min),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.damping_max > self.damping_min) {
            return Err(Error::InvalidParameter(
                "damping_max must exceed damping_min".into(),
            ));
        }
        if !(self.current_max > self.current_min) {
            return Err(Error::InvalidParameter(
                "current_max must exceed current_min".into(),
            ));
        }
        if !(self.sensor_noise_sd >= 0.0) {
            return Err(Error::InvalidParameter(
                "sensor_noise_sd must be >= 0".into(),
            ));
        }
        self.damper_curve.validate()
    }

    /// Damping coefficient for valve current `current`, linear between the
    /// configured bounds.
    pub fn damping_coefficient(&self, current: f64) -> Result<f64> {
        if !(self.current_min..=self.current_max).contains(&current) {
            return Err(Error::CurrentOutOfRange {
                current,
                min: self.current_min,
                max: self.current_max,
            });
        }
        let frac = (current - self.current_min) / (self.current_max - self.current_min);
        Ok(self.damping_min + (self.damping_max - self.damping_min) * frac)
    }
}

/// Excitation applied during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RoadProfile {
    /// Half-cosine obstacle of `height` m over `length` m, reached by the
    /// wheel at `onset` s.
    CosineBump {
        height: f64,
        length: f64,
        #[serde(default = "default_onset")]
        onset: f64,
    },
    Flat,
    /// Vehicle standing still; a half-sine vertical force pulse of peak
    /// `amplitude` N and width `duration` s acts on the body from `onset` s.
    StationaryForce {
        amplitude: f64,
        #[serde(default = "default_pulse")]
        duration: f64,
        #[serde(default = "default_onset")]
        onset: f64,
    },
}

fn default_onset() -> f64 {
    1.0
}

fn default_pulse() -> f64 {
    0.2
}

impl Default for RoadProfile {
    fn default() -> Self {
        RoadProfile::CosineBump {
            height: 0.05,
            length: 0.5,
            onset: default_onset(),
        }
    }
}

impl RoadProfile {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RoadProfile::CosineBump { height, length, onset } => {
                if !(height >= 0.0) || !(length > 0.0) || !(onset >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "bump needs height >= 0, length > 0, onset >= 0 (got {height}, {length}, {onset})"
                    )));
                }
            }
            RoadProfile::Flat => {}
            RoadProfile::StationaryForce { amplitude, duration, onset } => {
                if !amplitude.is_finite() || !(duration > 0.0) || !(onset >= 0.0) {
                    return Err(Error::InvalidParameter(
                        "force pulse needs finite amplitude, duration > 0, onset >= 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Road elevation under the tyre in m at time `t` for vehicle speed
    /// `velocity_kmh`.
    pub fn elevation(&self, t: f64, velocity_kmh: f64) -> f64 {
        match *self {
            RoadProfile::CosineBump { height, length, onset } => {
                let x = velocity_kmh / 3.6 * (t - onset);
                if velocity_kmh > 0.0 && (0.0..=length).contains(&x) {
                    0.5 * height * (1.0 - (2.0 * PI * x / length).cos())
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }
    }

    /// External vertical force on the body in N at time `t`.
    pub fn body_force(&self, t: f64) -> f64 {
        match *self {
            RoadProfile::StationaryForce { amplitude, duration, onset } => {
                let s = t - onset;
                if (0.0..=duration).contains(&s) {
                    amplitude * (PI * s / duration).sin()
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }
    }

    /// Time at which the excitation has ended, for `velocity_kmh`.
    pub fn excitation_end(&self, velocity_kmh: f64) -> f64 {
        match *self {
            RoadProfile::CosineBump { length, onset, .. } if velocity_kmh > 0.0 => {
                onset + length / (velocity_kmh / 3.6)
            }
            RoadProfile::StationaryForce { duration, onset, .. } => onset + duration,
            _ => 0.0,
        }
    }
}

/// One row of a test program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestRunSpec {
    pub run_id: u32,
    /// Commanded valve current, A.
    #[serde(rename = "I")]
    pub current: f64,
    /// Vehicle velocity, km/h.
    #[serde(rename = "V")]
    pub velocity: f64,
    /// s
    pub duration: f64,
    #[serde(default)]
    pub profile: RoadProfile,
}

/// Default length of each test run in seconds.
pub const DEFAULT_RUN_DURATION: f64 = 12.0;

impl TestRunSpec {
    /// The 14-run program: four currents at 10, 15 and 20 km/h, a stationary
    /// run, and one run at maximum current and 25 km/h.
    pub fn default_program() -> Vec<TestRunSpec> {
        const GRID: [(u32, f64, f64); 14] = [
            (1, 0.4, 10.0),
            (2, 1.0, 10.0),
            (3, 1.2, 10.0),
            (4, 1.5, 10.0),
            (5, 0.4, 15.0),
            (6, 1.0, 15.0),
            (7, 1.2, 15.0),
            (8, 1.5, 15.0),
            (9, 0.4, 20.0),
            (10, 1.0, 20.0),
            (11, 1.2, 20.0),
            (12, 1.5, 20.0),
            (13, 0.4, 0.0),
            (14, 1.6, 25.0),
        ];
        GRID.iter()
            .map(|&(run_id, current, velocity)| TestRunSpec {
                run_id,
                current,
                velocity,
                duration: DEFAULT_RUN_DURATION,
                profile: if velocity == 0.0 {
                    RoadProfile::StationaryForce {
                        amplitude: 1_500.0,
                        duration: default_pulse(),
                        onset: default_onset(),
                    }
                } else {
                    RoadProfile::default()
                },
            })
            .collect()
    }
}

/// Quarter-car state relative to static equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuarterCarState {
    /// m
    pub body_position: f64,
    /// m/s
    pub body_velocity: f64,
    /// m
    pub wheel_position: f64,
    /// m/s
    pub wheel_velocity: f64,
}

impl QuarterCarState {
    fn to_array(self) -> [f64; 4] {
        [
            self.body_position,
            self.body_velocity,
            self.wheel_position,
            self.wheel_velocity,
        ]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            body_position: a[0],
            body_velocity: a[1],
            wheel_position: a[2],
            wheel_velocity: a[3],
        }
    }

    /// Suspension deflection in mm.
    pub fn deflection_mm(&self) -> f64 {
        (self.body_position - self.wheel_position) * 1e3
    }
}

/// Classic fourth-order Runge-Kutta step for `y' = f(t, y)`.
pub fn rk4_step<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    t: f64,
    y: &[f64; N],
    h: f64,
) -> [f64; N] {
    let offset = |y: &[f64; N], k: &[f64; N], s: f64| -> [f64; N] {
        std::array::from_fn(|i| y[i] + s * k[i])
    };
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &offset(y, &k1, 0.5 * h));
    let k3 = f(t + 0.5 * h, &offset(y, &k2, 0.5 * h));
    let k4 = f(t + h, &offset(y, &k3, h));
    std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// A quarter-car at a fixed valve current driven by one excitation.
#[derive(Debug, Clone)]
pub struct QuarterCar<'a> {
    params: &'a PlantParams,
    damping: f64,
    profile: &'a RoadProfile,
    velocity_kmh: f64,
}

impl<'a> QuarterCar<'a> {
    pub fn new(
        params: &'a PlantParams,
        current: f64,
        profile: &'a RoadProfile,
        velocity_kmh: f64,
    ) -> Result<Self> {
        params.validate()?;
        profile.validate()?;
        Ok(Self {
            params,
            damping: params.damping_coefficient(current)?,
            profile,
            velocity_kmh,
        })
    }

    fn derivative(&self, t: f64, s: &[f64; 4]) -> [f64; 4] {
        let p = self.params;
        let [zs, vs, zu, vu] = *s;
        let damper = self.damping * p.damper_curve.eval(vs - vu);
        let suspension = p.spring_stiffness * (zs - zu) + damper;
        let road = self.profile.elevation(t, self.velocity_kmh);
        [
            vs,
            (self.profile.body_force(t) - suspension) / p.sprung_mass,
            vu,
            (suspension - p.tire_stiffness * (zu - road)) / p.unsprung_mass,
        ]
    }

    /// Total mechanical energy (kinetic plus spring and tyre potential) in J,
    /// for a flat road.
    pub fn energy(&self, s: &QuarterCarState) -> f64 {
        let p = self.params;
        let deflection = s.body_position - s.wheel_position;
        0.5 * p.sprung_mass * s.body_velocity.powi(2)
            + 0.5 * p.unsprung_mass * s.wheel_velocity.powi(2)
            + 0.5 * p.spring_stiffness * deflection.powi(2)
            + 0.5 * p.tire_stiffness * s.wheel_position.powi(2)
    }

    /// Integrates `steps` RK4 steps of size `params.dt` and returns the
    /// state at every sample time, starting with `initial` at `t = 0`.
    pub fn integrate(&self, initial: QuarterCarState, steps: usize) -> Result<Vec<QuarterCarState>> {
        let dt = self.params.dt;
        let mut out = Vec::with_capacity(steps);
        let mut y = initial.to_array();
        for k in 0..steps {
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { step: k });
            }
            out.push(QuarterCarState::from_array(y));
            y = rk4_step(|t, s| self.derivative(t, s), k as f64 * dt, &y, dt);
        }
        Ok(out)
    }
}

fn sample_count(spec: &TestRunSpec, params: &PlantParams) -> Result<usize> {
    if !(params.dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", params.dt)));
    }
    if !(spec.duration > 0.0) || !(spec.velocity >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "run {}: duration must be > 0 and velocity >= 0",
            spec.run_id
        )));
    }
    if spec.profile.excitation_end(spec.velocity) >= spec.duration {
        return Err(Error::InvalidParameter(format!(
            "run {}: duration {} s ends before the excitation does",
            spec.run_id, spec.duration
        )));
    }
    Ok((spec.duration / params.dt).round() as usize)
}

/// Noise-free suspension deflection in mm at every sample of `spec`,
/// starting from rest.
pub fn simulate_deflection(spec: &TestRunSpec, params: &PlantParams) -> Result<Vec<f64>> {
    let steps = sample_count(spec, params)?;
    let car = QuarterCar::new(params, spec.current, &spec.profile, spec.velocity)?;
    Ok(car
        .integrate(QuarterCarState::default(), steps)?
        .iter()
        .map(QuarterCarState::deflection_mm)
        .collect())
}

/// Simulates one test run and returns its sensor records, with seeded
/// Gaussian noise on the displacement channel.
pub fn simulate_run(spec: &TestRunSpec, params: &PlantParams, seed: u64) -> Result<Vec<RawRecord>> {
    let deflection = simulate_deflection(spec, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.sensor_noise_sd)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let mut records: Vec<RawRecord> = deflection
        .into_iter()
        .enumerate()
        .map(|(k, d)| RawRecord {
            t: k as f64 * params.dt,
            run_id: spec.run_id,
            velocity: spec.velocity,
            current: spec.current,
            displacement: d + noise.sample(&mut rng),
            delta_displacement: 0.0,
        })
        .collect();
    fill_deltas(&mut records);
    Ok(records)
}

/// Per-run seed derived from the program seed.
pub fn run_seed(seed: u64, run_id: u32) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (u64::from(run_id)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates every run of a program and concatenates them in run_id order.
pub fn generate_program(specs: &[TestRunSpec], params: &PlantParams, seed: u64) -> Result<RawDataset> {
    if specs.is_empty() {
        return Err(Error::InvalidParameter("empty test program".into()));
    }
    let mut ids = BTreeSet::new();
    for s in specs {
        if !ids.insert(s.run_id) {
            return Err(Error::DuplicateRun(s.run_id));
        }
    }
    let mut ordered: Vec<&TestRunSpec> = specs.iter().collect();
    ordered.sort_by_key(|s| s.run_id);

    let runs = ordered
        .par_iter()
        .map(|s| simulate_run(s, params, run_seed(seed, s.run_id)))
        .collect::<Result<Vec<_>>>()?;
    RawDataset::new(runs.into_iter().flatten().collect())
}
