//! Simulated benchmark plants and episodic rollouts.
//!
//! Each plant is a deterministic continuous-time model integrated with
//! RK4; the origin is the regulation target and equilibrium for all of
//! them. Rollouts close the loop with a linear policy `u = -K x`, inject
//! additive Gaussian process noise per step and accumulate the quadratic
//! episode cost.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::lqr::{ControlError, CostWeights, GainMatrix, LinearDynamics};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlantError {
    #[error("unknown plant `{0}`")]
    UnknownPlant(String),
    #[error("episode horizon must be an integer number of steps")]
    NonIntegralHorizon,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
}

/// A deterministic continuous-time plant with the origin as equilibrium.
pub trait PlantModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// Continuous-time state derivative `dx/dt = f(x, u)`.
    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// Symmetric per-channel actuator limits; inputs are clipped to
    /// `[-limit_i, limit_i]` before being applied.
    fn input_limits(&self) -> DVector<f64>;

    /// One deterministic integration step (classic RK4).
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> DVector<f64> {
        let k1 = self.derivative(x, u);
        let k2 = self.derivative(&(x + &k1 * (dt / 2.0)), u);
        let k3 = self.derivative(&(x + &k2 * (dt / 2.0)), u);
        let k4 = self.derivative(&(x + &k3 * dt), u);
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
    }
}

/// One contiguous recorded trajectory: `states` has one more entry than
/// `inputs`; input `t` was applied at state `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Episode {
    pub fn transition_count(&self) -> usize {
        self.inputs.len()
    }
}

/// Configuration of one evaluation episode.
#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub x0: DVector<f64>,
    pub horizon_s: f64,
    pub dt: f64,
    /// Diagonal of the process-noise covariance (variances, per state).
    pub noise_var: DVector<f64>,
    pub weights: CostWeights,
    /// A rollout is truncated once any state magnitude exceeds this bound.
    pub divergence_bound: f64,
    /// Cost assigned to a truncated (diverged) rollout.
    pub divergence_penalty: f64,
    pub record_trajectory: bool,
}

impl EpisodeConfig {
    pub fn steps(&self) -> Result<usize, PlantError> {
        let ratio = self.horizon_s / self.dt;
        let rounded = ratio.round();
        if (ratio - rounded).abs() > 1e-9 {
            return Err(PlantError::NonIntegralHorizon);
        }
        Ok(rounded as usize)
    }
}

/// Outcome of one episodic rollout.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub cost: f64,
    pub diverged: bool,
    pub trajectory: Option<Episode>,
}

/// Simulates `x_{t+1} = step(x_t, clip(-K x_t)) + nu_t` for the configured
/// horizon, accumulating `sum(x'Qx + u'Ru)`. Divergence truncates the
/// episode and replaces the accumulated cost with the configured penalty.
/// Deterministic for a fixed seed.
pub fn rollout(
    plant: &dyn PlantModel,
    gain: &GainMatrix,
    config: &EpisodeConfig,
    seed_value: u64,
) -> Result<RolloutResult, PlantError> {
    let n_x = plant.state_dim();
    let n_u = plant.input_dim();
    if gain.state_dim() != n_x || gain.input_dim() != n_u {
        return Err(PlantError::DimensionMismatch("gain does not match the plant"));
    }
    if config.x0.len() != n_x || config.noise_var.len() != n_x {
        return Err(PlantError::DimensionMismatch("episode config does not match the plant"));
    }
    if config.weights.state_dim() != n_x || config.weights.input_dim() != n_u {
        return Err(PlantError::DimensionMismatch("weights do not match the plant"));
    }
    let steps = config.steps()?;
    let limits = plant.input_limits();
    let noise_std = config.noise_var.map(|v| v.max(0.0).sqrt());
    let mut rng = seed::rng(seed_value);

    let mut x = config.x0.clone();
    let mut cost = 0.0;
    let mut diverged = false;
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    if config.record_trajectory {
        states.push(x.clone());
    }

    for _ in 0..steps {
        let mut u = -(gain.k() * &x);
        for i in 0..n_u {
            u[i] = u[i].clamp(-limits[i], limits[i]);
        }
        cost += (config.weights.q() * &x).dot(&x) + (config.weights.r() * &u).dot(&u);
        let mut next = plant.step(&x, &u, config.dt);
        for i in 0..n_x {
            let z: f64 = rng.sample(StandardNormal);
            next[i] += noise_std[i] * z;
        }
        if config.record_trajectory {
            inputs.push(u);
            states.push(next.clone());
        }
        x = next;
        if x.iter().any(|v| !v.is_finite() || v.abs() > config.divergence_bound) {
            diverged = true;
            cost = config.divergence_penalty;
            break;
        }
    }

    let trajectory = if config.record_trajectory {
        Some(Episode { states, inputs })
    } else {
        None
    };
    Ok(RolloutResult {
        cost,
        diverged,
        trajectory,
    })
}

/// Linearizes the discrete step map at `(x_eq, u_eq)` by central finite
/// differences with step `1e-6` per coordinate.
pub fn linearize(
    plant: &dyn PlantModel,
    x_eq: &DVector<f64>,
    u_eq: &DVector<f64>,
    dt: f64,
) -> Result<LinearDynamics, ControlError> {
    let n_x = plant.state_dim();
    let n_u = plant.input_dim();
    let h = 1e-6;
    let mut a = DMatrix::zeros(n_x, n_x);
    for j in 0..n_x {
        let mut hi = x_eq.clone();
        let mut lo = x_eq.clone();
        hi[j] += h;
        lo[j] -= h;
        let diff = (plant.step(&hi, u_eq, dt) - plant.step(&lo, u_eq, dt)) / (2.0 * h);
        a.set_column(j, &diff);
    }
    let mut b = DMatrix::zeros(n_x, n_u);
    for j in 0..n_u {
        let mut hi = u_eq.clone();
        let mut lo = u_eq.clone();
        hi[j] += h;
        lo[j] -= h;
        let diff = (plant.step(x_eq, &hi, dt) - plant.step(x_eq, &lo, dt)) / (2.0 * h);
        b.set_column(j, &diff);
    }
    LinearDynamics::new(a, b)
}

/// Three-hump camel function, global optimum 0 at the origin.
pub fn camel(theta: &[f64]) -> f64 {
    let a = theta[0];
    let b = theta[1];
    2.0 * a * a - 1.05 * a.powi(4) + a.powi(6) / 6.0 + a * b + b * b
}

/// Rotary disk driven by a torque: a pure double integrator.
#[derive(Debug, Clone)]
pub struct DoubleIntegrator;

impl PlantModel for DoubleIntegrator {
    fn name(&self) -> &'static str {
        "double_integrator"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[x[1], u[0]])
    }

    fn input_limits(&self) -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }
}

/// Cart with an inverted point-mass pendulum; angle measured from the
/// upright position, state `[z, phi, z_dot, phi_dot]`, input a horizontal
/// force on the cart.
#[derive(Debug, Clone)]
pub struct CartPole {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.5,
            gravity: 9.81,
        }
    }
}

impl CartPole {
    /// Total mechanical energy; conserved along unforced, noiseless
    /// trajectories.
    pub fn mechanical_energy(&self, x: &DVector<f64>) -> f64 {
        let (phi, zd, pd) = (x[1], x[2], x[3]);
        let kinetic = 0.5 * (self.cart_mass + self.pole_mass) * zd * zd
            + self.pole_mass * self.pole_length * zd * pd * phi.cos()
            + 0.5 * self.pole_mass * self.pole_length * self.pole_length * pd * pd;
        let potential = self.pole_mass * self.gravity * self.pole_length * phi.cos();
        kinetic + potential
    }
}

impl PlantModel for CartPole {
    fn name(&self) -> &'static str {
        "cart_pole"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (phi, zd, pd) = (x[1], x[2], x[3]);
        let (sin, cos) = (phi.sin(), phi.cos());
        let force = u[0];
        let denom = self.cart_mass + self.pole_mass * sin * sin;
        let z_acc = (force
            + self.pole_mass * sin * (self.pole_length * pd * pd - self.gravity * cos))
            / denom;
        let phi_acc = (self.gravity * sin - z_acc * cos) / self.pole_length;
        DVector::from_column_slice(&[zd, pd, z_acc, phi_acc])
    }

    fn input_limits(&self) -> DVector<f64> {
        DVector::from_element(1, 25.0)
    }
}

/// Plus-configuration quadcopter with quadratic rotor-speed-to-thrust
/// map. State `[p(3), v(3), roll, pitch, yaw, omega_body(3)]`; inputs are
/// rotor-speed deviations from hover, so the zero state with zero input
/// is the hover equilibrium.
#[derive(Debug, Clone)]
pub struct Quadcopter {
    pub mass: f64,
    pub arm_length: f64,
    pub inertia: [f64; 3],
    pub gravity: f64,
    /// Rotor speed at hover, rad/s.
    pub hover_speed: f64,
    /// Thrust per squared rotor speed; chosen so four rotors at hover
    /// speed carry the weight.
    pub thrust_coeff: f64,
    /// Yaw-torque to thrust ratio of a rotor.
    pub drag_ratio: f64,
    /// Limit on rotor-speed deviation, rad/s.
    pub max_speed_delta: f64,
}

impl Default for Quadcopter {
    fn default() -> Self {
        let mass = 0.5;
        let gravity = 9.81;
        let hover_speed = 400.0;
        Self {
            mass,
            arm_length: 0.17,
            inertia: [3.2e-3, 3.2e-3, 5.5e-3],
            gravity,
            hover_speed,
            thrust_coeff: mass * gravity / (4.0 * hover_speed * hover_speed),
            drag_ratio: 0.016,
            max_speed_delta: 150.0,
        }
    }
}

impl PlantModel for Quadcopter {
    fn name(&self) -> &'static str {
        "quadcopter"
    }

    fn state_dim(&self) -> usize {
        12
    }

    fn input_dim(&self) -> usize {
        4
    }

    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (vx, vy, vz) = (x[3], x[4], x[5]);
        let (roll, pitch, yaw) = (x[6], x[7], x[8]);
        let (p, q, r) = (x[9], x[10], x[11]);

        // Rotor thrusts; speeds cannot go negative.
        let mut thrust = [0.0; 4];
        for (i, t) in thrust.iter_mut().enumerate() {
            let speed = (self.hover_speed + u[i]).max(0.0);
            *t = self.thrust_coeff * speed * speed;
        }
        let total = thrust.iter().sum::<f64>();
        // Rotors 0..3 sit on the +x, +y, -x, -y arms; 0 and 2 spin
        // opposite to 1 and 3.
        let tau_x = self.arm_length * (thrust[1] - thrust[3]);
        let tau_y = self.arm_length * (thrust[2] - thrust[0]);
        let tau_z = self.drag_ratio * (thrust[0] - thrust[1] + thrust[2] - thrust[3]);

        let (sr, cr) = (roll.sin(), roll.cos());
        let (sp, cp) = (pitch.sin(), pitch.cos());
        let (sy, cy) = (yaw.sin(), yaw.cos());

        // Body-z thrust direction expressed in world frame (ZYX Euler).
        let acc_scale = total / self.mass;
        let ax = acc_scale * (cr * sp * cy + sr * sy);
        let ay = acc_scale * (cr * sp * sy - sr * cy);
        let az = acc_scale * (cr * cp) - self.gravity;

        // Euler-angle kinematics; the pitch singularity is far outside
        // the divergence bound used in episodes.
        let tp = sp / cp;
        let roll_rate = p + sr * tp * q + cr * tp * r;
        let pitch_rate = cr * q - sr * r;
        let yaw_rate = (sr * q + cr * r) / cp;

        let [jx, jy, jz] = self.inertia;
        let p_dot = (tau_x - (jz - jy) * q * r) / jx;
        let q_dot = (tau_y - (jx - jz) * p * r) / jy;
        let r_dot = (tau_z - (jy - jx) * p * q) / jz;

        DVector::from_column_slice(&[
            vx, vy, vz, ax, ay, az, roll_rate, pitch_rate, yaw_rate, p_dot, q_dot, r_dot,
        ])
    }

    fn input_limits(&self) -> DVector<f64> {
        DVector::from_element(4, self.max_speed_delta)
    }
}

/// Builds a plant by name together with its default evaluation episode.
pub fn make_plant(name: &str) -> Result<(Box<dyn PlantModel>, EpisodeConfig), PlantError> {
    const DEG: f64 = core::f64::consts::PI / 180.0;
    match name {
        "double_integrator" => {
            let plant = DoubleIntegrator;
            let config = EpisodeConfig {
                x0: DVector::from_column_slice(&[90.0 * DEG, 0.0]),
                horizon_s: 5.0,
                dt: 0.05,
                noise_var: DVector::from_element(2, 1e-3),
                weights: CostWeights::identity(2, 1, 0.1),
                divergence_bound: 1e3,
                divergence_penalty: 1e6,
                record_trajectory: false,
            };
            Ok((Box::new(plant), config))
        }
        "cart_pole" => {
            let plant = CartPole::default();
            let config = EpisodeConfig {
                x0: DVector::from_column_slice(&[0.0, 45.0 * DEG, 2.0, 0.0]),
                horizon_s: 5.0,
                dt: 0.01,
                noise_var: DVector::from_element(4, 1e-5),
                weights: CostWeights::identity(4, 1, 0.1),
                divergence_bound: 1e3,
                divergence_penalty: 1e6,
                record_trajectory: false,
            };
            Ok((Box::new(plant), config))
        }
        "quadcopter" => {
            let plant = Quadcopter::default();
            let mut x0 = DVector::zeros(12);
            x0[0] = 2.0;
            x0[6] = 30.0 * DEG;
            x0[7] = 30.0 * DEG;
            let config = EpisodeConfig {
                x0,
                horizon_s: 5.0,
                dt: 0.02,
                noise_var: DVector::from_element(12, 1e-5),
                weights: CostWeights::identity(12, 4, 0.1),
                divergence_bound: 1e3,
                divergence_penalty: 1e6,
                record_trajectory: false,
            };
            Ok((Box::new(plant), config))
        }
        other => Err(PlantError::UnknownPlant(String::from(other))),
    }
}

/// Names accepted by [`make_plant`].
pub const PLANT_NAMES: [&str; 3] = ["double_integrator", "cart_pole", "quadcopter"];
