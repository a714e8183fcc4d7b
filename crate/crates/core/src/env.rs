//! Desk-scale locomotion surrogate.
//!
//! A point body on a spring-damper ground driven by four legs with a fixed
//! trot phase schedule. Every terrain property has a monotone effect:
//! friction and stiffness scale traction, damping and rolling friction add
//! drag, stiffness and damping shape the vertical spring, and restitution
//! sets the bounce on hard impacts.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::terrain::{TerrainParams, ROLLING_FRICTION_RANGE};

pub const OBS_DIM: usize = 16;
pub const ACTION_DIM: usize = 8;
pub const NOISY_OBS_ENTRIES: usize = 8;

pub const DT: f64 = 0.01;
pub const GRAVITY: f64 = 9.81;
pub const REST_HEIGHT: f64 = 0.5;
pub const TRACTION_ACCEL: f64 = 8.0;
pub const LATERAL_PENALTY: f64 = 0.03;
pub const FALL_PENALTY: f64 = 10.0;

const GAIT_HZ: f64 = 1.0;
const DUTY: f64 = 0.6;
const LEG_PHASE_OFFSET: [f64; 4] = [0.0, 0.5, 0.5, 0.0];
const CONTACT_CLEARANCE: f64 = 0.05;
const IMPACT_HEIGHT_FRAC: f64 = 0.25;
const ANGLE_LIMIT: f64 = 0.5;
/// Traction capacity at zero friction, in thrust units.
const SLIP_CAPACITY_FLOOR: f64 = 0.1;
/// Traction lost per unit of thrust beyond capacity.
const SLIP_LOSS: f64 = 1.0;

/// Minimal gym-style interface used by the trainer.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<Transition>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub max_steps: usize,
    /// Falling means staying below this fraction of the rest height...
    pub fall_height_frac: f64,
    /// ...for this many consecutive steps.
    pub fall_steps: usize,
    pub sensor_noise: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_steps: 5000,
            fall_height_frac: 0.3,
            fall_steps: 10,
            sensor_noise: 1e-3,
        }
    }
}

impl EnvConfig {
    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub vx: f64,
    pub vy: f64,
    pub vh: f64,
    pub roll: f64,
    pub pitch: f64,
    pub step_index: usize,
}

impl BodyState {
    pub fn at_rest() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            h: REST_HEIGHT,
            vx: 0.0,
            vy: 0.0,
            vh: 0.0,
            roll: 0.0,
            pitch: 0.0,
            step_index: 0,
        }
    }
}

/// Per-leg thrust `t1..t4` then per-leg lateral push `l1..l4`, each in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action(pub [f64; ACTION_DIM]);

impl Action {
    pub fn zero() -> Self {
        Action([0.0; ACTION_DIM])
    }

    pub fn thrust(t: f64) -> Self {
        Action([t, t, t, t, 0.0, 0.0, 0.0, 0.0]).clipped()
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; ACTION_DIM] = v.try_into().map_err(|_| {
            Error::Argument(format!("action has {} entries, expected {ACTION_DIM}", v.len()))
        })?;
        Ok(Action(arr).clipped())
    }

    pub fn clipped(self) -> Self {
        Action(self.0.map(|a| if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) }))
    }
}

/// `[roll, pitch, gyro x/y/z, acc x/y/z, h, vx, vy, vh, contact 1..4]`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn contacts(&self) -> [f64; 4] {
        [self.0[12], self.0[13], self.0[14], self.0[15]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Impact {
    pub incoming: f64,
    pub outgoing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub dx: f64,
    pub lateral_penalty: f64,
    pub fell: bool,
    pub impact: Option<Impact>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One line of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub reward: f64,
    pub contacts: [u8; 4],
}

pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}

/// Thrust that actually reaches the ground. Up to the friction-dependent
/// capacity it is transmitted as is; beyond it the foot slips and traction
/// falls off, reaching zero at `capacity · (1 + 1/SLIP_LOSS)`.
pub fn transmitted_thrust(thrust: f64, lateral_friction: f64) -> f64 {
    let capacity = SLIP_CAPACITY_FLOOR + (1.0 - SLIP_CAPACITY_FLOOR) * lateral_friction;
    let mag = thrust.abs();
    if mag <= capacity {
        thrust
    } else {
        thrust.signum() * (capacity - SLIP_LOSS * (mag - capacity)).max(0.0)
    }
}

/// Restitution to the fraction of vertical speed kept on a hard impact.
pub fn restitution_gain(restitution: f64) -> f64 {
    0.1 + 4.0 * restitution
}

#[derive(Debug, Clone, Copy)]
struct Coefficients {
    spring: f64,
    contact_damping: f64,
    sink: f64,
    drag: f64,
    bounce: f64,
    friction: f64,
}

impl Coefficients {
    fn of(t: &TerrainParams) -> Self {
        let c_roll = 0.05
            + 0.45 * (t.rolling_friction() - ROLLING_FRICTION_RANGE.lo) / ROLLING_FRICTION_RANGE.width();
        let c_terr = 1.2 * (t.damping() / 0.5);
        Self {
            spring: 200.0 + 1800.0 * t.stiffness(),
            contact_damping: 2.0 + 38.0 * (t.damping() / 0.5),
            sink: 0.5 + 0.5 * t.stiffness(),
            drag: c_roll + c_terr,
            bounce: restitution_gain(t.restitution()),
            friction: t.lateral_friction(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateEnv {
    terrain: TerrainParams,
    coeffs: Coefficients,
    config: EnvConfig,
    state: BodyState,
    /// Unwrapped gait phase in cycles.
    phase: f64,
    low_steps: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl SurrogateEnv {
    pub fn new(terrain: TerrainParams, config: EnvConfig) -> Self {
        Self {
            terrain,
            coeffs: Coefficients::of(&terrain),
            config,
            state: BodyState::at_rest(),
            phase: 0.0,
            low_steps: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn terrain(&self) -> &TerrainParams {
        &self.terrain
    }

    /// Swaps ground properties without touching the body state.
    pub fn set_terrain(&mut self, terrain: TerrainParams) {
        self.terrain = terrain;
        self.coeffs = Coefficients::of(&terrain);
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &BodyState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reset_episode(&mut self, seed: u64) -> Observation {
        self.reset_with_state(seed, BodyState::at_rest())
    }

    /// Starts an episode from an arbitrary body state (drop tests, fixtures).
    pub fn reset_with_state(&mut self, seed: u64, state: BodyState) -> Observation {
        self.state = BodyState { step_index: 0, ..state };
        self.phase = 0.0;
        self.low_steps = 0;
        self.done = false;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let contacts = self.contacts();
        self.observe([0.0, 0.0, GAIT_HZ], [0.0; 3], contacts)
    }

    fn contacts(&self) -> [f64; 4] {
        let airborne = self.state.h >= REST_HEIGHT + CONTACT_CLEARANCE;
        LEG_PHASE_OFFSET.map(|off| {
            let window = (self.phase + off).rem_euclid(1.0);
            if window < DUTY && !airborne {
                1.0
            } else {
                0.0
            }
        })
    }

    fn observe(&mut self, gyro: [f64; 3], acc: [f64; 3], contacts: [f64; 4]) -> Observation {
        let s = &self.state;
        let mut o = [
            s.roll, s.pitch, gyro[0], gyro[1], gyro[2], acc[0], acc[1], acc[2], s.h, s.vx, s.vy,
            s.vh, contacts[0], contacts[1], contacts[2], contacts[3],
        ];
        let amp = self.config.sensor_noise;
        for v in o.iter_mut().take(NOISY_OBS_ENTRIES) {
            *v += amp * (2.0 * self.rng.random::<f64>() - 1.0);
        }
        Observation(o)
    }

    pub fn step_action(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::State("step called on a finished episode".into()));
        }
        let a = action.clipped().0;
        let k = self.coeffs;
        let prev = self.state;
        let contacts = self.contacts();
        let contact_frac = contacts.iter().sum::<f64>() / 4.0;
        let s = &mut self.state;

        // vertical spring-damper
        let compression = (REST_HEIGHT - s.h).max(0.0);
        let acc_h = -GRAVITY + contact_frac * (k.spring * compression - k.contact_damping * s.vh);
        s.vh += acc_h * DT;
        s.h += s.vh * DT;
        let mut impact = None;
        let impact_height = IMPACT_HEIGHT_FRAC * REST_HEIGHT;
        if prev.h >= impact_height && s.h < impact_height && s.vh < 0.0 {
            let incoming = s.vh;
            s.vh = -k.bounce * s.vh;
            impact = Some(Impact {
                incoming: incoming.abs(),
                outgoing: s.vh.abs(),
            });
        }
        if s.h < 0.0 {
            s.h = 0.0;
            if s.vh < 0.0 {
                s.vh = -k.bounce * s.vh;
            }
        }

        // traction and drag
        let thrust: f64 = (0..4)
            .map(|i| contacts[i] * transmitted_thrust(a[i], k.friction))
            .sum::<f64>()
            / 4.0;
        let push: f64 = (0..4).map(|i| contacts[i] * a[4 + i]).sum::<f64>() / 4.0;
        let acc_x = TRACTION_ACCEL * k.friction * k.sink * thrust - k.drag * s.vx;
        let acc_y = 0.5 * TRACTION_ACCEL * k.friction * push - k.drag * s.vy;
        s.vx += acc_x * DT;
        s.vy += acc_y * DT;
        s.x += s.vx * DT;
        s.y += s.vy * DT;

        s.roll = (0.2 * s.vy).clamp(-ANGLE_LIMIT, ANGLE_LIMIT);
        s.pitch = (-0.1 * s.vx).clamp(-ANGLE_LIMIT, ANGLE_LIMIT);
        s.step_index += 1;
        self.phase += GAIT_HZ * DT;

        let cur = self.state;
        let gyro = [
            (cur.roll - prev.roll) / DT,
            (cur.pitch - prev.pitch) / DT,
            GAIT_HZ,
        ];
        let acc = [
            (cur.vx - prev.vx) / DT,
            (cur.vy - prev.vy) / DT,
            (cur.vh - prev.vh) / DT,
        ];

        if cur.h < self.config.fall_height_frac * REST_HEIGHT {
            self.low_steps += 1;
        } else {
            self.low_steps = 0;
        }
        let fell = self.low_steps >= self.config.fall_steps;

        let dx = cur.x - prev.x;
        let lateral_penalty = LATERAL_PENALTY * cur.y.abs() * DT;
        let reward = dx - lateral_penalty - if fell { FALL_PENALTY } else { 0.0 };
        self.done = fell || cur.step_index >= self.config.max_steps;

        let new_contacts = self.contacts();
        let observation = self.observe(gyro, acc, new_contacts);
        Ok(StepResult {
            observation,
            reward,
            done: self.done,
            info: StepInfo {
                dx,
                lateral_penalty,
                fell,
                impact,
            },
        })
    }

    pub fn trace_record(&self, reward: f64, observation: &Observation) -> TraceRecord {
        TraceRecord {
            t: self.state.step_index,
            x: self.state.x,
            y: self.state.y,
            h: self.state.h,
            reward,
            contacts: observation.contacts().map(|c| c as u8),
        }
    }
}

impl Environment for SurrogateEnv {
    fn observation_dim(&self) -> usize {
        OBS_DIM
    }

    fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.reset_episode(seed).0.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let r = self.step_action(&Action::from_slice(action)?)?;
        Ok(Transition {
            observation: r.observation.0.to_vec(),
            reward: r.reward,
            done: r.done,
        })
    }
}
