//! UAV trajectories, frequency-domain mmWave channels, the steering codebook
//! and the SNR-optimal beam label.
//!
//! The base station sits at the origin with a uniform linear array laid along
//! the y axis, so the array broadside points along +x. A plane wave arriving
//! from unit direction `u` produces the phase progression
//! `exp(j·2π·spacing·m·u_y)` across elements; `u_y` is the "direction sine"
//! used throughout this module.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)] // float math without std
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const GRAVITY: f64 = 9.81;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelConfig {
    /// Antenna count M of the base-station array.
    pub antennas: usize,
    /// Subcarrier count K.
    pub subcarriers: usize,
    /// Codebook size Q.
    pub codebook_size: usize,
    /// Cyclic-prefix length D. Recorded only; the model is frequency-domain.
    pub cyclic_prefix: usize,
    /// Element spacing in wavelengths.
    pub antenna_spacing: f64,
    /// Transmit symbol power P (linear).
    pub tx_power: f64,
    /// Noise power σ² (linear).
    pub noise_power: f64,
    /// Number of non-line-of-sight paths L.
    pub nlos_paths: usize,
    /// Line-of-sight to scattered power ratio in dB. `f64::INFINITY` is pure LoS.
    pub rician_k_db: f64,
    /// Mean excess delay of the scattered paths, seconds.
    pub delay_spread: f64,
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            antennas: 16,
            subcarriers: 8,
            codebook_size: 32,
            cyclic_prefix: 16,
            antenna_spacing: 0.5,
            tx_power: 1.0,
            noise_power: 1e-12,
            nlos_paths: 3,
            rician_k_db: 10.0,
            delay_spread: 20e-9,
            carrier_hz: 28e9,
            subcarrier_spacing_hz: 120e3,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::Config(format!("channel: {what}")));
        if self.antennas == 0 || self.subcarriers == 0 || self.codebook_size == 0 {
            return fail("antennas, subcarriers and codebook_size must be at least 1");
        }
        if self.codebook_size > u16::MAX as usize + 1 {
            return fail("codebook_size must fit a 16-bit label");
        }
        if !(self.tx_power > 0.0) || !(self.noise_power > 0.0) {
            return fail("tx_power and noise_power must be positive");
        }
        if !(self.antenna_spacing > 0.0) || !(self.carrier_hz > 0.0) || !(self.subcarrier_spacing_hz > 0.0) {
            return fail("antenna_spacing, carrier_hz and subcarrier_spacing_hz must be positive");
        }
        if !(self.delay_spread >= 0.0) || self.rician_k_db.is_nan() {
            return fail("delay_spread must be non-negative and rician_k_db a number");
        }
        Ok(())
    }

    pub fn transmit_snr(&self) -> f64 {
        self.tx_power / self.noise_power
    }
}

/// Array response `exp(j·2π·spacing·m·sine)` for `m = 0..antennas`.
pub fn steering_vector(antennas: usize, spacing: f64, sine: f64) -> Vec<Complex64> {
    (0..antennas)
        .map(|m| Complex64::from_polar(1.0, 2.0 * PI * spacing * m as f64 * sine))
        .collect()
}

/// Direction sine of a position seen from the array: the cosine of the angle
/// between the line of sight and the array axis.
pub fn direction_sine(position: [f64; 3]) -> f64 {
    let d = norm3(position);
    if d == 0.0 {
        0.0
    } else {
        position[1] / d
    }
}

fn norm3(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Q unit-norm steering beams on a uniform grid in sine space.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    sines: Vec<f64>,
    vectors: Vec<Vec<Complex64>>,
}

impl Codebook {
    /// Beam `q` points at direction sine `−1 + (2q+1)/Q`, the midpoints of Q
    /// equal cells covering [−1, 1]. Midpoints keep the two endfire directions,
    /// which alias onto each other at half-wavelength spacing, out of the grid.
    pub fn new(antennas: usize, size: usize, spacing: f64) -> Self {
        let norm = 1.0 / (antennas.max(1) as f64).sqrt();
        let sines: Vec<f64> = (0..size)
            .map(|q| -1.0 + (2 * q + 1) as f64 / size as f64)
            .collect();
        let vectors = sines
            .iter()
            .map(|&s| {
                steering_vector(antennas, spacing, s)
                    .into_iter()
                    .map(|c| c * norm)
                    .collect()
            })
            .collect();
        Codebook { sines, vectors }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn antennas(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn beam(&self, q: usize) -> &[Complex64] {
        &self.vectors[q]
    }

    pub fn sine(&self, q: usize) -> f64 {
        self.sines[q]
    }

    /// Steering angle of beam `q` in radians.
    pub fn angle(&self, q: usize) -> f64 {
        self.sines[q].asin()
    }
}

pub fn make_codebook(antennas: usize, size: usize, spacing: f64) -> Codebook {
    Codebook::new(antennas, size, spacing)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UavState {
    /// Metres, base station at the origin.
    pub position: [f64; 3],
    /// Metres per second.
    pub velocity: [f64; 3],
    /// Roll, pitch, yaw in radians.
    pub posture: [f64; 3],
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryConfig {
    pub duration: f64,
    pub step: f64,
    /// Horizontal cruise speed, m/s.
    pub speed: f64,
    /// Heading rate limit, rad/s.
    pub max_turn_rate: f64,
    /// Vertical speed limit, m/s.
    pub max_climb_rate: f64,
    pub region_min: [f64; 3],
    pub region_max: [f64; 3],
    /// Starting point; the region centre when absent.
    pub start: Option<[f64; 3]>,
    /// Fixed route, flown cyclically. Random waypoints inside the region when empty.
    pub waypoints: Vec<[f64; 3]>,
    /// A waypoint counts as reached inside this horizontal radius, metres.
    pub waypoint_radius: f64,
    /// Standard deviation of the posture perturbation, radians; clipped at 3σ.
    pub posture_jitter: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            duration: 1000.0,
            step: 0.5,
            speed: 12.0,
            max_turn_rate: 0.6,
            max_climb_rate: 3.0,
            region_min: [40.0, -70.0, 10.0],
            region_max: [140.0, 70.0, 60.0],
            start: None,
            waypoints: Vec::new(),
            waypoint_radius: 5.0,
            posture_jitter: 0.02,
        }
    }
}

impl TrajectoryConfig {
    pub fn steps(&self) -> usize {
        ((self.duration / self.step).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::Config(format!("trajectory: {what}")));
        if !(self.duration > 0.0) || !(self.step > 0.0) {
            return fail("duration and step must be positive");
        }
        if !(self.speed >= 0.0) || !(self.max_turn_rate >= 0.0) || !(self.max_climb_rate >= 0.0) {
            return fail("speed and rate limits must be non-negative");
        }
        if (0..3).any(|i| !(self.region_min[i] <= self.region_max[i])) {
            return fail("region_min must not exceed region_max");
        }
        if self.region_min[2] < 0.0 || self.waypoints.iter().any(|w| w[2] < 0.0) {
            return fail("altitudes must be non-negative");
        }
        if !(self.waypoint_radius > 0.0) || !(self.posture_jitter >= 0.0) {
            return fail("waypoint_radius must be positive and posture_jitter non-negative");
        }
        Ok(())
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a < -PI {
        a += 2.0 * PI;
    }
    a
}

fn bounded_normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    std * z.clamp(-3.0, 3.0)
}

/// Waypoint flight with a heading-rate limit and a climb-rate limit.
///
/// Yaw follows the velocity heading, roll the coordinated-turn bank angle and
/// pitch the flight-path angle, each plus a bounded Gaussian perturbation.
pub fn sample_trajectory<R: Rng>(cfg: &TrajectoryConfig, rng: &mut R) -> Result<Vec<UavState>> {
    cfg.validate()?;
    let centre = [
        0.5 * (cfg.region_min[0] + cfg.region_max[0]),
        0.5 * (cfg.region_min[1] + cfg.region_max[1]),
        0.5 * (cfg.region_min[2] + cfg.region_max[2]),
    ];
    let mut pos = cfg.start.unwrap_or(centre);
    let mut route = 0usize;
    let next_random = |rng: &mut R| -> [f64; 3] {
        let mut w = [0.0; 3];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = if cfg.region_max[i] > cfg.region_min[i] {
                rng.random_range(cfg.region_min[i]..cfg.region_max[i])
            } else {
                cfg.region_min[i]
            };
        }
        w
    };
    let mut target = if cfg.waypoints.is_empty() {
        next_random(rng)
    } else {
        cfg.waypoints[0]
    };
    let mut heading = (target[1] - pos[1]).atan2(target[0] - pos[0]);
    let dt = cfg.step;
    let mut out = Vec::with_capacity(cfg.steps());
    // a waypoint inside the turning circle can be orbited forever; give up
    // after the direct flight time plus one full turn
    let full_turn = 2.0 * PI / cfg.max_turn_rate;
    let budget = |from: [f64; 3], to: [f64; 3]| ((to[0] - from[0]).hypot(to[1] - from[1]) / cfg.speed + full_turn) / dt;
    let mut pursuit = 0.0;
    let mut allowed = budget(pos, target);

    for i in 0..cfg.steps() {
        let (dx, dy) = (target[0] - pos[0], target[1] - pos[1]);
        if (dx * dx + dy * dy).sqrt() < cfg.waypoint_radius || pursuit > allowed {
            target = if cfg.waypoints.is_empty() {
                next_random(rng)
            } else {
                route = (route + 1) % cfg.waypoints.len();
                cfg.waypoints[route]
            };
            pursuit = 0.0;
            allowed = budget(pos, target);
        }
        pursuit += 1.0;
        let desired = (target[1] - pos[1]).atan2(target[0] - pos[0]);
        let max_turn = cfg.max_turn_rate * dt;
        let turn = wrap_angle(desired - heading).clamp(-max_turn, max_turn);
        heading = wrap_angle(heading + turn);
        let turn_rate = turn / dt;

        let vz = ((target[2] - pos[2]) / dt).clamp(-cfg.max_climb_rate, cfg.max_climb_rate);
        let velocity = [cfg.speed * heading.cos(), cfg.speed * heading.sin(), vz];
        let roll = (cfg.speed * turn_rate / GRAVITY).atan() + bounded_normal(rng, cfg.posture_jitter);
        let pitch = vz.atan2(cfg.speed) + bounded_normal(rng, cfg.posture_jitter);
        let yaw = wrap_angle(heading + bounded_normal(rng, cfg.posture_jitter));

        out.push(UavState {
            position: pos,
            velocity,
            posture: [roll, pitch, yaw],
            time: i as f64 * dt,
        });
        pos = [
            pos[0] + velocity[0] * dt,
            pos[1] + velocity[1] * dt,
            (pos[2] + velocity[2] * dt).max(0.0),
        ];
    }
    Ok(out)
}

/// Per-subcarrier channel vectors `h_k`, `k = 0..K`, each of length M.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<Vec<Complex64>>,
    pub state: UavState,
}

impl ChannelRealization {
    pub fn subcarriers(&self) -> usize {
        self.h.len()
    }

    pub fn antennas(&self) -> usize {
        self.h.first().map_or(0, Vec::len)
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().flatten().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Geometric Rician channel: a free-space LoS ray towards the UAV plus
/// `nlos_paths` scattered rays at random direction sines, each delayed and
/// therefore rotated per subcarrier by `exp(−j·2π·τ·k·Δf)`.
pub fn synth_channel<R: Rng>(
    state: &UavState,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<ChannelRealization> {
    cfg.validate()?;
    let distance = norm3(state.position);
    if !(distance > 1e-9) {
        return Err(Error::DegenerateGeometry);
    }
    let wavelength = SPEED_OF_LIGHT / cfg.carrier_hz;
    let path_gain = wavelength / (4.0 * PI * distance);
    let k_lin = 10f64.powf(cfg.rician_k_db / 10.0);
    let los_fraction = if cfg.nlos_paths == 0 || k_lin.is_infinite() {
        1.0
    } else {
        k_lin / (k_lin + 1.0)
    };
    let los_delay = distance / SPEED_OF_LIGHT;

    // (complex gain, delay, direction sine)
    let mut paths = Vec::with_capacity(cfg.nlos_paths + 1);
    let carrier_phase = -2.0 * PI * cfg.carrier_hz * los_delay;
    paths.push((
        Complex64::from_polar(path_gain * los_fraction.sqrt(), carrier_phase % (2.0 * PI)),
        los_delay,
        direction_sine(state.position),
    ));
    if cfg.nlos_paths > 0 && los_fraction < 1.0 {
        let amp = path_gain * ((1.0 - los_fraction) / cfg.nlos_paths as f64).sqrt();
        let excess = Exp::new(1.0).expect("unit rate");
        for _ in 0..cfg.nlos_paths {
            let sine = rng.random_range(-1.0..1.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let extra: f64 = excess.sample(rng);
            paths.push((
                Complex64::from_polar(amp, phase),
                los_delay + cfg.delay_spread * extra,
                sine,
            ));
        }
    }

    let steering: Vec<Vec<Complex64>> = paths
        .iter()
        .map(|&(_, _, s)| steering_vector(cfg.antennas, cfg.antenna_spacing, s))
        .collect();
    let h = (0..cfg.subcarriers)
        .map(|k| {
            let mut hk = vec![Complex64::new(0.0, 0.0); cfg.antennas];
            for ((gain, delay, _), a) in paths.iter().zip(&steering) {
                let rot = Complex64::from_polar(
                    1.0,
                    -2.0 * PI * ((delay * k as f64 * cfg.subcarrier_spacing_hz) % 1.0),
                );
                let c = gain * rot;
                for (x, am) in hk.iter_mut().zip(a) {
                    *x += c * am;
                }
            }
            hk
        })
        .collect();
    Ok(ChannelRealization { h, state: *state })
}

/// `(1/K)·Σ_k (P/σ²)·|h_kᴴ f|²`
pub fn avg_snr(h: &ChannelRealization, f: &[Complex64], tx_power: f64, noise_power: f64) -> Result<f64> {
    if h.antennas() != f.len() || h.h.is_empty() {
        return Err(Error::dim("avg_snr", &[h.subcarriers(), h.antennas()], &[f.len()]));
    }
    let snr = tx_power / noise_power;
    let total: f64 = h
        .h
        .iter()
        .map(|hk| {
            let inner: Complex64 = hk.iter().zip(f).map(|(a, b)| a.conj() * b).sum();
            inner.norm_sqr()
        })
        .sum();
    Ok(snr * total / h.subcarriers() as f64)
}

/// Index of the codebook beam with the highest average SNR. Ties resolve to
/// the lowest index.
pub fn oracle_beam(h: &ChannelRealization, cb: &Codebook, tx_power: f64, noise_power: f64) -> Result<usize> {
    let mut best = (0usize, f64::NEG_INFINITY);
    for q in 0..cb.len() {
        let snr = avg_snr(h, cb.beam(q), tx_power, noise_power)?;
        if snr > best.1 {
            best = (q, snr);
        }
    }
    Ok(best.0)
}
