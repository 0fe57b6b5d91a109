//! Langevin velocity-Verlet integration with clamped and loaded ends.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Frame, FrameLayout};
use super::geometry::{build_geometry, LatticeShape, MtModel};
use super::potential::{evaluate, Strengths};
use super::units;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{seeded, SplitMix64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub shape: LatticeShape,
    pub strengths: Strengths,
    pub ramp_steps: usize,
    pub hold_steps: usize,
    /// ns.
    pub dt: f64,
    pub save_every: usize,
    /// Peak load per forced particle, pN.
    pub max_force: f64,
    /// kT in zJ. `None` picks the small default tied to `max_force`.
    pub temperature: Option<f64>,
    /// Friction rate, 1/ns. `None` means one over `100·dt`.
    pub damping: Option<f64>,
    pub clamp_rings: usize,
    pub forced_rings: usize,
    /// Plain velocity Verlet: no friction, noise or end load.
    pub nve: bool,
    /// Abort once any coordinate exceeds this magnitude (nm).
    pub guard: f64,
    pub layout: FrameLayout,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SimConfig {
    pub fn desk() -> Self {
        Self {
            shape: LatticeShape {
                n_rings: 12,
                k: 13,
                offset: 3,
            },
            strengths: Strengths::default(),
            ramp_steps: 2000,
            hold_steps: 4000,
            dt: units::DT,
            save_every: 500,
            max_force: units::MAX_FORCE,
            temperature: None,
            damping: None,
            clamp_rings: 2,
            forced_rings: 2,
            nve: false,
            guard: 1e4,
            layout: FrameLayout::Ten,
        }
    }

    pub fn full() -> Self {
        Self {
            shape: LatticeShape::default(),
            ramp_steps: 128_000,
            hold_steps: 256_000,
            save_every: 32_000,
            ..Self::desk()
        }
    }

    pub fn total_steps(&self) -> usize {
        self.ramp_steps + self.hold_steps
    }

    pub fn gamma(&self) -> f64 {
        self.damping.unwrap_or(1.0 / (100.0 * self.dt))
    }

    /// Default kT makes the per-step random force about 1% of `max_force`:
    /// `sqrt(2 m γ kT / dt) = 0.01 F`.
    pub fn kt(&self) -> f64 {
        self.temperature.unwrap_or_else(|| {
            let f = 0.01 * self.max_force;
            f * f * self.dt / (2.0 * units::MONOMER_MASS * self.gamma())
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if let Err((p, v)) = self.strengths.validate() {
            return bad(format!(
                "strengths.{} must be positive and finite, got {v}",
                p.name()
            ));
        }
        if self.save_every == 0 || self.total_steps() == 0 {
            return bad("save_every and total steps must be positive".into());
        }
        if !self.total_steps().is_multiple_of(self.save_every) {
            return bad(format!(
                "save_every {} does not divide total steps {}",
                self.save_every,
                self.total_steps()
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.max_force >= 0.0 && self.max_force.is_finite()) {
            return bad(format!(
                "max_force must be non-negative, got {}",
                self.max_force
            ));
        }
        if self.kt() < 0.0 || self.gamma() < 0.0 {
            return bad("temperature and damping must be non-negative".into());
        }
        if self.clamp_rings + self.forced_rings > self.shape.n_rings {
            return bad("clamped and forced rings overlap".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub positions: Vec<[f64; 3]>,
    pub velocities: Vec<[f64; 3]>,
    pub step: usize,
}

pub struct Simulator {
    pub model: MtModel,
    pub config: SimConfig,
    pub state: SimState,
    forces: Vec<[f64; 3]>,
    clamped: Vec<bool>,
    forced: Vec<usize>,
    rng: SplitMix64,
}

impl Simulator {
    pub fn new(config: SimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let model = build_geometry(config.shape)?;
        let state = SimState {
            positions: model.positions.clone(),
            velocities: vec![[0.0; 3]; model.n()],
            step: 0,
        };
        Ok(Self::with_state(model, config, state, seeded(seed)))
    }

    pub fn with_state(model: MtModel, config: SimConfig, state: SimState, rng: SplitMix64) -> Self {
        let mut clamped = vec![false; model.n()];
        for i in model.first_rings(config.clamp_rings) {
            clamped[i] = true;
        }
        let forced = model.last_rings(config.forced_rings);
        let forces = evaluate(&model, &config.strengths, &state.positions, false).forces;
        Self {
            model,
            config,
            state,
            forces,
            clamped,
            forced,
            rng,
        }
    }

    /// Load magnitude per forced particle at a given step.
    pub fn load(&self, step: usize) -> f64 {
        if self.config.nve {
            return 0.0;
        }
        let frac = if self.config.ramp_steps == 0 {
            1.0
        } else {
            (step as f64 / self.config.ramp_steps as f64).min(1.0)
        };
        frac * self.config.max_force
    }

    fn total_force(&self, step: usize) -> Vec<[f64; 3]> {
        let mut f = self.forces.clone();
        let load = self.load(step);
        if load != 0.0 {
            for &i in &self.forced {
                f[i][1] -= load;
            }
        }
        f
    }

    /// One BBK step: half kick with friction and noise, drift, half kick
    /// with the same noise and implicit friction.
    pub fn step(&mut self) -> Result<()> {
        let cfg = &self.config;
        let dt = cfg.dt;
        let m = self.model.mass;
        let (gamma, kt) = if cfg.nve {
            (0.0, 0.0)
        } else {
            (cfg.gamma(), cfg.kt())
        };
        let sigma = (2.0 * m * gamma * kt / dt).sqrt();
        let n = self.model.n();
        let f0 = self.total_force(self.state.step);
        let mut noise = vec![[0.0; 3]; n];
        if sigma > 0.0 {
            for (i, r) in noise.iter_mut().enumerate() {
                if !self.clamped[i] {
                    for c in r.iter_mut() {
                        let z: f64 = self.rng.sample(StandardNormal);
                        *c = sigma * z;
                    }
                }
            }
        }
        let half = dt / (2.0 * m);
        for i in 0..n {
            if self.clamped[i] {
                continue;
            }
            let v = &mut self.state.velocities[i];
            let x = &mut self.state.positions[i];
            for c in 0..3 {
                v[c] += half * (f0[i][c] - m * gamma * v[c] + noise[i][c]);
                x[c] += dt * v[c];
            }
        }
        self.state.step += 1;
        self.forces = evaluate(
            &self.model,
            &self.config.strengths,
            &self.state.positions,
            false,
        )
        .forces;
        let f1 = self.total_force(self.state.step);
        let denom = 1.0 + 0.5 * gamma * dt;
        for i in 0..n {
            if self.clamped[i] {
                continue;
            }
            let v = &mut self.state.velocities[i];
            for c in 0..3 {
                v[c] = (v[c] + half * (f1[i][c] + noise[i][c])) / denom;
            }
        }
        self.check()
    }

    fn check(&self) -> Result<()> {
        for (i, p) in self.state.positions.iter().enumerate() {
            if p.iter()
                .any(|c| !c.is_finite() || c.abs() > self.config.guard)
            {
                return Err(Error::Diverged {
                    step: self.state.step,
                    detail: format!("particle {i} at {p:?}"),
                });
            }
        }
        Ok(())
    }

    pub fn kinetic_energy(&self) -> f64 {
        let m = self.model.mass;
        self.state
            .velocities
            .iter()
            .map(|v| 0.5 * m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
            .sum()
    }

    pub fn potential_energy(&self) -> f64 {
        super::potential::potential_energy(
            &self.model,
            &self.config.strengths,
            &self.state.positions,
        )
    }

    /// Snapshot of the current state as a training frame.
    pub fn frame(&self, run: usize) -> Frame {
        let n = self.model.n();
        let ev = evaluate(
            &self.model,
            &self.config.strengths,
            &self.state.positions,
            true,
        );
        let coeffs = self.config.layout.coefficients(&self.config.strengths);
        let f = 6 + coeffs.len();
        let mut x = Matrix::zeros(n, f);
        for i in 0..n {
            let row = x.row_mut(i);
            row[..3].copy_from_slice(&self.state.positions[i]);
            row[3..6].copy_from_slice(&self.state.velocities[i]);
            row[6..].copy_from_slice(&coeffs);
        }
        Frame {
            run,
            step: self.state.step,
            x,
            y: Matrix::column(&ev.per_particle.expect("split requested")),
        }
    }

    /// Mean y-displacement of the forced particles from rest.
    pub fn tip_deflection(&self) -> f64 {
        let rest = &self.model.positions;
        let sum: f64 = self
            .forced
            .iter()
            .map(|&i| self.state.positions[i][1] - rest[i][1])
            .sum();
        sum / self.forced.len().max(1) as f64
    }
}

/// Run the full ramp+hold protocol, saving a frame every `save_every` steps.
pub fn run_simulation(config: &SimConfig, seed: u64, run: usize) -> Result<Vec<Frame>> {
    let mut sim = Simulator::new(config.clone(), seed)?;
    let mut frames = Vec::with_capacity(config.total_steps() / config.save_every);
    for _ in 0..config.total_steps() {
        sim.step()?;
        if sim.state.step % config.save_every == 0 {
            frames.push(sim.frame(run));
        }
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn tiny(n_rings: usize) -> SimConfig {
        SimConfig {
            shape: LatticeShape {
                n_rings,
                k: 13,
                offset: 3,
            },
            ramp_steps: 200,
            hold_steps: 400,
            save_every: 100,
            ..SimConfig::desk()
        }
    }

    #[test]
    fn default_temperature_is_small() {
        let c = SimConfig::desk();
        let sigma = (2.0 * units::MONOMER_MASS * c.gamma() * c.kt() / c.dt).sqrt();
        assert!((sigma / c.max_force - 0.01).abs() < 1e-12);
        assert!((c.gamma() - 50.0).abs() < 1e-9);
        assert!((units::MAX_FORCE - 0.003).abs() < 1e-18);
    }

    #[test]
    fn rest_is_stationary_without_drive() {
        let cfg = SimConfig {
            temperature: Some(0.0),
            max_force: 0.0,
            ..tiny(5)
        };
        let mut sim = Simulator::new(cfg, 1).unwrap();
        let start = sim.state.positions.clone();
        for _ in 0..50 {
            sim.step().unwrap();
        }
        let moved = sim
            .state
            .positions
            .iter()
            .zip(&start)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
            .fold(0.0f64, f64::max);
        assert!(moved < 1e-9, "{moved}");
    }

    #[test]
    fn nve_conserves_energy() {
        let cfg = SimConfig {
            nve: true,
            clamp_rings: 0,
            forced_rings: 0,
            dt: 2e-5,
            ..tiny(4)
        };
        let model = build_geometry(cfg.shape).unwrap();
        let mut rng = seeded(5);
        let positions: Vec<[f64; 3]> = model
            .positions
            .iter()
            .map(|p| std::array::from_fn(|c| p[c] + rng.random_range(-0.1..0.1)))
            .collect();
        let state = SimState {
            velocities: vec![[0.0; 3]; positions.len()],
            positions,
            step: 0,
        };
        let mut sim = Simulator::with_state(model, cfg, state, seeded(0));
        let e0 = sim.kinetic_energy() + sim.potential_energy();
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            sim.step().unwrap();
            let e = sim.kinetic_energy() + sim.potential_energy();
            worst = worst.max((e - e0).abs() / e0);
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn clamps_hold_and_frames_are_saved() {
        let cfg = tiny(6);
        let frames = run_simulation(&cfg, 2, 7).unwrap();
        assert_eq!(frames.len(), 6);
        let model = build_geometry(cfg.shape).unwrap();
        for fr in &frames {
            assert_eq!(fr.run, 7);
            assert_eq!(fr.x.shape(), (78, 10));
            for i in 0..26 {
                let row = fr.x.row(i);
                assert_eq!(&row[..3], &model.positions[i]);
                assert_eq!(&row[3..6], &[0.0; 3]);
            }
        }
        assert_eq!(frames.last().unwrap().step, 600);
    }

    #[test]
    fn same_seed_same_frames() {
        let cfg = tiny(5);
        let a = run_simulation(&cfg, 11, 0).unwrap();
        let b = run_simulation(&cfg, 11, 0).unwrap();
        let c = run_simulation(&cfg, 12, 0).unwrap();
        assert!(a
            .iter()
            .zip(&b)
            .all(|(p, q)| p.x.as_slice() == q.x.as_slice() && p.y.as_slice() == q.y.as_slice()));
        assert!(a
            .iter()
            .zip(&c)
            .any(|(p, q)| p.x.as_slice() != q.x.as_slice()));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = SimConfig {
            guard: 1e-3,
            ..tiny(5)
        };
        let err = run_simulation(&cfg, 0, 0).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny(5);
        cfg.strengths.long_angle = -1.0;
        let msg = Simulator::new(cfg, 0).err().unwrap().to_string();
        assert!(msg.contains("long_angle"), "{msg}");
        let cfg = SimConfig {
            save_every: 7,
            ..tiny(5)
        };
        assert!(cfg.validate().is_err());
    }
}
