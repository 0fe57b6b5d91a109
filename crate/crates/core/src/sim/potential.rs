//! Harmonic bond and angle energies with analytic forces.

use serde::{Deserialize, Serialize};

use super::geometry::{Angle, Bond, MtModel, StrengthParam};
use super::units;

/// Dimensionless interaction strengths; 1.0 is the reference lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Strengths {
    pub lat_assoc: f64,
    pub long_assoc: f64,
    pub lat_angle: f64,
    pub long_angle: f64,
    pub quad_angles: f64,
}

impl Default for Strengths {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl Strengths {
    pub fn uniform(s: f64) -> Self {
        Self {
            lat_assoc: s,
            long_assoc: s,
            lat_angle: s,
            long_angle: s,
            quad_angles: s,
        }
    }

    pub fn get(&self, p: StrengthParam) -> f64 {
        match p {
            StrengthParam::LatAssoc => self.lat_assoc,
            StrengthParam::LongAssoc => self.long_assoc,
            StrengthParam::LatAngle => self.lat_angle,
            StrengthParam::LongAngle => self.long_angle,
            StrengthParam::QuadAngles => self.quad_angles,
        }
    }

    pub fn set(&mut self, p: StrengthParam, v: f64) {
        match p {
            StrengthParam::LatAssoc => self.lat_assoc = v,
            StrengthParam::LongAssoc => self.long_assoc = v,
            StrengthParam::LatAngle => self.lat_angle = v,
            StrengthParam::LongAngle => self.long_angle = v,
            StrengthParam::QuadAngles => self.quad_angles = v,
        }
    }

    pub fn validate(&self) -> Result<(), (StrengthParam, f64)> {
        for p in StrengthParam::ALL {
            let v = self.get(p);
            if !(v.is_finite() && v > 0.0) {
                return Err((p, v));
            }
        }
        Ok(())
    }

    pub fn bond_k(&self, b: &Bond) -> f64 {
        units::BOND_K * self.get(b.kind.strength())
    }

    pub fn angle_k(&self, a: &Angle) -> f64 {
        units::ANGLE_K * self.get(a.kind.strength())
    }
}

/// Total energy (zJ), forces (pN) and optionally each particle's share.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub energy: f64,
    pub forces: Vec<[f64; 3]>,
    pub per_particle: Option<Vec<f64>>,
}

pub fn bond_energy(k: f64, rest: f64, xi: &[f64; 3], xj: &[f64; 3]) -> f64 {
    let d = super::geometry::distance(xi, xj) - rest;
    k * d * d
}

/// Energy and the force on `i` (the force on `j` is its negation).
pub fn bond_term(k: f64, rest: f64, xi: &[f64; 3], xj: &[f64; 3]) -> (f64, [f64; 3]) {
    let r = sub(xi, xj);
    let len = norm(&r);
    let d = len - rest;
    if len == 0.0 {
        return (k * d * d, [0.0; 3]);
    }
    let c = -2.0 * k * d / len;
    (k * d * d, [c * r[0], c * r[1], c * r[2]])
}

pub fn angle_energy(k: f64, rest: f64, xi: &[f64; 3], xj: &[f64; 3], xk: &[f64; 3]) -> f64 {
    let d = super::geometry::angle_at(xi, xj, xk) - rest;
    k * d * d
}

/// Energy and forces on (i, j, k) for an angle with vertex `j`.
///
/// `dφ/dx_i = (cosφ·â − b̂) / (|a| sinφ)`, singular at φ ∈ {0, π}. When the rest
/// angle is π the prefactor `(φ − φ0)/sinφ` has the finite limit −1, handled
/// by a series; any other degenerate configuration gets zero force.
pub fn angle_term(
    k: f64,
    rest: f64,
    xi: &[f64; 3],
    xj: &[f64; 3],
    xk: &[f64; 3],
) -> (f64, [[f64; 3]; 3]) {
    let a = sub(xi, xj);
    let b = sub(xk, xj);
    let (la, lb) = (norm(&a), norm(&b));
    let phi = super::geometry::angle_at(xi, xj, xk);
    let d = phi - rest;
    let energy = k * d * d;
    if la == 0.0 || lb == 0.0 {
        return (energy, [[0.0; 3]; 3]);
    }
    let sin = phi.sin();
    // coef = dE/dφ / sinφ
    let coef = if sin > 1e-6 {
        2.0 * k * d / sin
    } else if (rest - std::f64::consts::PI).abs() < 1e-12 && phi > 1.0 {
        // sin φ = sin δ with δ = π − φ, and d = −δ.
        let delta = std::f64::consts::PI - phi;
        -2.0 * k * (1.0 + delta * delta / 6.0)
    } else {
        return (energy, [[0.0; 3]; 3]);
    };
    let cos = phi.cos();
    let ah = scale(&a, 1.0 / la);
    let bh = scale(&b, 1.0 / lb);
    let mut fi = [0.0; 3];
    let mut fk = [0.0; 3];
    for c in 0..3 {
        fi[c] = -coef * (cos * ah[c] - bh[c]) / la;
        fk[c] = -coef * (cos * bh[c] - ah[c]) / lb;
    }
    let fj = [-fi[0] - fk[0], -fi[1] - fk[1], -fi[2] - fk[2]];
    (energy, [fi, fj, fk])
}

pub fn evaluate(
    model: &MtModel,
    strengths: &Strengths,
    pos: &[[f64; 3]],
    split: bool,
) -> Evaluation {
    let n = pos.len();
    let mut forces = vec![[0.0; 3]; n];
    let mut per = split.then(|| vec![0.0; n]);
    let mut energy = 0.0;
    for b in &model.bonds {
        let (e, f) = bond_term(strengths.bond_k(b), b.rest, &pos[b.i], &pos[b.j]);
        energy += e;
        add(&mut forces[b.i], &f, 1.0);
        add(&mut forces[b.j], &f, -1.0);
        if let Some(p) = per.as_mut() {
            p[b.i] += 0.5 * e;
            p[b.j] += 0.5 * e;
        }
    }
    for a in &model.angles {
        let (e, f) = angle_term(
            strengths.angle_k(a),
            a.rest,
            &pos[a.i],
            &pos[a.j],
            &pos[a.k],
        );
        energy += e;
        add(&mut forces[a.i], &f[0], 1.0);
        add(&mut forces[a.j], &f[1], 1.0);
        add(&mut forces[a.k], &f[2], 1.0);
        if let Some(p) = per.as_mut() {
            let third = e / 3.0;
            p[a.i] += third;
            p[a.j] += third;
            p[a.k] += third;
        }
    }
    Evaluation {
        energy,
        forces,
        per_particle: per,
    }
}

pub fn potential_energy(model: &MtModel, strengths: &Strengths, pos: &[[f64; 3]]) -> f64 {
    let mut e = 0.0;
    for b in &model.bonds {
        e += bond_energy(strengths.bond_k(b), b.rest, &pos[b.i], &pos[b.j]);
    }
    for a in &model.angles {
        e += angle_energy(
            strengths.angle_k(a),
            a.rest,
            &pos[a.i],
            &pos[a.j],
            &pos[a.k],
        );
    }
    e
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: &[f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn scale(a: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(acc: &mut [f64; 3], v: &[f64; 3], s: f64) {
    acc[0] += s * v[0];
    acc[1] += s * v[1];
    acc[2] += s * v[2];
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::rng::seeded;
    use crate::sim::geometry::{build_geometry, LatticeShape};

    fn small() -> MtModel {
        build_geometry(LatticeShape {
            n_rings: 5,
            k: 13,
            offset: 3,
        })
        .unwrap()
    }

    #[test]
    fn single_bond_formula() {
        assert_eq!(bond_energy(1.0, 2.0, &[0.0; 3], &[3.0, 0.0, 0.0]), 1.0);
        let (e, f) = bond_term(1.0, 3.0, &[0.0; 3], &[3.0, 0.0, 0.0]);
        assert_eq!((e, f), (0.0, [0.0; 3]));
    }

    #[test]
    fn rest_geometry_is_force_free() {
        let m = small();
        let ev = evaluate(&m, &Strengths::uniform(1.3), &m.positions, true);
        assert!(ev.energy.abs() < 1e-8, "{}", ev.energy);
        let fmax = ev
            .forces
            .iter()
            .flatten()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(fmax < 1e-6, "{fmax}");
    }

    fn fd_check(m: &MtModel, s: &Strengths, pos: &[[f64; 3]]) -> f64 {
        let ev = evaluate(m, s, pos, false);
        let h = 1e-5;
        let mut worst = 0.0f64;
        let mut p = pos.to_vec();
        for i in 0..pos.len() {
            for c in 0..3 {
                let x0 = p[i][c];
                p[i][c] = x0 + h;
                let ep = potential_energy(m, s, &p);
                p[i][c] = x0 - h;
                let em = potential_energy(m, s, &p);
                p[i][c] = x0;
                let fd = -(ep - em) / (2.0 * h);
                let scale = fd.abs().max(ev.forces[i][c].abs()).max(1e-3);
                worst = worst.max((fd - ev.forces[i][c]).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn forces_match_finite_differences() {
        let m = small();
        let mut rng = seeded(3);
        let s = Strengths {
            lat_assoc: 0.3,
            long_assoc: 1.6,
            lat_angle: 1.0,
            long_angle: 1.9,
            quad_angles: 0.6,
        };
        for _ in 0..3 {
            let pos: Vec<[f64; 3]> = m
                .positions
                .iter()
                .map(|p| std::array::from_fn(|c| p[c] + rng.random_range(-0.3..0.3)))
                .collect();
            let err = fd_check(&m, &s, &pos);
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn straight_angle_limit_is_continuous() {
        let k = 2.0;
        let rest = std::f64::consts::PI;
        let xi = [-1.0, 0.0, 0.0];
        let xj = [0.0; 3];
        let bent = |eps: f64| angle_term(k, rest, &xi, &xj, &[1.0, eps, 0.0]).1;
        let a = bent(1e-8);
        let b = bent(1e-4);
        for (u, v) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((u - v * 1e-4).abs() < 1e-9, "{u} {v}");
        }
        let flat = angle_term(k, rest, &xi, &xj, &[1.0, 0.0, 0.0]);
        assert_eq!(flat.0, 0.0);
        assert!(flat.1.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn degenerate_angle_has_zero_force() {
        let (e, f) = angle_term(1.0, 1.0, &[0.0; 3], &[0.0; 3], &[1.0, 0.0, 0.0]);
        assert!(e.is_finite());
        assert!(f.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn attribution_sums_to_total() {
        let m = small();
        let mut rng = seeded(9);
        let pos: Vec<[f64; 3]> = m
            .positions
            .iter()
            .map(|p| std::array::from_fn(|c| p[c] + rng.random_range(-0.2..0.2)))
            .collect();
        let ev = evaluate(&m, &Strengths::default(), &pos, true);
        let sum: f64 = ev.per_particle.unwrap().iter().sum();
        assert!((sum - ev.energy).abs() < 1e-9 * ev.energy.max(1.0));
    }
}
