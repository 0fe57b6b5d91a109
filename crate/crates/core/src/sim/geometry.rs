//! Resting geometry of the helical microtubule lattice and its interactions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::units;
use crate::error::{Error, Result};

/// Which strength parameter scales an interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrengthParam {
    LatAssoc,
    LongAssoc,
    LatAngle,
    LongAngle,
    QuadAngles,
}

impl StrengthParam {
    pub const ALL: [StrengthParam; 5] = [
        StrengthParam::LatAssoc,
        StrengthParam::LongAssoc,
        StrengthParam::LatAngle,
        StrengthParam::LongAngle,
        StrengthParam::QuadAngles,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrengthParam::LatAssoc => "lat_assoc",
            StrengthParam::LongAssoc => "long_assoc",
            StrengthParam::LatAngle => "lat_angle",
            StrengthParam::LongAngle => "long_angle",
            StrengthParam::QuadAngles => "quad_angles",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BondKind {
    LatLattice,
    LatSeam,
    Longitudinal,
}

impl BondKind {
    pub fn strength(self) -> StrengthParam {
        match self {
            BondKind::LatLattice | BondKind::LatSeam => StrengthParam::LatAssoc,
            BondKind::Longitudinal => StrengthParam::LongAssoc,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleKind {
    LatAngle,
    LongAngle,
    QuadAcute,
    QuadObtuse,
}

impl AngleKind {
    pub fn strength(self) -> StrengthParam {
        match self {
            AngleKind::LatAngle => StrengthParam::LatAngle,
            AngleKind::LongAngle => StrengthParam::LongAngle,
            AngleKind::QuadAcute | AngleKind::QuadObtuse => StrengthParam::QuadAngles,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    /// nm.
    pub rest: f64,
    pub kind: BondKind,
}

/// Angle at vertex `j` between arms to `i` and `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Angle {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    /// Radians.
    pub rest: f64,
    pub kind: AngleKind,
}

impl Angle {
    pub fn rest_degrees(&self) -> f64 {
        self.rest.to_degrees()
    }
}

/// Lattice parameters. Monomer spacing along a protofilament and the lateral
/// bond length are fixed; the radius follows from them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeShape {
    pub n_rings: usize,
    pub k: usize,
    pub offset: usize,
}

impl Default for LatticeShape {
    fn default() -> Self {
        Self {
            n_rings: 48,
            k: 13,
            offset: 3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MtModel {
    pub shape: LatticeShape,
    /// Resting positions, nm.
    pub positions: Vec<[f64; 3]>,
    /// Per-particle mass, ag.
    pub mass: f64,
    pub bonds: Vec<Bond>,
    pub angles: Vec<Angle>,
}

impl MtModel {
    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn id(&self, ring: usize, col: usize) -> usize {
        ring * self.shape.k + col
    }

    /// Particles of the first `rings` rings.
    pub fn first_rings(&self, rings: usize) -> Vec<usize> {
        (0..rings.min(self.shape.n_rings) * self.shape.k).collect()
    }

    /// Particles of the last `rings` rings.
    pub fn last_rings(&self, rings: usize) -> Vec<usize> {
        let start = self.shape.n_rings.saturating_sub(rings) * self.shape.k;
        (start..self.n()).collect()
    }
}

/// Lateral neighbours sit `h = offset·5/k` nm apart along the axis so that
/// after `k` columns the helix has risen by `offset` monomers.
pub fn build_geometry(shape: LatticeShape) -> Result<MtModel> {
    let LatticeShape { n_rings, k, offset } = shape;
    if n_rings < 2 || k < 3 || offset >= n_rings {
        return Err(Error::InvalidArgument(format!(
            "lattice needs >= 2 rings, >= 3 protofilaments and offset < rings, got {shape:?}"
        )));
    }
    let rise = offset as f64 * units::LONG_REST / k as f64;
    let chord_sq = units::LAT_REST * units::LAT_REST - rise * rise;
    if chord_sq <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "offset {offset} too steep for {k} protofilaments"
        )));
    }
    let radius = chord_sq.sqrt() / (2.0 * (PI / k as f64).sin());
    let theta = 2.0 * PI / k as f64;
    let mut positions = Vec::with_capacity(n_rings * k);
    for i in 0..n_rings {
        for j in 0..k {
            let a = j as f64 * theta;
            positions.push([
                radius * a.cos(),
                radius * a.sin(),
                units::LONG_REST * i as f64 + rise * j as f64,
            ]);
        }
    }

    let id = |i: usize, j: usize| i * k + j;
    let mut bonds = Vec::new();
    let mut bond = |i: usize, j: usize, kind: BondKind| {
        bonds.push(Bond {
            i,
            j,
            rest: 0.0,
            kind,
        })
    };
    for i in 0..n_rings {
        for j in 0..k {
            if j + 1 < k {
                bond(id(i, j), id(i, j + 1), BondKind::LatLattice);
            }
            if i + 1 < n_rings {
                bond(id(i, j), id(i + 1, j), BondKind::Longitudinal);
            }
        }
        if i + offset < n_rings {
            bond(id(i, k - 1), id(i + offset, 0), BondKind::LatSeam);
        }
    }

    let mut corners: Vec<(usize, usize, usize)> = Vec::new();
    let mut angles = Vec::new();
    for i in 0..n_rings {
        for j in 1..k - 1 {
            angles.push((id(i, j - 1), id(i, j), id(i, j + 1), AngleKind::LatAngle));
        }
    }
    for i in 1..n_rings - 1 {
        for j in 0..k {
            angles.push((id(i - 1, j), id(i, j), id(i + 1, j), AngleKind::LongAngle));
        }
    }
    // Cells as (a, b, c, d) in cyclic order: a-b lateral, b-c longitudinal,
    // c-d lateral, d-a longitudinal.
    let mut cells = Vec::new();
    for i in 0..n_rings - 1 {
        for j in 0..k - 1 {
            cells.push((id(i, j), id(i, j + 1), id(i + 1, j + 1), id(i + 1, j)));
        }
        if i + offset + 1 < n_rings {
            cells.push((
                id(i, k - 1),
                id(i + offset, 0),
                id(i + offset + 1, 0),
                id(i + 1, k - 1),
            ));
        }
    }
    for (a, b, c, d) in cells {
        corners.extend([(d, a, b), (a, b, c), (b, c, d), (c, d, a)]);
    }

    let mut model = MtModel {
        shape,
        positions,
        mass: units::MONOMER_MASS,
        bonds,
        angles: Vec::new(),
    };
    for b in &mut model.bonds {
        b.rest = distance(&model.positions[b.i], &model.positions[b.j]);
    }
    for (i, j, kk, kind) in angles {
        let rest = angle_at(
            &model.positions[i],
            &model.positions[j],
            &model.positions[kk],
        );
        model.angles.push(Angle {
            i,
            j,
            k: kk,
            rest,
            kind,
        });
    }
    for (i, j, kk) in corners {
        let rest = angle_at(
            &model.positions[i],
            &model.positions[j],
            &model.positions[kk],
        );
        let kind = if rest < PI / 2.0 {
            AngleKind::QuadAcute
        } else {
            AngleKind::QuadObtuse
        };
        model.angles.push(Angle {
            i,
            j,
            k: kk,
            rest,
            kind,
        });
    }
    check_rest_values(&model)?;
    Ok(model)
}

fn check_rest_values(model: &MtModel) -> Result<()> {
    const TOL: f64 = 1e-2;
    let fail = |what: String| {
        Err(Error::InvalidArgument(format!(
            "inconsistent geometry: {what}"
        )))
    };
    for b in &model.bonds {
        let want = match b.kind {
            BondKind::Longitudinal => units::LONG_REST,
            _ => units::LAT_REST,
        };
        if (b.rest - want).abs() > TOL {
            return fail(format!("bond ({}, {}) rests at {} nm", b.i, b.j, b.rest));
        }
    }
    for a in &model.angles {
        if !(a.rest > 0.0 && a.rest <= PI) {
            return fail(format!("angle at {} rests at {} rad", a.j, a.rest));
        }
    }
    if model.shape.k == 13 && model.shape.offset == 3 {
        for a in &model.angles {
            let want = match a.kind {
                AngleKind::LatAngle => units::LAT_ANGLE_DEG,
                AngleKind::LongAngle => 180.0,
                AngleKind::QuadAcute => units::QUAD_ACUTE_DEG,
                AngleKind::QuadObtuse => units::QUAD_OBTUSE_DEG,
            };
            if (a.rest_degrees() - want).abs() > TOL {
                return fail(format!(
                    "{:?} at {} rests at {} deg",
                    a.kind,
                    a.j,
                    a.rest_degrees()
                ));
            }
        }
    }
    Ok(())
}

pub(crate) fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Angle at `j` in `[0, π]`, via `atan2` so it stays accurate near 0 and π.
pub(crate) fn angle_at(i: &[f64; 3], j: &[f64; 3], k: &[f64; 3]) -> f64 {
    let a = [i[0] - j[0], i[1] - j[1], i[2] - j[2]];
    let b = [k[0] - j[0], k[1] - j[1], k[2] - j[2]];
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let cn = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    cn.atan2(a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lattice_counts() {
        let m = build_geometry(LatticeShape::default()).unwrap();
        assert_eq!(m.n(), 624);
        let count = |kind| m.bonds.iter().filter(|b| b.kind == kind).count();
        assert_eq!(count(BondKind::Longitudinal), 13 * 47);
        assert_eq!(count(BondKind::LatLattice), 12 * 48);
        assert_eq!(count(BondKind::LatSeam), 48 - 3);
        let acount = |kind| m.angles.iter().filter(|a| a.kind == kind).count();
        assert_eq!(acount(AngleKind::LatAngle), 11 * 48);
        assert_eq!(acount(AngleKind::LongAngle), 13 * 46);
        // 12·47 lattice cells plus 44 seam cells, two acute corners each.
        assert_eq!(acount(AngleKind::QuadAcute), 2 * (12 * 47 + 44));
        assert_eq!(acount(AngleKind::QuadObtuse), 2 * (12 * 47 + 44));
    }

    #[test]
    fn rest_values_match_reference_table() {
        let m = build_geometry(LatticeShape::default()).unwrap();
        for b in &m.bonds {
            let want = if b.kind == BondKind::Longitudinal {
                5.0
            } else {
                5.15639
            };
            assert!((b.rest - want).abs() < 1e-3, "{b:?}");
        }
        for a in &m.angles {
            let want = match a.kind {
                AngleKind::LatAngle => 153.023,
                AngleKind::LongAngle => 180.0,
                AngleKind::QuadAcute => 77.0694,
                AngleKind::QuadObtuse => 102.931,
            };
            assert!(
                (a.rest_degrees() - want).abs() < 1e-3,
                "{a:?} {}",
                a.rest_degrees()
            );
        }
    }

    #[test]
    fn radius_and_ends() {
        let m = build_geometry(LatticeShape {
            n_rings: 12,
            k: 13,
            offset: 3,
        })
        .unwrap();
        let r = (m.positions[0][0].powi(2) + m.positions[0][1].powi(2)).sqrt();
        assert!((r - 10.5).abs() < 1e-3);
        assert_eq!(m.first_rings(2), (0..26).collect::<Vec<_>>());
        assert_eq!(m.last_rings(2), (130..156).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(build_geometry(LatticeShape {
            n_rings: 3,
            k: 13,
            offset: 3
        })
        .is_err());
        assert!(build_geometry(LatticeShape {
            n_rings: 5,
            k: 2,
            offset: 0
        })
        .is_err());
    }

    #[test]
    fn angle_is_accurate_near_straight() {
        let phi = angle_at(&[-1.0, 0.0, 0.0], &[0.0; 3], &[1.0, 1e-9, 0.0]);
        assert!((PI - phi - 1e-9).abs() < 1e-15);
    }
}
