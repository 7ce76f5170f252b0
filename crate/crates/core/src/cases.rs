//! Boundary cases: support families and right-edge point loads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fea::{LoadVector, Mesh, SupportSet};
use crate::simp::Problem;

pub const DEFAULT_MAGNITUDE: f64 = 5000.0;

/// Support configurations. Loads always act on the right edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::A,
        Family::B,
        Family::C,
        Family::D,
        Family::E,
        Family::F,
        Family::G,
        Family::H,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown family id {id}")))
    }

    pub fn letter(self) -> char {
        (b'a' + self.id()) as char
    }

    pub fn description(self) -> &'static str {
        match self {
            Family::A => "left edge clamped",
            Family::B => "lower half of left edge clamped",
            Family::C => "upper half of left edge clamped",
            Family::D => "both left corners pinned",
            Family::E => "left edge on x-rollers, bottom-left corner pinned",
            Family::F => "bottom edge clamped",
            Family::G => "top edge clamped",
            Family::H => "left edge clamped, bottom-right corner on a y-roller",
        }
    }

    /// Fixed DOFs on `mesh`. Rows count from the top edge.
    pub fn supports(self, mesh: &Mesh) -> Result<SupportSet> {
        let (nx, ny) = (mesh.nelx(), mesh.nely());
        let both = |n: usize| [2 * n, 2 * n + 1];
        let left =
            |rows: std::ops::RangeInclusive<usize>| rows.flat_map(move |r| both(mesh.node(r, 0)));
        let dofs: Vec<usize> = match self {
            Family::A => left(0..=ny).collect(),
            Family::B => left(ny / 2..=ny).collect(),
            Family::C => left(0..=ny.div_ceil(2)).collect(),
            Family::D => both(mesh.node(0, 0))
                .into_iter()
                .chain(both(mesh.node(ny, 0)))
                .collect(),
            Family::E => (0..=ny)
                .map(|r| 2 * mesh.node(r, 0))
                .chain([2 * mesh.node(ny, 0) + 1])
                .collect(),
            // the loaded edge keeps its corner free
            Family::F => (0..nx).flat_map(|c| both(mesh.node(ny, c))).collect(),
            Family::G => (0..nx).flat_map(|c| both(mesh.node(0, c))).collect(),
            Family::H => left(0..=ny).chain([2 * mesh.node(ny, nx) + 1]).collect(),
        };
        SupportSet::new(mesh, dofs)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next().map(|c| c.to_ascii_lowercase()), chars.next()) {
            (Some(c @ 'a'..='h'), None) => Ok(Family::ALL[(c as u8 - b'a') as usize]),
            _ => Err(invalid(format!("unknown family {s:?}, expected a..h"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCase {
    pub family: Family,
    /// Prescribed volume fraction.
    pub v: f64,
    /// Load position along the right edge, 0 at the top and 1 at the bottom.
    pub h: f64,
    /// Load direction in degrees, counter-clockwise from +x.
    pub alpha: f64,
    pub magnitude: f64,
}

impl BoundaryCase {
    pub fn validate(&self) -> Result<()> {
        if !(0.3..=0.6).contains(&self.v) {
            return Err(invalid(format!(
                "volume fraction {} outside [0.30, 0.60]",
                self.v
            )));
        }
        if !(0.0..=1.0).contains(&self.h) {
            return Err(invalid(format!("load position {} outside [0, 1]", self.h)));
        }
        if !self.alpha.is_finite() || !self.magnitude.is_finite() || self.magnitude < 0.0 {
            return Err(invalid(
                "load angle and magnitude must be finite, magnitude non-negative",
            ));
        }
        Ok(())
    }

    /// Row of the right-edge node nearest to `h`; ties go to the upper node,
    /// which has the smaller index.
    pub fn load_row(&self, mesh: &Mesh) -> usize {
        let y = self.h * mesh.nely() as f64;
        ((y - 0.5).ceil().max(0.0) as usize).min(mesh.nely())
    }

    pub fn load_node(&self, mesh: &Mesh) -> usize {
        mesh.node(self.load_row(mesh), mesh.nelx())
    }

    pub fn force(&self) -> (f64, f64) {
        let (sin, cos) = self.alpha.to_radians().sin_cos();
        // axis-aligned directions should not leak rounding residue into the other component
        let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
        (self.magnitude * snap(cos), self.magnitude * snap(sin))
    }

    pub fn loads(&self, mesh: &Mesh) -> LoadVector {
        let mut f = LoadVector::zeros(mesh);
        let (fx, fy) = self.force();
        f.add_nodal(self.load_node(mesh), fx, fy);
        f
    }

    pub fn problem(&self, mesh: Mesh) -> Result<Problem> {
        Ok(Problem {
            supports: self.family.supports(&mesh)?,
            loads: self.loads(&mesh),
            mesh,
            volfrac: self.v,
        })
    }
}
