//! P1 finite elements on tensor-structured triangulations of the unit square.

mod assemble;
mod mesh;
mod norms;
mod solver;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use assemble::{assemble_solve, assemble_system, SolveStats, SolverChoice, DIRECT_SOLVER_LIMIT};
pub use mesh::{build_adapted_mesh, build_uniform_mesh, side, Mesh, DEFAULT_MIN_ANGLE_DEG};
pub(crate) use norms::h1_inner_values;
pub use norms::{h1_distance, h1_distance_sq, h1_inner, h1_norm, prolong, reference_grid, REFERENCE_POINTS};
pub use solver::{BandedCholesky, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SideCondition {
    Dirichlet { value: f64 },
    /// Prescribed normal flux `a ∂u/∂n = g`.
    Neumann { flux: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NodeTag {
    Interior,
    Dirichlet { value: f64 },
    Neumann,
}

/// Boundary conditions per side of the unit square and a constant source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub left: SideCondition,
    pub right: SideCondition,
    pub bottom: SideCondition,
    pub top: SideCondition,
    pub source: f64,
}

impl Default for BoundarySpec {
    /// `u = 0.1` at `x = 0`, `u = 0.3` at `x = 1`, no flux on the horizontal sides, `f = 10`.
    fn default() -> Self {
        Self {
            left: SideCondition::Dirichlet { value: 0.1 },
            right: SideCondition::Dirichlet { value: 0.3 },
            bottom: SideCondition::Neumann { flux: 0.0 },
            top: SideCondition::Neumann { flux: 0.0 },
            source: 10.0,
        }
    }
}

impl BoundarySpec {
    pub fn validate(&self) -> Result<()> {
        let all = [self.left, self.right, self.bottom, self.top];
        if !all.iter().any(|s| matches!(s, SideCondition::Dirichlet { .. })) {
            return Err(invalid("boundary", "at least one side must carry Dirichlet data"));
        }
        let finite = all.iter().all(|s| match s {
            SideCondition::Dirichlet { value } => value.is_finite(),
            SideCondition::Neumann { flux } => flux.is_finite(),
        });
        if !finite || !self.source.is_finite() {
            return Err(invalid("boundary", "boundary data and source must be finite"));
        }
        Ok(())
    }

    /// Sides in flag order: left, right, bottom, top.
    pub fn sides(&self) -> [(u8, SideCondition); 4] {
        [
            (side::LEFT, self.left),
            (side::RIGHT, self.right),
            (side::BOTTOM, self.bottom),
            (side::TOP, self.top),
        ]
    }

    /// Tag for a node on the given sides. Dirichlet wins at corners, left
    /// and right before bottom and top.
    pub fn tag(&self, sides: u8) -> NodeTag {
        if sides == 0 {
            return NodeTag::Interior;
        }
        for (flag, cond) in self.sides() {
            if sides & flag != 0 {
                if let SideCondition::Dirichlet { value } = cond {
                    return NodeTag::Dirichlet { value };
                }
            }
        }
        NodeTag::Neumann
    }
}

/// Nodal P1 values on a mesh.
#[derive(Debug, Clone)]
pub struct FeSolution {
    pub mesh: Arc<Mesh>,
    pub values: Vec<f64>,
    pub stats: SolveStats,
}
