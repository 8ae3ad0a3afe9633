use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::mesh::triangle_area;
use super::solver::{norm, pcg, BandedCholesky, CsrMatrix};
use super::{BoundarySpec, FeSolution, Mesh, NodeTag, SideCondition};

/// Unknown count from which the iterative solver is used by default.
pub const DIRECT_SOLVER_LIMIT: usize = 20_000;

const REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    #[default]
    Auto,
    Direct,
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub unknowns: usize,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Reduced system after Dirichlet elimination.
#[derive(Debug, Clone)]
pub struct System {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Node index of every unknown.
    pub free: Vec<usize>,
    /// Full nodal vector holding the Dirichlet values (zeros elsewhere).
    pub lifted: Vec<f64>,
}

fn gradients(p: [[f64; 2]; 3], area2: f64) -> [[f64; 2]; 3] {
    let mut g = [[0.0; 2]; 3];
    for k in 0..3 {
        let (a, b) = (p[(k + 1) % 3], p[(k + 2) % 3]);
        g[k] = [(a[1] - b[1]) / area2, (b[0] - a[0]) / area2];
    }
    g
}

/// Assembles the stiffness matrix and load vector with one-point (centroid)
/// quadrature and eliminates Dirichlet nodes.
pub fn assemble_system(mesh: &Mesh, coeff: &dyn Fn(f64, f64) -> f64, bc: &BoundarySpec) -> Result<System> {
    bc.validate()?;
    let nodes = mesh.nodes();
    let n = nodes.len();
    let tags = mesh.tags(bc);
    let mut lifted = vec![0.0; n];
    let mut dof = vec![usize::MAX; n];
    let mut free = Vec::new();
    for (k, t) in tags.iter().enumerate() {
        match *t {
            NodeTag::Dirichlet { value } => lifted[k] = value,
            _ => {
                dof[k] = free.len();
                free.push(k);
            }
        }
    }
    let m = free.len();
    let mut rhs = vec![0.0; m];
    let mut triplets = Vec::with_capacity(9 * mesh.triangles().len());
    for t in mesh.triangles() {
        let p = t.map(|k| nodes[k]);
        let area = triangle_area(nodes, t);
        if !(area > 0.0) {
            return Err(invalid("mesh", "degenerate or clockwise triangle"));
        }
        let cx = (p[0][0] + p[1][0] + p[2][0]) / 3.0;
        let cy = (p[0][1] + p[1][1] + p[2][1]) / 3.0;
        let a = coeff(cx, cy);
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid("coefficient", format!("must be finite and > 0, got {a} at ({cx}, {cy})")));
        }
        let g = gradients(p, 2.0 * area);
        let load = bc.source * area / 3.0;
        for r in 0..3 {
            let dr = dof[t[r]];
            if dr == usize::MAX {
                continue;
            }
            rhs[dr] += load;
            for c in 0..3 {
                let kij = a * area * (g[r][0] * g[c][0] + g[r][1] * g[c][1]);
                let dc = dof[t[c]];
                if dc == usize::MAX {
                    rhs[dr] -= kij * lifted[t[c]];
                } else {
                    triplets.push((dr, dc, kij));
                }
            }
        }
    }
    // Neumann flux by the midpoint rule on boundary edges
    let sides = mesh.node_sides();
    for (flag, cond) in bc.sides() {
        let SideCondition::Neumann { flux } = cond else { continue };
        if flux == 0.0 {
            continue;
        }
        let mut on: Vec<usize> = (0..n).filter(|&k| sides[k] & flag != 0).collect();
        let axis = if flag & (super::side::LEFT | super::side::RIGHT) != 0 { 1 } else { 0 };
        on.sort_by(|&a, &b| nodes[a][axis].total_cmp(&nodes[b][axis]));
        for w in on.windows(2) {
            let len = (nodes[w[1]][axis] - nodes[w[0]][axis]).abs();
            for &k in w {
                if dof[k] != usize::MAX {
                    rhs[dof[k]] += 0.5 * flux * len;
                }
            }
        }
    }
    Ok(System {
        matrix: CsrMatrix::from_triplets(m, triplets),
        rhs,
        free,
        lifted,
    })
}

/// Solves the pathwise weak problem on `mesh`.
pub fn assemble_solve(
    mesh: &Arc<Mesh>,
    coeff: &dyn Fn(f64, f64) -> f64,
    bc: &BoundarySpec,
    solver: SolverChoice,
) -> Result<FeSolution> {
    let sys = assemble_system(mesh, coeff, bc)?;
    let m = sys.free.len();
    let direct = match solver {
        SolverChoice::Auto => m < DIRECT_SOLVER_LIMIT,
        SolverChoice::Direct => true,
        SolverChoice::Cg => false,
    };
    let (x, iterations) = if m == 0 {
        (Vec::new(), 0)
    } else if direct {
        (BandedCholesky::factor(&sys.matrix)?.solve(&sys.rhs), 0)
    } else {
        pcg(&sys.matrix, &sys.rhs, REL_TOL, 10 * m)?
    };
    let mut ax = vec![0.0; m];
    sys.matrix.matvec(&x, &mut ax);
    let res: Vec<f64> = sys.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let nb = norm(&sys.rhs);
    let relative_residual = if nb > 0.0 { norm(&res) / nb } else { norm(&res) };
    if relative_residual > REL_TOL {
        return Err(Error::NoConvergence { iterations, residual: relative_residual });
    }
    let mut values = sys.lifted;
    for (k, &node) in sys.free.iter().enumerate() {
        values[node] = x[k];
    }
    Ok(FeSolution {
        mesh: Arc::clone(mesh),
        values,
        stats: SolveStats { unknowns: m, iterations, relative_residual },
    })
}
