use std::f64::consts::SQRT_2;

use serde::Serialize;

use crate::error::{invalid, Result};

use super::{BoundarySpec, NodeTag};

/// Bit flags for the sides of the unit square a node lies on.
pub mod side {
    pub const LEFT: u8 = 1;
    pub const RIGHT: u8 = 2;
    pub const BOTTOM: u8 = 4;
    pub const TOP: u8 = 8;
}

pub const DEFAULT_MIN_ANGLE_DEG: f64 = 10.0;

/// Conforming triangulation of the unit square built on a tensor line set.
///
/// Nodes are numbered with `x` fastest; every rectangle is split along the
/// diagonal from its lower-left to its upper-right corner.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    xs: Vec<f64>,
    ys: Vec<f64>,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    sides: Vec<u8>,
    h: f64,
    min_angle: f64,
    merged_lines: usize,
}

fn check_lines(name: &'static str, lines: &[f64]) -> Result<()> {
    if lines.len() < 2 || lines[0] != 0.0 || *lines.last().unwrap() != 1.0 {
        return Err(invalid(name, "lines must start at 0 and end at 1"));
    }
    if lines.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid(name, "lines must be strictly increasing"));
    }
    Ok(())
}

impl Mesh {
    /// Mesh on the tensor product of the given line sets (both covering `[0, 1]`).
    pub fn tensor(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        check_lines("xs", &xs)?;
        check_lines("ys", &ys)?;
        let (nx, ny) = (xs.len(), ys.len());
        let mut nodes = Vec::with_capacity(nx * ny);
        let mut sides = Vec::with_capacity(nx * ny);
        for (j, &y) in ys.iter().enumerate() {
            for (i, &x) in xs.iter().enumerate() {
                nodes.push([x, y]);
                let mut s = 0;
                if i == 0 {
                    s |= side::LEFT;
                }
                if i == nx - 1 {
                    s |= side::RIGHT;
                }
                if j == 0 {
                    s |= side::BOTTOM;
                }
                if j == ny - 1 {
                    s |= side::TOP;
                }
                sides.push(s);
            }
        }
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        let mut h: f64 = 0.0;
        let mut min_tan = f64::INFINITY;
        for j in 0..ny - 1 {
            let hy = ys[j + 1] - ys[j];
            for i in 0..nx - 1 {
                let hx = xs[i + 1] - xs[i];
                let p00 = j * nx + i;
                let (p10, p01, p11) = (p00 + 1, p00 + nx, p00 + nx + 1);
                // both diagonals give congruent triangles, so the choice is fixed
                triangles.push([p00, p10, p11]);
                triangles.push([p00, p11, p01]);
                h = h.max(hx.hypot(hy));
                min_tan = min_tan.min(hx.min(hy) / hx.max(hy));
            }
        }
        Ok(Self {
            xs,
            ys,
            nodes,
            triangles,
            sides,
            h,
            min_angle: min_tan.atan().to_degrees(),
            merged_lines: 0,
        })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn node_sides(&self) -> &[u8] {
        &self.sides
    }

    /// Largest triangle diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Smallest interior angle in degrees.
    pub fn min_angle(&self) -> f64 {
        self.min_angle
    }

    /// Number of jump lines merged or dropped while building an adapted mesh.
    pub fn merged_lines(&self) -> usize {
        self.merged_lines
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| triangle_area(&self.nodes, t)).sum()
    }

    pub fn tags(&self, bc: &BoundarySpec) -> Vec<NodeTag> {
        self.sides.iter().map(|&s| bc.tag(s)).collect()
    }

    /// JSON dump with nodes, triangles and boundary tags.
    pub fn to_json(&self, bc: &BoundarySpec) -> serde_json::Value {
        #[derive(Serialize)]
        struct Dump<'a> {
            nodes: &'a [[f64; 2]],
            triangles: &'a [[usize; 3]],
            tags: Vec<NodeTag>,
            h: f64,
            min_angle_deg: f64,
            merged_lines: usize,
        }
        serde_json::to_value(Dump {
            nodes: &self.nodes,
            triangles: &self.triangles,
            tags: self.tags(bc),
            h: self.h,
            min_angle_deg: self.min_angle,
            merged_lines: self.merged_lines,
        })
        .expect("mesh dump is plain data")
    }
}

pub(crate) fn triangle_area(nodes: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let [a, b, c] = [nodes[t[0]], nodes[t[1]], nodes[t[2]]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn uniform_lines(cells: usize) -> Vec<f64> {
    (0..=cells)
        .map(|i| if i == cells { 1.0 } else { i as f64 / cells as f64 })
        .collect()
}

/// Structured mesh of the unit square with squares of side `<= h_target / √2`.
pub fn build_uniform_mesh(h_target: f64) -> Result<Mesh> {
    if !(h_target > 0.0 && h_target < 1.0) {
        return Err(invalid("h", format!("must lie in (0, 1), got {h_target}")));
    }
    let cells = cells_per_length(1.0, h_target / SQRT_2);
    Mesh::tensor(uniform_lines(cells), uniform_lines(cells))
}

fn cells_per_length(len: f64, max_step: f64) -> usize {
    crate::grf::TensorGrid::cells_for_step(len, max_step)
}

/// Cleans one axis of jump coordinates: sorts, drops those within `tol` of
/// the boundary and replaces clusters closer than `tol` by their midpoint.
/// Returns the kept lines and how many input lines were removed.
fn clean_jumps(jumps: &[f64], tol: f64) -> (Vec<f64>, usize) {
    let mut sorted: Vec<f64> = jumps.iter().copied().filter(|t| t.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let input = sorted.len();
    let mut kept: Vec<f64> = Vec::new();
    let mut cluster: Vec<f64> = Vec::new();
    let flush = |cluster: &mut Vec<f64>, kept: &mut Vec<f64>| {
        if let (Some(&a), Some(&b)) = (cluster.first(), cluster.last()) {
            kept.push(0.5 * (a + b));
        }
        cluster.clear();
    };
    for t in sorted {
        if t < tol || t > 1.0 - tol {
            continue;
        }
        if cluster.last().is_some_and(|&p| t - p < tol) {
            cluster.push(t);
        } else {
            flush(&mut cluster, &mut kept);
            cluster.push(t);
        }
    }
    flush(&mut cluster, &mut kept);
    let removed = input - kept.len();
    (kept, removed)
}

fn subdivide(breaks: &[f64], max_step: f64) -> Vec<f64> {
    let mut lines = vec![breaks[0]];
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let n = cells_per_length(b - a, max_step);
        for k in 1..n {
            lines.push(a + (b - a) * k as f64 / n as f64);
        }
        lines.push(b);
    }
    lines
}

/// Sample-adapted mesh: the line set `{0, 1} ∪ jumps` per axis with every
/// interval subdivided to length `<= h_bar / √2`.
///
/// Lines closer than `max(1e-9, tan(θ_floor) h_bar / √2)` to each other or to
/// the boundary are merged so the minimum angle stays above `θ_floor`.
pub fn build_adapted_mesh(jump_xs: &[f64], jump_ys: &[f64], h_bar: f64, min_angle_deg: f64) -> Result<Mesh> {
    if !(h_bar > 0.0 && h_bar.is_finite()) {
        return Err(invalid("h_bar", format!("must be finite and > 0, got {h_bar}")));
    }
    if !(0.0..45.0).contains(&min_angle_deg) {
        return Err(invalid("min_angle", "floor must lie in [0, 45) degrees"));
    }
    let step = h_bar / SQRT_2;
    let tol = (min_angle_deg.to_radians().tan() * step.min(1.0)).max(1e-9);
    let (kx, mx) = clean_jumps(jump_xs, tol);
    let (ky, my) = clean_jumps(jump_ys, tol);
    let with_ends = |inner: Vec<f64>| {
        let mut b = Vec::with_capacity(inner.len() + 2);
        b.push(0.0);
        b.extend(inner);
        b.push(1.0);
        b
    };
    let xs = subdivide(&with_ends(kx), step);
    let ys = subdivide(&with_ends(ky), step);
    let mut mesh = Mesh::tensor(xs, ys)?;
    mesh.merged_lines = mx + my;
    Ok(mesh)
}
