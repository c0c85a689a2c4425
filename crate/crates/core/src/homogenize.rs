//! Periodic cell problems and the equivalent tensors built from them.
//!
//! A cell of side `M` (in cell coordinates) is meshed once; every sample and
//! block reuses the mesh, the periodic dof map and the CSR pattern, and only
//! the per-triangle coefficient averages change.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{dof_weights, periodic_dofs, solve_periodic, triangle_coefficients, StiffnessPattern};
use crate::linalg::{CgOptions, LinearSolveReport};
use crate::mesh::{build_structured_mesh, Point, Rect, TriMesh};
use crate::microstructure::CoefficientField;
use crate::tensor::Mat2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TensorRole {
    Block { k1: i64, k2: i64 },
    Periodization { n: usize },
    EmpiricalMean,
    ExactReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquivalentTensor {
    pub m: Mat2,
    pub role: TensorRole,
    pub sample_index: Option<u64>,
}

/// Corrector for one direction, on the periodic (reduced) dofs.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub direction: usize,
    pub values: Vec<f64>,
    pub report: LinearSolveReport,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub tensor: Mat2,
    pub solutions: [CellSolution; 2],
}

impl CellResult {
    pub fn cg_iterations(&self) -> usize {
        self.solutions[0].report.iterations + self.solutions[1].report.iterations
    }
}

/// Reusable solver for cell problems on `(0, M)^2`.
#[derive(Debug, Clone)]
pub struct CellSolver {
    cell_size: usize,
    order: usize,
    pattern: StiffnessPattern,
    weights: Vec<f64>,
    opts: CgOptions,
}

impl CellSolver {
    /// `n` subdivisions per unit cell length.
    pub fn new(cell_size: usize, n: usize, order: usize, opts: CgOptions) -> Result<Self> {
        if cell_size == 0 {
            return Err(Error::InvalidInput("cell size must be positive".into()));
        }
        let mesh = Arc::new(build_structured_mesh(Rect::square(cell_size as f64), n)?);
        let dofs = periodic_dofs(&mesh)?;
        let weights = dof_weights(&mesh, &dofs)?;
        let pattern = StiffnessPattern::new(mesh, dofs)?;
        Ok(Self {
            cell_size,
            order,
            pattern,
            weights,
            opts,
        })
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        self.pattern.mesh()
    }

    pub fn cell_size(&self) -> usize {
        self.cell_size
    }

    /// Solve both cell problems for a coefficient given in local cell coordinates.
    pub fn solve<F>(&self, coeff: F) -> Result<CellResult>
    where
        F: Fn(Point) -> Result<Mat2>,
    {
        let coeffs = triangle_coefficients(self.mesh(), self.order, coeff)?;
        self.solve_averaged(&coeffs)
    }

    /// Solve with precomputed per-triangle coefficient averages.
    pub fn solve_averaged(&self, coeffs: &[Mat2]) -> Result<CellResult> {
        let k = self.pattern.assemble(coeffs)?;
        let solve_dir = |dir: usize| -> Result<CellSolution> {
            let b = self.pattern.cell_rhs(coeffs, dir)?;
            let what = format!("cell problem e{}", dir + 1);
            let (values, report) = solve_periodic(&k, &b, &self.weights, &self.opts, &what)?;
            Ok(CellSolution {
                direction: dir,
                values,
                report,
            })
        };
        let s0 = solve_dir(0)?;
        let s1 = solve_dir(1)?;
        let tensor = self.equivalent_matrix(coeffs, [&s0, &s1])?;
        Ok(CellResult {
            tensor,
            solutions: [s0, s1],
        })
    }

    /// `(1/|Q|) sum_T |T| (e_i + grad N_i)^T A_T (e_j + grad N_j)`.
    pub fn equivalent_matrix(&self, coeffs: &[Mat2], sols: [&CellSolution; 2]) -> Result<Mat2> {
        let dofs = self.pattern.dofs();
        let mesh = self.mesh();
        let n0 = dofs.expand(&sols[0].values)?;
        let n1 = dofs.expand(&sols[1].values)?;
        let mut acc = [[0.0; 2]; 2];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let g = self.pattern.gradients(t);
            let mut d = [[1.0, 0.0], [0.0, 1.0]];
            for a in 0..3 {
                for c in 0..2 {
                    d[0][c] += n0[tri[a]] * g[a][c];
                    d[1][c] += n1[tri[a]] * g[a][c];
                }
            }
            let area = self.pattern.area(t);
            let a = &coeffs[t];
            for i in 0..2 {
                for j in 0..2 {
                    acc[i][j] += area * a.bilinear(d[i], d[j]);
                }
            }
        }
        let q = mesh.domain().area();
        let m = Mat2(acc).map(|v| v / q);
        if m.asymmetry() > 1e-8 * m.max_abs() {
            return Err(Error::Numerical(format!(
                "equivalent matrix asymmetric by {:.3e}",
                m.asymmetry()
            )));
        }
        Ok(m)
    }

    /// Equivalent tensor of block `k`: the coefficient at cell point
    /// `y + M k` of the field.
    pub fn solve_block(&self, field: &CoefficientField, block: (i64, i64)) -> Result<CellResult> {
        let shift = [
            (self.cell_size as i64 * block.0) as f64,
            (self.cell_size as i64 * block.1) as f64,
        ];
        self.solve(|y| field.at_cell([y[0] + shift[0], y[1] + shift[1]]))
            .map_err(|e| annotate(e, field, block))
    }
}

fn annotate(e: Error, field: &CoefficientField, block: (i64, i64)) -> Error {
    let tag = format!(
        "sample {} block ({}, {})",
        field.realization.sample_index, block.0, block.1
    );
    match e {
        Error::Solver { message, report } => Error::Solver {
            message: format!("{tag}: {message}"),
            report,
        },
        Error::Numerical(m) => Error::Numerical(format!("{tag}: {m}")),
        other => other,
    }
}

/// Solve one cell problem on an existing mesh; `dir` is 0 or 1.
pub fn solve_cell_problem<F>(
    coeff: F,
    mesh: Arc<TriMesh>,
    dir: usize,
    order: usize,
    opts: &CgOptions,
) -> Result<CellSolution>
where
    F: Fn(Point) -> Result<Mat2>,
{
    if dir > 1 {
        return Err(Error::InvalidInput(format!("direction {dir} is not 0 or 1")));
    }
    let coeffs = triangle_coefficients(&mesh, order, coeff)?;
    let dofs = periodic_dofs(&mesh)?;
    let weights = dof_weights(&mesh, &dofs)?;
    let pattern = StiffnessPattern::new(mesh, dofs)?;
    let k = pattern.assemble(&coeffs)?;
    let b = pattern.cell_rhs(&coeffs, dir)?;
    let (values, report) = solve_periodic(&k, &b, &weights, opts, "cell problem")?;
    Ok(CellSolution {
        direction: dir,
        values,
        report,
    })
}

/// Periodization tensor `A*_N`: one cell problem over `N x N` cells of the field.
pub fn periodization_matrix(
    field: &CoefficientField,
    n_cells: usize,
    n: usize,
    order: usize,
    opts: CgOptions,
) -> Result<EquivalentTensor> {
    let solver = CellSolver::new(n_cells, n, order, opts)?;
    let result = solver.solve_block(field, (0, 0))?;
    Ok(EquivalentTensor {
        m: result.tensor,
        role: TensorRole::Periodization { n: n_cells },
        sample_index: Some(field.realization.sample_index),
    })
}

/// Entrywise mean and unbiased variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalStats {
    pub mean: Mat2,
    pub variance: Mat2,
    pub sample_count: usize,
}

/// Single-pass (Welford) accumulator; feed tensors in sample order.
#[derive(Debug, Clone, Copy, Default)]
pub struct StatsAccumulator {
    count: usize,
    mean: Mat2,
    m2: Mat2,
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: Mat2) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean = self.mean + delta * (1.0 / self.count as f64);
        let delta2 = x - self.mean;
        self.m2 = self.m2 + delta.zip_map(&delta2, |a, b| a * b);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Mat2 {
        self.mean
    }

    pub fn finish(&self) -> Result<EmpiricalStats> {
        if self.count < 2 {
            return Err(Error::InvalidInput(format!(
                "variance needs at least 2 samples, got {}",
                self.count
            )));
        }
        Ok(EmpiricalStats {
            mean: self.mean,
            variance: self.m2 * (1.0 / (self.count - 1) as f64),
            sample_count: self.count,
        })
    }
}

pub fn empirical_stats(tensors: &[Mat2]) -> Result<EmpiricalStats> {
    let mut acc = StatsAccumulator::new();
    tensors.iter().for_each(|t| acc.push(*t));
    acc.finish()
}

/// `mean + delta * A1` form of one sample's block tensors.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbationDecomposition {
    pub mean_matrix: Mat2,
    pub delta: f64,
    pub a1_blocks: Vec<((i64, i64), Mat2)>,
    /// `(a11 - mu11) / sqrt(var11)` per block; zero when the variance vanishes.
    pub z1: Vec<((i64, i64), f64)>,
    /// `|eps Q_M| * Var(a11)`.
    pub lambda1: f64,
    /// `|eps Q_M|^(-1/2)`.
    pub phi1: f64,
    pub degenerate: bool,
}

impl PerturbationDecomposition {
    pub fn reconstruct(&self, slot: usize) -> Mat2 {
        self.mean_matrix + self.a1_blocks[slot].1 * self.delta
    }

    pub fn a1_of(&self, block: (i64, i64)) -> Option<Mat2> {
        self.a1_blocks.iter().find(|(k, _)| *k == block).map(|(_, a)| *a)
    }
}

pub fn kl_decompose(
    blocks: &[((i64, i64), Mat2)],
    stats: &EmpiricalStats,
    block_area: f64,
) -> Result<PerturbationDecomposition> {
    let v = stats.variance.entries();
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Numerical(format!("invalid variances {v:?}")));
    }
    let delta = v.iter().map(|x| x.sqrt()).fold(0.0, f64::max);
    let degenerate = delta == 0.0;
    let mean = stats.mean;
    let a1_blocks = blocks
        .iter()
        .map(|(k, m)| {
            let a1 = if degenerate {
                Mat2::ZERO
            } else {
                (*m - mean).map(|x| x / delta)
            };
            (*k, a1)
        })
        .collect();
    let sd11 = stats.variance.get(0, 0).sqrt();
    let z1 = blocks
        .iter()
        .map(|(k, m)| {
            let z = if sd11 > 0.0 {
                (m.get(0, 0) - mean.get(0, 0)) / sd11
            } else {
                0.0
            };
            (*k, z)
        })
        .collect();
    Ok(PerturbationDecomposition {
        mean_matrix: mean,
        delta,
        a1_blocks,
        z1,
        lambda1: block_area * stats.variance.get(0, 0),
        phi1: block_area.powf(-0.5),
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Region {
    D1,
    D2,
}

/// Covariance of a two-phase coefficient `a_1 1_{D1} + a_2 1_{D2}` driven by a
/// uniform [0, 1] variable, for points in the given regions.
pub fn covariance_two_phase(a1: f64, a2: f64, region_s: Region, region_t: Region) -> f64 {
    let pick = |r: Region| match r {
        Region::D1 => a1,
        Region::D2 => a2,
    };
    pick(region_s) * pick(region_t) / 12.0
}
