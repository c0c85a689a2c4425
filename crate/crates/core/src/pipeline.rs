//! Stage two and the end-to-end experiments.
//!
//! Sample loops run on the rayon pool; every sample draws from its own derived
//! stream and results are reduced in sample order, so outputs do not depend on
//! the number of workers.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fem::{
    h1_norm, solve_dirichlet, DofMap, FieldRole, SolutionField, StiffnessPattern,
};
use crate::homogenize::{
    kl_decompose, periodization_matrix, CellSolver, EmpiricalStats, PerturbationDecomposition,
    StatsAccumulator,
};
use crate::linalg::{CgOptions, LinearSolveReport, Preconditioner, SparseMatrix};
use crate::mesh::{build_structured_mesh, Point, Rect, TriMesh};
use crate::microstructure::{
    CellGeometry, CellRange, CoefficientField, MicrostructureSpec, SampleRealization,
};
use crate::tensor::Mat2;

/// A validated configuration with its microstructure generator.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: RunConfig,
    spec: MicrostructureSpec,
    shared: Option<Arc<CellGeometry>>,
}

impl Problem {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.microstructure();
        let shared = spec.shared_geometry()?.map(Arc::new);
        Ok(Self {
            config,
            spec,
            shared,
        })
    }

    pub fn cg_options(&self) -> CgOptions {
        CgOptions {
            tol: self.config.cg_tol,
            max_iter: None,
            preconditioner: Preconditioner::Jacobi,
        }
    }

    pub fn shared_geometry(&self) -> Option<&Arc<CellGeometry>> {
        self.shared.as_ref()
    }

    /// All cells of D.
    pub fn domain_cells(&self) -> CellRange {
        CellRange::square(self.config.cells_per_side())
    }

    /// Cells of block `(0, 0)`.
    pub fn first_block_cells(&self, m: usize) -> CellRange {
        CellRange::square(m)
    }

    pub fn realize(&self, sample: u64, cells: CellRange) -> Result<Arc<SampleRealization>> {
        Ok(Arc::new(self.spec.realize_with(sample, cells, self.shared.as_ref())?))
    }

    pub fn field_of(&self, realization: Arc<SampleRealization>) -> CoefficientField {
        CoefficientField::new(
            self.config.test_case,
            realization,
            self.config.epsilon,
            self.config.diagonal_only,
            self.config.custom_value,
        )
    }

    pub fn field(&self, sample: u64, cells: CellRange) -> Result<CoefficientField> {
        Ok(self.field_of(self.realize(sample, cells)?))
    }

    /// Cell solver on `(0, m)^2` with the configured cell mesh.
    pub fn cell_solver(&self, m: usize) -> Result<CellSolver> {
        CellSolver::new(m, self.config.n_cell, self.config.quadrature_order, self.cg_options())
    }

    pub fn unit_mesh(&self, n: usize) -> Result<Arc<TriMesh>> {
        Ok(Arc::new(build_structured_mesh(Rect::unit(), n)?))
    }

    fn source(&self) -> impl Fn(Point) -> f64 + Sync {
        let f = self.config.f;
        move |_| f
    }
}

/// One equivalent tensor with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleTensor {
    pub sample_index: u64,
    pub block: (i64, i64),
    pub tensor: Mat2,
    pub cg_iterations: usize,
}

/// Piecewise-constant tensor field over the blocks of D, row-major in `(k1, k2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockField {
    pub blocks_per_side: usize,
    pub block_size: f64,
    pub values: Vec<Mat2>,
}

impl BlockField {
    pub fn uniform(blocks_per_side: usize, value: Mat2) -> Self {
        Self {
            blocks_per_side,
            block_size: 1.0 / blocks_per_side as f64,
            values: vec![value; blocks_per_side * blocks_per_side],
        }
    }

    pub fn from_tensors(blocks_per_side: usize, tensors: &[SampleTensor]) -> Result<Self> {
        let mut field = Self::uniform(blocks_per_side, Mat2::ZERO);
        if tensors.len() != field.values.len() {
            return Err(Error::DimensionMismatch {
                expected: field.values.len(),
                got: tensors.len(),
            });
        }
        for t in tensors {
            let slot = field.slot(t.block)?;
            field.values[slot] = t.tensor;
        }
        Ok(field)
    }

    fn slot(&self, block: (i64, i64)) -> Result<usize> {
        let nb = self.blocks_per_side as i64;
        if block.0 < 0 || block.1 < 0 || block.0 >= nb || block.1 >= nb {
            return Err(Error::Structural(format!("block {block:?} outside {nb}x{nb}")));
        }
        Ok((block.1 * nb + block.0) as usize)
    }

    pub fn get(&self, block: (i64, i64)) -> Result<Mat2> {
        Ok(self.values[self.slot(block)?])
    }

    pub fn map(&self, f: impl Fn(Mat2) -> Mat2) -> Self {
        Self {
            blocks_per_side: self.blocks_per_side,
            block_size: self.block_size,
            values: self.values.iter().map(|m| f(*m)).collect(),
        }
    }

    /// Error unless every block tensor is positive definite.
    pub fn require_positive_definite(&self) -> Result<()> {
        for (slot, m) in self.values.iter().enumerate() {
            let (lo, _) = m.eigenvalues();
            if !(lo > 0.0) {
                let nb = self.blocks_per_side;
                return Err(Error::Numerical(format!(
                    "block tensor ({}, {}) is not positive definite (smallest eigenvalue {lo:.4e})",
                    slot % nb,
                    slot / nb
                )));
            }
        }
        Ok(())
    }

    /// Per-triangle values; every triangle must sit inside one block.
    pub fn per_triangle(&self, mesh: &TriMesh) -> Result<Vec<Mat2>> {
        let per_block = mesh.subdivisions_per_unit() as f64 * self.block_size;
        if (per_block - per_block.round()).abs() > 1e-9 || per_block.round() < 1.0 {
            return Err(Error::config(
                "h1",
                None,
                format!(
                    "mesh with 1/h = {} has elements straddling blocks of size {}",
                    mesh.subdivisions_per_unit(),
                    self.block_size
                ),
            ));
        }
        let nb = self.blocks_per_side;
        (0..mesh.n_triangles())
            .map(|t| {
                let c = mesh.centroid(t);
                let k1 = ((c[0] / self.block_size).floor() as usize).min(nb - 1);
                let k2 = ((c[1] / self.block_size).floor() as usize).min(nb - 1);
                Ok(self.values[k2 * nb + k1])
            })
            .collect()
    }
}

/// Dirichlet solve of `-div(B grad u) = f` with a block-constant `B`.
pub fn solve_equivalent_sample<F: Fn(Point) -> f64>(
    blocks: &BlockField,
    mesh: Arc<TriMesh>,
    f: F,
    order: usize,
    opts: &CgOptions,
) -> Result<(SolutionField, LinearSolveReport)> {
    blocks.require_positive_definite()?;
    let coeffs = blocks.per_triangle(&mesh)?;
    let pattern = StiffnessPattern::new(mesh.clone(), DofMap::dirichlet(&mesh))?;
    let k = pattern.assemble(&coeffs)?;
    let b = pattern.load(f, order)?;
    let (values, report) = solve_dirichlet(&pattern, &k, &b, opts, "equivalent solve")?;
    Ok((SolutionField::new(mesh, values, FieldRole::EquivalentSample)?, report))
}

/// Dirichlet solve with one constant tensor on the unit square.
pub fn solve_constant_tensor<F: Fn(Point) -> f64>(
    tensor: Mat2,
    mesh: Arc<TriMesh>,
    f: F,
    order: usize,
    opts: &CgOptions,
) -> Result<(SolutionField, LinearSolveReport)> {
    BlockField::uniform(1, tensor).require_positive_definite()?;
    let coeffs = vec![tensor; mesh.n_triangles()];
    let pattern = StiffnessPattern::new(mesh.clone(), DofMap::dirichlet(&mesh))?;
    let k = pattern.assemble(&coeffs)?;
    let b = pattern.load(f, order)?;
    let (values, report) = solve_dirichlet(&pattern, &k, &b, opts, "homogenized solve")?;
    Ok((SolutionField::new(mesh, values, FieldRole::FirstMode)?, report))
}

/// Block `(0, 0)` tensors for the given samples, in sample order.
pub fn first_block_tensors(
    problem: &Problem,
    solver: &CellSolver,
    samples: &[u64],
) -> Result<Vec<SampleTensor>> {
    let cells = problem.first_block_cells(solver.cell_size());
    samples
        .par_iter()
        .map(|&s| {
            let field = problem.field(s, cells)?;
            let r = solver.solve_block(&field, (0, 0))?;
            Ok(SampleTensor {
                sample_index: s,
                block: (0, 0),
                tensor: r.tensor,
                cg_iterations: r.cg_iterations(),
            })
        })
        .collect()
}

/// Every block tensor of one sample over D, row-major.
pub fn all_block_tensors(
    problem: &Problem,
    solver: &CellSolver,
    sample: u64,
) -> Result<Vec<SampleTensor>> {
    let field = problem.field(sample, problem.domain_cells())?;
    let nb = problem.config.blocks_per_side() as i64;
    let blocks: Vec<(i64, i64)> = (0..nb).flat_map(|k2| (0..nb).map(move |k1| (k1, k2))).collect();
    blocks
        .par_iter()
        .map(|&k| {
            let r = solver.solve_block(&field, k)?;
            Ok(SampleTensor {
                sample_index: sample,
                block: k,
                tensor: r.tensor,
                cg_iterations: r.cg_iterations(),
            })
        })
        .collect()
}

pub fn stats_of(tensors: &[SampleTensor]) -> Result<EmpiricalStats> {
    let mut acc = StatsAccumulator::new();
    tensors.iter().for_each(|t| acc.push(t.tensor));
    acc.finish()
}

fn decompose(problem: &Problem, tensors: &[SampleTensor], stats: &EmpiricalStats) -> Result<PerturbationDecomposition> {
    let blocks: Vec<((i64, i64), Mat2)> = tensors.iter().map(|t| (t.block, t.tensor)).collect();
    kl_decompose(&blocks, stats, problem.config.block_size().powi(2))
}

#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub u0: SolutionField,
    pub stats: EmpiricalStats,
    pub tensors: Vec<SampleTensor>,
    /// Block tensors of sample `sample_index` used for the decomposition.
    pub kl_tensors: Vec<SampleTensor>,
    pub decomposition: PerturbationDecomposition,
    pub solve_report: LinearSolveReport,
}

/// Stage one on `L` samples of block `(0, 0)`, then the homogenized solve
/// with the empirical mean on the `h0` mesh.
pub fn algorithm1_two_stage(problem: &Problem) -> Result<TwoStageResult> {
    let c = &problem.config;
    if c.samples < 2 {
        return Err(Error::config("L", None, "two-stage statistics need L >= 2"));
    }
    let solver = problem.cell_solver(c.m)?;
    let samples: Vec<u64> = (0..c.samples as u64).collect();
    let tensors = first_block_tensors(problem, &solver, &samples)?;
    let stats = stats_of(&tensors)?;
    let kl_tensors = all_block_tensors(problem, &solver, c.sample_index)?;
    let decomposition = decompose(problem, &kl_tensors, &stats)?;
    let (u0, solve_report) = solve_mean_problem(problem, stats.mean)?;
    Ok(TwoStageResult {
        u0,
        stats,
        tensors,
        kl_tensors,
        decomposition,
        solve_report,
    })
}

/// The deterministic first-mode solve for a given mean tensor on the `h0` mesh.
pub fn solve_mean_problem(problem: &Problem, mean: Mat2) -> Result<(SolutionField, LinearSolveReport)> {
    let mesh = problem.unit_mesh(problem.config.n0)?;
    solve_constant_tensor(
        mean,
        mesh,
        problem.source(),
        problem.config.quadrature_order,
        &problem.cg_options(),
    )
}

#[derive(Debug, Clone)]
pub struct ReferenceResult {
    pub mean: SolutionField,
    /// Per-sample fields, kept only on request.
    pub samples: Vec<SolutionField>,
    pub tensors: Vec<SampleTensor>,
}

/// Monte Carlo reference: all block tensors per sample, a block-constant
/// solve on the `h1` mesh, and the nodal average over samples.
pub fn algorithm2_reference(problem: &Problem, keep_samples: bool) -> Result<ReferenceResult> {
    let c = &problem.config;
    let solver = problem.cell_solver(c.m)?;
    let mesh = problem.unit_mesh(c.n1)?;
    let nb = c.blocks_per_side();
    let opts = problem.cg_options();
    let per_sample: Vec<(Vec<SampleTensor>, SolutionField)> = (0..c.samples as u64)
        .into_par_iter()
        .map(|s| {
            let tensors = all_block_tensors(problem, &solver, s)?;
            let blocks = BlockField::from_tensors(nb, &tensors)?;
            let (field, _) =
                solve_equivalent_sample(&blocks, mesh.clone(), problem.source(), c.quadrature_order, &opts)?;
            Ok((tensors, field))
        })
        .collect::<Result<_>>()?;
    let mut sum = vec![0.0; mesh.n_nodes()];
    for (_, field) in &per_sample {
        for (acc, v) in sum.iter_mut().zip(&field.values) {
            *acc += v;
        }
    }
    let inv = 1.0 / per_sample.len() as f64;
    let mean = SolutionField::new(
        mesh,
        sum.into_iter().map(|v| v * inv).collect(),
        FieldRole::ReferenceMean,
    )?;
    let mut tensors = Vec::with_capacity(per_sample.len() * nb * nb);
    let mut samples = Vec::new();
    for (t, f) in per_sample {
        tensors.extend(t);
        if keep_samples {
            samples.push(f);
        }
    }
    Ok(ReferenceResult {
        mean,
        samples,
        tensors,
    })
}

/// Higher modes of the expansion `u = u0 + delta u1 + delta^2 u2 + ...`:
/// `(E grad u_n, grad v) = -(A1 grad u_{n-1}, grad v)`.
///
/// The operator with the mean tensor is assembled once and shared by all modes.
#[derive(Debug, Clone)]
pub struct ModeSolver {
    pattern: StiffnessPattern,
    stiffness: Arc<SparseMatrix>,
    a1: Vec<Mat2>,
    opts: CgOptions,
}

impl ModeSolver {
    pub fn new(mean: Mat2, a1: &BlockField, mesh: Arc<TriMesh>, opts: CgOptions) -> Result<Self> {
        let a1 = a1.per_triangle(&mesh)?;
        let pattern = StiffnessPattern::new(mesh.clone(), DofMap::dirichlet(&mesh))?;
        let stiffness = Arc::new(pattern.assemble(&vec![mean; mesh.n_triangles()])?);
        Ok(Self {
            pattern,
            stiffness,
            a1,
            opts,
        })
    }

    pub fn stiffness(&self) -> &Arc<SparseMatrix> {
        &self.stiffness
    }

    pub fn mode0<F: Fn(Point) -> f64>(&self, f: F, order: usize) -> Result<SolutionField> {
        let b = self.pattern.load(f, order)?;
        let (values, _) = solve_dirichlet(&self.pattern, &self.stiffness, &b, &self.opts, "mode 0")?;
        SolutionField::new(self.pattern.mesh().clone(), values, FieldRole::Mode(0))
    }

    /// Mode `n` from mode `n - 1`.
    pub fn mode_n(&self, n: usize, prev: &SolutionField) -> Result<SolutionField> {
        if n == 0 {
            return Err(Error::InvalidInput("mode_n needs n >= 1".into()));
        }
        let b = self.pattern.divergence_rhs(&self.a1, &prev.values)?;
        let (values, _) =
            solve_dirichlet(&self.pattern, &self.stiffness, &b, &self.opts, &format!("mode {n}"))?;
        SolutionField::new(self.pattern.mesh().clone(), values, FieldRole::Mode(n))
    }

    /// Modes `0..=n_max`.
    pub fn modes<F: Fn(Point) -> f64>(&self, f: F, order: usize, n_max: usize) -> Result<Vec<SolutionField>> {
        let mut out = vec![self.mode0(f, order)?];
        for n in 1..=n_max {
            let next = self.mode_n(n, &out[n - 1])?;
            out.push(next);
        }
        Ok(out)
    }
}

/// `sum_n delta^n u_n`.
pub fn mode_partial_sum(modes: &[SolutionField], delta: f64) -> Result<SolutionField> {
    let mut acc = modes[0].clone();
    let mut w = 1.0;
    for m in &modes[1..] {
        w *= delta;
        acc = acc.combine(1.0, m, w)?;
    }
    Ok(acc)
}

/// Block field of the decomposition's `A1`.
pub fn a1_field(decomposition: &PerturbationDecomposition, blocks_per_side: usize) -> Result<BlockField> {
    let tensors: Vec<SampleTensor> = decomposition
        .a1_blocks
        .iter()
        .map(|(k, m)| SampleTensor {
            sample_index: 0,
            block: *k,
            tensor: *m,
            cg_iterations: 0,
        })
        .collect();
    BlockField::from_tensors(blocks_per_side, &tensors)
}

/// Fine-mesh solve of the original oscillating problem for one realization over D.
pub fn direct_fine_solve(
    problem: &Problem,
    realization: Arc<SampleRealization>,
    n_fine: usize,
) -> Result<(SolutionField, LinearSolveReport)> {
    let c = &problem.config;
    let minimum = (4.0 / c.epsilon).ceil() as usize;
    if n_fine < minimum {
        return Err(Error::config(
            "n_fine",
            None,
            format!(
                "n_fine = {n_fine} does not resolve eps = {}; use at least {minimum} (16/eps = {} recommended)",
                c.epsilon,
                (16.0 / c.epsilon).round()
            ),
        ));
    }
    if !realization.cells.contains_range(&problem.domain_cells()) {
        return Err(Error::Structural("direct solve needs a realization covering D".into()));
    }
    let field = problem.field_of(realization);
    let mesh = problem.unit_mesh(n_fine)?;
    let coeffs = crate::fem::triangle_coefficients(&mesh, c.quadrature_order, |x| field.coefficient_at(x))?;
    let pattern = StiffnessPattern::new(mesh.clone(), DofMap::dirichlet(&mesh))?;
    let k = pattern.assemble(&coeffs)?;
    let b = pattern.load(problem.source(), c.quadrature_order)?;
    let (values, report) = solve_dirichlet(&pattern, &k, &b, &problem.cg_options(), "direct solve")?;
    Ok((SolutionField::new(mesh, values, FieldRole::DirectFine)?, report))
}

/// Average of direct fine solves over the first `count` samples.
pub fn direct_average(problem: &Problem, count: usize) -> Result<SolutionField> {
    let n_fine = problem.config.n_fine;
    let fields: Vec<SolutionField> = (0..count as u64)
        .into_par_iter()
        .map(|s| {
            let real = problem.realize(s, problem.domain_cells())?;
            Ok(direct_fine_solve(problem, real, n_fine)?.0)
        })
        .collect::<Result<_>>()?;
    let mut acc = fields[0].clone();
    for f in &fields[1..] {
        acc = acc.combine(1.0, f, 1.0)?;
    }
    let mut mean = acc.combine(1.0 / count as f64, &fields[0], 0.0)?;
    mean.role = FieldRole::DirectFine;
    Ok(mean)
}

/// Tabular study output with a log-log fit of observable against abscissa.
#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub name: String,
    pub abscissa_name: String,
    pub observable_name: String,
    pub abscissa: Vec<f64>,
    pub observable: Vec<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// The observable vanished somewhere, so no fit exists.
    pub degenerate: bool,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl StudyResult {
    fn new(
        name: &str,
        abscissa_name: &str,
        observable_name: &str,
        header: &[&str],
        rows: Vec<Vec<f64>>,
        abscissa: Vec<f64>,
        observable: Vec<f64>,
    ) -> Self {
        let fit = log_log_fit(&abscissa, &observable);
        Self {
            name: name.into(),
            abscissa_name: abscissa_name.into(),
            observable_name: observable_name.into(),
            degenerate: fit.is_none(),
            slope: fit.map(|f| f.0),
            intercept: fit.map(|f| f.1),
            abscissa,
            observable,
            header: header.iter().map(|s| s.to_string()).collect(),
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Least-squares line through `(ln x, ln y)`; `None` if any value is not positive.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// `Var(a11)` of block-equivalent tensors on standalone cells of growing size `M`.
pub fn variance_decay_study(problem: &Problem) -> Result<StudyResult> {
    let c = &problem.config;
    if c.m_list.len() < 2 || !strictly_increasing(&c.m_list) {
        return Err(Error::config("M_list", None, "need at least two increasing block sizes"));
    }
    if c.samples < 2 {
        return Err(Error::config("L", None, "variance needs L >= 2"));
    }
    let samples: Vec<u64> = (0..c.samples as u64).collect();
    let mut rows = Vec::new();
    let mut var11 = Vec::new();
    for &m in &c.m_list {
        let solver = problem.cell_solver(m)?;
        let stats = stats_of(&first_block_tensors(problem, &solver, &samples)?)?;
        let delta = stats.variance.entries().iter().map(|v| v.sqrt()).fold(0.0, f64::max);
        rows.push(vec![
            m as f64,
            stats.mean.get(0, 0),
            stats.variance.get(0, 0),
            delta,
        ]);
        var11.push(stats.variance.get(0, 0));
    }
    let ms: Vec<f64> = c.m_list.iter().map(|&m| m as f64).collect();
    Ok(StudyResult::new(
        "variance_decay",
        "M",
        "var_a11",
        &["M", "mean_a11", "var_a11", "delta"],
        rows,
        ms,
        var11,
    ))
}

/// `E ||u(s) - u0||_{H1}^2` for block tensors `mean + s * delta * A1`.
pub fn delta_scaling_study(problem: &Problem) -> Result<StudyResult> {
    let c = &problem.config;
    let mut scales = c.scale_list.clone();
    scales.sort_by(|a, b| a.partial_cmp(b).expect("finite scales"));
    scales.dedup();
    if scales.len() < 2 {
        return Err(Error::config("scale_list", None, "need at least two scales"));
    }
    let solver = problem.cell_solver(c.m)?;
    let stat_samples: Vec<u64> = (0..c.samples as u64).collect();
    let stats = stats_of(&first_block_tensors(problem, &solver, &stat_samples)?)?;
    let mesh = problem.unit_mesh(c.n1)?;
    let opts = problem.cg_options();
    let nb = c.blocks_per_side();
    let (u0, _) = solve_constant_tensor(stats.mean, mesh.clone(), problem.source(), c.quadrature_order, &opts)?;
    let base = c.samples as u64;
    let per_sample: Vec<Vec<f64>> = (base..base + c.delta_samples as u64)
        .into_par_iter()
        .map(|s| {
            let tensors = all_block_tensors(problem, &solver, s)?;
            let d = decompose(problem, &tensors, &stats)?;
            if d.degenerate {
                return Err(Error::InvalidInput(
                    "delta = 0: the field is deterministic, nothing to scale".into(),
                ));
            }
            let a1 = a1_field(&d, nb)?;
            scales
                .iter()
                .map(|&scale| {
                    let blocks = a1.map(|a| d.mean_matrix + a * (scale * d.delta));
                    let (u, _) = solve_equivalent_sample(
                        &blocks,
                        mesh.clone(),
                        problem.source(),
                        c.quadrature_order,
                        &opts,
                    )?;
                    Ok(h1_norm(&u.combine(1.0, &u0, -1.0)?).powi(2))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = per_sample.len() as f64;
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for (j, &s) in scales.iter().enumerate() {
        let vals: Vec<f64> = per_sample.iter().map(|v| v[j]).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let se = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            f64::NAN
        };
        rows.push(vec![s, mean, se]);
        means.push(mean);
    }
    Ok(StudyResult::new(
        "delta_scaling",
        "scale",
        "mean_h1_error_sq",
        &["scale", "mean_h1_error_sq", "std_error"],
        rows,
        scales,
        means,
    ))
}

/// `Var(mu_L)` over independent replicates with nested sample subsets.
pub fn sample_count_study(problem: &Problem) -> Result<StudyResult> {
    let c = &problem.config;
    if c.l_list.is_empty() || !strictly_increasing(&c.l_list) {
        return Err(Error::config("L_list", None, "need increasing sample counts"));
    }
    if c.replicates < 2 {
        return Err(Error::config("replicates", None, "need at least two replicates"));
    }
    let l_max = *c.l_list.last().expect("non-empty");
    let solver = problem.cell_solver(c.m)?;
    let mut rows = Vec::new();
    let mut var_mu = Vec::new();
    let mut mu_by_rep: Vec<Vec<f64>> = Vec::new();
    for r in 0..c.replicates {
        let samples: Vec<u64> = (0..l_max as u64).map(|i| (r * l_max) as u64 + i).collect();
        let tensors = first_block_tensors(problem, &solver, &samples)?;
        let mut acc = StatsAccumulator::new();
        let mut mus = Vec::new();
        let mut next = c.l_list.iter().peekable();
        for (i, t) in tensors.iter().enumerate() {
            acc.push(t.tensor);
            if next.peek() == Some(&&(i + 1)) {
                mus.push(acc.mean().get(0, 0));
                next.next();
            }
        }
        mu_by_rep.push(mus);
    }
    let reps = c.replicates as f64;
    for (j, &l) in c.l_list.iter().enumerate() {
        let vals: Vec<f64> = mu_by_rep.iter().map(|m| m[j]).collect();
        let mean = vals.iter().sum::<f64>() / reps;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1.0);
        rows.push(vec![l as f64, mean, var, reps]);
        var_mu.push(var);
    }
    let ls: Vec<f64> = c.l_list.iter().map(|&l| l as f64).collect();
    Ok(StudyResult::new(
        "sample_count",
        "L",
        "var_mu11",
        &["L", "mean_mu11", "var_mu11", "replicates"],
        rows,
        ls,
        var_mu,
    ))
}

/// One paired comparison of `mu_L` (L = N^2 single cells) and `A*_N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table1Row {
    pub l: usize,
    pub n: usize,
    pub replicate: usize,
    pub mu11: f64,
    pub astar11: f64,
    pub error: f64,
}

/// Paired comparison: the `N x N` cells of one realization serve both as the
/// `L = N^2` single-cell samples and as the periodization cell.
pub fn table1_comparison(problem: &Problem, n_list: &[usize], replicates: usize) -> Result<Vec<Table1Row>> {
    let c = &problem.config;
    let unit = problem.cell_solver(1)?;
    let mut rows = Vec::new();
    for &n in n_list {
        for r in 0..replicates {
            let sample = ((r as u64) << 32) | n as u64;
            let field = problem.field(sample, CellRange::square(n))?;
            let cells: Vec<(i64, i64)> = CellRange::square(n).cells().collect();
            let tensors: Vec<Mat2> = cells
                .par_iter()
                .map(|&k| Ok(unit.solve_block(&field, k)?.tensor))
                .collect::<Result<_>>()?;
            let mut acc = StatsAccumulator::new();
            tensors.iter().for_each(|t| acc.push(*t));
            let mu11 = acc.mean().get(0, 0);
            let astar = periodization_matrix(&field, n, c.n_cell, c.quadrature_order, problem.cg_options())?;
            let astar11 = astar.m.get(0, 0);
            rows.push(Table1Row {
                l: n * n,
                n,
                replicate: r,
                mu11,
                astar11,
                error: (mu11 - astar11).abs() / astar11,
            });
        }
    }
    Ok(rows)
}

pub fn table1_csv(rows: &[Table1Row]) -> String {
    let mut out = String::from("L,N,replicate,mu11,astar11,error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:?},{:?},{:?}\n",
            r.l, r.n, r.replicate, r.mu11, r.astar11, r.error
        ));
    }
    out
}

/// Mean and variance of `mu_L` over independent sets of `L` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SetSummary {
    pub sets: usize,
    pub samples_per_set: usize,
    /// Mean over sets of `mu11`.
    pub expectation_mu11: f64,
    /// Mean over sets of the per-sample variance `sigma11` within each set.
    pub mean_sample_variance11: f64,
    /// Variance of `mu11` across sets.
    pub variance_of_mu11: f64,
    pub failed_samples: usize,
}

/// `sets` disjoint sets of `L` single-block samples.
pub fn expectation_variance_sets(problem: &Problem) -> Result<SetSummary> {
    let c = &problem.config;
    let solver = problem.cell_solver(c.m)?;
    let mut mus = Vec::new();
    let mut vars = Vec::new();
    for set in 0..c.sets {
        let samples: Vec<u64> = (0..c.samples as u64).map(|i| (set * c.samples) as u64 + i).collect();
        let stats = stats_of(&first_block_tensors(problem, &solver, &samples)?)?;
        mus.push(stats.mean.get(0, 0));
        vars.push(stats.variance.get(0, 0));
    }
    let k = mus.len() as f64;
    let expectation = mus.iter().sum::<f64>() / k;
    let var_mu = if mus.len() > 1 {
        mus.iter().map(|m| (m - expectation).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        f64::NAN
    };
    Ok(SetSummary {
        sets: c.sets,
        samples_per_set: c.samples,
        expectation_mu11: expectation,
        mean_sample_variance11: vars.iter().sum::<f64>() / k,
        variance_of_mu11: var_mu,
        failed_samples: 0,
    })
}
