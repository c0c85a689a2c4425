//! P1 finite elements on structured triangulations.
//!
//! Coefficients enter assembly only through their per-triangle quadrature
//! average `A_T = sum_q w_q A(x_q)`: with P1 gradients constant on each
//! triangle this is exact for the stiffness, the cell right-hand sides and
//! the equivalent-tensor integral alike, so all three stay consistent.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cg_solve, cg_solve_meanzero, CgOptions, LinearSolveReport, SparseMatrix};
use crate::mesh::{evaluate_field, locate_point, periodic_pairing, PeriodicMap, Point, TriMesh};
use crate::tensor::Mat2;

/// Barycentric point and weight (weights sum to 1).
pub type QuadPoint = ([f64; 3], f64);

const CENTROID_RULE: [QuadPoint; 1] = [([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1.0)];

/// Interior three-point rule, exact for quadratics. Its points stay off the
/// element edges, so grid-aligned material interfaces are never sampled.
const INTERIOR_3_RULE: [QuadPoint; 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

/// Six-point degree-4 rule used for error norms.
const DEGREE_4_RULE: [QuadPoint; 6] = [
    ([0.108103018168070, 0.445948490915965, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.108103018168070, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.445948490915965, 0.108103018168070], 0.223381589678011),
    ([0.816847572980459, 0.091576213509771, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.816847572980459, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.091576213509771, 0.816847572980459], 0.109951743655322),
];

/// Quadrature rule for coefficient sampling: order 1 (centroid) or 2.
pub fn quadrature_rule(order: usize) -> Result<&'static [QuadPoint]> {
    match order {
        1 => Ok(&CENTROID_RULE),
        2 => Ok(&INTERIOR_3_RULE),
        4 => Ok(&DEGREE_4_RULE),
        _ => Err(Error::InvalidInput(format!(
            "quadrature order {order} not supported (use 1 or 2)"
        ))),
    }
}

/// Per-triangle quadrature average of a matrix coefficient.
pub fn triangle_coefficients<F>(mesh: &TriMesh, order: usize, coeff: F) -> Result<Vec<Mat2>>
where
    F: Fn(Point) -> Result<Mat2>,
{
    let rule = quadrature_rule(order)?;
    (0..mesh.n_triangles())
        .map(|t| {
            let mut acc = Mat2::ZERO;
            for &(bary, w) in rule {
                let a = coeff(mesh.point_at(t, bary))?;
                if a.asymmetry() > 1e-10 * a.max_abs().max(1.0) {
                    return Err(Error::InvalidInput(format!(
                        "nonsymmetric coefficient {a:?} in triangle {t}"
                    )));
                }
                acc = acc + a * w;
            }
            Ok(acc)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DofKind {
    Full,
    Dirichlet,
    Periodic,
}

/// Node to degree-of-freedom map; `None` marks an eliminated node.
#[derive(Debug, Clone)]
pub struct DofMap {
    kind: DofKind,
    dof_of: Vec<Option<usize>>,
    n_dofs: usize,
}

impl DofMap {
    pub fn full(mesh: &TriMesh) -> Self {
        let n = mesh.n_nodes();
        Self {
            kind: DofKind::Full,
            dof_of: (0..n).map(Some).collect(),
            n_dofs: n,
        }
    }

    /// Interior nodes only, numbered in node order.
    pub fn dirichlet(mesh: &TriMesh) -> Self {
        let mut next = 0;
        let dof_of = (0..mesh.n_nodes())
            .map(|v| {
                if mesh.is_boundary(v) {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect();
        Self {
            kind: DofKind::Dirichlet,
            dof_of,
            n_dofs: next,
        }
    }

    pub fn periodic(map: &PeriodicMap) -> Self {
        Self {
            kind: DofKind::Periodic,
            dof_of: map.reduced_indices().iter().map(|&r| Some(r)).collect(),
            n_dofs: map.n_reduced(),
        }
    }

    pub fn kind(&self) -> DofKind {
        self.kind
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_nodes(&self) -> usize {
        self.dof_of.len()
    }

    pub fn dof(&self, node: usize) -> Option<usize> {
        self.dof_of[node]
    }

    /// Nodal values from dof values; eliminated nodes get zero.
    pub fn expand(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_dofs {
            return Err(Error::DimensionMismatch {
                expected: self.n_dofs,
                got: x.len(),
            });
        }
        Ok(self.dof_of.iter().map(|d| d.map_or(0.0, |k| x[k])).collect())
    }

    /// Sum nodal contributions onto dofs (dropping eliminated nodes).
    pub fn accumulate(&self, nodal: &[f64]) -> Result<Vec<f64>> {
        if nodal.len() != self.dof_of.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dof_of.len(),
                got: nodal.len(),
            });
        }
        let mut out = vec![0.0; self.n_dofs];
        for (v, d) in self.dof_of.iter().enumerate() {
            if let Some(k) = d {
                out[*k] += nodal[v];
            }
        }
        Ok(out)
    }
}

/// Reduced linear system with the map that produced it.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub stiffness: SparseMatrix,
    pub load: Vec<f64>,
    pub dofs: DofMap,
    pub quadrature_order: usize,
}

const UNUSED: usize = usize::MAX;

/// Cached CSR sparsity and element scatter for one mesh and dof map.
///
/// Built once, then reused for every coefficient sample on that mesh.
#[derive(Debug, Clone)]
pub struct StiffnessPattern {
    mesh: Arc<TriMesh>,
    dofs: DofMap,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    scatter: Vec<[usize; 9]>,
    areas: Vec<f64>,
    grads: Vec<[[f64; 2]; 3]>,
}

impl StiffnessPattern {
    pub fn new(mesh: Arc<TriMesh>, dofs: DofMap) -> Result<Self> {
        if dofs.n_nodes() != mesh.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: mesh.n_nodes(),
                got: dofs.n_nodes(),
            });
        }
        let n = dofs.n_dofs();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for tri in mesh.triangles() {
            for &a in tri {
                let Some(ra) = dofs.dof(a) else { continue };
                for &b in tri {
                    if let Some(cb) = dofs.dof(b) {
                        rows[ra].push(cb);
                    }
                }
            }
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_indices.extend_from_slice(row);
            row_offsets.push(col_indices.len());
        }
        let slot = |r: usize, c: usize| -> usize {
            let cols = &col_indices[row_offsets[r]..row_offsets[r + 1]];
            row_offsets[r] + cols.binary_search(&c).expect("pattern contains element pair")
        };
        let scatter = mesh
            .triangles()
            .iter()
            .map(|tri| {
                let mut s = [UNUSED; 9];
                for a in 0..3 {
                    for b in 0..3 {
                        if let (Some(r), Some(c)) = (dofs.dof(tri[a]), dofs.dof(tri[b])) {
                            s[3 * a + b] = slot(r, c);
                        }
                    }
                }
                s
            })
            .collect();
        let areas = (0..mesh.n_triangles()).map(|t| mesh.area(t)).collect();
        let grads = (0..mesh.n_triangles()).map(|t| mesh.gradients(t)).collect();
        Ok(Self {
            mesh,
            dofs,
            row_offsets,
            col_indices,
            scatter,
            areas,
            grads,
        })
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn gradients(&self, t: usize) -> &[[f64; 2]; 3] {
        &self.grads[t]
    }

    fn check_coeffs(&self, coeffs: &[Mat2]) -> Result<()> {
        if coeffs.len() != self.areas.len() {
            return Err(Error::DimensionMismatch {
                expected: self.areas.len(),
                got: coeffs.len(),
            });
        }
        Ok(())
    }

    /// Stiffness matrix for per-triangle coefficients.
    pub fn assemble(&self, coeffs: &[Mat2]) -> Result<SparseMatrix> {
        self.check_coeffs(coeffs)?;
        let mut values = vec![0.0; self.col_indices.len()];
        for (t, a) in coeffs.iter().enumerate() {
            let g = &self.grads[t];
            let area = self.areas[t];
            let ag = [a.mul_vec(g[0]), a.mul_vec(g[1]), a.mul_vec(g[2])];
            let s = &self.scatter[t];
            for i in 0..3 {
                for j in 0..3 {
                    let k = s[3 * i + j];
                    if k != UNUSED {
                        values[k] += area * (g[i][0] * ag[j][0] + g[i][1] * ag[j][1]);
                    }
                }
            }
        }
        SparseMatrix::from_csr(
            self.dofs.n_dofs(),
            self.dofs.n_dofs(),
            self.row_offsets.clone(),
            self.col_indices.clone(),
            values,
        )
    }

    /// `b_v = -sum_T |T| (A_T e_dir) . grad v`.
    pub fn cell_rhs(&self, coeffs: &[Mat2], dir: usize) -> Result<Vec<f64>> {
        self.check_coeffs(coeffs)?;
        let mut e = [0.0; 2];
        e[dir] = 1.0;
        let fluxes: Vec<[f64; 2]> = coeffs.iter().map(|a| a.mul_vec(e)).collect();
        Ok(self.flux_load(&fluxes))
    }

    /// `b_v = -sum_T |T| (B_T grad u) . grad v` for nodal `u` on this mesh.
    pub fn divergence_rhs(&self, coeffs: &[Mat2], u_nodal: &[f64]) -> Result<Vec<f64>> {
        self.check_coeffs(coeffs)?;
        if u_nodal.len() != self.mesh.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: self.mesh.n_nodes(),
                got: u_nodal.len(),
            });
        }
        let tris = self.mesh.triangles();
        let fluxes: Vec<[f64; 2]> = coeffs
            .iter()
            .enumerate()
            .map(|(t, b)| b.mul_vec(p1_gradient(&self.grads[t], &tris[t], u_nodal)))
            .collect();
        Ok(self.flux_load(&fluxes))
    }

    fn flux_load(&self, fluxes: &[[f64; 2]]) -> Vec<f64> {
        let mut b = vec![0.0; self.dofs.n_dofs()];
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let g = &self.grads[t];
            let q = fluxes[t];
            for a in 0..3 {
                if let Some(r) = self.dofs.dof(tri[a]) {
                    b[r] -= self.areas[t] * (q[0] * g[a][0] + q[1] * g[a][1]);
                }
            }
        }
        b
    }

    /// Load vector `sum_T sum_q w_q |T| f(x_q) phi_v(x_q)` on the dofs.
    pub fn load<F: Fn(Point) -> f64>(&self, f: F, order: usize) -> Result<Vec<f64>> {
        let nodal = assemble_load(&self.mesh, f, order)?;
        self.dofs.accumulate(&nodal)
    }
}

fn p1_gradient(g: &[[f64; 2]; 3], tri: &[usize; 3], u: &[f64]) -> [f64; 2] {
    let mut d = [0.0; 2];
    for a in 0..3 {
        d[0] += u[tri[a]] * g[a][0];
        d[1] += u[tri[a]] * g[a][1];
    }
    d
}

/// Stiffness on the full node set.
pub fn assemble_stiffness<F>(mesh: &TriMesh, coeff: F, order: usize) -> Result<SparseMatrix>
where
    F: Fn(Point) -> Mat2,
{
    let coeffs = triangle_coefficients(mesh, order, |p| Ok(coeff(p)))?;
    let pattern = StiffnessPattern::new(Arc::new(mesh.clone()), DofMap::full(mesh))?;
    let k = pattern.assemble(&coeffs)?;
    if !k.is_symmetric(1e-12 * k.max_abs()) {
        return Err(Error::Numerical("assembled stiffness is not symmetric".into()));
    }
    Ok(k)
}

/// Load vector on the full node set.
pub fn assemble_load<F>(mesh: &TriMesh, f: F, order: usize) -> Result<Vec<f64>>
where
    F: Fn(Point) -> f64,
{
    let rule = quadrature_rule(order)?;
    let mut b = vec![0.0; mesh.n_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.area(t);
        for &(bary, w) in rule {
            let fx = f(mesh.point_at(t, bary)) * w * area;
            for a in 0..3 {
                b[tri[a]] += fx * bary[a];
            }
        }
    }
    Ok(b)
}

/// Cell-problem right-hand side on the full node set for direction `dir` (0 or 1).
pub fn assemble_cell_rhs<F>(mesh: &TriMesh, coeff: F, dir: usize, order: usize) -> Result<Vec<f64>>
where
    F: Fn(Point) -> Mat2,
{
    if dir > 1 {
        return Err(Error::InvalidInput(format!("direction {dir} is not 0 or 1")));
    }
    let coeffs = triangle_coefficients(mesh, order, |p| Ok(coeff(p)))?;
    let pattern = StiffnessPattern::new(Arc::new(mesh.clone()), DofMap::full(mesh))?;
    pattern.cell_rhs(&coeffs, dir)
}

fn reduce(k: &SparseMatrix, f: &[f64], dofs: DofMap, order: usize) -> Result<AssembledSystem> {
    if k.n_rows() != dofs.n_nodes() || k.n_cols() != dofs.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: dofs.n_nodes(),
            got: k.n_rows(),
        });
    }
    let mut triplets = Vec::with_capacity(k.nnz());
    for r in 0..k.n_rows() {
        let Some(rr) = dofs.dof(r) else { continue };
        for (c, v) in k.row(r) {
            if let Some(cc) = dofs.dof(c) {
                triplets.push((rr, cc, v));
            }
        }
    }
    let stiffness = SparseMatrix::from_triplets(dofs.n_dofs(), dofs.n_dofs(), &triplets)?;
    let load = dofs.accumulate(f)?;
    Ok(AssembledSystem {
        stiffness,
        load,
        dofs,
        quadrature_order: order,
    })
}

/// Eliminate boundary rows and columns (homogeneous Dirichlet data).
pub fn apply_dirichlet_zero(k: &SparseMatrix, f: &[f64], mesh: &TriMesh) -> Result<AssembledSystem> {
    reduce(k, f, DofMap::dirichlet(mesh), 0)
}

/// Accumulate slave rows and columns onto their periodic masters.
pub fn apply_periodic(k: &SparseMatrix, f: &[f64], map: &PeriodicMap) -> Result<AssembledSystem> {
    reduce(k, f, DofMap::periodic(map), 0)
}

/// Lumped-mass weights accumulated onto the dofs.
pub fn dof_weights(mesh: &TriMesh, dofs: &DofMap) -> Result<Vec<f64>> {
    dofs.accumulate(&mesh.lumped_mass())
}

fn require_converged(report: LinearSolveReport, what: &str) -> Result<()> {
    if report.converged {
        Ok(())
    } else {
        Err(Error::solver(
            format!(
                "{what}: CG did not converge in {} iterations (residual {:.3e})",
                report.iterations, report.final_residual_norm
            ),
            Some(report),
        ))
    }
}

/// Solve the Dirichlet system and expand to nodal values.
pub fn solve_dirichlet(
    pattern: &StiffnessPattern,
    stiffness: &SparseMatrix,
    load: &[f64],
    opts: &CgOptions,
    what: &str,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    let (x, report) = cg_solve(stiffness, load, opts)?;
    require_converged(report, what)?;
    Ok((pattern.dofs().expand(&x)?, report))
}

/// Solve a periodic system with weighted-mean-zero normalization.
pub fn solve_periodic(
    stiffness: &SparseMatrix,
    load: &[f64],
    weights: &[f64],
    opts: &CgOptions,
    what: &str,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    let (x, report) = cg_solve_meanzero(stiffness, load, weights, opts)?;
    require_converged(report, what)?;
    Ok((x, report))
}

/// Dirichlet problem `-div(A grad u) = f` on the whole mesh, with `A` given per triangle.
pub fn solve_dirichlet_problem<F: Fn(Point) -> f64>(
    mesh: Arc<TriMesh>,
    coeffs: &[Mat2],
    f: F,
    order: usize,
    opts: &CgOptions,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    let dofs = DofMap::dirichlet(&mesh);
    let pattern = StiffnessPattern::new(mesh, dofs)?;
    let k = pattern.assemble(coeffs)?;
    let b = pattern.load(f, order)?;
    solve_dirichlet(&pattern, &k, &b, opts, "Dirichlet solve")
}

/// Which quantity a solution field represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    FirstMode,
    EquivalentSample,
    ReferenceMean,
    DirectFine,
    Mode(usize),
    Other,
}

/// Nodal values of a P1 function on a mesh.
#[derive(Debug, Clone)]
pub struct SolutionField {
    pub mesh: Arc<TriMesh>,
    pub values: Vec<f64>,
    pub role: FieldRole,
}

impl SolutionField {
    pub fn new(mesh: Arc<TriMesh>, values: Vec<f64>, role: FieldRole) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: mesh.n_nodes(),
                got: values.len(),
            });
        }
        Ok(Self { mesh, values, role })
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate<F: Fn(Point) -> f64>(mesh: Arc<TriMesh>, f: F, role: FieldRole) -> Self {
        let values = mesh.nodes().iter().map(|&p| f(p)).collect();
        Self { mesh, values, role }
    }

    pub fn evaluate(&self, p: Point) -> Result<f64> {
        evaluate_field(&self.mesh, &self.values, p)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(self)
    }

    pub fn h1_seminorm(&self) -> f64 {
        h1_seminorm(self)
    }

    fn same_mesh(&self, other: &SolutionField) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh)
            || (self.mesh.n_nodes() == other.mesh.n_nodes()
                && self.mesh.subdivisions_per_unit() == other.mesh.subdivisions_per_unit()
                && self.mesh.domain().approx_eq(&other.mesh.domain(), 1e-12))
    }

    /// Pointwise combination `a * self + b * other` on a shared mesh.
    pub fn combine(&self, a: f64, other: &SolutionField, b: f64) -> Result<SolutionField> {
        if !self.same_mesh(other) {
            return Err(Error::InvalidInput("fields live on different meshes".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(SolutionField {
            mesh: self.mesh.clone(),
            values,
            role: FieldRole::Other,
        })
    }
}

/// Exact L2 norm of the P1 function.
pub fn l2_norm(field: &SolutionField) -> f64 {
    let mesh = &field.mesh;
    let u = &field.values;
    let mut acc = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (a, b, c) = (u[tri[0]], u[tri[1]], u[tri[2]]);
        let s = a + b + c;
        acc += mesh.area(t) / 12.0 * (a * a + b * b + c * c + s * s);
    }
    acc.sqrt()
}

/// Exact H1 seminorm of the P1 function.
pub fn h1_seminorm(field: &SolutionField) -> f64 {
    let mesh = &field.mesh;
    let mut acc = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = p1_gradient(&mesh.gradients(t), tri, &field.values);
        acc += mesh.area(t) * (g[0] * g[0] + g[1] * g[1]);
    }
    acc.sqrt()
}

/// Full H1 norm.
pub fn h1_norm(field: &SolutionField) -> f64 {
    (l2_norm(field).powi(2) + h1_seminorm(field).powi(2)).sqrt()
}

/// `||a - b||_{L2}` for fields on possibly different meshes over one domain.
///
/// Integrates with a degree-4 rule on the finer mesh, evaluating the coarser
/// field by point location.
pub fn l2_error_cross_mesh(a: &SolutionField, b: &SolutionField) -> Result<f64> {
    if !a.mesh.domain().approx_eq(&b.mesh.domain(), 1e-12) {
        return Err(Error::InvalidInput("fields live on different domains".into()));
    }
    if a.same_mesh(b) {
        return Ok(l2_norm(&a.combine(1.0, b, -1.0)?));
    }
    let (fine, coarse) = if a.mesh.n_triangles() >= b.mesh.n_triangles() {
        (a, b)
    } else {
        (b, a)
    };
    let mesh = &fine.mesh;
    let mut acc = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.area(t);
        for &(bary, w) in &DEGREE_4_RULE {
            let uf: f64 = (0..3).map(|k| bary[k] * fine.values[tri[k]]).sum();
            let p = mesh.point_at(t, bary);
            let (ct, cb) = locate_point(&coarse.mesh, p)?;
            let ctri = coarse.mesh.triangles()[ct];
            let uc: f64 = (0..3).map(|k| cb[k] * coarse.values[ctri[k]]).sum();
            acc += w * area * (uf - uc) * (uf - uc);
        }
    }
    Ok(acc.sqrt())
}

/// `||u - reference||_{L2} / ||reference||_{L2}`.
pub fn relative_error(u: &SolutionField, reference: &SolutionField) -> Result<f64> {
    let denom = l2_norm(reference);
    if !(denom > 0.0) {
        return Err(Error::InvalidInput("reference field has zero L2 norm".into()));
    }
    Ok(l2_error_cross_mesh(u, reference)? / denom)
}

/// Periodic cell mesh helpers bundled for reuse.
pub fn periodic_dofs(mesh: &TriMesh) -> Result<DofMap> {
    Ok(DofMap::periodic(&periodic_pairing(mesh)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{spmv, DEFAULT_TOL};
    use crate::mesh::{build_structured_mesh, Rect};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit(n: usize) -> Arc<TriMesh> {
        Arc::new(build_structured_mesh(Rect::unit(), n).unwrap())
    }

    #[test]
    fn quadrature_rules_integrate_polynomials() {
        // Reference-triangle monomial integrals relative to area: E[l1^a l2^b]
        // = a! b! 2! / (a + b + 2)!
        let fact = |n: u32| (1..=n).product::<u32>().max(1) as f64;
        for (order, degree) in [(1usize, 1u32), (2, 2), (4, 4)] {
            let rule = quadrature_rule(order).unwrap();
            assert_relative_eq!(rule.iter().map(|q| q.1).sum::<f64>(), 1.0, epsilon = 1e-12);
            for a in 0..=degree {
                for b in 0..=(degree - a) {
                    let exact = fact(a) * fact(b) * 2.0 / fact(a + b + 2);
                    let approx: f64 = rule
                        .iter()
                        .map(|(l, w)| w * l[0].powi(a as i32) * l[1].powi(b as i32))
                        .sum();
                    assert_relative_eq!(approx, exact, epsilon = 1e-12);
                }
            }
        }
        assert!(quadrature_rule(3).is_err());
    }

    #[test]
    fn identity_stiffness_rows_sum_to_zero() {
        let mesh = unit(1);
        let k = assemble_stiffness(&mesh, |_| Mat2::identity(), 2).unwrap();
        assert_eq!(k.n_rows(), 4);
        for r in 0..4 {
            assert!(k.row(r).map(|(_, v)| v).sum::<f64>().abs() < 1e-14);
        }
        let k3 = assemble_stiffness(&mesh, |_| Mat2::scalar(3.0), 2).unwrap();
        for (a, b) in k.values().iter().zip(k3.values()) {
            assert_relative_eq!(3.0 * a, *b, epsilon = 1e-14);
        }
    }

    /// Hand-computed element matrix of the right triangle (0,0),(1,0),(0,1):
    /// gradients (-1,-1), (1,0), (0,1), area 1/2.
    #[test]
    fn right_triangle_element_matrix() {
        let mesh = Arc::new(build_structured_mesh(Rect::unit(), 1).unwrap());
        // Triangle 1 of the n = 1 mesh is (0,0),(1,1),(0,1), right angle at
        // (0,1); map it onto the reference triangle by its gradients.
        let g = mesh.gradients(1);
        let reference = [[0.0, -1.0], [1.0, 0.0], [-1.0, 1.0]];
        for a in 0..3 {
            assert_relative_eq!(g[a][0], reference[a][0], epsilon = 1e-14);
            assert_relative_eq!(g[a][1], reference[a][1], epsilon = 1e-14);
        }
        let expected = [[0.5, 0.0, -0.5], [0.0, 0.5, -0.5], [-0.5, -0.5, 1.0]];
        let pattern = StiffnessPattern::new(mesh.clone(), DofMap::full(&mesh)).unwrap();
        let mut coeffs = vec![Mat2::ZERO; 2];
        coeffs[1] = Mat2::identity();
        let k = pattern.assemble(&coeffs).unwrap();
        let tri = mesh.triangles()[1];
        for a in 0..3 {
            for b in 0..3 {
                assert_relative_eq!(k.get(tri[a], tri[b]), expected[a][b], epsilon = 1e-14);
            }
        }
        let full = assemble_stiffness(&mesh, |_| Mat2::identity(), 1).unwrap();
        assert_relative_eq!(full.get(0, 0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(full.get(0, 1), -0.5, epsilon = 1e-14);
        assert_relative_eq!(full.get(0, 3), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn nonsymmetric_coefficient_rejected() {
        let mesh = unit(2);
        let r = assemble_stiffness(&mesh, |_| Mat2([[1.0, 0.5], [0.0, 1.0]]), 2);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn load_integrates_constants() {
        let mesh = unit(8);
        let b = assemble_load(&mesh, |_| 10.0, 2).unwrap();
        assert!((b.iter().sum::<f64>() - 10.0).abs() < 1e-12);
        assert!(assemble_load(&mesh, |_| 0.0, 2).unwrap().iter().all(|&v| v == 0.0));
        let b = assemble_load(&unit(2), |_| 1.0, 1).unwrap();
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cell_rhs_properties() {
        let mesh = unit(8);
        let map = periodic_pairing(&mesh).unwrap();
        let b = assemble_cell_rhs(&mesh, |_| Mat2::sym(2.0, 0.3, 1.0), 0, 2).unwrap();
        let red = apply_periodic(&SparseMatrix::identity(mesh.n_nodes()), &b, &map).unwrap();
        assert!(red.load.iter().all(|v| v.abs() < 1e-12));

        let checker = |p: Point| {
            let s = ((p[0] * 2.0).floor() + (p[1] * 2.0).floor()) as i64 % 2;
            Mat2::scalar(1.0 + 0.2 * s as f64)
        };
        let b = assemble_cell_rhs(&mesh, checker, 0, 2).unwrap();
        let red = apply_periodic(&SparseMatrix::identity(mesh.n_nodes()), &b, &map).unwrap();
        assert!(red.load.iter().any(|v| v.abs() > 1e-6));
        assert!(red.load.iter().sum::<f64>().abs() < 1e-12);

        // x<->y symmetric coefficient: e2 load is the e1 load on swapped nodes
        let sym = |p: Point| Mat2::scalar(2.0 + (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin());
        let b1 = assemble_cell_rhs(&mesh, sym, 0, 1).unwrap();
        let b2 = assemble_cell_rhs(&mesh, sym, 1, 1).unwrap();
        for j in 0..=8 {
            for i in 0..=8 {
                let v = b1[mesh.node_index(i, j)];
                let w = b2[mesh.node_index(j, i)];
                assert!((v - w).abs() < 1e-12);
            }
        }
        assert!(assemble_cell_rhs(&mesh, sym, 2, 1).is_err());
    }

    #[test]
    fn dirichlet_reduction_sizes() {
        for (n, size) in [(2usize, 1usize), (4, 9)] {
            let mesh = unit(n);
            let k = assemble_stiffness(&mesh, |_| Mat2::identity(), 2).unwrap();
            let f = assemble_load(&mesh, |_| 1.0, 2).unwrap();
            let sys = apply_dirichlet_zero(&k, &f, &mesh).unwrap();
            assert_eq!(sys.stiffness.n_rows(), size);
            assert!(sys.stiffness.is_symmetric(1e-14));
            let (_, rep) = cg_solve(&sys.stiffness, &sys.load, &CgOptions::default()).unwrap();
            assert!(rep.converged);
        }
    }

    #[test]
    fn periodic_reduction_properties() {
        let mesh = unit(4);
        let map = periodic_pairing(&mesh).unwrap();
        let k = assemble_stiffness(&mesh, |p| Mat2::scalar(1.0 + p[0]), 2).unwrap();
        let f = assemble_load(&mesh, |p| p[1], 2).unwrap();
        let sys = apply_periodic(&k, &f, &map).unwrap();
        assert_eq!(sys.stiffness.n_rows(), 16);
        let ones = vec![1.0; 16];
        let k1 = spmv(&sys.stiffness, &ones).unwrap();
        let norm = k1.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-12 * sys.stiffness.max_abs());
        assert_relative_eq!(sys.load.iter().sum::<f64>(), f.iter().sum::<f64>(), epsilon = 1e-14);
        // reduced mass conservation
        let w = dof_weights(&mesh, &sys.dofs).unwrap();
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn pattern_matches_generic_reduction() {
        let mesh = unit(6);
        let coeff = |p: Point| Mat2::sym(2.0 + p[0], 0.1 * p[1], 1.0 + p[1] * p[1]);
        let coeffs = triangle_coefficients(&mesh, 2, |p| Ok(coeff(p))).unwrap();
        let k = assemble_stiffness(&mesh, coeff, 2).unwrap();
        let f = assemble_load(&mesh, |_| 1.0, 2).unwrap();
        for dofs in [DofMap::dirichlet(&mesh), periodic_dofs(&mesh).unwrap()] {
            let generic = reduce(&k, &f, dofs.clone(), 2).unwrap();
            let pattern = StiffnessPattern::new(mesh.clone(), dofs).unwrap();
            let fast = pattern.assemble(&coeffs).unwrap();
            assert_eq!(fast.n_rows(), generic.stiffness.n_rows());
            for r in 0..fast.n_rows() {
                for (c, v) in generic.stiffness.row(r) {
                    assert!((fast.get(r, c) - v).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn assembly_is_linear_in_coefficient() {
        let mesh = unit(5);
        let a1 = |p: Point| Mat2::sym(1.0 + p[0], 0.2, 2.0);
        let a2 = |p: Point| Mat2::sym(0.5, -0.1 * p[1], 1.0 + p[0] * p[1]);
        let k1 = assemble_stiffness(&mesh, a1, 2).unwrap();
        let k2 = assemble_stiffness(&mesh, a2, 2).unwrap();
        let k12 = assemble_stiffness(&mesh, |p| a1(p) + a2(p), 2).unwrap();
        for ((x, y), z) in k1.values().iter().zip(k2.values()).zip(k12.values()) {
            assert!((x + y - z).abs() < 1e-12);
        }
    }

    #[test]
    fn norms_of_simple_fields() {
        let mesh = unit(16);
        let c = SolutionField::interpolate(mesh.clone(), |_| -2.5, FieldRole::Other);
        assert_relative_eq!(c.l2_norm(), 2.5, epsilon = 1e-12);
        assert!(c.h1_seminorm() < 1e-12);
        let x = SolutionField::interpolate(mesh, |p| p[0], FieldRole::Other);
        assert_relative_eq!(x.h1_seminorm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(x.l2_norm(), (1.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        let s = SolutionField::interpolate(unit(64), |p| (PI * p[0]).sin() * (PI * p[1]).sin(), FieldRole::Other);
        assert!((s.l2_norm() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn cross_mesh_errors() {
        let f = |p: Point| (PI * p[0]).sin() * (PI * p[1]).sin();
        let a = SolutionField::interpolate(unit(32), f, FieldRole::Other);
        let b = SolutionField::interpolate(unit(64), f, FieldRole::Other);
        assert_eq!(l2_error_cross_mesh(&a, &a).unwrap(), 0.0);
        let e = l2_error_cross_mesh(&a, &b).unwrap();
        assert!(e > 0.0 && e <= 2.0 * (1.0 / 32.0f64).powi(2));
        assert_relative_eq!(e, l2_error_cross_mesh(&b, &a).unwrap());
        let g = |p: Point| 1.0 + 2.0 * p[0] - p[1];
        let a = SolutionField::interpolate(unit(7), g, FieldRole::Other);
        let b = SolutionField::interpolate(unit(12), g, FieldRole::Other);
        assert!(l2_error_cross_mesh(&a, &b).unwrap() < 1e-12);
        let other = Arc::new(build_structured_mesh(Rect::square(2.0), 4).unwrap());
        let c = SolutionField::interpolate(other, g, FieldRole::Other);
        assert!(l2_error_cross_mesh(&a, &c).is_err());
    }

    #[test]
    fn relative_error_scaling() {
        let r = SolutionField::interpolate(unit(8), |p| p[0] * (1.0 - p[0]) * p[1], FieldRole::Other);
        assert_eq!(relative_error(&r, &r).unwrap(), 0.0);
        let u = r.combine(1.1, &r, 0.0).unwrap();
        assert!((relative_error(&u, &r).unwrap() - 0.1).abs() < 1e-12);
        let z = SolutionField::interpolate(unit(8), |_| 0.0, FieldRole::Other);
        assert!(relative_error(&r, &z).is_err());
    }

    fn manufactured(n: usize) -> (f64, f64, f64) {
        let mesh = unit(n);
        let u = |p: Point| (PI * p[0]).sin() * (PI * p[1]).sin();
        let coeffs = vec![Mat2::identity(); mesh.n_triangles()];
        let opts = CgOptions::default();
        let dofs = DofMap::dirichlet(&mesh);
        let pattern = StiffnessPattern::new(mesh.clone(), dofs).unwrap();
        let k = pattern.assemble(&coeffs).unwrap();
        let b = pattern.load(|p| 2.0 * PI * PI * u(p), 2).unwrap();
        let (x, _) = solve_dirichlet(&pattern, &k, &b, &opts, "manufactured").unwrap();
        let uh = SolutionField::new(mesh.clone(), x, FieldRole::Other).unwrap();
        let fine = SolutionField::interpolate(unit(256), u, FieldRole::Other);
        let l2 = l2_error_cross_mesh(&uh, &fine).unwrap();
        // H1 seminorm error against the exact gradient, midpoint-free: use
        // ||grad(u - u_h)||^2 = ||grad u||^2 - ||grad u_h||^2 (Galerkin).
        let grad_u_sq = PI * PI / 2.0;
        let h1 = (grad_u_sq - uh.h1_seminorm().powi(2)).max(0.0).sqrt();
        let xr: Vec<f64> = (0..pattern.dofs().n_nodes())
            .filter_map(|v| pattern.dofs().dof(v).map(|_| uh.values[v]))
            .collect();
        let kx = spmv(&k, &xr).unwrap();
        let energy = 0.5 * xr.iter().zip(&kx).map(|(a, b)| a * b).sum::<f64>()
            - xr.iter().zip(&b).map(|(a, b)| a * b).sum::<f64>();
        (l2, h1, energy)
    }

    #[test]
    fn manufactured_solution_rates() {
        let ns = [8usize, 16, 32, 64];
        let results: Vec<(f64, f64, f64)> = ns.iter().map(|&n| manufactured(n)).collect();
        for w in results.windows(2) {
            let l2_rate = (w[0].0 / w[1].0).log2();
            let h1_rate = (w[0].1 / w[1].1).log2();
            assert!((l2_rate - 2.0).abs() < 0.2, "L2 rate {l2_rate}");
            assert!((h1_rate - 1.0).abs() < 0.2, "H1 rate {h1_rate}");
            assert!(w[1].2 < w[0].2, "discrete energy must decrease");
        }
        let _ = DEFAULT_TOL;
    }

    proptest! {
        #[test]
        fn galerkin_identity_holds(c in 0.5f64..50.0, f in -20.0f64..20.0, n in 3usize..12) {
            let mesh = unit(n);
            let coeffs = vec![Mat2::scalar(c); mesh.n_triangles()];
            let pattern = StiffnessPattern::new(mesh.clone(), DofMap::dirichlet(&mesh)).unwrap();
            let k = pattern.assemble(&coeffs).unwrap();
            let b = pattern.load(|_| f, 2).unwrap();
            let (x, _) = cg_solve(&k, &b, &CgOptions::default()).unwrap();
            let kx = spmv(&k, &x).unwrap();
            let xkx: f64 = x.iter().zip(&kx).map(|(a, b)| a * b).sum();
            let xf: f64 = x.iter().zip(&b).map(|(a, b)| a * b).sum();
            prop_assert!(xkx >= 0.0);
            prop_assert!((xkx - xf).abs() <= 1e-8 * xkx.abs().max(1e-300));
        }
    }
}
