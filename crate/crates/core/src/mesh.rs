//! Structured right-triangle meshes of axis-aligned rectangles.
//!
//! Each grid square is split along its lower-left to upper-right diagonal.
//! Nodes are numbered row-major (x fastest), which makes point location and
//! periodic identification pure index arithmetic.

use serde::Serialize;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

const COORD_TOL: f64 = 1e-12;

/// Axis-aligned rectangle `(x0, y0) .. (x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn unit() -> Self {
        Self::new(0.0, 0.0, 1.0, 1.0)
    }

    /// The square `(0, side)^2`.
    pub fn square(side: f64) -> Self {
        Self::new(0.0, 0.0, side, side)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        p[0] >= self.x0 - tol && p[0] <= self.x1 + tol && p[1] >= self.y0 - tol && p[1] <= self.y1 + tol
    }

    pub fn approx_eq(&self, other: &Rect, tol: f64) -> bool {
        (self.x0 - other.x0).abs() <= tol
            && (self.y0 - other.y0).abs() <= tol
            && (self.x1 - other.x1).abs() <= tol
            && (self.y1 - other.y1).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Interior,
    Left,
    Right,
    Bottom,
    Top,
    Corner,
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_tag: Vec<BoundaryTag>,
    domain: Rect,
    /// Subdivisions per unit length.
    n: usize,
    nx: usize,
    ny: usize,
}

fn integer_count(len: f64, n: usize, what: &str) -> Result<usize> {
    let cells = len * n as f64;
    let rounded = cells.round();
    if rounded < 1.0 || (cells - rounded).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "{what} {len} is not a positive multiple of the mesh size 1/{n}"
        )));
    }
    Ok(rounded as usize)
}

/// Uniform triangulation of `domain` with `n` subdivisions per unit length.
pub fn build_structured_mesh(domain: Rect, n: usize) -> Result<TriMesh> {
    if n == 0 {
        return Err(Error::InvalidInput("mesh subdivisions must be positive".into()));
    }
    if !(domain.width() > 0.0 && domain.height() > 0.0) {
        return Err(Error::InvalidInput("degenerate mesh domain".into()));
    }
    let nx = integer_count(domain.width(), n, "domain width")?;
    let ny = integer_count(domain.height(), n, "domain height")?;
    let nf = n as f64;

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut boundary_tag = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if i == nx { domain.x1 } else { domain.x0 + i as f64 / nf };
            let y = if j == ny { domain.y1 } else { domain.y0 + j as f64 / nf };
            nodes.push([x, y]);
            let on_x = i == 0 || i == nx;
            let on_y = j == 0 || j == ny;
            boundary_tag.push(match (on_x, on_y) {
                (true, true) => BoundaryTag::Corner,
                (false, false) => BoundaryTag::Interior,
                (true, false) if i == 0 => BoundaryTag::Left,
                (true, false) => BoundaryTag::Right,
                (false, true) if j == 0 => BoundaryTag::Bottom,
                (false, true) => BoundaryTag::Top,
            });
        }
    }

    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let v00 = idx(i, j);
            let v10 = idx(i + 1, j);
            let v01 = idx(i, j + 1);
            let v11 = idx(i + 1, j + 1);
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    Ok(TriMesh {
        nodes,
        triangles,
        boundary_tag,
        domain,
        n,
        nx,
        ny,
    })
}

impl TriMesh {
    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_tags(&self) -> &[BoundaryTag] {
        &self.boundary_tag
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Nominal mesh size `1/n`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn subdivisions_per_unit(&self) -> usize {
        self.n
    }

    /// Grid squares along x and y.
    pub fn grid_dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary_tag[node] != BoundaryTag::Interior
    }

    pub fn triangle_vertices(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area (positive for counterclockwise vertices).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.triangle_vertices(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    pub fn area(&self, t: usize) -> f64 {
        self.signed_area(t).abs()
    }

    /// Gradients of the three barycentric (P1 hat) functions on triangle `t`.
    pub fn gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [p0, p1, p2] = self.triangle_vertices(t);
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        [
            [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
            [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
            [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
        ]
    }

    /// Map barycentric coordinates on triangle `t` to a physical point.
    pub fn point_at(&self, t: usize, bary: [f64; 3]) -> Point {
        let v = self.triangle_vertices(t);
        [
            bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0],
            bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1],
        ]
    }

    pub fn centroid(&self, t: usize) -> Point {
        self.point_at(t, [1.0 / 3.0; 3])
    }

    /// Lumped (row-sum) mass per node: one third of each adjacent triangle's area.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_nodes()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let a = self.area(t) / 3.0;
            for &v in tri {
                m[v] += a;
            }
        }
        m
    }

    /// Whether the lines at offset `c` from the domain origin are mesh lines.
    pub fn has_grid_line(&self, c: f64) -> bool {
        let cells = c * self.n as f64;
        (cells - cells.round()).abs() <= 1e-9
    }
}

/// Periodic identification of opposite boundary nodes of a structured mesh.
#[derive(Debug, Clone)]
pub struct PeriodicMap {
    master_of: Vec<usize>,
    reduced_index: Vec<usize>,
    n_reduced: usize,
}

impl PeriodicMap {
    pub fn master_of(&self, node: usize) -> usize {
        self.master_of[node]
    }

    pub fn reduced_index(&self, node: usize) -> usize {
        self.reduced_index[node]
    }

    pub fn reduced_indices(&self) -> &[usize] {
        &self.reduced_index
    }

    pub fn n_reduced(&self) -> usize {
        self.n_reduced
    }
}

/// Right/top boundary nodes are slaved to their left/bottom partners; the four
/// corners collapse onto the lower-left corner.
pub fn periodic_pairing(mesh: &TriMesh) -> Result<PeriodicMap> {
    let (nx, ny) = mesh.grid_dims();
    let dom = mesh.domain();
    let (px, py) = (dom.width(), dom.height());
    let mut master_of = vec![0usize; mesh.n_nodes()];
    let mut reduced_index = vec![0usize; mesh.n_nodes()];
    for j in 0..=ny {
        for i in 0..=nx {
            let node = mesh.node_index(i, j);
            let (mi, mj) = (i % nx, j % ny);
            let master = mesh.node_index(mi, mj);
            let p = mesh.nodes[node];
            let q = mesh.nodes[master];
            let shift = [
                if i == nx { px } else { 0.0 },
                if j == ny { py } else { 0.0 },
            ];
            if (p[0] - q[0] - shift[0]).abs() > COORD_TOL || (p[1] - q[1] - shift[1]).abs() > COORD_TOL
            {
                return Err(Error::Structural(format!(
                    "periodic partner of node {node} at {p:?} misaligned with {q:?}"
                )));
            }
            master_of[node] = master;
            reduced_index[node] = mj * nx + mi;
        }
    }
    Ok(PeriodicMap {
        master_of,
        reduced_index,
        n_reduced: nx * ny,
    })
}

/// Containing triangle and barycentric coordinates of `p`.
pub fn locate_point(mesh: &TriMesh, p: Point) -> Result<(usize, [f64; 3])> {
    let dom = mesh.domain();
    if !p[0].is_finite() || !p[1].is_finite() || !dom.contains(p, COORD_TOL) {
        return Err(Error::InvalidInput(format!("point {p:?} outside mesh domain")));
    }
    let (nx, ny) = mesh.grid_dims();
    let nf = mesh.n as f64;
    let gx = ((p[0] - dom.x0) * nf).clamp(0.0, nx as f64);
    let gy = ((p[1] - dom.y0) * nf).clamp(0.0, ny as f64);
    let i = (gx.floor() as usize).min(nx - 1);
    let j = (gy.floor() as usize).min(ny - 1);
    let xi = (gx - i as f64).clamp(0.0, 1.0);
    let eta = (gy - j as f64).clamp(0.0, 1.0);
    let base = 2 * (j * nx + i);
    if xi >= eta {
        // [v00, v10, v11]
        Ok((base, [1.0 - xi, xi - eta, eta]))
    } else {
        // [v00, v11, v01]
        Ok((base + 1, [1.0 - eta, xi, eta - xi]))
    }
}

/// Piecewise-linear interpolation of nodal data at `p`.
pub fn evaluate_field(mesh: &TriMesh, nodal_values: &[f64], p: Point) -> Result<f64> {
    if nodal_values.len() != mesh.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: mesh.n_nodes(),
            got: nodal_values.len(),
        });
    }
    let (t, bary) = locate_point(mesh, p)?;
    let tri = mesh.triangles[t];
    Ok((0..3).map(|k| bary[k] * nodal_values[tri[k]]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn total_area(m: &TriMesh) -> f64 {
        (0..m.n_triangles()).map(|t| m.signed_area(t)).sum()
    }

    #[test]
    fn mesh_counts() {
        let m = build_structured_mesh(Rect::unit(), 1).unwrap();
        assert_eq!((m.n_nodes(), m.n_triangles()), (4, 2));
        assert_relative_eq!(total_area(&m), 1.0, max_relative = 1e-12);

        let m = build_structured_mesh(Rect::unit(), 4).unwrap();
        assert_eq!((m.n_nodes(), m.n_triangles()), (25, 32));

        let m = build_structured_mesh(Rect::new(0.0, 0.0, 2.0, 1.0), 2).unwrap();
        assert_eq!((m.n_nodes(), m.n_triangles()), (15, 16));
        assert_relative_eq!(total_area(&m), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn mesh_rejects_bad_input() {
        assert!(build_structured_mesh(Rect::unit(), 0).is_err());
        assert!(build_structured_mesh(Rect::new(0.0, 0.0, 0.3, 1.0), 2).is_err());
    }

    #[test]
    fn triangles_positive_and_inside() {
        let m = build_structured_mesh(Rect::new(0.5, -1.0, 2.0, 1.0), 6).unwrap();
        assert!((0..m.n_triangles()).all(|t| m.signed_area(t) > 0.0));
        assert!(m.nodes().iter().all(|&p| m.domain().contains(p, 0.0)));
        assert_relative_eq!(total_area(&m), 3.0, max_relative = 1e-12);
    }

    #[test]
    fn boundary_tags() {
        let m = build_structured_mesh(Rect::unit(), 2).unwrap();
        let tags = m.boundary_tags();
        assert_eq!(tags[0], BoundaryTag::Corner);
        assert_eq!(tags[1], BoundaryTag::Bottom);
        assert_eq!(tags[3], BoundaryTag::Left);
        assert_eq!(tags[4], BoundaryTag::Interior);
        assert_eq!(tags[5], BoundaryTag::Right);
        assert_eq!(tags[7], BoundaryTag::Top);
    }

    #[test]
    fn periodic_counts_and_partners() {
        let m = build_structured_mesh(Rect::unit(), 1).unwrap();
        let map = periodic_pairing(&m).unwrap();
        assert_eq!(map.n_reduced(), 1);
        assert!((0..4).all(|v| map.master_of(v) == 0));

        let m = build_structured_mesh(Rect::unit(), 4).unwrap();
        assert_eq!(periodic_pairing(&m).unwrap().n_reduced(), 16);

        let m = build_structured_mesh(Rect::unit(), 2).unwrap();
        let map = periodic_pairing(&m).unwrap();
        let node = m.nodes().iter().position(|p| *p == [1.0, 0.5]).unwrap();
        assert_eq!(m.nodes()[map.master_of(node)], [0.0, 0.5]);
        // masters map to themselves
        for v in 0..m.n_nodes() {
            let mv = map.master_of(v);
            assert_eq!(map.master_of(mv), mv);
            assert_eq!(map.reduced_index(v), map.reduced_index(mv));
        }
    }

    #[test]
    fn periodic_reduction_preserves_area() {
        let m = build_structured_mesh(Rect::square(2.0), 3).unwrap();
        let map = periodic_pairing(&m).unwrap();
        let mut reduced = vec![0.0; map.n_reduced()];
        for (v, w) in m.lumped_mass().into_iter().enumerate() {
            reduced[map.reduced_index(v)] += w;
        }
        assert_relative_eq!(reduced.iter().sum::<f64>(), 4.0, max_relative = 1e-12);
        // uniform torus: equal weights
        assert!(reduced.iter().all(|w| (w - reduced[0]).abs() < 1e-14));
    }

    #[test]
    fn locate_vertex_and_centroid() {
        let m = build_structured_mesh(Rect::unit(), 4).unwrap();
        let t = 9;
        let (found, bary) = locate_point(&m, m.centroid(t)).unwrap();
        assert_eq!(found, t);
        for b in bary {
            assert_relative_eq!(b, 1.0 / 3.0, epsilon = 1e-12);
        }
        let v = m.triangle_vertices(t)[1];
        let (ft, bary) = locate_point(&m, v).unwrap();
        let k = m.triangles()[ft].iter().position(|&n| m.nodes()[n] == v).unwrap();
        assert_relative_eq!(bary[k], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn locate_center_point_reconstructs() {
        let m = build_structured_mesh(Rect::unit(), 2).unwrap();
        let p = [0.5, 0.5];
        let (t, bary) = locate_point(&m, p).unwrap();
        assert_eq!(t / 2, 3); // grid cell (1, 1)
        let q = m.point_at(t, bary);
        assert_relative_eq!(q[0], p[0], epsilon = 1e-14);
        assert_relative_eq!(q[1], p[1], epsilon = 1e-14);
        assert!(bary.iter().all(|b| *b >= 0.0));
        assert_relative_eq!(bary.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn locate_rejects_outside() {
        let m = build_structured_mesh(Rect::unit(), 2).unwrap();
        assert!(locate_point(&m, [1.5, 0.5]).is_err());
        assert!(locate_point(&m, [f64::NAN, 0.5]).is_err());
    }

    #[test]
    fn evaluate_affine_and_constant() {
        let m = build_structured_mesh(Rect::unit(), 7).unwrap();
        let vals: Vec<f64> = m.nodes().iter().map(|p| p[0] + 2.0 * p[1]).collect();
        let consts = vec![3.25; m.n_nodes()];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = [rng.random::<f64>(), rng.random::<f64>()];
            let v = evaluate_field(&m, &vals, p).unwrap();
            assert!((v - (p[0] + 2.0 * p[1])).abs() <= 1e-13);
            assert!((evaluate_field(&m, &consts, p).unwrap() - 3.25).abs() <= 1e-14);
        }
    }

    #[test]
    fn evaluate_quadratic_error_bound() {
        let m = build_structured_mesh(Rect::unit(), 8).unwrap();
        let vals: Vec<f64> = m.nodes().iter().map(|p| p[0] * p[0]).collect();
        let v = evaluate_field(&m, &vals, [0.3, 0.3]).unwrap();
        assert!((v - 0.09).abs() <= m.h() * m.h());
    }

    #[test]
    fn block_lines_align_with_mesh() {
        // eps = 1/8 blocks on a mesh with n a multiple of 8
        let m = build_structured_mesh(Rect::unit(), 64).unwrap();
        assert!((0..=8).all(|k| m.has_grid_line(k as f64 / 8.0)));
        let m = build_structured_mesh(Rect::unit(), 100).unwrap();
        assert!(!m.has_grid_line(1.0 / 8.0));
    }
}
