//! Random two-phase microstructures and the coefficient laws built on them.
//!
//! Coordinates come in two flavours: physical `x` in the domain D and cell
//! coordinates `y = x / eps`, where the unit cell with integer index `k`
//! occupies `k + [0, 1)^2`. Every cell `k` carries one i.i.d. draw `Z_k` and,
//! for the random-geometry cases, its own inclusion pattern.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::Point;
use crate::tensor::Mat2;

pub type SampleStream = ChaCha8Rng;

/// Tolerance for the closed-inclusion convention.
const PHASE_TOL: f64 = 1e-12;
const MAX_CONSECUTIVE_REJECTIONS: usize = 10_000;
const BOUNDARY_SAMPLES: usize = 64;
/// Inflation applied to the other ellipse when testing sampled boundary
/// points; covers the chord sag between 64 samples.
const OVERLAP_INFLATION: f64 = 1.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ellipse {
    pub center: Point,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Rotation of the major axis from the x axis, radians.
    pub angle: f64,
}

impl Ellipse {
    /// Value of the rotated-ellipse quadratic form; `<= 1` means inside.
    fn level(&self, p: Point, inflate: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let a = self.semi_major * inflate;
        let b = self.semi_minor * inflate;
        (u / a).powi(2) + (v / b).powi(2)
    }

    pub fn contains(&self, p: Point) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        if dx * dx + dy * dy > self.semi_major * self.semi_major * (1.0 + PHASE_TOL) {
            return false;
        }
        self.level(p, 1.0) <= 1.0 + PHASE_TOL
    }

    pub fn boundary_point(&self, t: f64) -> Point {
        let (s, c) = self.angle.sin_cos();
        let (st, ct) = t.sin_cos();
        let u = self.semi_major * ct;
        let v = self.semi_minor * st;
        [self.center[0] + c * u - s * v, self.center[1] + s * u + c * v]
    }

    /// Half-widths of the axis-aligned bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (a, b) = (self.semi_major, self.semi_minor);
        (
            (a * a * c * c + b * b * s * s).sqrt(),
            (a * a * s * s + b * b * c * c).sqrt(),
        )
    }

    pub fn area(&self) -> f64 {
        PI * self.semi_major * self.semi_minor
    }

    fn inside_unit_cell(&self) -> bool {
        let (ex, ey) = self.half_extents();
        self.center[0] - ex > 0.0
            && self.center[0] + ex < 1.0
            && self.center[1] - ey > 0.0
            && self.center[1] + ey < 1.0
    }

    fn boundary_samples(&self) -> impl Iterator<Item = Point> + '_ {
        (0..BOUNDARY_SAMPLES).map(move |k| {
            self.boundary_point(2.0 * PI * k as f64 / BOUNDARY_SAMPLES as f64)
        })
    }

    /// Conservative overlap test: bounding circles first, then sampled
    /// boundary points of each ellipse against a slightly inflated other.
    pub fn overlaps(&self, other: &Ellipse) -> bool {
        let dx = self.center[0] - other.center[0];
        let dy = self.center[1] - other.center[1];
        let reach = (self.semi_major + other.semi_major) * OVERLAP_INFLATION;
        if dx * dx + dy * dy > reach * reach {
            return false;
        }
        self.boundary_samples()
            .any(|p| other.level(p, OVERLAP_INFLATION) <= 1.0)
            || other
                .boundary_samples()
                .any(|p| self.level(p, OVERLAP_INFLATION) <= 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellGeometry {
    SquareInclusion { lo: f64, hi: f64 },
    EllipseSet { ellipses: Vec<Ellipse> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Matrix,
    Inclusion,
}

impl CellGeometry {
    pub fn square(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::InvalidInput(format!(
                "square inclusion needs 0 < lo < hi < 1, got ({lo}, {hi})"
            )));
        }
        Ok(CellGeometry::SquareInclusion { lo, hi })
    }

    /// Inclusion volume fraction.
    pub fn inclusion_fraction(&self) -> f64 {
        match self {
            CellGeometry::SquareInclusion { lo, hi } => (hi - lo) * (hi - lo),
            CellGeometry::EllipseSet { ellipses } => ellipses.iter().map(Ellipse::area).sum(),
        }
    }

    pub fn has_inclusions(&self) -> bool {
        match self {
            CellGeometry::SquareInclusion { .. } => true,
            CellGeometry::EllipseSet { ellipses } => !ellipses.is_empty(),
        }
    }

    /// Mesh-line offsets that a body-fitted structured mesh must contain.
    pub fn required_grid_lines(&self) -> Vec<f64> {
        match self {
            CellGeometry::SquareInclusion { lo, hi } => vec![*lo, *hi],
            CellGeometry::EllipseSet { .. } => Vec::new(),
        }
    }
}

/// Phase of the cell-local point `y` in `[0, 1]^2`; inclusions are closed.
pub fn phase_at(geometry: &CellGeometry, y: Point) -> Phase {
    let inside = match geometry {
        CellGeometry::SquareInclusion { lo, hi } => {
            let lo = lo - PHASE_TOL;
            let hi = hi + PHASE_TOL;
            y[0] >= lo && y[0] <= hi && y[1] >= lo && y[1] <= hi
        }
        CellGeometry::EllipseSet { ellipses } => ellipses.iter().any(|e| e.contains(y)),
    };
    if inside {
        Phase::Inclusion
    } else {
        Phase::Matrix
    }
}

/// Sequential random placement with rejection on boundary exit or overlap.
///
/// `axis_range` bounds both semi-axes; the larger draw becomes the major axis.
pub fn take_and_place(
    n_ellipses: usize,
    axis_range: (f64, f64),
    rng: &mut SampleStream,
) -> Result<CellGeometry> {
    let (amin, amax) = axis_range;
    if !(amin > 0.0 && amin <= amax && amax < 0.5) {
        return Err(Error::InvalidInput(format!(
            "semi-axis range ({amin}, {amax}) must satisfy 0 < min <= max < 0.5"
        )));
    }
    let worst_area = n_ellipses as f64 * PI * amax * amax;
    if worst_area >= 0.5 {
        return Err(Error::Placement(format!(
            "{n_ellipses} ellipses with semi-axes up to {amax} may cover {worst_area:.3} of the cell (limit 0.5)"
        )));
    }
    let mut placed: Vec<Ellipse> = Vec::with_capacity(n_ellipses);
    while placed.len() < n_ellipses {
        let mut rejections = 0usize;
        loop {
            let cx = rng.random::<f64>();
            let cy = rng.random::<f64>();
            let a1 = rng.random_range(amin..=amax);
            let a2 = rng.random_range(amin..=amax);
            let angle = rng.random_range(0.0..PI);
            let candidate = Ellipse {
                center: [cx, cy],
                semi_major: a1.max(a2),
                semi_minor: a1.min(a2),
                angle,
            };
            if candidate.inside_unit_cell() && !placed.iter().any(|e| e.overlaps(&candidate)) {
                placed.push(candidate);
                break;
            }
            rejections += 1;
            if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(Error::Placement(format!(
                    "ellipse {} of {n_ellipses} rejected {MAX_CONSECUTIVE_REJECTIONS} times in a row; \
                     packing too dense (placed area {:.3})",
                    placed.len() + 1,
                    placed.iter().map(Ellipse::area).sum::<f64>()
                )));
            }
        }
    }
    Ok(CellGeometry::EllipseSet { ellipses: placed })
}

/// Uniform draw on `[-1, 1]`.
pub fn sample_uniform(rng: &mut SampleStream) -> f64 {
    rng.random_range(-1.0..=1.0)
}

/// Standard normal conditioned on `[-b, b]`, by rejection.
pub fn sample_truncated_normal(rng: &mut SampleStream, b: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= b {
            return z;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Uniform,
    TruncatedNormal { b: f64 },
}

impl Distribution {
    pub fn sample(&self, rng: &mut SampleStream) -> f64 {
        match *self {
            Distribution::Uniform => sample_uniform(rng),
            Distribution::TruncatedNormal { b } => sample_truncated_normal(rng, b),
        }
    }

    /// Largest |Z| the distribution can produce.
    pub fn support_bound(&self) -> f64 {
        match *self {
            Distribution::Uniform => 1.0,
            Distribution::TruncatedNormal { b } => b,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Distribution::Uniform => "uniform",
            Distribution::TruncatedNormal { .. } => "truncated_normal",
        }
    }
}

/// Independent sub-streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Coefficient = 0,
    Geometry = 1,
    SharedGeometry = 2,
    Study = 3,
}

/// Stream keyed by `(master_seed, sample_index, block_index)` and purpose.
///
/// The tuple is packed into the ChaCha key and the purpose selects the ChaCha
/// stream, so distinct inputs give independent streams irrespective of the
/// order in which they are requested.
pub fn derive_stream(
    master_seed: u64,
    sample_index: u64,
    block_index: (i64, i64),
    purpose: StreamPurpose,
) -> SampleStream {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&sample_index.to_le_bytes());
    key[16..24].copy_from_slice(&block_index.0.to_le_bytes());
    key[24..32].copy_from_slice(&block_index.1.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(purpose as u64);
    rng
}

/// The coefficient stream for one cell of one sample.
pub fn derive_sample_stream(
    master_seed: u64,
    sample_index: u64,
    block_index: (i64, i64),
) -> SampleStream {
    derive_stream(master_seed, sample_index, block_index, StreamPurpose::Coefficient)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TestCase {
    /// Periodic square inclusion, random coefficients.
    #[serde(rename = "A_I")]
    AI,
    /// Periodic elliptical inclusions, random coefficients.
    #[serde(rename = "A_II")]
    AII,
    /// Random geometry, deterministic phase coefficients.
    B,
    /// Random geometry and random coefficients.
    C,
    /// Deterministic constant isotropic coefficient.
    #[serde(rename = "custom")]
    Custom,
}

impl TestCase {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A_I" | "AI" | "A-I" => Some(TestCase::AI),
            "A_II" | "AII" | "A-II" => Some(TestCase::AII),
            "B" => Some(TestCase::B),
            "C" => Some(TestCase::C),
            "CUSTOM" => Some(TestCase::Custom),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestCase::AI => "A_I",
            TestCase::AII => "A_II",
            TestCase::B => "B",
            TestCase::C => "C",
            TestCase::Custom => "custom",
        }
    }

    pub fn has_random_coefficients(&self) -> bool {
        matches!(self, TestCase::AI | TestCase::AII | TestCase::C)
    }

    pub fn has_random_geometry(&self) -> bool {
        matches!(self, TestCase::B | TestCase::C)
    }
}

/// Rectangular range of integer cell indices, row-major storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CellRange {
    pub i0: i64,
    pub j0: i64,
    pub ni: usize,
    pub nj: usize,
}

impl CellRange {
    pub fn new(i0: i64, j0: i64, ni: usize, nj: usize) -> Self {
        Self { i0, j0, ni, nj }
    }

    /// Cells `(0..n) x (0..n)`.
    pub fn square(n: usize) -> Self {
        Self::new(0, 0, n, n)
    }

    pub fn len(&self) -> usize {
        self.ni * self.nj
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: i64, j: i64) -> Option<usize> {
        let di = i - self.i0;
        let dj = j - self.j0;
        if di < 0 || dj < 0 || di as usize >= self.ni || dj as usize >= self.nj {
            None
        } else {
            Some(dj as usize * self.ni + di as usize)
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        (0..self.nj).flat_map(move |dj| {
            (0..self.ni).map(move |di| (self.i0 + di as i64, self.j0 + dj as i64))
        })
    }

    pub fn contains_range(&self, other: &CellRange) -> bool {
        other.i0 >= self.i0
            && other.j0 >= self.j0
            && other.i0 + other.ni as i64 <= self.i0 + self.ni as i64
            && other.j0 + other.nj as i64 <= self.j0 + self.nj as i64
    }
}

#[derive(Debug, Clone)]
pub enum GeometrySource {
    Shared(Arc<CellGeometry>),
    PerCell(Vec<Arc<CellGeometry>>),
}

/// One sample: per-cell draws `Z_k` and the inclusion geometry of each cell.
#[derive(Debug, Clone)]
pub struct SampleRealization {
    pub sample_index: u64,
    pub cells: CellRange,
    pub z: Vec<f64>,
    pub geometry: GeometrySource,
}

impl SampleRealization {
    pub fn z_at(&self, cell: (i64, i64)) -> Option<f64> {
        self.cells.index(cell.0, cell.1).map(|k| self.z[k])
    }

    pub fn geometry_of(&self, slot: usize) -> &CellGeometry {
        match &self.geometry {
            GeometrySource::Shared(g) => g,
            GeometrySource::PerCell(v) => &v[slot],
        }
    }

    pub fn max_abs_z(&self) -> f64 {
        self.z.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Everything needed to draw realizations reproducibly.
#[derive(Debug, Clone)]
pub struct MicrostructureSpec {
    pub test_case: TestCase,
    pub distribution: Distribution,
    pub master_seed: u64,
    pub n_ellipses: usize,
    pub axis_range: (f64, f64),
    /// Reuse sample 0's geometry for every sample (random-geometry cases).
    pub fixed_geometry: bool,
    pub square: (f64, f64),
}

impl MicrostructureSpec {
    pub fn new(test_case: TestCase, distribution: Distribution, master_seed: u64) -> Self {
        let (n_ellipses, axis_range) = default_ellipses(test_case);
        Self {
            test_case,
            distribution,
            master_seed,
            n_ellipses,
            axis_range,
            fixed_geometry: false,
            square: (0.25, 0.75),
        }
    }

    /// Geometry shared by every cell of every sample (Test A), if any.
    pub fn shared_geometry(&self) -> Result<Option<CellGeometry>> {
        match self.test_case {
            TestCase::AI => Ok(Some(CellGeometry::square(self.square.0, self.square.1)?)),
            TestCase::AII => {
                let mut rng =
                    derive_stream(self.master_seed, 0, (0, 0), StreamPurpose::SharedGeometry);
                Ok(Some(take_and_place(self.n_ellipses, self.axis_range, &mut rng)?))
            }
            TestCase::Custom => Ok(Some(CellGeometry::EllipseSet { ellipses: Vec::new() })),
            TestCase::B | TestCase::C => Ok(None),
        }
    }

    /// Draw sample `sample_index` over the given cells.
    pub fn realize(&self, sample_index: u64, cells: CellRange) -> Result<SampleRealization> {
        self.realize_with(sample_index, cells, None)
    }

    /// As [`realize`](Self::realize), reusing an already-built shared geometry.
    pub fn realize_with(
        &self,
        sample_index: u64,
        cells: CellRange,
        shared: Option<&Arc<CellGeometry>>,
    ) -> Result<SampleRealization> {
        let z: Vec<f64> = if self.test_case.has_random_coefficients() {
            cells
                .cells()
                .map(|k| {
                    let mut rng = derive_sample_stream(self.master_seed, sample_index, k);
                    self.distribution.sample(&mut rng)
                })
                .collect()
        } else {
            vec![0.0; cells.len()]
        };
        let geometry = if self.test_case.has_random_geometry() {
            let geometry_sample = if self.fixed_geometry { 0 } else { sample_index };
            let per_cell = cells
                .cells()
                .map(|k| {
                    let mut rng = derive_stream(
                        self.master_seed,
                        geometry_sample,
                        k,
                        StreamPurpose::Geometry,
                    );
                    take_and_place(self.n_ellipses, self.axis_range, &mut rng).map(Arc::new)
                })
                .collect::<Result<Vec<_>>>()?;
            GeometrySource::PerCell(per_cell)
        } else {
            let g = match shared {
                Some(g) => g.clone(),
                None => Arc::new(self.shared_geometry()?.expect("non-random geometry is shared")),
            };
            GeometrySource::Shared(g)
        };
        Ok(SampleRealization {
            sample_index,
            cells,
            z,
            geometry,
        })
    }
}

fn default_ellipses(test_case: TestCase) -> (usize, (f64, f64)) {
    match test_case {
        TestCase::AII => (70, (0.02, 0.04)),
        _ => (10, (0.05, 0.10)),
    }
}

/// Matrix/inclusion constants `(c0, c1)` of the law `c0 d_ij + (c1 + s d_ij) Z`.
fn phase_constants(phase: Phase) -> (f64, f64) {
    match phase {
        Phase::Matrix => (3.0, 1.0),
        Phase::Inclusion => (300.0, 50.0),
    }
}

/// The random coefficient matrix `A(x / eps, omega)` for one realization.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    pub test_case: TestCase,
    pub realization: Arc<SampleRealization>,
    pub epsilon: f64,
    /// Lower ellipticity bound over the realization (may be <= 0 when the
    /// literal off-diagonal law loses ellipticity).
    pub alpha: f64,
    pub beta: f64,
    /// Drop the off-diagonal `c1 * Z` terms.
    pub diagonal_only: bool,
    /// Isotropic value for [`TestCase::Custom`].
    pub custom_value: f64,
}

impl CoefficientField {
    pub fn new(
        test_case: TestCase,
        realization: Arc<SampleRealization>,
        epsilon: f64,
        diagonal_only: bool,
        custom_value: f64,
    ) -> Self {
        let (alpha, beta) =
            ellipticity_bounds(test_case, realization.max_abs_z(), diagonal_only, custom_value);
        Self {
            test_case,
            realization,
            epsilon,
            alpha,
            beta,
            diagonal_only,
            custom_value,
        }
    }

    pub fn is_elliptic(&self) -> bool {
        self.alpha > 0.0
    }

    /// Coefficient at cell coordinates `y`.
    pub fn at_cell(&self, y: Point) -> Result<Mat2> {
        let ci = y[0].floor();
        let cj = y[1].floor();
        let cell = (ci as i64, cj as i64);
        let slot = self.realization.cells.index(cell.0, cell.1).ok_or_else(|| {
            Error::Structural(format!(
                "cell {cell:?} outside realization range {:?}",
                self.realization.cells
            ))
        })?;
        let local = [y[0] - ci, y[1] - cj];
        if self.test_case == TestCase::Custom {
            return Ok(Mat2::scalar(self.custom_value));
        }
        let phase = phase_at(self.realization.geometry_of(slot), local);
        let (c0, c1) = phase_constants(phase);
        if self.test_case == TestCase::B {
            return Ok(Mat2::scalar(c0));
        }
        let z = self.realization.z[slot];
        let s = (2.0 * PI * local[0]).sin() * (2.0 * PI * local[1]).sin();
        let diag = c0 + (c1 + s) * z;
        let off = if self.diagonal_only { 0.0 } else { c1 * z };
        Ok(Mat2::sym(diag, off, diag))
    }

    /// Coefficient at physical point `x`.
    pub fn coefficient_at(&self, x: Point) -> Result<Mat2> {
        self.at_cell([x[0] / self.epsilon, x[1] / self.epsilon])
    }
}

/// Phase-extreme eigenvalue bounds for `|Z| <= zmax`.
pub fn ellipticity_bounds(
    test_case: TestCase,
    zmax: f64,
    diagonal_only: bool,
    custom_value: f64,
) -> (f64, f64) {
    match test_case {
        TestCase::Custom => (custom_value, custom_value),
        TestCase::B => (3.0, 300.0),
        _ => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for phase in [Phase::Matrix, Phase::Inclusion] {
                let (c0, c1) = phase_constants(phase);
                // eigenvalues are diag +- |off|, diag = c0 + c1 z + s z, |s| <= 1
                for z in [-zmax, zmax] {
                    let off = if diagonal_only { 0.0 } else { (c1 * z).abs() };
                    lo = lo.min(c0 + c1 * z - z.abs() - off);
                    hi = hi.max(c0 + c1 * z + z.abs() + off);
                }
            }
            (lo, hi)
        }
    }
}

/// Line-oriented text dump: header lines, then one `cx cy a b angle` per ellipse.
pub fn write_geometry<W: Write>(geometry: &CellGeometry, seed: u64, mut out: W) -> Result<()> {
    writeln!(out, "# cell geometry")?;
    match geometry {
        CellGeometry::SquareInclusion { lo, hi } => {
            writeln!(out, "kind square_inclusion")?;
            writeln!(out, "seed {seed}")?;
            writeln!(out, "{lo} {hi}")?;
        }
        CellGeometry::EllipseSet { ellipses } => {
            writeln!(out, "kind ellipse_set")?;
            writeln!(out, "seed {seed}")?;
            writeln!(out, "count {}", ellipses.len())?;
            for e in ellipses {
                writeln!(
                    out,
                    "{} {} {} {} {}",
                    e.center[0], e.center[1], e.semi_major, e.semi_minor, e.angle
                )?;
            }
        }
    }
    Ok(())
}

pub fn read_geometry<R: BufRead>(input: R) -> Result<(CellGeometry, u64)> {
    let mut kind: Option<String> = None;
    let mut seed: Option<u64> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let bad = |line: usize, msg: &str| Error::InvalidInput(format!("geometry line {line}: {msg}"));
    for (no, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("kind") => kind = parts.next().map(str::to_string),
            Some("seed") => {
                seed = Some(
                    parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad(no + 1, "bad seed"))?,
                )
            }
            Some("count") => {}
            Some(_) => rows.push(
                line.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| bad(no + 1, "bad number")))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => {}
        }
    }
    let seed = seed.ok_or_else(|| bad(0, "missing seed header"))?;
    let geometry = match kind.as_deref() {
        Some("square_inclusion") => match rows.as_slice() {
            [r] if r.len() == 2 => CellGeometry::square(r[0], r[1])?,
            _ => return Err(bad(0, "square_inclusion needs one `lo hi` row")),
        },
        Some("ellipse_set") => CellGeometry::EllipseSet {
            ellipses: rows
                .iter()
                .map(|r| {
                    if r.len() != 5 {
                        return Err(bad(0, "ellipse rows need 5 numbers"));
                    }
                    Ok(Ellipse {
                        center: [r[0], r[1]],
                        semi_major: r[2],
                        semi_minor: r[3],
                        angle: r[4],
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        },
        _ => return Err(bad(0, "missing or unknown kind header")),
    };
    Ok((geometry, seed))
}
