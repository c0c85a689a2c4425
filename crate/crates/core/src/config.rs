//! Run configuration: a flat sectioned `key = value` format plus overrides.
//!
//! ```text
//! [problem]
//! test_case = A_I
//! epsilon = 1/8
//! [mesh]
//! h = 1/60
//! ```
//!
//! Numbers accept fractions (`1/8`); lists are comma separated. Every key is
//! unique across sections, so overrides may name it bare (`L=484`) or
//! qualified (`random.L=484`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::microstructure::{Distribution, MicrostructureSpec, TestCase};

pub const DEFAULT_SEED: u64 = 20_240_601;

const SECTIONS: [&str; 4] = ["problem", "mesh", "random", "study"];

/// (section, key) for every recognized key, in echo order.
const KEYS: &[(&str, &str)] = &[
    ("problem", "test_case"),
    ("problem", "epsilon"),
    ("problem", "M"),
    ("problem", "N"),
    ("problem", "f"),
    ("problem", "diagonal_only"),
    ("problem", "custom_value"),
    ("mesh", "h"),
    ("mesh", "h0"),
    ("mesh", "h1"),
    ("mesh", "r"),
    ("mesh", "quadrature_order"),
    ("mesh", "n_fine"),
    ("mesh", "cg_tol"),
    ("random", "L"),
    ("random", "distribution"),
    ("random", "b"),
    ("random", "seed"),
    ("random", "sample_index"),
    ("random", "n_ellipses"),
    ("random", "axis_min"),
    ("random", "axis_max"),
    ("random", "fixed_geometry"),
    ("study", "sigma"),
    ("study", "M_list"),
    ("study", "scale_list"),
    ("study", "L_list"),
    ("study", "replicates"),
    ("study", "delta_samples"),
    ("study", "direct_samples"),
    ("study", "sets"),
];

/// Full experiment description. Mesh sizes are stored as subdivisions per
/// unit length (`h = 1/n`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub test_case: TestCase,
    pub epsilon: f64,
    /// Cells per block side.
    pub m: usize,
    /// Periodization size for comparisons.
    pub n_periodization: usize,
    /// Constant source term.
    pub f: f64,
    pub diagonal_only: bool,
    pub custom_value: f64,
    /// Cell-problem mesh, subdivisions per unit cell.
    pub n_cell: usize,
    /// Homogenized-problem mesh on D.
    pub n0: usize,
    /// Per-sample equivalent-problem mesh on D.
    pub n1: usize,
    pub degree: usize,
    pub quadrature_order: usize,
    /// Direct fine-solve mesh on D.
    pub n_fine: usize,
    pub cg_tol: f64,
    pub samples: usize,
    pub distribution: Distribution,
    pub seed: u64,
    pub sample_index: u64,
    pub n_ellipses: usize,
    pub axis_min: f64,
    pub axis_max: f64,
    pub fixed_geometry: bool,
    pub sigma: Option<f64>,
    pub m_list: Vec<usize>,
    pub scale_list: Vec<f64>,
    pub l_list: Vec<usize>,
    pub replicates: usize,
    pub delta_samples: usize,
    pub direct_samples: usize,
    /// Independent sample sets for expectation/variance tables.
    pub sets: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_case(TestCase::AI)
    }
}

impl RunConfig {
    /// Defaults for a test case: `h = 1/60` for the square inclusion and the
    /// custom field, `1/120` for ellipse microstructures.
    pub fn for_case(test_case: TestCase) -> Self {
        let spec = MicrostructureSpec::new(test_case, Distribution::Uniform, 0);
        Self {
            test_case,
            epsilon: 0.125,
            m: 1,
            n_periodization: 4,
            f: 10.0,
            diagonal_only: false,
            custom_value: 3.0,
            n_cell: default_cell_subdivisions(test_case),
            n0: 100,
            n1: 104,
            degree: 1,
            quadrature_order: 2,
            n_fine: 128,
            cg_tol: crate::linalg::DEFAULT_TOL,
            samples: 100,
            distribution: Distribution::TruncatedNormal { b: 1.5 },
            seed: DEFAULT_SEED,
            sample_index: 0,
            n_ellipses: spec.n_ellipses,
            axis_min: spec.axis_range.0,
            axis_max: spec.axis_range.1,
            fixed_geometry: false,
            sigma: None,
            m_list: vec![1, 2, 4],
            scale_list: vec![1.0, 0.5, 0.25, 0.125],
            l_list: vec![4, 16, 64, 256],
            replicates: 20,
            delta_samples: 4,
            direct_samples: 1,
            sets: 1,
        }
    }

    /// Cells per side of D.
    pub fn cells_per_side(&self) -> usize {
        (1.0 / self.epsilon).round() as usize
    }

    /// Blocks of `M x M` cells per side of D.
    pub fn blocks_per_side(&self) -> usize {
        self.cells_per_side() / self.m
    }

    pub fn block_size(&self) -> f64 {
        self.m as f64 * self.epsilon
    }

    pub fn microstructure(&self) -> MicrostructureSpec {
        let mut spec = MicrostructureSpec::new(self.test_case, self.distribution, self.seed);
        spec.n_ellipses = self.n_ellipses;
        spec.axis_range = (self.axis_min, self.axis_max);
        spec.fixed_geometry = self.fixed_geometry;
        spec
    }

    pub fn coefficient_reading(&self) -> &'static str {
        if self.diagonal_only {
            "diagonal_only"
        } else {
            "literal"
        }
    }

    /// Check every cross-field invariant.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(key, None, msg));
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad("epsilon", format!("must lie in (0, 1], got {}", self.epsilon));
        }
        if self.m == 0 {
            return bad("M", "must be positive".into());
        }
        let blocks = 1.0 / (self.m as f64 * self.epsilon);
        if (blocks - blocks.round()).abs() > 1e-9 || blocks.round() < 1.0 {
            return bad(
                "epsilon",
                format!(
                    "M * epsilon = {} must divide 1 so D splits into whole blocks",
                    self.m as f64 * self.epsilon
                ),
            );
        }
        let nb = blocks.round() as usize;
        if self.n1 % nb != 0 {
            return bad(
                "h1",
                format!(
                    "1/h1 = {} must be a multiple of the {nb} blocks per side so elements do not straddle blocks",
                    self.n1
                ),
            );
        }
        if self.n_cell == 0 || self.n0 == 0 || self.n1 == 0 || self.n_fine == 0 {
            return bad("h", "mesh sizes must be positive".into());
        }
        if self.test_case == TestCase::AI && self.n_cell % 4 != 0 {
            return bad(
                "h",
                format!(
                    "1/h = {} must be a multiple of 4 to fit the square inclusion (0.25, 0.75)",
                    self.n_cell
                ),
            );
        }
        if self.degree != 1 {
            return bad("r", format!("only degree 1 elements are supported, got {}", self.degree));
        }
        if !matches!(self.quadrature_order, 1 | 2) {
            return bad("quadrature_order", format!("must be 1 or 2, got {}", self.quadrature_order));
        }
        if self.samples == 0 {
            return bad("L", "must be at least 1".into());
        }
        if let Distribution::TruncatedNormal { b } = self.distribution {
            if !(b > 0.0) {
                return bad("b", format!("must be positive, got {b}"));
            }
        }
        if !(self.axis_min > 0.0 && self.axis_min <= self.axis_max && self.axis_max < 0.5) {
            return bad(
                "axis_min",
                format!("need 0 < axis_min <= axis_max < 0.5, got {} and {}", self.axis_min, self.axis_max),
            );
        }
        if !(self.cg_tol > 0.0 && self.cg_tol < 1.0) {
            return bad("cg_tol", format!("must lie in (0, 1), got {}", self.cg_tol));
        }
        if self.n_periodization == 0 {
            return bad("N", "must be positive".into());
        }
        if self.replicates == 0 || self.delta_samples == 0 || self.direct_samples == 0 || self.sets == 0 {
            return bad("replicates", "study counts must be positive".into());
        }
        if self.m_list.is_empty() || self.m_list.iter().any(|&m| m == 0) {
            return bad("M_list", "must list positive block sizes".into());
        }
        if self.scale_list.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return bad("scale_list", "scales must lie in (0, 1]".into());
        }
        if self.l_list.iter().any(|&l| l == 0) {
            return bad("L_list", "sample counts must be positive".into());
        }
        Ok(())
    }

    /// Canonical config text; parsing it reproduces this config.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        for section in SECTIONS {
            let _ = writeln!(out, "[{section}]");
            for (s, key) in KEYS {
                if *s != section {
                    continue;
                }
                if let Some(v) = self.value_text(key) {
                    let _ = writeln!(out, "{key} = {v}");
                }
            }
            out.push('\n');
        }
        out
    }

    fn value_text(&self, key: &str) -> Option<String> {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        Some(match key {
            "test_case" => self.test_case.name().to_string(),
            "epsilon" => fmt_f64(self.epsilon),
            "M" => self.m.to_string(),
            "N" => self.n_periodization.to_string(),
            "f" => fmt_f64(self.f),
            "diagonal_only" => self.diagonal_only.to_string(),
            "custom_value" => fmt_f64(self.custom_value),
            "h" => format!("1/{}", self.n_cell),
            "h0" => format!("1/{}", self.n0),
            "h1" => format!("1/{}", self.n1),
            "r" => self.degree.to_string(),
            "quadrature_order" => self.quadrature_order.to_string(),
            "n_fine" => self.n_fine.to_string(),
            "cg_tol" => fmt_f64(self.cg_tol),
            "L" => self.samples.to_string(),
            "distribution" => self.distribution.name().to_string(),
            "b" => match self.distribution {
                Distribution::TruncatedNormal { b } => fmt_f64(b),
                Distribution::Uniform => return None,
            },
            "seed" => self.seed.to_string(),
            "sample_index" => self.sample_index.to_string(),
            "n_ellipses" => self.n_ellipses.to_string(),
            "axis_min" => fmt_f64(self.axis_min),
            "axis_max" => fmt_f64(self.axis_max),
            "fixed_geometry" => self.fixed_geometry.to_string(),
            "sigma" => fmt_f64(self.sigma?),
            "M_list" => list(&self.m_list),
            "scale_list" => self
                .scale_list
                .iter()
                .map(|x| fmt_f64(*x))
                .collect::<Vec<_>>()
                .join(","),
            "L_list" => list(&self.l_list),
            "replicates" => self.replicates.to_string(),
            "delta_samples" => self.delta_samples.to_string(),
            "direct_samples" => self.direct_samples.to_string(),
            "sets" => self.sets.to_string(),
            _ => return None,
        })
    }
}

fn default_cell_subdivisions(test_case: TestCase) -> usize {
    match test_case {
        TestCase::AI | TestCase::Custom => 60,
        _ => 120,
    }
}

/// Shortest decimal that round-trips.
fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_number(key: &str, raw: &str, line: Option<usize>) -> Result<f64> {
    let err = || Error::config(key, line, format!("malformed number `{raw}`"));
    let v = match raw.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| err())?;
            let b: f64 = b.trim().parse().map_err(|_| err())?;
            if b == 0.0 {
                return Err(err());
            }
            a / b
        }
        None => raw.trim().parse().map_err(|_| err())?,
    };
    if !v.is_finite() {
        return Err(err());
    }
    Ok(v)
}

fn parse_count(key: &str, raw: &str, line: Option<usize>) -> Result<usize> {
    raw.trim()
        .parse()
        .map_err(|_| Error::config(key, line, format!("expected a non-negative integer, got `{raw}`")))
}

fn parse_bool(key: &str, raw: &str, line: Option<usize>) -> Result<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(key, line, format!("expected true/false, got `{raw}`"))),
    }
}

/// Mesh size `1/n` given as a fraction or decimal; returns `n`.
fn parse_mesh_size(key: &str, raw: &str, line: Option<usize>) -> Result<usize> {
    let h = parse_number(key, raw, line)?;
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::config(key, line, format!("mesh size must lie in (0, 1], got {h}")));
    }
    let n = 1.0 / h;
    if (n - n.round()).abs() > 1e-6 * n {
        return Err(Error::config(key, line, format!("1/{key} must be an integer, got {n}")));
    }
    Ok(n.round() as usize)
}

fn split_list(raw: &str) -> impl Iterator<Item = &str> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn canonical_key(raw: &str) -> Option<&'static str> {
    let bare = raw.rsplit('.').next().unwrap_or(raw).trim();
    KEYS.iter()
        .find(|(_, k)| *k == bare || k.eq_ignore_ascii_case(bare) && !matches!(*k, "M" | "N" | "L"))
        .map(|(_, k)| *k)
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: Option<usize>,
}

/// Parse config text (no overrides).
pub fn parse_config_text(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut entries: BTreeMap<&'static str, Entry> = BTreeMap::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(Error::config(name, Some(lineno), "unknown section"));
            }
            section = Some(name.to_string());
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::config(line, Some(lineno), "expected `key = value`"));
        };
        let k = k.trim();
        let key = canonical_key(k).ok_or_else(|| Error::config(k, Some(lineno), "unknown key"))?;
        if let Some(sec) = &section {
            let expected = KEYS.iter().find(|(_, kk)| *kk == key).map(|(s, _)| *s);
            if expected != Some(sec.as_str()) {
                return Err(Error::config(
                    k,
                    Some(lineno),
                    format!("belongs in section [{}]", expected.unwrap_or("?")),
                ));
            }
        }
        if entries.contains_key(key) {
            return Err(Error::config(k, Some(lineno), "duplicate key"));
        }
        entries.insert(
            key,
            Entry {
                value: v.trim().to_string(),
                line: Some(lineno),
            },
        );
    }
    for ov in overrides {
        let Some((k, v)) = ov.split_once('=') else {
            return Err(Error::config(ov, None, "override must be key=value"));
        };
        let key = canonical_key(k).ok_or_else(|| Error::config(k.trim(), None, "unknown key"))?;
        entries.insert(
            key,
            Entry {
                value: v.trim().to_string(),
                line: None,
            },
        );
    }
    build(&entries)
}

fn build(entries: &BTreeMap<&'static str, Entry>) -> Result<RunConfig> {
    let get = |k: &str| entries.get(k);
    let test_case = match get("test_case") {
        Some(e) => TestCase::parse(&e.value).ok_or_else(|| {
            Error::config("test_case", e.line, format!("unknown test case `{}`", e.value))
        })?,
        None => TestCase::AI,
    };
    let mut c = RunConfig::for_case(test_case);
    let mut b = 1.5;
    let mut dist_name = "truncated_normal".to_string();
    for (key, e) in entries {
        let (v, line) = (e.value.as_str(), e.line);
        match *key {
            "test_case" => {}
            "epsilon" => c.epsilon = parse_number(key, v, line)?,
            "M" => c.m = parse_count(key, v, line)?,
            "N" => c.n_periodization = parse_count(key, v, line)?,
            "f" => c.f = parse_number(key, v, line)?,
            "diagonal_only" => c.diagonal_only = parse_bool(key, v, line)?,
            "custom_value" => c.custom_value = parse_number(key, v, line)?,
            "h" => c.n_cell = parse_mesh_size(key, v, line)?,
            "h0" => c.n0 = parse_mesh_size(key, v, line)?,
            "h1" => c.n1 = parse_mesh_size(key, v, line)?,
            "r" => c.degree = parse_count(key, v, line)?,
            "quadrature_order" => c.quadrature_order = parse_count(key, v, line)?,
            "n_fine" => c.n_fine = parse_count(key, v, line)?,
            "cg_tol" => c.cg_tol = parse_number(key, v, line)?,
            "L" => c.samples = parse_count(key, v, line)?,
            "distribution" => dist_name = v.to_ascii_lowercase(),
            "b" => b = parse_number(key, v, line)?,
            "seed" => {
                c.seed = v
                    .parse()
                    .map_err(|_| Error::config(*key, line, format!("malformed seed `{v}`")))?
            }
            "sample_index" => c.sample_index = parse_count(key, v, line)? as u64,
            "n_ellipses" => c.n_ellipses = parse_count(key, v, line)?,
            "axis_min" => c.axis_min = parse_number(key, v, line)?,
            "axis_max" => c.axis_max = parse_number(key, v, line)?,
            "fixed_geometry" => c.fixed_geometry = parse_bool(key, v, line)?,
            "sigma" => c.sigma = Some(parse_number(key, v, line)?),
            "M_list" => {
                c.m_list = split_list(v).map(|x| parse_count(key, x, line)).collect::<Result<_>>()?
            }
            "scale_list" => {
                c.scale_list = split_list(v).map(|x| parse_number(key, x, line)).collect::<Result<_>>()?
            }
            "L_list" => {
                c.l_list = split_list(v).map(|x| parse_count(key, x, line)).collect::<Result<_>>()?
            }
            "replicates" => c.replicates = parse_count(key, v, line)?,
            "delta_samples" => c.delta_samples = parse_count(key, v, line)?,
            "direct_samples" => c.direct_samples = parse_count(key, v, line)?,
            "sets" => c.sets = parse_count(key, v, line)?,
            other => return Err(Error::config(other, line, "unknown key")),
        }
    }
    c.distribution = match dist_name.as_str() {
        "uniform" => Distribution::Uniform,
        "truncated_normal" | "truncnorm" | "normal" => Distribution::TruncatedNormal { b },
        other => {
            let line = get("distribution").and_then(|e| e.line);
            return Err(Error::config(
                "distribution",
                line,
                format!("unknown distribution `{other}` (uniform | truncated_normal)"),
            ));
        }
    };
    c.validate().map_err(|e| match e {
        Error::Config { key, message, .. } => {
            let line = entries.get(key.as_str()).and_then(|e| e.line);
            Error::Config { key, line, message }
        }
        other => other,
    })?;
    Ok(c)
}

/// Read a config file (or defaults when `path` is `None`) and apply overrides.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    parse_config_text(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config_text("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.epsilon, 0.125);
        assert_eq!(c.m, 1);
        assert_eq!(c.f, 10.0);
        assert_eq!(c.distribution, Distribution::TruncatedNormal { b: 1.5 });
        assert_eq!(c.n0, 100);
        assert_eq!(c.n_cell, 60);
        assert_eq!(c.blocks_per_side(), 8);
    }

    #[test]
    fn overrides_apply() {
        let c = parse_config_text("", &["L=484".into(), "random.seed=7".into()]).unwrap();
        assert_eq!(c.samples, 484);
        assert_eq!(c.seed, 7);
        let c = parse_config_text("", &["test_case=C".into()]).unwrap();
        assert_eq!(c.n_cell, 120);
        assert_eq!(c.n_ellipses, 10);
        let c = parse_config_text("", &["test_case=A_II".into()]).unwrap();
        assert_eq!(c.n_ellipses, 70);
    }

    #[test]
    fn invariant_violations_rejected() {
        let e = parse_config_text("[problem]\nepsilon = 1/7\nM = 2\n", &[]).unwrap_err();
        match e {
            Error::Config { key, line, .. } => {
                assert_eq!(key, "epsilon");
                assert_eq!(line, Some(2));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_config_text("", &["h1=1/100".into()]).is_err());
        assert!(parse_config_text("", &["h=1/30".into()]).is_err());
        assert!(parse_config_text("", &["r=2".into()]).is_err());
    }

    #[test]
    fn epsilon_one_seventh_with_unit_blocks_is_rejected_by_mesh_alignment() {
        // 1/7 itself tiles D, but the default h1 = 1/104 does not fit 7 blocks
        let e = parse_config_text("[problem]\nepsilon = 1/7\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "h1"));
    }

    #[test]
    fn malformed_input_names_key_and_line() {
        let e = parse_config_text("[mesh]\nh = abc\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, line: Some(2), .. } if key == "h"));
        let e = parse_config_text("[mesh]\nbogus = 1\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { line: Some(2), .. }));
        let e = parse_config_text("[mesh]\nL = 5\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { line: Some(2), .. }));
        assert!(parse_config_text("[nope]\n", &[]).is_err());
        assert!(parse_config_text("", &["nokey=1".into()]).is_err());
    }

    #[test]
    fn echo_roundtrips() {
        let c = parse_config_text(
            "[problem]\ntest_case = C\nepsilon = 1/4\nM = 2\n[random]\ndistribution = uniform\n[study]\nsigma = 0.5\nscale_list = 1, 0.5\n",
            &["h1=1/64".into()],
        )
        .unwrap();
        let back = parse_config_text(&c.to_ini(), &[]).unwrap();
        assert_eq!(c, back);
    }
}
