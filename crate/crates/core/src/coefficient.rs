//! Scalar coefficient fields sampled at fine-cell centres.
//!
//! The random family draws its lattice values from ChaCha8 (`rand_chacha`)
//! seeded with `seed_from_u64(seed)`; standard normals come from
//! `rand_distr::StandardNormal`, consumed in row-major lattice order
//! (`j` outer, `i` inner, `0 <= i, j <= 128`). One generator stream per field.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::GridHierarchy;

/// Oscillation lengths of the five-scale coefficient.
pub const TRIG_SCALES: [f64; 5] = [1.0 / 5.0, 1.0 / 13.0, 1.0 / 17.0, 1.0 / 31.0, 1.0 / 65.0];

/// Lattice resolution of the random field (`2^7` cells per side).
pub const RANDOM_LATTICE: usize = 128;

/// Radius of the high-contrast inclusions around the lattice points.
pub const CHANNEL_RADIUS: f64 = 0.025;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CoefficientFamily {
    MultiscaleTrig,
    RandomField { seed: u64 },
    HighContrast { contrast: f64 },
    Unit,
    Custom { name: String },
}

impl CoefficientFamily {
    pub fn label(&self) -> String {
        match self {
            Self::MultiscaleTrig => "trig".into(),
            Self::RandomField { seed } => format!("random(seed={seed})"),
            Self::HighContrast { contrast } => format!("contrast(M={contrast})"),
            Self::Unit => "unit".into(),
            Self::Custom { name } => format!("custom({name})"),
        }
    }
}

/// Piecewise-constant coefficient on the fine grid, one value per cell,
/// row-major (`cy * nf + cx`).
#[derive(Clone, Debug)]
pub struct CoefficientField {
    nf: usize,
    values: Vec<f64>,
    family: CoefficientFamily,
    a_min: f64,
    a_max: f64,
}

/// The field was built on a fine grid coarser than its own lattice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolutionWarning {
    pub nf: usize,
    pub lattice: usize,
}

impl std::fmt::Display for ResolutionWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "fine grid nf={} under-resolves the {}-cell random lattice", self.nf, self.lattice)
    }
}

impl CoefficientField {
    pub fn from_values(nf: usize, values: Vec<f64>, family: CoefficientFamily) -> Result<Self> {
        if values.len() != nf * nf {
            return Err(Error::DimensionMismatch { expected: nf * nf, got: values.len() });
        }
        let mut a_min = f64::INFINITY;
        let mut a_max = f64::NEG_INFINITY;
        for (k, &v) in values.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NonPositiveCoefficient { i: k % nf, j: k / nf, value: v });
            }
            a_min = a_min.min(v);
            a_max = a_max.max(v);
        }
        Ok(Self { nf, values, family, a_min, a_max })
    }

    pub fn nf(&self) -> usize {
        self.nf
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn cell(&self, cx: usize, cy: usize) -> f64 {
        self.values[cy * self.nf + cx]
    }

    pub fn family(&self) -> &CoefficientFamily {
        &self.family
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    /// The same field multiplied by a positive constant.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_values(
            self.nf,
            self.values.iter().map(|v| v * factor).collect(),
            CoefficientFamily::Custom { name: format!("{}*{factor}", self.family.label()) },
        )
    }

    /// SHA-256 over the family descriptor, `nf` and the raw value bytes.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.family).unwrap_or_default());
        hasher.update((self.nf as u64).to_le_bytes());
        for v in &self.values {
            hasher.update(v.to_le_bytes());
        }
        hex(&hasher.finalize())
    }

    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "family": self.family,
            "nf": self.nf,
            "a_min": self.a_min,
            "a_max": self.a_max,
            "hash": self.hash(),
        })
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// The five-scale trigonometric coefficient.
pub fn eval_multiscale_trig(x: [f64; 2]) -> f64 {
    let [x1, x2] = x;
    let [e1, e2, e3, e4, e5] = TRIG_SCALES;
    let s = |v: f64, eps: f64| (2.0 * PI * v / eps).sin();
    let c = |v: f64, eps: f64| (2.0 * PI * v / eps).cos();
    let terms = (1.1 + s(x1, e1)) / (1.1 + s(x2, e1))
        + (1.1 + s(x2, e2)) / (1.1 + c(x1, e2))
        + (1.1 + c(x1, e3)) / (1.1 + s(x2, e3))
        + (1.1 + s(x2, e4)) / (1.1 + c(x1, e4))
        + (1.1 + c(x1, e5)) / (1.1 + s(x2, e5))
        + (4.0 * x1 * x1 * x2 * x2).sin()
        + 1.0;
    terms / 6.0
}

/// Coefficient value of the channel field at a point.
pub fn eval_high_contrast(x: [f64; 2], contrast: f64) -> f64 {
    // nearest lattice coordinate in {0.2, ..., 0.8}
    let nearest = |v: f64| ((v * 10.0).round().clamp(2.0, 8.0)) / 10.0;
    let dx = x[0] - nearest(x[0]);
    let dy = x[1] - nearest(x[1]);
    if (dx * dx + dy * dy).sqrt() < CHANNEL_RADIUS {
        contrast
    } else {
        1.0
    }
}

pub fn cell_center(g: &GridHierarchy, cx: usize, cy: usize) -> [f64; 2] {
    let h = g.fine_h();
    [(cx as f64 + 0.5) * h, (cy as f64 + 0.5) * h]
}

/// Samples a pointwise evaluator at every fine-cell centre.
pub fn sample_to_cells<F>(g: &GridHierarchy, family: CoefficientFamily, f: F) -> Result<CoefficientField>
where
    F: Fn([f64; 2]) -> f64,
{
    let nf = g.nf();
    let mut values = Vec::with_capacity(nf * nf);
    for cy in 0..nf {
        for cx in 0..nf {
            values.push(f(cell_center(g, cx, cy)));
        }
    }
    CoefficientField::from_values(nf, values, family)
}

pub fn build_unit(g: &GridHierarchy) -> CoefficientField {
    CoefficientField::from_values(g.nf(), vec![1.0; g.num_fine_cells()], CoefficientFamily::Unit)
        .expect("unit field is positive")
}

pub fn build_multiscale_trig(g: &GridHierarchy) -> CoefficientField {
    sample_to_cells(g, CoefficientFamily::MultiscaleTrig, eval_multiscale_trig)
        .expect("trig coefficient is positive")
}

pub fn build_high_contrast(g: &GridHierarchy, contrast: f64) -> Result<CoefficientField> {
    if !(contrast > 1.0) {
        return Err(Error::Config(format!("contrast must exceed 1, got {contrast}")));
    }
    sample_to_cells(g, CoefficientFamily::HighContrast { contrast }, |x| eval_high_contrast(x, contrast))
}

/// Gaussian lattice values `xi[j * 129 + i]` for the given seed.
pub fn random_lattice(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = RANDOM_LATTICE + 1;
    (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Bilinear interpolation of the lattice at a point of the unit square.
pub fn interpolate_lattice(xi: &[f64], x: [f64; 2]) -> f64 {
    let n = RANDOM_LATTICE;
    let sx = x[0] * n as f64;
    let sy = x[1] * n as f64;
    let i = (sx.floor() as usize).min(n - 1);
    let j = (sy.floor() as usize).min(n - 1);
    let tx = sx - i as f64;
    let ty = sy - j as f64;
    let at = |i: usize, j: usize| xi[j * (n + 1) + i];
    (1.0 - tx) * (1.0 - ty) * at(i, j)
        + tx * (1.0 - ty) * at(i + 1, j)
        + (1.0 - tx) * ty * at(i, j + 1)
        + tx * ty * at(i + 1, j + 1)
}

/// `a(x) = |xi(x)| + 0.5` with `xi` the bilinear interpolant of an i.i.d.
/// Gaussian lattice.
pub fn build_random_field(
    g: &GridHierarchy,
    seed: u64,
) -> (CoefficientField, Option<ResolutionWarning>) {
    let xi = random_lattice(seed);
    let field = sample_to_cells(g, CoefficientFamily::RandomField { seed }, |x| {
        interpolate_lattice(&xi, x).abs() + 0.5
    })
    .expect("random field is bounded below by 0.5");
    let warning = (g.nf() < RANDOM_LATTICE)
        .then_some(ResolutionWarning { nf: g.nf(), lattice: RANDOM_LATTICE });
    (field, warning)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trig_at_origin() {
        let expected = (1.0 + 1.1 / 2.1 + 2.1 / 1.1 + 1.1 / 2.1 + 2.1 / 1.1 + 0.0 + 1.0) / 6.0;
        assert!((eval_multiscale_trig([0.0, 0.0]) - expected).abs() < 1e-14);
        assert!((expected - 1.144300).abs() < 1e-6);
    }

    #[test]
    fn trig_first_term_is_periodic() {
        let first = |x: [f64; 2]| {
            let e1 = TRIG_SCALES[0];
            (1.1 + (2.0 * PI * x[0] / e1).sin()) / (1.1 + (2.0 * PI * x[1] / e1).sin())
        };
        assert!((first([0.0, 0.0]) - first([TRIG_SCALES[0], 0.0])).abs() < 1e-12);
    }

    #[test]
    fn trig_positive_on_fine_grid() {
        let g = GridHierarchy::new(32, 1024).unwrap();
        let a = build_multiscale_trig(&g);
        assert!(a.a_min() > 0.0);
        assert!(a.values().iter().all(|&v| v >= a.a_min() && v <= a.a_max()));
    }

    #[test]
    fn sampling_rejects_nonpositive() {
        let g = GridHierarchy::new(2, 4).unwrap();
        let r = sample_to_cells(&g, CoefficientFamily::Custom { name: "neg".into() }, |_| -1.0);
        assert!(matches!(r, Err(Error::NonPositiveCoefficient { .. })));
        let unit = sample_to_cells(&g, CoefficientFamily::Unit, |_| 1.0).unwrap();
        assert_eq!((unit.a_min(), unit.a_max()), (1.0, 1.0));
    }

    #[test]
    fn sampling_piecewise_constant_is_idempotent() {
        let g = GridHierarchy::new(4, 16).unwrap();
        let a = build_multiscale_trig(&g);
        let h = g.fine_h();
        let again = sample_to_cells(&g, CoefficientFamily::Custom { name: "copy".into() }, |x| {
            let cx = (x[0] / h).floor() as usize;
            let cy = (x[1] / h).floor() as usize;
            a.cell(cx, cy)
        })
        .unwrap();
        assert_eq!(a.values(), again.values());
    }

    #[test]
    fn high_contrast_points() {
        assert_eq!(eval_high_contrast([0.5, 0.5], 1024.0), 1024.0);
        assert_eq!(eval_high_contrast([0.05, 0.05], 1024.0), 1.0);
        assert_eq!(eval_high_contrast([0.2 + 0.024, 0.3], 8.0), 8.0);
        assert_eq!(eval_high_contrast([0.2 + 0.026, 0.3], 8.0), 1.0);
        assert_eq!(eval_high_contrast([0.85, 0.5], 8.0), 1.0);
    }

    #[test]
    fn high_contrast_area_and_symmetry() {
        let g = GridHierarchy::new(32, 1024).unwrap();
        let m = 2f64.powi(10);
        let a = build_high_contrast(&g, m).unwrap();
        assert!(a.values().iter().all(|&v| v == 1.0 || v == m));
        let frac = a.values().iter().filter(|&&v| v == m).count() as f64 / a.values().len() as f64;
        let expected = 49.0 * PI * CHANNEL_RADIUS * CHANNEL_RADIUS;
        assert!((frac - expected).abs() < 0.01, "{frac} vs {expected}");
        let nf = g.nf();
        for cy in 0..nf {
            for cx in 0..nf {
                let v = a.cell(cx, cy);
                assert_eq!(v, a.cell(cy, cx));
                assert_eq!(v, a.cell(nf - 1 - cx, cy));
                assert_eq!(v, a.cell(cx, nf - 1 - cy));
            }
        }
        assert!(build_high_contrast(&g, 1.0).is_err());
    }

    #[test]
    fn random_field_contract() {
        let g = GridHierarchy::new(8, 256).unwrap();
        let (a, warn) = build_random_field(&g, 1);
        assert!(warn.is_none());
        let (b, _) = build_random_field(&g, 1);
        assert_eq!(a.values(), b.values());
        assert!(a.a_min() >= 0.5);
        // E a = 0.5 + sqrt(2/pi) * (int_0^1 sqrt((1-t)^2 + t^2) dt)^2: the bilinear
        // interpolant has pointwise variance ((1-tx)^2 + tx^2)((1-ty)^2 + ty^2).
        let n = 20_000;
        let root_p: f64 = (0..n)
            .map(|k| {
                let t = (k as f64 + 0.5) / n as f64;
                ((1.0 - t).powi(2) + t * t).sqrt()
            })
            .sum::<f64>()
            / n as f64;
        let expected = 0.5 + (2.0 / PI).sqrt() * root_p * root_p;
        assert!((expected - 1.0256).abs() < 1e-3);
        let mean = a.values().iter().sum::<f64>() / a.values().len() as f64;
        assert!((mean - expected).abs() < 0.05, "mean {mean} vs {expected}");
        let (c, _) = build_random_field(&g, 2);
        assert!(a.values().iter().zip(c.values()).any(|(x, y)| x != y));
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn random_field_warns_when_under_resolved() {
        let g = GridHierarchy::new(4, 64).unwrap();
        let (a, warn) = build_random_field(&g, 3);
        assert!(warn.is_some());
        assert!(a.a_min() >= 0.5);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let g = GridHierarchy::new(2, 8).unwrap();
        let a = build_multiscale_trig(&g);
        assert_eq!(a.hash(), build_multiscale_trig(&g).hash());
        assert_ne!(a.hash(), build_unit(&g).hash());
        assert_eq!(a.hash().len(), 64);
    }
}
