//! Small-mesh invariant checks across all modules, with a machine-readable
//! pass/fail entry per invariant.

use std::time::Instant;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::Serialize;

use crate::coefficient::{build_high_contrast, build_multiscale_trig, build_random_field, build_unit, CoefficientField};
use crate::dense::quad;
use crate::edge_basis::{
    build_edge_basis, edge_svd, h00_half_norm, h_half_gram, load_store, save_store, RestrictionOperator,
};
use crate::error::Result;
use crate::fem::{
    cell_stiffness, elementwise_bubble, energy_inner, energy_norm, harmonic_part, load_vector, reference_solve,
    ElementSchur, FineRect, SymbolicCache,
};
use crate::galerkin::{error_report, residual_orthogonality_check, solve_variant, OnlineData};
use crate::mesh::GridHierarchy;
use crate::util::with_threads;

#[derive(Clone, Debug, Serialize)]
pub struct PropertyEntry {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct PropertyReport {
    pub entries: Vec<PropertyEntry>,
    pub elapsed_s: f64,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

struct Collector {
    entries: Vec<PropertyEntry>,
}

impl Collector {
    /// Records `value <= tolerance`.
    fn below(&mut self, name: &str, value: f64, tolerance: f64, detail: String) {
        self.entries.push(PropertyEntry {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
            detail,
        });
    }

    fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.entries.push(PropertyEntry {
            name: name.into(),
            passed: ok,
            value: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
            detail,
        });
    }

    fn error(&mut self, name: &str, err: crate::Error) {
        self.check(name, false, format!("error: {err}"));
    }
}

fn fields(g: &GridHierarchy) -> Vec<(&'static str, CoefficientField)> {
    vec![
        ("unit", build_unit(g)),
        ("trig", build_multiscale_trig(g)),
        ("random", build_random_field(g, 7).0),
        ("contrast", build_high_contrast(g, 1024.0).expect("positive contrast")),
    ]
}

const GRIDS: [(usize, usize); 3] = [(2, 8), (4, 16), (8, 32)];

type Check = fn(&mut Collector) -> Result<()>;

/// Runs every invariant; failures become report entries, never panics.
pub fn run_property_suite() -> PropertyReport {
    let t = Instant::now();
    let mut c = Collector { entries: Vec::new() };
    let checks: [(&str, Check); 8] = [
        ("splitting", splitting),
        ("dense_schur_oracle", dense_schur),
        ("edge_svd", edge_operator),
        ("norm_equivalence", norm_equivalence),
        ("bubble_scaling", bubble_scaling),
        ("galerkin", galerkin),
        ("store", store),
        ("thread_determinism", determinism),
    ];
    for (name, f) in checks {
        if let Err(e) = f(&mut c) {
            c.error(name, e);
        }
    }
    PropertyReport { entries: c.entries, elapsed_s: t.elapsed().as_secs_f64() }
}

/// `u = u^h + u^b` and `a(u^h, u^b) = 0`.
fn splitting(c: &mut Collector) -> Result<()> {
    let f = |x: [f64; 2]| 1.0 + x[0] * x[0] - 2.0 * x[1];
    let (mut orth, mut split) = (0.0f64, 0.0f64);
    for (nc, nf) in GRIDS {
        let g = GridHierarchy::new(nc, nf)?;
        for (_, field) in fields(&g) {
            let cache = SymbolicCache::new();
            let u = reference_solve(&g, &field, &f)?;
            let uh = harmonic_part(&g, &field, &cache, &u)?;
            let ub = elementwise_bubble(&g, &field, &cache, &load_vector(&g, &f))?;
            let cross = energy_inner(&field, &uh, &ub)?.abs();
            orth = orth.max(cross / (energy_norm(&field, &uh)? * energy_norm(&field, &ub)?));
            let mut r = u.sub(&uh);
            r.axpy(-1.0, &ub);
            split = split.max(r.max_abs() / u.max_abs());
        }
    }
    c.below("orthogonality", orth, 1e-10, "max |a(u^h,u^b)| / (|u^h| |u^b|)".into());
    c.below("splitting_identity", split, 1e-10, "max |u - u^h - u^b| / max |u|".into());
    Ok(())
}

/// Element Schur complements against dense elimination of the full element matrix.
fn dense_schur(c: &mut Collector) -> Result<()> {
    let g = GridHierarchy::new(4, 16)?;
    let mut worst = 0.0f64;
    for (_, field) in fields(&g) {
        let cache = SymbolicCache::new();
        let schur = ElementSchur::compute(&g, &field, &cache)?;
        for t in [0, 5, 15] {
            let rect = FineRect::from_coarse(&g, g.element_rect(t));
            let n = rect.num_nodes();
            let mut a = Mat::<f64>::zeros(n, n);
            for cy in rect.y0..rect.y1 {
                for cx in rect.x0..rect.x1 {
                    let k = cell_stiffness(field.cell(cx, cy), g.fine_h());
                    let ids = [
                        rect.local(cx, cy),
                        rect.local(cx + 1, cy),
                        rect.local(cx, cy + 1),
                        rect.local(cx + 1, cy + 1),
                    ];
                    for i in 0..4 {
                        for j in 0..4 {
                            a[(ids[i], ids[j])] += k[i][j];
                        }
                    }
                }
            }
            let b: Vec<usize> = rect.perimeter().iter().map(|&(x, y)| rect.local(x, y)).collect();
            let interior: Vec<usize> = (0..n).filter(|i| !b.contains(i)).collect();
            let aii = Mat::from_fn(interior.len(), interior.len(), |i, j| a[(interior[i], interior[j])]);
            let aib = Mat::from_fn(interior.len(), b.len(), |i, j| a[(interior[i], b[j])]);
            let x = aii.llt(Side::Lower).map_err(|e| crate::Error::Eigen(format!("{e:?}")))?.solve(&aib);
            let s = schur.get(t);
            let nb = b.len();
            let scale = (0..nb).map(|i| a[(b[i], b[i])].abs()).fold(0.0, f64::max);
            for i in 0..nb {
                for j in 0..nb {
                    let mut v = a[(b[i], b[j])];
                    for k in 0..interior.len() {
                        v -= aib[(k, i)] * x[(k, j)];
                    }
                    worst = worst.max((v - s[i * nb + j]).abs() / scale);
                }
            }
        }
    }
    c.below("dense_schur_oracle", worst, 1e-8, "element Schur vs dense elimination, nc=4 nf=16".into());
    Ok(())
}

/// Restriction operator: constants in the kernel, sorted singular values, and
/// agreement of the adjoint route with the explicit pencil.
fn edge_operator(c: &mut Collector) -> Result<()> {
    let g = GridHierarchy::new(4, 16)?;
    let (mut kernel, mut agree) = (0.0f64, 0.0f64);
    let mut sorted = true;
    for (_, field) in fields(&g) {
        let cache = SymbolicCache::new();
        let schur = ElementSchur::compute(&g, &field, &cache)?;
        for e in 0..g.num_edges() {
            let op = RestrictionOperator::build(&g, &field, e, Some(&cache))?;
            let gram = h_half_gram(&g, &schur, e);
            if op.constant_kernel {
                let scale = op.r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let r1 = op.apply(&vec![1.0; op.boundary.len()]);
                kernel = kernel.max(r1.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale);
            }
            let fast = edge_svd(&g, &field, &schur, &cache, e, 2, None)?.svd;
            let dense = op.svd(&gram, 2)?;
            sorted &= fast.lambda.windows(2).all(|w| w[0] >= w[1]);
            for (a, b) in fast.lambda.iter().zip(&dense.lambda) {
                agree = agree.max((a - b).abs() / fast.lambda[0].max(f64::MIN_POSITIVE));
            }
        }
    }
    c.below("restriction_constant_kernel", kernel, 1e-12, "max |R_e 1| / max |R_e|, interior patches".into());
    c.check("singular_values_sorted", sorted, "non-increasing on every edge".into());
    c.below("svd_dense_oracle", agree, 1e-8, "adjoint route vs explicit pencil, relative to lambda_1".into());
    Ok(())
}

/// `H^{1/2}` (harmonic extension) against the `H^{1/2}_{00}` quadrature on a
/// central edge for a = 1, across three mesh sizes with fixed `nf/nc`.
fn norm_equivalence(c: &mut Collector) -> Result<()> {
    let mut ratios = Vec::new();
    for nc in [8usize, 16, 32] {
        let g = GridHierarchy::new(nc, 8 * nc)?;
        let field = build_unit(&g);
        let cache = SymbolicCache::new();
        let schur = ElementSchur::compute(&g, &field, &cache)?;
        let e = (nc / 2 - 1) * nc + nc / 2;
        let gram = h_half_gram(&g, &schur, e);
        let s = g.ratio();
        let shapes: [fn(f64) -> f64; 4] = [
            |t| (std::f64::consts::PI * t).sin(),
            |t| (3.0 * std::f64::consts::PI * t).sin(),
            |t| t.min(1.0 - t),
            |t| t * (1.0 - t) * (t - 0.3),
        ];
        for shape in shapes {
            let full: Vec<f64> = (0..=s).map(|k| shape(k as f64 / s as f64)).collect();
            let interior = &full[1..s];
            let h = quad(&gram, interior, interior).sqrt();
            ratios.push(h / h00_half_norm(g.coarse_h(), &full));
        }
    }
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    c.below("norm_ratio_bounded", max / min, 10.0, format!("ratio range [{min:.3}, {max:.3}], H = 1/8..1/32"));
    Ok(())
}

/// `|u^b|_a` and the aggregate oversampling-bubble norm roughly halve with H.
fn bubble_scaling(c: &mut Collector) -> Result<()> {
    let f = |_: [f64; 2]| -1.0;
    let (mut ub, mut os) = (Vec::new(), Vec::new());
    for nc in [4usize, 8, 16] {
        let g = GridHierarchy::new(nc, 64)?;
        let field = build_unit(&g);
        let cache = SymbolicCache::new();
        let schur = ElementSchur::compute(&g, &field, &cache)?;
        let online = OnlineData::new(&g, &field, &schur, &cache, &f)?;
        ub.push(energy_norm(&field, &online.bubble)?);
        let (_, bubbles) = build_edge_basis(&g, &field, &schur, &cache, 0, Some(&online.load))?;
        let total: f64 = bubbles
            .unwrap()
            .iter()
            .map(|b| quad(&h_half_gram(&g, &schur, b.edge), b.interior(), b.interior()))
            .sum();
        os.push(total.sqrt());
    }
    for (name, v) in [("bubble_halving", &ub), ("os_bubble_halving", &os)] {
        let ratios: Vec<f64> = v.windows(2).map(|w| w[0] / w[1]).collect();
        let ok = ratios.iter().all(|r| (1.5..=3.0).contains(r));
        c.check(name, ok, format!("norm ratios per halving of H: {ratios:.3?}"));
    }
    Ok(())
}

/// Galerkin defect, nested-space monotonicity, variant ordering and the
/// energy Pythagoras identity.
fn galerkin(c: &mut Collector) -> Result<()> {
    let f = |x: [f64; 2]| 1.0 + x[0] * x[0] - 2.0 * x[1];
    let (mut defect, mut pyth) = (0.0f64, 0.0f64);
    let (mut monotone, mut ordered) = (true, true);
    for (nc, nf) in [(4usize, 16usize), (4, 32)] {
        let g = GridHierarchy::new(nc, nf)?;
        for (_, field) in fields(&g) {
            let cache = SymbolicCache::new();
            let schur = ElementSchur::compute(&g, &field, &cache)?;
            let online = OnlineData::new(&g, &field, &schur, &cache, &f)?;
            let u_ref = reference_solve(&g, &field, &f)?;
            let (basis, os) = build_edge_basis(&g, &field, &schur, &cache, 3, Some(&online.load))?;
            let ratio_b = energy_norm(&field, &online.bubble)? / energy_norm(&field, &u_ref)?;
            let mut last = [f64::INFINITY; 3];
            for m in 0..=3 {
                let b = basis.uniform(m);
                let mut e = [0.0; 3];
                for k in 1..=3u8 {
                    let (u, space) = solve_variant(&online, &b, os.as_deref(), k)?;
                    e[k as usize - 1] = error_report(&u, &u_ref, &field)?.0;
                    if m == 2 && k == 3 {
                        defect = defect.max(residual_orthogonality_check(&online, &space, &u, &u_ref)?);
                    }
                }
                for k in 0..3 {
                    monotone &= e[k] <= last[k] * (1.0 + 1e-10);
                }
                last = e;
                ordered &= e[1] <= e[0];
                pyth = pyth.max((e[0] * e[0] - e[1] * e[1] - ratio_b * ratio_b).abs());
            }
        }
    }
    c.below("galerkin_orthogonality", defect, 1e-8, "max normalized a(u_ref - u_H, phi)".into());
    c.check("monotone_in_m", monotone, "energy error non-increasing in m for k = 1, 2, 3".into());
    c.check("variant_ordering", ordered, "e_E(k=2) <= e_E(k=1)".into());
    c.below("energy_pythagoras", pyth, 1e-8, "|e1^2 - e2^2 - |u^b|^2/|u|^2|".into());
    Ok(())
}

/// Store round trip, byte-identical rewrite and provenance rejection.
fn store(c: &mut Collector) -> Result<()> {
    let g = GridHierarchy::new(4, 16)?;
    let field = build_multiscale_trig(&g);
    let cache = SymbolicCache::new();
    let schur = ElementSchur::compute(&g, &field, &cache)?;
    let (basis, _) = build_edge_basis(&g, &field, &schur, &cache, 2, None)?;
    let dir = std::env::temp_dir().join(format!("msbasis-suite-{}", std::process::id()));
    let (a, b) = (dir.join("a"), dir.join("b"));
    save_store(&basis, &a)?;
    let loaded = load_store(&a, &g, &field)?;
    save_store(&loaded, &b)?;
    let same_bytes = ["manifest.json", "payload.bin"]
        .iter()
        .all(|f| std::fs::read(a.join(f)).ok() == std::fs::read(b.join(f)).ok());
    c.check("store_round_trip", loaded == basis && same_bytes, "load(save(B)) == B, rewrite byte-identical".into());
    let other = field.scaled(2.0)?;
    let g2 = GridHierarchy::new(4, 32)?;
    let rejected = matches!(load_store(&a, &g, &other), Err(crate::Error::ProvenanceMismatch(_)))
        && matches!(load_store(&a, &g2, &build_multiscale_trig(&g2)), Err(crate::Error::ProvenanceMismatch(_)));
    c.check("store_provenance", rejected, "other coefficient or nf is rejected".into());
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}

/// Same numbers with one and with several worker threads.
fn determinism(c: &mut Collector) -> Result<()> {
    let run = || -> Result<Vec<f64>> {
        let g = GridHierarchy::new(4, 32)?;
        let field = build_random_field(&g, 3).0;
        let f = |x: [f64; 2]| x[0] - x[1] * x[1];
        let cache = SymbolicCache::new();
        let schur = ElementSchur::compute(&g, &field, &cache)?;
        let online = OnlineData::new(&g, &field, &schur, &cache, &f)?;
        let (basis, os) = build_edge_basis(&g, &field, &schur, &cache, 2, Some(&online.load))?;
        let (u, _) = solve_variant(&online, &basis, os.as_deref(), 3)?;
        let mut out = u.values;
        out.extend(basis.edges.iter().flat_map(|b| b.lambda.clone()));
        Ok(out)
    };
    let one = with_threads(1, run)?;
    let many = with_threads(4, run)?;
    let same = one.len() == many.len() && one.iter().zip(&many).all(|(a, b)| a.to_bits() == b.to_bits());
    c.check("thread_determinism", same, "bitwise identical solution and singular values, 1 vs 4 threads".into());
    Ok(())
}
