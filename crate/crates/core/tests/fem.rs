use std::f64::consts::PI;

use msbasis::coefficient::{build_multiscale_trig, build_random_field, build_unit, CoefficientField, CoefficientFamily};
use msbasis::fem::*;
use msbasis::mesh::GridHierarchy;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Dense stiffness of a rect, rect-local row-major node numbering.
fn dense_stiffness(field: &CoefficientField, h: f64, rect: FineRect) -> DMatrix<f64> {
    let n = rect.num_nodes();
    let mut a = DMatrix::zeros(n, n);
    for cy in rect.y0..rect.y1 {
        for cx in rect.x0..rect.x1 {
            let k = cell_stiffness(field.cell(cx, cy), h);
            let ids = [rect.local(cx, cy), rect.local(cx + 1, cy), rect.local(cx, cy + 1), rect.local(cx + 1, cy + 1)];
            for i in 0..4 {
                for j in 0..4 {
                    a[(ids[i], ids[j])] += k[i][j];
                }
            }
        }
    }
    a
}

#[test]
fn manufactured_solution_is_second_order() {
    let f = |x: [f64; 2]| 2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin();
    let exact = |x: [f64; 2]| (PI * x[0]).sin() * (PI * x[1]).sin();
    let mut errs = Vec::new();
    for nf in [16usize, 32, 64, 128] {
        let g = GridHierarchy::new(2, nf).unwrap();
        let u = reference_solve(&g, &build_unit(&g), &f).unwrap();
        let ex = FineFunction::interpolate(nf, exact);
        errs.push(u.sub(&ex).max_abs());
    }
    for w in errs.windows(2) {
        let rate = w[0] / w[1];
        assert!((3.5..4.5).contains(&rate), "nodal error ratio {rate}, errors {errs:?}");
    }
}

#[test]
fn harmonic_extension_matches_dense_solve() {
    // an oversampling domain away from the domain boundary
    let g = GridHierarchy::new(5, 40).unwrap();
    let field = build_multiscale_trig(&g);
    let rect = FineRect::from_coarse(&g, g.oversampling_rect(7));
    assert!(!rect.touches(40).contains(&true));
    let patch = LocalPatch::assemble(&g, &field, rect, PatchKind::Dirichlet, None).unwrap();
    let perim = rect.perimeter();
    let data: Vec<f64> = perim.iter().map(|&(x, y)| ((x * 7 + y * 3) % 11) as f64 / 11.0 - 0.4).collect();
    let u = patch.harmonic_extension(&data).unwrap();

    let a = dense_stiffness(&field, g.fine_h(), rect);
    let b: Vec<usize> = perim.iter().map(|&(x, y)| rect.local(x, y)).collect();
    let inner: Vec<usize> = (0..rect.num_nodes()).filter(|i| !b.contains(i)).collect();
    let aii = DMatrix::from_fn(inner.len(), inner.len(), |i, j| a[(inner[i], inner[j])]);
    let rhs = DVector::from_fn(inner.len(), |i, _| -(0..b.len()).map(|k| a[(inner[i], b[k])] * data[k]).sum::<f64>());
    let x = aii.cholesky().unwrap().solve(&rhs);
    for (i, &n) in inner.iter().enumerate() {
        assert!((u[n] - x[i]).abs() < 1e-10, "{} vs {}", u[n], x[i]);
    }
    for (k, &n) in b.iter().enumerate() {
        assert_eq!(u[n], data[k]);
    }
}

#[test]
fn schur_complement_matches_dense_elimination() {
    let g = GridHierarchy::new(4, 16).unwrap();
    let (field, _) = build_random_field(&g, 11);
    let cache = SymbolicCache::new();
    let schur = ElementSchur::compute(&g, &field, &cache).unwrap();
    let t = 6;
    let rect = FineRect::from_coarse(&g, g.element_rect(t));
    let a = dense_stiffness(&field, g.fine_h(), rect);
    let b: Vec<usize> = rect.perimeter().iter().map(|&(x, y)| rect.local(x, y)).collect();
    let inner: Vec<usize> = (0..rect.num_nodes()).filter(|i| !b.contains(i)).collect();
    let sub = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| a[(r[i], c[j])]);
    let s = sub(&b, &b) - sub(&b, &inner) * sub(&inner, &inner).cholesky().unwrap().solve(&sub(&inner, &b));
    let nb = b.len();
    for i in 0..nb {
        for j in 0..nb {
            assert!((s[(i, j)] - schur.get(t)[i * nb + j]).abs() < 1e-10);
        }
    }
}

#[test]
fn mass_and_stiffness_constants() {
    // a(1, 1) = 0 on a cell and the mass matrix integrates 1 to h^2
    let k = cell_stiffness(3.0, 0.1);
    for row in k {
        assert!(row.iter().sum::<f64>().abs() < 1e-14);
    }
    let m = cell_mass(0.1);
    let total: f64 = m.iter().flatten().sum();
    assert!((total - 0.01).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// u = u^h + u^b with the parts energy orthogonal, for random loads and fields.
    #[test]
    fn harmonic_bubble_splitting(seed in 0u64..1000, c0 in -2.0f64..2.0, c1 in -2.0f64..2.0, nc in 2usize..5) {
        let g = GridHierarchy::new(nc, 8 * nc).unwrap();
        let (field, _) = build_random_field(&g, seed);
        let f = move |x: [f64; 2]| c0 + c1 * x[0] * x[1] + 0.5;
        let cache = SymbolicCache::new();
        let u = reference_solve(&g, &field, &f).unwrap();
        let uh = harmonic_part(&g, &field, &cache, &u).unwrap();
        let ub = elementwise_bubble(&g, &field, &cache, &load_vector(&g, &f)).unwrap();
        let mut r = u.sub(&uh);
        r.axpy(-1.0, &ub);
        prop_assert!(r.max_abs() <= 1e-10 * u.max_abs().max(1e-300));
        let cross = energy_inner(&field, &uh, &ub).unwrap();
        let scale = energy_norm(&field, &uh).unwrap() * energy_norm(&field, &ub).unwrap();
        prop_assert!(cross.abs() <= 1e-10 * scale.max(1e-300));
        prop_assert!(u.boundary_max_abs() == 0.0);
    }

    /// Energy is quadratic, symmetric and scales with the coefficient.
    #[test]
    fn energy_form(seed in 0u64..1000, alpha in 0.1f64..10.0) {
        let g = GridHierarchy::new(2, 16).unwrap();
        let (field, _) = build_random_field(&g, seed);
        let u = FineFunction::interpolate(16, |x| (3.0 * x[0]).sin() * x[1]);
        let v = FineFunction::interpolate(16, |x| x[0] * x[0] - x[1]);
        let uv = energy_inner(&field, &u, &v).unwrap();
        prop_assert!((uv - energy_inner(&field, &v, &u).unwrap()).abs() < 1e-12);
        let scaled = CoefficientField::from_values(16, field.values().iter().map(|a| a * alpha).collect(), CoefficientFamily::Unit).unwrap();
        let ratio = energy_norm(&scaled, &u).unwrap() / energy_norm(&field, &u).unwrap();
        prop_assert!((ratio - alpha.sqrt()).abs() < 1e-12 * alpha.sqrt());
    }
}
