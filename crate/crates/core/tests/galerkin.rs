use msbasis::coefficient::{build_high_contrast, build_multiscale_trig, build_random_field, build_unit, CoefficientField};
use msbasis::edge_basis::{build_edge_basis, EdgeBasisSet, EdgeFunction};
use msbasis::fem::{energy_inner, energy_norm, reference_solve, ElementSchur, FineFunction, SymbolicCache};
use msbasis::galerkin::*;
use msbasis::mesh::GridHierarchy;
use msbasis::Error;
use proptest::prelude::*;

struct Problem {
    g: GridHierarchy,
    field: CoefficientField,
    cache: SymbolicCache,
    schur: ElementSchur,
}

impl Problem {
    fn new(nc: usize, nf: usize, field: impl Fn(&GridHierarchy) -> CoefficientField) -> Self {
        let g = GridHierarchy::new(nc, nf).unwrap();
        let field = field(&g);
        let cache = SymbolicCache::new();
        let schur = ElementSchur::compute(&g, &field, &cache).unwrap();
        Self { g, field, cache, schur }
    }

    fn online(&self, f: &(dyn Fn([f64; 2]) -> f64 + Sync)) -> OnlineData<'_> {
        OnlineData::new(&self.g, &self.field, &self.schur, &self.cache, f).unwrap()
    }

    fn basis(&self, m: usize, load: Option<&[f64]>) -> (EdgeBasisSet, Option<Vec<EdgeFunction>>) {
        build_edge_basis(&self.g, &self.field, &self.schur, &self.cache, m, load).unwrap()
    }
}

#[test]
fn space_dimensions_follow_the_counting_formula() {
    let p = Problem::new(32, 128, build_unit);
    let f = |_: [f64; 2]| -1.0;
    let online = p.online(&f);
    let (basis, os) = p.basis(2, Some(&online.load));
    let space = build_space(&p.g, &p.field, &p.schur, &basis, None).unwrap();
    assert_eq!(space.dim(), 4929);
    assert_eq!(space.count(|k| matches!(k, BasisKind::Tent { .. })), 961);
    let space3 = build_space(&p.g, &p.field, &p.schur, &basis, os.as_deref()).unwrap();
    assert_eq!(space3.dim() + space3.pruned_os_bubbles.len(), 2 * 32 * 31 * 3 + 961);
}

#[test]
fn coarse_matrix_is_the_energy_gram_of_the_basis() {
    let p = Problem::new(3, 12, build_multiscale_trig);
    let f = |x: [f64; 2]| x[0] - 0.3;
    let online = p.online(&f);
    let (basis, os) = p.basis(2, Some(&online.load));
    let space = build_space(&p.g, &p.field, &p.schur, &basis, os.as_deref()).unwrap();
    let phis: Vec<FineFunction> = (0..space.dim())
        .map(|j| space.basis_function(&p.g, &p.field, &p.schur, &p.cache, j).unwrap())
        .collect();
    let (a, rhs) = online.assemble(&space);
    let load = &online.load;
    let u_ref = reference_solve(&p.g, &p.field, &f).unwrap();
    for i in 0..space.dim() {
        let mut e = vec![0.0; space.dim()];
        e[i] = 1.0;
        let col = a.matvec(&e);
        for j in 0..space.dim() {
            let exact = energy_inner(&p.field, &phis[i], &phis[j]).unwrap();
            assert!((col[j] - exact).abs() < 1e-10 * (1.0 + exact.abs()), "A[{i},{j}]");
        }
        // F_i = (f, phi_i) = a(u_ref, phi_i) for the fine-scale problem
        let fi: f64 = load.iter().zip(&phis[i].values).map(|(l, v)| l * v).sum();
        assert!((rhs[i] - fi).abs() < 1e-12 * (1.0 + fi.abs()));
        let via_ref = energy_inner(&p.field, &u_ref, &phis[i]).unwrap();
        assert!((rhs[i] - via_ref).abs() < 1e-10);
    }
}

#[test]
fn zero_load_gives_zero_errors() {
    let p = Problem::new(4, 16, build_multiscale_trig);
    let f = |_: [f64; 2]| 0.0;
    let online = p.online(&f);
    let (basis, os) = p.basis(2, Some(&online.load));
    let u_ref = reference_solve(&p.g, &p.field, &f).unwrap();
    for k in 1..=3 {
        let (u, space) = solve_variant(&online, &basis, os.as_deref(), k).unwrap();
        assert_eq!(error_report(&u, &u_ref, &p.field).unwrap(), (0.0, 0.0));
        if k == 3 {
            assert_eq!(space.pruned_os_bubbles.len(), p.g.num_edges());
        }
    }
    let mut bumped = u_ref.clone();
    bumped.values[40] = 1.0;
    assert!(matches!(error_report(&bumped, &u_ref, &p.field), Err(Error::ZeroReference)));
}

#[test]
fn bubbles_in_the_mode_span_are_pruned() {
    let p = Problem::new(4, 16, build_multiscale_trig);
    let (basis, _) = p.basis(2, None);
    let copies: Vec<EdgeFunction> = basis.edges.iter().map(|b| {
        let mut m = b.modes[1].clone();
        m.values.iter_mut().for_each(|v| *v *= -3.0);
        m
    }).collect();
    let space = build_space(&p.g, &p.field, &p.schur, &basis, Some(&copies)).unwrap();
    assert_eq!(space.pruned_os_bubbles, (0..p.g.num_edges()).collect::<Vec<_>>());
    assert_eq!(space.count(|k| matches!(k, BasisKind::OsBubble { .. })), 0);
    assert!(matches!(
        build_space(&p.g, &p.field, &p.schur, &basis, Some(&copies[..3])),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn mismatched_basis_is_rejected() {
    let p = Problem::new(4, 16, build_multiscale_trig);
    let (basis, _) = p.basis(1, None);
    let q = Problem::new(4, 16, build_unit);
    assert!(matches!(
        build_space(&q.g, &q.field, &q.schur, &basis, None),
        Err(Error::ProvenanceMismatch(_))
    ));
}

#[test]
fn bubble_energy_halves_with_h() {
    let f = |_: [f64; 2]| -1.0;
    let norms: Vec<f64> = [4usize, 8, 16]
        .iter()
        .map(|&nc| {
            let p = Problem::new(nc, 128, build_multiscale_trig);
            energy_norm(&p.field, &p.online(&f).bubble).unwrap()
        })
        .collect();
    for w in norms.windows(2) {
        let r = w[0] / w[1];
        assert!((1.5..=3.0).contains(&r), "{norms:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Galerkin orthogonality, monotone errors in m, variant ordering and
    /// the energy Pythagoras identity, for random fields and loads.
    #[test]
    fn galerkin_invariants(seed in 0u64..1000, c in -1.0f64..1.0, contrast in prop::bool::ANY) {
        let p = if contrast {
            Problem::new(4, 32, |g| build_high_contrast(g, 2f64.powi(14)).unwrap())
        } else {
            Problem::new(4, 32, |g| build_random_field(g, seed).0)
        };
        let f = move |x: [f64; 2]| 1.0 + c * x[0] * x[0] - x[1];
        let online = p.online(&f);
        let u_ref = reference_solve(&p.g, &p.field, &f).unwrap();
        let (basis, os) = p.basis(4, Some(&online.load));
        let ub = energy_norm(&p.field, &online.bubble).unwrap() / energy_norm(&p.field, &u_ref).unwrap();
        let mut prev = [f64::INFINITY; 3];
        for m in 0..=4 {
            let b = basis.uniform(m);
            let mut e = [0.0; 3];
            for k in 1..=3u8 {
                let (u, space) = solve_variant(&online, &b, os.as_deref(), k).unwrap();
                e[k as usize - 1] = error_report(&u, &u_ref, &p.field).unwrap().0;
                if m == 2 {
                    let defect = residual_orthogonality_check(&online, &space, &u, &u_ref).unwrap();
                    prop_assert!(defect <= 1e-8, "defect {defect} for k={k}");
                }
            }
            for k in 0..3 {
                prop_assert!(e[k] <= prev[k] * (1.0 + 1e-9), "k={} m={m}: {} > {}", k + 1, e[k], prev[k]);
            }
            prop_assert!(e[1] <= e[0]);
            prop_assert!((e[0] * e[0] - e[1] * e[1] - ub * ub).abs() <= 1e-8);
            prev = e;
        }
    }
}
