//! Browser front end: coefficient view, per-edge singular modes and small
//! multiscale solves. Everything runs single-threaded inside the page.

use msbasis::coefficient::{build_high_contrast, build_multiscale_trig, build_random_field, CoefficientField};
use msbasis::edge_basis::{build_edge_basis, build_os_bubbles, edge_svd, EdgeBasisSet};
use msbasis::fem::{reference_solve, ElementSchur, SymbolicCache};
use msbasis::galerkin::{error_report, solve_variant, OnlineData};
use msbasis::harness::Expr;
use msbasis::mesh::{GridHierarchy, Orientation};
use wasm_bindgen::prelude::*;

fn js_err(e: msbasis::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    g: GridHierarchy,
    field: CoefficientField,
    cache: SymbolicCache,
    schur: ElementSchur,
    basis: Option<EdgeBasisSet>,
}

#[wasm_bindgen]
pub struct EdgeModes {
    spectrum: Vec<f64>,
    modes: Vec<f64>,
    points: usize,
}

#[wasm_bindgen]
impl EdgeModes {
    /// Singular values of the returned modes.
    pub fn lambda(&self) -> Vec<f64> {
        self.spectrum[..self.modes.len() / self.points].to_vec()
    }

    /// All singular values of the edge operator.
    pub fn spectrum(&self) -> Vec<f64> {
        self.spectrum.clone()
    }

    /// Mode values, one row of `points()` samples per mode.
    pub fn modes(&self) -> Vec<f64> {
        self.modes.clone()
    }

    pub fn points(&self) -> usize {
        self.points
    }
}

#[wasm_bindgen]
pub struct SolveResult {
    values: Vec<f64>,
    reference: Vec<f64>,
    pub e_energy: f64,
    pub e_l2: f64,
    pub num_basis: usize,
}

#[wasm_bindgen]
impl SolveResult {
    /// Nodal values on the fine grid, row-major, `(nf + 1)^2` entries.
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn reference(&self) -> Vec<f64> {
        self.reference.clone()
    }
}

#[wasm_bindgen]
impl Demo {
    /// `family` is one of `trig`, `random`, `contrast`; `param` is the seed
    /// for `random` and the contrast for `contrast`.
    #[wasm_bindgen(constructor)]
    pub fn new(family: &str, nc: usize, nf: usize, param: f64) -> Result<Demo, JsError> {
        let g = GridHierarchy::new(nc, nf).map_err(js_err)?;
        let field = match family {
            "trig" => build_multiscale_trig(&g),
            "random" => build_random_field(&g, param.max(0.0) as u64).0,
            "contrast" => build_high_contrast(&g, param).map_err(js_err)?,
            other => return Err(JsError::new(&format!("unknown coefficient {other:?}"))),
        };
        let cache = SymbolicCache::new();
        let schur = ElementSchur::compute(&g, &field, &cache).map_err(js_err)?;
        Ok(Demo { g, field, cache, schur, basis: None })
    }

    pub fn nf(&self) -> usize {
        self.g.nf()
    }

    pub fn nc(&self) -> usize {
        self.g.nc()
    }

    /// log10 of the coefficient per fine cell, row-major.
    pub fn log_coefficient(&self) -> Vec<f32> {
        self.field.values().iter().map(|a| a.log10() as f32).collect()
    }

    /// Interior coarse edge closest to the point, or -1 near none.
    pub fn edge_at(&self, x: f64, y: f64) -> i32 {
        let h = self.g.coarse_h();
        let mut best = (f64::INFINITY, -1);
        for (e, edge) in self.g.edges().iter().enumerate() {
            let (x0, y0) = (edge.start.0 as f64 * h, edge.start.1 as f64 * h);
            let d = match edge.orientation {
                Orientation::Horizontal => (y - y0).abs() + (x - (x0 + h / 2.0)).abs().max(h / 2.0) - h / 2.0,
                Orientation::Vertical => (x - x0).abs() + (y - (y0 + h / 2.0)).abs().max(h / 2.0) - h / 2.0,
            };
            if d < best.0 {
                best = (d, e as i32);
            }
        }
        if best.0 < h / 4.0 { best.1 } else { -1 }
    }

    /// Endpoints of edge `e` in the unit square: `[x0, y0, x1, y1]`.
    pub fn edge_segment(&self, e: usize) -> Vec<f64> {
        let h = self.g.coarse_h();
        let edge = self.g.edge(e);
        vec![
            edge.start.0 as f64 * h,
            edge.start.1 as f64 * h,
            edge.end.0 as f64 * h,
            edge.end.1 as f64 * h,
        ]
    }

    /// Leading `m` singular values and modes of the edge restriction operator.
    pub fn edge_modes(&self, e: usize, m: usize) -> Result<EdgeModes, JsError> {
        if e >= self.g.num_edges() {
            return Err(JsError::new("edge index out of range"));
        }
        let r = edge_svd(&self.g, &self.field, &self.schur, &self.cache, e, m, None).map_err(js_err)?;
        Ok(EdgeModes {
            spectrum: r.svd.lambda,
            modes: r.svd.modes.iter().flat_map(|v| v.values.iter().copied()).collect(),
            points: self.g.ratio() + 1,
        })
    }

    /// Multiscale solve with `m` modes per edge and variant `k` (1, 2 or 3)
    /// for the right-hand side expression `rhs` in `x1`, `x2`.
    pub fn solve(&mut self, m: usize, k: u8, rhs: &str) -> Result<SolveResult, JsError> {
        let expr = Expr::parse(rhs).map_err(js_err)?;
        let f = |x: [f64; 2]| expr.eval(x);
        if self.basis.as_ref().is_none_or(|b| b.max_modes() < m) {
            let (b, _) = build_edge_basis(&self.g, &self.field, &self.schur, &self.cache, m, None).map_err(js_err)?;
            self.basis = Some(b);
        }
        let basis = self.basis.as_ref().unwrap().uniform(m);
        let online = OnlineData::new(&self.g, &self.field, &self.schur, &self.cache, &f).map_err(js_err)?;
        let os = if k == 3 {
            Some(build_os_bubbles(&self.g, &self.field, &self.cache, &online.load).map_err(js_err)?)
        } else {
            None
        };
        let (u, space) = solve_variant(&online, &basis, os.as_deref(), k).map_err(js_err)?;
        let u_ref = reference_solve(&self.g, &self.field, &f).map_err(js_err)?;
        let (e_energy, e_l2) = error_report(&u, &u_ref, &self.field).map_err(js_err)?;
        Ok(SolveResult { values: u.values, reference: u_ref.values, e_energy, e_l2, num_basis: space.dim() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_improves_with_modes() {
        let mut d = Demo::new("trig", 4, 32, 0.0).unwrap_or_else(|_| panic!("demo"));
        let coarse = d.solve(0, 2, "-1").unwrap_or_else(|_| panic!("solve"));
        let fine = d.solve(3, 2, "-1").unwrap_or_else(|_| panic!("solve"));
        assert!(fine.e_energy < coarse.e_energy);
        assert_eq!(fine.values().len(), 33 * 33);
    }

    #[test]
    fn edge_lookup_and_modes() {
        let d = Demo::new("contrast", 4, 32, 100.0).unwrap_or_else(|_| panic!("demo"));
        let e = d.edge_at(0.25, 0.125);
        assert!(e >= 0);
        let seg = d.edge_segment(e as usize);
        assert_eq!(seg[0], 0.25);
        assert_eq!(d.edge_at(0.125, 0.125), -1);
        let modes = d.edge_modes(e as usize, 3).unwrap_or_else(|_| panic!("modes"));
        assert_eq!(modes.lambda().len(), 3);
        assert_eq!(modes.spectrum().len(), 7);
        assert_eq!(modes.modes().len(), 3 * modes.points());
        assert!(modes.lambda().windows(2).all(|w| w[0] >= w[1]));
    }
}
