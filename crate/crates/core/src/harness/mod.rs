//! Experiment configuration and the offline / online / sweep drivers behind
//! the `msbasis` command line.

pub mod expr;
pub mod suite;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficient::{
    build_high_contrast, build_multiscale_trig, build_random_field, build_unit, CoefficientField,
    ResolutionWarning,
};
use crate::edge_basis::{build_edge_basis, build_os_bubbles, load_store, save_store, EdgeBasisSet, EdgeFunction};
use crate::error::{Error, Result};
use crate::fem::{reference_solve, ElementSchur, FineFunction, SymbolicCache};
use crate::galerkin::{edge_indicators, error_report, solve_variant, OnlineData, SolutionReport, Timings};
use crate::mesh::GridHierarchy;

pub use expr::{Expr, RhsSpec};
pub use suite::{run_property_suite, PropertyEntry, PropertyReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CoefficientSpec {
    MultiscaleTrig,
    /// Uses the config's `seed`.
    RandomField,
    HighContrast { contrast: f64 },
    Unit,
}

impl CoefficientSpec {
    pub fn build(&self, g: &GridHierarchy, seed: u64) -> Result<(CoefficientField, Option<ResolutionWarning>)> {
        Ok(match self {
            CoefficientSpec::MultiscaleTrig => (build_multiscale_trig(g), None),
            CoefficientSpec::RandomField => build_random_field(g, seed),
            CoefficientSpec::HighContrast { contrast } => (build_high_contrast(g, *contrast)?, None),
            CoefficientSpec::Unit => (build_unit(g), None),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub coefficient: CoefficientSpec,
    pub rhs: RhsSpec,
    pub nc: Vec<usize>,
    pub nf: usize,
    pub m: Vec<usize>,
    pub variants: Vec<u8>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub store: PathBuf,
    /// Worker threads, 0 for the library default.
    pub threads: usize,
    pub indicators: bool,
    pub dump_solutions: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            coefficient: CoefficientSpec::MultiscaleTrig,
            rhs: RhsSpec::ConstMinusOne,
            nc: vec![32],
            nf: 1024,
            m: vec![2],
            variants: vec![1, 2, 3],
            seed: 0,
            output_dir: "out".into(),
            store: "store".into(),
            threads: 0,
            indicators: false,
            dump_solutions: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fast CI-scale preset: `nf = 256`, `nc = 16`, `m = 1..=4`.
    pub fn desk(mut self) -> Self {
        self.nf = 256;
        self.nc = vec![16];
        self.m = (1..=4).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nc.is_empty() {
            return Err(Error::Config("nc list is empty".into()));
        }
        for &nc in &self.nc {
            GridHierarchy::new(nc, self.nf).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(k) = self.variants.iter().find(|k| !(1..=3).contains(*k)) {
            return Err(Error::Config(format!("variant {k} is not one of 1, 2, 3")));
        }
        if let CoefficientSpec::HighContrast { contrast } = self.coefficient {
            if !(contrast > 0.0 && contrast.is_finite()) {
                return Err(Error::Config(format!("contrast must be positive, got {contrast}")));
            }
        }
        self.rhs.compile()?;
        Ok(())
    }

    pub fn m_max(&self) -> usize {
        self.m.iter().copied().max().unwrap_or(0)
    }

    pub fn hash(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn store_dir(&self, nc: usize) -> PathBuf {
        self.store.join(format!("nc{nc}"))
    }

    /// Thread count after applying the `MSBASIS_THREADS` cap.
    pub fn effective_threads(&self) -> usize {
        match (self.threads, crate::util::env_threads()) {
            (0, env) => env,
            (t, 0) => t,
            (t, env) => t.min(env),
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Hash of the files of an offline store.
pub fn store_hash(dir: &Path) -> Result<String> {
    let mut bytes = std::fs::read(dir.join("manifest.json"))?;
    bytes.extend(std::fs::read(dir.join("payload.bin"))?);
    Ok(hex_digest(&bytes))
}

/// Everything that does not depend on the right-hand side.
pub struct Session {
    pub g: GridHierarchy,
    pub field: CoefficientField,
    pub cache: SymbolicCache,
    pub schur: ElementSchur,
    pub basis: EdgeBasisSet,
    pub offline_s: f64,
    pub store_hash: Option<String>,
}

impl Session {
    pub fn build(g: GridHierarchy, field: CoefficientField, m_max: usize) -> Result<Self> {
        let t = Instant::now();
        let cache = SymbolicCache::new();
        let schur = ElementSchur::compute(&g, &field, &cache)?;
        let (basis, _) = build_edge_basis(&g, &field, &schur, &cache, m_max, None)?;
        let offline_s = t.elapsed().as_secs_f64();
        Ok(Self { g, field, cache, schur, basis, offline_s, store_hash: None })
    }

    /// Loads the edge basis from a store; element Schur complements are
    /// recomputed (they are cheap next to the edge SVDs).
    pub fn open(dir: &Path, g: GridHierarchy, field: CoefficientField) -> Result<Self> {
        let t = Instant::now();
        let basis = load_store(dir, &g, &field)?;
        let cache = SymbolicCache::new();
        let schur = ElementSchur::compute(&g, &field, &cache)?;
        let offline_s = t.elapsed().as_secs_f64();
        let store_hash = Some(store_hash(dir)?);
        Ok(Self { g, field, cache, schur, basis, offline_s, store_hash })
    }

    pub fn online<'a>(&'a self, rhs: &RhsSpec, u_ref: &'a FineFunction) -> Result<Online<'a>> {
        let t = Instant::now();
        let expr = rhs.compile()?;
        let f = |x: [f64; 2]| expr.eval(x);
        let data = OnlineData::new(&self.g, &self.field, &self.schur, &self.cache, &f)?;
        Ok(Online {
            session: self,
            data,
            rhs: rhs.clone(),
            u_ref,
            os_bubbles: None,
            setup_s: t.elapsed().as_secs_f64(),
        })
    }

    pub fn reference(&self, rhs: &RhsSpec) -> Result<FineFunction> {
        let expr = rhs.compile()?;
        let f = |x: [f64; 2]| expr.eval(x);
        reference_solve(&self.g, &self.field, &f)
    }
}

/// The online stage for one right-hand side.
pub struct Online<'a> {
    session: &'a Session,
    pub data: OnlineData<'a>,
    rhs: RhsSpec,
    u_ref: &'a FineFunction,
    os_bubbles: Option<Vec<EdgeFunction>>,
    setup_s: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RunOptions {
    pub indicators: bool,
    pub provenance: serde_json::Value,
}

impl Online<'_> {
    pub fn os_bubbles(&mut self) -> Result<&[EdgeFunction]> {
        if self.os_bubbles.is_none() {
            let s = self.session;
            self.os_bubbles = Some(build_os_bubbles(&s.g, &s.field, &s.cache, &self.data.load)?);
        }
        Ok(self.os_bubbles.as_deref().unwrap())
    }

    pub fn run(&mut self, m: usize, k: u8, opts: &RunOptions) -> Result<(SolutionReport, FineFunction)> {
        let s = self.session;
        if m > s.basis.max_modes() {
            return Err(Error::Config(format!(
                "m = {m} exceeds the {} modes available in the offline basis",
                s.basis.max_modes()
            )));
        }
        let t = Instant::now();
        if k == 3 {
            self.os_bubbles()?;
        }
        let basis = s.basis.uniform(m);
        let (u, space) = solve_variant(&self.data, &basis, self.os_bubbles.as_deref(), k)?;
        let (e_energy, e_l2) = error_report(&u, self.u_ref, &s.field)?;
        let online_s = self.setup_s + t.elapsed().as_secs_f64();
        let indicators = opts.indicators.then(|| edge_indicators(&s.g, &s.field, &basis, &u));
        let mut provenance = opts.provenance.clone();
        if let serde_json::Value::Object(map) = &mut provenance {
            map.insert("coefficient_hash".into(), s.field.hash().into());
            if let Some(h) = &s.store_hash {
                map.insert("store_hash".into(), h.clone().into());
            }
        }
        let report = SolutionReport {
            variant: k,
            nc: s.g.nc(),
            nf: s.g.nf(),
            m: Some(m),
            m_total: basis.edges.iter().map(|b| b.modes.len()).sum(),
            num_basis: space.dim(),
            coefficient: s.field.sidecar(),
            rhs: self.rhs.to_string(),
            e_energy,
            e_l2,
            pruned_os_bubbles: space.pruned_os_bubbles.clone(),
            timings: Timings { offline_s: s.offline_s, online_s },
            indicators,
            provenance,
        };
        Ok((report, u))
    }
}

fn grid_and_field(cfg: &ExperimentConfig, nc: usize) -> Result<(GridHierarchy, CoefficientField, Option<ResolutionWarning>)> {
    let g = GridHierarchy::new(nc, cfg.nf)?;
    let (field, warning) = cfg.coefficient.build(&g, cfg.seed)?;
    Ok((g, field, warning))
}

fn provenance(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::json!({ "config_hash": cfg.hash() })
}

#[derive(Clone, Debug, Serialize)]
pub struct OfflineSummary {
    pub nc: usize,
    pub store: PathBuf,
    pub num_edges: usize,
    pub m_max: usize,
    pub seconds: f64,
    pub warning: Option<String>,
}

/// Builds and writes the offline store for every `nc` of the config.
pub fn cli_offline(cfg: &ExperimentConfig) -> Result<Vec<OfflineSummary>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &nc in &cfg.nc {
        let (g, field, warning) = grid_and_field(cfg, nc)?;
        let session = Session::build(g, field, cfg.m_max())?;
        let dir = cfg.store_dir(nc);
        save_store(&session.basis, &dir)?;
        out.push(OfflineSummary {
            nc,
            store: dir,
            num_edges: session.basis.edges.len(),
            m_max: cfg.m_max(),
            seconds: session.offline_s,
            warning: warning.map(|w| w.to_string()),
        });
    }
    Ok(out)
}

/// Online stage against existing stores; writes one JSON report per
/// `(nc, m, variant)` into the output directory.
pub fn cli_solve(cfg: &ExperimentConfig) -> Result<Vec<SolutionReport>> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let opts = RunOptions { indicators: cfg.indicators, provenance: provenance(cfg) };
    let mut reports = Vec::new();
    for &nc in &cfg.nc {
        let (g, field, _) = grid_and_field(cfg, nc)?;
        let session = Session::open(&cfg.store_dir(nc), g, field)?;
        let u_ref = session.reference(&cfg.rhs)?;
        let mut online = session.online(&cfg.rhs, &u_ref)?;
        for &m in &cfg.m {
            for &k in &cfg.variants {
                let (report, u) = online.run(m, k, &opts)?;
                let stem = format!("report_nc{nc}_m{m}_k{k}");
                std::fs::write(
                    cfg.output_dir.join(format!("{stem}.json")),
                    serde_json::to_vec_pretty(&report)?,
                )?;
                if cfg.dump_solutions {
                    u.export(&cfg.output_dir, &stem, &format!("variant {k}, nc {nc}, m {m}"))?;
                }
                reports.push(report);
            }
        }
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub nc: usize,
    pub m: usize,
    pub variant: u8,
    pub e_energy: f64,
    pub e_l2: f64,
}

/// Runs every `(nc, m, variant)` of the config with in-memory offline data.
/// The reference solution is computed once and shared across `nc`.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    if cfg.m.is_empty() || cfg.variants.is_empty() {
        return Ok(rows);
    }
    let opts = RunOptions { indicators: false, provenance: provenance(cfg) };
    let mut u_ref: Option<FineFunction> = None;
    for &nc in &cfg.nc {
        let (g, field, _) = grid_and_field(cfg, nc)?;
        let session = Session::build(g, field, cfg.m_max())?;
        if u_ref.is_none() {
            u_ref = Some(session.reference(&cfg.rhs)?);
        }
        let mut online = session.online(&cfg.rhs, u_ref.as_ref().unwrap())?;
        for &m in &cfg.m {
            for &k in &cfg.variants {
                let (r, _) = online.run(m, k, &opts)?;
                rows.push(SweepRow { nc, m, variant: k, e_energy: r.e_energy, e_l2: r.e_l2 });
            }
        }
    }
    Ok(rows)
}

pub fn sweep_h_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("nc,m,variant,e_E,e_L2\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:e},{:e}", r.nc, r.m, r.variant, r.e_energy, r.e_l2);
    }
    s
}

/// Rows of the first `nc` only.
pub fn sweep_m_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("m,variant,e_E,e_L2\n");
    let Some(first) = rows.first().map(|r| r.nc) else { return s };
    for r in rows.iter().filter(|r| r.nc == first) {
        let _ = writeln!(s, "{},{},{:e},{:e}", r.m, r.variant, r.e_energy, r.e_l2);
    }
    s
}

/// Runs the sweep and writes `sweep_H.csv` and `sweep_m.csv`.
pub fn cli_convergence(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let rows = sweep(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("sweep_H.csv"), sweep_h_csv(&rows))?;
    std::fs::write(cfg.output_dir.join("sweep_m.csv"), sweep_m_csv(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"nc": [4], "nf": 32}"#).unwrap();
        assert_eq!(cfg.rhs, RhsSpec::ConstMinusOne);
        cfg.validate().unwrap();
        let bad = ExperimentConfig { nc: vec![5], nf: 32, ..cfg.clone() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = ExperimentConfig { variants: vec![4], ..cfg.clone() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
        let desk = cfg.desk();
        assert_eq!((desk.nf, desk.nc.clone()), (256, vec![16]));
        desk.validate().unwrap();
    }

    #[test]
    fn coefficient_descriptor_json() {
        let c: CoefficientSpec = serde_json::from_str(r#"{"family": "high_contrast", "contrast": 1024}"#).unwrap();
        assert_eq!(c, CoefficientSpec::HighContrast { contrast: 1024.0 });
        let c: CoefficientSpec = serde_json::from_str(r#"{"family": "random_field"}"#).unwrap();
        assert_eq!(c, CoefficientSpec::RandomField);
    }

    #[test]
    fn empty_m_gives_header_only() {
        let cfg = ExperimentConfig { nc: vec![4], nf: 16, m: vec![], ..Default::default() };
        let rows = sweep(&cfg).unwrap();
        assert!(rows.is_empty());
        assert_eq!(sweep_h_csv(&rows), "nc,m,variant,e_E,e_L2\n");
        assert_eq!(sweep_m_csv(&rows), "m,variant,e_E,e_L2\n");
    }
}
