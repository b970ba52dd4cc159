//! Convergence studies over a ladder of structured meshes and estimator
//! driven adaptive runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    dual_norm_l2h10, error_l2_spacetime, error_report, eta_indicators, fit_rate, ErrorReport, RateFit, TraceNorm,
    CSV_HEADER, RATE_METRICS,
};
use crate::error::{Error, Result};
use crate::fespace::FESpace;
use crate::forms::{DualStab, MeshSizeWeighting, PrimalStab};
use crate::mesh::{Interval, Point, SpacetimeMesh, SplitPattern};
use crate::problems::{ExampleId, ExperimentConfig, VelocityCoefficients};
use crate::saddle::{build_system, solve, SaddleParams, SolveReport};

/// Structured `(nx, nt)` grids of the refinement ladder; with `T = 2` the
/// mesh sizes are about 0.154, 0.08, 0.04, 0.023 and 0.0125.
pub const LEVELS: [(usize, usize); 5] = [(10, 13), (20, 25), (40, 50), (70, 87), (130, 160)];

/// Levels run without `deep`.
pub const DEFAULT_LEVELS: (usize, usize) = (1, 4);

pub fn level_mesh(level: usize, t_final: f64, omega: Interval) -> Result<SpacetimeMesh> {
    let &(nx, nt) = LEVELS
        .get(level.wrapping_sub(1))
        .ok_or_else(|| Error::Config(format!("mesh level {level} outside 1..={}", LEVELS.len())))?;
    SpacetimeMesh::build_structured(nx, nt, t_final, omega, SplitPattern::Crisscross)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveSettings {
    pub enabled: bool,
    pub cycles: usize,
    pub theta: f64,
    /// Coarse grid of the adaptive run (two triangles per cell).
    pub coarse_nx: usize,
    pub coarse_nt: usize,
}

impl Default for AdaptiveSettings {
    fn default() -> Self {
        Self { enabled: false, cycles: 6, theta: 0.5, coarse_nx: 10, coarse_nt: 14 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyManifest {
    pub example: ExampleId,
    pub t_final: f64,
    pub omega: (f64, f64),
    pub gamma: f64,
    pub gamma_star: f64,
    /// `(p, q)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub stab_primal: PrimalStab,
    pub stab_dual: DualStab,
    pub k_max: usize,
    pub velocity: VelocityCoefficients,
    /// Inclusive level range.
    pub levels: (usize, usize),
    /// Permit the finest level.
    pub deep: bool,
    pub out_dir: PathBuf,
    pub allow_locking: bool,
    pub allow_unstable: bool,
    /// Normalization of the velocity-trace error; by default absolute for
    /// example 1 and relative for example 2.
    pub trace_norm: Option<TraceNorm>,
    /// Write measured solve times; when off the column holds zeros so that
    /// reruns produce identical files.
    pub timing: bool,
    pub adaptive: AdaptiveSettings,
}

impl Default for StudyManifest {
    fn default() -> Self {
        let c = ExperimentConfig::default();
        Self {
            example: c.example,
            t_final: c.t_final,
            omega: c.omega,
            gamma: c.gamma,
            gamma_star: c.gamma_star,
            pairs: vec![(c.p, c.q)],
            stab_primal: c.stab_primal,
            stab_dual: c.stab_dual,
            k_max: c.k_max,
            velocity: c.velocity,
            levels: DEFAULT_LEVELS,
            deep: false,
            out_dir: PathBuf::from("out"),
            allow_locking: false,
            allow_unstable: false,
            trace_norm: None,
            timing: true,
            adaptive: AdaptiveSettings::default(),
        }
    }
}

impl StudyManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Single-run configuration of one `(p, q)` pair.
    pub fn experiment(&self, p: usize, q: usize) -> ExperimentConfig {
        ExperimentConfig {
            example: self.example,
            t_final: self.t_final,
            omega: self.omega,
            gamma: self.gamma,
            gamma_star: self.gamma_star,
            p,
            q,
            stab_primal: self.stab_primal,
            stab_dual: self.stab_dual,
            k_max: self.k_max,
            velocity: self.velocity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Config("no (p, q) pairs given".into()));
        }
        for &(p, q) in &self.pairs {
            self.experiment(p, q).validate(self.allow_locking)?;
            self.experiment(p, q).variant().check_degrees(p, q)?;
        }
        let (a, b) = self.levels;
        let max = if self.deep { LEVELS.len() } else { LEVELS.len() - 1 };
        if a < 1 || a > b || b > max {
            let hint = if b == LEVELS.len() && !self.deep { " (the finest level needs deep)" } else { "" };
            return Err(Error::Config(format!("level range {a}..{b} outside 1..{max}{hint}")));
        }
        let ad = &self.adaptive;
        if ad.enabled && !(ad.theta > 0.0 && ad.theta <= 1.0) {
            return Err(Error::Config(format!("Dorfler fraction must lie in (0, 1], got {}", ad.theta)));
        }
        Ok(())
    }

    pub fn trace_mode(&self) -> TraceNorm {
        self.trace_norm.unwrap_or(match self.example {
            ExampleId::One => TraceNorm::Absolute,
            ExampleId::Two => TraceNorm::Relative,
        })
    }

    fn params(&self, weighting: MeshSizeWeighting) -> SaddleParams {
        SaddleParams {
            gamma: self.gamma,
            gamma_star: self.gamma_star,
            variant: self.experiment(1, 1).variant(),
            weighting,
            allow_locking: self.allow_locking,
            allow_unstable: self.allow_unstable,
        }
    }
}

/// Result of one level: the report row and the solver diagnostics.
#[derive(Debug, Clone)]
pub struct LevelRun {
    pub report: ErrorReport,
    pub solve: SolveReport,
}

/// Solve one level of one `(p, q)` pair.
pub fn run_level(manifest: &StudyManifest, level: usize, p: usize, q: usize) -> Result<LevelRun> {
    let cfg = manifest.experiment(p, q);
    let omega = cfg.omega()?;
    let mesh = Arc::new(level_mesh(level, cfg.t_final, omega)?);
    let (vp, vq) = (FESpace::new(mesh.clone(), p)?, FESpace::new(mesh, q)?);
    let data = cfg.observation()?;
    let system = build_system(&vp, &vq, &data, manifest.params(MeshSizeWeighting::Global))?;
    let (u, z, mut solve_report) = solve(&system)?;
    if !manifest.timing {
        solve_report.seconds = 0.0;
    }
    let exact = cfg.solution();
    let report = error_report(level, &system, &u, &z, &solve_report, exact.as_ref(), &data, manifest.trace_mode())?;
    Ok(LevelRun { report, solve: solve_report })
}

#[derive(Debug, Clone)]
pub struct PairStudy {
    pub p: usize,
    pub q: usize,
    pub rows: Vec<ErrorReport>,
    pub solves: Vec<SolveReport>,
    /// Levels that failed, with the error message.
    pub failures: Vec<(usize, String)>,
    pub rates: Vec<(String, RateFit)>,
    pub csv: String,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub pairs: Vec<PairStudy>,
}

impl StudyOutcome {
    pub fn any_failure(&self) -> bool {
        self.pairs.iter().any(|p| !p.failures.is_empty())
    }

    pub fn rate(&self, p: usize, q: usize, metric: &str) -> Option<RateFit> {
        let pair = self.pairs.iter().find(|s| s.p == p && s.q == q)?;
        pair.rates.iter().find(|(m, _)| m == metric).map(|(_, f)| *f)
    }
}

pub fn study_csv(rows: &[ErrorReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Fits of every metric column of a study CSV against its `h` column.
/// Columns with fewer than three positive entries are skipped.
pub fn rates_from_csv(csv: &str) -> Result<Vec<(String, RateFit)>> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?.split(',').collect();
    let col = |name: &str| {
        header.iter().position(|h| *h == name).ok_or_else(|| Error::Parse(format!("missing column {name}")))
    };
    let rows: Vec<Vec<f64>> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("{v}: {e}")))).collect())
        .collect::<Result<_>>()?;
    let hc = col("h")?;
    let mut out = Vec::new();
    for metric in RATE_METRICS {
        let mc = col(metric)?;
        let (h, e): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r[hc], r[mc])).filter(|(_, e)| *e > 0.0).unzip();
        if let Ok(fit) = fit_rate(&h, &e) {
            out.push((metric.to_string(), fit));
        }
    }
    Ok(out)
}

pub fn rates_csv(pairs: &[PairStudy]) -> String {
    let mut s = String::from("p,q,metric,beta,tau,r2\n");
    for pair in pairs {
        for (metric, fit) in &pair.rates {
            writeln!(s, "{},{},{},{:.6e},{:.6},{:.6}", pair.p, pair.q, metric, fit.beta, fit.tau, fit.r2).unwrap();
        }
    }
    s
}

/// Run every `(p, q)` pair over the level range. Failed levels are recorded
/// and skipped. Nothing is written to disk.
pub fn run_convergence_study(manifest: &StudyManifest) -> Result<StudyOutcome> {
    manifest.validate()?;
    let mut pairs = Vec::new();
    for &(p, q) in &manifest.pairs {
        let mut rows = Vec::new();
        let mut solves = Vec::new();
        let mut failures = Vec::new();
        for level in manifest.levels.0..=manifest.levels.1 {
            match run_level(manifest, level, p, q) {
                Ok(run) => {
                    rows.push(run.report);
                    solves.push(run.solve);
                }
                Err(e) => failures.push((level, e.to_string())),
            }
        }
        let csv = study_csv(&rows);
        let rates = rates_from_csv(&csv)?;
        pairs.push(PairStudy { p, q, rows, solves, failures, rates, csv });
    }
    Ok(StudyOutcome { pairs })
}

/// Write `conv_p{p}_q{q}.csv`, `rates.csv`, `solves.jsonl`, `failures.txt`
/// (if any) and the error plot into `dir`.
pub fn write_study(outcome: &StudyOutcome, example: ExampleId, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, text: &str| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    let mut jsonl = String::new();
    let mut failures = String::new();
    for pair in &outcome.pairs {
        put(format!("conv_p{}_q{}.csv", pair.p, pair.q), &pair.csv)?;
        for (row, s) in pair.rows.iter().zip(&pair.solves) {
            writeln!(jsonl, "{{\"p\":{},\"q\":{},\"level\":{},\"solve\":{}}}", pair.p, pair.q, row.level, s.to_json())
                .unwrap();
        }
        for (level, msg) in &pair.failures {
            writeln!(failures, "p={} q={} level={}: {}", pair.p, pair.q, level, msg).unwrap();
        }
    }
    put("rates.csv".into(), &rates_csv(&outcome.pairs))?;
    put("solves.jsonl".into(), &jsonl)?;
    if !failures.is_empty() {
        put("failures.txt".into(), &failures)?;
    }
    let series: Vec<crate::plot::Series> = outcome
        .pairs
        .iter()
        .filter(|p| !p.rows.is_empty())
        .map(|p| crate::plot::Series {
            label: format!("V{}xV{}", p.p, p.q),
            h: p.rows.iter().map(|r| r.h).collect(),
            error: p.rows.iter().map(|r| r.rel_l2_m).collect(),
        })
        .collect();
    if !series.is_empty() {
        let title = format!("Example {}: relative L2(M) error", example.number());
        put(format!("errors_ex{}.svg", example.number()), &crate::plot::loglog_svg(&title, &series)?)?;
    }
    Ok(written)
}

/// Characteristic lines `x = x0 +- t`, reflected at `x = 0` and `x = 1`.
/// Returns the distance from `p` to the closest one.
pub fn characteristic_distance(p: &Point, sources: &[f64], t_final: f64) -> f64 {
    let mut best = f64::INFINITY;
    // unfolded, the reflected lines are x - t = c and x + t = c with
    // c = +-x0 + 2m
    let reach = (t_final + 2.0) as i64 / 2 + 1;
    for &x0 in sources {
        for m in -reach..=reach {
            for c in [x0 + 2.0 * m as f64, -x0 + 2.0 * m as f64] {
                for sign in [1.0, -1.0] {
                    // segment x = c + sign * t inside [0, T] x [0, 1]
                    let (t_a, t_b) = if sign > 0.0 { (-c, 1.0 - c) } else { (c - 1.0, c) };
                    let (lo, hi) = (t_a.max(0.0), t_b.min(t_final));
                    if lo > hi {
                        continue;
                    }
                    let a = Point::new(lo, c + sign * lo);
                    let b = Point::new(hi, c + sign * hi);
                    best = best.min(point_segment_distance(p, &a, &b));
                }
            }
        }
    }
    best
}

fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let (dt, dx) = (b.t - a.t, b.x - a.x);
    let len2 = dt * dt + dx * dx;
    let s = if len2 == 0.0 { 0.0 } else { (((p.t - a.t) * dt + (p.x - a.x) * dx) / len2).clamp(0.0, 1.0) };
    p.dist(&Point::new(a.t + s * dt, a.x + s * dx))
}

/// Fraction of `marked` triangles whose centroid lies within `2 h_K` of a
/// characteristic line from one of `sources`.
pub fn fraction_near_characteristics(mesh: &SpacetimeMesh, marked: &[usize], sources: &[f64]) -> f64 {
    if marked.is_empty() {
        return 0.0;
    }
    let near = marked
        .iter()
        .filter(|&&k| {
            let d = characteristic_distance(&mesh.centroid(k), sources, mesh.t_final);
            d <= 2.0 * mesh.triangles[k].diameter
        })
        .count();
    near as f64 / marked.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRow {
    pub cycle: usize,
    pub ntri: usize,
    pub nvert: usize,
    pub h_min: f64,
    pub eta_total: f64,
    pub rel_l2_m: f64,
    pub dual_norm: f64,
}

pub const CYCLE_HEADER: &str = "cycle,ntri,nvert,h_min,eta_total,rel_l2_M,dual_norm";

impl CycleRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6e},{:.6e},{:.6e},{:.6e}",
            self.cycle, self.ntri, self.nvert, self.h_min, self.eta_total, self.rel_l2_m, self.dual_norm
        )
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub rows: Vec<CycleRow>,
    /// Mesh of every cycle, coarse mesh first.
    pub meshes: Vec<Arc<SpacetimeMesh>>,
    /// Dorfler-marked triangles of every cycle (the last set is not refined).
    pub marked: Vec<Vec<usize>>,
    pub csv: String,
}

impl AdaptiveOutcome {
    /// Conformity check of every cycle's mesh.
    pub fn all_conforming(&self) -> Result<()> {
        self.meshes.iter().try_for_each(|m| m.check_conformity())
    }

    /// Number of cycles at which `eta_total` increased.
    pub fn eta_increases(&self) -> usize {
        self.rows.windows(2).filter(|w| w[1].eta_total > w[0].eta_total).count()
    }
}

/// Solve, mark and bisect for `cycles` cycles on the first `(p, q)` pair,
/// with local mesh sizes in the stabilizers.
pub fn run_adaptive(manifest: &StudyManifest) -> Result<AdaptiveOutcome> {
    manifest.validate()?;
    let (p, q) = manifest.pairs[0];
    let cfg = manifest.experiment(p, q);
    let omega = cfg.omega()?;
    let ad = &manifest.adaptive;
    let mut mesh = Arc::new(SpacetimeMesh::build_structured(
        ad.coarse_nx,
        ad.coarse_nt,
        cfg.t_final,
        omega,
        SplitPattern::Diagonal,
    )?);
    let data = cfg.observation()?;
    let exact = cfg.solution();
    let params = manifest.params(MeshSizeWeighting::Local);
    let mut rows = Vec::new();
    let mut meshes = Vec::new();
    let mut marked = Vec::new();
    for cycle in 0..=ad.cycles {
        let (vp, vq) = (FESpace::new(mesh.clone(), p)?, FESpace::new(mesh.clone(), q)?);
        let system = build_system(&vp, &vq, &data, params)?;
        let (u, z, _) = solve(&system)?;
        let eta = eta_indicators(&system, &u, &z, &data)?;
        rows.push(CycleRow {
            cycle,
            ntri: mesh.n_triangles(),
            nvert: mesh.n_vertices(),
            h_min: mesh.h_min(),
            eta_total: eta.total,
            rel_l2_m: error_l2_spacetime(&u, exact.as_ref()).value,
            dual_norm: dual_norm_l2h10(&z),
        });
        let marks = eta.dorfler_marking(ad.theta);
        meshes.push(mesh.clone());
        if cycle < ad.cycles {
            mesh = Arc::new(mesh.refine_adaptive(&marks));
        }
        marked.push(marks);
    }
    let mut csv = String::from(CYCLE_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    Ok(AdaptiveOutcome { rows, meshes, marked, csv })
}

/// Write `adaptive.csv` and one mesh snapshot per cycle.
pub fn write_adaptive(outcome: &AdaptiveOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = vec![dir.join("adaptive.csv")];
    fs::write(&written[0], &outcome.csv)?;
    for (c, m) in outcome.meshes.iter().enumerate() {
        let path = dir.join(format!("mesh_cycle{c:02}.txt"));
        m.save(&path)?;
        written.push(path);
    }
    Ok(written)
}
