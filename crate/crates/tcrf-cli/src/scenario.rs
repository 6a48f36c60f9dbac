//! Scenario files: strict JSON describing a model, an initial metric, one
//! task, and where artifacts go.
//!
//! Parsing is strict (unknown keys rejected) and every semantic error
//! carries a dotted pointer to the offending key. Builders turn the specs
//! into runtime objects; they never compute geometry themselves.

use num_complex::Complex64;
use serde::Deserialize;
use std::f64::consts::TAU;
use tcrf::geometry::{chern_ricci, ensure_positive};
use tcrf::holonomy::{HolonomyElement, Rational};
use tcrf::matrix::HermMatField;
use tcrf::model::TransverseModel;
use tcrf::{Error, Result};

use crate::checkpoint::Checkpoint;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelSpec,
    pub metric: MetricSpec,
    pub task: TaskSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub n: usize,
    /// Grid points per real axis.
    pub points: usize,
    #[serde(default)]
    pub holonomy: Vec<HolonomySpec>,
    #[serde(default = "one")]
    pub leaf_dim: usize,
    #[serde(default = "one_f")]
    pub leaf_volume: f64,
}

/// One affine generator x -> Ux + b; `b` entries are rationals written as
/// "p/q" or "p".
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolonomySpec {
    pub u: Vec<Vec<i64>>,
    #[serde(default)]
    pub b: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpec {
    /// Scaled identity.
    Flat(FlatMetric),
    /// e^{amplitude cos(2 pi mode . x)} times the identity.
    Conformal(ConformalMetric),
    /// Independent positive generators per diagonal entry.
    Diagonal(DiagonalMetric),
    /// Metric block of a checkpoint file.
    File(FileMetric),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatMetric {
    #[serde(default = "one_f")]
    pub scale: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConformalMetric {
    pub amplitude: f64,
    pub mode: Vec<i64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagonalMetric {
    pub entries: Vec<ScalarGen>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileMetric {
    pub path: String,
}

/// Positive scalar field generators for diagonal entries.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarGen {
    Constant(f64),
    ExpCos(CosGen),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosGen {
    pub amplitude: f64,
    pub mode: Vec<i64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpec {
    Flow(FlowTask),
    NormalizedFlow(NormalizedTask),
    T0(MaxTimeTask),
    Gauduchon(GauduchonTask),
    Symbol(SymbolTask),
    IbpCheck(IbpTask),
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Flow(_) => "flow",
            TaskSpec::NormalizedFlow(_) => "normalized_flow",
            TaskSpec::T0(_) => "t0",
            TaskSpec::Gauduchon(_) => "gauduchon",
            TaskSpec::Symbol(_) => "symbol",
            TaskSpec::IbpCheck(_) => "ibp_check",
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtSpec {
    Adaptive(AdaptiveDt),
    Fixed(FixedDt),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveDt {
    #[serde(default = "cfl_default")]
    pub c_cfl: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedDt {
    pub dt: f64,
}

impl Default for DtSpec {
    fn default() -> Self {
        DtSpec::Adaptive(AdaptiveDt { c_cfl: cfl_default() })
    }
}

impl DtSpec {
    pub fn policy(&self) -> Result<tcrf::flow::DtPolicy> {
        match *self {
            DtSpec::Adaptive(AdaptiveDt { c_cfl }) => {
                if !(c_cfl > 0.0 && c_cfl.is_finite()) {
                    return Err(Error::config("task.dt.adaptive.c_cfl", "must be positive"));
                }
                Ok(tcrf::flow::DtPolicy::Adaptive { c_cfl })
            }
            DtSpec::Fixed(FixedDt { dt }) => {
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(Error::config("task.dt.fixed.dt", "must be positive"));
                }
                Ok(tcrf::flow::DtPolicy::Fixed { dt })
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowTask {
    /// Gauge horizon for the reference family.
    #[serde(default = "one_f")]
    pub t_prime: f64,
    pub t_end: f64,
    #[serde(default)]
    pub dt: DtSpec,
    #[serde(default)]
    pub stop_tol: Option<f64>,
    #[serde(default = "max_steps_default")]
    pub max_steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizedTask {
    /// Diagonal of the constant background form.
    pub theta: Vec<f64>,
    /// Log of the reference density against the background volume;
    /// amplitude cos(2 pi mode . x), zero when absent.
    #[serde(default)]
    pub log_density: Option<CosGen>,
    pub t_end: f64,
    #[serde(default = "convergence_default")]
    pub stop_tol: f64,
    #[serde(default)]
    pub dt: DtSpec,
    #[serde(default = "max_steps_default")]
    pub max_steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxTimeTask {
    pub beta: BetaSpec,
    #[serde(default)]
    pub search: SearchOverrides,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSpec {
    /// The Chern-Ricci coefficient of the initial metric.
    Ricci(Empty),
    /// A metric generator scaled by an arbitrary real factor.
    ScaledMetric(ScaledMetric),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Empty {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledMetric {
    pub metric: MetricSpec,
    pub factor: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchOverrides {
    pub eps_pos: Option<f64>,
    pub max_ascent: Option<usize>,
    pub stagnation: Option<usize>,
    pub t_hi: Option<f64>,
    pub tol_rel: Option<f64>,
    pub warm_start: Option<bool>,
    pub averaging_bound: Option<bool>,
    pub step0: Option<f64>,
}

impl SearchOverrides {
    pub fn apply(&self) -> tcrf::max_time::SearchConfig {
        let mut cfg = tcrf::max_time::SearchConfig::default();
        if let Some(v) = self.eps_pos {
            cfg.eps_pos = v;
        }
        if let Some(v) = self.max_ascent {
            cfg.max_ascent = v;
        }
        if let Some(v) = self.stagnation {
            cfg.stagnation = v;
        }
        if let Some(v) = self.t_hi {
            cfg.t_hi = v;
        }
        if let Some(v) = self.tol_rel {
            cfg.tol_rel = v;
        }
        if let Some(v) = self.warm_start {
            cfg.warm_start = v;
        }
        if let Some(v) = self.averaging_bound {
            cfg.averaging_bound = v;
        }
        if let Some(v) = self.step0 {
            cfg.step0 = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GauduchonTask {
    #[serde(default = "gauge_tol_default")]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorName {
    Laplacian,
    BackwardHeat,
    Bilaplacian,
    MaFlow,
}

impl OperatorName {
    pub fn as_str(self) -> &'static str {
        match self {
            OperatorName::Laplacian => "laplacian",
            OperatorName::BackwardHeat => "backward_heat",
            OperatorName::Bilaplacian => "bilaplacian",
            OperatorName::MaFlow => "ma_flow",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolTask {
    pub operator: OperatorName,
    pub covectors: Option<usize>,
    pub points: Option<usize>,
    pub directions: Option<usize>,
    #[serde(default = "mu_min_default")]
    pub mu_min: f64,
}

impl SymbolTask {
    pub fn budget(&self) -> tcrf::symbol::SampleBudget {
        let d = tcrf::symbol::SampleBudget::default();
        tcrf::symbol::SampleBudget {
            covectors: self.covectors.unwrap_or(d.covectors),
            points: self.points.unwrap_or(d.points),
            directions: self.directions.unwrap_or(d.directions),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IbpTask {
    #[serde(default = "pairs_default")]
    pub pairs: usize,
    /// Per-axis band for the random forms.
    #[serde(default = "max_mode_default")]
    pub max_mode: i64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "ibp_tol_default")]
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Artifact directory; the command line may override it.
    #[serde(default)]
    pub directory: Option<String>,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Diagnostics row cadence in steps; 0 records only the endpoints.
    #[serde(default = "csv_default")]
    pub csv_every: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { directory: None, checkpoint_every: 0, csv_every: csv_default() }
    }
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn cfl_default() -> f64 {
    tcrf::flow::CFL_DEFAULT
}
fn max_steps_default() -> usize {
    2_000_000
}
fn convergence_default() -> f64 {
    tcrf::flow::TOL_CONVERGENCE
}
fn gauge_tol_default() -> f64 {
    1e-8
}
fn mu_min_default() -> f64 {
    tcrf::symbol::MU_MIN
}
fn pairs_default() -> usize {
    50
}
fn max_mode_default() -> i64 {
    2
}
fn ibp_tol_default() -> f64 {
    1e-9
}
fn csv_default() -> usize {
    50
}

/// Strict parse with a dotted path in every shape error.
pub fn from_slice(bytes: &[u8]) -> Result<Scenario> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let at = if path == "." { "top level".to_string() } else { path };
        Error::Json { detail: format!("{at}: {}", e.inner()) }
    })
}

pub fn from_path(path: &std::path::Path) -> Result<Scenario> {
    from_slice(&std::fs::read(path)?)
}

fn parse_rational(s: &str, pointer: &str) -> Result<Rational> {
    let parts: Vec<&str> = s.split('/').collect();
    let bad = || Error::config(pointer, format!("'{s}' is not a rational p or p/q"));
    match parts.as_slice() {
        [p] => {
            let num: i64 = p.trim().parse().map_err(|_| bad())?;
            Ok(Rational::new(num, 1).expect("unit denominator"))
        }
        [p, q] => {
            let num: i64 = p.trim().parse().map_err(|_| bad())?;
            let den: i64 = q.trim().parse().map_err(|_| bad())?;
            Rational::new(num, den).map_err(|_| bad())
        }
        _ => Err(bad()),
    }
}

impl Scenario {
    pub fn build_model(&self) -> Result<TransverseModel> {
        let axes = 2 * self.model.n;
        let mut generators = Vec::with_capacity(self.model.holonomy.len());
        for (i, h) in self.model.holonomy.iter().enumerate() {
            if h.u.len() != axes || h.u.iter().any(|row| row.len() != axes) {
                return Err(Error::config(
                    format!("model.holonomy[{i}].u"),
                    format!("matrix must be {axes} rows of {axes} integers"),
                ));
            }
            let u: Vec<i64> = h.u.iter().flatten().copied().collect();
            let b = if h.b.is_empty() {
                vec![Rational::zero(); axes]
            } else {
                if h.b.len() != axes {
                    return Err(Error::config(
                        format!("model.holonomy[{i}].b"),
                        format!("needs {axes} entries, got {}", h.b.len()),
                    ));
                }
                h.b.iter()
                    .enumerate()
                    .map(|(j, s)| parse_rational(s, &format!("model.holonomy[{i}].b[{j}]")))
                    .collect::<Result<Vec<_>>>()?
            };
            generators.push(HolonomyElement { u, b });
        }
        if !(self.model.leaf_volume > 0.0 && self.model.leaf_volume.is_finite()) {
            return Err(Error::config("model.leaf_volume", "must be positive"));
        }
        if self.model.leaf_dim == 0 {
            return Err(Error::config("model.leaf_dim", "must be at least 1"));
        }
        TransverseModel::new(
            self.model.n,
            self.model.points,
            &generators,
            self.model.leaf_dim,
            self.model.leaf_volume,
        )
    }

    pub fn build_metric(&self, model: &TransverseModel) -> Result<HermMatField> {
        let g = build_metric_spec(&self.metric, model, "metric")?;
        ensure_positive(&g, 0.0)?;
        Ok(g)
    }

    /// The slope form for the maximal-time task.
    pub fn build_beta(
        &self,
        model: &TransverseModel,
        g0: &HermMatField,
        spec: &BetaSpec,
    ) -> Result<HermMatField> {
        match spec {
            BetaSpec::Ricci(_) => Ok(chern_ricci(model, g0)?.r),
            BetaSpec::ScaledMetric(s) => {
                let mut b = build_metric_spec(&s.metric, model, "task.t0.beta.scaled_metric.metric")?;
                if !(s.factor.is_finite() && s.factor != 0.0) {
                    return Err(Error::config(
                        "task.t0.beta.scaled_metric.factor",
                        "must be finite and nonzero",
                    ));
                }
                for d in b.diag.iter_mut() {
                    for v in d.iter_mut() {
                        *v *= s.factor;
                    }
                }
                for o in b.off.iter_mut() {
                    for z in o.iter_mut() {
                        *z *= s.factor;
                    }
                }
                Ok(b)
            }
        }
    }
}

pub(crate) fn cos_profile(model: &TransverseModel, gen: &CosGen, pointer: &str) -> Result<Vec<f64>> {
    let grid = model.grid();
    if gen.mode.len() != grid.axes() {
        return Err(Error::config(
            format!("{pointer}.mode"),
            format!("needs {} components, got {}", grid.axes(), gen.mode.len()),
        ));
    }
    let cut = grid.dealias_cut() as i64;
    if gen.mode.iter().any(|m| m.abs() > cut) {
        return Err(Error::config(
            format!("{pointer}.mode"),
            format!("components must stay within the dealiased band (|m| <= {cut})"),
        ));
    }
    if !gen.amplitude.is_finite() {
        return Err(Error::config(format!("{pointer}.amplitude"), "must be finite"));
    }
    let mut field: Vec<f64> = (0..grid.total())
        .map(|i| {
            let x = grid.point(i);
            let th = TAU * gen.mode.iter().zip(&x).map(|(m, xi)| *m as f64 * xi).sum::<f64>();
            gen.amplitude * th.cos()
        })
        .collect();
    let defect = model.project_field(&mut field);
    if defect > 1e-12 {
        return Err(Error::config(
            format!("{pointer}.mode"),
            format!("profile is not holonomy invariant (defect {defect:.3e})"),
        ));
    }
    Ok(field)
}

fn build_metric_spec(
    spec: &MetricSpec,
    model: &TransverseModel,
    pointer: &str,
) -> Result<HermMatField> {
    let total = model.grid().total();
    let n = model.n;
    match spec {
        MetricSpec::Flat(f) => {
            if !(f.scale > 0.0 && f.scale.is_finite()) {
                return Err(Error::config(format!("{pointer}.flat.scale"), "must be positive"));
            }
            let mut g = HermMatField::zeros(n, total);
            for d in g.diag.iter_mut() {
                d.fill(f.scale);
            }
            Ok(g)
        }
        MetricSpec::Conformal(c) => {
            let gen = CosGen { amplitude: c.amplitude, mode: c.mode.clone() };
            let f = cos_profile(model, &gen, &format!("{pointer}.conformal"))?;
            let mut g = HermMatField::zeros(n, total);
            for d in g.diag.iter_mut() {
                for (v, fi) in d.iter_mut().zip(&f) {
                    *v = fi.exp();
                }
            }
            Ok(g)
        }
        MetricSpec::Diagonal(d) => {
            if d.entries.len() != n {
                return Err(Error::config(
                    format!("{pointer}.diagonal.entries"),
                    format!("needs {n} generators, got {}", d.entries.len()),
                ));
            }
            let mut g = HermMatField::zeros(n, total);
            for (j, entry) in d.entries.iter().enumerate() {
                let ep = format!("{pointer}.diagonal.entries[{j}]");
                match entry {
                    ScalarGen::Constant(c) => {
                        if !(*c > 0.0 && c.is_finite()) {
                            return Err(Error::config(
                                format!("{ep}.constant"),
                                "must be positive",
                            ));
                        }
                        g.diag[j].fill(*c);
                    }
                    ScalarGen::ExpCos(gen) => {
                        let f = cos_profile(model, gen, &format!("{ep}.exp_cos"))?;
                        for (v, fi) in g.diag[j].iter_mut().zip(&f) {
                            *v = fi.exp();
                        }
                    }
                }
            }
            Ok(g)
        }
        MetricSpec::File(f) => {
            let c = Checkpoint::read(std::path::Path::new(&f.path))?;
            c.metric(model)
        }
    }
}

/// Complex field amplitude for the normalized task's background check.
pub fn theta_matrix(task: &NormalizedTask, n: usize) -> Result<nalgebra::DMatrix<Complex64>> {
    if task.theta.len() != n {
        return Err(Error::config(
            "task.normalized_flow.theta",
            format!("needs {n} diagonal entries, got {}", task.theta.len()),
        ));
    }
    if task.theta.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::config("task.normalized_flow.theta", "entries must be positive"));
    }
    Ok(nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        task.theta.iter().map(|v| Complex64::new(*v, 0.0)),
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Scenario> {
        from_slice(s.as_bytes())
    }

    const FLAT_FLOW: &str = r#"{
        "model": {"n": 1, "points": 16},
        "metric": {"flat": {}},
        "task": {"flow": {"t_end": 0.5}},
        "output": {"csv_every": 10}
    }"#;

    #[test]
    fn minimal_scenario_parses_and_builds() {
        let s = parse(FLAT_FLOW).unwrap();
        let model = s.build_model().unwrap();
        let g = s.build_metric(&model).unwrap();
        assert_eq!(g.diag[0][0], 1.0);
        assert!(matches!(s.task, TaskSpec::Flow(_)));
        assert_eq!(s.output.checkpoint_every, 0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let bad = r#"{
            "model": {"n": 1, "points": 16, "stride": 4},
            "metric": {"flat": {}},
            "task": {"flow": {"t_end": 0.5}}
        }"#;
        let err = parse(bad).unwrap_err();
        assert!(matches!(err, Error::Json { .. }));
        assert!(err.to_string().contains("model"), "{err}");

        let bad_nested = r#"{
            "model": {"n": 1, "points": 16},
            "metric": {"conformal": {"amplitude": 0.1, "mode": [1, 0], "phase": 0.2}},
            "task": {"flow": {"t_end": 0.5}}
        }"#;
        let err = parse(bad_nested).unwrap_err();
        assert!(err.to_string().contains("conformal"), "{err}");
    }

    #[test]
    fn malformed_holonomy_is_a_config_error_with_pointer() {
        let s = parse(
            r#"{
            "model": {"n": 1, "points": 16, "holonomy": [{"u": [[1, 0]], "b": []}]},
            "metric": {"flat": {}},
            "task": {"flow": {"t_end": 0.5}}
        }"#,
        )
        .unwrap();
        let Err(err) = s.build_model() else { panic!("model built") };
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("model.holonomy[0].u"), "{err}");

        let s = parse(
            r#"{
            "model": {"n": 1, "points": 16,
                      "holonomy": [{"u": [[1, 0], [0, 1]], "b": ["1/0", "0"]}]},
            "metric": {"flat": {}},
            "task": {"flow": {"t_end": 0.5}}
        }"#,
        )
        .unwrap();
        let Err(err) = s.build_model() else { panic!("model built") };
        assert!(err.to_string().contains("model.holonomy[0].b[0]"), "{err}");
    }

    #[test]
    fn rational_offsets_parse() {
        let s = parse(
            r#"{
            "model": {"n": 1, "points": 16,
                      "holonomy": [{"u": [[1, 0], [0, 1]], "b": ["1/2", "0"]}]},
            "metric": {"flat": {}},
            "task": {"flow": {"t_end": 0.5}}
        }"#,
        )
        .unwrap();
        let model = s.build_model().unwrap();
        assert_eq!(model.group_order(), 2);
    }

    #[test]
    fn diagonal_generator_entries_must_match_n_and_be_positive() {
        let s = parse(
            r#"{
            "model": {"n": 2, "points": 8},
            "metric": {"diagonal": {"entries": [{"constant": 1.0}]}},
            "task": {"flow": {"t_end": 0.5}}
        }"#,
        )
        .unwrap();
        let model = s.build_model().unwrap();
        let err = s.build_metric(&model).unwrap_err();
        assert!(err.to_string().contains("metric.diagonal.entries"), "{err}");

        let s = parse(
            r#"{
            "model": {"n": 1, "points": 16},
            "metric": {"diagonal": {"entries": [{"constant": -2.0}]}},
            "task": {"flow": {"t_end": 0.5}}
        }"#,
        )
        .unwrap();
        let model = s.build_model().unwrap();
        let err = s.build_metric(&model).unwrap_err();
        assert!(err.to_string().contains("entries[0].constant"), "{err}");
    }

    #[test]
    fn conformal_mode_is_band_checked() {
        let s = parse(
            r#"{
            "model": {"n": 1, "points": 16},
            "metric": {"conformal": {"amplitude": 0.1, "mode": [9, 0]}},
            "task": {"flow": {"t_end": 0.5}}
        }"#,
        )
        .unwrap();
        let model = s.build_model().unwrap();
        let err = s.build_metric(&model).unwrap_err();
        assert!(err.to_string().contains("dealiased band"), "{err}");
    }

    #[test]
    fn beta_variants_build() {
        let s = parse(
            r#"{
            "model": {"n": 1, "points": 16},
            "metric": {"conformal": {"amplitude": 0.2, "mode": [1, 0]}},
            "task": {"t0": {"beta": {"scaled_metric": {"metric": {"flat": {}}, "factor": -0.5}}}}
        }"#,
        )
        .unwrap();
        let model = s.build_model().unwrap();
        let g0 = s.build_metric(&model).unwrap();
        let TaskSpec::T0(t0) = &s.task else { panic!("wrong task") };
        let beta = s.build_beta(&model, &g0, &t0.beta).unwrap();
        assert_eq!(beta.diag[0][0], -0.5);

        let s = parse(
            r#"{
            "model": {"n": 1, "points": 16},
            "metric": {"conformal": {"amplitude": 0.2, "mode": [1, 0]}},
            "task": {"t0": {"beta": {"ricci": {}}}}
        }"#,
        )
        .unwrap();
        let model = s.build_model().unwrap();
        let g0 = s.build_metric(&model).unwrap();
        let TaskSpec::T0(t0) = &s.task else { panic!("wrong task") };
        let beta = s.build_beta(&model, &g0, &t0.beta).unwrap();
        // The Chern-Ricci coefficient of a conformal metric is minus the
        // complex Hessian of its log factor; nonzero here.
        assert!(beta.sup_norm() > 1e-3);
    }

    #[test]
    fn search_overrides_apply_over_defaults() {
        let s = parse(
            r#"{
            "model": {"n": 1, "points": 16},
            "metric": {"flat": {}},
            "task": {"t0": {"beta": {"ricci": {}},
                            "search": {"t_hi": 12.0, "warm_start": false}}}
        }"#,
        )
        .unwrap();
        let TaskSpec::T0(t0) = &s.task else { panic!("wrong task") };
        let cfg = t0.search.apply();
        assert_eq!(cfg.t_hi, 12.0);
        assert!(!cfg.warm_start);
        assert_eq!(cfg.max_ascent, tcrf::max_time::SearchConfig::default().max_ascent);
    }
}
