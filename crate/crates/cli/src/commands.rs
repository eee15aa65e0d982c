//! The four pipelines. Each returns a JSON result and a verdict; CSV side
//! outputs go straight to the output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};

use lyapcert::catalog::{self, CatalogEntry};
use lyapcert::dynamics::{FlowOptions, SystemModel, TransverseModel, VectorField};
use lyapcert::expr::SystemSpec;
use lyapcert::geometry::{
    dini_derivative_v, distance_to_origin, write_distance_csv, DiniEstimate, DistanceValue, Envelope,
    GeometryOptions, DINI_STEPS,
};
use lyapcert::linalg::{max_eigenvalue, min_eigenvalue, vec_norm};
use lyapcert::metric::{
    default_step, gramian_at_origin, lie_derivative_residual, metric_bounds, residual_report, rows,
    transverse_bounds, transverse_residual, write_metric_csv, ConstantMetric, GramianMetric, MetricBounds,
    MetricField, RescaledMetric, ResidualReport, TransverseMetric, Variant,
};
use lyapcert::stabilization::{
    certify_controller, closed_loop_spec, tabulate_potential, ClosedLoop, ControlSystem, StabilizeOptions,
};
use lyapcert::stability::{
    estimate_bound_constants, estimate_gain_function, estimate_les, estimate_linearized_decay,
    estimate_transverse_linear_decay, estimate_transverse_variation, estimate_tules, BoundConstants, DecayEstimate,
    EstimateOptions,
};
use lyapcert::Error;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};
use crate::report::{ErrorInfo, SystemInfo, Verdict};

/// Derivative-bound samples drawn per configured sample.
const BOUND_SAMPLES_PER_SAMPLE: usize = 32;
/// Nodes per axis of a tabulated potential.
const TABLE_NODES: usize = 33;
/// Allowed excess of a Dini derivative over its decrease bound.
pub const DINI_SLACK: f64 = 1e-3;

/// What a command produced.
pub struct Outcome {
    pub verdict: Verdict,
    pub result: Value,
    /// Set when the verdict is not a pass but the run still completed.
    pub error: Option<ErrorInfo>,
}

impl Outcome {
    fn judged(pass: bool, result: Value, why: impl FnOnce() -> ErrorInfo) -> Self {
        Outcome {
            verdict: if pass { Verdict::Pass } else { Verdict::Fail },
            error: (!pass).then(why),
            result,
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    Ok(serde_json::to_value(v)?)
}

fn failure(kind: &str, message: String) -> ErrorInfo {
    ErrorInfo {
        kind: kind.into(),
        message,
        witness: None,
        condition: None,
    }
}

pub struct Loaded {
    pub entry: CatalogEntry,
    pub spec: SystemSpec,
}

impl Loaded {
    pub fn info(&self, source: &str) -> SystemInfo {
        SystemInfo {
            source: source.into(),
            name: self.entry.name.clone(),
            spec: self.spec.to_string(),
            dim: self.spec.dim,
            e_dim: self.spec.e_dim,
        }
    }
}

pub fn load(config: &RunConfig) -> CliResult<Loaded> {
    let entry = catalog::resolve(&config.system)?;
    let spec = SystemSpec::parse_with(&entry.spec, &config.params)?;
    Ok(Loaded { entry, spec })
}

/// `Q` from the flag, else from the document, else the identity.
fn q_matrix(config: &RunConfig, spec: &SystemSpec, n: usize) -> CliResult<DMatrix<f64>> {
    let q = match (&config.q, &spec.q) {
        (Some(values), _) => {
            if values.len() != n * n {
                return Err(CliError::Config(format!(
                    "--Q has {} entries; expected {} for a {n}x{n} matrix",
                    values.len(),
                    n * n
                )));
            }
            DMatrix::from_row_slice(n, n, values)
        }
        (None, Some(q)) => q.clone(),
        (None, None) => DMatrix::identity(n, n),
    };
    if q.shape() != (n, n) {
        return Err(CliError::Config(format!("Q is {}x{}; expected {n}x{n}", q.nrows(), q.ncols())));
    }
    Ok(q)
}

fn estimate_options(config: &RunConfig) -> EstimateOptions {
    EstimateOptions {
        seed: config.seed,
        flow: FlowOptions::new(config.tol),
    }
}

fn create(config: &RunConfig, name: &str) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(config.out.join(name))?))
}

/// `gain.csv`: one row per tabulated gain of every estimate.
fn write_gain_csv(config: &RunConfig, estimates: &[(&str, &DecayEstimate)]) -> CliResult<()> {
    let mut w = create(config, "gain.csv")?;
    writeln!(w, "estimate,s,lambda,k")?;
    for (name, est) in estimates {
        for p in &est.gain_table {
            writeln!(w, "{name},{:?},{:?},{:?}", p.s, est.lambda, p.k)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_metric_values<M: MetricField + ?Sized>(
    config: &RunConfig,
    metric: &M,
    points: &[Vec<f64>],
) -> CliResult<Vec<DMatrix<f64>>> {
    let values = points.par_iter().map(|e| metric.eval(e)).collect::<lyapcert::Result<Vec<_>>>()?;
    let mut w = create(config, "metric.csv")?;
    write_metric_csv(metric, points, &values, &mut w)?;
    w.flush()?;
    Ok(values)
}

pub fn run(config: &RunConfig, loaded: &Loaded) -> CliResult<Outcome> {
    let transverse = loaded.spec.e_dim.is_some();
    match (config.command, transverse) {
        (Command::Analyze, false) => analyze(config, loaded),
        (Command::Analyze, true) => analyze_transverse(config, loaded),
        (Command::Metric, false) => metric(config, loaded),
        (Command::Metric, true) => metric_transverse(config, loaded),
        (Command::Certify, false) => certify(config, loaded),
        (Command::Certify, true) => certify_transverse(config, loaded),
        (Command::Stabilize, _) => stabilize(config, loaded),
    }
}

struct Estimates {
    les: DecayEstimate,
    gain: DecayEstimate,
    linear: DecayEstimate,
}

fn estimates<V: VectorField + ?Sized>(model: &V, config: &RunConfig) -> CliResult<Estimates> {
    let opts = estimate_options(config);
    let les = estimate_les(model, config.radii[0], config.samples, config.horizon, &opts)?;
    let gain = estimate_gain_function(model, &les, &config.radii, config.samples, config.horizon, &opts)?;
    let linear = estimate_linearized_decay(model, &config.radii, config.samples, config.horizon, &opts)?;
    Ok(Estimates { les, gain, linear })
}

fn ordinary_model(loaded: &Loaded) -> CliResult<SystemModel> {
    Ok(SystemModel::from_exprs(loaded.spec.f.clone())?)
}

fn analyze(config: &RunConfig, loaded: &Loaded) -> CliResult<Outcome> {
    let model = ordinary_model(loaded)?;
    let est = estimates(&model, config)?;
    write_gain_csv(config, &[("les", &est.les), ("gain", &est.gain), ("linearized", &est.linear)])?;
    Ok(Outcome {
        verdict: Verdict::Pass,
        error: None,
        result: json!({
            "kind": "ordinary",
            "les": to_value(&est.les)?,
            "gain": to_value(&est.gain)?,
            "linearized": to_value(&est.linear)?,
        }),
    })
}

fn analyze_transverse(config: &RunConfig, loaded: &Loaded) -> CliResult<Outcome> {
    let model = TransverseModel::from_spec(&loaded.spec)?;
    let opts = estimate_options(config);
    let (lo, hi) = config.grid_box(model.n_x());
    let r = config.radii[0];
    let tules = estimate_tules(&model, r, &lo, &hi, config.samples, config.horizon, &opts)?;
    let linear = estimate_transverse_linear_decay(&model, &lo, &hi, config.samples, config.horizon, &opts)?;
    let bounds = transverse_constants(&model, config)?;
    write_gain_csv(config, &[("tules", &tules), ("transverse-linear", &linear)])?;
    Ok(Outcome {
        verdict: Verdict::Pass,
        error: None,
        result: json!({
            "kind": "transverse",
            "tules": to_value(&tules)?,
            "transverse_linear": to_value(&linear)?,
            "bound_constants": to_value(&bounds)?,
        }),
    })
}

fn transverse_constants(model: &TransverseModel, config: &RunConfig) -> CliResult<BoundConstants> {
    let (lo, hi) = config.grid_box(model.n_x());
    Ok(estimate_bound_constants(
        model,
        config.radii[0],
        &lo,
        &hi,
        config.samples * BOUND_SAMPLES_PER_SAMPLE,
        config.seed,
    )?)
}

/// The configured metric of an ordinary system.
fn ordinary_metric<'a, V: VectorField>(
    model: &'a V,
    config: &RunConfig,
    q: DMatrix<f64>,
    est: &Estimates,
) -> CliResult<Box<dyn MetricField + 'a>> {
    Ok(match config.variant {
        Variant::Origin => Box::new(gramian_at_origin(model, &q)?),
        Variant::AlongSolutions => Box::new(GramianMetric::new(model, q, est.linear.clone(), config.tol)?),
        Variant::Rescaled => Box::new(RescaledMetric::new(model, q, est.linear.clone(), config.tol)?),
        Variant::Transverse => {
            return Err(CliError::Config(
                "the transverse variant needs a document that declares e_dim".into(),
            ))
        }
    })
}

/// Residuals of `L_F P + Q ⪯ 0` on the tensor grid.
fn grid_residuals<M: MetricField + ?Sized, V: VectorField + ?Sized>(
    metric: &M,
    model: &V,
    config: &RunConfig,
) -> CliResult<ResidualReport> {
    let h = default_step(config.tol);
    let entries = config
        .grid_points(model.dim())
        .par_iter()
        .map(|e| lie_derivative_residual(metric, model, e, h, config.check_tol))
        .collect::<lyapcert::Result<Vec<_>>>()?;
    Ok(residual_report(entries, config.check_tol))
}

fn residual_failure(r: &ResidualReport) -> ErrorInfo {
    let worst = r.entries.iter().max_by(|a, b| a.max_eig.total_cmp(&b.max_eig));
    ErrorInfo {
        kind: "residual".into(),
        message: format!(
            "largest eigenvalue of the residual is {:.3e} (tolerance {:.1e})",
            r.max_eig, r.tolerance
        ),
        witness: worst.map(|e| e.point.clone()),
        condition: None,
    }
}

struct OrdinaryMetric<'a> {
    est: Estimates,
    metric: Box<dyn MetricField + 'a>,
    bounds: MetricBounds,
}

fn build_ordinary<'a>(model: &'a SystemModel, config: &RunConfig, loaded: &Loaded) -> CliResult<OrdinaryMetric<'a>> {
    let q = q_matrix(config, &loaded.spec, model.dim())?;
    let est = estimates(model, config)?;
    let metric = ordinary_metric(model, config, q, &est)?;
    let bounds = metric_bounds(
        &*metric,
        model,
        &config.radii,
        &est.gain,
        &est.linear,
        config.samples,
        config.seed,
    )?;
    Ok(OrdinaryMetric { est, metric, bounds })
}

fn metric(config: &RunConfig, loaded: &Loaded) -> CliResult<Outcome> {
    let model = ordinary_model(loaded)?;
    let built = build_ordinary(&model, config, loaded)?;
    let metric = &*built.metric;
    write_gain_csv(
        config,
        &[("les", &built.est.les), ("gain", &built.est.gain), ("linearized", &built.est.linear)],
    )?;
    let points = config.grid_points(model.dim());
    let values = write_metric_values(config, metric, &points)?;
    let residuals = grid_residuals(metric, &model, config)?;
    let origin = metric.eval(&vec![0.0; model.dim()])?;
    let result = json!({
        "kind": "ordinary",
        "variant": metric.variant(),
        "linearized": to_value(&built.est.linear)?,
        "p_at_origin": rows(&origin),
        "metric": points.iter().zip(&values).map(|(e, p)| json!({"e": e, "p": rows(p)})).collect::<Vec<_>>(),
        "residuals": to_value(&residuals)?,
        "bounds": to_value(&built.bounds)?,
    });
    Ok(Outcome::judged(residuals.passed(), result, || residual_failure(&residuals)))
}

struct TransverseBuilt {
    linear: DecayEstimate,
    constants: BoundConstants,
    residuals: ResidualReport,
    bounds: MetricBounds,
    points: Vec<Vec<f64>>,
    values: Vec<DMatrix<f64>>,
}

fn build_transverse(model: &TransverseModel, config: &RunConfig, loaded: &Loaded) -> CliResult<TransverseBuilt> {
    if !matches!(config.variant, Variant::Transverse | Variant::AlongSolutions) {
        return Err(CliError::Config(format!(
            "variant {} does not apply to a transverse document; use transverse",
            config.variant.name()
        )));
    }
    let opts = estimate_options(config);
    let (lo, hi) = config.grid_box(model.n_x());
    let q = q_matrix(config, &loaded.spec, model.n_e())?;
    let linear = estimate_transverse_linear_decay(model, &lo, &hi, config.samples, config.horizon, &opts)?;
    let metric = TransverseMetric::new(model.clone(), q, linear.clone(), config.tol)?;
    let points = config.grid_points(model.n_x());
    let values = write_metric_values(config, &metric, &points)?;
    let h = default_step(config.tol);
    let entries = points
        .par_iter()
        .map(|x| transverse_residual(&metric, x, h, config.check_tol))
        .collect::<lyapcert::Result<Vec<_>>>()?;
    let residuals = residual_report(entries, config.check_tol);
    let constants = transverse_constants(model, config)?;
    let bounds = transverse_bounds(&metric, &lo, &hi, config.samples, config.seed, constants.mu.value)?;
    Ok(TransverseBuilt {
        linear,
        constants,
        residuals,
        bounds,
        points,
        values,
    })
}

fn transverse_json(built: &TransverseBuilt) -> CliResult<Value> {
    Ok(json!({
        "kind": "transverse",
        "variant": Variant::Transverse,
        "transverse_linear": to_value(&built.linear)?,
        "bound_constants": to_value(&built.constants)?,
        "metric": built.points.iter().zip(&built.values).map(|(x, p)| json!({"x": x, "p": rows(p)})).collect::<Vec<_>>(),
        "residuals": to_value(&built.residuals)?,
        "bounds": to_value(&built.bounds)?,
    }))
}

fn metric_transverse(config: &RunConfig, loaded: &Loaded) -> CliResult<Outcome> {
    let model = TransverseModel::from_spec(&loaded.spec)?;
    let built = build_transverse(&model, config, loaded)?;
    write_gain_csv(config, &[("transverse-linear", &built.linear)])?;
    let result = transverse_json(&built)?;
    Ok(Outcome::judged(built.residuals.passed(), result, || residual_failure(&built.residuals)))
}

/// One grid point of a V-based certificate.
#[derive(Debug, Clone, Serialize)]
pub struct CertifiedPoint {
    pub e: Vec<f64>,
    pub v: DistanceValue,
    /// `√p̲|e| ≤ V ≤ √p̄|e|`; `None` beyond the envelope's radii.
    pub sandwich: Option<bool>,
    pub dini: Option<DiniEstimate>,
    /// Why the point cannot certify anything, if it cannot.
    pub flag: Option<String>,
    /// Decrease and sandwich both hold; `None` for flagged points.
    pub holds: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub points: Vec<CertifiedPoint>,
    pub flagged_fraction: f64,
    pub dini_slack: f64,
    pub verdict: String,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.verdict == "pass"
    }

    fn failure(&self) -> ErrorInfo {
        match self.points.iter().find(|p| p.holds == Some(false)) {
            Some(p) => ErrorInfo {
                kind: "decrease".into(),
                message: match &p.dini {
                    Some(d) => format!("D+V = {:.6e} exceeds the bound {:?} at {:?}", d.value, d.bound, p.e),
                    None => format!("sandwich violated at {:?}", p.e),
                },
                witness: Some(p.e.clone()),
                condition: None,
            },
            None => failure("no-certified-point", "every grid point was flagged".into()),
        }
    }
}

/// `V` and its Dini derivative at every point, judged against `envelope`.
fn certify_points<M: MetricField + ?Sized, V: VectorField + ?Sized>(
    metric: &M,
    model: &V,
    points: &[Vec<f64>],
    envelope: &Envelope,
) -> CliResult<Certificate> {
    let geo = GeometryOptions::default();
    let mut out = Vec::with_capacity(points.len());
    for e in points {
        let v = distance_to_origin(metric, e, &geo)?;
        let r = vec_norm(e);
        let sandwich = envelope.sandwich(r, r, v.value);
        let (dini, mut flag) = if r == 0.0 {
            (None, Some("origin".to_string()))
        } else {
            match dini_derivative_v(metric, model, e, &DINI_STEPS, Some(envelope), &geo) {
                Ok(d) => (Some(d), None),
                Err(Error::UnreliableDini(msg)) => (None, Some(msg)),
                Err(other) => return Err(other.into()),
            }
        };
        if flag.is_none() {
            if v.upper_bound || dini.as_ref().is_some_and(|d| d.flagged) {
                flag = Some("distance known only as an upper bound".into());
            } else if sandwich.is_none() {
                flag = Some(format!("|e| = {r} lies beyond the envelope's radii"));
            }
        }
        let holds = match (&flag, &dini) {
            (None, Some(d)) => Some(sandwich == Some(true) && d.satisfies(DINI_SLACK) == Some(true)),
            _ => None,
        };
        out.push(CertifiedPoint {
            e: e.clone(),
            v,
            sandwich,
            dini,
            flag,
            holds,
        });
    }
    let flagged = out.iter().filter(|p| p.holds.is_none()).count();
    let pass = flagged < out.len() && out.iter().all(|p| p.holds != Some(false));
    Ok(Certificate {
        flagged_fraction: flagged as f64 / out.len().max(1) as f64,
        dini_slack: DINI_SLACK,
        verdict: if pass { "pass" } else { "fail" }.into(),
        points: out,
    })
}

fn write_distances(config: &RunConfig, cert: &Certificate) -> CliResult<()> {
    let values: Vec<DistanceValue> = cert.points.iter().map(|p| p.v.clone()).collect();
    let mut w = create(config, "distance.csv")?;
    write_distance_csv(&values, &mut w)?;
    w.flush()?;
    Ok(())
}

fn certify(config: &RunConfig, loaded: &Loaded) -> CliResult<Outcome> {
    let model = ordinary_model(loaded)?;
    let built = build_ordinary(&model, config, loaded)?;
    let envelope = Envelope::from_bounds(&built.bounds);
    let cert = certify_points(&*built.metric, &model, &config.grid_points(model.dim()), &envelope)?;
    write_distances(config, &cert)?;
    let result = json!({
        "kind": "ordinary",
        "variant": built.metric.variant(),
        "envelope": to_value(&envelope)?,
        "completeness": to_value(&built.bounds.completeness)?,
        "certificate": to_value(&cert)?,
    });
    Ok(Outcome::judged(cert.passed(), result, || cert.failure()))
}

fn certify_transverse(config: &RunConfig, loaded: &Loaded) -> CliResult<Outcome> {
    let model = TransverseModel::from_spec(&loaded.spec)?;
    let opts = estimate_options(config);
    let (lo, hi) = config.grid_box(model.n_x());
    // A coupled variation that fails to decay falsifies before any metric is built.
    let variation =
        estimate_transverse_variation(&model, config.radii[0], &lo, &hi, config.samples, config.horizon, &opts)?;
    let built = build_transverse(&model, config, loaded)?;
    write_gain_csv(config, &[("variation", &variation), ("transverse-linear", &built.linear)])?;
    let mut result = transverse_json(&built)?;
    result["variation"] = to_value(&variation)?;
    Ok(Outcome::judged(built.residuals.passed(), result, || residual_failure(&built.residuals)))
}

fn stabilize(config: &RunConfig, loaded: &Loaded) -> CliResult<Outcome> {
    let spec = &loaded.spec;
    let sys = ControlSystem::from_spec(spec)?;
    let n = sys.dim();
    let p = spec.p.clone().ok_or_else(|| {
        CliError::Config("stabilize needs a constant metric `P = [...]` in the system document".into())
    })?;
    let q = q_matrix(config, spec, n)?;
    let metric = ConstantMetric::new(p.clone(), q.clone())?;
    let samples = config.grid_points(n);
    let cert = certify_controller(&sys, &metric, config.lambda_gain, &samples, &StabilizeOptions::default())?;
    if !cert.passed() {
        let failures = cert.failures();
        let (condition, detail) = failures[0].clone();
        let result = json!({
            "controller": to_value(&cert)?,
            "failures": failures.iter().map(|(c, d)| json!({"condition": c, "detail": d})).collect::<Vec<_>>(),
        });
        return Ok(Outcome {
            verdict: Verdict::Fail,
            result,
            error: Some(ErrorInfo {
                kind: "hypothesis-failed".into(),
                message: format!("controller hypothesis {condition} failed: {detail}"),
                witness: cert.witness.clone(),
                condition: Some(condition),
            }),
        });
    }

    let envelope = Envelope::constant(min_eigenvalue(&p), max_eigenvalue(&p));
    let export = closed_loop_spec(&sys, &p, &q, config.lambda_gain)?;
    let (closed, artifact) = match &export {
        Some(text) => {
            fs::write(config.out.join("closed_loop.spec"), text)?;
            let model = SystemModel::from_exprs(SystemSpec::parse(text)?.f)?;
            (certify_points(&metric, &model, &samples, &envelope)?, "closed_loop.spec")
        }
        None => {
            let (lo, hi) = config.grid_box(n);
            let nodes = if n <= 2 { TABLE_NODES } else { 9 };
            let table = tabulate_potential(&metric, &sys, &lo, &hi, &vec![nodes; n])?;
            fs::write(config.out.join("potential.json"), serde_json::to_string_pretty(&table)? + "\n")?;
            let model = ClosedLoop::new(&sys, &metric, config.lambda_gain);
            (certify_points(&metric, &model, &samples, &envelope)?, "potential.json")
        }
    };
    write_distances(config, &closed)?;
    let closed_ok = cert.closed_loop_verdict.as_deref() == Some("pass");
    let result = json!({
        "controller": to_value(&cert)?,
        "artifact": artifact,
        "closed_loop_spec": export,
        "closed_loop_certificate": to_value(&closed)?,
    });
    Ok(Outcome::judged(closed_ok && closed.passed(), result, || {
        if closed_ok {
            closed.failure()
        } else {
            failure(
                "closed-loop-inequality",
                format!("L_F P + Q reaches {:?} on the closed loop", cert.closed_loop),
            )
        }
    }))
}
