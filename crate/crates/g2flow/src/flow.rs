//! Time integration of the Laplacian flow `d/dt phi = Delta phi` for closed
//! structures, with trajectory-level conservation monitors. On the Lie backend
//! this is a 35-dimensional autonomous ODE on invariant 3-form coefficients;
//! the lattice treats every grid point's coefficients as state (method of
//! lines). The right-hand side is `i(h)` with
//! `h = -Ric - (2/3)|T|^2 g - 2 That`; the Hodge route stays independent and
//! is only ever used as a cross-check.

use crate::geometry::{integrate, total_volume, Backend, Field};
use crate::tensor7::{wedge_at, Metric, DIM};
use crate::torsion::{closed_flow_velocity_with_tol, derive, DerivedGeometry, TorsionError};
use std::sync::{Arc, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow left the positive cone at t = {t}: {reason}")]
    Blowup { t: f64, reason: String },
    #[error("closedness drift {drift:.3e} above tolerance at t = {t}")]
    ClosednessDrift { t: f64, drift: f64 },
    #[error("need at least {need} samples, have {have}")]
    TooFewSamples { need: usize, have: usize },
    #[error(transparent)]
    Torsion(#[from] TorsionError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Euler,
}

#[derive(Clone, Debug)]
pub struct FlowConfig {
    pub dt: f64,
    pub t_end: f64,
    pub method: Method,
    pub sample_every: usize,
    /// Abort when |d phi|/|phi| exceeds this.
    pub closedness_tol: f64,
    /// Abort when max ||Rm|| exceeds this.
    pub rm_ceiling: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: 1e-3,
            t_end: 1.0,
            method: Method::Rk4,
            sample_every: 10,
            closedness_tol: 1e-8,
            rm_ceiling: 1e6,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.dt > 0.0) || !(self.t_end > 0.0) {
            return Err(FlowError::Blowup { t: 0.0, reason: "dt and t_end must be positive".into() });
        }
        Ok(())
    }
}

/// State of the flow at one time, with lazily derived geometry.
pub struct FlowState {
    pub t: f64,
    pub phi: Field<f64>,
    derived: OnceLock<Arc<DerivedGeometry<f64>>>,
}

impl FlowState {
    pub fn new(t: f64, phi: Field<f64>) -> Self {
        FlowState { t, phi, derived: OnceLock::new() }
    }

    /// Derived geometry of the current phi (computed once, cached).
    pub fn derived(
        &self,
        backend: &dyn Backend<f64>,
    ) -> Result<Arc<DerivedGeometry<f64>>, TorsionError> {
        if let Some(d) = self.derived.get() {
            return Ok(d.clone());
        }
        let d = Arc::new(derive(backend, &self.phi)?);
        let _ = self.derived.set(d);
        Ok(self.derived.get().expect("just set").clone())
    }
}

fn velocity(
    backend: &dyn Backend<f64>,
    phi: &Field<f64>,
    tol: f64,
) -> Result<Field<f64>, TorsionError> {
    let d = derive(backend, phi)?;
    closed_flow_velocity_with_tol(&d, tol)
}

/// Advance one step. The returned state has an empty derived cache.
pub fn step(
    backend: &dyn Backend<f64>,
    state: &FlowState,
    cfg: &FlowConfig,
) -> Result<FlowState, FlowError> {
    let t = state.t;
    let wrap = |e: TorsionError| match e {
        TorsionError::NotClosed(d) => FlowError::ClosednessDrift { t, drift: d },
        TorsionError::G2(_) => FlowError::Blowup { t, reason: e.to_string() },
        other => FlowError::Torsion(other),
    };
    // guards on the current state
    let d0 = state.derived(backend).map_err(wrap)?;
    if d0.closedness > cfg.closedness_tol {
        return Err(FlowError::ClosednessDrift { t, drift: d0.closedness });
    }
    let rm_max = rm_norm_max(&d0);
    if rm_max > cfg.rm_ceiling {
        return Err(FlowError::Blowup { t, reason: format!("||Rm|| = {rm_max:.3e} above ceiling") });
    }
    let dt = cfg.dt;
    let phi = &state.phi;
    let next = match cfg.method {
        Method::Euler => {
            let k1 = closed_flow_velocity_with_tol(&d0, cfg.closedness_tol).map_err(wrap)?;
            phi.add(&k1.scale(&dt))
        }
        Method::Rk4 => {
            let k1 = closed_flow_velocity_with_tol(&d0, cfg.closedness_tol).map_err(wrap)?;
            let k2 = velocity(backend, &phi.add(&k1.scale(&(0.5 * dt))), cfg.closedness_tol)
                .map_err(wrap)?;
            let k3 = velocity(backend, &phi.add(&k2.scale(&(0.5 * dt))), cfg.closedness_tol)
                .map_err(wrap)?;
            let k4 =
                velocity(backend, &phi.add(&k3.scale(&dt)), cfg.closedness_tol).map_err(wrap)?;
            let sum = k1.add(&k2.scale(&2.0)).add(&k3.scale(&2.0)).add(&k4);
            phi.add(&sum.scale(&(dt / 6.0)))
        }
    };
    Ok(FlowState::new(t + dt, next))
}

/// max over points of ||Rm|| (full 4-tensor norm).
pub fn rm_norm_max(d: &DerivedGeometry<f64>) -> f64 {
    let metrics = d.metrics();
    d.curvature
        .rm
        .points
        .iter()
        .zip(&metrics)
        .map(|(rm, m)| crate::tensor7::norm2_full(rm, m).max(0.0).sqrt())
        .fold(0.0, f64::max)
}

/// One stored trajectory sample: time and the 3-form field. Derived data is
/// recomputed on demand by consumers (it dominates memory on the lattice).
#[derive(Clone)]
pub struct FlowSample {
    pub t: f64,
    pub phi: Field<f64>,
}

/// A completed (or interrupted) run.
pub struct RunResult {
    pub samples: Vec<FlowSample>,
    /// None when t_end was reached.
    pub failure: Option<FlowError>,
    pub steps_taken: usize,
}

/// Integrate from `phi0`, sampling every `cfg.sample_every` steps (always
/// including the initial and final states).
pub fn run(backend: &dyn Backend<f64>, phi0: Field<f64>, cfg: &FlowConfig) -> RunResult {
    let mut samples = Vec::new();
    let mut state = FlowState::new(0.0, phi0);
    let n_steps = (cfg.t_end / cfg.dt).round() as usize;
    samples.push(FlowSample { t: state.t, phi: state.phi.clone() });
    for k in 0..n_steps {
        match step(backend, &state, cfg) {
            Ok(next) => state = next,
            Err(e) => {
                return RunResult { samples, failure: Some(e), steps_taken: k };
            }
        }
        if (k + 1) % cfg.sample_every == 0 || k + 1 == n_steps {
            samples.push(FlowSample { t: state.t, phi: state.phi.clone() });
        }
    }
    RunResult { samples, failure: None, steps_taken: n_steps }
}

/// Joint integration of the flow with the metric-evolution ODE
/// `d/dt g = 2 h(phi(t))` from the same initial data; returns the final flow
/// state together with the independently integrated metric field, so the two
/// routes to `g(t)` can be compared.
pub fn run_with_metric_ode(
    backend: &dyn Backend<f64>,
    phi0: Field<f64>,
    cfg: &FlowConfig,
) -> Result<(FlowState, Field<f64>), FlowError> {
    cfg.validate()?;
    let n_steps = (cfg.t_end / cfg.dt).round() as usize;
    let mut phi = phi0;
    let d0 = derive(backend, &phi)?;
    let mut gaux = Field { points: d0.structures.iter().map(|s| s.g().clone()).collect() };
    let dt = cfg.dt;
    let mut t = 0.0;
    let rhs = |p: &Field<f64>| -> Result<(Field<f64>, Field<f64>), FlowError> {
        let d = derive(backend, p)?;
        let v = closed_flow_velocity_with_tol(&d, cfg.closedness_tol)?;
        let gdot = d.h.scale(&2.0);
        Ok((v, gdot))
    };
    for _ in 0..n_steps {
        let (k1p, k1g) = rhs(&phi)?;
        let (k2p, k2g) = rhs(&phi.add(&k1p.scale(&(0.5 * dt))))?;
        let (k3p, k3g) = rhs(&phi.add(&k2p.scale(&(0.5 * dt))))?;
        let (k4p, k4g) = rhs(&phi.add(&k3p.scale(&dt)))?;
        phi =
            phi.add(&k1p.add(&k2p.scale(&2.0)).add(&k3p.scale(&2.0)).add(&k4p).scale(&(dt / 6.0)));
        gaux = gaux
            .add(&k1g.add(&k2g.scale(&2.0)).add(&k3g.scale(&2.0)).add(&k4g).scale(&(dt / 6.0)));
        t += dt;
    }
    Ok((FlowState::new(t, phi), gaux))
}

/// Per-sample residual of the metric evolution `d/dt g_ij = 2 h_ij`, time
/// derivative by centered differences; `(t_i, max_dev_i)` for interior samples.
pub fn metric_evolution_residual(
    backend: &dyn Backend<f64>,
    samples: &[FlowSample],
) -> Result<Vec<(f64, f64)>, FlowError> {
    if samples.len() < 3 {
        return Err(FlowError::TooFewSamples { need: 3, have: samples.len() });
    }
    let mut derived: Vec<DerivedGeometry<f64>> = Vec::with_capacity(samples.len());
    for s in samples {
        derived.push(derive(backend, &s.phi)?);
    }
    let mut out = Vec::new();
    for i in 1..samples.len() - 1 {
        let dt_c = samples[i + 1].t - samples[i - 1].t;
        let mut dev: f64 = 0.0;
        for p in 0..samples[i].phi.points.len() {
            let gp = derived[i + 1].structures[p].g().clone();
            let gm = derived[i - 1].structures[p].g().clone();
            let dgdt = gp.sub(&gm).scale(&(1.0 / dt_c));
            let rhs = derived[i].h.points[p].scale(&2.0);
            dev = dev.max(dgdt.sub(&rhs).max_abs_f64());
        }
        out.push((samples[i].t, dev));
    }
    Ok(out)
}

/// Per-sample residual of the volume evolution `d/dt dV = (4/3)|T|^2 dV`,
/// applied to the pointwise volume density.
pub fn volume_evolution_residual(
    backend: &dyn Backend<f64>,
    samples: &[FlowSample],
) -> Result<Vec<(f64, f64)>, FlowError> {
    if samples.len() < 3 {
        return Err(FlowError::TooFewSamples { need: 3, have: samples.len() });
    }
    let mut dens: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    let mut tn2: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    for s in samples {
        let d = derive(backend, &s.phi)?;
        dens.push(d.structures.iter().map(|st| st.vol_scale).collect());
        tn2.push(d.torsion_norm2.clone());
    }
    let mut out = Vec::new();
    for i in 1..samples.len() - 1 {
        let dt_c = samples[i + 1].t - samples[i - 1].t;
        let mut dev: f64 = 0.0;
        for p in 0..dens[i].len() {
            let dvdt = (dens[i + 1][p] - dens[i - 1][p]) / dt_c;
            let rhs = (4.0 / 3.0) * tn2[i][p] * dens[i][p];
            dev = dev.max((dvdt - rhs).abs());
        }
        out.push((samples[i].t, dev));
    }
    Ok(out)
}

/// Hitchin functional = total volume `int *1`.
pub fn hitchin_functional(
    backend: &dyn Backend<f64>,
    d: &DerivedGeometry<f64>,
) -> Result<f64, FlowError> {
    let metrics = d.metrics();
    Ok(total_volume(backend, &metrics).map_err(TorsionError::from)?)
}

/// The same functional through `(1/7) int phi ^ psi` (top-form quadrature).
pub fn hitchin_via_wedge(
    backend: &dyn Backend<f64>,
    d: &DerivedGeometry<f64>,
) -> Result<f64, FlowError> {
    let full: Vec<usize> = (0..DIM).collect();
    // integrate the coordinate top coefficient (no dV weight): unit metrics
    let unit: Vec<Metric<f64>> = d.structures.iter().map(|_| Metric::euclidean()).collect();
    let tops: Vec<f64> = d.structures.iter().map(|s| wedge_at(&s.phi, &s.psi, &full)).collect();
    let val = integrate(backend, &tops, &unit).map_err(TorsionError::from)?;
    Ok(val / 7.0)
}

/// Pointwise minimum eigenvalue of g across the field (CSV diagnostic).
pub fn min_metric_eigenvalue(d: &DerivedGeometry<f64>) -> f64 {
    let mut out = f64::INFINITY;
    for s in &d.structures {
        let mut m = crate::linalg::SqMat::<f64>::zeros(DIM);
        for i in 0..DIM {
            for j in 0..DIM {
                *m.at_mut(i, j) = *s.g().get(&[i, j]);
            }
        }
        let ev = crate::linalg::sym_eigenvalues(&m);
        out = out.min(ev[0]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LieBackend;
    use crate::torsion::standard_phi_field;

    #[test]
    fn flat_flow_is_stationary() {
        let b: LieBackend<f64> = LieBackend::abelian();
        let phi0 = standard_phi_field::<f64>(1);
        let cfg = FlowConfig { dt: 1e-3, t_end: 0.05, sample_every: 10, ..Default::default() };
        let res = run(&b, phi0.clone(), &cfg);
        assert!(res.failure.is_none());
        let last = res.samples.last().unwrap();
        assert!(last.phi.sub(&phi0).max_abs_f64() <= 1e-12);
    }

    #[test]
    fn nilpotent_flow_volume_and_scalar_monotonicity() {
        let b: LieBackend<f64> = LieBackend::nilpotent(1.0);
        let phi0 = standard_phi_field::<f64>(1);
        let cfg = FlowConfig { dt: 2e-3, t_end: 0.1, sample_every: 5, ..Default::default() };
        let res = run(&b, phi0, &cfg);
        assert!(res.failure.is_none(), "{:?}", res.failure);
        let mut vols = Vec::new();
        let mut scalars = Vec::new();
        for s in &res.samples {
            let d = derive(&b, &s.phi).unwrap();
            vols.push(hitchin_functional(&b, &d).unwrap());
            scalars.push(d.curvature.scalar[0]);
            // S = (2/3) R at every sample
            let sic = d.sic();
            let tr = crate::tensor7::inner_2tensor(
                &sic.points[0],
                d.structures[0].g(),
                &d.structures[0].metric,
            )
            .unwrap();
            assert!((tr - (2.0 / 3.0) * d.curvature.scalar[0]).abs() < 1e-12);
            // wedge route to the Hitchin functional
            let hw = hitchin_via_wedge(&b, &d).unwrap();
            let hv = hitchin_functional(&b, &d).unwrap();
            assert!((hw - hv).abs() < 1e-12, "{hw} vs {hv}");
        }
        for w in vols.windows(2) {
            assert!(w[1] > w[0], "volume strictly increasing: {vols:?}");
        }
        for r in &scalars {
            assert!(*r <= 0.0);
        }
    }

    #[test]
    fn evolution_residuals_second_order() {
        let b: LieBackend<f64> = LieBackend::nilpotent(1.0);
        let phi0 = standard_phi_field::<f64>(1);
        let mut maxima = Vec::new();
        for dt in [2e-3, 1e-3] {
            let cfg = FlowConfig { dt, t_end: 20.0 * dt, sample_every: 1, ..Default::default() };
            let res: RunResult = run(&b, phi0.clone(), &cfg);
            assert!(res.failure.is_none());
            let mres = metric_evolution_residual(&b, &res.samples).unwrap();
            let vres = volume_evolution_residual(&b, &res.samples).unwrap();
            let m = mres.iter().map(|&(_, v)| v).fold(0.0, f64::max);
            let v = vres.iter().map(|&(_, v)| v).fold(0.0, f64::max);
            maxima.push((m, v));
        }
        let order_m = (maxima[0].0 / maxima[1].0).log2();
        let order_v = (maxima[0].1 / maxima[1].1).log2();
        assert!(order_m > 1.9 && order_m < 2.3, "metric residual order {order_m}");
        assert!(order_v > 1.9 && order_v < 2.3, "volume residual order {order_v}");
    }

    #[test]
    fn dual_route_metric_agreement_high_order() {
        let b: LieBackend<f64> = LieBackend::nilpotent(1.0);
        let phi0 = standard_phi_field::<f64>(1);
        let mut errs = Vec::new();
        for dt in [4e-3, 2e-3] {
            let cfg = FlowConfig { dt, t_end: 0.2, sample_every: 1000, ..Default::default() };
            let (state, gaux) = run_with_metric_ode(&b, phi0.clone(), &cfg).unwrap();
            let d = derive(&b, &state.phi).unwrap();
            let err = d.structures[0].g().sub(&gaux.points[0]).max_abs_f64();
            errs.push(err);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order >= 3.5, "observed order {order} from {errs:?}");
    }

    #[test]
    fn too_few_samples_error() {
        let b: LieBackend<f64> = LieBackend::abelian();
        let s = vec![
            FlowSample { t: 0.0, phi: standard_phi_field::<f64>(1) },
            FlowSample { t: 0.1, phi: standard_phi_field::<f64>(1) },
        ];
        assert!(matches!(metric_evolution_residual(&b, &s), Err(FlowError::TooFewSamples { .. })));
    }

    #[test]
    fn euler_also_integrates() {
        let b: LieBackend<f64> = LieBackend::nilpotent(1.0);
        let phi0 = standard_phi_field::<f64>(1);
        let cfg = FlowConfig {
            dt: 1e-3,
            t_end: 0.01,
            method: Method::Euler,
            sample_every: 5,
            ..Default::default()
        };
        let res = run(&b, phi0, &cfg);
        assert!(res.failure.is_none());
        assert_eq!(res.steps_taken, 10);
    }

    #[test]
    fn rm_ceiling_triggers_blowup() {
        let b: LieBackend<f64> = LieBackend::nilpotent(1.0);
        let phi0 = standard_phi_field::<f64>(1);
        let cfg = FlowConfig { rm_ceiling: 1e-6, t_end: 0.01, ..Default::default() };
        let res = run(&b, phi0, &cfg);
        assert!(matches!(res.failure, Some(FlowError::Blowup { .. })));
    }
}
