//! Semi-implicit time stepping of the parabolic obstacle problem.
//!
//! Each step solves the box-constrained quadratic problem
//! `min 1/2 v^T A v - b^T v`, `0 <= v <= 1`, with
//! `A = M_l + 2 alpha eps tau K` and `b = M_l u^n - tau g^n`, where `M_l` is
//! the lumped mass and `g^n` collects the explicit terms: the averaged PDE
//! gradient and `(alpha/eps) M (1 - 2 u^n)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::MeasurementSource;
use crate::error::{invalid, Error, Result};
use crate::fem::{transfer_field, NodalField};
use crate::math;
use crate::mesh::{adapt_to_field, AdaptParams, TriMesh};
use crate::objective::{CostBreakdown, Measurement, Objective, ObjectiveParams};
use crate::pdas::{solve_pdas, PdasProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct PopState {
    pub u: NodalField,
    pub iter: usize,
    /// Accumulated fictitious time.
    pub t: f64,
    /// Costs of the accepted iterates on the current mesh, starting with `u^0`.
    pub history: Vec<CostBreakdown>,
    pub active_low: Vec<usize>,
    pub active_high: Vec<usize>,
    /// Forward states for `u`, reused as Newton initial guesses.
    pub states: Vec<NodalField>,
}

impl PopState {
    pub fn new(obj: &Objective<'_>, u0: NodalField) -> Result<Self> {
        u0.check(obj.mesh)?;
        let ev = obj.evaluate(u0.values(), None)?;
        let (active_low, active_high) = bound_sets(u0.values());
        Ok(PopState {
            u: u0,
            iter: 0,
            t: 0.0,
            history: vec![ev.cost],
            active_low,
            active_high,
            states: ev.states,
        })
    }

    pub fn cost(&self) -> &CostBreakdown {
        self.history.last().expect("history starts with the initial cost")
    }
}

fn bound_sets(u: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let low = (0..u.len()).filter(|&i| u[i] == 0.0).collect();
    let high = (0..u.len()).filter(|&i| u[i] == 1.0).collect();
    (low, high)
}

/// Explicit load `g^n`: PDE gradient plus the linear part of the well term.
pub fn explicit_load(obj: &Objective<'_>, u: &[f64], states: &[NodalField]) -> Result<Vec<f64>> {
    let mut g = obj.pde_gradient(u, states)?;
    let ObjectiveParams { alpha, eps, .. } = obj.params;
    let w: Vec<f64> = u.iter().map(|x| 1.0 - 2.0 * x).collect();
    for (gi, mw) in g.iter_mut().zip(obj.norms.mass.mul_vec(&w)) {
        *gi += alpha / eps * mw;
    }
    Ok(g)
}

/// The quadratic subproblem of one step from `u` with load `g`.
pub fn step_problem(obj: &Objective<'_>, u: &[f64], g: &[f64], tau: f64) -> PdasProblem {
    let ObjectiveParams { alpha, eps, .. } = obj.params;
    let mut a = obj.norms.stiffness.clone();
    a.scale(2.0 * alpha * eps * tau);
    a.add_diagonal(&obj.lumped_mass);
    let b = obj
        .lumped_mass
        .iter()
        .zip(u)
        .zip(g)
        .map(|((m, x), gi)| m * x - tau * gi)
        .collect();
    PdasProblem::unit_box(a, b)
}

/// One step of size `tau` from `state`, without any acceptance test. The
/// returned state has its forward solutions and cost refreshed.
pub fn pop_step(obj: &Objective<'_>, state: &PopState, tau: f64) -> Result<PopState> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid("time step must be positive"));
    }
    state.u.check(obj.mesh)?;
    let u = state.u.values();
    let g = explicit_load(obj, u, &state.states)?;
    let problem = step_problem(obj, u, &g, tau);
    let sol = solve_pdas(&problem, Some(u))?;
    let ev = obj.evaluate(&sol.x, Some(&state.states))?;
    let mut history = state.history.clone();
    history.push(ev.cost);
    Ok(PopState {
        u: NodalField::new(obj.mesh, sol.x)?,
        iter: state.iter + 1,
        t: state.t + tau,
        history,
        active_low: sol.active_low,
        active_high: sol.active_high,
        states: ev.states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorDecision {
    pub accept: bool,
    /// Step size for the next attempt.
    pub tau: f64,
}

/// Step-size policy applied by [`energy_monitor`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPolicy {
    pub tau_max: f64,
    /// Accepted steps in a row before the step grows.
    pub streak: usize,
    pub growth: f64,
    pub slack: f64,
}

impl StepPolicy {
    pub fn new(tau_max: f64) -> Self {
        StepPolicy {
            tau_max,
            streak: 5,
            growth: 1.2,
            slack: 0.0,
        }
    }
}

/// Accepts when `next + du_norm^2 <= prev + slack`; halves the step on
/// rejection and grows it after `policy.streak` consecutive acceptances.
pub fn energy_monitor(
    prev: &CostBreakdown,
    next: &CostBreakdown,
    du_norm: f64,
    tau: f64,
    accepted_in_row: usize,
    policy: &StepPolicy,
) -> MonitorDecision {
    let ok = next.total.is_finite() && next.total + du_norm * du_norm <= prev.total + policy.slack;
    if !ok {
        return MonitorDecision { accept: false, tau: 0.5 * tau };
    }
    let grow = accepted_in_row + 1 >= policy.streak;
    MonitorDecision {
        accept: true,
        tau: if grow { (tau * policy.growth).min(policy.tau_max) } else { tau },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptSettings {
    /// Adapt after every `every` accepted steps.
    pub every: usize,
    pub params: AdaptParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopParams {
    pub objective: ObjectiveParams,
    pub tau: f64,
    pub tau_max: f64,
    /// Stop when `|u^{n+1} - u^n|_inf <= tol`.
    pub tol: f64,
    pub max_iters: usize,
    /// Give up after this many consecutive rejected steps.
    pub max_rejections: usize,
    pub adapt: Option<AdaptSettings>,
}

impl PopParams {
    pub fn new(objective: ObjectiveParams, tau: f64, tol: f64) -> Self {
        PopParams {
            objective,
            tau,
            tau_max: tau,
            tol,
            max_iters: 5000,
            max_rejections: 20,
            adapt: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid("tau must be positive"));
        }
        if !(self.tau_max >= self.tau && self.tau_max.is_finite()) {
            return Err(invalid("tau_max must be at least tau"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol must be positive"));
        }
        if let Some(a) = self.adapt {
            if a.every == 0 {
                return Err(invalid("adaptation interval must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopStatus {
    Converged,
    IterationCap,
    /// The step size collapsed under repeated rejections.
    Stalled,
}

/// One row of the cost trace, written after each accepted step (and for the
/// initial iterate with `iter = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub time: f64,
    pub cost: CostBreakdown,
    pub step: f64,
    pub du_inf: f64,
    pub active_low: usize,
    pub active_high: usize,
    /// Index of the mesh the row was computed on (0 before the first adaptation).
    pub mesh_index: usize,
}

#[derive(Debug, Clone)]
pub struct PopResult {
    pub state: PopState,
    pub mesh: TriMesh,
    pub measurements: Vec<Measurement>,
    pub trace: Vec<TraceRow>,
    pub status: PopStatus,
    pub rejected_steps: usize,
    pub adaptations: usize,
}

/// Callback hook of [`run_pop_with`], invoked after every accepted step.
pub trait PopObserver {
    /// The starting iterate, reported once with `iter = 0`.
    fn initial(&mut self, _mesh: &TriMesh, _state: &PopState, _row: &TraceRow) {}
    fn accepted(&mut self, _mesh: &TriMesh, _state: &PopState, _row: &TraceRow) {}
    fn adapted(&mut self, _mesh: &TriMesh) {}
}

impl PopObserver for () {}

/// Fixed data on one mesh; remeasuring on any other mesh is an error.
#[derive(Debug, Clone)]
pub struct FixedMeasurements {
    pub mesh_id: u64,
    pub measurements: Vec<Measurement>,
}

impl FixedMeasurements {
    pub fn new(mesh: &TriMesh, measurements: Vec<Measurement>) -> Self {
        FixedMeasurements {
            mesh_id: mesh.id(),
            measurements,
        }
    }
}

impl MeasurementSource for FixedMeasurements {
    fn measure(&self, mesh: &TriMesh) -> Result<crate::data::MeasurementSet> {
        if mesh.id() != self.mesh_id {
            return Err(Error::MeshMismatch);
        }
        Ok(crate::data::MeasurementSet {
            measurements: self.measurements.clone(),
            sources: Vec::new(),
            noise_level: 0.0,
            realised_noise: Vec::new(),
        })
    }
}

pub fn run_pop(params: &PopParams, mesh: &TriMesh, u0: NodalField, source: &dyn MeasurementSource) -> Result<PopResult> {
    run_pop_with(params, mesh, u0, source, &mut ())
}

/// The reconstruction loop. Adaptation, when enabled, always rebuilds from
/// `mesh`, transfers `u`, remeasures through `source` and restarts the
/// energy baseline on the new mesh.
pub fn run_pop_with(
    params: &PopParams,
    mesh: &TriMesh,
    u0: NodalField,
    source: &dyn MeasurementSource,
    observer: &mut dyn PopObserver,
) -> Result<PopResult> {
    params.validate()?;
    u0.check(mesh)?;
    if !u0.in_unit_box() {
        return Err(invalid("initial field must lie in [0, 1]"));
    }
    let policy = StepPolicy::new(params.tau_max);
    let mut cur_mesh = mesh.clone();
    let mut meas = source.measure(&cur_mesh)?.measurements;
    let mut u = u0;
    let mut trace = Vec::new();
    let mut tau = params.tau;
    let mut rejected = 0;
    let mut adaptations = 0;
    let mut iter = 0;
    let mut time = 0.0;
    let mut since_adapt = 0;
    let mut status = PopStatus::IterationCap;
    'outer: loop {
        let obj = Objective::new(&cur_mesh, &meas, params.objective)?;
        let mut state = PopState::new(&obj, u.clone())?;
        state.iter = iter;
        state.t = time;
        let row = TraceRow {
            iter,
            time,
            cost: *state.cost(),
            step: 0.0,
            du_inf: 0.0,
            active_low: state.active_low.len(),
            active_high: state.active_high.len(),
            mesh_index: adaptations,
        };
        if trace.is_empty() {
            trace.push(row);
            observer.initial(&cur_mesh, &state, &row);
        }
        let mut in_row = 0;
        let mut fails = 0;
        while iter < params.max_iters {
            let attempt = match pop_step(&obj, &state, tau) {
                Ok(s) => Some(s),
                Err(Error::ActiveSetCycle { .. }) | Err(Error::NotConverged { .. }) | Err(Error::Breakdown { .. }) => None,
                Err(e) => return Err(e),
            };
            let decision = match &attempt {
                Some(next) => {
                    let du: Vec<f64> = next.u.values().iter().zip(state.u.values()).map(|(a, b)| a - b).collect();
                    let du_norm = math::sqrt(du.iter().zip(&obj.lumped_mass).map(|(d, m)| m * d * d).sum());
                    energy_monitor(state.cost(), next.cost(), du_norm, tau, in_row, &policy)
                }
                None => MonitorDecision { accept: false, tau: 0.5 * tau },
            };
            if !decision.accept {
                rejected += 1;
                fails += 1;
                in_row = 0;
                tau = decision.tau;
                if fails > params.max_rejections {
                    return Ok(finish(state, cur_mesh, meas, trace, PopStatus::Stalled, rejected, adaptations));
                }
                continue;
            }
            let next = attempt.expect("accepted step exists");
            let du_inf = next
                .u
                .values()
                .iter()
                .zip(state.u.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let step = tau;
            fails = 0;
            in_row = if decision.tau > tau { 0 } else { in_row + 1 };
            tau = decision.tau;
            iter += 1;
            since_adapt += 1;
            time += step;
            state = next;
            let row = TraceRow {
                iter,
                time,
                cost: *state.cost(),
                step,
                du_inf,
                active_low: state.active_low.len(),
                active_high: state.active_high.len(),
                mesh_index: adaptations,
            };
            trace.push(row);
            observer.accepted(&cur_mesh, &state, &row);
            if du_inf <= params.tol {
                status = PopStatus::Converged;
                return Ok(finish(state, cur_mesh, meas, trace, status, rejected, adaptations));
            }
            if let Some(a) = params.adapt {
                if since_adapt >= a.every {
                    since_adapt = 0;
                    let new_mesh = adapt_to_field(mesh, &cur_mesh, &state.u, &a.params)?;
                    let moved = transfer_field(&cur_mesh, &state.u, &new_mesh)?;
                    let clamped = moved.values().iter().map(|v| math::clamp01(*v)).collect();
                    u = NodalField::new(&new_mesh, clamped)?;
                    meas = source.measure(&new_mesh)?.measurements;
                    cur_mesh = new_mesh;
                    adaptations += 1;
                    observer.adapted(&cur_mesh);
                    continue 'outer;
                }
            }
        }
        return Ok(finish(state, cur_mesh, meas, trace, status, rejected, adaptations));
    }
}

fn finish(
    state: PopState,
    mesh: TriMesh,
    measurements: Vec<Measurement>,
    trace: Vec<TraceRow>,
    status: PopStatus,
    rejected_steps: usize,
    adaptations: usize,
) -> PopResult {
    PopResult {
        state,
        mesh,
        measurements,
        trace,
        status,
        rejected_steps,
        adaptations,
    }
}

/// Worst violation of the discrete optimality conditions at `u`: with
/// `g = J'(u)` and lumped nodal scaling, `|g_i| / m_i` on free nodes,
/// `max(-g_i, 0) / m_i` where `u_i = 0` and `max(g_i, 0) / m_i` where `u_i = 1`.
pub fn stationarity_residual(obj: &Objective<'_>, u: &[f64], states: &[NodalField]) -> Result<f64> {
    let g = obj.gradient(u, states)?;
    let mut worst: f64 = 0.0;
    for i in 0..u.len() {
        let r = if u[i] <= 0.0 {
            (-g[i]).max(0.0)
        } else if u[i] >= 1.0 {
            g[i].max(0.0)
        } else {
            g[i].abs()
        };
        worst = worst.max(r / obj.lumped_mass[i]);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::interpolate_nodal;
    use crate::mesh::build_square_mesh;
    use crate::objective::exact_measurements;

    fn cost(total: f64) -> CostBreakdown {
        CostBreakdown {
            j_pde: total,
            j_gl_gradient: 0.0,
            j_gl_well: 0.0,
            total,
            tv_diag: 0.0,
        }
    }

    #[test]
    fn monitor_accepts_decrease_and_rejects_increase() {
        let p = StepPolicy::new(1.0);
        let d = energy_monitor(&cost(2.0), &cost(1.0), 0.0, 0.5, 0, &p);
        assert!(d.accept && d.tau == 0.5);
        let d = energy_monitor(&cost(2.0), &cost(3.0), 0.0, 0.5, 0, &p);
        assert!(!d.accept && d.tau == 0.25);
        let d = energy_monitor(&cost(2.0), &cost(1.9), 0.5, 0.5, 0, &p);
        assert!(!d.accept);
        let d = energy_monitor(&cost(2.0), &cost(1.0), 0.0, 0.9, 4, &p);
        assert!(d.accept && d.tau == 1.0);
    }

    fn exact_setup(m: &TriMesh) -> Vec<Measurement> {
        let zero = NodalField::zeros(m);
        let sources = [
            interpolate_nodal(m, |p| p[0]).unwrap(),
            interpolate_nodal(m, |p| p[1]).unwrap(),
        ];
        exact_measurements(m, &zero, &sources, 0.1).unwrap()
    }

    #[test]
    fn exact_data_zero_start_is_a_fixed_point() {
        let m = build_square_mesh(0.25).unwrap();
        let meas = exact_setup(&m);
        let params = PopParams::new(ObjectiveParams::new(1e-4, 1.0 / (8.0 * core::f64::consts::PI), 0.1), 0.25, 1e-4);
        let src = FixedMeasurements { mesh_id: m.id(), measurements: meas };
        let res = run_pop(&params, &m, NodalField::zeros(&m), &src).unwrap();
        assert_eq!(res.status, PopStatus::Converged);
        assert_eq!(res.state.iter, 1);
        assert!(res.state.u.values().iter().all(|v| *v == 0.0));
        assert_eq!(res.state.active_low.len(), m.num_vertices());
    }

    #[test]
    fn step_solves_the_variational_inequality() {
        let m = build_square_mesh(0.2).unwrap();
        let meas = exact_setup(&m);
        let obj = Objective::new(&m, &meas, ObjectiveParams::new(1e-3, 0.1, 0.1)).unwrap();
        let u0 = interpolate_nodal(&m, |p| math::clamp01(1.2 - 3.0 * math::norm(p))).unwrap();
        let state = PopState::new(&obj, u0.clone()).unwrap();
        let tau = 0.5;
        let next = pop_step(&obj, &state, tau).unwrap();
        let g = explicit_load(&obj, u0.values(), &state.states).unwrap();
        let problem = step_problem(&obj, u0.values(), &g, tau);
        let bn = math::norm2(&problem.b);
        assert!(problem.complementarity_residual(next.u.values()) <= 1e-10 * bn);
        assert!(next.u.in_unit_box());
        assert_eq!(next.iter, 1);
        assert!((next.t - tau).abs() < 1e-15);
    }

    #[test]
    fn trace_is_monotone_on_a_small_reconstruction() {
        let m = build_square_mesh(0.125).unwrap();
        let truth = interpolate_nodal(&m, |p| if math::norm(p) < 0.45 { 1.0 } else { 0.0 }).unwrap();
        let sources = [
            interpolate_nodal(&m, |p| p[0]).unwrap(),
            interpolate_nodal(&m, |p| p[1]).unwrap(),
        ];
        let meas = exact_measurements(&m, &truth, &sources, 0.1).unwrap();
        let mut params = PopParams::new(ObjectiveParams::new(1e-4, 0.08, 0.1), 0.2, 1e-4);
        params.max_iters = 60;
        params.tau_max = 2.0;
        let src = FixedMeasurements { mesh_id: m.id(), measurements: meas };
        let res = run_pop(&params, &m, NodalField::zeros(&m), &src).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1].cost.total <= w[0].cost.total);
        }
        assert!(res.trace.last().unwrap().cost.total < res.trace[0].cost.total);
        assert!(res.state.u.in_unit_box());
    }

    #[test]
    fn invalid_parameters() {
        let m = build_square_mesh(0.5).unwrap();
        let src = FixedMeasurements { mesh_id: m.id(), measurements: exact_setup(&m) };
        let params = PopParams::new(ObjectiveParams::new(1e-4, 0.1, 0.1), -1.0, 1e-4);
        assert!(run_pop(&params, &m, NodalField::zeros(&m), &src).is_err());
        let params = PopParams::new(ObjectiveParams::new(1e-4, 0.1, 0.1), 0.1, 1e-4);
        let bad = NodalField::constant(&m, 2.0);
        assert!(run_pop(&params, &m, bad, &src).is_err());
    }
}
