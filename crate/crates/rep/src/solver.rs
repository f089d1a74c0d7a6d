//! Conservative finite-volume solver for the radial system
//!
//!   d/dt D + d/dr (D v) + 2 D v / r = 0,
//!   d/dt S + d/dr (S v + p) + 2 S v / r = 4 pi D phi_r,
//!
//! with local Lax-Friedrichs (Rusanov) interface fluxes and SSP-RK2 time
//! stepping. The equations are discretized on spherical shells, i.e. in
//! the divergence form d/dt (r^2 U) + d/dr (r^2 F) = r^2 Q, which turns
//! the geometric transport terms into the area factors of the flux
//! divergence; the shell-weighted total charge then telescopes to machine
//! precision while the support stays interior. The momentum geometric
//! remainder 2 p / r and the field source 4 pi D phi_r are evaluated at
//! cell centers.
//!
//! The field source identity: 4 pi n phi_r / sqrt(1 - v^2/c^2) equals
//! 4 pi D phi_r exactly, because D = n / sqrt(1 - v^2/c^2).

use crate::config::RunConfig;
use crate::field::{electric_field, FieldProfile};
use crate::model::{
    cons_to_prim, prim_to_cons, ConservedState, ModelError, PhysicalParams, PrimitiveState,
    RadialGrid, RecoveryError, RECOVERY_TOL, VACUUM_FLOOR_D,
};
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

/// Guard against division by zero in the all-vacuum CFL bound, in units
/// of c.
pub const LAMBDA_MIN_FRACTION: f64 = 1e-12;

/// Velocities at or beyond c (1 - SUPERLUMINAL_MARGIN) trigger breakdown.
pub const SUPERLUMINAL_MARGIN: f64 = 1e-9;

/// Time steps below DT_MIN_FRACTION * t_final trigger breakdown.
pub const DT_MIN_FRACTION: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("usage: {0}")]
    Usage(String),
}

/// One stored output state: recovered primitives, conserved fields, and
/// the electric field, all on cell centers.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub prim: PrimitiveState,
    pub cons: ConservedState,
    pub field: FieldProfile,
}

/// Time series of output states from a run.
#[derive(Debug, Clone)]
pub struct SimulationSeries {
    pub grid: RadialGrid,
    pub times: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub dt_history: Vec<f64>,
}

impl SimulationSeries {
    pub fn new(grid: RadialGrid) -> Self {
        Self {
            grid,
            times: Vec::new(),
            snapshots: Vec::new(),
            dt_history: Vec::new(),
        }
    }

    pub fn record(&mut self, t: f64, snapshot: Snapshot) {
        debug_assert!(self.times.last().map_or(t == 0.0, |&last| t > last));
        self.times.push(t);
        self.snapshots.push(snapshot);
    }

    /// Shell-weighted total charge of snapshot k.
    pub fn total_charge(&self, k: usize) -> f64 {
        total_charge(&self.snapshots[k].cons, &self.grid)
    }
}

/// Total charge as the sum of D_i V_i with V_i the exact r^2 cell moment;
/// this is the quantity the scheme conserves by construction.
pub fn total_charge(cons: &ConservedState, grid: &RadialGrid) -> f64 {
    cons.d
        .iter()
        .enumerate()
        .map(|(i, &d)| d * grid.cell_volume(i))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BreakdownCause {
    RecoveryFailure,
    Superluminal,
    RegularityViolation,
    DtCollapse,
}

/// First breakdown event of a run, or the absence of one.
#[derive(Debug, Clone, Serialize)]
pub struct BreakdownReport {
    pub occurred: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_breakdown: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<BreakdownCause>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell_index: Option<usize>,
}

impl BreakdownReport {
    pub fn none() -> Self {
        Self {
            occurred: false,
            t_breakdown: None,
            cause: None,
            cell_index: None,
        }
    }

    pub fn at(t: f64, cause: BreakdownCause, cell_index: Option<usize>) -> Self {
        Self {
            occurred: true,
            t_breakdown: Some(t),
            cause: Some(cause),
            cell_index,
        }
    }
}

/// Largest characteristic speed per cell by relativistic velocity
/// addition of |v| and the sound speed sqrt(p'(rho)); stays below c in
/// the subcritical regime.
pub fn signal_speed(prim: &PrimitiveState, params: &PhysicalParams) -> Vec<f64> {
    let c2 = params.c * params.c;
    prim.rho
        .iter()
        .zip(prim.v.iter())
        .map(|(&rho, &v)| {
            if rho == 0.0 && v == 0.0 {
                return 0.0;
            }
            let cs = params
                .pressure_derivative(rho)
                .expect("state invariants guarantee rho >= 0")
                .sqrt();
            (v.abs() + cs) / (1.0 + v.abs() * cs / c2)
        })
        .collect()
}

/// dt = cfl dr / max(lambda, lambda_min); the floor keeps the all-vacuum
/// case finite.
pub fn cfl_timestep(
    prim: &PrimitiveState,
    grid: &RadialGrid,
    params: &PhysicalParams,
    cfl: f64,
) -> f64 {
    debug_assert!(cfl > 0.0 && cfl < 1.0);
    let lambda_max = signal_speed(prim, params).into_iter().fold(0.0, f64::max);
    cfl * grid.dr() / lambda_max.max(LAMBDA_MIN_FRACTION * params.c)
}

/// Physical flux (D v, S v + p) of a cell state.
#[inline]
fn physical_flux(d: f64, s: f64, v: f64, p: f64) -> (f64, f64) {
    (d * v, s * v + p)
}

/// One forward-Euler stage on pre-recovered primitives and field.
pub(crate) fn euler_stage(
    cons: &ConservedState,
    prim: &PrimitiveState,
    field: &FieldProfile,
    grid: &RadialGrid,
    params: &PhysicalParams,
    dt: f64,
) -> ConservedState {
    let n = grid.n_cells;
    let dr = grid.dr();
    let lambda = signal_speed(prim, params);
    let pressure: Vec<f64> = prim
        .rho
        .iter()
        .map(|&rho| params.pressure(rho).expect("rho >= 0"))
        .collect();

    // Interface states: cell k-1 on the left, cell k on the right, with a
    // reflective (even rho, odd v) ghost at r = 0 and an outflow ghost at
    // r_max. Edge 0 has zero area, so its flux never contributes.
    let cell = |j: isize| -> (f64, f64, f64, f64, f64) {
        if j < 0 {
            (cons.d[0], -cons.s[0], -prim.v[0], pressure[0], lambda[0])
        } else if j as usize >= n {
            let m = n - 1;
            (cons.d[m], cons.s[m], prim.v[m], pressure[m], lambda[m])
        } else {
            let j = j as usize;
            (cons.d[j], cons.s[j], prim.v[j], pressure[j], lambda[j])
        }
    };

    // Rusanov fluxes at the n + 1 interfaces.
    let mut flux_d = vec![0.0; n + 1];
    let mut flux_s = vec![0.0; n + 1];
    for k in 0..=n {
        let (dl, sl, vl, pl, ll) = cell(k as isize - 1);
        let (dr_, sr, vr, pr, lr) = cell(k as isize);
        let (fdl, fsl) = physical_flux(dl, sl, vl, pl);
        let (fdr, fsr) = physical_flux(dr_, sr, vr, pr);
        let lam = ll.max(lr);
        flux_d[k] = 0.5 * (fdl + fdr) - 0.5 * lam * (dr_ - dl);
        flux_s[k] = 0.5 * (fsl + fsr) - 0.5 * lam * (sr - sl);
    }

    let mut d_new = Vec::with_capacity(n);
    let mut s_new = Vec::with_capacity(n);
    for i in 0..n {
        let vol = grid.cell_volume(i);
        let a_in = grid.edge(i) * grid.edge(i);
        let a_out = grid.edge(i + 1) * grid.edge(i + 1);
        let r = grid.center(i);
        let div_d = (a_out * flux_d[i + 1] - a_in * flux_d[i]) / vol;
        let div_s = (a_out * flux_s[i + 1] - a_in * flux_s[i]) / vol;
        // Geometric remainder 2 p / r and field source 4 pi D phi_r as
        // midpoint cell integrals over the exact shell volume.
        let src_s =
            (2.0 * r * pressure[i] + 4.0 * PI * r * r * cons.d[i] * field.phi_r[i]) * dr / vol;
        d_new.push(cons.d[i] - dt * div_d);
        s_new.push(cons.s[i] - dt * div_s + dt * src_s);
    }

    let mut out = ConservedState { d: d_new, s: s_new };
    apply_vacuum_floor(&mut out);
    out
}

/// Snap sub-floor cells to exact vacuum.
pub fn apply_vacuum_floor(cons: &mut ConservedState) {
    for i in 0..cons.n_cells() {
        if cons.d[i] < VACUUM_FLOOR_D {
            cons.d[i] = 0.0;
            cons.s[i] = 0.0;
        }
    }
}

/// One forward-Euler stage from conserved data: recover primitives,
/// compute the field, update. Recovery failure propagates with the cell
/// index; the caller treats it as breakdown.
pub fn step(
    cons: &ConservedState,
    grid: &RadialGrid,
    params: &PhysicalParams,
    dt: f64,
) -> Result<ConservedState, RecoveryError> {
    let prim = cons_to_prim(cons, params, RECOVERY_TOL)?;
    let field = electric_field(&cons.d, grid);
    Ok(euler_stage(cons, &prim, &field, grid, params, dt))
}

/// Second-order SSP Runge-Kutta: the average of the identity and two
/// Euler stages. Identically-vacuum data is a bit-exact fixed point.
pub fn time_integrate(
    cons: &ConservedState,
    grid: &RadialGrid,
    params: &PhysicalParams,
    dt: f64,
) -> Result<ConservedState, RecoveryError> {
    let stage1 = step(cons, grid, params, dt)?;
    let stage2 = step(&stage1, grid, params, dt)?;
    let mut out = ConservedState {
        d: cons
            .d
            .iter()
            .zip(stage2.d.iter())
            .map(|(&a, &b)| 0.5 * (a + b))
            .collect(),
        s: cons
            .s
            .iter()
            .zip(stage2.s.iter())
            .map(|(&a, &b)| 0.5 * (a + b))
            .collect(),
    };
    apply_vacuum_floor(&mut out);
    Ok(out)
}

/// The regularity budget of a state: maxima of |(v^2)_r| and |(p')_r|
/// against c^2.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegularityIndicator {
    pub max_dv2_dr: f64,
    pub argmax_dv2: usize,
    pub max_dpprime_dr: f64,
    pub argmax_dpprime: usize,
    pub regular: bool,
}

/// Max |d/dr| over cells: central differences at interior cells,
/// one-sided three-point at the boundaries, all second order.
fn derivative_max(values: &[f64], dr: f64) -> (f64, usize) {
    let n = values.len();
    let deriv = |i: usize| -> f64 {
        if n < 2 {
            0.0
        } else if i == 0 {
            if n >= 3 {
                (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dr)
            } else {
                (values[1] - values[0]) / dr
            }
        } else if i == n - 1 {
            if n >= 3 {
                (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dr)
            } else {
                (values[n - 1] - values[n - 2]) / dr
            }
        } else {
            (values[i + 1] - values[i - 1]) / (2.0 * dr)
        }
    };
    let mut max = 0.0;
    let mut arg = 0;
    for i in 0..n {
        let d = deriv(i).abs();
        if d > max {
            max = d;
            arg = i;
        }
    }
    (max, arg)
}

/// Evaluate the regularity conditions |(v^2)_r| <= c^2 and
/// |(p')_r| <= c^2 on the discrete state.
pub fn regularity_indicator(
    prim: &PrimitiveState,
    grid: &RadialGrid,
    params: &PhysicalParams,
) -> RegularityIndicator {
    let v2: Vec<f64> = prim.v.iter().map(|&v| v * v).collect();
    let pp: Vec<f64> = prim
        .rho
        .iter()
        .map(|&rho| params.pressure_derivative(rho).expect("rho >= 0"))
        .collect();
    let dr = grid.dr();
    let (max_dv2_dr, argmax_dv2) = derivative_max(&v2, dr);
    let (max_dpprime_dr, argmax_dpprime) = derivative_max(&pp, dr);
    let c2 = params.c * params.c;
    RegularityIndicator {
        max_dv2_dr,
        argmax_dv2,
        max_dpprime_dr,
        argmax_dpprime,
        regular: max_dv2_dr <= c2 && max_dpprime_dr <= c2,
    }
}

/// Residual of the non-vacuum velocity equation
///
///   v_t + (1 - p'/c^2)/(1 - p' v^2/c^4) v v_r
///       + (1 - v^2/c^2)^2 p' / (q (1 - p' v^2/c^4)) rho_r
///       - 4 pi n (1 - v^2/c^2)^(3/2) phi_r / (q (1 - p' v^2/c^4))
///       - 2 (1 - v^2/c^2) v^2 p' / (c^2 r (1 - p' v^2/c^4))
///
/// between consecutive snapshots: v_t by time differencing, spatial terms
/// time-centered with central differences, maximum over non-vacuum
/// interior cells. One scalar per snapshot pair; pairs with no eligible
/// cells report 0.
pub fn velocity_equation_residual(
    series: &SimulationSeries,
    params: &PhysicalParams,
) -> Result<Vec<f64>, SolverError> {
    if series.snapshots.len() < 2 {
        return Err(SolverError::Usage(
            "velocity-equation residual needs at least two snapshots".into(),
        ));
    }
    let grid = &series.grid;
    let n = grid.n_cells;
    let dr = grid.dr();
    let c2 = params.c * params.c;

    // Spatial part of the equation at one interior cell of one snapshot.
    let spatial = |snap: &Snapshot, i: usize| -> f64 {
        let rho = snap.prim.rho[i];
        let v = snap.prim.v[i];
        let pp = params.pressure_derivative(rho).expect("rho >= 0");
        let q = params.inertia(rho).expect("rho >= 0");
        let v_r = (snap.prim.v[i + 1] - snap.prim.v[i - 1]) / (2.0 * dr);
        let rho_r = (snap.prim.rho[i + 1] - snap.prim.rho[i - 1]) / (2.0 * dr);
        let one_m_b = 1.0 - v * v / c2;
        let denom = 1.0 - pp * v * v / (c2 * c2);
        let r = grid.center(i);
        // n/q in the closed form valid down to vacuum.
        let n_over_q =
            1.0 / ((1.0 + params.e0 / c2) * (rho.powf(params.gamma - 1.0) / c2 + 1.0));
        (1.0 - pp / c2) / denom * v * v_r + one_m_b * one_m_b * pp / (q * denom) * rho_r
            - 4.0 * PI * n_over_q * one_m_b.powf(1.5) * snap.field.phi_r[i] / denom
            - 2.0 * one_m_b * v * v * (pp / c2) / (r * denom)
    };

    let mut out = Vec::with_capacity(series.snapshots.len() - 1);
    for k in 0..series.snapshots.len() - 1 {
        let (s0, s1) = (&series.snapshots[k], &series.snapshots[k + 1]);
        let dt = series.times[k + 1] - series.times[k];
        let mut worst = 0.0f64;
        for i in 1..n.saturating_sub(1) {
            if s0.prim.rho[i] == 0.0 || s1.prim.rho[i] == 0.0 {
                continue;
            }
            let v_t = (s1.prim.v[i] - s0.prim.v[i]) / dt;
            let resid = v_t + 0.5 * (spatial(s0, i) + spatial(s1, i));
            worst = worst.max(resid.abs());
        }
        out.push(worst);
    }
    Ok(out)
}

/// Integrate the configured problem from t = 0 to t_final or breakdown,
/// recording snapshots at the configured output cadence (the initial,
/// final, and breakdown states are always recorded). Breakdown causes:
/// primitive recovery failure, any |v| >= c (1 - 1e-9), loss of the
/// regularity conditions, or collapse of the CFL time step below
/// 1e-12 t_final.
pub fn run(config: &RunConfig) -> Result<(SimulationSeries, BreakdownReport), SolverError> {
    let params = config.physical_params()?;
    let grid = config.radial_grid()?;
    let prim0 = config.initial_state(&grid, &params)?;
    let settings = config.run_settings();
    let t_final = settings.t_final;
    let dt_min = DT_MIN_FRACTION * t_final;
    let out_interval = config.output_interval();

    let mut cons = prim_to_cons(&prim0, &params);
    apply_vacuum_floor(&mut cons);

    let snapshot_of = |cons: &ConservedState| -> Result<Snapshot, RecoveryError> {
        let prim = cons_to_prim(cons, &params, RECOVERY_TOL)?;
        let field = electric_field(&cons.d, &grid);
        Ok(Snapshot {
            prim,
            cons: cons.clone(),
            field,
        })
    };

    let mut series = SimulationSeries::new(grid);
    let mut t = 0.0;
    let mut next_out = out_interval;

    let mut current = match snapshot_of(&cons) {
        Ok(s) => s,
        Err(e) => {
            return Ok((
                series,
                BreakdownReport::at(0.0, BreakdownCause::RecoveryFailure, Some(e.cell)),
            ));
        }
    };
    series.record(0.0, current.clone());

    let breakdown = loop {
        // Breakdown checks on the current state at time t.
        let guard = params.c * (1.0 - SUPERLUMINAL_MARGIN);
        if let Some(cell) = current.prim.v.iter().position(|&v| v.abs() >= guard) {
            break Some(BreakdownReport::at(t, BreakdownCause::Superluminal, Some(cell)));
        }
        let reg = regularity_indicator(&current.prim, &grid, &params);
        if !reg.regular {
            let c2 = params.c * params.c;
            let cell = if reg.max_dv2_dr > c2 {
                reg.argmax_dv2
            } else {
                reg.argmax_dpprime
            };
            break Some(BreakdownReport::at(
                t,
                BreakdownCause::RegularityViolation,
                Some(cell),
            ));
        }

        if t >= t_final {
            break None;
        }

        let dt_cfl = cfl_timestep(&current.prim, &grid, &params, settings.cfl);
        if dt_cfl < dt_min {
            break Some(BreakdownReport::at(t, BreakdownCause::DtCollapse, None));
        }
        let dt = dt_cfl.min(t_final - t);

        cons = match time_integrate(&cons, &grid, &params, dt) {
            Ok(next) => next,
            Err(e) => {
                break Some(BreakdownReport::at(
                    t + dt,
                    BreakdownCause::RecoveryFailure,
                    Some(e.cell),
                ));
            }
        };
        t += dt;
        series.dt_history.push(dt);

        current = match snapshot_of(&cons) {
            Ok(s) => s,
            Err(e) => {
                break Some(BreakdownReport::at(
                    t,
                    BreakdownCause::RecoveryFailure,
                    Some(e.cell),
                ));
            }
        };
        if t + 1e-12 * t_final >= next_out || t >= t_final {
            series.record(t, current.clone());
            while next_out <= t + 1e-12 * t_final {
                next_out += out_interval;
            }
        }
    };

    // Make sure the terminal state is archived even off-cadence.
    if series.times.last().copied() != Some(t) {
        series.record(t, current);
    }

    Ok((series, breakdown.unwrap_or_else(BreakdownReport::none)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(c: f64, gamma: f64, a: f64) -> PhysicalParams {
        PhysicalParams::new(c, gamma, a, 0.0).unwrap()
    }

    fn ball_state(
        grid: &RadialGrid,
        p: &PhysicalParams,
        amp: f64,
        vmax: f64,
        m: f64,
    ) -> PrimitiveState {
        let r_sup = grid.r_support;
        let (rho, v): (Vec<f64>, Vec<f64>) = grid
            .centers()
            .map(|r| {
                let x = r / r_sup;
                let bump = (1.0 - x * x).max(0.0).powf(m);
                (amp * bump, vmax * x * bump)
            })
            .unzip();
        PrimitiveState::new(rho, v, p).unwrap()
    }

    #[test]
    fn signal_speed_examples() {
        let p = params(1.0, 2.0, 0.5);
        let g = RadialGrid::new(3, 1.0, 0.5).unwrap();
        let _ = g;
        // Vacuum cell, rest cell with p' = 0.25 c^2, and moving cell with
        // c_s = 0.5 c at v = 0.6 c.
        let rho_at = |pp: f64| pp / 2.0; // gamma = 2: p' = 2 rho
        let prim = PrimitiveState::new(
            vec![0.0, rho_at(0.25), rho_at(0.25)],
            vec![0.0, 0.0, 0.6],
            &p,
        )
        .unwrap();
        let lam = signal_speed(&prim, &p);
        assert_eq!(lam[0], 0.0);
        assert_relative_eq!(lam[1], 0.5, max_relative = 1e-14);
        assert_relative_eq!(lam[2], 1.1 / 1.3, max_relative = 1e-14);
        assert!(lam.iter().all(|&l| l < p.c));
    }

    #[test]
    fn cfl_examples() {
        let p = params(1.0, 2.0, 0.5);
        let g = RadialGrid::new(100, 1.0, 0.5).unwrap();
        // All-vacuum: guarded, finite, large.
        let vac = PrimitiveState::vacuum(100);
        let dt = cfl_timestep(&vac, &g, &p, 0.4);
        assert!(dt.is_finite() && dt > 1e6);
        // max lambda = 0.5 c with dr = 0.01 and cfl 0.4 gives 0.008.
        let prim = PrimitiveState::new(vec![0.125; 100], vec![0.0; 100], &p).unwrap();
        assert_relative_eq!(cfl_timestep(&prim, &g, &p, 0.4), 0.008, max_relative = 1e-12);
        // Doubling n_cells halves dt.
        let g2 = RadialGrid::new(200, 1.0, 0.5).unwrap();
        let prim2 = PrimitiveState::new(vec![0.125; 200], vec![0.0; 200], &p).unwrap();
        assert_relative_eq!(
            cfl_timestep(&prim2, &g2, &p, 0.4),
            0.004,
            max_relative = 1e-12
        );
    }

    #[test]
    fn vacuum_is_a_bitwise_fixed_point() {
        let p = params(1.0, 2.0, 0.5);
        let g = RadialGrid::new(64, 2.0, 1.0).unwrap();
        let vac = ConservedState::vacuum(64);
        let out = step(&vac, &g, &p, 0.1).unwrap();
        assert_eq!(out, vac);
        let out = time_integrate(&vac, &g, &p, 0.1).unwrap();
        assert_eq!(out, vac);
    }

    #[test]
    fn flat_interior_is_static_without_field() {
        // Uniform ball with v = 0 and the field switched off: the flux
        // area expansion balances the 2 p / r remainder exactly, so only
        // cells near the support edge change.
        let p = params(1.0, 2.0, 0.5);
        let g = RadialGrid::new(100, 2.0, 1.0).unwrap();
        let rho: Vec<f64> = g.centers().map(|r| if r < 1.0 { 0.1 } else { 0.0 }).collect();
        let prim = PrimitiveState::new(rho, vec![0.0; 100], &p).unwrap();
        let cons = prim_to_cons(&prim, &p);
        let no_field = FieldProfile::vacuum(100);
        let dt = 1e-3;
        let out = euler_stage(&cons, &prim, &no_field, &g, &p, dt);
        for i in 0..100 {
            let r = g.center(i);
            if r < 1.0 - 2.0 * g.dr() {
                assert!(
                    (out.d[i] - cons.d[i]).abs() <= 1e-15 * cons.d[i].abs().max(1.0),
                    "interior D moved at cell {i}"
                );
                assert!(
                    out.s[i].abs() <= 1e-13 * p.pressure(0.1).unwrap(),
                    "interior S moved at cell {i}: {}",
                    out.s[i]
                );
            }
        }
    }

    #[test]
    fn total_charge_is_conserved_per_step() {
        let p = params(1.0, 2.0, 0.5);
        let g = RadialGrid::new(200, 2.0, 1.0).unwrap();
        let prim = ball_state(&g, &p, 0.02, 0.0, 2.0);
        let mut cons = prim_to_cons(&prim, &p);
        apply_vacuum_floor(&mut cons);
        let q0 = total_charge(&cons, &g);
        let mut u = cons;
        for _ in 0..50 {
            let dt = {
                let prim = cons_to_prim(&u, &p, RECOVERY_TOL).unwrap();
                cfl_timestep(&prim, &g, &p, 0.4)
            };
            u = time_integrate(&u, &g, &p, dt).unwrap();
            let q = total_charge(&u, &g);
            assert!(
                ((q - q0) / q0).abs() < 1e-12,
                "charge drifted to relative {}",
                (q - q0) / q0
            );
            assert!(u.d.iter().all(|&d| d >= 0.0), "negative charge density");
        }
    }

    #[test]
    fn rk2_matches_euler_to_second_order() {
        let p = params(1.0, 2.0, 0.5);
        let g = RadialGrid::new(100, 2.0, 1.0).unwrap();
        let prim = ball_state(&g, &p, 0.02, 0.05, 2.0);
        let mut cons = prim_to_cons(&prim, &p);
        apply_vacuum_floor(&mut cons);
        let norm = |a: &ConservedState, b: &ConservedState| -> f64 {
            a.d.iter()
                .zip(b.d.iter())
                .chain(a.s.iter().zip(b.s.iter()))
                .map(|(&x, &y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        let diff_at = |dt: f64| -> f64 {
            let rk2 = time_integrate(&cons, &g, &p, dt).unwrap();
            let euler = step(&cons, &g, &p, dt).unwrap();
            norm(&rk2, &euler)
        };
        let d1 = diff_at(2e-3);
        let d2 = diff_at(1e-3);
        // RK2 - Euler = O(dt^2): halving dt should shrink the gap ~4x.
        assert!(d1 / d2 > 3.0, "ratio {} (d1 = {d1}, d2 = {d2})", d1 / d2);
    }

    #[test]
    fn grid_refinement_self_convergence() {
        let p = params(1.0, 2.0, 0.5);
        let t_end = 0.05;
        let solve = |n: usize| -> (RadialGrid, ConservedState) {
            let g = RadialGrid::new(n, 2.0, 1.0).unwrap();
            let prim = ball_state(&g, &p, 0.02, 0.05, 2.0);
            let mut u = prim_to_cons(&prim, &p);
            apply_vacuum_floor(&mut u);
            let mut t = 0.0;
            while t < t_end {
                let prim = cons_to_prim(&u, &p, RECOVERY_TOL).unwrap();
                let dt = cfl_timestep(&prim, &g, &p, 0.3).min(t_end - t);
                u = time_integrate(&u, &g, &p, dt).unwrap();
                t += dt;
            }
            (g, u)
        };
        let (_, u1) = solve(50);
        let (_, u2) = solve(100);
        let (_, u3) = solve(200);
        // Compare coarse cells against the mean of the matching fine pair.
        let coarsen_err = |coarse: &ConservedState, fine: &ConservedState| -> f64 {
            coarse
                .d
                .iter()
                .enumerate()
                .map(|(i, &dc)| (dc - 0.5 * (fine.d[2 * i] + fine.d[2 * i + 1])).abs())
                .fold(0.0, f64::max)
        };
        let e1 = coarsen_err(&u1, &u2);
        let e2 = coarsen_err(&u2, &u3);
        let order = (e1 / e2).log2();
        assert!(order >= 1.0, "observed order {order} (e1 = {e1}, e2 = {e2})");
    }

    #[test]
    fn regularity_indicator_examples() {
        let p = params(1.0, 2.0, 0.5);
        let g = RadialGrid::new(400, 1.0, 0.5).unwrap();
        // Vacuum: both maxima zero, regular.
        let vac = PrimitiveState::vacuum(400);
        let reg = regularity_indicator(&vac, &g, &p);
        assert_eq!(reg.max_dv2_dr, 0.0);
        assert_eq!(reg.max_dpprime_dr, 0.0);
        assert!(reg.regular);

        // v(r) = c r / (2 r_max): (v^2)' = c^2 r / (2 r_max^2), maximal at
        // r = r_max where it equals c^2 / (2 r_max).
        let r_max = g.r_max;
        let rho = vec![0.01; 400];
        let v: Vec<f64> = g.centers().map(|r| p.c * r / (2.0 * r_max)).collect();
        let prim = PrimitiveState::new(rho, v, &p).unwrap();
        let reg = regularity_indicator(&prim, &g, &p);
        let expect = p.c * p.c / (2.0 * r_max);
        assert_relative_eq!(reg.max_dv2_dr, expect, max_relative = 1e-4);
        assert!(reg.regular);

        // A single-cell spike in v^2 beyond c^2 flips the flag.
        let mut v_bad: Vec<f64> = vec![0.0; 400];
        v_bad[200] = 0.9;
        let mut rho_bad = vec![0.01; 400];
        rho_bad[200] = 0.01;
        let prim_bad = PrimitiveState::new(rho_bad, v_bad, &p).unwrap();
        let reg = regularity_indicator(&prim_bad, &g, &p);
        assert!(!reg.regular);
        assert!(reg.max_dv2_dr > p.c * p.c);
    }

    #[test]
    fn residual_requires_two_snapshots() {
        let g = RadialGrid::new(8, 1.0, 0.5).unwrap();
        let series = SimulationSeries::new(g);
        let p = params(1.0, 2.0, 0.5);
        assert!(matches!(
            velocity_equation_residual(&series, &p),
            Err(SolverError::Usage(_))
        ));
    }

    #[test]
    fn residual_vacuum_series_reports_zero() {
        let p = params(1.0, 2.0, 0.5);
        let g = RadialGrid::new(16, 1.0, 0.5).unwrap();
        let mut series = SimulationSeries::new(g);
        let snap = Snapshot {
            prim: PrimitiveState::vacuum(16),
            cons: ConservedState::vacuum(16),
            field: FieldProfile::vacuum(16),
        };
        series.record(0.0, snap.clone());
        series.record(1.0, snap);
        let res = velocity_equation_residual(&series, &p).unwrap();
        assert_eq!(res, vec![0.0]);
    }

    #[test]
    fn residual_captures_field_driven_acceleration() {
        // Uniform ball at rest: in the flat interior every term vanishes
        // except the field term, so the residual measures how well v_t
        // after one step matches the field-driven acceleration.
        let p = params(1.0, 2.0, 0.5);
        let g = RadialGrid::new(200, 2.0, 1.0).unwrap();
        let rho: Vec<f64> = g.centers().map(|r| if r < 1.0 { 0.05 } else { 0.0 }).collect();
        let prim = PrimitiveState::new(rho, vec![0.0; 200], &p).unwrap();
        let mut cons = prim_to_cons(&prim, &p);
        apply_vacuum_floor(&mut cons);
        let snapshot = |u: &ConservedState| Snapshot {
            prim: cons_to_prim(u, &p, RECOVERY_TOL).unwrap(),
            cons: u.clone(),
            field: electric_field(&u.d, &g),
        };
        let s0 = snapshot(&cons);
        let dt = 1e-4;
        let u1 = time_integrate(&cons, &g, &p, dt).unwrap();
        let s1 = snapshot(&u1);
        // Field acceleration scale in the interior.
        let field_scale = s0
            .field
            .phi_r
            .iter()
            .zip(s0.prim.rho.iter())
            .filter(|(_, &rho)| rho > 0.0)
            .map(|(&phi, &rho)| {
                let q = p.inertia(rho).unwrap();
                let n = p.charge_density(rho).unwrap();
                4.0 * PI * n * phi / q
            })
            .fold(0.0, f64::max);
        let mut series = SimulationSeries::new(g);
        series.record(0.0, s0);
        series.record(dt, s1);
        let res = velocity_equation_residual(&series, &p).unwrap()[0];
        assert!(field_scale > 0.0);
        assert!(
            res < 0.05 * field_scale,
            "residual {res} vs field scale {field_scale}"
        );
    }
}
