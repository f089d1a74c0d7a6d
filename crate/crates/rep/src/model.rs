//! Physical constants, equation of state, Lorentz algebra, and the
//! bidirectional primitive/conserved variable conversion.
//!
//! Primitive variables are the proper mass-energy density `rho` and the
//! radial velocity `v`. Conserved variables are the relativistic charge
//! density `D = n/sqrt(1 - v^2/c^2)` and the momentum density
//! `S = (p/c^2 + rho) v / (1 - v^2/c^2)`, where `n(rho)` is the charge
//! density and `p = rho^gamma` the pressure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Conserved densities below this value are snapped to exact vacuum.
pub const VACUUM_FLOOR_D: f64 = 1e-14;

/// Default acceptance tolerance for the conserved-to-primitive recovery.
pub const RECOVERY_TOL: f64 = 1e-12;

/// Iteration cap for the outer velocity root-find in the recovery.
pub const RECOVERY_MAX_ITERS: usize = 100;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid physical parameters: {0}")]
    InvalidParams(String),
    #[error("density must be non-negative, got {rho}")]
    NegativeDensity { rho: f64 },
    #[error("superluminal velocity |{v}| >= c = {c}")]
    Superluminal { v: f64, c: f64 },
    #[error("invalid state at cell {cell}: {reason}")]
    InvalidState { cell: usize, reason: String },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Why a conserved-to-primitive recovery gave up. Any of these is a
/// breakdown signal for the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryErrorKind {
    /// No subluminal velocity root brackets the momentum residual.
    NoRoot,
    /// The charge density target exceeds the supremum of n(rho).
    DensityOutOfRange,
    /// The iteration budget ran out before the residual tolerance was met.
    NotConverged,
}

impl std::fmt::Display for RecoveryErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NoRoot => write!(f, "no root in v \u{2208} (-c, c)"),
            Self::DensityOutOfRange => write!(f, "charge density target out of range"),
            Self::NotConverged => write!(f, "iteration budget exhausted"),
        }
    }
}

#[derive(Debug, Error)]
#[error("primitive recovery failed at cell {cell}: {kind}")]
pub struct RecoveryError {
    pub cell: usize,
    pub kind: RecoveryErrorKind,
}

/// The constants of the model: light speed, adiabatic index, the
/// sound-speed fraction of the blowup hypothesis, and the specific
/// internal energy at vacuum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub c: f64,
    pub gamma: f64,
    pub a: f64,
    pub e0: f64,
}

impl PhysicalParams {
    pub fn new(c: f64, gamma: f64, a: f64, e0: f64) -> Result<Self, ModelError> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(ModelError::InvalidParams(format!("c must be > 0, got {c}")));
        }
        if !(gamma > 1.0) || !gamma.is_finite() {
            return Err(ModelError::InvalidParams(format!(
                "gamma must be > 1, got {gamma}"
            )));
        }
        if !(a > 0.0 && a < 1.0) {
            return Err(ModelError::InvalidParams(format!(
                "a must lie in (0, 1), got {a}"
            )));
        }
        if !(e0 >= 0.0) || !e0.is_finite() {
            return Err(ModelError::InvalidParams(format!(
                "e0 must be >= 0, got {e0}"
            )));
        }
        Ok(Self { c, gamma, a, e0 })
    }

    /// Gamma-law pressure p = rho^gamma.
    pub fn pressure(&self, rho: f64) -> Result<f64, ModelError> {
        if rho < 0.0 {
            return Err(ModelError::NegativeDensity { rho });
        }
        Ok(rho.powf(self.gamma))
    }

    /// p'(rho) = gamma rho^(gamma-1), the squared sound speed.
    pub fn pressure_derivative(&self, rho: f64) -> Result<f64, ModelError> {
        if rho < 0.0 {
            return Err(ModelError::NegativeDensity { rho });
        }
        if rho == 0.0 {
            return Ok(0.0);
        }
        Ok(self.gamma * rho.powf(self.gamma - 1.0))
    }

    /// Whether p'(rho) < a c^2 holds strictly at this density.
    pub fn subcritical(&self, rho: f64) -> Result<bool, ModelError> {
        Ok(self.pressure_derivative(rho)? < self.a * self.c * self.c)
    }

    /// Charge density n(rho), the closed-form solution of
    /// dn/n = drho/(rho + rho^gamma/c^2) normalized so that
    /// n/rho -> 1/(1 + e0/c^2) at vacuum:
    ///
    ///   n = rho (1 + e0/c^2)^-1 (1 + rho^(gamma-1)/c^2)^(-1/(gamma-1))
    pub fn charge_density(&self, rho: f64) -> Result<f64, ModelError> {
        if rho < 0.0 {
            return Err(ModelError::NegativeDensity { rho });
        }
        if rho == 0.0 {
            return Ok(0.0);
        }
        let c2 = self.c * self.c;
        let gm1 = self.gamma - 1.0;
        let u = rho.powf(gm1) / c2;
        Ok(rho / (1.0 + self.e0 / c2) * (1.0 + u).powf(-1.0 / gm1))
    }

    /// Supremum of n(rho) as rho -> infinity; n never attains it.
    pub fn charge_density_sup(&self) -> f64 {
        let c2 = self.c * self.c;
        c2.powf(1.0 / (self.gamma - 1.0)) / (1.0 + self.e0 / c2)
    }

    /// q = p/c^2 + rho, the relativistic inertia density. Also equals
    /// n / (dn/drho).
    pub fn inertia(&self, rho: f64) -> Result<f64, ModelError> {
        Ok(self.pressure(rho)? / (self.c * self.c) + rho)
    }

    /// 1/sqrt(1 - v^2/c^2).
    pub fn lorentz_factor(&self, v: f64) -> Result<f64, ModelError> {
        if v.abs() >= self.c {
            return Err(ModelError::Superluminal { v, c: self.c });
        }
        Ok(1.0 / (1.0 - v * v / (self.c * self.c)).sqrt())
    }

    /// Solve n(rho) = target for rho by safeguarded Newton iteration.
    /// n is strictly increasing with dn/drho = n/q, so the iteration is
    /// bracketed and quadratically convergent. Returns `None` when the
    /// target is at or above the supremum of n.
    fn invert_charge_density(&self, target: f64) -> Option<f64> {
        if target == 0.0 {
            return Some(0.0);
        }
        if target < 0.0 || target >= self.charge_density_sup() {
            return None;
        }
        let c2 = self.c * self.c;
        // n(rho) <= rho/(1 + e0/c^2), so this is a lower bound for rho.
        let mut lo = target * (1.0 + self.e0 / c2);
        let mut hi = lo;
        let mut guard = 0;
        while self.charge_density(hi).unwrap() < target {
            hi *= 2.0;
            guard += 1;
            if guard > 4096 || !hi.is_finite() {
                return None;
            }
        }
        let mut rho = lo;
        for _ in 0..200 {
            let n = self.charge_density(rho).unwrap();
            let resid = n - target;
            if resid.abs() <= 1e-15 * target {
                return Some(rho);
            }
            if resid < 0.0 {
                lo = rho;
            } else {
                hi = rho;
            }
            // Newton step with dn/drho = n/q.
            let q = self.inertia(rho).unwrap();
            let mut next = rho - resid * q / n;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if next == rho {
                return Some(rho);
            }
            rho = next;
        }
        Some(rho)
    }
}

/// Uniform radial grid with cell centers r_i = (i + 1/2) dr, so no center
/// sits on the coordinate singularity r = 0. `r_support` is the initial
/// support radius R of the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub n_cells: usize,
    pub r_max: f64,
    pub r_support: f64,
}

impl RadialGrid {
    pub fn new(n_cells: usize, r_max: f64, r_support: f64) -> Result<Self, ModelError> {
        if n_cells == 0 {
            return Err(ModelError::InvalidGrid("n_cells must be positive".into()));
        }
        if !(r_support > 0.0) || !(r_max >= r_support) {
            return Err(ModelError::InvalidGrid(format!(
                "need r_max >= R > 0, got r_max = {r_max}, R = {r_support}"
            )));
        }
        Ok(Self {
            n_cells,
            r_max,
            r_support,
        })
    }

    pub fn dr(&self) -> f64 {
        self.r_max / self.n_cells as f64
    }

    /// Center of cell i.
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dr()
    }

    /// Edge k lies between cells k-1 and k; edge 0 is the origin.
    pub fn edge(&self, k: usize) -> f64 {
        k as f64 * self.dr()
    }

    /// Integral of r^2 over cell i (the shell volume over 4 pi).
    pub fn cell_volume(&self, i: usize) -> f64 {
        let a = self.edge(i);
        let b = self.edge(i + 1);
        (b * b * b - a * a * a) / 3.0
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_cells).map(|i| self.center(i))
    }
}

/// Per-cell (rho, v) on a radial grid. Construction enforces rho >= 0,
/// |v| < c, and the vacuum convention v = 0 wherever rho = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveState {
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
}

impl PrimitiveState {
    pub fn new(rho: Vec<f64>, v: Vec<f64>, params: &PhysicalParams) -> Result<Self, ModelError> {
        if rho.len() != v.len() {
            return Err(ModelError::InvalidState {
                cell: 0,
                reason: format!("rho has {} cells but v has {}", rho.len(), v.len()),
            });
        }
        for (i, (&r, &vi)) in rho.iter().zip(v.iter()).enumerate() {
            if !(r >= 0.0) {
                return Err(ModelError::InvalidState {
                    cell: i,
                    reason: format!("rho = {r} < 0"),
                });
            }
            if vi.abs() >= params.c {
                return Err(ModelError::Superluminal { v: vi, c: params.c });
            }
            if r == 0.0 && vi != 0.0 {
                return Err(ModelError::InvalidState {
                    cell: i,
                    reason: format!("vacuum cell carries v = {vi}"),
                });
            }
        }
        Ok(Self { rho, v })
    }

    pub fn vacuum(n_cells: usize) -> Self {
        Self {
            rho: vec![0.0; n_cells],
            v: vec![0.0; n_cells],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.rho.len()
    }
}

/// Per-cell (D, S) conserved densities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservedState {
    pub d: Vec<f64>,
    pub s: Vec<f64>,
}

impl ConservedState {
    pub fn vacuum(n_cells: usize) -> Self {
        Self {
            d: vec![0.0; n_cells],
            s: vec![0.0; n_cells],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.d.len()
    }
}

/// Map a single (rho, v) cell to (D, S).
pub fn prim_to_cons_cell(
    rho: f64,
    v: f64,
    params: &PhysicalParams,
) -> Result<(f64, f64), ModelError> {
    if rho == 0.0 {
        return Ok((0.0, 0.0));
    }
    let gamma_v = params.lorentz_factor(v)?;
    let n = params.charge_density(rho)?;
    let q = params.inertia(rho)?;
    Ok((n * gamma_v, q * v * gamma_v * gamma_v))
}

/// D = n Gamma, S = q v Gamma^2 per cell; vacuum cells map to (0, 0).
pub fn prim_to_cons(prim: &PrimitiveState, params: &PhysicalParams) -> ConservedState {
    let mut d = Vec::with_capacity(prim.n_cells());
    let mut s = Vec::with_capacity(prim.n_cells());
    for i in 0..prim.n_cells() {
        // State invariants guarantee the cell is physical.
        let (di, si) = prim_to_cons_cell(prim.rho[i], prim.v[i], params)
            .expect("primitive state invariants violated");
        d.push(di);
        s.push(si);
    }
    ConservedState { d, s }
}

/// The momentum density S(v) reachable from a fixed D at trial velocity v,
/// together with its v-derivative. Inverting n fixes rho = rho(v), giving
///
///   S(v) = q(rho) v Gamma^2,
///   dS/dv = q Gamma^2 [1 + (v Gamma/c)^2 (1 - p'(rho)/c^2)]
///
/// using drho/dv = -q v Gamma^2 / c^2 (a consequence of dn/drho = n/q).
/// Returns `None` when D/Gamma(v) is out of range for n.
fn momentum_at_trial_v(d: f64, v: f64, params: &PhysicalParams) -> Option<(f64, f64)> {
    let c2 = params.c * params.c;
    let gamma_v = params.lorentz_factor(v).ok()?;
    let rho = params.invert_charge_density(d / gamma_v)?;
    let q = params.inertia(rho).ok()?;
    let pp = params.pressure_derivative(rho).ok()?;
    let g2 = gamma_v * gamma_v;
    let s = q * v * g2;
    let ds = q * g2 * (1.0 + v * v * g2 / c2 * (1.0 - pp / c2));
    Some((s, ds))
}

/// Recover (rho, v) from a single (d, s) cell.
///
/// Outer 1D root-find in v on (-c, c): for each trial v the target charge
/// density D sqrt(1 - v^2/c^2) is inverted through the monotone n(rho),
/// then the momentum residual s - S(v) is driven to zero by Newton with a
/// bisection safeguard on a bracketing interval. The residual is driven to
/// machine precision relative to |s|; `tol` is the acceptance threshold on
/// the final componentwise round-trip error.
pub fn recover_cell(
    d: f64,
    s: f64,
    params: &PhysicalParams,
    tol: f64,
) -> Result<(f64, f64), RecoveryErrorKind> {
    if d <= VACUUM_FLOOR_D {
        return Ok((0.0, 0.0));
    }
    let c = params.c;
    if s == 0.0 {
        let rho = params
            .invert_charge_density(d)
            .ok_or(RecoveryErrorKind::DensityOutOfRange)?;
        return Ok((rho, 0.0));
    }

    let s_abs = s.abs();
    let sign = s.signum();

    // Residual in |v|. An infeasible trial (n target at or above the
    // supremum of n) behaves like S(v) = +infinity, i.e. a negative
    // residual; feasibility is monotone in v since D/Gamma(v) decreases.
    let residual = |v: f64| momentum_at_trial_v(d, v, params).map(|(sm, ds)| (s_abs - sm, -ds));
    let residual_sign = |v: f64| residual(v).map_or(-1.0, |(g, _)| if g > 0.0 { 1.0 } else { -1.0 });

    // Bracket the smallest root: scan a grid accumulating toward c and
    // take the first sign change. g(0) = |s| > 0 whenever v = 0 is
    // feasible, and g -> -infinity as v -> c, so a physical state always
    // produces a sign change on the scan.
    let mut bracket = None;
    let mut prev_v = 0.0;
    let mut prev_sign = residual_sign(0.0);
    for k in 1..=52 {
        let v = c * (1.0 - (0.5f64).powi(k));
        let sgn = residual_sign(v);
        if sgn != prev_sign {
            bracket = Some((prev_v, prev_sign, v));
            break;
        }
        prev_v = v;
        prev_sign = sgn;
    }
    let Some((mut lo, sign_lo, mut hi)) = bracket else {
        return Err(RecoveryErrorKind::NoRoot);
    };

    // Newton with bisection fallback on [lo, hi]; the residual keeps the
    // sign `sign_lo` on the lo side of the root.
    let mut v = 0.5 * (lo + hi);
    let mut converged = None;
    for _ in 0..RECOVERY_MAX_ITERS {
        match residual(v) {
            Some((g, dg)) => {
                if g.abs() <= 1e-15 * s_abs {
                    converged = Some(v);
                    break;
                }
                if (g > 0.0) == (sign_lo > 0.0) {
                    lo = v;
                } else {
                    hi = v;
                }
                let newton = v - g / dg;
                v = if newton.is_finite() && newton > lo && newton < hi {
                    newton
                } else {
                    0.5 * (lo + hi)
                };
            }
            None => {
                // Infeasible counts as the negative side.
                if sign_lo < 0.0 {
                    lo = v;
                } else {
                    hi = v;
                }
                v = 0.5 * (lo + hi);
            }
        }
        if hi - lo <= f64::EPSILON * c {
            converged = Some(v);
            break;
        }
    }
    let v = converged.ok_or(RecoveryErrorKind::NotConverged)?;

    let gamma_v = params
        .lorentz_factor(v)
        .map_err(|_| RecoveryErrorKind::NoRoot)?;
    let rho = params
        .invert_charge_density(d / gamma_v)
        .ok_or(RecoveryErrorKind::DensityOutOfRange)?;
    let v_signed = sign * v;

    // Acceptance check: the recovered state must reproduce the conserved
    // input componentwise within tol.
    let (d_back, s_back) =
        prim_to_cons_cell(rho, v_signed, params).map_err(|_| RecoveryErrorKind::NotConverged)?;
    if (d_back - d).abs() > tol * (1.0 + d.abs()) || (s_back - s).abs() > tol * (1.0 + s.abs()) {
        return Err(RecoveryErrorKind::NotConverged);
    }
    Ok((rho, v_signed))
}

/// Invert prim_to_cons for every cell. The error carries the first failing
/// cell index; the solver treats it as a breakdown signal.
pub fn cons_to_prim(
    cons: &ConservedState,
    params: &PhysicalParams,
    tol: f64,
) -> Result<PrimitiveState, RecoveryError> {
    use rayon::prelude::*;
    let cells: Result<Vec<(f64, f64)>, RecoveryError> = cons
        .d
        .par_iter()
        .zip(cons.s.par_iter())
        .enumerate()
        .map(|(cell, (&d, &s))| {
            recover_cell(d, s, params, tol).map_err(|kind| RecoveryError { cell, kind })
        })
        .collect();
    let cells = cells?;
    let (rho, v) = cells.into_iter().unzip();
    Ok(PrimitiveState { rho, v })
}
