//! Finite-time blowup certificate: the constant C, the quadrature
//! constants B1 and B2, the functional H(t) = integral_0^R f(r) v(t,r) dr
//! for a strictly increasing testing function f vanishing at 0, the
//! criterion H(0) > sqrt(2 B1 B2), the predicted blowup time
//! T = 2 B1 H(0) / (H(0)^2 - 2 B1 B2), and the Riccati lower bound that a
//! solution satisfying the criterion must stay above while it remains
//! regular.

use crate::model::{PhysicalParams, PrimitiveState, RadialGrid};
use crate::solver::{regularity_indicator, SimulationSeries};
use serde::Serialize;
use thiserror::Error;

/// Sample count used to validate testing functions at construction.
const VALIDATION_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error("invalid testing function: {0}")]
    InvalidTestingFunction(String),
    #[error(
        "hypothesis violation at cell {cell}: p'(rho_0) = {pprime} >= a c^2 = {bound}"
    )]
    HypothesisViolation { cell: usize, pprime: f64, bound: f64 },
    #[error("certificate criterion does not hold; no blowup time is predicted")]
    CriterionNotSatisfied,
    #[error("t = {t} is outside [0, T) with T = {t_pred}; the bound has diverged")]
    OutOfDomain { t: f64, t_pred: f64 },
    #[error("quadrature needs quad_n >= 2, got {0}")]
    BadQuadrature(usize),
}

type Scalar = dyn Fn(f64) -> f64 + Send + Sync;

/// A testing-function weight: strictly increasing, C^1, vanishing at 0.
/// Construction samples f and f' densely on [0, r_end] to enforce the
/// hypotheses.
pub struct TestingFunction {
    eval: Box<Scalar>,
    deriv: Box<Scalar>,
    pub label: String,
}

impl std::fmt::Debug for TestingFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestingFunction")
            .field("label", &self.label)
            .finish()
    }
}

impl TestingFunction {
    pub fn new(
        label: impl Into<String>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        deriv: impl Fn(f64) -> f64 + Send + Sync + 'static,
        r_end: f64,
    ) -> Result<Self, CertificateError> {
        let label = label.into();
        if !(r_end > 0.0) {
            return Err(CertificateError::InvalidTestingFunction(format!(
                "validation interval must be positive, got r_end = {r_end}"
            )));
        }
        let f0 = eval(0.0);
        if f0.abs() > 1e-12 * eval(r_end).abs().max(1.0) {
            return Err(CertificateError::InvalidTestingFunction(format!(
                "f(0) = {f0} must vanish"
            )));
        }
        for k in 1..=VALIDATION_SAMPLES {
            let r = r_end * k as f64 / VALIDATION_SAMPLES as f64;
            let d = deriv(r);
            if !(d > 0.0) || !d.is_finite() {
                return Err(CertificateError::InvalidTestingFunction(format!(
                    "f'({r}) = {d} is not strictly positive"
                )));
            }
            if !eval(r).is_finite() {
                return Err(CertificateError::InvalidTestingFunction(format!(
                    "f({r}) is not finite"
                )));
            }
        }
        Ok(Self {
            eval: Box::new(eval),
            deriv: Box::new(deriv),
            label,
        })
    }

    /// f(r) = r^k for k in {1, 2, 3}.
    pub fn power(k: u32, r_end: f64) -> Result<Self, CertificateError> {
        if !(1..=3).contains(&k) {
            return Err(CertificateError::InvalidTestingFunction(format!(
                "power testing functions cover k in {{1, 2, 3}}, got {k}"
            )));
        }
        let ki = k as i32;
        Self::new(
            format!("r^{k}"),
            move |r: f64| r.powi(ki),
            move |r: f64| ki as f64 * r.powi(ki - 1),
            r_end,
        )
    }

    /// f(r) = sin(pi r / (2 r_cut)); needs r_cut > r_end so that f' stays
    /// strictly positive up to the support radius.
    pub fn sine(r_cut: f64, r_end: f64) -> Result<Self, CertificateError> {
        if !(r_cut > 0.0) {
            return Err(CertificateError::InvalidTestingFunction(format!(
                "sine testing function needs r_cut > 0, got {r_cut}"
            )));
        }
        let w = std::f64::consts::PI / (2.0 * r_cut);
        Self::new(
            format!("sin(pi r/(2*{r_cut}))"),
            move |r: f64| (w * r).sin(),
            move |r: f64| w * (w * r).cos(),
            r_end,
        )
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.eval)(r)
    }

    pub fn deriv(&self, r: f64) -> f64 {
        (self.deriv)(r)
    }
}

/// Everything the blowup theorem produces for one (f, initial data) pair.
#[derive(Debug, Clone, Serialize)]
pub struct BlowupCertificate {
    pub c_const: f64,
    pub b1: f64,
    pub b2: f64,
    pub h0: f64,
    pub threshold: f64,
    pub criterion: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_pred: Option<f64>,
}

/// C = c^2 (gamma + a - gamma a + 9) / (2 (gamma - 1)(1 - a)^2), checked
/// against its two-term decomposition
/// c^2/(2(1-a)) + 5 c^2/((gamma - 1)(1 - a)^2) to 1e-12 relative.
pub fn constant_c(params: &PhysicalParams) -> f64 {
    let (c, g, a) = (params.c, params.gamma, params.a);
    let closed = c * c * (g + a - g * a + 9.0) / (2.0 * (g - 1.0) * (1.0 - a) * (1.0 - a));
    let decomposed = constant_c_decomposed(params);
    assert!(
        (closed - decomposed).abs() <= 1e-12 * closed.abs(),
        "C formula mismatch: {closed} vs {decomposed}"
    );
    closed
}

/// The proof's two-term form of C.
pub fn constant_c_decomposed(params: &PhysicalParams) -> f64 {
    let (c, g, a) = (params.c, params.gamma, params.a);
    c * c / (2.0 * (1.0 - a)) + 5.0 * c * c / ((g - 1.0) * (1.0 - a) * (1.0 - a))
}

/// Composite Simpson quadrature over [0, r_end] with quad_n subintervals
/// (rounded up to even).
fn simpson(
    integrand: impl Fn(f64) -> Result<f64, CertificateError>,
    r_end: f64,
    quad_n: usize,
) -> Result<f64, CertificateError> {
    if quad_n < 2 {
        return Err(CertificateError::BadQuadrature(quad_n));
    }
    let n = quad_n + quad_n % 2;
    let h = r_end / n as f64;
    let mut acc = integrand(0.0)? + integrand(r_end)?;
    for j in 1..n {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(j as f64 * h)?;
    }
    Ok(acc * h / 3.0)
}

/// B1 = integral_0^R f^2/f' dr by composite Simpson; the integrand's
/// r -> 0 limit is 0 because f vanishes at 0 while f'(0) > 0.
pub fn b1(f: &TestingFunction, r_support: f64, quad_n: usize) -> Result<f64, CertificateError> {
    simpson(
        |r| {
            if r == 0.0 {
                return Ok(0.0);
            }
            let d = f.deriv(r);
            if !(d > 0.0) {
                return Err(CertificateError::InvalidTestingFunction(format!(
                    "f'({r}) = {d} is not strictly positive"
                )));
            }
            let v = f.eval(r);
            Ok(v * v / d)
        },
        r_support,
        quad_n,
    )
}

/// B2 = C * integral_0^R f dr by composite Simpson.
pub fn b2(
    f: &TestingFunction,
    r_support: f64,
    c_const: f64,
    quad_n: usize,
) -> Result<f64, CertificateError> {
    Ok(c_const * simpson(|r| Ok(f.eval(r)), r_support, quad_n)?)
}

/// H = integral_0^R f(r) v(r) dr by the midpoint rule on the cells whose
/// centers lie inside the support radius (the velocity data lives there).
pub fn h_functional(f: &TestingFunction, v: &[f64], grid: &RadialGrid) -> f64 {
    let dr = grid.dr();
    let mut acc = 0.0;
    for (i, &vi) in v.iter().enumerate() {
        let r = grid.center(i);
        if r <= grid.r_support {
            acc += f.eval(r) * vi * dr;
        }
    }
    acc
}

/// Assemble the certificate from its four ingredients. The criterion is
/// the strict inequality H(0) > sqrt(2 B1 B2); equality does not certify.
pub fn assemble(c_const: f64, b1: f64, b2: f64, h0: f64) -> BlowupCertificate {
    let threshold = (2.0 * b1 * b2).sqrt();
    let criterion = h0 > threshold;
    let t_pred = criterion.then(|| 2.0 * b1 * h0 / (h0 * h0 - 2.0 * b1 * b2));
    BlowupCertificate {
        c_const,
        b1,
        b2,
        h0,
        threshold,
        criterion,
        t_pred,
    }
}

/// Evaluate the blowup certificate for initial data on a grid. The
/// theorem's hypothesis p'(rho_0) < a c^2 is checked on every cell first.
pub fn certify(
    f: &TestingFunction,
    prim0: &PrimitiveState,
    grid: &RadialGrid,
    params: &PhysicalParams,
    quad_n: usize,
) -> Result<BlowupCertificate, CertificateError> {
    let bound = params.a * params.c * params.c;
    for (cell, &rho) in prim0.rho.iter().enumerate() {
        let pprime = params.pressure_derivative(rho).expect("rho >= 0");
        if pprime >= bound {
            return Err(CertificateError::HypothesisViolation { cell, pprime, bound });
        }
    }
    let c_const = constant_c(params);
    let b1 = b1(f, grid.r_support, quad_n)?;
    let b2 = b2(f, grid.r_support, c_const, quad_n)?;
    let h0 = h_functional(f, &prim0.v, grid);
    Ok(assemble(c_const, b1, b2, h0))
}

/// The Riccati comparison bound
///
///   H(t) >= ( 1/H(0) - (H(0)^2 - 2 B1 B2) / (2 B1 H(0)^2) t )^-1,
///
/// valid on [0, T); it equals H(0) at t = 0 and diverges as t -> T.
pub fn riccati_lower_bound(cert: &BlowupCertificate, t: f64) -> Result<f64, CertificateError> {
    let t_pred = cert.t_pred.ok_or(CertificateError::CriterionNotSatisfied)?;
    if !(0.0..t_pred).contains(&t) {
        return Err(CertificateError::OutOfDomain { t, t_pred });
    }
    let h0 = cert.h0;
    let slope = (h0 * h0 - 2.0 * cert.b1 * cert.b2) / (2.0 * cert.b1 * h0 * h0);
    Ok(1.0 / (1.0 / h0 - slope * t))
}

/// One monitored sample of H(t) against the Riccati bound.
#[derive(Debug, Clone, Serialize)]
pub struct MonitorRecord {
    pub t: f64,
    pub h: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Outcome of monitoring a simulated series against the bound.
#[derive(Debug, Clone, Serialize)]
pub struct MonitorVerdict {
    pub records: Vec<MonitorRecord>,
    pub violations: Vec<f64>,
    pub ok: bool,
}

/// Check H(t) >= (1 - tol_monitor) * bound(t) at every snapshot that is
/// still regular, stopping at 0.99 T (the bound diverges at T) or at the
/// end of the series (a run already stops at breakdown).
pub fn monitor(
    series: &SimulationSeries,
    f: &TestingFunction,
    cert: &BlowupCertificate,
    params: &PhysicalParams,
    tol_monitor: f64,
) -> Result<MonitorVerdict, CertificateError> {
    let t_pred = cert.t_pred.ok_or(CertificateError::CriterionNotSatisfied)?;
    let mut records = Vec::new();
    let mut violations = Vec::new();
    for (k, &t) in series.times.iter().enumerate() {
        if t >= 0.99 * t_pred {
            break;
        }
        let snap = &series.snapshots[k];
        if !regularity_indicator(&snap.prim, &series.grid, params).regular {
            break;
        }
        let h = h_functional(f, &snap.prim.v, &series.grid);
        let bound = riccati_lower_bound(cert, t)?;
        let pass = h >= (1.0 - tol_monitor) * bound;
        if !pass {
            violations.push(t);
        }
        records.push(MonitorRecord { t, h, bound, pass });
    }
    let ok = violations.is_empty();
    Ok(MonitorVerdict {
        records,
        violations,
        ok,
    })
}
