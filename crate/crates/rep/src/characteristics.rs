//! Characteristic curves dr/dt = v(t, r) traced through a simulated
//! velocity field, the density transported along them by the integrating
//! factor exp(-integral (v_r + 2v/r)), and the discrete support radius.

use crate::model::PhysicalParams;
use crate::solver::{SimulationSeries, SolverError};

/// Default tail mass fraction defining the discrete support radius.
pub const DEFAULT_MASS_FRACTION: f64 = 1e-6;

/// One traced curve r(t; r0) sampled at the series' snapshot times.
#[derive(Debug, Clone)]
pub struct CharacteristicPath {
    pub r0: f64,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    /// Set when the curve left the grid before the series ended; the
    /// samples are truncated at the exit.
    pub exited: bool,
}

/// Linear interpolation of a cell-centered field at radius r, pinned to
/// the symmetry value at the origin and clamped beyond the last center.
fn interp_radial(values: &[f64], origin_value: f64, r: f64, series: &SimulationSeries) -> f64 {
    let grid = &series.grid;
    let dr = grid.dr();
    let first = grid.center(0);
    if r <= first {
        // Between the origin node and the first center.
        let w = (r / first).clamp(0.0, 1.0);
        return origin_value + w * (values[0] - origin_value);
    }
    let last_idx = grid.n_cells - 1;
    let last = grid.center(last_idx);
    if r >= last {
        return values[last_idx];
    }
    let x = (r - first) / dr;
    let i = (x.floor() as usize).min(last_idx - 1);
    let w = x - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

/// Velocity at (t, r): linear in r between cell centers (odd symmetry
/// pins v(0) = 0), linear in t between snapshots.
fn velocity_at(series: &SimulationSeries, t: f64, r: f64) -> f64 {
    let times = &series.times;
    let k = match times.binary_search_by(|probe| probe.total_cmp(&t)) {
        Ok(k) => return interp_radial(&series.snapshots[k].prim.v, 0.0, r, series),
        Err(k) => k,
    };
    if k == 0 {
        return interp_radial(&series.snapshots[0].prim.v, 0.0, r, series);
    }
    if k >= times.len() {
        let last = times.len() - 1;
        return interp_radial(&series.snapshots[last].prim.v, 0.0, r, series);
    }
    let (t0, t1) = (times[k - 1], times[k]);
    let w = (t - t0) / (t1 - t0);
    let v0 = interp_radial(&series.snapshots[k - 1].prim.v, 0.0, r, series);
    let v1 = interp_radial(&series.snapshots[k].prim.v, 0.0, r, series);
    v0 * (1.0 - w) + v1 * w
}

/// Integrate dr/dt = v(t, r) from r0 with midpoint RK2 across each
/// snapshot interval. A curve that reaches r_max is truncated and
/// flagged.
pub fn trace(r0: f64, series: &SimulationSeries) -> Result<CharacteristicPath, SolverError> {
    if series.snapshots.is_empty() {
        return Err(SolverError::Usage("trace needs a nonempty series".into()));
    }
    let grid = &series.grid;
    if !(r0 > 0.0 && r0 < grid.r_max) {
        return Err(SolverError::Usage(format!(
            "starting radius {r0} must lie in (0, r_max = {})",
            grid.r_max
        )));
    }
    let mut times = vec![series.times[0]];
    let mut positions = vec![r0];
    let mut r = r0;
    let mut exited = false;
    for k in 1..series.times.len() {
        let t0 = series.times[k - 1];
        let dt = series.times[k] - t0;
        let v_half = velocity_at(series, t0, r);
        let r_mid = r + 0.5 * dt * v_half;
        let v_mid = velocity_at(series, t0 + 0.5 * dt, r_mid);
        let next = (r + dt * v_mid).max(0.0);
        if next >= grid.r_max {
            exited = true;
            break;
        }
        r = next;
        times.push(series.times[k]);
        positions.push(r);
    }
    Ok(CharacteristicPath {
        r0,
        times,
        positions,
        exited,
    })
}

/// The conserved density along a path, compared against the integrating
/// factor prediction D(t) = D(0, r0) exp(-integral_0^t (v_r + 2 v/r) ds)
/// accumulated with the trapezoid rule along the curve.
#[derive(Debug, Clone)]
pub struct PathDensityRecord {
    pub times: Vec<f64>,
    /// D interpolated from the snapshots at the path positions.
    pub interpolated: Vec<f64>,
    /// The exponential-formula prediction from the accumulated divergence.
    pub predicted: Vec<f64>,
}

/// Flow divergence v_r + 2 v / r on cell centers of one snapshot, with
/// the same difference stencils as the regularity indicator.
fn divergence_field(series: &SimulationSeries, k: usize) -> Vec<f64> {
    let grid = &series.grid;
    let v = &series.snapshots[k].prim.v;
    let n = grid.n_cells;
    let dr = grid.dr();
    (0..n)
        .map(|i| {
            let v_r = if i == 0 {
                if n >= 3 {
                    (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dr)
                } else if n == 2 {
                    (v[1] - v[0]) / dr
                } else {
                    0.0
                }
            } else if i == n - 1 {
                if n >= 3 {
                    (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dr)
                } else {
                    (v[n - 1] - v[n - 2]) / dr
                }
            } else {
                (v[i + 1] - v[i - 1]) / (2.0 * dr)
            };
            v_r + 2.0 * v[i] / grid.center(i)
        })
        .collect()
}

/// Record D along the path against the integrating-factor prediction.
/// The prediction is an exponential, so it stays strictly positive
/// whenever D(0, r0) > 0.
pub fn density_along_path(
    path: &CharacteristicPath,
    series: &SimulationSeries,
    _params: &PhysicalParams,
) -> PathDensityRecord {
    let n_samples = path.times.len();
    let mut interpolated = Vec::with_capacity(n_samples);
    let mut predicted = Vec::with_capacity(n_samples);

    // Snapshot index of each path sample: paths are sampled exactly at
    // the leading snapshot times.
    let snap_index = |t: f64| -> usize {
        series
            .times
            .iter()
            .position(|&st| (st - t).abs() <= 1e-12 * series.times.last().unwrap().max(1.0))
            .expect("path samples align with snapshot times")
    };

    let k0 = snap_index(path.times[0]);
    let d0 = interp_radial(
        &series.snapshots[k0].cons.d,
        series.snapshots[k0].cons.d[0],
        path.positions[0],
        series,
    );
    let mut acc = 0.0;
    let mut prev_div = interp_radial(
        &divergence_field(series, k0),
        {
            // v odd implies v_r + 2v/r -> 3 v_r(0) at the origin; the first
            // cell's value is the nearest discrete stand-in.
            divergence_field(series, k0)[0]
        },
        path.positions[0],
        series,
    );
    let mut prev_t = path.times[0];
    for (j, (&t, &r)) in path.times.iter().zip(path.positions.iter()).enumerate() {
        let k = snap_index(t);
        let d_interp = interp_radial(
            &series.snapshots[k].cons.d,
            series.snapshots[k].cons.d[0],
            r,
            series,
        );
        if j > 0 {
            let div_field = divergence_field(series, k);
            let div = interp_radial(&div_field, div_field[0], r, series);
            acc += 0.5 * (prev_div + div) * (t - prev_t);
            prev_div = div;
            prev_t = t;
        }
        interpolated.push(d_interp);
        predicted.push(d0 * (-acc).exp());
    }
    PathDensityRecord {
        times: path.times.clone(),
        interpolated,
        predicted,
    }
}

/// Smallest radius containing (1 - mass_fraction) of the shell-weighted
/// total charge, per snapshot; all-vacuum snapshots report 0.
pub fn support_radius(series: &SimulationSeries, mass_fraction: f64) -> Vec<f64> {
    debug_assert!(mass_fraction > 0.0 && mass_fraction < 1.0);
    let grid = &series.grid;
    series
        .snapshots
        .iter()
        .map(|snap| {
            let total: f64 = snap
                .cons
                .d
                .iter()
                .enumerate()
                .map(|(i, &d)| d * grid.cell_volume(i))
                .sum();
            if total <= 0.0 {
                return 0.0;
            }
            let target = (1.0 - mass_fraction) * total;
            let mut acc = 0.0;
            for i in 0..grid.n_cells {
                acc += snap.cons.d[i] * grid.cell_volume(i);
                if acc >= target {
                    return grid.edge(i + 1);
                }
            }
            grid.r_max
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{electric_field, FieldProfile};
    use crate::model::{prim_to_cons, ConservedState, PrimitiveState, RadialGrid};
    use crate::solver::{SimulationSeries, Snapshot};
    use approx::assert_relative_eq;

    fn params() -> PhysicalParams {
        PhysicalParams::new(1.0, 2.0, 0.5, 0.0).unwrap()
    }

    /// A hand-built series with constant velocity v0 everywhere and
    /// uniform non-vacuum density (legal: no vacuum cells).
    fn constant_flow_series(v0: f64, t_end: f64, n_snaps: usize) -> SimulationSeries {
        let p = params();
        let grid = RadialGrid::new(100, 10.0, 5.0).unwrap();
        let prim = PrimitiveState::new(vec![0.01; 100], vec![v0; 100], &p).unwrap();
        let cons = prim_to_cons(&prim, &p);
        let field = electric_field(&cons.d, &grid);
        let mut series = SimulationSeries::new(grid);
        for k in 0..n_snaps {
            let t = t_end * k as f64 / (n_snaps - 1) as f64;
            series.record(
                t,
                Snapshot {
                    prim: prim.clone(),
                    cons: cons.clone(),
                    field: field.clone(),
                },
            );
        }
        series
    }

    #[test]
    fn stationary_flow_keeps_paths_constant() {
        let series = constant_flow_series(0.0, 1.0, 5);
        let path = trace(2.0, &series).unwrap();
        assert_eq!(path.positions, vec![2.0; 5]);
        assert!(!path.exited);
    }

    #[test]
    fn constant_velocity_gives_linear_paths() {
        let series = constant_flow_series(0.5, 2.0, 9);
        let path = trace(1.0, &series).unwrap();
        for (&t, &r) in path.times.iter().zip(path.positions.iter()) {
            assert_relative_eq!(r, 1.0 + 0.5 * t, max_relative = 1e-12);
        }
        // dr/dt stays subluminal along the path.
        for w in path.positions.windows(2).zip(path.times.windows(2)) {
            let (rs, ts) = w;
            assert!(((rs[1] - rs[0]) / (ts[1] - ts[0])).abs() < 1.0);
        }
    }

    #[test]
    fn fast_path_exits_and_truncates() {
        let series = constant_flow_series(0.9, 20.0, 21);
        let path = trace(9.0, &series).unwrap();
        assert!(path.exited);
        assert!(path.positions.len() < series.times.len());
        assert!(path.positions.iter().all(|&r| r < 10.0));
    }

    #[test]
    fn trace_rejects_bad_inputs() {
        let series = constant_flow_series(0.0, 1.0, 2);
        assert!(trace(0.0, &series).is_err());
        assert!(trace(11.0, &series).is_err());
        let p = params();
        let empty = SimulationSeries::new(RadialGrid::new(4, 1.0, 0.5).unwrap());
        let _ = p;
        assert!(trace(0.5, &empty).is_err());
    }

    #[test]
    fn vacuum_start_transports_zero() {
        let p = params();
        let grid = RadialGrid::new(50, 2.0, 1.0).unwrap();
        let mut series = SimulationSeries::new(grid);
        let snap = Snapshot {
            prim: PrimitiveState::vacuum(50),
            cons: ConservedState::vacuum(50),
            field: FieldProfile::vacuum(50),
        };
        series.record(0.0, snap.clone());
        series.record(1.0, snap);
        let path = trace(0.7, &series).unwrap();
        let rec = density_along_path(&path, &series, &p);
        assert!(rec.interpolated.iter().all(|&d| d == 0.0));
        assert!(rec.predicted.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn zero_divergence_flow_keeps_density_constant() {
        let p = params();
        let series = constant_flow_series(0.0, 1.0, 6);
        let path = trace(1.5, &series).unwrap();
        let rec = density_along_path(&path, &series, &p);
        let d0 = rec.interpolated[0];
        assert!(d0 > 0.0);
        for (&di, &dp) in rec.interpolated.iter().zip(rec.predicted.iter()) {
            assert_relative_eq!(di, d0, max_relative = 1e-13);
            assert_relative_eq!(dp, d0, max_relative = 1e-13);
        }
    }

    #[test]
    fn prediction_stays_positive_for_positive_start() {
        // Positivity of the exponential formula is exact whatever the
        // divergence history looks like.
        let p = params();
        let series = constant_flow_series(0.3, 4.0, 11);
        let path = trace(1.0, &series).unwrap();
        let rec = density_along_path(&path, &series, &p);
        assert!(rec.interpolated[0] > 0.0);
        assert!(rec.predicted.iter().all(|&d| d > 0.0));
    }

    #[test]
    fn support_radius_examples() {
        let p = params();
        let grid = RadialGrid::new(100, 2.0, 1.0).unwrap();
        // Vacuum series.
        let mut series = SimulationSeries::new(grid);
        series.record(
            0.0,
            Snapshot {
                prim: PrimitiveState::vacuum(100),
                cons: ConservedState::vacuum(100),
                field: FieldProfile::vacuum(100),
            },
        );
        assert_eq!(support_radius(&series, 1e-6), vec![0.0]);

        // An initial ball of radius 1 reports support <= 1.
        let (rho, v): (Vec<f64>, Vec<f64>) = grid
            .centers()
            .map(|r| {
                let bump = (1.0 - r * r).max(0.0).powi(2);
                (0.05 * bump, 0.0)
            })
            .unzip();
        let prim = PrimitiveState::new(rho, v, &p).unwrap();
        let cons = prim_to_cons(&prim, &p);
        let field = electric_field(&cons.d, &grid);
        let mut series = SimulationSeries::new(grid);
        series.record(0.0, Snapshot { prim, cons, field });
        let sr = support_radius(&series, 1e-6)[0];
        assert!(sr <= 1.0 + 1e-12, "support {sr}");
        assert!(sr > 0.5);
    }
}
