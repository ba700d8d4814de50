//! The radial ground state Q of  -Lap(Q) + Q = |Q|^(4/d) Q  on R^d.
//!
//! Solved by shooting-bisection on the initial height Q(0): the radial
//! ODE
//!
//! ```text
//!     Q'' + (d-1)/r Q' - Q + Q^(1+4/d) = 0,    Q'(0) = 0,
//! ```
//!
//! is integrated outward with an adaptive Dormand-Prince step and each
//! trajectory is classified as "crossed zero" (initial height too
//! large) or "rebounded" (too small); the zero-node decaying solution
//! sits between the two. Mass, gradient and variance integrals ride
//! along the integration as extra quadrature components, so they
//! converge at the integrator's order.
//!
//! A shot from a height within `eps` of the true Q(0) follows Q until
//! the growing mode of the linearized far field (~ e^{+r}) overtakes
//! the decaying tail, around Q ~ sqrt(eps). The solver therefore
//! polishes the bracket well below the requested tolerance and then
//! truncates the stored table where the relative contamination passes
//! 1e-3.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::line_fit;

/// One node of the radial table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RadialSample {
    pub r: f64,
    pub q: f64,
    pub qp: f64,
}

/// Fitted tail constants: |Q(r)| <= c0 exp(-d0 r) and
/// |Q'(r)| <= c1 exp(-d1 r) over the table's range.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayConstants {
    pub c0: f64,
    pub d0: f64,
    pub c1: f64,
    pub d1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundState {
    pub dimension: usize,
    pub initial_height: f64,
    pub radial_table: Vec<RadialSample>,
    pub l2_norm_sq: f64,
    pub grad_l2_norm_sq: f64,
    /// Second moment int |y|^2 Q^2 dy; sets the size of the chirp
    /// correction to the gradient norm of a bubble.
    pub variance: f64,
    pub decay: DecayConstants,
}

const SURFACE_MEASURE: [f64; 3] = [
    2.0,
    2.0 * std::f64::consts::PI,
    4.0 * std::f64::consts::PI,
];

/// Radial state carried by the integrator: (Q, Q', mass, grad, variance).
type State = [f64; 5];

fn rhs(d: usize, r: f64, y: &State) -> State {
    let p = 1.0 + 4.0 / d as f64;
    let q = y[0];
    let qp = y[1];
    let nonlin = q.abs().powf(p - 1.0) * q;
    let qpp = if r < 1e-10 {
        (q - nonlin) / d as f64
    } else {
        q - nonlin - (d as f64 - 1.0) / r * qp
    };
    let w = SURFACE_MEASURE[d - 1] * r.powi(d as i32 - 1);
    [qp, qpp, w * q * q, w * qp * qp, w * r * r * q * q]
}

/// One Dormand-Prince(4)5 step. Returns (next_state, scaled error).
fn dp45_step(d: usize, r: f64, y: &State, h: f64) -> (State, f64) {
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const E: [f64; 7] = [
        35.0 / 384.0 - 5179.0 / 57600.0,
        0.0,
        500.0 / 1113.0 - 7571.0 / 16695.0,
        125.0 / 192.0 - 393.0 / 640.0,
        -2187.0 / 6784.0 + 92097.0 / 339200.0,
        11.0 / 84.0 - 187.0 / 2100.0,
        -1.0 / 40.0,
    ];
    let mut k = [[0.0; 5]; 7];
    k[0] = rhs(d, r, y);
    for s in 0..6 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s + 1) {
            for (yi, ki) in ys.iter_mut().zip(kj) {
                *yi += h * A[s][j] * ki;
            }
        }
        k[s + 1] = rhs(d, r + C[s] * h, &ys);
    }
    let mut out = *y;
    let mut err: f64 = 0.0;
    for i in 0..5 {
        out[i] += h * A[5].iter().zip(&k).map(|(a, kj)| a * kj[i]).sum::<f64>();
        let e: f64 = E.iter().zip(&k).map(|(e, kj)| e * kj[i]).sum();
        err = err.max((h * e).abs() / (1.0 + out[i].abs()));
    }
    (out, err)
}

#[derive(Debug)]
enum Shot {
    CrossedZero,
    Rebounded,
    Decayed,
}

struct Trajectory {
    shot: Shot,
    table: Vec<RadialSample>,
    moments: [f64; 3],
}

/// Integrates outward from a series start near r = 0 until the
/// trajectory crosses zero, turns back up below its initial height,
/// decays below 1e-14 or reaches `r_stop`. The table (when recorded)
/// keeps everything up to the event.
fn integrate(d: usize, a: f64, tol: f64, record: bool, r_stop: f64) -> Trajectory {
    let p = 1.0 + 4.0 / d as f64;
    let r0 = 1e-8;
    let qpp0 = (a - a.powf(p)) / d as f64;
    let mut y: State = [a + 0.5 * qpp0 * r0 * r0, qpp0 * r0, 0.0, 0.0, 0.0];
    let mut r = r0;
    let mut h = 1e-4;
    let h_max = if record { 0.02 } else { 0.1 };
    let mut table = Vec::new();
    if record {
        table.push(RadialSample { r: 0.0, q: a, qp: 0.0 });
    }
    let mut shot = Shot::Decayed;
    while r < r_stop {
        let (y_new, err) = dp45_step(d, r, &y, h);
        if err > tol && h > 1e-12 {
            h = (h * 0.9 * (tol / err).powf(0.2)).max(1e-12);
            continue;
        }
        r += h;
        y = y_new;
        if record {
            table.push(RadialSample { r, q: y[0], qp: y[1] });
        }
        if err > 0.0 {
            h = (h * 0.9 * (tol / err).powf(0.2)).min(h_max);
        } else {
            h = (h * 2.0).min(h_max);
        }
        if y[0] <= 0.0 {
            shot = Shot::CrossedZero;
            break;
        }
        if y[1] >= 0.0 && y[0] < a {
            shot = Shot::Rebounded;
            break;
        }
        if y[0] < 1e-14 {
            break;
        }
    }
    Trajectory { shot, table, moments: [y[2], y[3], y[4]] }
}

/// Shooting-bisection for the ground state in dimension `d`.
///
/// `tol` is the acceptable bracket width on Q(0); the solver keeps
/// bisecting below it while the ODE accuracy still supports the
/// classification, which keeps the tail of the table clean.
pub fn solve_ground_state(d: usize, tol: f64) -> Result<GroundState> {
    if !(1..=3).contains(&d) {
        return Err(Error::InvalidConfig(format!("dimension {d} not in 1..=3")));
    }
    if !(1e-12..=1e-4).contains(&tol) {
        return Err(Error::InvalidConfig(format!(
            "ground-state tolerance {tol} outside [1e-12, 1e-4]"
        )));
    }
    let ode_tol = (tol * 1e-6).clamp(1e-13, 1e-10);
    let width_target = tol.min((50.0 * ode_tol).max(1e-12));
    let (mut lo, mut hi) = (0.1, 20.0);
    if matches!(integrate(d, lo, ode_tol, false, 50.0).shot, Shot::CrossedZero) {
        return Err(Error::NoGroundStateBracket { dimension: d, lo, hi });
    }
    if !matches!(integrate(d, hi, ode_tol, false, 50.0).shot, Shot::CrossedZero) {
        return Err(Error::NoGroundStateBracket { dimension: d, lo, hi });
    }
    while hi - lo > width_target {
        let mid = 0.5 * (lo + hi);
        match integrate(d, mid, ode_tol, false, 50.0).shot {
            Shot::CrossedZero => hi = mid,
            _ => lo = mid,
        }
    }
    let a = 0.5 * (lo + hi);

    let traj = integrate(d, a, ode_tol, true, 50.0);
    let mut table = traj.table;
    truncate_table(&mut table, a, hi - lo);
    if table.len() < 32 {
        return Err(Error::NoGroundStateBracket { dimension: d, lo, hi });
    }

    let decay = fit_decay(d, &table);
    Ok(GroundState {
        dimension: d,
        initial_height: a,
        radial_table: table,
        l2_norm_sq: traj.moments[0],
        grad_l2_norm_sq: traj.moments[1],
        variance: traj.moments[2],
        decay,
    })
}

/// Keeps the strictly positive, strictly decreasing head of the table
/// and drops the stretch where the bracket-width contamination exceeds
/// one part in 1e3 of Q, i.e. below q_floor ~ Q(0) sqrt(width/1e-3).
fn truncate_table(table: &mut Vec<RadialSample>, a: f64, bracket_width: f64) {
    let q_floor = a * (bracket_width.max(f64::MIN_POSITIVE) / 1e-3).sqrt();
    let mut end = table.len();
    for i in 1..table.len() {
        if table[i].q <= q_floor || table[i].q >= table[i - 1].q {
            end = i;
            break;
        }
    }
    table.truncate(end.max(2));
}

/// Least squares for log Q = log c0 - d0 r - (d-1)/2 log r over the last
/// decade of the table. The algebraic factor is the known far-field
/// r^(-(d-1)/2) prefactor; removing it keeps the fitted rate at the
/// linearized value instead of drifting above 1. c0 is then raised
/// until the plain exponential bound holds on every table node.
fn fit_decay(d: usize, table: &[RadialSample]) -> DecayConstants {
    let q_end = table.last().unwrap().q;
    let alg = (d as f64 - 1.0) / 2.0;
    let fit_rate = |vals: Vec<(f64, f64)>| -> f64 {
        let xs: Vec<f64> = vals.iter().map(|(r, _)| *r).collect();
        let ys: Vec<f64> = vals.iter().map(|(r, v)| v.ln() + alg * r.ln()).collect();
        let (_, slope, _) = line_fit(&xs, &ys);
        (-slope).min(1.0)
    };
    let d0 = fit_rate(
        table
            .iter()
            .filter(|s| s.q <= 10.0 * q_end && s.r > 0.0)
            .map(|s| (s.r, s.q))
            .collect(),
    );
    let d1 = fit_rate(
        table
            .iter()
            .filter(|s| s.q <= 10.0 * q_end && s.r > 0.0 && s.qp < 0.0)
            .map(|s| (s.r, -s.qp))
            .collect(),
    );
    let c0 = table
        .iter()
        .map(|s| s.q * (d0 * s.r).exp())
        .fold(0.0, f64::max);
    let c1 = table
        .iter()
        .map(|s| s.qp.abs() * (d1 * s.r).exp())
        .fold(0.0, f64::max);
    DecayConstants { c0, d0, c1, d1 }
}

impl GroundState {
    pub fn r_max(&self) -> f64 {
        self.radial_table.last().unwrap().r
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq.sqrt()
    }

    pub fn grad_l2_norm(&self) -> f64 {
        self.grad_l2_norm_sq.sqrt()
    }

    fn locate(&self, r: f64) -> usize {
        let t = &self.radial_table;
        match t.binary_search_by(|s| s.r.partial_cmp(&r).unwrap()) {
            Ok(i) => i.min(t.len() - 2),
            Err(i) => i.saturating_sub(1).min(t.len() - 2),
        }
    }

    /// Q(r) by cubic Hermite interpolation on the table, with the fitted
    /// exponential tail beyond its range.
    pub fn evaluate(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        let t = &self.radial_table;
        let last = t.last().unwrap();
        if r >= last.r {
            // continuous exponential extension
            return last.q * (-self.decay.d0 * (r - last.r)).exp();
        }
        let i = self.locate(r);
        let (a, b) = (&t[i], &t[i + 1]);
        hermite(r, a.r, b.r, a.q, b.q, a.qp, b.qp)
    }

    /// dQ/dr by cubic Hermite interpolation of Q', using the ODE for the
    /// node values of Q''.
    pub fn evaluate_gradient(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        let t = &self.radial_table;
        let last = t.last().unwrap();
        if r >= last.r {
            return last.qp * (-self.decay.d1 * (r - last.r)).exp();
        }
        let i = self.locate(r);
        let (a, b) = (&t[i], &t[i + 1]);
        hermite(r, a.r, b.r, a.qp, b.qp, self.qpp(a), self.qpp(b))
    }

    fn qpp(&self, s: &RadialSample) -> f64 {
        let d = self.dimension as f64;
        let p = 1.0 + 4.0 / d;
        if s.r < 1e-10 {
            (s.q - s.q.abs().powf(p - 1.0) * s.q) / d
        } else {
            s.q - s.q.abs().powf(p - 1.0) * s.q - (d - 1.0) / s.r * s.qp
        }
    }

    /// Largest one-step re-integration defect over the table: from each
    /// node, a fresh tightly-tolerated integration to the next node is
    /// compared against the stored values. Measures how far the table is
    /// from an exact trajectory of the ODE.
    pub fn ode_residual_max(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for w in self.radial_table.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if a.r < 1e-6 {
                continue; // series-start region
            }
            let mut y: State = [a.q, a.qp, 0.0, 0.0, 0.0];
            let mut r = a.r;
            let n_sub = 8;
            let h = (b.r - a.r) / n_sub as f64;
            for _ in 0..n_sub {
                let (y_new, _) = dp45_step(self.dimension, r, &y, h);
                y = y_new;
                r += h;
            }
            worst = worst.max((y[0] - b.q).abs().max((y[1] - b.qp).abs()));
        }
        worst
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn hermite(x: f64, x0: f64, x1: f64, f0: f64, f1: f64, g0: f64, g1: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    f0 * (2.0 * t3 - 3.0 * t2 + 1.0)
        + g0 * h * (t3 - 2.0 * t2 + t)
        + f1 * (-2.0 * t3 + 3.0 * t2)
        + g1 * h * (t3 - t2)
}

/// Closed form of the one-dimensional ground state, used as an oracle:
/// Q(x) = 3^(1/4) sech^(1/2)(2x).
pub fn closed_form_1d(x: f64) -> f64 {
    3f64.powf(0.25) * (1.0 / (2.0 * x).cosh()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    // closed-form d=1 values
    const Q0_1D: f64 = 1.316074012952492; // 3^(1/4)
    const MASS_1D: f64 = 2.7206990463513265; // sqrt(3) pi / 2
    const GRAD_1D: f64 = 1.3603495231756633; // sqrt(3) pi / 4

    // regression constants frozen from an independent shooting oracle run
    // at two tolerance levels before this module was written
    const Q0_2D: f64 = 2.20620086465;
    const MASS_2D: f64 = 11.70089652;
    const GRAD_2D: f64 = 11.70089652;
    const Q0_3D: f64 = 4.19172333511;
    const MASS_3D: f64 = 63.7831158;
    const GRAD_3D: f64 = 95.6746737;

    #[test]
    fn d1_matches_closed_form() {
        let gs = solve_ground_state(1, 1e-10).unwrap();
        assert!((gs.initial_height - Q0_1D).abs() < 1e-7);
        assert!((gs.l2_norm_sq - MASS_1D).abs() < 1e-7);
        assert!((gs.grad_l2_norm_sq - GRAD_1D).abs() < 1e-7);
    }

    #[test]
    fn d2_matches_independent_oracle() {
        let gs = solve_ground_state(2, 1e-8).unwrap();
        assert!((gs.initial_height - Q0_2D).abs() < 1e-6);
        assert!((gs.l2_norm_sq - MASS_2D).abs() < 1e-6);
        assert!((gs.grad_l2_norm_sq - GRAD_2D).abs() < 1e-6);
    }

    #[test]
    fn d3_matches_independent_oracle() {
        let gs = solve_ground_state(3, 1e-8).unwrap();
        assert!((gs.initial_height - Q0_3D).abs() < 1e-6);
        assert!((gs.l2_norm_sq - MASS_3D).abs() < 2e-6);
        assert!((gs.grad_l2_norm_sq - GRAD_3D).abs() < 2e-6);
    }

    #[test]
    fn closed_form_solves_the_ode() {
        // residual of Q'' - Q + Q^5 for the sech^(1/2) profile
        for &x in &[0.0, 0.3, 1.0, 2.5] {
            let h = 1e-5;
            let qpp = (closed_form_1d(x + h) - 2.0 * closed_form_1d(x) + closed_form_1d(x - h))
                / (h * h);
            let q = closed_form_1d(x);
            assert!((qpp - q + q.powi(5)).abs() < 1e-5, "x = {x}");
        }
    }

    #[test]
    fn table_is_positive_monotone_with_zero_slope_at_origin() {
        let gs = solve_ground_state(2, 1e-8).unwrap();
        assert_eq!(gs.radial_table[0].qp, 0.0);
        for w in gs.radial_table.windows(2) {
            assert!(w[1].q > 0.0);
            assert!(w[1].q < w[0].q);
        }
    }

    #[test]
    fn ode_residual_is_small() {
        for d in 1..=3 {
            let gs = solve_ground_state(d, 1e-8).unwrap();
            let res = gs.ode_residual_max();
            assert!(res < 1e-8, "d = {d}: defect {res}");
        }
    }

    #[test]
    fn decay_rate_is_near_one() {
        for d in 1..=3 {
            let gs = solve_ground_state(d, 1e-8).unwrap();
            assert!(
                gs.decay.d0 >= 0.9 && gs.decay.d0 <= 1.0,
                "d = {d}: fitted rate {}",
                gs.decay.d0
            );
            // the bound must actually hold on the table
            for s in &gs.radial_table {
                assert!(s.q <= gs.decay.c0 * (-gs.decay.d0 * s.r).exp() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn interpolation_hits_table_and_closed_form() {
        let gs = solve_ground_state(1, 1e-10).unwrap();
        assert_eq!(gs.evaluate(0.0), gs.initial_height);
        // closed-form oracle at r = 1
        assert!((gs.evaluate(1.0) - closed_form_1d(1.0)).abs() < 1e-6);
        // dense sweep inside the table: interpolant vs closed form, monotone
        let r_max = gs.r_max();
        let mut prev = f64::INFINITY;
        let mut i = 0;
        loop {
            let r = i as f64 * 0.005;
            if r > r_max {
                break;
            }
            let v = gs.evaluate(r);
            assert!((v - closed_form_1d(r)).abs() < 1e-7, "r = {r}");
            assert!(v <= prev);
            prev = v;
            i += 1;
        }
        assert!(i > 1000, "table too short: r_max = {r_max}");
    }

    #[test]
    fn tail_extension_is_positive_and_bounded() {
        let gs = solve_ground_state(2, 1e-8).unwrap();
        let r = 3.0 * gs.r_max();
        let v = gs.evaluate(r);
        assert!(v > 0.0);
        assert!(v < gs.decay.c0 * (-gs.decay.d0 * r).exp() * (1.0 + 1e-12));
    }

    #[test]
    fn gradient_interpolation_matches_difference_quotient() {
        let gs = solve_ground_state(2, 1e-8).unwrap();
        for &r in &[0.5, 1.0, 2.0, 5.0] {
            let h = 1e-6;
            let fd = (gs.evaluate(r + h) - gs.evaluate(r - h)) / (2.0 * h);
            assert!((gs.evaluate_gradient(r) - fd).abs() < 1e-5, "r = {r}");
        }
    }

    #[test]
    fn norms_converge_under_tolerance_refinement() {
        // quadrature rides the adaptive integrator; tightening the ODE
        // tolerance must not move the norms by more than 1e-7
        let a = solve_ground_state(2, 1e-6).unwrap();
        let b = solve_ground_state(2, 1e-9).unwrap();
        assert!((a.l2_norm_sq - b.l2_norm_sq).abs() < 1e-7);
        assert!((a.grad_l2_norm_sq - b.grad_l2_norm_sq).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(solve_ground_state(4, 1e-8).is_err());
        assert!(solve_ground_state(2, 1e-2).is_err());
    }

    #[test]
    fn json_round_trip() {
        let gs = solve_ground_state(1, 1e-6).unwrap();
        let s = gs.to_json().unwrap();
        let back = GroundState::from_json(&s).unwrap();
        assert_eq!(back.dimension, 1);
        assert_eq!(back.initial_height, gs.initial_height);
        assert_eq!(back.radial_table.len(), gs.radial_table.len());
    }
}
