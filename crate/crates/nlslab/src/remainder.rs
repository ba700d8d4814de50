//! Picard iteration for the remainder in the weighted space.
//!
//! The correction u making r_lam + u an exact solution satisfies the
//! backward-in-time integral equation
//!
//! ```text
//!   u(t) = i int_t^T e^{i(t-s) Lap} (S0(s) + S(u)(s)) ds  =: Phi(u)(t),
//! ```
//!
//! and Phi contracts in the distance d(u,v) = sup_t e^{delta/(lam(T-t))}
//! ||u(t)-v(t)||_L2 once lam is large and T small enough. The measured
//! contraction factor is itself a deliverable.
//!
//! All weighted quantities are assembled in log space: near the blow-up
//! time the weights pass e^{700} while the states underflow, and the
//! product is only meaningful as exp(log-norm + exponent).

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::line_fit;
use crate::ground_state::GroundState;
use crate::profile::{self, BubbleConfig};
use crate::spectral::{self, DomainSpec, Field, SpectralCoefficients};

/// Exponent at which e^{-x} drops below 1e-300 and a state is pinned to
/// exact zero.
pub const UNDERFLOW_EXPONENT: f64 = 690.77;

/// delta, alpha, beta and the scales of the weighted norms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightedSpaceParams {
    pub delta: f64,
    /// H2 weight exponent fraction, 0 < alpha < min(1, 4/d - 1).
    pub alpha: f64,
    /// H1 interpolation exponent, beta in (alpha, 1).
    pub beta: f64,
    pub lambda: f64,
    pub blow_time: f64,
}

impl WeightedSpaceParams {
    pub fn new(
        delta: f64,
        alpha: f64,
        lambda: f64,
        blow_time: f64,
        dimension: usize,
    ) -> Result<Self> {
        let p = Self { delta, alpha, beta: (1.0 + alpha) / 2.0, lambda, blow_time };
        p.validate(dimension)?;
        Ok(p)
    }

    /// Midpoint of the admissible interval for alpha.
    pub fn default_alpha(dimension: usize) -> f64 {
        (4.0 / dimension as f64 - 1.0).min(1.0) / 2.0
    }

    pub fn validate(&self, dimension: usize) -> Result<()> {
        let alpha_max = (4.0 / dimension as f64 - 1.0).min(1.0);
        if !(self.delta > 0.0) {
            return Err(Error::InvalidConfig("delta must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < alpha_max) {
            return Err(Error::InvalidConfig(format!(
                "alpha = {} outside (0, {alpha_max})",
                self.alpha
            )));
        }
        if !(self.beta > self.alpha && self.beta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "beta = {} outside (alpha, 1)",
                self.beta
            )));
        }
        if !(self.lambda > 0.0 && self.blow_time > 0.0) {
            return Err(Error::InvalidConfig(
                "lambda and blow_time must be positive".into(),
            ));
        }
        Ok(())
    }

    /// delta/(lam (T-t)), the L2 weight exponent at time t.
    pub fn exponent_l2(&self, t: f64) -> f64 {
        self.delta / (self.lambda * (self.blow_time - t))
    }

    pub fn exponent_h2(&self, t: f64) -> f64 {
        self.alpha * self.exponent_l2(t)
    }
}

/// weight * norm without overflow: both factors can pass the f64 range
/// while the product stays moderate.
fn weighted(exponent: f64, norm: f64) -> f64 {
    if norm <= 0.0 {
        0.0
    } else {
        (norm.ln() + exponent).exp()
    }
}

/// Geometrically graded nodes 0 = s_0 < s_1 < ... < s_M < T accumulating
/// toward the blow-up time, cut off where the H2 weight
/// e^{-alpha delta/(lam (T-s))} underflows: the state at the cutoff node
/// is identically zero in f64 and the dropped integral tail is below
/// 1e-300.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMesh {
    pub nodes: Vec<f64>,
    /// Index of the first node past the underflow cutoff (== nodes.len()
    /// when the mesh was capped before reaching it).
    pub cutoff_index: usize,
    pub blow_time: f64,
}

impl TimeMesh {
    pub fn graded(
        params: &WeightedSpaceParams,
        ratio: f64,
        max_nodes: Option<usize>,
    ) -> Result<TimeMesh> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "grading ratio {ratio} outside (0, 1)"
            )));
        }
        let t_end = params.blow_time;
        let underflow_width = params.alpha * params.delta / (params.lambda * UNDERFLOW_EXPONENT);
        let cap = max_nodes.unwrap_or(usize::MAX).max(2);
        let mut nodes = vec![0.0];
        let mut cutoff_index = None;
        let mut width = t_end;
        while nodes.len() < cap {
            width *= ratio;
            nodes.push(t_end - width);
            if width < underflow_width {
                cutoff_index = Some(nodes.len() - 1);
                break;
            }
        }
        Ok(TimeMesh {
            cutoff_index: cutoff_index.unwrap_or(nodes.len()),
            nodes,
            blow_time: t_end,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Last node that carries a nonzero state.
    pub fn active_end(&self) -> usize {
        self.cutoff_index.min(self.nodes.len() - 1)
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.nodes
            .iter()
            .position(|&s| s == t)
            .ok_or(Error::NotOnMesh { t })
    }
}

/// Per-node states of a remainder candidate on a mesh.
#[derive(Debug, Clone)]
pub struct RemainderTrajectory {
    pub mesh: Arc<TimeMesh>,
    pub states: Vec<Field>,
}

impl RemainderTrajectory {
    pub fn zero(mesh: &Arc<TimeMesh>, domain: &DomainSpec) -> Self {
        let states = mesh
            .nodes
            .iter()
            .map(|&s| Field::zeros(domain, s))
            .collect();
        Self { mesh: mesh.clone(), states }
    }

    pub fn weighted_sup_l2(&self, params: &WeightedSpaceParams) -> f64 {
        self.mesh
            .nodes
            .iter()
            .zip(&self.states)
            .map(|(&s, u)| weighted(params.exponent_l2(s), u.l2()))
            .fold(0.0, f64::max)
    }

    pub fn weighted_sup_h2(&self, params: &WeightedSpaceParams) -> f64 {
        self.mesh
            .nodes
            .iter()
            .zip(&self.states)
            .map(|(&s, u)| weighted(params.exponent_h2(s), spectral::norms(u).h2))
            .fold(0.0, f64::max)
    }

    /// sup of e^{beta delta/(lam(T-t))} ||u||_H1; finite for ball members
    /// by L2-H2 interpolation.
    pub fn weighted_sup_h1(&self, params: &WeightedSpaceParams) -> f64 {
        self.mesh
            .nodes
            .iter()
            .zip(&self.states)
            .map(|(&s, u)| {
                weighted(params.beta * params.exponent_l2(s), spectral::norms(u).h1)
            })
            .fold(0.0, f64::max)
    }

    /// Membership gauge of the weighted ball: sup_l2 + sup_h2 <= 1.
    pub fn membership(&self, params: &WeightedSpaceParams) -> f64 {
        self.weighted_sup_l2(params) + self.weighted_sup_h2(params)
    }

    /// Decay rate gamma fitted to log ||u(s)||_H2 against 1/(lam(T-s)).
    /// Returns 0 when fewer than 3 nodes carry a nonzero state.
    pub fn gamma_fit(&self, params: &WeightedSpaceParams) -> f64 {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (&s, u) in self.mesh.nodes.iter().zip(&self.states) {
            let h2 = spectral::norms(u).h2;
            if h2 > 0.0 {
                xs.push(1.0 / (params.lambda * (params.blow_time - s)));
                ys.push(h2.ln());
            }
        }
        if xs.len() < 3 {
            return 0.0;
        }
        let (_, slope, _) = line_fit(&xs, &ys);
        -slope
    }
}

/// d(u, v) = sup_t e^{delta/(lam(T-t))} ||u(t) - v(t)||_L2, the exact
/// discrete sup over mesh nodes.
pub fn weighted_distance(
    u: &RemainderTrajectory,
    v: &RemainderTrajectory,
    params: &WeightedSpaceParams,
) -> Result<f64> {
    if u.mesh.as_ref() != v.mesh.as_ref() {
        return Err(Error::MeshMismatch);
    }
    let mut sup: f64 = 0.0;
    for ((&s, a), b) in u.mesh.nodes.iter().zip(&u.states).zip(&v.states) {
        let diff = a.add_scaled(Complex64::new(-1.0, 0.0), b)?.l2();
        sup = sup.max(weighted(params.exponent_l2(s), diff));
    }
    Ok(sup)
}

/// Composite graded-trapezoid Duhamel integral at mesh node t:
/// i int_t^T e^{i(t-s) Lap} source(s) ds, with each sample propagated by
/// the exact linear flow and the past-cutoff tail treated as zero.
///
/// `sources` holds the integrand at every mesh node. This is the direct
/// one-propagation-per-node form; [`RemainderSolver::apply_phi`] uses
/// the algebraically identical suffix-sum form.
pub fn duhamel(mesh: &TimeMesh, sources: &[Field], t: f64) -> Result<Field> {
    if sources.len() != mesh.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![mesh.len()],
            got: vec![sources.len()],
        });
    }
    let m0 = mesh.index_of(t)?;
    let end = mesh.active_end();
    let mut acc = Field::zeros(&sources[0].domain, t);
    if m0 >= end {
        return Ok(acc);
    }
    for j in m0..=end {
        let left = if j == m0 { 0.0 } else { mesh.nodes[j] - mesh.nodes[j - 1] };
        let right = if j == end { 0.0 } else { mesh.nodes[j + 1] - mesh.nodes[j] };
        let w = 0.5 * (left + right);
        let moved = spectral::propagate(&sources[j], t - mesh.nodes[j])?;
        acc = acc.add_scaled(Complex64::new(w, 0.0), &moved)?;
    }
    Ok(acc.scale(Complex64::new(0.0, 1.0)))
}

/// Report of one Picard solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub blow_time: f64,
    pub iterations: usize,
    pub contraction_factor: f64,
    pub weighted_sup_l2: f64,
    pub weighted_sup_h2: f64,
    pub gamma_fit: f64,
    /// d(u_{n+1}, u_n) per iteration.
    pub distances: Vec<f64>,
}

pub struct FixedPointOutcome {
    pub trajectory: RemainderTrajectory,
    pub report: FixedPointReport,
}

/// Profile data precomputed once and shared by every Picard iteration.
pub struct RemainderSolver {
    pub domain: DomainSpec,
    pub config: BubbleConfig,
    pub params: WeightedSpaceParams,
    pub mesh: Arc<TimeMesh>,
    dimension: usize,
    /// r_lam at the active mesh nodes.
    profiles: Vec<Field>,
    /// S0 at the active mesh nodes (independent of u).
    source_s0: Vec<Field>,
}

impl RemainderSolver {
    pub fn new(
        config: &BubbleConfig,
        gs: &GroundState,
        params: WeightedSpaceParams,
        mesh: Arc<TimeMesh>,
        domain: &DomainSpec,
    ) -> Result<Self> {
        params.validate(gs.dimension)?;
        let end = mesh.active_end();
        let mut profiles = Vec::with_capacity(end + 1);
        let mut source_s0 = Vec::with_capacity(end + 1);
        for &s in &mesh.nodes[..=end] {
            profiles.push(profile::glued_profile(config, gs, s, domain)?);
            source_s0.push(profile::source_s0(config, gs, s, domain)?);
        }
        Ok(Self {
            domain: domain.clone(),
            config: config.clone(),
            params,
            mesh,
            dimension: gs.dimension,
            profiles,
            source_s0,
        })
    }

    /// One application of Phi via spectral suffix sums: in coefficient
    /// space e^{i(t-s)Lap} is diagonal, so the composite trapezoid over
    /// every suffix [t_m, T) reduces to one backward recursion
    ///
    /// ```text
    ///   A_m = A_{m+1} + (s_{m+1}-s_m)/2 (G_m + G_{m+1}),
    ///   G_j = e^{i mu s_j} F_j,     u(t_m) = i e^{-i mu t_m} A_m,
    /// ```
    ///
    /// costing one transform pair per node instead of one per node pair.
    /// Identical to [`duhamel`] up to roundoff.
    pub fn apply_phi(&self, u: &RemainderTrajectory) -> Result<RemainderTrajectory> {
        if u.mesh.as_ref() != self.mesh.as_ref() {
            return Err(Error::MeshMismatch);
        }
        let end = self.mesh.active_end();
        let mut out = RemainderTrajectory::zero(&self.mesh, &self.domain);

        // per-mode eigenvalues, flattened in coefficient order
        let mu = mode_eigenvalues(&self.domain);

        let n = self.domain.num_points();
        let mut acc = vec![Complex64::default(); n];
        let mut g_next: Vec<Complex64> = Vec::new();
        for m in (0..=end).rev() {
            let s_m = self.mesh.nodes[m];
            let source = self.integrand(m, &u.states[m])?;
            let c = spectral::transform(&source);
            let mut g_m = c.coeffs.into_raw_vec_and_offset().0;
            g_m.par_iter_mut().zip(mu.par_iter()).for_each(|(v, &mu_j)| {
                *v *= Complex64::from_polar(1.0, mu_j * s_m);
            });
            if m < end {
                let half = 0.5 * (self.mesh.nodes[m + 1] - s_m);
                acc.par_iter_mut()
                    .zip(g_m.par_iter().zip(g_next.par_iter()))
                    .for_each(|(a, (&gm, &gn))| {
                        *a += half * (gm + gn);
                    });
            }
            // u(t_m) = i e^{-i mu t_m} A_m
            let mut coeffs = acc.clone();
            coeffs
                .par_iter_mut()
                .zip(mu.par_iter())
                .for_each(|(v, &mu_j)| {
                    *v *= Complex64::new(0.0, 1.0) * Complex64::from_polar(1.0, -mu_j * s_m);
                });
            let field = spectral::inverse_transform(&SpectralCoefficients {
                domain: self.domain.clone(),
                time_stamp: s_m,
                coeffs: ndarray::ArrayD::from_shape_vec(
                    ndarray::IxDyn(self.domain.shape()),
                    coeffs,
                )
                .expect("shape"),
            });
            out.states[m] = field;
            g_next = g_m;
        }
        Ok(out)
    }

    /// S0(s_m) + S(u(s_m)).
    fn integrand(&self, m: usize, u_state: &Field) -> Result<Field> {
        let s = profile::source_s_with_profile(&self.profiles[m], u_state, self.dimension)?;
        self.source_s0[m].add_scaled(Complex64::new(1.0, 0.0), &s)
    }

    /// Picard sequence u0 = 0, u_{n+1} = Phi(u_n) until the weighted
    /// distance of consecutive iterates drops below `tol`. Reports the
    /// last distance ratio as the measured contraction factor.
    pub fn fixed_point(&self, tol: f64, max_iter: usize) -> Result<FixedPointOutcome> {
        if !(1e-12..=1e-4).contains(&tol) {
            return Err(Error::InvalidConfig(format!(
                "fixed-point tolerance {tol} outside [1e-12, 1e-4]"
            )));
        }
        let mut u = RemainderTrajectory::zero(&self.mesh, &self.domain);
        let mut distances = Vec::new();
        let mut consecutive_expanding = 0;
        for iteration in 1..=max_iter {
            let next = self.apply_phi(&u)?;
            let dist = weighted_distance(&next, &u, &self.params)?;
            let ratio = match distances.last() {
                Some(&prev) if prev > 0.0 => dist / prev,
                _ => f64::NAN,
            };
            distances.push(dist);
            u = next;

            let membership = u.membership(&self.params);
            if membership > 1.0 {
                return Err(Error::LeftWeightedSpace(format!(
                    "iterate {iteration} has weighted sups {membership:.3e} > 1"
                )));
            }
            if ratio.is_finite() && ratio >= 1.0 {
                consecutive_expanding += 1;
                if consecutive_expanding >= 3 {
                    return Err(Error::NotContracting {
                        ratios: distances.windows(2).map(|w| w[1] / w[0]).collect(),
                    });
                }
            } else {
                consecutive_expanding = 0;
            }

            if dist < tol {
                let report = FixedPointReport {
                    delta: self.params.delta,
                    alpha: self.params.alpha,
                    beta: self.params.beta,
                    lambda: self.params.lambda,
                    blow_time: self.params.blow_time,
                    iterations: iteration,
                    contraction_factor: last_ratio(&distances),
                    weighted_sup_l2: u.weighted_sup_l2(&self.params),
                    weighted_sup_h2: u.weighted_sup_h2(&self.params),
                    gamma_fit: u.gamma_fit(&self.params),
                    distances,
                };
                return Ok(FixedPointOutcome { trajectory: u, report });
            }
        }
        Err(Error::NotContracting {
            ratios: distances.windows(2).map(|w| w[1] / w[0]).collect(),
        })
    }

    /// Weighted bound of Phi on a deterministic trial member of the
    /// weighted ball with the given budget.
    pub fn phi_bound(&self, budget: f64) -> Result<f64> {
        let u = self.trial_trajectory(budget);
        let phi = self.apply_phi(&u)?;
        Ok(phi.membership(&self.params))
    }

    /// Trial trajectory u(s) = a e^{-delta/(lam(T-s))} chi, with chi the
    /// normalized sum of the cutoff bumps and a chosen so the membership
    /// gauge equals `budget`.
    pub fn trial_trajectory(&self, budget: f64) -> RemainderTrajectory {
        let mut chi = Field::zeros(&self.domain, 0.0);
        let rho = self.config.cutoff_inner_radius;
        for p in &self.config.points {
            let p = p.clone();
            let bump = Field::from_fn(&self.domain, 0.0, |x| {
                let r = x
                    .iter()
                    .zip(&p)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                Complex64::new(profile::eta(r / rho), 0.0)
            });
            chi = chi.add_scaled(Complex64::new(1.0, 0.0), &bump).unwrap();
        }
        let chi = chi.scale(Complex64::new(1.0 / chi.l2(), 0.0));
        let h2 = spectral::norms(&chi).h2;
        let worst_h2 = h2 * (-(1.0 - self.params.alpha) * self.params.exponent_l2(0.0)).exp();
        let scale = budget / (1.0 + worst_h2);
        let mut traj = RemainderTrajectory::zero(&self.mesh, &self.domain);
        let end = self.mesh.active_end();
        for m in 0..=end {
            let s = self.mesh.nodes[m];
            let amp = scale * (-self.params.exponent_l2(s)).exp();
            traj.states[m] = chi.scale(Complex64::new(amp, 0.0));
            traj.states[m].time_stamp = s;
        }
        traj
    }
}

fn last_ratio(distances: &[f64]) -> f64 {
    if distances.len() < 2 {
        return 0.0;
    }
    let prev = distances[distances.len() - 2];
    if prev > 0.0 {
        distances[distances.len() - 1] / prev
    } else {
        0.0
    }
}

fn mode_eigenvalues(domain: &DomainSpec) -> Vec<f64> {
    let dim = domain.dimension;
    let shape = domain.shape().to_vec();
    let axis_mu: Vec<Vec<f64>> = (0..dim)
        .map(|a| {
            (0..shape[a])
                .map(|j| {
                    let k = domain.wavenumber(a, j);
                    k * k
                })
                .collect()
        })
        .collect();
    (0..domain.num_points())
        .map(|flat| {
            let mut rem = flat;
            let mut mu = 0.0;
            for axis in (0..dim).rev() {
                let nn = shape[axis];
                mu += axis_mu[axis][rem % nn];
                rem /= nn;
            }
            mu
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground_state::solve_ground_state;
    use crate::spectral::band_limited_noise;

    fn params_1d() -> WeightedSpaceParams {
        WeightedSpaceParams::new(0.1, 0.5, 4.0, 0.02, 1).unwrap()
    }

    #[test]
    fn params_reject_bad_exponents() {
        assert!(WeightedSpaceParams::new(0.1, 0.5, 4.0, 0.02, 3).is_err()); // alpha >= 1/3
        assert!(WeightedSpaceParams::new(0.1, 0.3, 4.0, 0.02, 3).is_ok());
        assert!(WeightedSpaceParams::new(-0.1, 0.5, 4.0, 0.02, 1).is_err());
    }

    #[test]
    fn mesh_is_graded_and_cut_off() {
        let p = params_1d();
        let mesh = TimeMesh::graded(&p, 0.9, None).unwrap();
        assert_eq!(mesh.nodes[0], 0.0);
        for w in mesh.nodes.windows(2) {
            assert!(w[1] > w[0]);
            assert!(w[1] < p.blow_time);
        }
        // spacings decrease toward T
        let spacings: Vec<f64> = mesh.nodes.windows(2).map(|w| w[1] - w[0]).collect();
        for w in spacings.windows(2) {
            assert!(w[1] < w[0] * 1.0000001);
        }
        // the cutoff node's H2 weight underflows, its predecessor's does not
        let s_cut = mesh.nodes[mesh.cutoff_index];
        assert!((-p.exponent_h2(s_cut)).exp() < 1e-300);
        let s_prev = mesh.nodes[mesh.cutoff_index - 1];
        assert!((-p.exponent_h2(s_prev)).exp() >= 1e-300);
    }

    #[test]
    fn duhamel_of_zero_source_is_zero() {
        let p = params_1d();
        let mesh = TimeMesh::graded(&p, 0.8, None).unwrap();
        let domain = DomainSpec::dirichlet(vec![1.0], vec![32]).unwrap();
        let sources: Vec<Field> = mesh
            .nodes
            .iter()
            .map(|&s| Field::zeros(&domain, s))
            .collect();
        let out = duhamel(&mesh, &sources, 0.0).unwrap();
        assert_eq!(out.l2(), 0.0);
    }

    #[test]
    fn duhamel_requires_mesh_node() {
        let p = params_1d();
        let mesh = TimeMesh::graded(&p, 0.8, None).unwrap();
        let domain = DomainSpec::dirichlet(vec![1.0], vec![32]).unwrap();
        let sources: Vec<Field> = mesh
            .nodes
            .iter()
            .map(|&s| Field::zeros(&domain, s))
            .collect();
        assert!(matches!(
            duhamel(&mesh, &sources, 0.5 * (mesh.nodes[0] + mesh.nodes[1])),
            Err(Error::NotOnMesh { .. })
        ));
    }

    #[test]
    fn duhamel_stationary_source_in_interaction_picture() {
        // source(s) = e^{is Lap} g has constant interaction-picture
        // integrand, so u(t) = i (s_end - t) e^{it Lap} g up to the
        // dropped tail; the trapezoid rule is exact for constants
        let p = params_1d();
        let mesh = Arc::new(TimeMesh::graded(&p, 0.7, Some(40)).unwrap());
        let domain = DomainSpec::dirichlet(vec![1.0], vec![24]).unwrap();
        let g = band_limited_noise(&domain, 6, 5);
        let sources: Vec<Field> = mesh
            .nodes
            .iter()
            .map(|&s| {
                let mut f = spectral::propagate(&g, s).unwrap();
                f.time_stamp = s;
                f
            })
            .collect();
        let t = mesh.nodes[3];
        let got = duhamel(&mesh, &sources, t).unwrap();
        let end = mesh.nodes[mesh.active_end()];
        let expect = spectral::propagate(&g, t)
            .unwrap()
            .scale(Complex64::new(0.0, end - t));
        let diff = got.add_scaled(Complex64::new(-1.0, 0.0), &expect).unwrap();
        assert!(diff.l2() / expect.l2() < 1e-12);
    }

    /// The scalar weight-integral identity: on the zero mode of a torus
    /// (the propagator is the identity there) the quadrature must
    /// reproduce int_t^T e^{-delta/(lam(T-s))} (T-s)^{-2} ds
    /// = (lam/delta) e^{-delta/(lam(T-t))} to 1e-6 relative at 200 nodes.
    #[test]
    fn duhamel_reproduces_weight_integral_identity() {
        let lam = 4.0;
        let delta = 0.1;
        let blow = 0.02;
        let p = WeightedSpaceParams::new(delta, 0.5, lam, blow, 1).unwrap();
        let mesh = TimeMesh::graded(&p, 0.9, Some(200)).unwrap();
        let domain = DomainSpec::torus(vec![1.0], vec![8]).unwrap();
        let sources: Vec<Field> = mesh
            .nodes
            .iter()
            .map(|&s| {
                let w = blow - s;
                let scalar = (-delta / (lam * w)).exp() / (w * w);
                Field::from_fn(&domain, s, |_| Complex64::new(scalar, 0.0))
            })
            .collect();
        let got = duhamel(&mesh, &sources, 0.0).unwrap();
        // a constant field on the unit torus has |value| = L2 norm
        let got_value = got.values[[0]].norm();
        let exact = lam / delta * (-delta / (lam * blow)).exp();
        assert!(
            (got_value - exact).abs() / exact < 1e-6,
            "got {got_value}, exact {exact}"
        );
    }

    #[test]
    fn duhamel_is_linear_in_the_source() {
        let p = params_1d();
        let mesh = TimeMesh::graded(&p, 0.8, Some(30)).unwrap();
        let domain = DomainSpec::dirichlet(vec![1.0], vec![16]).unwrap();
        let mk = |seed: u64| -> Vec<Field> {
            mesh.nodes
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let mut f = band_limited_noise(&domain, 6, seed + i as u64);
                    f.time_stamp = s;
                    f
                })
                .collect()
        };
        let f = mk(100);
        let g = mk(200);
        let a = Complex64::new(0.7, -0.3);
        let b = Complex64::new(-1.1, 0.2);
        let combo: Vec<Field> = f
            .iter()
            .zip(&g)
            .map(|(x, y)| x.scale(a).add_scaled(b, y).unwrap())
            .collect();
        let t = mesh.nodes[2];
        let lhs = duhamel(&mesh, &combo, t).unwrap();
        let rhs = duhamel(&mesh, &f, t)
            .unwrap()
            .scale(a)
            .add_scaled(b, &duhamel(&mesh, &g, t).unwrap())
            .unwrap();
        let diff = lhs.add_scaled(Complex64::new(-1.0, 0.0), &rhs).unwrap();
        assert!(diff.l2() <= 1e-12 * lhs.l2().max(1e-30));
    }

    #[test]
    fn weighted_distance_metric_axioms() {
        let p = params_1d();
        let mesh = Arc::new(TimeMesh::graded(&p, 0.8, Some(20)).unwrap());
        let domain = DomainSpec::dirichlet(vec![1.0], vec![16]).unwrap();
        let mk = |seed: u64, scale: f64| {
            let mut t = RemainderTrajectory::zero(&mesh, &domain);
            for (i, st) in t.states.iter_mut().enumerate() {
                // keep amplitudes inside the weight's range
                let amp = scale * (-p.exponent_l2(mesh.nodes[i])).exp();
                *st = band_limited_noise(&domain, 5, seed + i as u64)
                    .scale(Complex64::new(amp, 0.0));
                st.time_stamp = mesh.nodes[i];
            }
            t
        };
        let u = mk(1, 0.05);
        let v = mk(2, 0.05);
        let w = mk(3, 0.05);
        assert_eq!(weighted_distance(&u, &u, &p).unwrap(), 0.0);
        let duv = weighted_distance(&u, &v, &p).unwrap();
        let dvw = weighted_distance(&v, &w, &p).unwrap();
        let duw = weighted_distance(&u, &w, &p).unwrap();
        assert!(duw <= duv + dvw + 1e-15);
        assert!(duv > 0.0);
    }

    #[test]
    fn trial_trajectory_is_inside_the_ball() {
        let gs = solve_ground_state(1, 1e-8).unwrap();
        let domain = DomainSpec::dirichlet(vec![1.0], vec![64]).unwrap();
        let cfg = BubbleConfig::new(vec![vec![0.5]], 4.0, 0.02, 0.1);
        let p = params_1d();
        let mesh = Arc::new(TimeMesh::graded(&p, 0.85, None).unwrap());
        let solver = RemainderSolver::new(&cfg, &gs, p, mesh, &domain).unwrap();
        let u = solver.trial_trajectory(0.5);
        let m = u.membership(&solver.params);
        assert!((m - 0.5).abs() < 0.05, "membership {m}");
        // d(u, 0) <= 1 for a ball member
        let zero = RemainderTrajectory::zero(&solver.mesh, &domain);
        assert!(weighted_distance(&u, &zero, &solver.params).unwrap() <= 1.0);
    }

    #[test]
    fn apply_phi_matches_direct_duhamel() {
        let gs = solve_ground_state(1, 1e-8).unwrap();
        let domain = DomainSpec::dirichlet(vec![1.0], vec![64]).unwrap();
        let cfg = BubbleConfig::new(vec![vec![0.5]], 4.0, 0.02, 0.1);
        let p = params_1d();
        let mesh = Arc::new(TimeMesh::graded(&p, 0.85, None).unwrap());
        let solver = RemainderSolver::new(&cfg, &gs, p, mesh.clone(), &domain).unwrap();
        let u = solver.trial_trajectory(0.3);
        let phi = solver.apply_phi(&u).unwrap();
        // rebuild the integrand fields and integrate directly
        let end = mesh.active_end();
        let mut sources = Vec::new();
        for m in 0..mesh.len() {
            if m <= end {
                sources.push(solver.integrand(m, &u.states[m]).unwrap());
            } else {
                sources.push(Field::zeros(&domain, mesh.nodes[m]));
            }
        }
        for &m in &[0usize, 3, end - 1] {
            let direct = duhamel(&mesh, &sources, mesh.nodes[m]).unwrap();
            let diff = phi.states[m]
                .add_scaled(Complex64::new(-1.0, 0.0), &direct)
                .unwrap();
            let scale = direct.l2().max(1e-300);
            assert!(diff.l2() / scale < 1e-10, "node {m}: {}", diff.l2() / scale);
        }
    }

    #[test]
    fn no_bubbles_fixed_point_is_zero_in_one_iteration() {
        let gs = solve_ground_state(1, 1e-8).unwrap();
        let domain = DomainSpec::dirichlet(vec![1.0], vec![32]).unwrap();
        let cfg = BubbleConfig::new(vec![], 4.0, 0.02, 0.1);
        let p = params_1d();
        let mesh = Arc::new(TimeMesh::graded(&p, 0.85, None).unwrap());
        let solver = RemainderSolver::new(&cfg, &gs, p, mesh, &domain).unwrap();
        let out = solver.fixed_point(1e-8, 10).unwrap();
        assert_eq!(out.report.iterations, 1);
        assert_eq!(out.report.contraction_factor, 0.0);
        assert!(out.trajectory.states.iter().all(|f| f.l2() == 0.0));
    }
}
