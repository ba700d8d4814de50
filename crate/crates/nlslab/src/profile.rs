//! The glued pseudo-conformal profile and its source terms.
//!
//! Each blow-up point x_k carries the explicit bubble
//!
//! ```text
//!   r_k(t,x) = (lam (T-t))^(-d/2) exp(i (4 - lam^2 |x-x_k|^2)
//!              / (4 lam^2 (T-t))) Q((x-x_k)/(lam (T-t))),
//! ```
//!
//! an exact free-space solution concentrating at x_k as t -> T. The
//! glued profile sum(phi_k r_k) vanishes on the boundary at the price
//! of the source term S0 supported on the cutoff annuli, and the
//! nonlinear mismatch S(u). Both are evaluated with analytic
//! derivatives of the explicit formulas; grid differencing of the
//! oscillatory phase near t -> T aliases badly.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ground_state::GroundState;
use crate::spectral::{self, DomainSpec, Field, Norms};

/// Blow-up points, common scale and time, and the cutoff radius.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BubbleConfig {
    pub points: Vec<Vec<f64>>,
    pub lambda: f64,
    pub blow_time: f64,
    /// Inner cutoff radius rho: phi_k = 1 on B(x_k, rho), 0 outside
    /// B(x_k, 2 rho).
    pub cutoff_inner_radius: f64,
}

impl BubbleConfig {
    pub fn new(points: Vec<Vec<f64>>, lambda: f64, blow_time: f64, rho: f64) -> Self {
        Self { points, lambda, blow_time, cutoff_inner_radius: rho }
    }

    pub fn outer_radius(&self) -> f64 {
        2.0 * self.cutoff_inner_radius
    }

    /// Default rho: min(min pairwise distance, 2 min boundary distance)/5,
    /// which satisfies the disjointness requirements with margin.
    pub fn default_rho(points: &[Vec<f64>], domain: &DomainSpec) -> f64 {
        let mut min_pair = f64::INFINITY;
        for (a, pa) in points.iter().enumerate() {
            for pb in points.iter().skip(a + 1) {
                min_pair = min_pair.min(dist(pa, pb));
            }
        }
        let min_boundary = points
            .iter()
            .map(|p| domain.boundary_distance(p))
            .fold(f64::INFINITY, f64::min);
        let bound = min_pair.min(2.0 * min_boundary);
        if bound.is_finite() {
            bound / 5.0
        } else {
            // single point on a torus: no geometric constraint
            domain.side_lengths.iter().cloned().fold(f64::INFINITY, f64::min) / 5.0
        }
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidConfig("need at least one blow-up point".into()));
        }
        if !(self.lambda > 0.0) || !(self.blow_time > 0.0) || !(self.cutoff_inner_radius > 0.0) {
            return Err(Error::InvalidConfig(
                "lambda, blow_time and cutoff radius must be positive".into(),
            ));
        }
        let rho = self.cutoff_inner_radius;
        for p in &self.points {
            if p.len() != domain.dimension {
                return Err(Error::CutoffGeometry(format!(
                    "point {p:?} has wrong dimension"
                )));
            }
            if !domain.contains_interior(p) {
                return Err(Error::CutoffGeometry(format!(
                    "point {p:?} is not strictly inside the domain"
                )));
            }
            if domain.boundary_distance(p) <= 2.0 * rho {
                return Err(Error::CutoffGeometry(format!(
                    "support of the cutoff at {p:?} touches the boundary"
                )));
            }
        }
        for (a, pa) in self.points.iter().enumerate() {
            for pb in self.points.iter().skip(a + 1) {
                if dist(pa, pb) <= 4.0 * rho {
                    return Err(Error::CutoffGeometry(format!(
                        "cutoff supports of {pa:?} and {pb:?} overlap"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------------------
// the C-infinity bump
// ---------------------------------------------------------------------------

fn g(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

fn g_prime(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp() / (s * s)
    } else {
        0.0
    }
}

fn g_second(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp() * (1.0 / (s * s * s * s) - 2.0 / (s * s * s))
    } else {
        0.0
    }
}

/// eta(s) = 1 for s <= 1, 0 for s >= 2, g(2-s)/(g(2-s)+g(s-1)) between.
pub fn eta(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let a = g(2.0 - s);
        a / (a + g(s - 1.0))
    }
}

pub fn eta_prime(s: f64) -> f64 {
    if s <= 1.0 || s >= 2.0 {
        0.0
    } else {
        let a = g(2.0 - s);
        let b = g(s - 1.0);
        let ap = -g_prime(2.0 - s);
        let bp = g_prime(s - 1.0);
        (ap * b - a * bp) / ((a + b) * (a + b))
    }
}

pub fn eta_second(s: f64) -> f64 {
    if s <= 1.0 || s >= 2.0 {
        0.0
    } else {
        let a = g(2.0 - s);
        let b = g(s - 1.0);
        let ap = -g_prime(2.0 - s);
        let bp = g_prime(s - 1.0);
        let app = g_second(2.0 - s);
        let bpp = g_second(s - 1.0);
        let d = a + b;
        ((app * b - a * bpp) * d - 2.0 * (ap * b - a * bp) * (ap + bp)) / (d * d * d)
    }
}

/// The smooth partition bumps phi_k sampled on the grid.
#[derive(Debug, Clone)]
pub struct CutoffFamily {
    pub config: BubbleConfig,
    /// phi_k at every grid point, one array per blow-up point.
    pub fields: Vec<Field>,
}

/// Builds the cutoff family, checking the geometry first.
pub fn build_cutoffs(cfg: &BubbleConfig, domain: &DomainSpec) -> Result<CutoffFamily> {
    cfg.validate(domain)?;
    let rho = cfg.cutoff_inner_radius;
    let fields = cfg
        .points
        .iter()
        .map(|p| {
            Field::from_fn(domain, 0.0, |x| {
                Complex64::new(eta(dist(x, p) / rho), 0.0)
            })
        })
        .collect();
    Ok(CutoffFamily { config: cfg.clone(), fields })
}

/// phi_k and its analytic radial derivatives at a point.
struct CutoffValues {
    phi: f64,
    /// d(phi)/d|x - x_k|
    dphi_dr: f64,
    laplacian: f64,
}

fn cutoff_at(rho: f64, d: usize, r: f64) -> CutoffValues {
    let s = r / rho;
    if s <= 1.0 || s >= 2.0 {
        return CutoffValues { phi: eta(s), dphi_dr: 0.0, laplacian: 0.0 };
    }
    let e1 = eta_prime(s);
    let e2 = eta_second(s);
    CutoffValues {
        phi: eta(s),
        dphi_dr: e1 / rho,
        laplacian: (e2 + (d as f64 - 1.0) * e1 / s) / (rho * rho),
    }
}

// ---------------------------------------------------------------------------
// bubbles and the glued profile
// ---------------------------------------------------------------------------

/// Bubble value and radial derivative at one grid point.
struct BubbleValues {
    value: Complex64,
    /// d(r_k)/d|x - x_k|
    radial_derivative: Complex64,
}

struct BubbleEval<'a> {
    gs: &'a GroundState,
    center: &'a [f64],
    width: f64,
    t_to_blowup: f64,
    amplitude: f64,
    global_phase: f64,
}

impl<'a> BubbleEval<'a> {
    fn new(cfg: &'a BubbleConfig, gs: &'a GroundState, k: usize, t: f64) -> Self {
        let d = gs.dimension;
        let t_to_blowup = cfg.blow_time - t;
        let width = cfg.lambda * t_to_blowup;
        Self {
            gs,
            center: &cfg.points[k],
            width,
            t_to_blowup,
            amplitude: width.powf(-(d as f64) / 2.0),
            global_phase: 1.0 / (cfg.lambda * cfg.lambda * t_to_blowup),
        }
    }

    /// (4 - lam^2 r^2)/(4 lam^2 (T-t)) split into the global part and
    /// the radial chirp.
    fn phase(&self, r: f64) -> f64 {
        self.global_phase - r * r / (4.0 * self.t_to_blowup)
    }

    fn eval(&self, x: &[f64]) -> BubbleValues {
        let r = dist(x, self.center);
        let q = self.gs.evaluate(r / self.width);
        let qp = self.gs.evaluate_gradient(r / self.width);
        let osc = Complex64::from_polar(self.amplitude, self.phase(r));
        BubbleValues {
            value: osc * q,
            radial_derivative: osc
                * Complex64::new(qp / self.width, -r * q / (2.0 * self.t_to_blowup)),
        }
    }
}

fn check_pre_blowup(cfg: &BubbleConfig, t: f64) -> Result<()> {
    if t >= cfg.blow_time {
        return Err(Error::PostBlowup { t, blow_time: cfg.blow_time });
    }
    Ok(())
}

/// The free bubble r_k(t) on the whole grid, without any cutoff.
pub fn bubble(
    cfg: &BubbleConfig,
    gs: &GroundState,
    k: usize,
    t: f64,
    domain: &DomainSpec,
) -> Result<Field> {
    check_pre_blowup(cfg, t)?;
    let eval = BubbleEval::new(cfg, gs, k, t);
    Ok(Field::from_fn(domain, t, |x| eval.eval(x).value))
}

/// The glued profile r_lam(t) = sum_k phi_k r_k(t). Exactly zero
/// outside the cutoff balls, so the Dirichlet boundary values vanish
/// identically.
pub fn glued_profile(
    cfg: &BubbleConfig,
    gs: &GroundState,
    t: f64,
    domain: &DomainSpec,
) -> Result<Field> {
    check_pre_blowup(cfg, t)?;
    let rho = cfg.cutoff_inner_radius;
    let mut out = Field::zeros(domain, t);
    let shape = domain.shape().to_vec();
    for k in 0..cfg.points.len() {
        let eval = BubbleEval::new(cfg, gs, k, t);
        let center = cfg.points[k].clone();
        out.values
            .as_slice_mut()
            .unwrap()
            .par_iter_mut()
            .enumerate()
            .for_each(|(flat, v)| {
                let mut x = [0.0f64; 3];
                decode(domain, &shape, flat, &mut x);
                let x = &x[..domain.dimension];
                let r = dist(x, &center);
                if r < 2.0 * rho {
                    let phi = eta(r / rho);
                    if phi > 0.0 {
                        *v += phi * eval.eval(x).value;
                    }
                }
            });
    }
    Ok(out)
}

fn decode(domain: &DomainSpec, shape: &[usize], flat: usize, x: &mut [f64; 3]) {
    let mut rem = flat;
    for axis in (0..shape.len()).rev() {
        let n = shape[axis];
        x[axis] = domain.coord(axis, rem % n);
        rem /= n;
    }
}

// ---------------------------------------------------------------------------
// nonlinearity
// ---------------------------------------------------------------------------

/// f(z) = |z|^(4/d) z. Exact products for the integer powers d = 1, 2.
pub fn nonlinearity(d: usize, z: Complex64) -> Complex64 {
    match d {
        1 => z * z * z * z.conj() * z.conj(),
        2 => z * z * z.conj(),
        _ => {
            let m = z.norm();
            if m == 0.0 {
                Complex64::default()
            } else {
                m.powf(4.0 / d as f64) * z
            }
        }
    }
}

/// f(r+u) - f(r), computed without the catastrophic cancellation the
/// naive difference suffers when |u| << |r| (near the blow-up time the
/// remainder is smaller than the profile by e^{-delta/(lam(T-t))}).
pub fn nonlinear_difference(d: usize, r: Complex64, u: Complex64) -> Complex64 {
    match d {
        1 => {
            // (r+u)^3 conj(r+u)^2 - r^3 conj(r)^2, expanded so the leading
            // term cancels symbolically
            let (rb, ub) = (r.conj(), u.conj());
            let d3 = 3.0 * r * r * u + 3.0 * r * u * u + u * u * u;
            let d2 = 2.0 * rb * ub + ub * ub;
            r * r * r * d2 + d3 * rb * rb + d3 * d2
        }
        2 => {
            let (rb, ub) = (r.conj(), u.conj());
            let d2 = 2.0 * r * u + u * u;
            r * r * ub + d2 * rb + d2 * ub
        }
        _ => {
            let rm = r.norm();
            if rm == 0.0 {
                return nonlinearity(d, u);
            }
            if u.norm() > 1e-8 * rm {
                nonlinearity(d, r + u) - nonlinearity(d, r)
            } else {
                // first-order Taylor: dz f = (2/d+1)|z|^(4/d),
                // dzbar f = (2/d)|z|^(4/d-2) z^2; relative error O(|u|/|r|)
                let e = 4.0 / d as f64;
                let c = 2.0 / d as f64;
                let unit = r / rm;
                let m4 = rm.powf(e);
                (c + 1.0) * m4 * u + c * m4 * unit * unit * u.conj()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// source terms
// ---------------------------------------------------------------------------

/// S0(t): the gluing cost. Supported on the annuli rho <= |x-x_k| <= 2 rho;
/// on the plateau phi_k = 1 the cubic terms cancel exactly and the cutoff
/// derivatives vanish, so S0 is assembled per-annulus as
///
/// ```text
///   phi (1 - phi^(4/d)) |r_k|^(4/d) r_k - r_k Lap(phi) - 2 (dphi/dn)(dr_k/dn)
/// ```
///
/// with analytic derivatives of both factors.
pub fn source_s0(
    cfg: &BubbleConfig,
    gs: &GroundState,
    t: f64,
    domain: &DomainSpec,
) -> Result<Field> {
    check_pre_blowup(cfg, t)?;
    let d = gs.dimension;
    let rho = cfg.cutoff_inner_radius;
    let e = 4.0 / d as f64;
    let mut out = Field::zeros(domain, t);
    let shape = domain.shape().to_vec();
    for k in 0..cfg.points.len() {
        let eval = BubbleEval::new(cfg, gs, k, t);
        let center = cfg.points[k].clone();
        out.values
            .as_slice_mut()
            .unwrap()
            .par_iter_mut()
            .enumerate()
            .for_each(|(flat, v)| {
                let mut x = [0.0f64; 3];
                decode(domain, &shape, flat, &mut x);
                let x = &x[..domain.dimension];
                let r = dist(x, &center);
                if r <= rho || r >= 2.0 * rho {
                    return;
                }
                let cut = cutoff_at(rho, d, r);
                let bub = eval.eval(x);
                let cubic = bub.value.norm().powf(e) * bub.value;
                *v += cut.phi * (1.0 - cut.phi.powf(e)) * cubic
                    - bub.value * cut.laplacian
                    - 2.0 * cut.dphi_dr * bub.radial_derivative;
            });
    }
    Ok(out)
}

/// S(u)(t) = |r_lam|^(4/d) r_lam - |u + r_lam|^(4/d)(u + r_lam),
/// pointwise against a precomputed glued profile.
pub fn source_s_with_profile(profile: &Field, u: &Field, dimension: usize) -> Result<Field> {
    profile.same_domain(u)?;
    let mut out = profile.clone();
    out.values
        .as_slice_mut()
        .unwrap()
        .par_iter_mut()
        .zip(u.values.as_slice().unwrap().par_iter())
        .for_each(|(rv, &uv)| {
            *rv = -nonlinear_difference(dimension, *rv, uv);
        });
    Ok(out)
}

/// S(u)(t), building the glued profile at t internally.
pub fn source_s(
    cfg: &BubbleConfig,
    gs: &GroundState,
    t: f64,
    u: &Field,
    domain: &DomainSpec,
) -> Result<Field> {
    let profile = glued_profile(cfg, gs, t, domain)?;
    source_s_with_profile(&profile, u, gs.dimension)
}

// ---------------------------------------------------------------------------
// derivative identities of the nonlinearity
// ---------------------------------------------------------------------------

pub struct NonlinearityDerivatives {
    /// d_i f(u) for each axis, from the first-derivative identity.
    pub first: Vec<Field>,
    /// d_i d_j f(u), row-major over (i, j), from the second-derivative
    /// identity.
    pub second: Vec<Field>,
}

/// Near-zero regularization: below this modulus the expansion terms
/// carrying inverse powers of |u| are set to zero (their u-power
/// prefactors vanish faster).
const EPS_MODULUS: f64 = 1e-30;

fn unit_dir(u: Complex64) -> Complex64 {
    let m = u.norm();
    if m < EPS_MODULUS {
        Complex64::default()
    } else {
        u / m
    }
}

/// Expands d_i(|u|^(4/d) u) and d_ij(|u|^(4/d) u) in powers of |u|,
/// with all derivatives of u taken spectrally. Matching these fields
/// against direct spectral differentiation of the composite is a grid
/// check of the two identities.
pub fn nonlinearity_derivatives(u: &Field, dimension: usize) -> NonlinearityDerivatives {
    let e = 4.0 / dimension as f64;
    let c = 2.0 / dimension as f64;
    let dim = u.domain.dimension;
    let grads: Vec<Field> = (0..dim).map(|a| spectral::derivative(u, a)).collect();

    let first = (0..dim)
        .map(|i| {
            let mut out = u.clone();
            out.values
                .as_slice_mut()
                .unwrap()
                .par_iter_mut()
                .zip(grads[i].values.as_slice().unwrap().par_iter())
                .for_each(|(uv, &du)| {
                    let m = uv.norm();
                    let unit = unit_dir(*uv);
                    // (2/d+1) du |u|^(4/d) + (2/d) conj(du) |u|^(4/d-2) u^2
                    *uv = (c + 1.0) * du * m.powf(e)
                        + c * du.conj() * m.powf(e) * unit * unit;
                });
            out
        })
        .collect();

    let mut second = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            let hess = spectral::second_derivative(u, i, j);
            let mut out = u.clone();
            let di = grads[i].values.as_slice().unwrap();
            let dj = grads[j].values.as_slice().unwrap();
            let hij = hess.values.as_slice().unwrap();
            out.values
                .as_slice_mut()
                .unwrap()
                .par_iter_mut()
                .enumerate()
                .for_each(|(idx, uv)| {
                    let m = uv.norm();
                    let unit = unit_dir(*uv);
                    let (du_i, du_j, duu) = (di[idx], dj[idx], hij[idx]);
                    // every monomial is rewritten with nonnegative powers of
                    // |u| times unit vectors, e.g. |u|^(4/d-2) u = |u|^(4/d-1) unit
                    let m_e = m.powf(e);
                    let m_e1 = m.powf(e - 1.0).min(f64::MAX);
                    let t1 = duu * m_e;
                    let t2 = c * du_i * du_j * m_e1 * unit.conj();
                    let t3 = c * du_i.conj() * du_j * m_e1 * unit;
                    let t4 = (c + 1.0) * du_i * du_j.conj() * m_e1 * unit;
                    let t5 = duu.conj() * m_e * unit * unit;
                    let t6 = (c - 1.0) * du_i.conj() * du_j.conj() * m_e1 * unit * unit * unit;
                    *uv = (c + 1.0) * (t1 + t2 + t3) + c * (t4 + t5 + t6);
                });
            second.push(out);
        }
    }
    NonlinearityDerivatives { first, second }
}

/// |u|^(4/d) u as a grid field.
pub fn nonlinearity_field(u: &Field, dimension: usize) -> Field {
    let mut out = u.clone();
    out.values
        .as_slice_mut()
        .unwrap()
        .par_iter_mut()
        .for_each(|v| *v = nonlinearity(dimension, *v));
    out
}

// ---------------------------------------------------------------------------
// the three estimates of the nonlinearity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct Lemma1Ratios {
    /// ||f(u)-f(v)||_L2 / (||u-v||_L2 (||u||_inf + ||v||_inf)^(4/d))
    pub ratio_i: f64,
    /// ||f(u)-f(v)||_H1 / (||u-v||_H2 (||u||_H2 + ||v||_H2)^(4/d))
    pub ratio_ii: f64,
    /// ||f(u)||_H2 / ||u||_H2^(1+4/d)
    pub ratio_iii: f64,
}

/// Left-hand sides of the three nonlinearity estimates divided by their
/// right-hand sides without the constant. A randomized corpus caps
/// these ratios; each is invariant under (u, v) -> (cu, cv).
pub fn check_lemma1(u: &Field, v: &Field, dimension: usize) -> Result<Lemma1Ratios> {
    u.same_domain(v)?;
    let e = 4.0 / dimension as f64;
    let fu = nonlinearity_field(u, dimension);
    let fv = nonlinearity_field(v, dimension);
    let diff_f = fu.add_scaled(Complex64::new(-1.0, 0.0), &fv)?;
    let diff_uv = u.add_scaled(Complex64::new(-1.0, 0.0), v)?;

    let nu: Norms = spectral::norms(u);
    let nv = spectral::norms(v);
    let ndiff_f = spectral::norms(&diff_f);
    let ndiff = spectral::norms(&diff_uv);
    let nfu = spectral::norms(&fu);

    let ratio = |lhs: f64, rhs: f64| -> Result<f64> {
        if rhs == 0.0 {
            if lhs <= 1e-14 {
                Ok(0.0)
            } else {
                Err(Error::DegenerateRatio)
            }
        } else {
            Ok(lhs / rhs)
        }
    };

    Ok(Lemma1Ratios {
        ratio_i: ratio(ndiff_f.l2, ndiff.l2 * (nu.linf + nv.linf).powf(e))?,
        ratio_ii: ratio(ndiff_f.h1, ndiff.h2 * (nu.h2 + nv.h2).powf(e))?,
        ratio_iii: ratio(nfu.h2, nu.h2.powf(1.0 + e))?,
    })
}
