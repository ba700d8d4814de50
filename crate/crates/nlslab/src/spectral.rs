//! Grids, discrete function spaces, trigonometric transforms, the exact
//! linear propagator and the norms used everywhere else.
//!
//! Dirichlet rectangles are handled in a sine basis (DST-I along each
//! axis), so the Laplacian is diagonal and `propagate` is exact and
//! unitary. The optional flat torus switches the basis to a plain
//! Fourier series. Quadrature is the rectangle rule matched to the
//! transform's orthogonality, which makes Parseval exact up to
//! roundoff.

use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{ArrayD, Axis, IxDyn};
use rayon::prelude::*;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    DirichletRectangle,
    PeriodicTorus,
}

/// A bounded axis-aligned rectangle (or flat torus) with its grid.
///
/// For the Dirichlet rectangle the grid stores interior points only:
/// axis `i` has `grid_points[i]` points at `x = (k+1) L_i/(n_i+1)`.
/// Boundary values are identically zero and are never stored.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DomainSpec {
    pub dimension: usize,
    pub kind: DomainKind,
    pub side_lengths: Vec<f64>,
    pub grid_points: Vec<usize>,
}

impl DomainSpec {
    pub fn new(
        kind: DomainKind,
        side_lengths: Vec<f64>,
        grid_points: Vec<usize>,
    ) -> Result<Self> {
        let dimension = side_lengths.len();
        if dimension == 0 || dimension > 3 {
            return Err(Error::InvalidConfig(format!(
                "dimension must be 1..=3, got {dimension}"
            )));
        }
        if grid_points.len() != dimension {
            return Err(Error::InvalidConfig(
                "side_lengths and grid_points disagree on the dimension".into(),
            ));
        }
        if side_lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidConfig("side lengths must be positive".into()));
        }
        if grid_points.iter().any(|&n| n < 8) {
            return Err(Error::InvalidConfig("need at least 8 grid points per axis".into()));
        }
        Ok(Self { dimension, kind, side_lengths, grid_points })
    }

    pub fn dirichlet(side_lengths: Vec<f64>, grid_points: Vec<usize>) -> Result<Self> {
        Self::new(DomainKind::DirichletRectangle, side_lengths, grid_points)
    }

    pub fn torus(side_lengths: Vec<f64>, grid_points: Vec<usize>) -> Result<Self> {
        Self::new(DomainKind::PeriodicTorus, side_lengths, grid_points)
    }

    pub fn shape(&self) -> &[usize] {
        &self.grid_points
    }

    pub fn num_points(&self) -> usize {
        self.grid_points.iter().product()
    }

    /// Grid spacing along one axis.
    pub fn spacing(&self, axis: usize) -> f64 {
        let n = self.grid_points[axis] as f64;
        match self.kind {
            DomainKind::DirichletRectangle => self.side_lengths[axis] / (n + 1.0),
            DomainKind::PeriodicTorus => self.side_lengths[axis] / n,
        }
    }

    /// Coordinate of grid index `k` along `axis`.
    pub fn coord(&self, axis: usize, k: usize) -> f64 {
        match self.kind {
            DomainKind::DirichletRectangle => (k as f64 + 1.0) * self.spacing(axis),
            DomainKind::PeriodicTorus => k as f64 * self.spacing(axis),
        }
    }

    /// Quadrature weight of a single grid cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dimension).map(|a| self.spacing(a)).product()
    }

    /// Discrete L2 weight of one basis mode: prod(L/2) for sines, prod(L)
    /// for the Fourier basis with 1/n-normalized coefficients.
    pub fn mode_weight(&self) -> f64 {
        match self.kind {
            DomainKind::DirichletRectangle => {
                self.side_lengths.iter().map(|l| l / 2.0).product()
            }
            DomainKind::PeriodicTorus => self.side_lengths.iter().product(),
        }
    }

    /// Signed wavenumber of stored coefficient index `j` along `axis`.
    pub fn wavenumber(&self, axis: usize, j: usize) -> f64 {
        let l = self.side_lengths[axis];
        match self.kind {
            DomainKind::DirichletRectangle => std::f64::consts::PI * (j as f64 + 1.0) / l,
            DomainKind::PeriodicTorus => {
                let n = self.grid_points[axis];
                let signed = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                2.0 * std::f64::consts::PI * signed / l
            }
        }
    }

    /// Eigenvalue mu_j of -Laplacian on the mode with stored index `idx`.
    pub fn mode_eigenvalue(&self, idx: &[usize]) -> f64 {
        (0..self.dimension)
            .map(|a| {
                let k = self.wavenumber(a, idx[a]);
                k * k
            })
            .sum()
    }

    /// True when `x` lies strictly inside the rectangle.
    pub fn contains_interior(&self, x: &[f64]) -> bool {
        x.len() == self.dimension
            && x.iter()
                .zip(&self.side_lengths)
                .all(|(&xi, &l)| xi > 0.0 && xi < l)
    }

    /// Distance from `x` to the rectangle boundary (torus: +inf).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match self.kind {
            DomainKind::PeriodicTorus => f64::INFINITY,
            DomainKind::DirichletRectangle => x
                .iter()
                .zip(&self.side_lengths)
                .map(|(&xi, &l)| xi.min(l - xi))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Complex grid function with its domain and a time stamp.
#[derive(Debug, Clone)]
pub struct Field {
    pub domain: DomainSpec,
    pub time_stamp: f64,
    pub values: ArrayD<Complex64>,
}

impl Field {
    pub fn zeros(domain: &DomainSpec, t: f64) -> Self {
        Self {
            domain: domain.clone(),
            time_stamp: t,
            values: ArrayD::zeros(IxDyn(domain.shape())),
        }
    }

    /// Builds a field by evaluating `f` at every grid point, in parallel.
    pub fn from_fn<F>(domain: &DomainSpec, t: f64, f: F) -> Self
    where
        F: Fn(&[f64]) -> Complex64 + Sync,
    {
        let shape = domain.shape().to_vec();
        let total = domain.num_points();
        let mut values = vec![Complex64::default(); total];
        values
            .par_iter_mut()
            .enumerate()
            .for_each(|(flat, v)| {
                let mut x = [0.0f64; 3];
                decode_coords(domain, &shape, flat, &mut x);
                *v = f(&x[..domain.dimension]);
            });
        Self {
            domain: domain.clone(),
            time_stamp: t,
            values: ArrayD::from_shape_vec(IxDyn(&shape), values).expect("shape"),
        }
    }

    pub fn same_domain(&self, other: &Field) -> Result<()> {
        if self.domain != other.domain {
            return Err(Error::DomainMismatch(
                "fields live on different domains".into(),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// self + a * other
    pub fn add_scaled(&self, a: Complex64, other: &Field) -> Result<Field> {
        self.same_domain(other)?;
        let mut out = self.clone();
        out.values
            .as_slice_mut()
            .unwrap()
            .par_iter_mut()
            .zip(other.values.as_slice().unwrap().par_iter())
            .for_each(|(o, &v)| *o += a * v);
        Ok(out)
    }

    pub fn scale(&self, a: Complex64) -> Field {
        let mut out = self.clone();
        out.values
            .as_slice_mut()
            .unwrap()
            .par_iter_mut()
            .for_each(|v| *v *= a);
        out
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// L2 norm by the grid quadrature rule.
    pub fn l2(&self) -> f64 {
        (self.domain.cell_volume() * self.l2_sq_unweighted()).sqrt()
    }

    fn l2_sq_unweighted(&self) -> f64 {
        // sequential sum: bitwise deterministic for every thread count
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// L2 inner product <self, other> (conjugate-linear in self).
    pub fn inner(&self, other: &Field) -> Result<Complex64> {
        self.same_domain(other)?;
        let s: Complex64 = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(s * self.domain.cell_volume())
    }

    /// L^p norm of |f| to the p-th power, by grid quadrature.
    pub fn lp_pow(&self, p: f64) -> f64 {
        self.domain.cell_volume()
            * self
                .values
                .iter()
                .map(|v| v.norm().powf(p))
                .sum::<f64>()
    }

    /// Multilinear interpolation at an interior point (Dirichlet fields
    /// use the zero boundary values for cells touching the walls).
    pub fn sample(&self, x: &[f64]) -> Complex64 {
        let dim = self.domain.dimension;
        debug_assert_eq!(x.len(), dim);
        // index coordinates: for the Dirichlet grid, node k sits at (k+1) h
        let mut base = [0isize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..dim {
            let h = self.domain.spacing(a);
            let u = match self.domain.kind {
                DomainKind::DirichletRectangle => x[a] / h - 1.0,
                DomainKind::PeriodicTorus => x[a] / h,
            };
            base[a] = u.floor() as isize;
            frac[a] = u - u.floor();
        }
        let shape = self.domain.shape();
        let mut acc = Complex64::default();
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut idx = [0usize; 3];
            let mut outside = false;
            for a in 0..dim {
                let off = (corner >> a) & 1;
                weight *= if off == 1 { frac[a] } else { 1.0 - frac[a] };
                let k = base[a] + off as isize;
                match self.domain.kind {
                    DomainKind::DirichletRectangle => {
                        if k < 0 || k >= shape[a] as isize {
                            outside = true; // boundary value: zero
                        } else {
                            idx[a] = k as usize;
                        }
                    }
                    DomainKind::PeriodicTorus => {
                        idx[a] = k.rem_euclid(shape[a] as isize) as usize;
                    }
                }
            }
            if !outside && weight != 0.0 {
                acc += weight * self.values[&idx[..dim]];
            }
        }
        acc
    }
}

/// Coefficients of the sine (Dirichlet) or Fourier (torus) expansion.
#[derive(Debug, Clone)]
pub struct SpectralCoefficients {
    pub domain: DomainSpec,
    pub time_stamp: f64,
    pub coeffs: ArrayD<Complex64>,
}

impl SpectralCoefficients {
    /// Discrete L2 norm computed on the coefficient side (Parseval).
    pub fn l2(&self) -> f64 {
        (self.domain.mode_weight()
            * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>())
        .sqrt()
    }
}

fn decode_coords(domain: &DomainSpec, shape: &[usize], flat: usize, x: &mut [f64; 3]) {
    let mut rem = flat;
    for axis in (0..shape.len()).rev() {
        let n = shape[axis];
        x[axis] = domain.coord(axis, rem % n);
        rem /= n;
    }
}

// ---------------------------------------------------------------------------
// 1D transform kernels
// ---------------------------------------------------------------------------

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

fn plan_fft(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    planner().lock().unwrap().plan_fft(len, direction)
}

/// Unnormalized DST-I sums t_j = sum_i f_i sin(pi i j/(n+1)), computed by
/// an odd extension of length 2(n+1). Its own inverse up to (n+1)/2.
struct Dst1 {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Dst1 {
    fn new(n: usize) -> Self {
        Self { n, fft: plan_fft(2 * (n + 1), FftDirection::Forward) }
    }

    fn scratch_len(&self) -> usize {
        2 * (self.n + 1) + self.fft.get_inplace_scratch_len()
    }

    fn apply(&self, lane: &mut [Complex64], scratch: &mut [Complex64]) {
        let n = self.n;
        let m = 2 * (n + 1);
        let (buf, fft_scratch) = scratch.split_at_mut(m);
        buf[0] = Complex64::default();
        buf[n + 1] = Complex64::default();
        for i in 1..=n {
            buf[i] = lane[i - 1];
            buf[m - i] = -lane[i - 1];
        }
        self.fft.process_with_scratch(buf, fft_scratch);
        let half_i = Complex64::new(0.0, 0.5);
        for j in 1..=n {
            lane[j - 1] = half_i * buf[j];
        }
    }
}

/// Evaluates cosine sums s_i = sum_j b_j cos(pi i j/(n+1)) at the interior
/// grid points, via an even extension. Used for spectral derivatives of
/// sine expansions (d/dx maps sines to cosines).
struct CosEval {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl CosEval {
    fn new(n: usize) -> Self {
        Self { n, fft: plan_fft(2 * (n + 1), FftDirection::Forward) }
    }

    fn scratch_len(&self) -> usize {
        2 * (self.n + 1) + self.fft.get_inplace_scratch_len()
    }

    fn apply(&self, lane: &mut [Complex64], scratch: &mut [Complex64]) {
        let n = self.n;
        let m = 2 * (n + 1);
        let (buf, fft_scratch) = scratch.split_at_mut(m);
        buf[0] = Complex64::default();
        buf[n + 1] = Complex64::default();
        for j in 1..=n {
            buf[j] = lane[j - 1];
            buf[m - j] = lane[j - 1];
        }
        self.fft.process_with_scratch(buf, fft_scratch);
        for i in 1..=n {
            lane[i - 1] = 0.5 * buf[i];
        }
    }
}

enum AxisKernel {
    Dst(Dst1),
    CosineEval(CosEval),
    Fourier(Arc<dyn Fft<f64>>),
}

impl AxisKernel {
    fn scratch_len(&self) -> usize {
        match self {
            AxisKernel::Dst(k) => k.scratch_len(),
            AxisKernel::CosineEval(k) => k.scratch_len(),
            AxisKernel::Fourier(f) => f.get_inplace_scratch_len(),
        }
    }

    fn apply(&self, lane: &mut [Complex64], scratch: &mut [Complex64]) {
        match self {
            AxisKernel::Dst(k) => k.apply(lane, scratch),
            AxisKernel::CosineEval(k) => k.apply(lane, scratch),
            AxisKernel::Fourier(f) => f.process_with_scratch(lane, scratch),
        }
    }
}

/// Applies a 1D kernel along `axis` for every pencil, in parallel.
fn apply_along_axis(data: &mut ArrayD<Complex64>, axis: usize, kernel: &AxisKernel) {
    let n = data.shape()[axis];
    let scratch_len = kernel.scratch_len();
    let lanes: Vec<_> = data.lanes_mut(Axis(axis)).into_iter().collect();
    lanes
        .into_par_iter()
        .for_each_init(
            || (vec![Complex64::default(); n], vec![Complex64::default(); scratch_len]),
            |(lane_buf, scratch), mut lane| {
                // lanes along a non-last axis are strided: stage into a buffer
                for (b, v) in lane_buf.iter_mut().zip(lane.iter()) {
                    *b = *v;
                }
                kernel.apply(lane_buf, scratch);
                for (v, b) in lane.iter_mut().zip(lane_buf.iter()) {
                    *v = *b;
                }
            },
        );
}

// ---------------------------------------------------------------------------
// Transform pair
// ---------------------------------------------------------------------------

/// Forward expansion of a grid field into sine/Fourier coefficients.
pub fn transform(f: &Field) -> SpectralCoefficients {
    let mut data = f.values.clone();
    for axis in 0..f.domain.dimension {
        let n = f.domain.grid_points[axis];
        match f.domain.kind {
            DomainKind::DirichletRectangle => {
                apply_along_axis(&mut data, axis, &AxisKernel::Dst(Dst1::new(n)));
                let scale = Complex64::new(2.0 / (n as f64 + 1.0), 0.0);
                data.par_mapv_inplace(|v| v * scale);
            }
            DomainKind::PeriodicTorus => {
                let fft = plan_fft(n, FftDirection::Forward);
                apply_along_axis(&mut data, axis, &AxisKernel::Fourier(fft));
                let scale = Complex64::new(1.0 / n as f64, 0.0);
                data.par_mapv_inplace(|v| v * scale);
            }
        }
    }
    SpectralCoefficients { domain: f.domain.clone(), time_stamp: f.time_stamp, coeffs: data }
}

/// Inverse of [`transform`].
pub fn inverse_transform(c: &SpectralCoefficients) -> Field {
    let mut data = c.coeffs.clone();
    for axis in 0..c.domain.dimension {
        let n = c.domain.grid_points[axis];
        match c.domain.kind {
            DomainKind::DirichletRectangle => {
                apply_along_axis(&mut data, axis, &AxisKernel::Dst(Dst1::new(n)));
            }
            DomainKind::PeriodicTorus => {
                let fft = plan_fft(n, FftDirection::Inverse);
                apply_along_axis(&mut data, axis, &AxisKernel::Fourier(fft));
            }
        }
    }
    Field { domain: c.domain.clone(), time_stamp: c.time_stamp, values: data }
}

/// Multiplies every coefficient by `g(mu_j)`.
fn apply_multiplier<G>(c: &mut SpectralCoefficients, g: G)
where
    G: Fn(f64) -> Complex64 + Sync,
{
    let domain = c.domain.clone();
    let dim = domain.dimension;
    // per-axis squared wavenumbers, then sum over the multi-index
    let axis_mu: Vec<Vec<f64>> = (0..dim)
        .map(|a| {
            (0..domain.grid_points[a])
                .map(|j| {
                    let k = domain.wavenumber(a, j);
                    k * k
                })
                .collect()
        })
        .collect();
    let shape = domain.shape().to_vec();
    c.coeffs
        .as_slice_mut()
        .unwrap()
        .par_iter_mut()
        .enumerate()
        .for_each(|(flat, v)| {
            let mut rem = flat;
            let mut mu = 0.0;
            for axis in (0..dim).rev() {
                let n = shape[axis];
                mu += axis_mu[axis][rem % n];
                rem /= n;
            }
            *v *= g(mu);
        });
}

/// Exact linear flow e^{i dt Laplacian}: each mode picks up e^{-i dt mu_j}.
pub fn propagate(f: &Field, dt: f64) -> Result<Field> {
    if !dt.is_finite() {
        return Err(Error::InvalidConfig("propagate: dt must be finite".into()));
    }
    let mut c = transform(f);
    apply_multiplier(&mut c, |mu| Complex64::from_polar(1.0, -dt * mu));
    let mut out = inverse_transform(&c);
    out.time_stamp = f.time_stamp + dt;
    Ok(out)
}

/// Spectral Laplacian.
pub fn laplacian(f: &Field) -> Field {
    let mut c = transform(f);
    apply_multiplier(&mut c, |mu| Complex64::new(-mu, 0.0));
    inverse_transform(&c)
}

/// First derivative along `axis`, evaluated back on the grid.
///
/// For the sine basis the derivative series is a cosine series; it is
/// evaluated at the same interior points. On the torus the Nyquist mode
/// is dropped, as usual for odd-order spectral derivatives.
pub fn derivative(f: &Field, axis: usize) -> Field {
    let domain = &f.domain;
    let mut c = transform(f);
    match domain.kind {
        DomainKind::DirichletRectangle => {
            let shape = domain.shape().to_vec();
            let dim = domain.dimension;
            let side = domain.side_lengths[axis];
            c.coeffs
                .as_slice_mut()
                .unwrap()
                .par_iter_mut()
                .enumerate()
                .for_each(|(flat, v)| {
                    let mut rem = flat;
                    for a in (0..dim).rev() {
                        let n = shape[a];
                        if a == axis {
                            let j = rem % n;
                            let k = std::f64::consts::PI * (j as f64 + 1.0) / side;
                            *v *= k;
                        }
                        rem /= n;
                    }
                });
            let mut data = c.coeffs;
            for a in 0..dim {
                let n = domain.grid_points[a];
                if a == axis {
                    apply_along_axis(&mut data, a, &AxisKernel::CosineEval(CosEval::new(n)));
                } else {
                    apply_along_axis(&mut data, a, &AxisKernel::Dst(Dst1::new(n)));
                }
            }
            Field { domain: domain.clone(), time_stamp: f.time_stamp, values: data }
        }
        DomainKind::PeriodicTorus => {
            let shape = domain.shape().to_vec();
            let dim = domain.dimension;
            let n_axis = domain.grid_points[axis];
            c.coeffs
                .as_slice_mut()
                .unwrap()
                .par_iter_mut()
                .enumerate()
                .for_each(|(flat, v)| {
                    let mut rem = flat;
                    for a in (0..dim).rev() {
                        let n = shape[a];
                        if a == axis {
                            let j = rem % n;
                            let k = if 2 * j == n_axis {
                                0.0
                            } else {
                                domain.wavenumber(a, j)
                            };
                            *v *= Complex64::new(0.0, k);
                        }
                        rem /= n;
                    }
                });
            inverse_transform(&c)
        }
    }
}

/// Mixed second derivative d^2/dx_i dx_j, evaluated back on the grid.
///
/// In the sine basis, d_i d_j of a mode is a product of cosines along
/// the differentiated axes (or -k^2 times the sine for i = j); the
/// result is evaluated at the interior points with the matching
/// kernels rather than by re-expanding intermediate fields.
pub fn second_derivative(f: &Field, i: usize, j: usize) -> Field {
    let domain = &f.domain;
    let dim = domain.dimension;
    let shape = domain.shape().to_vec();
    let mut c = transform(f);
    match domain.kind {
        DomainKind::DirichletRectangle => {
            let sign = if i == j { -1.0 } else { 1.0 };
            c.coeffs
                .as_slice_mut()
                .unwrap()
                .par_iter_mut()
                .enumerate()
                .for_each(|(flat, v)| {
                    let mut rem = flat;
                    let mut factor = sign;
                    for a in (0..dim).rev() {
                        let n = shape[a];
                        let jdx = rem % n;
                        if a == i {
                            factor *= domain.wavenumber(a, jdx);
                        }
                        if a == j {
                            factor *= domain.wavenumber(a, jdx);
                        }
                        rem /= n;
                    }
                    *v *= factor;
                });
            let mut data = c.coeffs;
            for a in 0..dim {
                let n = domain.grid_points[a];
                if (a == i || a == j) && i != j {
                    apply_along_axis(&mut data, a, &AxisKernel::CosineEval(CosEval::new(n)));
                } else {
                    apply_along_axis(&mut data, a, &AxisKernel::Dst(Dst1::new(n)));
                }
            }
            Field { domain: domain.clone(), time_stamp: f.time_stamp, values: data }
        }
        DomainKind::PeriodicTorus => {
            let n_i = domain.grid_points[i];
            let n_j = domain.grid_points[j];
            c.coeffs
                .as_slice_mut()
                .unwrap()
                .par_iter_mut()
                .enumerate()
                .for_each(|(flat, v)| {
                    let mut rem = flat;
                    let mut factor = Complex64::new(1.0, 0.0);
                    for a in (0..dim).rev() {
                        let n = shape[a];
                        let jdx = rem % n;
                        for (axis, n_axis) in [(i, n_i), (j, n_j)] {
                            if a == axis {
                                let k = if 2 * jdx == n_axis {
                                    0.0
                                } else {
                                    domain.wavenumber(a, jdx)
                                };
                                factor *= Complex64::new(0.0, k);
                            }
                        }
                        rem /= n;
                    }
                    *v *= factor;
                });
            inverse_transform(&c)
        }
    }
}

/// The norms used by the estimates: L2 and Linf by grid quadrature,
/// H1 = sqrt(L2^2 + |grad|^2), and H2 in its equivalent form
/// L2 + ||Hessian||_{L2} (spectrally, sqrt(sum mu^2 |c|^2)).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Norms {
    pub l2: f64,
    pub h1: f64,
    pub h2: f64,
    pub linf: f64,
}

pub fn norms(f: &Field) -> Norms {
    let c = transform(f);
    let w = f.domain.mode_weight();
    let dim = f.domain.dimension;
    let shape = f.domain.shape().to_vec();
    let axis_mu: Vec<Vec<f64>> = (0..dim)
        .map(|a| {
            (0..shape[a])
                .map(|j| {
                    let k = f.domain.wavenumber(a, j);
                    k * k
                })
                .collect()
        })
        .collect();
    let mut sum0 = 0.0;
    let mut sum1 = 0.0;
    let mut sum2 = 0.0;
    for (flat, v) in c.coeffs.iter().enumerate() {
        let mut rem = flat;
        let mut mu = 0.0;
        for axis in (0..dim).rev() {
            let n = shape[axis];
            mu += axis_mu[axis][rem % n];
            rem /= n;
        }
        let p = v.norm_sqr();
        sum0 += p;
        sum1 += mu * p;
        sum2 += mu * mu * p;
    }
    let l2 = f.l2();
    let grad_sq = w * sum1;
    let hess = (w * sum2).sqrt();
    let _ = sum0; // l2 uses the physical-space quadrature; Parseval ties them
    Norms {
        l2,
        h1: (l2 * l2 + grad_sq).sqrt(),
        h2: l2 + hess,
        linf: f.linf(),
    }
}

/// Squared L2 norm of the gradient, by spectral differentiation.
pub fn gradient_norm_sq(f: &Field) -> f64 {
    let c = transform(f);
    let w = f.domain.mode_weight();
    let dim = f.domain.dimension;
    let shape = f.domain.shape().to_vec();
    let axis_mu: Vec<Vec<f64>> = (0..dim)
        .map(|a| {
            (0..shape[a])
                .map(|j| {
                    let k = f.domain.wavenumber(a, j);
                    k * k
                })
                .collect()
        })
        .collect();
    let mut sum = 0.0;
    for (flat, v) in c.coeffs.iter().enumerate() {
        let mut rem = flat;
        let mut mu = 0.0;
        for axis in (0..dim).rev() {
            let n = shape[axis];
            mu += axis_mu[axis][rem % n];
            rem /= n;
        }
        sum += mu * v.norm_sqr();
    }
    w * sum
}

/// Fraction of spectral mass carried by the outer third of the mode
/// range on any axis. The evolution's resolution guard watches this.
pub fn tail_fraction(f: &Field) -> f64 {
    let c = transform(f);
    let dim = f.domain.dimension;
    let shape = f.domain.shape().to_vec();
    let mut total = 0.0;
    let mut tail = 0.0;
    for (flat, v) in c.coeffs.iter().enumerate() {
        let mut rem = flat;
        let mut outer = false;
        for axis in (0..dim).rev() {
            let n = shape[axis];
            let j = rem % n;
            rem /= n;
            // stored index -> effective |mode|: sines are already ordered;
            // torus indices wrap around
            let frac = match f.domain.kind {
                DomainKind::DirichletRectangle => (j + 1) as f64 / (n + 1) as f64,
                DomainKind::PeriodicTorus => {
                    let signed = if j <= n / 2 { j as f64 } else { n as f64 - j as f64 };
                    2.0 * signed / n as f64
                }
            };
            if frac > 2.0 / 3.0 {
                outer = true;
            }
        }
        let p = v.norm_sqr();
        total += p;
        if outer {
            tail += p;
        }
    }
    if total > 0.0 {
        tail / total
    } else {
        0.0
    }
}

/// Band-limited noise: random coefficients on modes below `max_mode`
/// per axis, mapped back to the grid. Deterministic in the seed; used
/// by the randomized property corpora.
pub fn band_limited_noise(domain: &DomainSpec, max_mode: usize, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = domain.shape().to_vec();
    let dim = domain.dimension;
    let mut coeffs = ArrayD::zeros(IxDyn(&shape));
    // iteration order is the row-major order of the coefficient array,
    // so the draw sequence is reproducible
    for (flat, v) in coeffs.iter_mut().enumerate() {
        let mut rem = flat;
        let mut inside = true;
        for axis in (0..dim).rev() {
            let n = shape[axis];
            let j = rem % n;
            rem /= n;
            let mode = match domain.kind {
                DomainKind::DirichletRectangle => j + 1,
                DomainKind::PeriodicTorus => {
                    if j <= n / 2 { j } else { n - j }
                }
            };
            if mode > max_mode {
                inside = false;
            }
        }
        if inside {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }
    inverse_transform(&SpectralCoefficients {
        domain: domain.clone(),
        time_stamp: 0.0,
        coeffs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom1(n: usize) -> DomainSpec {
        DomainSpec::dirichlet(vec![1.0], vec![n]).unwrap()
    }

    fn sine_mode(domain: &DomainSpec, modes: &[usize]) -> Field {
        Field::from_fn(domain, 0.0, |x| {
            let mut v = 1.0;
            for (a, &m) in modes.iter().enumerate() {
                v *= (std::f64::consts::PI * m as f64 * x[a] / domain.side_lengths[a]).sin();
            }
            Complex64::new(v, 0.0)
        })
    }

    #[test]
    fn single_sine_mode_hits_one_coefficient() {
        let d = dom1(31);
        let f = sine_mode(&d, &[1]);
        let c = transform(&f);
        assert!((c.coeffs[[0]].re - 1.0).abs() < 1e-12);
        for j in 1..31 {
            assert!(c.coeffs[[j]].norm() < 1e-12, "mode {j} leaked");
        }
    }

    #[test]
    fn zero_field_transforms_to_zero() {
        let d = DomainSpec::dirichlet(vec![2.0, 1.0], vec![16, 8]).unwrap();
        let c = transform(&Field::zeros(&d, 0.0));
        assert!(c.coeffs.iter().all(|v| v.norm() == 0.0));
    }

    /// Direct O(n^2) DST oracle on a 32-point grid.
    #[test]
    fn round_trip_matches_direct_summation() {
        let n = 32;
        let d = DomainSpec::dirichlet(vec![3.0], vec![n]).unwrap();
        let f = band_limited_noise(&d, n, 7);
        let c = transform(&f);
        // direct summation oracle for the coefficients
        for j in 1..=n {
            let mut s = Complex64::default();
            for i in 1..=n {
                let arg = std::f64::consts::PI * (i * j) as f64 / (n as f64 + 1.0);
                s += f.values[[i - 1]] * arg.sin();
            }
            s *= 2.0 / (n as f64 + 1.0);
            assert!((s - c.coeffs[[j - 1]]).norm() < 1e-12);
        }
        let back = inverse_transform(&c);
        let num: f64 = back
            .values
            .iter()
            .zip(f.values.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let den: f64 = f.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(num / den < 1e-12);
    }

    #[test]
    fn parseval_on_rectangle_and_torus() {
        for dom in [
            DomainSpec::dirichlet(vec![1.5, 0.8], vec![24, 16]).unwrap(),
            DomainSpec::torus(vec![1.5, 0.8], vec![24, 16]).unwrap(),
        ] {
            let f = band_limited_noise(&dom, 7, 42);
            let c = transform(&f);
            let a = f.l2();
            let b = c.l2();
            assert!((a - b).abs() / a < 1e-12, "kind {:?}", dom.kind);
        }
    }

    #[test]
    fn propagate_zero_dt_is_identity() {
        let d = dom1(16);
        let f = band_limited_noise(&d, 8, 3);
        let g = propagate(&f, 0.0).unwrap();
        let diff: f64 = g
            .values
            .iter()
            .zip(f.values.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-13);
    }

    #[test]
    fn propagate_eigenmode_is_global_phase() {
        let l = 2.0;
        let d = DomainSpec::dirichlet(vec![l], vec![32]).unwrap();
        let f = sine_mode(&d, &[1]);
        let t = 0.37;
        let g = propagate(&f, t).unwrap();
        let mu = (std::f64::consts::PI / l).powi(2);
        let phase = Complex64::from_polar(1.0, -t * mu);
        for (a, b) in g.values.iter().zip(f.values.iter()) {
            assert!((a - phase * b).norm() < 1e-12);
        }
    }

    #[test]
    fn propagate_is_unitary_and_a_semigroup() {
        let d = DomainSpec::dirichlet(vec![1.0, 1.0], vec![16, 16]).unwrap();
        let f = band_limited_noise(&d, 8, 11);
        let n0 = f.l2();
        let g = propagate(&f, 0.83).unwrap();
        assert!((g.l2() - n0).abs() / n0 < 1e-13);

        let ab = propagate(&f, 0.3 + 0.7).unwrap();
        let a_then_b = propagate(&propagate(&f, 0.3).unwrap(), 0.7).unwrap();
        let diff = ab.add_scaled(Complex64::new(-1.0, 0.0), &a_then_b).unwrap().l2();
        assert!(diff / n0 < 1e-12);
    }

    #[test]
    fn closed_form_norms_of_first_mode() {
        let l = 1.7;
        let d = DomainSpec::dirichlet(vec![l], vec![64]).unwrap();
        let f = sine_mode(&d, &[1]);
        let n = norms(&f);
        let l2_exact = (l / 2.0).sqrt();
        let grad_exact = (std::f64::consts::PI / l).powi(2) * l / 2.0;
        assert!((n.l2 * n.l2 - l / 2.0).abs() < 1e-12);
        assert!((gradient_norm_sq(&f) - grad_exact).abs() < 1e-12);
        assert!((n.h1 * n.h1 - (l2_exact * l2_exact + grad_exact)).abs() < 1e-12);
    }

    #[test]
    fn laplacian_of_eigenmode() {
        let l = 1.3;
        let d = DomainSpec::dirichlet(vec![l], vec![32]).unwrap();
        let f = sine_mode(&d, &[1]);
        let g = laplacian(&f);
        let mu = (std::f64::consts::PI / l).powi(2);
        for (a, b) in g.values.iter().zip(f.values.iter()) {
            assert!((a + mu * b).norm() < 1e-10);
        }
    }

    #[test]
    fn laplacian_commutes_with_propagate() {
        let d = DomainSpec::dirichlet(vec![1.0, 1.0], vec![12, 12]).unwrap();
        let f = band_limited_noise(&d, 6, 5);
        let a = laplacian(&propagate(&f, 0.21).unwrap());
        let b = propagate(&laplacian(&f), 0.21).unwrap();
        let diff = a.add_scaled(Complex64::new(-1.0, 0.0), &b).unwrap().l2();
        assert!(diff / laplacian(&f).l2().max(1e-300) < 1e-11);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // smooth band-limited field: spectral gradient vs centered differences
        let d = DomainSpec::dirichlet(vec![1.0], vec![256]).unwrap();
        let f = band_limited_noise(&d, 5, 9);
        let g = derivative(&f, 0);
        let h = d.spacing(0);
        let mut max_err = 0.0f64;
        for i in 1..255 {
            let fd = (f.values[[i + 1]] - f.values[[i - 1]]) / (2.0 * h);
            max_err = max_err.max((fd - g.values[[i]]).norm());
        }
        // centered differences are O(h^2); the field has modes up to 5
        let scale = g.linf();
        assert!(max_err / scale < 2e-3, "err {max_err}, scale {scale}");

        let fd_grad_sq: f64 = {
            // trapezoid quadrature of |centered difference|^2 as an
            // independent oracle; the boundary derivative comes from the
            // odd extension (f(-h) = -f(h)), where the gradient does not
            // vanish even though f does
            let mut s = 0.0;
            for i in 0..256 {
                let left = if i == 0 { Complex64::default() } else { f.values[[i - 1]] };
                let right = if i == 255 { Complex64::default() } else { f.values[[i + 1]] };
                s += ((right - left) / (2.0 * h)).norm_sqr();
            }
            s += 0.5 * (f.values[[0]] / h).norm_sqr();
            s += 0.5 * (f.values[[255]] / h).norm_sqr();
            s * d.cell_volume()
        };
        let spec = gradient_norm_sq(&f);
        assert!(
            (fd_grad_sq - spec).abs() / spec < 2e-3,
            "fd {fd_grad_sq} vs spectral {spec}"
        );
    }

    #[test]
    fn torus_derivative_of_plane_wave() {
        let l = 2.0;
        let d = DomainSpec::torus(vec![l], vec![32]).unwrap();
        let k = 2.0 * std::f64::consts::PI * 3.0 / l;
        let f = Field::from_fn(&d, 0.0, |x| Complex64::from_polar(1.0, k * x[0]));
        let g = derivative(&f, 0);
        for (a, b) in g.values.iter().zip(f.values.iter()) {
            assert!((a - Complex64::new(0.0, k) * b).norm() < 1e-10);
        }
    }

    #[test]
    fn tail_fraction_sees_high_modes() {
        let d = dom1(32);
        let low = sine_mode(&d, &[1]);
        assert!(tail_fraction(&low) < 1e-15);
        let high = sine_mode(&d, &[30]);
        assert!(tail_fraction(&high) > 0.99);
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(DomainSpec::dirichlet(vec![1.0], vec![4]).is_err());
        assert!(DomainSpec::dirichlet(vec![-1.0], vec![16]).is_err());
        assert!(DomainSpec::dirichlet(vec![1.0, 1.0], vec![16]).is_err());
    }
}
