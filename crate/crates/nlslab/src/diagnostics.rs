//! Blow-up diagnostics: local masses, the total mass identity,
//! concentration in measure and the gradient growth rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::line_fit_through_origin;
use crate::ground_state::GroundState;
use crate::profile::BubbleConfig;
use crate::spectral::{self, Field};

/// Integral of |h|^2 over the closed ball B(center, radius) by grid
/// quadrature over the ball mask.
pub fn local_mass(h: &Field, center: &[f64], radius: f64) -> Result<f64> {
    let domain = &h.domain;
    if center.len() != domain.dimension {
        return Err(Error::InvalidConfig("center has wrong dimension".into()));
    }
    if domain.boundary_distance(center) < radius {
        return Err(Error::InvalidConfig(format!(
            "ball of radius {radius} at {center:?} exits the domain"
        )));
    }
    let shape = domain.shape().to_vec();
    let mut sum = 0.0;
    for (flat, v) in h.values.iter().enumerate() {
        let mut rem = flat;
        let mut r2 = 0.0;
        for axis in (0..domain.dimension).rev() {
            let n = shape[axis];
            let dx = domain.coord(axis, rem % n) - center[axis];
            r2 += dx * dx;
            rem /= n;
        }
        if r2 <= radius * radius {
            sum += v.norm_sqr();
        }
    }
    Ok(sum * domain.cell_volume())
}

/// Relative deviation |  ||h||_L2 - sqrt(p) ||Q||  | / (sqrt(p) ||Q||).
pub fn total_mass_identity(h: &Field, p: usize, gs: &GroundState) -> f64 {
    let expect = (p as f64).sqrt() * gs.l2_norm();
    (h.l2() - expect).abs() / expect
}

/// | int |h(t)|^2 psi - ||Q||^2 sum_k psi(x_k) | for each test function,
/// one series per psi over the given fields.
pub fn measure_convergence(
    series: &[Field],
    test_functions: &[Field],
    points: &[Vec<f64>],
    gs: &GroundState,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(test_functions.len());
    for psi in test_functions {
        let psi_at_points: f64 = points.iter().map(|p| psi.sample(p).re).sum();
        let target = gs.l2_norm_sq * psi_at_points;
        let mut errors = Vec::with_capacity(series.len());
        for h in series {
            h.same_domain(psi)?;
            let pairing: f64 = h
                .values
                .iter()
                .zip(psi.values.iter())
                .map(|(hv, pv)| hv.norm_sqr() * pv.re)
                .sum::<f64>()
                * h.domain.cell_volume();
            errors.push((pairing - target).abs());
        }
        out.push(errors);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub r2: f64,
    /// lam/(sqrt(p) ||grad Q||), the predicted slope.
    pub predicted: f64,
}

/// Fits 1/||grad h(t)|| = slope (T - t) through the origin. The blow-up
/// speed asserts slope = lam/(sqrt(p) ||grad Q||) asymptotically.
pub fn gradient_rate_fit(
    series: &[(f64, f64)],
    lambda: f64,
    blow_time: f64,
    p: usize,
    gs: &GroundState,
) -> Result<RateFit> {
    if series.len() < 5 {
        return Err(Error::TooFewSamples { need: 5, got: series.len() });
    }
    let xs: Vec<f64> = series.iter().map(|&(t, _)| blow_time - t).collect();
    let ys: Vec<f64> = series.iter().map(|&(_, g)| 1.0 / g).collect();
    let (slope, r2) = line_fit_through_origin(&xs, &ys);
    Ok(RateFit {
        slope,
        r2,
        predicted: lambda / ((p as f64).sqrt() * gs.grad_l2_norm()),
    })
}

/// The assembled diagnostics of one profile or trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlowupReport {
    pub times: Vec<f64>,
    pub ball_radius: f64,
    pub lambda: f64,
    pub blow_time: f64,
    pub num_points: usize,
    pub ground_state_mass_sq: f64,
    /// local mass series per blow-up point.
    pub local_masses: Vec<Vec<f64>>,
    pub total_mass: Vec<f64>,
    /// |pairing - limit| series per test function.
    pub measure_errors: Vec<Vec<f64>>,
    pub gradient_l2: Vec<f64>,
    pub rate_fit: RateFit,
}

/// Runs every part-(2) diagnostic on a stored series of fields.
pub fn analyze(
    times: &[f64],
    series: &[Field],
    cfg: &BubbleConfig,
    gs: &GroundState,
    ball_radius: f64,
    test_functions: &[Field],
) -> Result<BlowupReport> {
    if times.len() != series.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![times.len()],
            got: vec![series.len()],
        });
    }
    let mut local_masses = vec![Vec::with_capacity(series.len()); cfg.points.len()];
    let mut total_mass = Vec::with_capacity(series.len());
    let mut gradient_l2 = Vec::with_capacity(series.len());
    for h in series {
        for (k, p) in cfg.points.iter().enumerate() {
            local_masses[k].push(local_mass(h, p, ball_radius)?);
        }
        total_mass.push(h.l2());
        gradient_l2.push(spectral::gradient_norm_sq(h).sqrt());
    }
    let measure_errors = measure_convergence(series, test_functions, &cfg.points, gs)?;
    let grad_series: Vec<(f64, f64)> = times
        .iter()
        .copied()
        .zip(gradient_l2.iter().copied())
        .collect();
    let rate_fit = gradient_rate_fit(
        &grad_series,
        cfg.lambda,
        cfg.blow_time,
        cfg.points.len(),
        gs,
    )?;
    Ok(BlowupReport {
        times: times.to_vec(),
        ball_radius,
        lambda: cfg.lambda,
        blow_time: cfg.blow_time,
        num_points: cfg.points.len(),
        ground_state_mass_sq: gs.l2_norm_sq,
        local_masses,
        total_mass,
        measure_errors,
        gradient_l2,
        rate_fit,
    })
}

impl BlowupReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Self-contained gnuplot script with the four panels: local masses,
    /// total mass, measure pairing errors, gradient growth rate.
    pub fn gnuplot_script(&self) -> String {
        let mut s = String::new();
        s.push_str("set terminal pngcairo size 1200,900\n");
        s.push_str("set output 'blowup_report.png'\n");
        s.push_str("set multiplot layout 2,2\n\n");

        s.push_str("$local << EOD\n");
        for (i, &t) in self.times.iter().enumerate() {
            let cols: Vec<String> = self
                .local_masses
                .iter()
                .map(|m| format!("{}", m[i]))
                .collect();
            s.push_str(&format!("{} {}\n", self.blow_time - t, cols.join(" ")));
        }
        s.push_str("EOD\n");
        s.push_str("set logscale x\nset xlabel 'T - t'\nset ylabel 'local mass'\n");
        s.push_str(&format!(
            "set title 'local masses vs ||Q||^2 = {:.6}'\n",
            self.ground_state_mass_sq
        ));
        s.push_str("plot for [k=2:*] $local using 1:k with linespoints title sprintf('x_%d', k-1), \\\n");
        s.push_str(&format!("     {:.12} with lines dt 2 title '||Q||^2'\n\n", self.ground_state_mass_sq));

        s.push_str("$total << EOD\n");
        for (i, &t) in self.times.iter().enumerate() {
            s.push_str(&format!("{} {}\n", self.blow_time - t, self.total_mass[i]));
        }
        s.push_str("EOD\n");
        let target = (self.num_points as f64).sqrt() * self.ground_state_mass_sq.sqrt();
        s.push_str("set title 'total mass vs sqrt(p)||Q||'\n");
        s.push_str("plot $total using 1:2 with linespoints title '||h||', \\\n");
        s.push_str(&format!("     {target:.12} with lines dt 2 title 'sqrt(p)||Q||'\n\n"));

        s.push_str("$measure << EOD\n");
        for (i, &t) in self.times.iter().enumerate() {
            let cols: Vec<String> = self
                .measure_errors
                .iter()
                .map(|m| format!("{}", m[i]))
                .collect();
            s.push_str(&format!("{} {}\n", self.blow_time - t, cols.join(" ")));
        }
        s.push_str("EOD\n");
        s.push_str("set logscale y\nset title 'measure pairing errors'\n");
        s.push_str("plot for [k=2:*] $measure using 1:k with linespoints title sprintf('psi_%d', k-1)\n\n");

        s.push_str("$grad << EOD\n");
        for (i, &t) in self.times.iter().enumerate() {
            s.push_str(&format!(
                "{} {}\n",
                self.blow_time - t,
                1.0 / self.gradient_l2[i]
            ));
        }
        s.push_str("EOD\n");
        s.push_str("unset logscale y\n");
        s.push_str(&format!(
            "set title 'rate: fit {:.5}, predicted {:.5} (r2 = {:.6})'\n",
            self.rate_fit.slope, self.rate_fit.predicted, self.rate_fit.r2
        ));
        s.push_str("set ylabel '1/||grad h||'\n");
        s.push_str(&format!(
            "plot $grad using 1:2 with points title 'measured', {:.12}*x with lines title 'fit'\n",
            self.rate_fit.slope
        ));
        s.push_str("unset multiplot\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    use crate::ground_state::solve_ground_state;
    use crate::profile::{glued_profile, BubbleConfig};
    use crate::spectral::{band_limited_noise, DomainSpec};

    #[test]
    fn local_mass_zero_and_disjoint_bump() {
        let d = DomainSpec::dirichlet(vec![1.0], vec![128]).unwrap();
        let zero = Field::zeros(&d, 0.0);
        assert_eq!(local_mass(&zero, &[0.5], 0.1).unwrap(), 0.0);

        // bump supported outside the ball contributes nothing
        let f = Field::from_fn(&d, 0.0, |x| {
            if (x[0] - 0.85).abs() < 0.05 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::default()
            }
        });
        assert_eq!(local_mass(&f, &[0.3], 0.2).unwrap(), 0.0);
        assert!(local_mass(&f, &[0.85], 0.1).unwrap() > 0.0);
    }

    #[test]
    fn local_mass_rejects_escaping_ball() {
        let d = DomainSpec::dirichlet(vec![1.0], vec![64]).unwrap();
        let f = Field::zeros(&d, 0.0);
        assert!(local_mass(&f, &[0.1], 0.3).is_err());
    }

    #[test]
    fn quadrature_additivity_of_ball_masses() {
        let d = DomainSpec::dirichlet(vec![1.0], vec![200]).unwrap();
        let f = band_limited_noise(&d, 10, 3);
        let total = f.l2().powi(2);
        let b1 = local_mass(&f, &[0.25], 0.2).unwrap();
        let b2 = local_mass(&f, &[0.75], 0.2).unwrap();
        // complement via an explicit mask sum
        let mut outside = 0.0;
        for (i, v) in f.values.iter().enumerate() {
            let x = d.coord(0, i);
            if (x - 0.25).abs() > 0.2 && (x - 0.75).abs() > 0.2 {
                outside += v.norm_sqr();
            }
        }
        outside *= d.cell_volume();
        assert!((b1 + b2 + outside - total).abs() < 1e-12 * total);
    }

    #[test]
    fn constant_test_function_reduces_to_total_mass() {
        let d = DomainSpec::dirichlet(vec![1.0], vec![255]).unwrap();
        let gs = solve_ground_state(1, 1e-8).unwrap();
        let cfg = BubbleConfig::new(vec![vec![0.5]], 4.0, 0.01, 0.1);
        let h = glued_profile(&cfg, &gs, 0.009, &d).unwrap();
        // psi = 1 sampled on the grid (not a Dirichlet function; only its
        // grid values enter the pairing)
        let one = Field::from_fn(&d, 0.0, |_| Complex64::new(1.0, 0.0));
        let errs = measure_convergence(
            std::slice::from_ref(&h),
            std::slice::from_ref(&one),
            &cfg.points,
            &gs,
        )
        .unwrap();
        let expect = (h.l2().powi(2) - gs.l2_norm_sq).abs();
        assert!((errs[0][0] - expect).abs() < 1e-12 * gs.l2_norm_sq);

        // psi = 0 gives identically zero errors
        let zero = Field::zeros(&d, 0.0);
        let errs = measure_convergence(&[h], &[zero], &cfg.points, &gs).unwrap();
        assert_eq!(errs[0][0], 0.0);
    }

    #[test]
    fn rate_fit_recovers_exact_law_and_needs_samples() {
        let gs = solve_ground_state(1, 1e-8).unwrap();
        let lam = 3.0;
        let blow = 0.5;
        let p = 1;
        // synthetic series obeying the law exactly
        let series: Vec<(f64, f64)> = (1..=10)
            .map(|i| {
                let t = blow - 0.01 * i as f64;
                let g = (p as f64).sqrt() * gs.grad_l2_norm() / (lam * (blow - t));
                (t, g)
            })
            .collect();
        let fit = gradient_rate_fit(&series, lam, blow, p, &gs).unwrap();
        assert!((fit.slope - fit.predicted).abs() / fit.predicted < 1e-12);
        assert!(fit.r2 > 0.999999);

        assert!(matches!(
            gradient_rate_fit(&series[..4], lam, blow, p, &gs),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn gradient_norm_is_phase_invariant() {
        let d = DomainSpec::dirichlet(vec![1.0], vec![64]).unwrap();
        let f = band_limited_noise(&d, 8, 17);
        let rotated = f.scale(Complex64::from_polar(1.0, 1.234));
        let a = spectral::gradient_norm_sq(&f);
        let b = spectral::gradient_norm_sq(&rotated);
        assert!((a - b).abs() / a < 1e-13);
    }

    #[test]
    fn report_serializes_and_emits_gnuplot() {
        let gs = solve_ground_state(1, 1e-8).unwrap();
        let d = DomainSpec::dirichlet(vec![1.0], vec![255]).unwrap();
        let cfg = BubbleConfig::new(vec![vec![0.5]], 4.0, 0.01, 0.1);
        let times: Vec<f64> = (1..=6).map(|i| cfg.blow_time - 1e-3 / i as f64).collect();
        let series: Vec<Field> = times
            .iter()
            .map(|&t| glued_profile(&cfg, &gs, t, &d).unwrap())
            .collect();
        let psi = Field::from_fn(&d, 0.0, |x| {
            Complex64::new((-((x[0] - 0.5) / 0.1).powi(2)).exp(), 0.0)
        });
        let report = analyze(&times, &series, &cfg, &gs, 0.1, &[psi]).unwrap();
        let json = report.to_json().unwrap();
        assert!(json.contains("rate_fit"));
        let script = report.gnuplot_script();
        assert!(script.contains("multiplot"));
        assert!(script.contains("$grad"));
    }
}
