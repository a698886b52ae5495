//! Local density of states, line-shape fits and fidelity-decay fits.

use std::f64::consts::PI;
use std::fmt;

use crate::echo::FidelityCurve;
use crate::error::{Error, Result};
use crate::matops::{eig_unitary, EigenSystem, UnitaryMatrix};
use crate::stats::polyfit;

pub const DEFAULT_LDOS_BINS: usize = 201;
pub const DEFAULT_F_FLOOR: f64 = 0.01;
/// Largest `|c2| W^2 / (|c1| W)` still classified as exponential.
pub const CURVATURE_THRESHOLD: f64 = 0.15;
const MIN_FIT_POINTS: usize = 5;

/// Density over eigenangle differences on `[-pi, pi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LdosHistogram {
    bin_edges: Vec<f64>,
    densities: Vec<f64>,
    dim: usize,
}

impl LdosHistogram {
    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_bins(&self) -> usize {
        self.densities.len()
    }

    pub fn bin_width(&self) -> f64 {
        2.0 * PI / self.n_bins() as f64
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.densities.iter().sum::<f64>() * self.bin_width()
    }
}

fn bin_edges(n_bins: usize) -> Vec<f64> {
    let w = 2.0 * PI / n_bins as f64;
    (0..=n_bins).map(|i| -PI + i as f64 * w).collect()
}

/// Bin of `x` after wrapping into `[-pi, pi)`.
fn bin_index(x: f64, n_bins: usize) -> usize {
    let y = (x + PI).rem_euclid(2.0 * PI);
    ((y / (2.0 * PI) * n_bins as f64) as usize).min(n_bins - 1)
}

/// LDOS from precomputed eigensystems: weight `|<v_m|v'_n>|^2` placed at
/// `phi_m - phi'_n`.
pub fn ldos_from_eigen(e: &EigenSystem, ep: &EigenSystem, n_bins: usize) -> Result<LdosHistogram> {
    if n_bins == 0 {
        return Err(Error::invalid("n_bins", "must be at least 1"));
    }
    if e.dim() != ep.dim() {
        return Err(Error::DimensionMismatch {
            context: "ldos",
            expected: e.dim(),
            found: ep.dim(),
        });
    }
    let n = e.dim();
    let overlaps = e.vectors.adjoint_mul(&ep.vectors);
    let mut mass = vec![0.0; n_bins];
    // column by column so the summation order is fixed
    for col in 0..n {
        for (m, z) in overlaps.column(col).iter().enumerate() {
            mass[bin_index(e.values[m] - ep.values[col], n_bins)] += z.norm_sqr();
        }
    }
    let total: f64 = mass.iter().sum();
    let width = 2.0 * PI / n_bins as f64;
    Ok(LdosHistogram {
        bin_edges: bin_edges(n_bins),
        densities: mass.iter().map(|m| m / (total * width)).collect(),
        dim: n,
    })
}

/// LDOS between `U` and `U_p`, normalised to unit mass.
pub fn ldos(u: &UnitaryMatrix, up: &UnitaryMatrix, n_bins: usize) -> Result<LdosHistogram> {
    for m in [u, up] {
        let violation = m.matrix().unitarity_violation();
        if violation > crate::matops::UNITARY_TOL {
            return Err(Error::NotUnitary { violation });
        }
    }
    if u.dim() != up.dim() {
        return Err(Error::DimensionMismatch {
            context: "ldos",
            expected: u.dim(),
            found: up.dim(),
        });
    }
    ldos_from_eigen(&eig_unitary(u)?, &eig_unitary(up)?, n_bins)
}

/// Bin-wise mean of normalised histograms with a common binning.
pub fn average_histograms(hists: &[LdosHistogram]) -> Result<LdosHistogram> {
    let Some(first) = hists.first() else {
        return Err(Error::invalid("histograms", "nothing to average"));
    };
    let mut sum = vec![0.0; first.n_bins()];
    for h in hists {
        if h.n_bins() != first.n_bins() {
            return Err(Error::DimensionMismatch {
                context: "histogram bins",
                expected: first.n_bins(),
                found: h.n_bins(),
            });
        }
        for (s, d) in sum.iter_mut().zip(&h.densities) {
            *s += d;
        }
    }
    Ok(LdosHistogram {
        bin_edges: first.bin_edges.clone(),
        densities: sum.iter().map(|s| s / hists.len() as f64).collect(),
        dim: first.dim,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineShape {
    Lorentzian,
    Gaussian,
}

impl LineShape {
    /// Unit-area profile; `width` is the FWHM for a Lorentzian and sigma for a
    /// Gaussian.
    pub fn density(self, x: f64, center: f64, width: f64) -> f64 {
        let d = x - center;
        match self {
            LineShape::Lorentzian => (width / (2.0 * PI)) / (d * d + 0.25 * width * width),
            LineShape::Gaussian => {
                (-d * d / (2.0 * width * width)).exp() / ((2.0 * PI).sqrt() * width)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LineShape::Lorentzian => "lorentzian",
            LineShape::Gaussian => "gaussian",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LdosFit {
    pub model: LineShape,
    pub width: f64,
    pub center: f64,
    pub rss: f64,
}

fn rss(shape: LineShape, xs: &[f64], ys: &[f64], center: f64, width: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| (shape.density(x, center, width) - y).powi(2))
        .sum()
}

/// Least-squares fit of a unit-area line shape to the bin densities by
/// Levenberg-Marquardt, with the width held at or above one bin width.
pub fn fit_ldos(hist: &LdosHistogram, model: LineShape) -> Result<LdosFit> {
    let fit_err = |reason: String| Error::Fit {
        model: model.name(),
        reason,
    };
    let xs = hist.bin_centers();
    let ys = hist.densities();
    let w_min = hist.bin_width();
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(fit_err("non-finite density".into()));
    }
    let (peak_idx, &peak) = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| fit_err("empty histogram".into()))?;
    if peak <= 0.0 {
        return Err(fit_err("histogram has no mass".into()));
    }
    let fwhm = ys.iter().filter(|&&y| y >= 0.5 * peak).count() as f64 * w_min;
    let mut center = xs[peak_idx];
    let mut width = match model {
        LineShape::Lorentzian => fwhm,
        LineShape::Gaussian => fwhm / (8.0 * 2f64.ln()).sqrt(),
    }
    .max(w_min);

    let residuals = |c: f64, w: f64| -> Vec<f64> {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| model.density(x, c, w) - y)
            .collect()
    };
    let mut current = rss(model, &xs, ys, center, width);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..500 {
        let r = residuals(center, width);
        let hc = 1e-7 * (1.0 + center.abs());
        let hw = 1e-7 * width;
        let jc: Vec<f64> = xs
            .iter()
            .map(|&x| (model.density(x, center + hc, width) - model.density(x, center - hc, width)) / (2.0 * hc))
            .collect();
        let jw: Vec<f64> = xs
            .iter()
            .map(|&x| (model.density(x, center, width + hw) - model.density(x, center, width - hw)) / (2.0 * hw))
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let (a11, a12, a22) = (dot(&jc, &jc), dot(&jc, &jw), dot(&jw, &jw));
        let (g1, g2) = (dot(&jc, &r), dot(&jw, &r));
        let mut improved = false;
        while lambda < 1e12 {
            let (b11, b22) = (a11 * (1.0 + lambda), a22 * (1.0 + lambda));
            let det = b11 * b22 - a12 * a12;
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let dc = -(b22 * g1 - a12 * g2) / det;
            let dw = -(b11 * g2 - a12 * g1) / det;
            let nc = center + dc;
            let nw = (width + dw).max(w_min);
            let trial = rss(model, &xs, ys, nc, nw);
            if trial.is_finite() && trial <= current {
                let gain = current - trial;
                center = nc;
                width = nw;
                current = trial;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if gain <= 1e-14 * current.max(1e-300) || (dc.abs() < 1e-12 && dw.abs() < 1e-12) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step at any damping: a stationary point
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !(converged && center.is_finite() && width.is_finite() && current.is_finite()) {
        return Err(fit_err(format!(
            "did not converge (center {center}, width {width}, rss {current})"
        )));
    }
    Ok(LdosFit {
        model,
        width,
        center,
        rss: current,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayClass {
    Exponential,
    FasterThanExponential,
    SlowerThanExponential,
}

impl fmt::Display for DecayClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecayClass::Exponential => "exponential",
            DecayClass::FasterThanExponential => "faster_than_exponential",
            DecayClass::SlowerThanExponential => "slower_than_exponential",
        })
    }
}

/// Linear and quadratic fits of `ln F(t)` on `t = t_lo..=t_hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    /// `-slope` of the linear fit.
    pub rate: f64,
    pub intercept: f64,
    /// Quadratic coefficient of the quadratic fit.
    pub c2: f64,
    /// Linear coefficient of the quadratic fit.
    pub c1: f64,
    /// Coefficient of determination of the linear fit.
    pub r_squared: f64,
    pub t_lo: usize,
    pub t_hi: usize,
}

impl DecayFit {
    pub fn window_len(&self) -> f64 {
        (self.t_hi - self.t_lo) as f64
    }

    /// `|c2| W^2 / (|c1| W)`.
    pub fn curvature_ratio(&self) -> f64 {
        let w = self.window_len();
        (self.c2.abs() * w * w) / (self.c1.abs() * w)
    }

    pub fn class(&self) -> DecayClass {
        let w = self.window_len();
        if self.c2.abs() * w * w <= CURVATURE_THRESHOLD * self.c1.abs() * w {
            DecayClass::Exponential
        } else if self.c2 < 0.0 {
            DecayClass::FasterThanExponential
        } else {
            DecayClass::SlowerThanExponential
        }
    }
}

/// Fits `ln F` from `t = 1` to the last `t` with `F >= f_floor`.
pub fn fit_exponential_decay(curve: &FidelityCurve, f_floor: f64) -> Result<DecayFit> {
    let fit_err = |reason: String| Error::Fit {
        model: "exponential",
        reason,
    };
    if !(f_floor > 0.0 && f_floor < 1.0) {
        return Err(Error::invalid("f_floor", format!("must lie in (0, 1), got {f_floor}")));
    }
    let f = curve.values();
    let t_hi = (1..f.len())
        .rev()
        .find(|&t| f[t] >= f_floor)
        .ok_or_else(|| fit_err(format!("no point with F >= {f_floor} after t = 0")))?;
    let t_lo = 1;
    if t_hi + 1 - t_lo < MIN_FIT_POINTS {
        return Err(fit_err(format!(
            "window [{t_lo}, {t_hi}] has fewer than {MIN_FIT_POINTS} points"
        )));
    }
    let ts: Vec<f64> = (t_lo..=t_hi).map(|t| t as f64).collect();
    let mut ys = Vec::with_capacity(ts.len());
    for t in t_lo..=t_hi {
        if f[t] <= 0.0 {
            return Err(fit_err(format!("F({t}) = {} inside the window", f[t])));
        }
        ys.push(f[t].ln());
    }
    let lin = polyfit(&ts, &ys, 1).ok_or_else(|| fit_err("singular linear fit".into()))?;
    let quad = polyfit(&ts, &ys, 2).ok_or_else(|| fit_err("singular quadratic fit".into()))?;
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = ts
        .iter()
        .zip(&ys)
        .map(|(t, y)| (y - lin[0] - lin[1] * t).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(DecayFit {
        rate: -lin[1],
        intercept: lin[0],
        c2: quad[2],
        c1: quad[1],
        r_squared: r_squared.min(1.0),
        t_lo,
        t_hi,
    })
}

pub fn classify_decay(curve: &FidelityCurve, f_floor: f64) -> Result<DecayClass> {
    Ok(fit_exponential_decay(curve, f_floor)?.class())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::sample_cue;
    use crate::matops::{c64, cis, ComplexMatrix};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Cauchy, Distribution, Normal};

    fn curve(mut f: impl FnMut(f64) -> f64, steps: usize) -> FidelityCurve {
        FidelityCurve::from_values((0..=steps).map(|t| if t == 0 { 1.0 } else { f(t as f64) }).collect())
            .unwrap()
    }

    fn sample_hist(samples: impl Iterator<Item = f64>, n_bins: usize) -> LdosHistogram {
        let mut mass = vec![0.0; n_bins];
        let mut total = 0.0;
        for x in samples {
            mass[bin_index(x, n_bins)] += 1.0;
            total += 1.0;
        }
        let w = 2.0 * PI / n_bins as f64;
        LdosHistogram {
            bin_edges: bin_edges(n_bins),
            densities: mass.iter().map(|m| m / (total * w)).collect(),
            dim: 0,
        }
    }

    #[test]
    fn identical_operators_put_all_mass_at_zero() {
        let u = sample_cue(24, 3).unwrap();
        let h = ldos(&u, &u, 201).unwrap();
        let zero = bin_index(0.0, 201);
        assert!((h.densities()[zero] * h.bin_width() - 1.0).abs() < 1e-9);
        assert_eq!(zero, 100);
    }

    #[test]
    fn rigid_shift_moves_mass() {
        let d: Vec<c64> = [0.3, -1.1, 2.0, 0.9].iter().map(|&p| cis(-p)).collect();
        let u = UnitaryMatrix::new(ComplexMatrix::from_diagonal(&d)).unwrap();
        let alpha = 0.5;
        let up = UnitaryMatrix::new(u.matrix().scale(cis(-alpha))).unwrap();
        let h = ldos(&u, &up, 201).unwrap();
        // U_p eigenangles are phi + alpha, so every difference is -alpha
        let b = bin_index(-alpha, 201);
        assert!((h.densities()[b] * h.bin_width() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ldos_rejects_non_unitary() {
        let bad = UnitaryMatrix::from_trusted(ComplexMatrix::identity(3).scale(c64::new(2.0, 0.0)));
        assert!(ldos(&bad, &UnitaryMatrix::identity(3), 11).is_err());
    }

    #[test]
    fn synthetic_lorentzian_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cauchy = Cauchy::new(0.0, 0.1).unwrap();
        let h = sample_hist((0..400_000).map(|_| cauchy.sample(&mut rng)), 201);
        let fit = fit_ldos(&h, LineShape::Lorentzian).unwrap();
        assert!((fit.width - 0.2).abs() < 0.05 * 0.2, "{fit:?}");
    }

    #[test]
    fn synthetic_gaussian_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let normal = Normal::new(0.2, 0.1).unwrap();
        let h = sample_hist((0..400_000).map(|_| normal.sample(&mut rng)), 201);
        let fit = fit_ldos(&h, LineShape::Gaussian).unwrap();
        assert!((fit.width - 0.1).abs() < 0.05 * 0.1, "{fit:?}");
        assert!((fit.center - 0.2).abs() < 0.01);
    }

    #[test]
    fn spike_width_is_floored_at_bin_width() {
        let h = sample_hist(std::iter::repeat_n(0.0, 100), 201);
        for model in [LineShape::Lorentzian, LineShape::Gaussian] {
            let fit = fit_ldos(&h, model).unwrap();
            assert!(fit.width >= h.bin_width());
        }
    }

    #[test]
    fn exact_exponential() {
        let fit = fit_exponential_decay(&curve(|t| (-0.3 * t).exp(), 100), 0.01).unwrap();
        assert!((fit.rate - 0.3).abs() < 1e-9);
        assert!(fit.c2.abs() < 1e-9);
        assert_eq!(fit.class(), DecayClass::Exponential);
    }

    #[test]
    fn gaussian_decay_is_faster() {
        let c = curve(|t| (-(t / 10.0).powi(2)).exp(), 100);
        let fit = fit_exponential_decay(&c, 0.01).unwrap();
        assert!(fit.c2 < 0.0);
        assert_eq!(classify_decay(&c, 0.01).unwrap(), DecayClass::FasterThanExponential);
        let c = curve(|t| (-0.01 * t * t).exp(), 100);
        assert_eq!(classify_decay(&c, 0.01).unwrap(), DecayClass::FasterThanExponential);
        let c = curve(|t| (-0.2 * t).exp(), 100);
        assert_eq!(classify_decay(&c, 0.01).unwrap(), DecayClass::Exponential);
    }

    #[test]
    fn power_law_is_slower() {
        let c = curve(|t| (1.0 + t).powf(-2.0), 150);
        assert_eq!(classify_decay(&c, 0.01).unwrap(), DecayClass::SlowerThanExponential);
    }

    #[test]
    fn short_window_rejected() {
        let c = curve(|t| (-3.0 * t).exp(), 50);
        assert!(matches!(fit_exponential_decay(&c, 0.01), Err(Error::Fit { .. })));
    }

    #[test]
    fn noisy_exponentials_classify_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let g: f64 = rng.random_range(0.03..0.3);
            let c = curve(|t| (-g * t).exp() * (1.0 + 0.01 * (rng.random::<f64>() - 0.5) * 2.0), 150);
            assert_eq!(classify_decay(&c, 0.01).unwrap(), DecayClass::Exponential);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ldos_mass_phase_and_swap(seed in any::<u64>(), a in -3.0f64..3.0) {
            let u = sample_cue(12, seed).unwrap();
            let up = sample_cue(12, seed ^ 0xABCD).unwrap();
            let h = ldos(&u, &up, 51).unwrap();
            prop_assert!((h.total_mass() - 1.0).abs() < 1e-6);
            let shifted = ldos(
                &UnitaryMatrix::from_trusted(u.matrix().scale(cis(a))),
                &UnitaryMatrix::from_trusted(up.matrix().scale(cis(a))),
                51,
            ).unwrap();
            prop_assert!((shifted.total_mass() - 1.0).abs() < 1e-6);
            let swapped = ldos(&up, &u, 51).unwrap();
            for i in 0..51 {
                prop_assert!((swapped.densities()[i] - h.densities()[50 - i]).abs() < 1e-12);
            }
        }

        #[test]
        fn rate_independent_of_floor(g in 0.01f64..1.0, floor in 1e-4f64..0.5) {
            let steps = ((-floor.ln() / g).ceil() as usize + 10).max(10);
            let c = curve(|t| (-g * t).exp(), steps);
            if let Ok(fit) = fit_exponential_decay(&c, floor) {
                prop_assert!((fit.rate - g).abs() / g < 1e-6);
            }
        }

        #[test]
        fn classification_is_time_scale_invariant(a in 0.001f64..0.05, b in 0.0f64..0.01, s in 1usize..4) {
            let base = curve(|t| (-a * t - b * t * t).exp(), 60);
            let scaled = curve(|t| (-a * t / s as f64 - b * (t / s as f64).powi(2)).exp(), 60 * s);
            let floor = 1e-9;
            if let (Ok(x), Ok(y)) = (fit_exponential_decay(&base, floor), fit_exponential_decay(&scaled, floor)) {
                if (x.curvature_ratio() / CURVATURE_THRESHOLD - 1.0).abs() > 0.05 {
                    prop_assert_eq!(x.class(), y.class());
                }
            }
        }
    }
}
