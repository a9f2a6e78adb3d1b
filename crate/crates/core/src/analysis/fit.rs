//! Histograms and least-squares Gaussian fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-width histogram over `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Lower edge of the first bin.
    pub lo: f64,
    /// Upper edge of the last bin.
    pub hi: f64,
    /// Entries per bin.
    pub counts: Vec<f64>,
}

impl Histogram {
    /// Bins `data` into `bins` equal intervals; values outside `[lo, hi)` are dropped.
    pub fn new(data: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidInput(format!("bad histogram range [{lo}, {hi}) with {bins} bins")));
        }
        let mut counts = vec![0.0; bins];
        let w = (hi - lo) / bins as f64;
        for &v in data {
            if v >= lo && v < hi {
                let i = (((v - lo) / w) as usize).min(bins - 1);
                counts[i] += 1.0;
            }
        }
        Ok(Self { lo, hi, counts })
    }

    /// Bin width.
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    /// Bin centres.
    pub fn centers(&self) -> Vec<f64> {
        let w = self.width();
        (0..self.counts.len()).map(|i| self.lo + (i as f64 + 0.5) * w).collect()
    }

    /// Total entries.
    pub fn entries(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Result of a Levenberg-Marquardt minimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct LmFit {
    /// Best-fit parameters.
    pub params: Vec<f64>,
    /// Parameter covariance from the inverse curvature matrix.
    pub covariance: Vec<Vec<f64>>,
    /// Weighted sum of squared residuals.
    pub chi2: f64,
    /// Degrees of freedom.
    pub dof: usize,
    /// Iterations used.
    pub iterations: usize,
}

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for k in col..n {
                        a[row][k] -= f * a[col][k];
                    }
                    b[row] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let cols: Option<Vec<Vec<f64>>> = (0..n)
        .map(|j| {
            let e = (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
            solve(a.to_vec(), e)
        })
        .collect();
    let cols = cols?;
    Some((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

/// Weighted least squares of `model` to points `(x, y)` with standard
/// deviations `sd`. The model returns its value and fills the parameter
/// gradient.
pub fn levenberg_marquardt<F>(model: F, x: &[f64], y: &[f64], sd: &[f64], p0: &[f64]) -> Result<LmFit>
where
    F: Fn(f64, &[f64], &mut [f64]) -> f64,
{
    let m = p0.len();
    if x.len() != y.len() || x.len() != sd.len() {
        return Err(Error::InvalidInput("fit inputs differ in length".into()));
    }
    if x.len() <= m {
        return Err(Error::Fit(format!("{} points cannot constrain {m} parameters", x.len())));
    }
    let mut grad = vec![0.0; m];
    let chi2_of = |p: &[f64], grad: &mut [f64]| -> f64 {
        x.iter().zip(y).zip(sd).map(|((&xi, &yi), &si)| ((yi - model(xi, p, grad)) / si).powi(2)).sum()
    };
    let mut p = p0.to_vec();
    let mut chi2 = chi2_of(&p, &mut grad);
    if !chi2.is_finite() {
        return Err(Error::Fit("initial parameters give a non-finite residual".into()));
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 1000 {
        iterations += 1;
        let mut a = vec![vec![0.0; m]; m];
        let mut g = vec![0.0; m];
        for ((&xi, &yi), &si) in x.iter().zip(y).zip(sd) {
            let r = (yi - model(xi, &p, &mut grad)) / si;
            for j in 0..m {
                let gj = grad[j] / si;
                g[j] += gj * r;
                for k in 0..=j {
                    a[j][k] += gj * grad[k] / si;
                }
            }
        }
        for j in 0..m {
            for k in 0..j {
                a[k][j] = a[j][k];
            }
        }
        let mut damped = a.clone();
        for j in 0..m {
            damped[j][j] += lambda * a[j][j].max(1e-300);
        }
        let Some(step) = solve(damped, g) else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
            continue;
        };
        let trial: Vec<f64> = p.iter().zip(&step).map(|(a, b)| a + b).collect();
        let trial_chi2 = chi2_of(&trial, &mut grad);
        if trial_chi2.is_finite() && trial_chi2 <= chi2 {
            let gain = chi2 - trial_chi2;
            p = trial;
            chi2 = trial_chi2;
            lambda = (lambda / 10.0).max(1e-12);
            let small_step = step.iter().zip(&p).all(|(s, v)| s.abs() <= 1e-10 * (v.abs() + 1e-12));
            if gain <= 1e-10 * chi2.max(1e-300) || small_step {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                // No downhill step exists at any damping: a stationary point.
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::Fit(format!("no convergence after {iterations} iterations, chi2 = {chi2:.4e}")));
    }
    let mut a = vec![vec![0.0; m]; m];
    for (&xi, &si) in x.iter().zip(sd) {
        model(xi, &p, &mut grad);
        for j in 0..m {
            for k in 0..m {
                a[j][k] += grad[j] * grad[k] / (si * si);
            }
        }
    }
    let covariance = invert(&a).ok_or_else(|| Error::Fit("singular curvature matrix at the solution".into()))?;
    Ok(LmFit { params: p, covariance, chi2, dof: x.len() - m, iterations })
}

/// Gaussian `a exp(-(x - mu)^2 / (2 s^2))` and its gradient in `(a, mu, s)`.
pub fn gaussian_model(x: f64, p: &[f64], grad: &mut [f64]) -> f64 {
    let (a, mu, s) = (p[0], p[1], p[2]);
    let u = (x - mu) / s;
    let e = (-0.5 * u * u).exp();
    grad[0] = e;
    grad[1] = a * e * u / s;
    grad[2] = a * e * u * u / s;
    a * e
}

/// Sum of two Gaussians with parameters `(a1, mu1, s1, a2, mu2, s2)`.
pub fn double_gaussian_model(x: f64, p: &[f64], grad: &mut [f64]) -> f64 {
    let (g1, g2) = grad.split_at_mut(3);
    gaussian_model(x, &p[..3], g1) + gaussian_model(x, &p[3..], g2)
}

/// Agreement between a fitted model and its histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitQuality {
    /// Model describes the data.
    Good,
    /// Large reduced chi-square or a width inconsistent with the window.
    Poor,
}

/// Single-Gaussian fit to a histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    /// Peak height in entries per bin.
    pub amplitude: f64,
    /// Centroid.
    pub mean: f64,
    /// Uncertainty of the centroid.
    pub mean_err: f64,
    /// Standard deviation, always positive.
    pub sigma: f64,
    /// Uncertainty of the standard deviation.
    pub sigma_err: f64,
    /// Fitted peak area in entries.
    pub area: f64,
    /// Uncertainty of the area.
    pub area_err: f64,
    /// Reduced chi-square.
    pub chi2_per_dof: f64,
    /// Entries inside the fitted range.
    pub entries: f64,
    /// Verdict on the fit.
    pub quality: FitQuality,
}

/// Reduced chi-square above which a fit is flagged poor.
pub const POOR_FIT_CHI2: f64 = 5.0;

fn poisson_sd(counts: &[f64]) -> Vec<f64> {
    counts.iter().map(|&c| c.max(1.0).sqrt()).collect()
}

/// Fits one Gaussian to every bin of `hist`.
pub fn fit_gaussian_histogram(hist: &Histogram) -> Result<GaussianFit> {
    let x = hist.centers();
    let y = &hist.counts;
    let total = hist.entries();
    if total < 3.0 {
        return Err(Error::Fit("too few entries to fit".into()));
    }
    let mean = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / total;
    let var = x.iter().zip(y).map(|(a, b)| b * (a - mean).powi(2)).sum::<f64>() / total;
    let peak = y.iter().cloned().fold(0.0, f64::max);
    let p0 = [peak, mean, var.sqrt().max(hist.width() * 0.5)];
    let fit = levenberg_marquardt(gaussian_model, &x, y, &poisson_sd(y), &p0)?;
    let (a, mu, s) = (fit.params[0], fit.params[1], fit.params[2].abs());
    let c = &fit.covariance;
    let norm = (2.0 * std::f64::consts::PI).sqrt() / hist.width();
    let area = a * s * norm;
    let area_var = norm.powi(2) * (s * s * c[0][0] + a * a * c[2][2] + 2.0 * a * s * c[0][2] * fit.params[2].signum());
    let chi2_per_dof = fit.chi2 / fit.dof as f64;
    let span = hist.hi - hist.lo;
    let quality = if chi2_per_dof > POOR_FIT_CHI2 || s > 0.5 * span || mu < hist.lo || mu > hist.hi || a <= 0.0 {
        FitQuality::Poor
    } else {
        FitQuality::Good
    };
    Ok(GaussianFit {
        amplitude: a,
        mean: mu,
        mean_err: c[1][1].max(0.0).sqrt(),
        sigma: s,
        sigma_err: c[2][2].max(0.0).sqrt(),
        area,
        area_err: area_var.max(0.0).sqrt(),
        chi2_per_dof,
        entries: total,
        quality,
    })
}

/// Fits a Gaussian to the values of `data` inside `[lo, hi)`.
pub fn fit_photopeak(data: &[f64], lo: f64, hi: f64, bins: usize) -> Result<GaussianFit> {
    fit_gaussian_histogram(&Histogram::new(data, lo, hi, bins)?)
}

/// Median of a non-empty slice.
pub fn median(data: &[f64]) -> f64 {
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean and sample standard deviation.
pub fn mean_sd(data: &[f64]) -> (f64, f64) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = if data.len() > 1 { data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Distribution of paired differences `a - b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceStats {
    /// Number of pairs.
    pub n: usize,
    /// Sample mean of the differences.
    pub mean: f64,
    /// Sample standard deviation of the differences.
    pub std_dev: f64,
    /// Gaussian fit to the difference histogram; absent when all differences coincide.
    pub fit: Option<GaussianFit>,
}

impl DifferenceStats {
    /// Fitted width, or the sample width when no fit was possible.
    pub fn sigma(&self) -> f64 {
        self.fit.as_ref().map_or(self.std_dev, |f| f.sigma)
    }

    /// Fitted centroid, or the sample mean when no fit was possible.
    pub fn centre(&self) -> f64 {
        self.fit.as_ref().map_or(self.mean, |f| f.mean)
    }

    /// Uncertainty of [`Self::centre`].
    pub fn centre_err(&self) -> f64 {
        self.fit.as_ref().map_or(self.std_dev / (self.n as f64).sqrt(), |f| f.mean_err)
    }
}

/// Histogram bins used for difference distributions.
pub const DIFFERENCE_BINS: usize = 100;

/// Histograms and fits the differences of two equally long samples. The
/// histogram spans five robust standard deviations around the median.
pub fn difference_stats(a: &[f64], b: &[f64]) -> Result<DifferenceStats> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), found: b.len() });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    distribution_stats(&d)
}

/// Histograms and fits a sample of differences.
pub fn distribution_stats(d: &[f64]) -> Result<DifferenceStats> {
    if d.is_empty() {
        return Err(Error::InvalidInput("no differences to analyse".into()));
    }
    let (mean, std_dev) = mean_sd(d);
    let centre = median(d);
    let dev: Vec<f64> = d.iter().map(|v| (v - centre).abs()).collect();
    let spread = 1.4826 * median(&dev);
    let spread = if spread > 0.0 { spread } else { std_dev };
    if spread == 0.0 || d.len() < 10 {
        return Ok(DifferenceStats { n: d.len(), mean, std_dev, fit: None });
    }
    let bins = DIFFERENCE_BINS.min(d.len() / 5).max(10);
    let hist = Histogram::new(d, centre - 5.0 * spread, centre + 5.0 * spread, bins)?;
    let fit = fit_gaussian_histogram(&hist)?;
    Ok(DifferenceStats { n: d.len(), mean, std_dev, fit: Some(fit) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn normal_sample(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn solver_handles_pivoting() {
        let x = solve(vec![vec![0.0, 2.0], vec![3.0, 1.0]], vec![4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        assert!(solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 1.0]).is_none());
    }

    #[test]
    fn exact_gaussian_is_recovered() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| 100.0 * (-0.5 * ((v - 21.3) / 4.2f64).powi(2)).exp()).collect();
        let sd = vec![1.0; 50];
        let fit = levenberg_marquardt(gaussian_model, &x, &y, &sd, &[80.0, 20.0, 6.0]).unwrap();
        assert!((fit.params[1] - 21.3).abs() < 1e-8);
        assert!((fit.params[2].abs() - 4.2).abs() < 1e-8);
    }

    #[test]
    fn photopeak_width_is_recovered() {
        let data = normal_sample(50_000, 662.0, 13.5, 5);
        let fit = fit_photopeak(&data, 600.0, 724.0, 62).unwrap();
        assert!((fit.mean - 662.0).abs() < 0.3);
        assert!((fit.sigma - 13.5).abs() < 0.25);
        assert_eq!(fit.quality, FitQuality::Good);
        assert!((fit.area / 50_000.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn uniform_data_is_flagged_poor() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<f64> = (0..20_000).map(|_| rand::Rng::random_range(&mut rng, 0.0..100.0)).collect();
        match fit_photopeak(&data, 0.0, 100.0, 50) {
            Ok(fit) => assert_eq!(fit.quality, FitQuality::Poor),
            Err(Error::Fit(_)) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn identical_samples_have_zero_spread() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let s = difference_stats(&a, &a).unwrap();
        assert_eq!(s.sigma(), 0.0);
        assert!(s.fit.is_none());
    }

    #[test]
    fn gaussian_differences_are_fitted() {
        let a = normal_sample(20_000, 0.0, 1.0, 7);
        let noise = normal_sample(20_000, 0.0, 0.3, 8);
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + e).collect();
        let s = difference_stats(&b, &a).unwrap();
        assert!((s.sigma() / 0.3 - 1.0).abs() < 0.05);
    }
}
