//! Small least-squares helpers shared by the slope and rate fits.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Residual standard error of the fit.
    pub stderr: f64,
}

/// Ordinary least squares `y ~ intercept + slope * x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = (xs.len() as f64 - 2.0).max(1.0);
    LinearFit { slope, intercept, stderr: (ss / dof).sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 - 0.5 * x).collect();
        let f = linear_fit(&xs, &ys);
        assert!((f.slope + 0.5).abs() < 1e-15);
        assert!((f.intercept - 2.5).abs() < 1e-15);
        assert!(f.stderr < 1e-15);
    }
}
