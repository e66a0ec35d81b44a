use nalgebra::{DMatrix, DVector};

use super::MetricsError;

/// Least-squares fit `y ≈ intercept + X·coefficients`.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Centered coefficient of determination, `1 - SS_res / SS_tot`.
    pub r_squared: f64,
}

/// Tolerance on the diagonal of R for unit-norm centered columns.
const RANK_TOL: f64 = 1e-10;

/// Fits with an intercept. `x` has one row per observation.
///
/// The design is centered, each column scaled to unit norm, and solved by QR,
/// so the fit and its rank test do not depend on column units.
pub fn ols_regression(y: &[f64], x: &DMatrix<f64>) -> Result<OlsFit, MetricsError> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(MetricsError::Shape(format!("{} rows but {} observations", n, y.len())));
    }
    if n < p + 2 {
        return Err(MetricsError::TooFewObservations { needed: p + 2, got: n });
    }
    let ymean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ymean));
    let ss_tot = yc.norm_squared();
    if ss_tot == 0.0 || !ss_tot.is_finite() {
        return Err(MetricsError::DegenerateResponse);
    }

    let means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let mut xc = x.clone();
    let mut scales = vec![0.0; p];
    for j in 0..p {
        let mut col = xc.column_mut(j);
        col.add_scalar_mut(-means[j]);
        let norm = col.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(MetricsError::SingularDesign);
        }
        col /= norm;
        scales[j] = norm;
    }

    let qr = xc.clone().qr();
    let r = qr.r();
    if (0..p).any(|i| r[(i, i)].abs() < RANK_TOL) {
        return Err(MetricsError::SingularDesign);
    }
    let qty = qr.q().transpose() * &yc;
    let beta_scaled = r.solve_upper_triangular(&qty).ok_or(MetricsError::SingularDesign)?;
    let coefficients: Vec<f64> = (0..p).map(|j| beta_scaled[j] / scales[j]).collect();
    let intercept = ymean - (0..p).map(|j| coefficients[j] * means[j]).sum::<f64>();

    let fitted = &xc * &beta_scaled;
    let ss_res = (yc - fitted).norm_squared();
    Ok(OlsFit {
        coefficients,
        intercept,
        r_squared: 1.0 - ss_res / ss_tot,
    })
}

/// Same as [`ols_regression`] with regressors given column by column.
pub fn ols_columns(y: &[f64], columns: &[Vec<f64>]) -> Result<OlsFit, MetricsError> {
    let n = y.len();
    if let Some(c) = columns.iter().find(|c| c.len() != n) {
        return Err(MetricsError::Shape(format!(
            "column of length {} for {n} observations",
            c.len()
        )));
    }
    let x = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    ols_regression(y, &x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        let fit = ols_columns(&y, &[x]).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(
            ols_columns(&[4.0; 10], std::slice::from_ref(&x)),
            Err(MetricsError::DegenerateResponse)
        );
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let dup: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        assert_eq!(ols_columns(&y, &[x.clone(), dup]), Err(MetricsError::SingularDesign));
        assert_eq!(ols_columns(&y, &[vec![1.0; 10]]), Err(MetricsError::SingularDesign));
        assert!(matches!(
            ols_columns(&y[..3], &[x[..3].to_vec(), x[..3].to_vec()]),
            Err(MetricsError::TooFewObservations { needed: 4, got: 3 })
        ));
    }
}
