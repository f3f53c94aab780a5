use achopf_cli::rates::{fit_series, FitError};

fn grid() -> Vec<f64> {
    (0..6).map(|i| 0.1 * 0.5f64.powi(i)).collect()
}

#[test]
fn pure_power_law_slope() {
    let x = grid();
    let e: Vec<f64> = x.iter().map(|h| 3.0 * h * h).collect();
    let f = fit_series(&x, &e).unwrap();
    assert!((f.fit.slope - 2.0).abs() <= 1e-12, "{}", f.fit.slope);
    assert!(f.convergent);
    assert!(f.dropped.is_empty());
}

#[test]
fn modulated_power_law_slope() {
    let x = grid();
    let e: Vec<f64> = x.iter().map(|h| h * h * (1.0 + 0.1 * h.ln().sin())).collect();
    let f = fit_series(&x, &e).unwrap();
    assert!((1.9..=2.1).contains(&f.fit.slope), "{}", f.fit.slope);
}

#[test]
fn constant_error_is_not_convergent() {
    let x = grid();
    let f = fit_series(&x, &[1e-3; 6]).unwrap();
    assert!(f.fit.slope.abs() <= 1e-12);
    assert!(!f.convergent);
}

#[test]
fn non_positive_values_are_dropped_with_warning() {
    let x = grid();
    let mut e: Vec<f64> = x.iter().map(|h| h * h).collect();
    e[1] = 0.0;
    e[4] = f64::NAN;
    let f = fit_series(&x, &e).unwrap();
    assert_eq!(f.dropped, vec![x[1], x[4]]);
    assert!((f.fit.slope - 2.0).abs() <= 1e-12);
    assert!(f.warning("err").unwrap().contains("dropped 2"));
}

#[test]
fn too_few_points_is_an_error() {
    let x = grid();
    let e = [1e-2, 0.0, -1.0, 1e-3, 0.0, f64::INFINITY];
    assert_eq!(fit_series(&x, &e), Err(FitError::TooFew(2)));
    assert_eq!(fit_series(&x[..2], &[1.0, 0.5]), Err(FitError::TooFew(2)));
    assert_eq!(fit_series(&x, &[1.0]), Err(FitError::Length(6, 1)));
}
