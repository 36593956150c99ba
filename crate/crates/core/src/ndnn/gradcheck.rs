//! Central finite differences, used as the independent oracle for every
//! analytic backward pass.

/// `(f(+h) - f(-h)) / 2h` where `f` receives the signed perturbation.
pub fn central_difference(step: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(step) - f(-step)) / (2.0 * step)
}

/// Symmetric relative error with a floor so exact zeros compare cleanly.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        diff
    } else {
        diff / scale
    }
}
