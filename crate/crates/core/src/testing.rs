use nalgebra::DVector;

use crate::density::DensityEval;

/// Central finite-difference check of an analytic gradient.
pub fn fd_check(f: impl Fn(&DVector<f64>) -> DensityEval, x: &DVector<f64>, tol: f64) {
    let e = f(x);
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (f(&xp).log_p - f(&xm).log_p) / (2.0 * h);
        let scale = fd.abs().max(e.grad[i].abs()).max(1.0);
        assert!(
            (fd - e.grad[i]).abs() <= tol * scale,
            "coordinate {i} at {x:?}: analytic {} vs fd {fd}",
            e.grad[i]
        );
    }
}

/// Trapezoid rule over a rectangle with `nx × ny` nodes.
pub fn trapezoid_2d(f: impl Fn(&DVector<f64>) -> f64, xr: (f64, f64), yr: (f64, f64), nx: usize, ny: usize) -> f64 {
    let hx = (xr.1 - xr.0) / (nx - 1) as f64;
    let hy = (yr.1 - yr.0) / (ny - 1) as f64;
    let mut total = 0.0;
    let mut p = DVector::zeros(2);
    for i in 0..nx {
        let wx = if i == 0 || i == nx - 1 { 0.5 } else { 1.0 };
        p[0] = xr.0 + i as f64 * hx;
        for j in 0..ny {
            let wy = if j == 0 || j == ny - 1 { 0.5 } else { 1.0 };
            p[1] = yr.0 + j as f64 * hy;
            total += wx * wy * f(&p);
        }
    }
    total * hx * hy
}
