#![allow(dead_code)]

//! Shared oracles for integration tests: central finite differences and
//! front-radius measurement. These deliberately avoid the library's backward
//! pass; they only re-run forward evaluations.

use swetopo_core::field::Field2D;
use swetopo_core::grid::SimConfig;

/// Central finite-difference gradient of `f` at `theta`, step
/// `scale * max(1, |theta_k|)` per component.
pub fn central_differences(
    f: &mut dyn FnMut(&[f64]) -> f64,
    theta: &[f64],
    scale: f64,
) -> Vec<f64> {
    let mut grad = Vec::with_capacity(theta.len());
    let mut work = theta.to_vec();
    for k in 0..theta.len() {
        let h = scale * theta[k].abs().max(1.0);
        work[k] = theta[k] + h;
        let up = f(&work);
        work[k] = theta[k] - h;
        let down = f(&work);
        work[k] = theta[k];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Elementwise gradient comparison: relative error below `rel_tol` wherever
/// either side is at least `tiny`, absolute error below `abs_tol` otherwise.
pub fn assert_gradients_close(
    autodiff: &[f64],
    finite_diff: &[f64],
    rel_tol: f64,
    tiny: f64,
    abs_tol: f64,
    context: &str,
) {
    assert_eq!(autodiff.len(), finite_diff.len(), "{context}: length");
    for (k, (&ad, &fd)) in autodiff.iter().zip(finite_diff).enumerate() {
        let mag = ad.abs().max(fd.abs());
        if mag < tiny {
            assert!(
                (ad - fd).abs() < abs_tol,
                "{context}[{k}]: ad={ad:e} fd={fd:e} abs err {:e}",
                (ad - fd).abs()
            );
        } else {
            let rel = (ad - fd).abs() / mag;
            assert!(
                rel < rel_tol,
                "{context}[{k}]: ad={ad:e} fd={fd:e} rel err {rel:e}"
            );
        }
    }
}

/// Outermost radius (from the bump center) of any cell whose |eta| exceeds
/// `threshold`, in meters. Returns 0 when nothing exceeds it.
pub fn front_radius_m(
    frame: &Field2D,
    cfg: &SimConfig,
    x0_m: f64,
    y0_m: f64,
    threshold: f64,
) -> f64 {
    let grid = cfg.grid;
    let mut best = 0.0f64;
    for ix in 0..grid.nx {
        for iy in 0..grid.ny {
            if frame.get(ix, iy).abs() > threshold {
                let (x, y) = grid.cell_center(ix, iy);
                let r = ((x - x0_m) * (x - x0_m) + (y - y0_m) * (y - y0_m)).sqrt();
                best = best.max(r);
            }
        }
    }
    best
}

/// Least-squares slope of `ys` against `xs`.
pub fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}
