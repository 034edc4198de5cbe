//! Derivative-free minimization with the Nelder-Mead simplex.
//!
//! The calibration objectives here are cheap but only piecewise smooth
//! (empirical quantiles jump between order statistics), which is exactly the
//! regime where a simplex search with restarts is the pragmatic choice.

/// Simplex coefficients and stopping rules. `Default` gives the standard
/// reflection/expansion/contraction/shrink values.
#[derive(Debug, Clone, Copy)]
pub struct NmOptions {
    pub alpha: f64,
    pub gamma: f64,
    pub rho: f64,
    pub sigma: f64,
    pub max_iter: usize,
    /// Converged when both the simplex diameter and the value spread fall
    /// below these.
    pub x_tol: f64,
    pub f_tol: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 2.0,
            rho: 0.5,
            sigma: 0.5,
            max_iter: 2000,
            x_tol: 1e-9,
            f_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iters: usize,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` from `x0` with initial per-coordinate steps `step`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    opts: &NmOptions,
) -> NmResult {
    let n = x0.len();
    assert!(n >= 1 && step.len() == n);
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if step[i] != 0.0 { step[i] } else { 1e-3 };
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let mut iters = 0;
    let mut converged = false;
    while iters < opts.max_iter {
        iters += 1;
        // Order best to worst.
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| fv[a].partial_cmp(&fv[b]).unwrap());
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        fv = idx.iter().map(|&i| fv[i]).collect();

        let diam = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diam < opts.x_tol && (fv[n] - fv[0]).abs() < opts.f_tol {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut c = vec![0.0; n];
        for v in &simplex[..n] {
            for (ci, vi) in c.iter_mut().zip(v) {
                *ci += vi / n as f64;
            }
        }
        let lerp = |from: &[f64], coef: f64| -> Vec<f64> {
            c.iter()
                .zip(from)
                .map(|(ci, vi)| ci + coef * (ci - vi))
                .collect()
        };

        let xr = lerp(&simplex[n], opts.alpha);
        let fr = eval(&xr, &mut evals);
        if fr < fv[0] {
            let xe = lerp(&simplex[n], opts.alpha * opts.gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
            continue;
        }
        if fr < fv[n - 1] {
            simplex[n] = xr;
            fv[n] = fr;
            continue;
        }
        // Contraction, outside or inside depending on the reflected value.
        let (xc, fc) = if fr < fv[n] {
            let x = lerp(&simplex[n], opts.alpha * opts.rho);
            let v = eval(&x, &mut evals);
            (x, v)
        } else {
            let x = lerp(&simplex[n], -opts.rho);
            let v = eval(&x, &mut evals);
            (x, v)
        };
        if fc < fv[n].min(fr) {
            simplex[n] = xc;
            fv[n] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        for i in 1..=n {
            let vi: Vec<f64> = simplex[i]
                .iter()
                .zip(&simplex[0])
                .map(|(v, b)| b + opts.sigma * (v - b))
                .collect();
            fv[i] = eval(&vi, &mut evals);
            simplex[i] = vi;
        }
    }
    let mut best = 0;
    for i in 1..=n {
        if fv[i] < fv[best] {
            best = i;
        }
    }
    NmResult {
        x: simplex[best].clone(),
        fx: fv[best],
        iters,
        evals,
        converged,
    }
}

/// `nelder_mead` restarted at its own optimum until the value stops
/// improving (or `restarts` is exhausted). Cheap insurance against the
/// simplex collapsing on a non-smooth objective.
pub fn nelder_mead_restarted<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    opts: &NmOptions,
    restarts: usize,
) -> NmResult {
    let mut best = nelder_mead(&mut f, x0, step, opts);
    for _ in 0..restarts {
        let shrunk: Vec<f64> = step.iter().map(|s| 0.1 * s).collect();
        let again = nelder_mead(&mut f, &best.x, &shrunk, opts);
        let improved = again.fx < best.fx - opts.f_tol;
        best.evals += again.evals;
        best.iters += again.iters;
        if again.fx < best.fx {
            best.x = again.x;
            best.fx = again.fx;
            best.converged = again.converged;
        }
        if !improved {
            break;
        }
    }
    best
}
