//! Independent 1-D reference solutions for the Monte Carlo estimators.
#![allow(dead_code)]

/// Solves `a_i u_{i-1} + b_i u_i + c_i u_{i+1} = d_i` (Thomas algorithm).
pub fn tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut u = vec![0.0; n];
    u[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        u[i] = dp[i] - cp[i] * u[i + 1];
    }
    u
}

fn interp(xs: &[f64], us: &[f64], x: f64) -> f64 {
    let h = xs[1] - xs[0];
    let k = (((x - xs[0]) / h).floor() as usize).min(xs.len() - 2);
    let w = (x - xs[k]) / h;
    (1.0 - w) * us[k] + w * us[k + 1]
}

/// Mean exit time of `dX = −aX dt + √ε dW` from `(−r, r)` started at `x0`:
/// `(ε/2)u″ − a x u′ = −1`, `u(±r) = 0`, second-order differences.
pub fn ou_mfet(a: f64, eps: f64, r: f64, x0: f64, nodes: usize) -> f64 {
    let h = 2.0 * r / (nodes - 1) as f64;
    let xs: Vec<f64> = (0..nodes).map(|i| -r + i as f64 * h).collect();
    let m = nodes - 2;
    let (mut lo, mut di, mut up) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let rhs = vec![-1.0; m];
    for k in 0..m {
        let x = xs[k + 1];
        let diff = 0.5 * eps / (h * h);
        let adv = -a * x / (2.0 * h);
        lo[k] = diff - adv;
        di[k] = -2.0 * diff;
        up[k] = diff + adv;
    }
    let inner = tridiagonal(&lo, &di, &up, &rhs);
    let mut u = vec![0.0; nodes];
    u[1..nodes - 1].copy_from_slice(&inner);
    interp(&xs, &u, x0)
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Committor of a 1-D reversible diffusion with potential `phi`, from
/// `{x ≤ lo}` to `{x ≥ hi}`.
pub fn committor_1d(phi: impl Fn(f64) -> f64 + Copy, eps: f64, lo: f64, hi: f64, x0: f64) -> f64 {
    let w = move |s: f64| (2.0 * phi(s) / eps).exp();
    simpson(w, lo, x0, 20_000) / simpson(w, lo, hi, 20_000)
}

/// Probability that OU `dX = −aX dt + √ε dW` from `x0` reaches `b` before
/// `horizon`: Crank–Nicolson for the backward equation on `[left, b]`,
/// absorbing at `b`, reflecting at `left`.
#[allow(clippy::too_many_arguments)]
pub fn ou_hitting_probability(a: f64, eps: f64, b: f64, horizon: f64, x0: f64, left: f64, nodes: usize, steps: usize) -> f64 {
    let h = (b - left) / (nodes - 1) as f64;
    let k = horizon / steps as f64;
    let xs: Vec<f64> = (0..nodes).map(|i| left + i as f64 * h).collect();
    let diff = 0.5 * eps / (h * h);
    // generator rows (lower, diag, upper) for the free nodes 0..nodes-1
    let m = nodes - 1;
    let mut gl = vec![0.0; m];
    let mut gd = vec![0.0; m];
    let mut gu = vec![0.0; m];
    for i in 0..m {
        let adv = -a * xs[i] / (2.0 * h);
        gl[i] = diff - adv;
        gd[i] = -2.0 * diff;
        gu[i] = diff + adv;
    }
    // reflecting: ghost node mirrors node 1
    gu[0] = 2.0 * diff;
    gl[0] = 0.0;
    let mut u = vec![0.0; m];
    // Rannacher start: a few implicit Euler half-steps smooth the jump at b
    let march = |u: &mut Vec<f64>, kk: f64, theta: f64| {
        let mut rhs = vec![0.0; m];
        for i in 0..m {
            let left_v = if i > 0 { u[i - 1] } else { 0.0 };
            let right_v = if i + 1 < m { u[i + 1] } else { 1.0 };
            let lu = gl[i] * left_v + gd[i] * u[i] + gu[i] * right_v;
            rhs[i] = u[i] + (1.0 - theta) * kk * lu;
        }
        // boundary value 1 at b enters the last row implicitly
        rhs[m - 1] += theta * kk * gu[m - 1];
        let lo: Vec<f64> = gl.iter().map(|v| -theta * kk * v).collect();
        let di: Vec<f64> = gd.iter().map(|v| 1.0 - theta * kk * v).collect();
        let up: Vec<f64> = gu.iter().map(|v| -theta * kk * v).collect();
        *u = tridiagonal(&lo, &di, &up, &rhs);
    };
    let startup = 4;
    for _ in 0..startup {
        march(&mut u, 0.5 * k, 1.0);
    }
    for _ in 0..steps - startup / 2 {
        march(&mut u, k, 0.5);
    }
    let mut full = u;
    full.push(1.0);
    interp(&xs, &full, x0)
}
