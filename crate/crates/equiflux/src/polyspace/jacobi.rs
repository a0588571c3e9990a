//! Legendre/Jacobi polynomial evaluation and Gauss–Legendre nodes.
//!
//! Everything here works on the standard interval `[-1, 1]`; the shifted
//! variants on `[0, 1]` used for face parameterizations are provided at the
//! end.

/// Values of the Jacobi polynomials `P_0^{(α,β)} .. P_n^{(α,β)}` at `z`,
/// via the standard three-term recurrence.
pub fn jacobi(n: usize, alpha: u32, beta: u32, z: f64) -> Vec<f64> {
    let (a, b) = (alpha as f64, beta as f64);
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n == 0 {
        return p;
    }
    p.push((a - b) / 2.0 + (a + b + 2.0) / 2.0 * z);
    for k in 2..=n {
        let k = k as f64;
        let c1 = 2.0 * k * (k + a + b) * (2.0 * k + a + b - 2.0);
        let c2 = (2.0 * k + a + b - 1.0) * (a * a - b * b);
        let c3 = (2.0 * k + a + b - 1.0) * (2.0 * k + a + b) * (2.0 * k + a + b - 2.0);
        let c4 = 2.0 * (k + a - 1.0) * (k + b - 1.0) * (2.0 * k + a + b);
        let next = ((c2 + c3 * z) * p[p.len() - 1] - c4 * p[p.len() - 2]) / c1;
        p.push(next);
    }
    p
}

/// Derivatives `d/dz P_k^{(α,β)}(z)` for `k = 0..=n`, using
/// `(P_k^{(α,β)})' = (k+α+β+1)/2 · P_{k-1}^{(α+1,β+1)}`.
pub fn jacobi_derivative(n: usize, alpha: u32, beta: u32, z: f64) -> Vec<f64> {
    let mut d = vec![0.0; n + 1];
    if n == 0 {
        return d;
    }
    let shifted = jacobi(n - 1, alpha + 1, beta + 1, z);
    for k in 1..=n {
        d[k] = (k as f64 + alpha as f64 + beta as f64 + 1.0) / 2.0 * shifted[k - 1];
    }
    d
}

/// `(P_n(x), P_n'(x))` for the Legendre polynomial, used by the node solver.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, exact for polynomials of
/// degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // Newton starting guesses run right-to-left; return ascending.
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

/// Gauss–Legendre rule on `[0, 1]`.
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    (
        x.iter().map(|&x| 0.5 * (x + 1.0)).collect(),
        w.iter().map(|&w| 0.5 * w).collect(),
    )
}

/// Values of the orthonormal shifted Legendre polynomials on `[0, 1]`:
/// `L_k(t) = sqrt(2k+1) · P_k(2t - 1)`, so that `∫₀¹ L_j L_k dt = δ_jk`.
pub fn shifted_legendre_orthonormal(k_max: usize, t: f64) -> Vec<f64> {
    let p = jacobi(k_max, 0, 0, 2.0 * t - 1.0);
    p.iter()
        .enumerate()
        .map(|(k, &v)| ((2 * k + 1) as f64).sqrt() * v)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_matches_closed_forms() {
        for &x in &[-0.9, -0.3, 0.0, 0.4, 1.0] {
            let p = jacobi(4, 0, 0, x);
            assert!((p[0] - 1.0).abs() < 1e-15);
            assert!((p[1] - x).abs() < 1e-15);
            assert!((p[2] - 0.5 * (3.0 * x * x - 1.0)).abs() < 1e-14);
            assert!((p[3] - 0.5 * (5.0 * x * x * x - 3.0 * x)).abs() < 1e-14);
            let x2 = x * x;
            assert!((p[4] - 0.125 * (35.0 * x2 * x2 - 30.0 * x2 + 3.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn jacobi_derivative_matches_finite_differences() {
        let h = 1e-6;
        for &(alpha, beta) in &[(0u32, 0u32), (3, 0), (7, 0), (1, 1)] {
            for &z in &[-0.7, -0.1, 0.3, 0.8] {
                let d = jacobi_derivative(5, alpha, beta, z);
                let plus = jacobi(5, alpha, beta, z + h);
                let minus = jacobi(5, alpha, beta, z - h);
                for k in 0..=5 {
                    let fd = (plus[k] - minus[k]) / (2.0 * h);
                    assert!(
                        (d[k] - fd).abs() < 1e-7 * (1.0 + d[k].abs()),
                        "alpha={alpha} beta={beta} k={k}: {} vs {}",
                        d[k],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..=12 {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
            for d in 0..(2 * n) {
                let quad: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x.powi(d as i32)).sum();
                let exact = if d % 2 == 0 { 2.0 / (d as f64 + 1.0) } else { 0.0 };
                assert!(
                    (quad - exact).abs() < 1e-13,
                    "n={n} degree {d}: {quad} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn shifted_legendre_is_orthonormal() {
        let (t, w) = gauss_legendre_01(8);
        let k_max = 5;
        let mut gram = vec![vec![0.0; k_max + 1]; k_max + 1];
        for (q, &tq) in t.iter().enumerate() {
            let l = shifted_legendre_orthonormal(k_max, tq);
            for i in 0..=k_max {
                for j in 0..=k_max {
                    gram[i][j] += w[q] * l[i] * l[j];
                }
            }
        }
        for i in 0..=k_max {
            for j in 0..=k_max {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i][j] - expected).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn shifted_legendre_parity() {
        // L_k(1 - t) = (-1)^k L_k(t): the sign convention the face-moment
        // degrees of freedom rely on when two elements see a face with
        // opposite orientations.
        for &t in &[0.1, 0.35, 0.8] {
            let a = shifted_legendre_orthonormal(6, t);
            let b = shifted_legendre_orthonormal(6, 1.0 - t);
            for k in 0..=6 {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                assert!((a[k] - sign * b[k]).abs() < 1e-13);
            }
        }
    }
}
