//! Gauss–Legendre rules on intervals, tensor cells and triangles.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1],
/// computed by Newton iteration on the Legendre three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "a Gauss rule needs at least one point");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// `n`-point Gauss rule mapped to [0, 1] as (node, weight) pairs.
pub fn gauss_unit(n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    x.iter().zip(&w).map(|(xi, wi)| (0.5 * (xi + 1.0), 0.5 * wi)).collect()
}

/// Tensor-product Gauss rule on the unit cube of dimension `dim` (0..=3).
/// Unused coordinates are zero. A zero-dimensional rule is one unit point.
pub fn gauss_tensor(dim: usize, n: usize) -> Vec<([f64; 3], f64)> {
    let g = gauss_unit(n);
    let mut out = vec![([0.0; 3], 1.0)];
    for axis in 0..dim {
        let mut next = Vec::with_capacity(out.len() * g.len());
        for (p, w) in &out {
            for &(x, wx) in &g {
                let mut q = *p;
                q[axis] = x;
                next.push((q, w * wx));
            }
        }
        out = next;
    }
    out
}

/// Collapsed (Duffy) Gauss rule on the reference triangle
/// {(0,0), (1,0), (0,1)}; exact for total degree `2n - 2`. Weights sum to 1/2.
pub fn triangle_rule(n: usize) -> Vec<([f64; 2], f64)> {
    let g = gauss_unit(n);
    let mut out = Vec::with_capacity(n * n);
    for &(u, wu) in &g {
        for &(v, wv) in &g {
            out.push(([u, v * (1.0 - u)], wu * wv * (1.0 - u)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_exact_to_degree_2n_minus_1() {
        for n in 1..8 {
            let g = gauss_unit(n);
            for deg in 0..(2 * n) {
                let q: f64 = g.iter().map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert!((q - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn triangle_rule_integrates_monomials() {
        // int_T x^a y^b = a! b! / (a + b + 2)!
        let fact = |k: u32| (1..=k).product::<u32>().max(1) as f64;
        for n in 2..6 {
            let r = triangle_rule(n);
            for a in 0..=(2 * n - 2) as u32 {
                for b in 0..=((2 * n - 2) as u32 - a) {
                    let q: f64 = r.iter().map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32)).sum();
                    let exact = fact(a) * fact(b) / fact(a + b + 2);
                    assert!((q - exact).abs() < 1e-14, "n={n} a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn tensor_weights_sum_to_one() {
        for dim in 0..=3 {
            let s: f64 = gauss_tensor(dim, 3).iter().map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }
}
