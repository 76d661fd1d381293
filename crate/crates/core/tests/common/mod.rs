//! Reference implementations used as test oracles. Nothing here calls into
//! nalgebra or statrs, so agreement with the library is a real cross-check.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut vals: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

/// `Σ aₖ⊗aₖ` as nested rows.
pub fn gram<'a>(actions: impl IntoIterator<Item = &'a [f64]>, d: usize) -> Vec<Vec<f64>> {
    let mut g = vec![vec![0.0; d]; d];
    for a in actions {
        for i in 0..d {
            for j in 0..d {
                g[i][j] += a[i] * a[j];
            }
        }
    }
    g
}

pub fn min_eig<'a>(actions: impl IntoIterator<Item = &'a [f64]>, d: usize) -> f64 {
    *jacobi_eigenvalues(&gram(actions, d)).last().expect("d ≥ 1")
}

/// Standard normal CDF by composite Simpson integration of the density.
pub fn phi_quad(x: f64) -> f64 {
    let lo = -12.0;
    if x <= lo {
        return 0.0;
    }
    let n = 4000;
    let h = (x - lo) / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(lo) + pdf(x);
    for i in 1..n {
        let t = lo + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(t);
    }
    s * h / 3.0
}

/// `∫ f` over `[a, b]` by composite Simpson with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn demo_configs() -> Vec<PathBuf> {
    ["demo_d1.json", "demo_d2.json", "demo_d3.json"]
        .iter()
        .map(|f| workspace_root().join("configs").join(f))
        .collect()
}
