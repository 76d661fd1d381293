//! Monte-Carlo checks of the auxiliary probability lemmas and randomized
//! checks of the eigenvalue lemmas.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::bic_explore::{DEFAULT_C_L4, DEFAULT_C_L6};
use crate::geometry::{
    combo_coefficients, project_complement, project_onto, rank_one_tail_gain_check_repeated, GramState, UnitVector,
};
use crate::posterior::{ParticleCloud, ProjectedCloud};
use crate::priors::{sample, PriorSpec};
use crate::rng::{self, stream, SimRng};
use crate::stats::{norm_cdf, norm_sf};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    Geometry,
    AppendixA,
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Suite::All),
            "geometry" => Ok(Suite::Geometry),
            "appendixA" | "appendix_a" | "appendix-a" => Ok(Suite::AppendixA),
            other => Err(Error::Config(format!("unknown lemma suite `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaCheck {
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub stats: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub suite: Suite,
    pub seed: u64,
    pub checks: Vec<LemmaCheck>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs the selected checks in parallel at their default sizes.
pub fn verify_lemmas(suite: Suite, seed: u64) -> LemmaReport {
    type Job = Box<dyn Fn(u64) -> LemmaCheck + Send + Sync>;
    let mut jobs: Vec<Job> = vec![];
    if matches!(suite, Suite::All | Suite::AppendixA) {
        jobs.push(Box::new(|s| explore_with_small_probability(&[0.05, 0.1, 0.2], 1_000_000, s)));
        jobs.push(Box::new(|s| small_weight_cond_exp(&[0.01, 0.02, 0.05], 1.0, 4_000_000, s)));
        jobs.push(Box::new(|s| small_change_in_other_weights(&[0.01, 0.02, 0.04], 1.0, 30_000_000, s)));
        jobs.push(Box::new(|s| x_cond_on_y(2, s)));
        jobs.push(Box::new(|s| x_cond_on_y(3, s)));
    }
    if matches!(suite, Suite::All | Suite::Geometry) {
        jobs.push(Box::new(|s| rank_one_tail_gain(1000, s)));
        jobs.push(Box::new(|s| lin_combo(1000, s)));
        jobs.push(Box::new(|_| eigenvalue_chain()));
    }
    let checks = jobs
        .par_iter()
        .enumerate()
        .map(|(i, job)| job(rng::derive(seed, &[stream::LEMMA, i as u64])))
        .collect();
    LemmaReport { suite, seed, checks }
}

const CHUNK: usize = 1 << 16;

/// Sums `K` per-draw accumulators over `n` draws in fixed-size chunks, each
/// chunk with its own stream, so results do not depend on thread count.
fn mc_sum<const K: usize>(n: usize, seed: u64, f: impl Fn(&mut SimRng, &mut [f64; K]) + Sync) -> [f64; K] {
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<[f64; K]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::rng(seed, &[c as u64]);
            let mut acc = [0.0; K];
            for _ in 0..CHUNK.min(n - c * CHUNK) {
                f(&mut rng, &mut acc);
            }
            acc
        })
        .collect();
    parts.iter().fold([0.0; K], |mut a, p| {
        a.iter_mut().zip(p).for_each(|(x, y)| *x += y);
        a
    })
}

/// `(mean, standard error)` of `Y` on the event counted in `acc[0]`, from
/// `acc = [count, ΣY, ΣY²]`.
fn conditional_mean(acc: [f64; 3]) -> (f64, f64) {
    let m = acc[1] / acc[0];
    let var = (acc[2] / acc[0] - m * m).max(0.0);
    (m, (var / acc[0]).sqrt())
}

fn normal(rng: &mut SimRng) -> f64 {
    rng.sample(StandardNormal)
}

/// `X` uniform on `{±1}`; `R = X + N(0,1)` with probability `ε`, else
/// `N(0,1)`. Compares `E[X | R > 0]` with `ε(2Φ(1) − 1)`, and the fitted
/// slope in `ε` with `2Φ(1) − 1`.
pub fn explore_with_small_probability(eps_grid: &[f64], draws: usize, seed: u64) -> LemmaCheck {
    let slope_true = norm_cdf(1.0) - norm_sf(1.0);
    let mut rows = vec![];
    let mut ok = true;
    let mut meas = vec![];
    for (k, &eps) in eps_grid.iter().enumerate() {
        let acc = mc_sum::<3>(draws, rng::derive(seed, &[1, k as u64]), |rng, a| {
            let x = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let on = rng.random::<f64>() < eps;
            let r = if on { x } else { 0.0 } + normal(rng);
            if r > 0.0 {
                a[0] += 1.0;
                a[1] += x;
                a[2] += 1.0;
            }
        });
        let (m, se) = conditional_mean(acc);
        let closed = eps * slope_true;
        let z = (m - closed) / se;
        let bound = DEFAULT_C_L4 * eps;
        let row_ok = z.abs() <= 3.0 && m >= bound;
        ok &= row_ok;
        meas.push(m);
        rows.push(json!({"eps": eps, "measured": m, "se": se, "closed_form": closed, "z": z,
                         "lemma_bound": bound, "ok": row_ok}));
    }
    let slope = ols_slope(eps_grid, &meas);
    let slope_rel = (slope / slope_true - 1.0).abs();
    ok &= slope_rel <= 0.10;
    LemmaCheck {
        name: "explore_with_small_probability".into(),
        passed: ok,
        summary: format!("slope {slope:.4} vs {slope_true:.4} (rel. err {:.2}%)", 100.0 * slope_rel),
        stats: json!({"rows": rows, "slope": slope, "expected_slope": slope_true, "slope_rel_err": slope_rel,
                      "draws": draws}),
    }
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `r = εX + Z`, `X ~ N(0,1)`, `Z ~ N(0,σ²)`. Checks
/// `E[X | r > 0] ≥ εσ_X²/(2σ√(2π))` and agreement with the Gaussian closed
/// form `εσ_X²·√(2/π)/√(ε²σ_X² + σ²)`.
pub fn small_weight_cond_exp(ratios: &[f64], sigma: f64, draws: usize, seed: u64) -> LemmaCheck {
    let var_x = 1.0;
    let mut rows = vec![];
    let mut ok = true;
    for (k, &ratio) in ratios.iter().enumerate() {
        let eps = ratio * sigma;
        let acc = mc_sum::<3>(draws, rng::derive(seed, &[2, k as u64]), |rng, a| {
            let x = normal(rng);
            if eps * x + sigma * normal(rng) > 0.0 {
                a[0] += 1.0;
                a[1] += x;
                a[2] += x * x;
            }
        });
        let (m, se) = conditional_mean(acc);
        let exact = eps * var_x * (2.0 / PI).sqrt() / (eps * eps * var_x + sigma * sigma).sqrt();
        let bound = eps * var_x / (2.0 * sigma * (2.0 * PI).sqrt());
        let z = (m - exact) / se;
        let row_ok = m.abs() >= bound && z.abs() <= 3.0;
        ok &= row_ok;
        rows.push(json!({"eps_over_sigma": ratio, "measured": m, "se": se, "closed_form": exact,
                         "lower_bound": bound, "z": z, "ok": row_ok}));
    }
    LemmaCheck {
        name: "small_weight_cond_exp".into(),
        passed: ok,
        summary: format!("{} ratios, bound and closed form checked", ratios.len()),
        stats: json!({"rows": rows, "draws": draws, "sigma": sigma}),
    }
}

/// Correlation between `X` and the other variable in
/// [`small_change_in_other_weights`].
pub const OTHER_WEIGHT_RHO: f64 = 0.6;

/// `r = εX + Z` and a zero-mean `Y = ρX + √(1−ρ²)(V² − 1)/√2` with `V`
/// independent. Fits `c_ε = |E[Y | r > 0]|·σ/ε` per `ε` and requires every
/// `c_ε` within ±25% of their mean, and `|E[Y | r > 0]| ≤ c_L6·ε/σ`.
pub fn small_change_in_other_weights(eps_grid: &[f64], sigma: f64, draws: usize, seed: u64) -> LemmaCheck {
    let rho = OTHER_WEIGHT_RHO;
    let tail = (1.0 - rho * rho).sqrt() / 2f64.sqrt();
    let mut rows = vec![];
    let mut fitted = vec![];
    let mut ok = true;
    for (k, &eps) in eps_grid.iter().enumerate() {
        let acc = mc_sum::<3>(draws, rng::derive(seed, &[3, k as u64]), |rng, a| {
            let x = normal(rng);
            let v = normal(rng);
            if eps * x + sigma * normal(rng) > 0.0 {
                let y = rho * x + tail * (v * v - 1.0);
                a[0] += 1.0;
                a[1] += y;
                a[2] += y * y;
            }
        });
        let (m, se) = conditional_mean(acc);
        let c = m.abs() * sigma / eps;
        let bound = DEFAULT_C_L6 * eps / sigma;
        ok &= m.abs() <= bound;
        fitted.push(c);
        let analytic = rho * (2.0 / PI).sqrt() / (eps * eps + sigma * sigma).sqrt();
        rows.push(json!({"eps": eps, "measured": m, "se": se, "fitted_c": c, "analytic_c": analytic,
                         "upper_bound": bound}));
    }
    let mean_c = fitted.iter().sum::<f64>() / fitted.len() as f64;
    let spread = fitted.iter().map(|c| (c / mean_c - 1.0).abs()).fold(0.0, f64::max);
    ok &= spread <= 0.25;
    LemmaCheck {
        name: "small_change_in_other_weights".into(),
        passed: ok,
        summary: format!("fitted c = {mean_c:.4}, max deviation {:.1}%", 100.0 * spread),
        stats: json!({"rows": rows, "mean_c": mean_c, "max_rel_dev": spread, "draws": draws, "rho": rho}),
    }
}

fn random_unit(d: usize, rng: &mut SimRng) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(d, |_, _| normal(rng));
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

/// Uniform prior on the unit ball in `ℝ^d`, represented by 4000 atoms that
/// are treated as the exact prior. With `c_d = 1/3`, `ε_d = (1/3)^d` and
/// noise variance `c_L7` in every coordinate, checks
/// `min_v E[⟨E[X|Y], v⟩₊] ≥ ε_d·c_d/4`.
pub fn x_cond_on_y(d: usize, seed: u64) -> LemmaCheck {
    let result = (|| -> Result<LemmaCheck> {
        let c_d: f64 = 1.0 / 3.0;
        let eps_d = c_d.powi(d as i32);
        let s = (c_d * c_d / 32.0) / (4.0 / eps_d).ln();
        let atoms = sample(&PriorSpec::uniform_ball(d, 1.0), 4000, rng::derive(seed, &[4, 0]))?;
        let cloud = ParticleCloud::new(atoms.clone())?;
        let basis: Vec<DVector<f64>> = (0..d).map(|i| UnitVector::basis(d, i).as_vector().clone()).collect();
        let proj = ProjectedCloud::new(&cloud, &basis)?;
        let noise = vec![s; d];
        let m = 20_000;
        let zs: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::rng(seed, &[4, 1, i as u64]);
                let x = &atoms[rng.random_range(0..atoms.len())];
                let y: Vec<f64> = x.iter().map(|xi| xi + s.sqrt() * normal(&mut rng)).collect();
                proj.conditional_mean(&y, &noise)
            })
            .collect::<Result<_>>()?;
        let mut rng = rng::rng(seed, &[4, 2]);
        let mut dirs: Vec<DVector<f64>> = (0..256).map(|_| random_unit(d, &mut rng)).collect();
        for b in &basis {
            dirs.push(b.clone());
            dirs.push(-b);
        }
        let dot = |a: &[f64], v: &DVector<f64>| a.iter().zip(v.iter()).map(|(x, y)| x * y).sum::<f64>();
        let mut worst_pos = f64::INFINITY;
        let mut worst_tail = f64::INFINITY;
        for v in &dirs {
            let pos = zs.iter().map(|z| dot(z, v).max(0.0)).sum::<f64>() / m as f64;
            worst_pos = worst_pos.min(pos);
            let tail = atoms.iter().filter(|x| dot(x, v) >= c_d).count() as f64 / atoms.len() as f64;
            worst_tail = worst_tail.min(tail);
        }
        let bound = eps_d * c_d / 4.0;
        Ok(LemmaCheck {
            name: format!("x_cond_on_y(d={d})"),
            passed: worst_pos >= bound && worst_tail >= eps_d,
            summary: format!("min_v E[<Z,v>+] = {worst_pos:.4} vs bound {bound:.4}"),
            stats: json!({"d": d, "noise_var": s, "min_positive_part": worst_pos, "bound": bound,
                          "min_tail_mass": worst_tail, "eps_d": eps_d, "c_d": c_d, "samples": m}),
        })
    })();
    result.unwrap_or_else(|e| failed(format!("x_cond_on_y(d={d})"), e))
}

fn failed(name: String, e: Error) -> LemmaCheck {
    LemmaCheck {
        name,
        passed: false,
        summary: format!("error: {e}"),
        stats: Value::Null,
    }
}

/// A random instance satisfying the preconditions of the rank-one tail gain
/// statement. Directions repeat `counts[k]` times; some counts push
/// eigenvalues past the `200d³/ε²` cut.
#[derive(Debug, Clone)]
pub struct TailGainInstance {
    pub dirs: Vec<UnitVector>,
    pub counts: Vec<u64>,
    pub u: DVector<f64>,
    pub epsilon: f64,
}

pub fn tail_gain_instance(rng: &mut SimRng) -> TailGainInstance {
    loop {
        let d = rng.random_range(1..=8usize);
        let eps: f64 = rng.random_range(0.05..0.95);
        let cut = 200.0 * (d as f64).powi(3) / (eps * eps);
        let mut dirs = vec![];
        let mut counts = vec![];
        for _ in 0..rng.random_range(0..=d) {
            dirs.push(UnitVector::new(random_unit(d, rng)).expect("normalised"));
            counts.push((cut * rng.random_range(0.5..4.0)).ceil() as u64);
        }
        for _ in 0..rng.random_range(0..=4) {
            dirs.push(UnitVector::new(random_unit(d, rng)).expect("normalised"));
            counts.push(rng.random_range(1..=3));
        }
        let g = GramState::from_repeated_directions(d, &dirs, &counts).expect("valid instance");
        let s = g.top_basis(g.ell(eps));
        let p = project_complement(&random_unit(d, rng), &s).expect("matching dims");
        if p.norm() < 1e-3 {
            continue;
        }
        let perp_sq = rng.random_range(eps * (1.0 + 1e-6)..=1.0);
        let mut u = p.normalize() * perp_sq.sqrt();
        if !s.is_empty() {
            let q = project_onto(&random_unit(d, rng), &s).expect("matching dims");
            if q.norm() > 1e-3 {
                u += q.normalize() * rng.random_range(0.0..=(1.0 - perp_sq)).sqrt();
            }
        }
        if u.norm() > 1.0 {
            u /= u.norm();
        }
        return TailGainInstance {
            dirs,
            counts,
            u,
            epsilon: eps,
        };
    }
}

pub fn rank_one_tail_gain(n: usize, seed: u64) -> LemmaCheck {
    let results: Vec<Result<(bool, usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let inst = tail_gain_instance(&mut rng::rng(seed, &[5, i as u64]));
            let r = rank_one_tail_gain_check_repeated(&inst.dirs, &inst.counts, &inst.u, inst.epsilon)?;
            Ok((r.holds, r.ell, r.lhs - r.rhs))
        })
        .collect();
    let mut failures = 0;
    let mut errors = 0;
    let mut nontrivial = 0;
    let mut min_slack = f64::INFINITY;
    for r in &results {
        match r {
            Ok((holds, ell, slack)) => {
                failures += usize::from(!holds);
                nontrivial += usize::from(*ell > 0);
                min_slack = min_slack.min(*slack);
            }
            Err(_) => errors += 1,
        }
    }
    LemmaCheck {
        name: "rank_one_tail_gain".into(),
        passed: failures == 0 && errors == 0,
        summary: format!("{n} instances ({nontrivial} with a heavy block): {failures} failures, {errors} errors"),
        stats: json!({"instances": n, "failures": failures, "errors": errors, "with_heavy_block": nontrivial,
                      "min_slack": min_slack}),
    }
}

/// A random instance for the bounded linear-combination statement: `u` lies
/// in the span of the eigenvectors with eigenvalue at least `epsilon`.
#[derive(Debug, Clone)]
pub struct LinComboInstance {
    pub dirs: Vec<UnitVector>,
    pub u: DVector<f64>,
    pub epsilon: f64,
    pub ell: usize,
}

pub fn lin_combo_instance(rng: &mut SimRng) -> LinComboInstance {
    let d = rng.random_range(1..=8usize);
    let j = rng.random_range(1..=12usize);
    let mut dirs: Vec<UnitVector> = vec![];
    for _ in 0..j {
        // Half of the directions are perturbations of an earlier one, which
        // produces small eigenvalues.
        let v = match dirs.last() {
            Some(prev) if rng.random::<bool>() => {
                prev.as_vector() + random_unit(d, rng) * rng.random_range(0.01..0.3)
            }
            _ => random_unit(d, rng),
        };
        dirs.push(UnitVector::normalize(&v).expect("non-zero"));
    }
    let g = GramState::from_directions(d, &dirs).expect("valid");
    let eps = rng.random_range(1e-3..=1.0) * g.eigvals[0];
    let ell = g.ell(eps).max(1);
    let basis = g.top_basis(ell);
    let coef: Vec<f64> = (0..ell).map(|_| normal(rng)).collect();
    let mut u = DVector::zeros(d);
    for (w, c) in basis.iter().zip(&coef) {
        u += w * *c;
    }
    let n = u.norm();
    let u = if n > 0.0 { u / n * rng.random_range(0.0..=1.0) } else { u };
    LinComboInstance {
        dirs,
        u,
        epsilon: eps.min(g.eigvals[ell - 1]),
        ell,
    }
}

/// `(‖Σcᵢvᵢ − u‖, Σcᵢ²)` for an instance.
pub fn lin_combo_eval(inst: &LinComboInstance) -> Result<(f64, f64)> {
    let d = inst.u.len();
    let g = GramState::from_directions(d, &inst.dirs)?;
    let c = combo_coefficients(&inst.u, &inst.dirs, &g, inst.ell, inst.epsilon)?;
    let mut recon = DVector::zeros(d);
    for (v, ci) in inst.dirs.iter().zip(&c) {
        recon += v.as_vector() * *ci;
    }
    Ok(((recon - &inst.u).norm(), c.iter().map(|x| x * x).sum()))
}

pub fn lin_combo(n: usize, seed: u64) -> LemmaCheck {
    let results: Vec<Result<(f64, f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let inst = lin_combo_instance(&mut rng::rng(seed, &[6, i as u64]));
            let (res, csq) = lin_combo_eval(&inst)?;
            Ok((res, csq, 1.0 / inst.epsilon))
        })
        .collect();
    let mut max_res: f64 = 0.0;
    let mut failures = 0;
    let mut errors = 0;
    let mut max_ratio: f64 = 0.0;
    for r in &results {
        match r {
            Ok((res, csq, cap)) => {
                max_res = max_res.max(*res);
                max_ratio = max_ratio.max(csq / cap);
                failures += usize::from(*res > 1e-6 || *csq > cap + 1e-6);
            }
            Err(_) => errors += 1,
        }
    }
    LemmaCheck {
        name: "lin_combo".into(),
        passed: failures == 0 && errors == 0,
        summary: format!("{n} instances: max residual {max_res:.2e}, max Σc²·ε {max_ratio:.4}"),
        stats: json!({"instances": n, "failures": failures, "errors": errors, "max_residual": max_res,
                      "max_sum_c_sq_times_eps": max_ratio}),
    }
}

/// The chain `e₁, (2e_k − e_{k+1})/√5, …`: every step adds a unit vector with
/// a large component outside the span so far, yet `λ_min` shrinks
/// geometrically with `d`.
pub fn eigenvalue_chain() -> LemmaCheck {
    let mut mins = vec![];
    for d in 2..=8 {
        let phi = 1.0 / 5f64.sqrt();
        let mut dirs = vec![UnitVector::basis(d, 0)];
        for k in 0..d - 1 {
            let mut v = vec![0.0; d];
            v[k] = 2.0 * phi;
            v[k + 1] = -phi;
            dirs.push(UnitVector::from_slice(&v).expect("unit"));
        }
        let g = GramState::from_directions(d, &dirs).expect("valid");
        mins.push((d, g.min_eig()));
    }
    let d4 = mins.iter().find(|(d, _)| *d == 4).map_or(f64::NAN, |m| m.1);
    let decreasing = mins.windows(2).all(|w| w[1].1 < w[0].1);
    LemmaCheck {
        name: "eigenvalue_chain".into(),
        passed: d4 < 0.02 && decreasing,
        summary: format!("d = 4 min eigenvalue {d4:.5}"),
        stats: json!({"min_eig_by_dim": mins}),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        assert_eq!("appendixA".parse::<Suite>().unwrap(), Suite::AppendixA);
        assert_eq!("geometry".parse::<Suite>().unwrap(), Suite::Geometry);
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn ols_slope_of_exact_line() {
        assert!((ols_slope(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mc_sum_is_chunk_deterministic() {
        let f = |rng: &mut SimRng, a: &mut [f64; 1]| a[0] += normal(rng);
        assert_eq!(mc_sum::<1>(200_000, 3, f), mc_sum::<1>(200_000, 3, f));
    }

    #[test]
    fn eigenvalue_chain_passes() {
        assert!(eigenvalue_chain().passed);
    }
}
