//! Zero-mean tilt functions: a `[lb, 1]`-valued `f` on a weighted sample of
//! `z` values with `Σ wᵢ zᵢ f(zᵢ) = 0`, found by linear programming and
//! extended to new points by nearest neighbour.

mod lp;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{self, stream};
use crate::{Error, Result};

pub use lp::LpSolution;

/// Default acceptance threshold on the optimal `‖Σ wᵢzᵢfᵢ‖₁`.
pub const DEFAULT_FEAS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    NearestNeighbor,
}

/// Sampled tilt function. Points are kept sorted by their first coordinate
/// to speed up nearest-neighbour queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TiltRecord")]
pub struct TiltFunction {
    pub z_points: Vec<Vec<f64>>,
    pub f_values: Vec<f64>,
    pub lower_bound: f64,
    pub weights: Vec<f64>,
    pub interpolation: Interpolation,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TiltRecord {
    z_points: Vec<Vec<f64>>,
    f_values: Vec<f64>,
    lower_bound: f64,
    weights: Vec<f64>,
    #[serde(default)]
    interpolation: Interpolation,
}

impl TryFrom<TiltRecord> for TiltFunction {
    type Error = Error;
    fn try_from(r: TiltRecord) -> Result<Self> {
        let Interpolation::NearestNeighbor = r.interpolation;
        TiltFunction::from_parts(r.z_points, r.f_values, r.weights, r.lower_bound)
    }
}

impl TiltFunction {
    pub fn from_parts(z_points: Vec<Vec<f64>>, f_values: Vec<f64>, weights: Vec<f64>, lower_bound: f64) -> Result<Self> {
        let m = z_points.len();
        if f_values.len() != m || weights.len() != m {
            return Err(Error::Precondition("tilt arrays disagree in length".into()));
        }
        if let Some(first) = z_points.first() {
            let ell = first.len();
            if ell == 0 || z_points.iter().any(|z| z.len() != ell) {
                return Err(Error::Precondition("ragged tilt points".into()));
            }
        }
        if !(lower_bound > 0.0 && lower_bound <= 1.0) {
            return Err(Error::Precondition(format!("tilt lower bound {lower_bound} not in (0,1]")));
        }
        if f_values.iter().any(|f| !(*f >= lower_bound - 1e-12 && *f <= 1.0 + 1e-12)) {
            return Err(Error::Precondition("tilt values outside [lower_bound, 1]".into()));
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| z_points[a][0].total_cmp(&z_points[b][0]));
        Ok(TiltFunction {
            z_points: order.iter().map(|&i| z_points[i].clone()).collect(),
            f_values: order.iter().map(|&i| f_values[i]).collect(),
            weights: order.iter().map(|&i| weights[i]).collect(),
            lower_bound,
            interpolation: Interpolation::NearestNeighbor,
        })
    }

    /// `f ≡ value` on `ℝ^ell`.
    pub fn constant(value: f64, ell: usize) -> Result<Self> {
        Self::from_parts(vec![vec![0.0; ell]], vec![value], vec![1.0], value)
    }

    pub fn ell(&self) -> usize {
        self.z_points.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.z_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_points.is_empty()
    }

    /// `Σ wᵢ zᵢ fᵢ`.
    pub fn moment(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.ell()];
        for ((z, w), f) in self.z_points.iter().zip(&self.weights).zip(&self.f_values) {
            for (mk, zk) in m.iter_mut().zip(z) {
                *mk += w * f * zk;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TiltOptions {
    pub feas_tol: f64,
    /// Random directions used for the positivity spot check.
    pub check_dirs: usize,
    pub seed: u64,
}

impl Default for TiltOptions {
    fn default() -> Self {
        TiltOptions {
            feas_tol: DEFAULT_FEAS_TOL,
            check_dirs: 64,
            seed: 0,
        }
    }
}

/// Lower bound of the tilt box for a given `ε` and mean-norm cap.
pub fn tilt_lower_bound(epsilon: f64, mean_norm_cap: f64) -> f64 {
    epsilon / (4.0 * mean_norm_cap.max(1.0))
}

pub fn build_tilt(z_samples: &[Vec<f64>], weights: &[f64], epsilon: f64, mean_norm_cap: f64) -> Result<TiltFunction> {
    build_tilt_with(z_samples, weights, epsilon, mean_norm_cap, TiltOptions::default())
}

pub fn build_tilt_with(
    z_samples: &[Vec<f64>],
    weights: &[f64],
    epsilon: f64,
    mean_norm_cap: f64,
    opts: TiltOptions,
) -> Result<TiltFunction> {
    build_tilt_paired(z_samples, z_samples, weights, epsilon, mean_norm_cap, opts)
}

/// Tilt keyed on `z_samples` whose zero-moment constraint is imposed on the
/// paired vectors `moments`: `Σ wᵢ f(zᵢ) mᵢ = 0`. With `mᵢ = zᵢ` this is
/// [`build_tilt_with`]. Pairing each `z` with the latent coordinates it was
/// generated from makes the tilted mean of those coordinates vanish on the
/// sample itself rather than only in expectation.
pub fn build_tilt_paired(
    z_samples: &[Vec<f64>],
    moments: &[Vec<f64>],
    weights: &[f64],
    epsilon: f64,
    mean_norm_cap: f64,
    opts: TiltOptions,
) -> Result<TiltFunction> {
    if z_samples.is_empty() {
        return Err(Error::EmptyTilt);
    }
    if weights.len() != z_samples.len() || moments.len() != z_samples.len() {
        return Err(Error::DimensionMismatch {
            expected: z_samples.len(),
            got: if weights.len() != z_samples.len() { weights.len() } else { moments.len() },
        });
    }
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-9 || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Precondition(format!("tilt weights must be a distribution (sum {wsum})")));
    }
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::Precondition(format!("epsilon = {epsilon} not in (0, 1/2]")));
    }
    if !(mean_norm_cap > 0.0) {
        return Err(Error::Precondition("mean_norm_cap must be positive".into()));
    }
    let ell = z_samples[0].len();
    if ell == 0 || z_samples.iter().chain(moments).any(|z| z.len() != ell) {
        return Err(Error::Precondition("ragged z samples".into()));
    }
    spot_check_positivity(moments, weights, epsilon, opts);

    let lb = tilt_lower_bound(epsilon, mean_norm_cap);
    let raw: Vec<Vec<f64>> = moments
        .iter()
        .zip(weights)
        .map(|(z, w)| z.iter().map(|x| w * x).collect())
        .collect();
    let scale = raw.iter().flatten().fold(0.0_f64, |a, x| a.max(x.abs()));
    if scale == 0.0 {
        return TiltFunction::from_parts(z_samples.to_vec(), vec![lb; z_samples.len()], weights.to_vec(), lb);
    }
    let cols: Vec<Vec<f64>> = raw.iter().map(|c| c.iter().map(|x| x / scale).collect()).collect();
    let sol = lp::solve(&cols, ell, lb, 1.0)?;
    log::debug!("tilt LP: m = {}, {} iterations, objective {:e}", cols.len(), sol.iterations, sol.objective * scale);

    let mut moment = vec![0.0; ell];
    for (c, f) in raw.iter().zip(&sol.f) {
        for (mk, ck) in moment.iter_mut().zip(c) {
            *mk += f * ck;
        }
    }
    let residual: f64 = moment.iter().map(|x| x.abs()).sum();
    if residual > opts.feas_tol {
        // The uncancelled moment points into the half-space holding the mass.
        let dir = DVector::from_vec(moment).normalize();
        return Err(Error::TiltInfeasible {
            residual,
            direction: dir.as_slice().to_vec(),
        });
    }
    TiltFunction::from_parts(z_samples.to_vec(), sol.f, weights.to_vec(), lb)
}

/// Warns when `E[⟨v,z⟩₊] < ε` on some random direction.
fn spot_check_positivity(z: &[Vec<f64>], w: &[f64], epsilon: f64, opts: TiltOptions) {
    let ell = z[0].len();
    let mut rng = rng::rng(opts.seed, &[stream::DIRECTIONS, 0x7469]);
    for _ in 0..opts.check_dirs {
        let v: Vec<f64> = (0..ell).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            continue;
        }
        let pos: f64 = z
            .iter()
            .zip(w)
            .map(|(zi, wi)| wi * (zi.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / n).max(0.0))
            .sum();
        if pos < epsilon {
            log::warn!("tilt positivity spot check: E[<v,z>+] = {pos:.3e} < epsilon = {epsilon:.3e}");
            return;
        }
    }
}

/// Nearest-neighbour value of the tilt at `z`, clamped to `[lb, 1]`.
pub fn eval_tilt(tilt: &TiltFunction, z: &[f64]) -> Result<f64> {
    if tilt.is_empty() {
        return Err(Error::EmptyTilt);
    }
    crate::geometry::check_dim(tilt.ell(), z.len())?;
    let pts = &tilt.z_points;
    let start = pts.partition_point(|p| p[0] < z[0]);
    let dist2 = |p: &[f64]| p.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut best = (f64::INFINITY, 0usize);
    // Scan outwards from the insertion point; stop once the first-coordinate
    // gap alone exceeds the best distance.
    let mut hi = start;
    let mut lo = start;
    loop {
        let mut progressed = false;
        if hi < pts.len() {
            let gap = pts[hi][0] - z[0];
            if gap * gap <= best.0 {
                let d = dist2(&pts[hi]);
                if d < best.0 {
                    best = (d, hi);
                }
                hi += 1;
                progressed = true;
            }
        }
        if lo > 0 {
            let gap = z[0] - pts[lo - 1][0];
            if gap * gap <= best.0 {
                let d = dist2(&pts[lo - 1]);
                if d < best.0 || (d == best.0 && lo - 1 < best.1) {
                    best = (d, lo - 1);
                }
                lo -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    Ok(tilt.f_values[best.1].clamp(tilt.lower_bound, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn symmetric_pair_takes_lower_bound() {
        let t = build_tilt(&[vec![0.7, -0.2], vec![-0.7, 0.2]], &[0.5, 0.5], 0.2, 1.0).unwrap();
        assert!(t.f_values.iter().all(|&f| (f - t.lower_bound).abs() < 1e-15));
        assert_abs_diff_eq!(t.lower_bound, 0.05, epsilon = 1e-15);
    }

    #[test]
    fn weighted_pair_matches_hand_solution() {
        // ε = 0.4, cap 1 → lb = 0.1; 0.75·0.1 = 0.25·f₂ → f₂ = 0.3
        let t = build_tilt(&[vec![1.0], vec![-1.0]], &[0.75, 0.25], 0.4, 1.0).unwrap();
        assert_abs_diff_eq!(eval_tilt(&t, &[1.0]).unwrap(), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(eval_tilt(&t, &[-1.0]).unwrap(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn half_space_is_infeasible() {
        let z = vec![vec![0.5, 0.3], vec![1.0, -0.4], vec![0.2, 0.0]];
        let err = build_tilt(&z, &[0.2, 0.5, 0.3], 0.1, 1.0).unwrap_err();
        match err {
            Error::TiltInfeasible { direction, .. } => assert!(direction[0] > 0.9, "{direction:?}"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn eval_nearest_neighbour() {
        let t = TiltFunction::from_parts(vec![vec![0.0], vec![1.0]], vec![0.2, 0.9], vec![0.5, 0.5], 0.1).unwrap();
        assert_eq!(eval_tilt(&t, &[0.0]).unwrap(), 0.2);
        assert_eq!(eval_tilt(&t, &[0.4]).unwrap(), 0.2);
        assert_eq!(eval_tilt(&t, &[0.6]).unwrap(), 0.9);
        assert!(eval_tilt(&t, &[0.6, 0.0]).is_err());
    }

    #[test]
    fn eval_nearest_in_two_dims_beyond_first_coordinate() {
        let t = TiltFunction::from_parts(
            vec![vec![0.0, 5.0], vec![0.3, 0.0], vec![-2.0, 0.0]],
            vec![0.2, 0.7, 0.9],
            vec![0.3; 3],
            0.1,
        )
        .unwrap();
        assert_eq!(eval_tilt(&t, &[0.0, 0.0]).unwrap(), 0.7);
    }

    #[test]
    fn constant_tilt() {
        let t = TiltFunction::constant(0.3, 2).unwrap();
        assert_eq!(eval_tilt(&t, &[5.0, -3.0]).unwrap(), 0.3);
    }

    #[test]
    fn serde_round_trip() {
        let t = build_tilt(&[vec![1.0], vec![-1.0]], &[0.75, 0.25], 0.4, 1.0).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let back: TiltFunction = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
