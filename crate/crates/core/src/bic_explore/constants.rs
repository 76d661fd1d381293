//! Algorithm constants in two modes. `Theoretical` derives everything from
//! the assumption constants; `Scaled` takes `lambda` and `kappa` (and
//! optionally more) from the caller so that runs fit on a desk.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::priors::AssumptionConstants;
use crate::tilt::tilt_lower_bound;
use crate::{Error, Result};

/// Documented fallbacks for constants that exist but have no known value.
/// Non-normative; used only when explicitly requested.
pub const DEFAULT_DELTA_L5: f64 = 0.1;
pub const DEFAULT_C_L6: f64 = 10.0;
pub const DEFAULT_C_L4: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Theoretical,
    #[default]
    Scaled,
}

/// Caller-supplied constant values. Which ones are honoured depends on the
/// mode; see [`ConstantsRegistry::build`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantOverrides {
    pub lambda: Option<f64>,
    pub kappa: Option<usize>,
    pub p_select: Option<f64>,
    pub c_l5: Option<f64>,
    pub c_l7: Option<f64>,
    pub delta_l5: Option<f64>,
    pub c_l6: Option<f64>,
    pub delta_l6: Option<f64>,
    pub c_l4: Option<f64>,
    pub tilt_epsilon: Option<f64>,
    pub mean_norm_cap: Option<f64>,
    /// Fixed growth-phase length, replacing the formula.
    pub growth_len: Option<usize>,
}

impl ConstantOverrides {
    fn as_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("lambda", self.lambda);
        put("kappa", self.kappa.map(|k| k as f64));
        put("p_select", self.p_select);
        put("c_l5", self.c_l5);
        put("c_l7", self.c_l7);
        put("delta_l5", self.delta_l5);
        put("c_l6", self.c_l6);
        put("delta_l6", self.delta_l6);
        put("c_l4", self.c_l4);
        put("tilt_epsilon", self.tilt_epsilon);
        put("mean_norm_cap", self.mean_norm_cap);
        put("growth_len", self.growth_len.map(|k| k as f64));
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsRegistry {
    pub mode: Mode,
    pub lambda: f64,
    pub kappa: usize,
    pub p_select: f64,
    pub c_l5: f64,
    pub c_l7: f64,
    pub delta_l5: f64,
    pub c_l6: f64,
    pub delta_l6: f64,
    pub c_l4: f64,
    /// `ε` handed to the tilt construction.
    pub tilt_epsilon: f64,
    /// Bound on `‖E z‖` handed to the tilt construction.
    pub mean_norm_cap: f64,
    pub growth_len: Option<usize>,
    pub assumption: AssumptionConstants,
    pub overrides: BTreeMap<String, f64>,
}

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidConstant {
            name,
            value: v,
            reason: "must be positive and finite",
        })
    }
}

impl ConstantsRegistry {
    /// Assembles the registry for dimension `d`.
    ///
    /// Theoretical mode accepts overrides only for `delta_l5`, `c_l6`,
    /// `delta_l6` and `c_l4`; `delta_l5` and `c_l6` are required unless
    /// `use_default_constants` is set. Scaled mode requires `lambda` and
    /// `kappa` and honours every override.
    pub fn build(
        ac: AssumptionConstants,
        d: usize,
        mode: Mode,
        ov: &ConstantOverrides,
        use_default_constants: bool,
    ) -> Result<Self> {
        ac.validate()?;
        if d == 0 {
            return Err(Error::Precondition("dimension must be at least 1".into()));
        }
        let k = ac.k_subg;
        let cap_default = k * PI.sqrt() + 1.0;
        let pick = |name: &'static str, v: Option<f64>, dflt: f64| -> Result<f64> {
            match v {
                Some(v) => positive(name, v),
                None if use_default_constants => Ok(dflt),
                None => Err(Error::MissingConstant(name)),
            }
        };
        let delta_l6 = match ov.delta_l6 {
            Some(v) => positive("delta_l6", v)?,
            None => 1f64.min(1.0 / (2.0 * k * 2f64.ln().sqrt())),
        };
        let c_l4 = positive("c_l4", ov.c_l4.unwrap_or(DEFAULT_C_L4))?;

        match mode {
            Mode::Theoretical => {
                for (name, set) in [
                    ("lambda", ov.lambda.is_some()),
                    ("kappa", ov.kappa.is_some()),
                    ("p_select", ov.p_select.is_some()),
                    ("c_l5", ov.c_l5.is_some()),
                    ("c_l7", ov.c_l7.is_some()),
                    ("tilt_epsilon", ov.tilt_epsilon.is_some()),
                    ("mean_norm_cap", ov.mean_norm_cap.is_some()),
                    ("growth_len", ov.growth_len.is_some()),
                ] {
                    if set {
                        return Err(Error::Config(format!("`{name}` can only be overridden in scaled mode")));
                    }
                }
                let delta_l5 = pick("delta_l5", ov.delta_l5, DEFAULT_DELTA_L5)?;
                let c_l6 = pick("c_l6", ov.c_l6, DEFAULT_C_L6)?;
                let c_l5 = ac.sigma_var / (8.0 * PI).sqrt();
                let c_l7 = (ac.c_d * ac.c_d / 32.0) / (4.0 / ac.eps_d).ln();
                let mut reg = ConstantsRegistry {
                    mode,
                    lambda: 0.0,
                    kappa: 0,
                    p_select: ac.eps_d * ac.c_d / (16.0 * cap_default),
                    c_l5,
                    c_l7,
                    delta_l5,
                    c_l6,
                    delta_l6,
                    c_l4,
                    tilt_epsilon: ac.eps_d * ac.c_d / 4.0,
                    mean_norm_cap: cap_default,
                    growth_len: None,
                    assumption: ac,
                    overrides: ov.as_map(),
                };
                reg.lambda = positive("lambda", compute_lambda(&ac, d, &reg)?)?;
                reg.kappa = theoretical_kappa(reg.lambda, c_l7, c_l5, k, d)?;
                reg.validate()?;
                Ok(reg)
            }
            Mode::Scaled => {
                let lambda = positive("lambda", ov.lambda.ok_or(Error::MissingConstant("lambda"))?)?;
                let kappa = ov.kappa.ok_or(Error::MissingConstant("kappa"))?;
                let c_l5 = positive("c_l5", ov.c_l5.unwrap_or(ac.sigma_var / (8.0 * PI).sqrt()))?;
                let c_l7 = positive(
                    "c_l7",
                    ov.c_l7.unwrap_or((ac.c_d * ac.c_d / 32.0) / (4.0 / ac.eps_d).ln()),
                )?;
                let tilt_epsilon = positive("tilt_epsilon", ov.tilt_epsilon.unwrap_or(ac.eps_d * ac.c_d / 4.0))?;
                let mean_norm_cap = positive("mean_norm_cap", ov.mean_norm_cap.unwrap_or(cap_default))?;
                let p_select = positive(
                    "p_select",
                    ov.p_select.unwrap_or(tilt_lower_bound(tilt_epsilon, mean_norm_cap)),
                )?;
                let reg = ConstantsRegistry {
                    mode,
                    lambda,
                    kappa,
                    p_select,
                    c_l5,
                    c_l7,
                    delta_l5: ov.delta_l5.unwrap_or(DEFAULT_DELTA_L5),
                    c_l6: ov.c_l6.unwrap_or(DEFAULT_C_L6),
                    delta_l6,
                    c_l4,
                    tilt_epsilon,
                    mean_norm_cap,
                    growth_len: ov.growth_len,
                    assumption: ac,
                    overrides: ov.as_map(),
                };
                reg.validate()?;
                Ok(reg)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidConstant {
                name: "lambda",
                value: self.lambda,
                reason: "must lie in (0, 1]",
            });
        }
        if self.kappa == 0 {
            return Err(Error::InvalidConstant {
                name: "kappa",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        if !(self.tilt_epsilon > 0.0 && self.tilt_epsilon <= 0.5) {
            return Err(Error::InvalidConstant {
                name: "tilt_epsilon",
                value: self.tilt_epsilon,
                reason: "must lie in (0, 1/2]",
            });
        }
        if !(self.p_select > 0.0 && self.p_select <= self.tilt_lower_bound() * (1.0 + 1e-12)) {
            return Err(Error::InvalidConstant {
                name: "p_select",
                value: self.p_select,
                reason: "must lie in (0, tilt lower bound] so that p/f ≤ 1",
            });
        }
        if self.growth_len == Some(0) {
            return Err(Error::InvalidConstant {
                name: "growth_len",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        Ok(())
    }

    pub fn tilt_lower_bound(&self) -> f64 {
        tilt_lower_bound(self.tilt_epsilon, self.mean_norm_cap)
    }

    /// Number of log entries averaged into `ŷ`: `min(⌈1/(λ c_L7)⌉, κ)`.
    pub fn y_hat_len(&self) -> usize {
        let n = (1.0 / (self.lambda * self.c_l7)).ceil();
        if n >= self.kappa as f64 {
            self.kappa
        } else {
            (n as usize).max(1)
        }
    }

    /// Growth-phase length for a combination with `Σc² = sum_c_sq`.
    pub fn growth_len(&self, d: usize, mean_e1: f64, sum_c_sq: f64) -> usize {
        if let Some(l) = self.growth_len {
            return l;
        }
        let l = 4.0 * d as f64 * (mean_e1 + 1.0).powi(2) * (1.0 + sum_c_sq) / (self.c_l5 * self.c_l5);
        l.ceil().max(1.0) as usize
    }

    /// Floor on the complement projection after the initial phase,
    /// `c_P1·σ^{2.5}·ε_d·c_d` with `c_P1 = c_L4/(16(K√π+1))`.
    pub fn initial_floor(&self) -> f64 {
        let ac = &self.assumption;
        let c_p1 = self.c_l4 / (16.0 * (ac.k_subg * PI.sqrt() + 1.0));
        c_p1 * ac.sigma_var.powf(2.5) * ac.eps_d * ac.c_d
    }
}

/// `min(1, min(δ_L5, δ_L6, 1/c_L6)²·(σ/√(8π))²/(4d(K√π+1)²))` in theoretical
/// mode; the `lambda` override in scaled mode.
pub fn compute_lambda(ac: &AssumptionConstants, d: usize, reg: &ConstantsRegistry) -> Result<f64> {
    match reg.mode {
        Mode::Scaled => reg
            .overrides
            .get("lambda")
            .copied()
            .ok_or(Error::MissingConstant("lambda")),
        Mode::Theoretical => {
            for (name, v) in [("delta_l5", reg.delta_l5), ("c_l6", reg.c_l6), ("delta_l6", reg.delta_l6)] {
                if !(v >= 0.0) {
                    return Err(Error::InvalidConstant {
                        name,
                        value: v,
                        reason: "must be non-negative",
                    });
                }
            }
            let delta = reg.delta_l5.min(reg.delta_l6).min(1.0 / reg.c_l6);
            let k = ac.k_subg * PI.sqrt() + 1.0;
            let s = ac.sigma_var / (8.0 * PI).sqrt();
            Ok(1f64.min(delta * delta * s * s / (4.0 * d as f64 * k * k)))
        }
    }
}

/// `max(⌈1/(λ c_L7)⌉, ⌈4d(K√π+1)²(1+1/λ)/c_L5²⌉)`.
pub fn theoretical_kappa(lambda: f64, c_l7: f64, c_l5: f64, k_subg: f64, d: usize) -> Result<usize> {
    let cap = k_subg * PI.sqrt() + 1.0;
    let a = (1.0 / (lambda * c_l7)).ceil();
    let b = (4.0 * d as f64 * cap * cap * (1.0 + 1.0 / lambda) / (c_l5 * c_l5)).ceil();
    let k = a.max(b);
    if !(k.is_finite() && k < usize::MAX as f64) {
        return Err(Error::InvalidConstant {
            name: "kappa",
            value: k,
            reason: "overflows the step counter",
        });
    }
    Ok(k as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_ac() -> AssumptionConstants {
        AssumptionConstants {
            c_d: 0.4,
            eps_d: 0.2,
            sigma_var: 1.0,
            k_subg: 1.0,
        }
    }

    #[test]
    fn lambda_closed_form() {
        let ov = ConstantOverrides {
            delta_l5: Some(1.0),
            c_l6: Some(1.0),
            delta_l6: Some(1.0),
            ..Default::default()
        };
        let reg = ConstantsRegistry::build(unit_ac(), 1, Mode::Theoretical, &ov, false).unwrap();
        let expected = 1.0 / (32.0 * PI * (PI.sqrt() + 1.0).powi(2));
        assert_relative_eq!(reg.lambda, expected, max_relative = 1e-14);
        assert_relative_eq!(reg.lambda, 0.001_294, max_relative = 1e-3);
    }

    #[test]
    fn theoretical_requires_unnamed_constants() {
        let err = ConstantsRegistry::build(unit_ac(), 2, Mode::Theoretical, &ConstantOverrides::default(), false)
            .unwrap_err();
        assert!(matches!(err, Error::MissingConstant("delta_l5")));
        ConstantsRegistry::build(unit_ac(), 2, Mode::Theoretical, &ConstantOverrides::default(), true).unwrap();
    }

    #[test]
    fn scaled_passthrough() {
        let ov = ConstantOverrides {
            lambda: Some(0.05),
            kappa: Some(200),
            ..Default::default()
        };
        let reg = ConstantsRegistry::build(unit_ac(), 2, Mode::Scaled, &ov, false).unwrap();
        assert_eq!(reg.lambda, 0.05);
        assert_eq!(compute_lambda(&unit_ac(), 2, &reg).unwrap(), 0.05);
    }

    #[test]
    fn zero_delta_gives_zero_lambda_and_is_rejected() {
        let ov = ConstantOverrides {
            delta_l5: Some(0.0),
            c_l6: Some(1.0),
            ..Default::default()
        };
        assert!(ConstantsRegistry::build(unit_ac(), 2, Mode::Theoretical, &ov, false).is_err());
    }

    #[test]
    fn theoretical_kappa_covers_growth_length() {
        let ov = ConstantOverrides {
            delta_l5: Some(0.5),
            c_l6: Some(2.0),
            ..Default::default()
        };
        let ac = unit_ac();
        let reg = ConstantsRegistry::build(ac, 3, Mode::Theoretical, &ov, false).unwrap();
        let mean_e1 = ac.k_subg * PI.sqrt();
        assert!(reg.growth_len(3, mean_e1, 1.0 / reg.lambda) <= reg.kappa);
        assert!(reg.y_hat_len() <= reg.kappa);
    }

    #[test]
    fn p_select_never_exceeds_lower_bound() {
        let ov = ConstantOverrides {
            delta_l5: Some(0.5),
            c_l6: Some(2.0),
            ..Default::default()
        };
        let reg = ConstantsRegistry::build(unit_ac(), 2, Mode::Theoretical, &ov, false).unwrap();
        assert!(reg.p_select <= reg.tilt_lower_bound() * (1.0 + 1e-12));
        let bad = ConstantOverrides {
            lambda: Some(0.05),
            kappa: Some(10),
            p_select: Some(0.5),
            ..Default::default()
        };
        assert!(ConstantsRegistry::build(unit_ac(), 2, Mode::Scaled, &bad, false).is_err());
    }
}
