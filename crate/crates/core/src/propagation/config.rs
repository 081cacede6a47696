use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coding::{CODE_DIM, DIM_KINDS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Continuous,
    WinnerTakesAll,
    OneHot,
}

/// Coordinates in which the continuous update `eta * grad` is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSpace {
    /// Grid levels: a unit of update moves a dimension by one grid step
    /// (8 channels or one block/unit). The gradient is taken with respect
    /// to the normalized code and rescaled, so this is a fixed diagonal
    /// preconditioner of `1 / (levels - 1)^2`.
    Grid,
    /// The normalized `[0, 1]` coordinates themselves.
    Normalized,
}

/// Named trade-off presets for small, medium and large models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    S,
    M,
    L,
}

impl Profile {
    pub fn lambda(self) -> f64 {
        match self {
            Profile::S => 0.7,
            Profile::M => 0.3,
            Profile::L => 0.1,
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S" | "s" => Ok(Profile::S),
            "M" | "m" => Ok(Profile::M),
            "L" | "l" => Ok(Profile::L),
            _ => Err(Error::Usage(format!(
                "unknown profile {s:?} (expected S, M or L)"
            ))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub strategy: Strategy,
    /// Weight of the FLOPs term.
    pub lambda: f64,
    /// Step size.
    pub eta: f64,
    pub max_iters: usize,
    pub delta_acc: f64,
    pub delta_flops: f64,
    /// Re-derive targets from the current predictions every iteration. When
    /// false the targets are fixed from the initial predictions and the
    /// loop can stop on reaching them.
    pub retarget: bool,
    /// Distance to target below which the loop stops.
    pub tolerance: f64,
    /// One-hot mode: iterations between argmax projections.
    pub onehot_project_every: usize,
    pub step_space: StepSpace,
    pub acc_metric: String,
    pub flops_metric: String,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            strategy: Strategy::Continuous,
            lambda: 0.5,
            eta: 3.0,
            max_iters: 70,
            delta_acc: 1.0,
            delta_flops: 1.0,
            retarget: true,
            tolerance: 1e-6,
            onehot_project_every: 10,
            step_space: StepSpace::Grid,
            acc_metric: "acc".into(),
            flops_metric: "flops".into(),
        }
    }
}

impl PropagationConfig {
    pub fn with_profile(profile: Profile) -> Self {
        PropagationConfig {
            lambda: profile.lambda(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.onehot_project_every == 0 {
            return Err(Error::Config(
                "onehot_project_every must be at least 1".into(),
            ));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::Config("tolerance must be >= 0".into()));
        }
        Ok(())
    }

    /// Per-dimension multipliers applied to `eta * grad` on the 27-dim code.
    pub fn step_scale(&self) -> [f64; CODE_DIM] {
        match self.step_space {
            StepSpace::Normalized => [1.0; CODE_DIM],
            StepSpace::Grid => DIM_KINDS.map(|k| {
                let steps = (k.bounds().levels() - 1) as f64;
                1.0 / (steps * steps)
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles() {
        assert_eq!("S".parse::<Profile>().unwrap().lambda(), 0.7);
        assert_eq!("M".parse::<Profile>().unwrap().lambda(), 0.3);
        assert_eq!("L".parse::<Profile>().unwrap().lambda(), 0.1);
        assert!("XL".parse::<Profile>().is_err());
        assert_eq!(PropagationConfig::default().lambda, 0.5);
    }

    #[test]
    fn validation() {
        let ok = PropagationConfig::default();
        ok.validate().unwrap();
        for bad in [
            PropagationConfig {
                eta: 0.0,
                ..ok.clone()
            },
            PropagationConfig {
                max_iters: 0,
                ..ok.clone()
            },
            PropagationConfig {
                lambda: -0.1,
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn grid_scale() {
        let s = PropagationConfig::default().step_scale();
        assert_eq!(s[0], 1.0 / 225.0);
        assert_eq!(s[2], 1.0 / 9.0);
    }
}
