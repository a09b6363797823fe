//! Risk-coefficient schedules over training steps.
//!
//! The same schedule type drives the softmin coefficient `k` and the explicit
//! variance penalty `beta`. Text syntax: `"0.5"` is constant, `"0.5->2.0"`
//! anneals linearly over the run, and `"inf"` is an infinite constant.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RvpoError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskSchedule {
    Constant(f64),
    LinearAnneal {
        start: f64,
        end: f64,
        total_steps: usize,
    },
}

impl RiskSchedule {
    pub fn constant(value: f64) -> Result<Self> {
        let s = RiskSchedule::Constant(value);
        s.validate()?;
        Ok(s)
    }

    pub fn linear(start: f64, end: f64, total_steps: usize) -> Result<Self> {
        let s = RiskSchedule::LinearAnneal {
            start,
            end,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RiskSchedule::Constant(v) => {
                if v.is_nan() || v < 0.0 {
                    return Err(RvpoError::NegativeCoefficient(v));
                }
            }
            RiskSchedule::LinearAnneal {
                start,
                end,
                total_steps,
            } => {
                for v in [start, end] {
                    if !v.is_finite() {
                        return Err(RvpoError::Config(format!(
                            "annealed schedule endpoints must be finite, got {v}"
                        )));
                    }
                    if v < 0.0 {
                        return Err(RvpoError::NegativeCoefficient(v));
                    }
                }
                if total_steps == 0 {
                    return Err(RvpoError::Config("annealed schedule needs total_steps >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Coefficient in effect at `step`. Anneals reach `end` at step `T - 1` and clamp after.
    pub fn value_at(&self, step: usize) -> f64 {
        match *self {
            RiskSchedule::Constant(v) => v,
            RiskSchedule::LinearAnneal {
                start,
                end,
                total_steps,
            } => {
                if total_steps <= 1 || step >= total_steps - 1 {
                    return end;
                }
                let frac = step as f64 / (total_steps - 1) as f64;
                let v = start + (end - start) * frac;
                v.clamp(start.min(end), start.max(end))
            }
        }
    }

    /// Parses schedule text; `total_steps` is the run length used by anneals.
    pub fn parse(text: &str, total_steps: usize) -> Result<Self> {
        let text = text.trim();
        let parse_value = |s: &str| -> Result<f64> {
            let s = s.trim();
            if s.eq_ignore_ascii_case("inf") {
                return Ok(f64::INFINITY);
            }
            s.parse::<f64>()
                .map_err(|_| RvpoError::Config(format!("invalid schedule value {s:?}")))
        };
        match text.split_once("->") {
            Some((a, b)) => Self::linear(parse_value(a)?, parse_value(b)?, total_steps),
            None => Self::constant(parse_value(text)?),
        }
    }
}

impl fmt::Display for RiskSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RiskSchedule::Constant(v) if v.is_infinite() => write!(f, "inf"),
            RiskSchedule::Constant(v) => write!(f, "{v}"),
            RiskSchedule::LinearAnneal { start, end, .. } => write!(f, "{start}->{end}"),
        }
    }
}
