//! Fuel-rate surrogate driven by vehicle specific power (VSP).
//!
//! `VSP = v * (a1 * a + a2) + a3 * v^3` (kW/t); the rate is `idle` when VSP is
//! negative and `idle + beta * VSP` otherwise. Shipped coefficients are
//! illustrative; only relative comparisons between runs are meaningful.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuelSurrogate {
    /// Idle rate (g/s).
    pub idle: f64,
    /// Rate per unit VSP (g/s per kW/t).
    pub beta: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl Default for FuelSurrogate {
    fn default() -> Self {
        Self {
            idle: 0.25,
            beta: 0.06,
            a1: 1.1,
            a2: 0.132,
            a3: 0.000302,
        }
    }
}

impl FuelSurrogate {
    pub fn vsp(&self, v: f64, a: f64) -> f64 {
        v * (self.a1 * a + self.a2) + self.a3 * v * v * v
    }

    pub fn rate(&self, v: f64, a: f64) -> f64 {
        self.idle + self.beta * self.vsp(v, a).max(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.idle > 0.0) {
            return Err(SimError::config("fuel.idle", "must be > 0"));
        }
        if !(self.beta >= 0.0) {
            return Err(SimError::config("fuel.beta", "must be >= 0"));
        }
        for (n, v) in [("fuel.a1", self.a1), ("fuel.a2", self.a2), ("fuel.a3", self.a3)] {
            if !v.is_finite() {
                return Err(SimError::config(n, "must be finite"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn idle_at_rest_and_when_braking() {
        let f = FuelSurrogate::default();
        assert_eq!(f.rate(0.0, 0.0), 0.25);
        assert_eq!(f.rate(10.0, -3.0), 0.25);
    }

    #[test]
    fn cruise_by_hand() {
        let f = FuelSurrogate::default();
        let vsp = 10.0 * 0.132 + 0.000302 * 1000.0;
        assert!((f.rate(10.0, 0.0) - (0.25 + 0.06 * vsp)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rate_positive_in_operating_range(v in 0.0f64..40.0, a in -6.0f64..6.0) {
            prop_assert!(FuelSurrogate::default().rate(v, a) >= 0.25);
        }
    }
}
