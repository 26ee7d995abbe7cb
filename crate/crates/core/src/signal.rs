//! Fixed-time two-phase signal plan used by the baseline mode.
//!
//! Cycle: main street (north/south) green, main yellow, optional all-red,
//! cross street (east/west) green, cross yellow, optional all-red.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::network::Heading;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalPhase {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalTiming {
    pub green_main: f64,
    pub green_cross: f64,
    pub yellow: f64,
    pub all_red: f64,
    /// Added to the plan offset at each successive intersection (s).
    pub offset_step: f64,
    /// Shift the whole corridor plan by a seed-drawn offset in `[0, cycle)`.
    pub random_offset: bool,
}

impl Default for SignalTiming {
    fn default() -> Self {
        Self {
            green_main: 30.0,
            green_cross: 30.0,
            yellow: 3.0,
            all_red: 0.0,
            offset_step: 0.0,
            random_offset: true,
        }
    }
}

impl SignalTiming {
    pub fn cycle(&self) -> f64 {
        self.green_main + self.green_cross + 2.0 * (self.yellow + self.all_red)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("signals.green_main", self.green_main),
            ("signals.green_cross", self.green_cross),
            ("signals.yellow", self.yellow),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::config(name, "must be > 0"));
            }
        }
        if !(self.all_red >= 0.0 && self.all_red.is_finite()) {
            return Err(SimError::config("signals.all_red", "must be >= 0"));
        }
        if !self.offset_step.is_finite() {
            return Err(SimError::config("signals.offset_step", "must be finite"));
        }
        Ok(())
    }
}

/// Phase of every approach at time `t`, indexed like [`Heading::ALL`].
pub fn signal_controller(t: f64, timing: &SignalTiming) -> [SignalPhase; 4] {
    use SignalPhase::*;
    let c = t.rem_euclid(timing.cycle());
    let g1 = timing.green_main;
    let y1 = g1 + timing.yellow;
    let r1 = y1 + timing.all_red;
    let g2 = r1 + timing.green_cross;
    let y2 = g2 + timing.yellow;
    let (main, cross) = if c < g1 {
        (Green, Red)
    } else if c < y1 {
        (Yellow, Red)
    } else if c < r1 {
        (Red, Red)
    } else if c < g2 {
        (Red, Green)
    } else if c < y2 {
        (Red, Yellow)
    } else {
        (Red, Red)
    };
    Heading::ALL.map(|h| if h.is_main() { main } else { cross })
}

/// Phase for one approach heading.
pub fn phase_for(t: f64, timing: &SignalTiming, approach: Heading) -> SignalPhase {
    signal_controller(t, timing)[approach.index()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ns(t: f64) -> SignalPhase {
        phase_for(t, &SignalTiming::default(), Heading::North)
    }

    fn ew(t: f64) -> SignalPhase {
        phase_for(t, &SignalTiming::default(), Heading::East)
    }

    #[test]
    fn phase_origin() {
        assert_eq!(ns(0.0), SignalPhase::Green);
        assert_eq!(ew(0.0), SignalPhase::Red);
    }

    #[test]
    fn yellow_then_cross_green() {
        assert_eq!(ns(31.0), SignalPhase::Yellow);
        assert_eq!(ns(34.0), SignalPhase::Red);
        assert_eq!(ew(34.0), SignalPhase::Green);
        assert_eq!(ew(64.0), SignalPhase::Yellow);
        assert_eq!(ns(66.0), SignalPhase::Green);
    }

    #[test]
    fn all_red_interval() {
        let t = SignalTiming {
            all_red: 2.0,
            ..Default::default()
        };
        let p = signal_controller(34.0, &t);
        assert!(p.iter().all(|&x| x == SignalPhase::Red));
        assert_eq!(t.cycle(), 70.0);
    }

    #[test]
    fn opposing_approaches_share_phase() {
        for k in 0..140 {
            let p = signal_controller(k as f64 * 0.5, &SignalTiming::default());
            assert_eq!(p[0], p[2]);
            assert_eq!(p[1], p[3]);
            assert!(p[0] == SignalPhase::Red || p[1] == SignalPhase::Red);
        }
    }
}
