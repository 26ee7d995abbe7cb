//! Point-mass longitudinal vehicle model and driver command adapters.

use serde::{Deserialize, Serialize};

use crate::network::PathId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleKind {
    Human,
    Cav,
}

/// Kinematic truth of one vehicle. `r` is the arclength of the vehicle
/// centre along its current path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub path: PathId,
    pub r: f64,
    pub x: f64,
    pub v: f64,
    pub a: f64,
    pub length: f64,
    pub width: f64,
    pub kind: VehicleKind,
}

/// Actuator and speed bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleLimits {
    pub a_min: f64,
    pub a_max: f64,
    pub v_max: f64,
}

impl Default for VehicleLimits {
    fn default() -> Self {
        Self {
            a_min: -4.0,
            a_max: 3.0,
            v_max: 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandSource {
    Controller,
    Human,
    Script,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandValue {
    TargetAccel(f64),
    TargetSpeed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveCommand {
    pub value: CommandValue,
    pub source: CommandSource,
}

impl DriveCommand {
    pub fn accel(a: f64, source: CommandSource) -> Self {
        Self {
            value: CommandValue::TargetAccel(a),
            source,
        }
    }

    pub fn speed(v: f64, source: CommandSource) -> Self {
        Self {
            value: CommandValue::TargetSpeed(v),
            source,
        }
    }
}

/// Raised when a command could not be applied as given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepFault {
    NonFiniteCommand,
}

/// Integrates one step of length `dt`.
///
/// Target-speed commands become `clamp((target - v) / dt, a_min, a_max)`.
/// Speed stays in `[0, v_max]`; when a bound is hit mid-step the position
/// integrates the two phases exactly. Non-finite commands coast.
pub fn step_vehicle(
    state: &VehicleState,
    cmd: &DriveCommand,
    limits: &VehicleLimits,
    dt: f64,
) -> (VehicleState, Option<StepFault>) {
    debug_assert!(dt > 0.0);
    let raw = match cmd.value {
        CommandValue::TargetAccel(a) => a,
        CommandValue::TargetSpeed(s) => (s - state.v) / dt,
    };
    let (a_cmd, fault) = if raw.is_finite() {
        (raw.clamp(limits.a_min, limits.a_max), None)
    } else {
        log::warn!("vehicle {}: non-finite command {:?}, coasting", state.id, cmd.value);
        (0.0, Some(StepFault::NonFiniteCommand))
    };

    let v0 = state.v.clamp(0.0, limits.v_max);
    let v_free = v0 + a_cmd * dt;
    let (v1, dr) = if v_free < 0.0 {
        // stops part way through the step
        (0.0, v0 * v0 / (2.0 * -a_cmd))
    } else if v_free > limits.v_max {
        let t1 = (limits.v_max - v0) / a_cmd;
        (limits.v_max, v0 * t1 + 0.5 * a_cmd * t1 * t1 + limits.v_max * (dt - t1))
    } else {
        (v_free, v0 * dt + 0.5 * a_cmd * dt * dt)
    };

    let mut next = *state;
    next.v = v1;
    next.r = state.r + dr.max(0.0);
    next.a = (v1 - v0) / dt;
    (next, fault)
}

/// Pedal positions from a driver console.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PedalInput {
    pub throttle: f64,
    pub brake: f64,
}

/// Maps pedals to an acceleration command: `throttle * a_max - brake * |a_min|`.
/// Out-of-range pedal values are clamped to `[0, 1]` (NaN reads as 0).
pub fn human_input_adapter(raw: PedalInput, limits: &VehicleLimits) -> DriveCommand {
    let fix = |name: &str, x: f64| {
        let c = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        if c != x {
            log::warn!("{name} {x} out of range, clamped to {c}");
        }
        c
    };
    let throttle = fix("throttle", raw.throttle);
    let brake = fix("brake", raw.brake);
    DriveCommand::accel(
        throttle * limits.a_max - brake * limits.a_min.abs(),
        CommandSource::Human,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn car(v: f64) -> VehicleState {
        VehicleState {
            id: VehicleId(1),
            path: 0,
            r: 0.0,
            x: 0.0,
            v,
            a: 0.0,
            length: 4.5,
            width: 1.8,
            kind: VehicleKind::Cav,
        }
    }

    #[test]
    fn uniform_motion_advances_one_metre() {
        let (s, f) = step_vehicle(&car(10.0), &DriveCommand::accel(0.0, CommandSource::Script), &VehicleLimits::default(), 0.1);
        assert!(f.is_none());
        assert_eq!(s.r, 1.0);
        assert_eq!(s.v, 10.0);
    }

    #[test]
    fn no_reverse_from_rest() {
        let (s, _) = step_vehicle(&car(0.0), &DriveCommand::accel(-2.0, CommandSource::Script), &VehicleLimits::default(), 0.1);
        assert_eq!(s.v, 0.0);
        assert_eq!(s.r, 0.0);
    }

    #[test]
    fn target_speed_converts_to_accel() {
        let (s, _) = step_vehicle(&car(10.0), &DriveCommand::speed(9.9, CommandSource::Controller), &VehicleLimits::default(), 0.1);
        assert!((s.a + 1.0).abs() < 1e-9);
        assert!((s.v - 9.9).abs() < 1e-12);
    }

    #[test]
    fn non_finite_command_coasts() {
        let (s, f) = step_vehicle(&car(10.0), &DriveCommand::accel(f64::NAN, CommandSource::Controller), &VehicleLimits::default(), 0.1);
        assert_eq!(f, Some(StepFault::NonFiniteCommand));
        assert_eq!(s.v, 10.0);
        assert_eq!(s.r, 1.0);
    }

    #[test]
    fn stops_mid_step() {
        let (s, _) = step_vehicle(&car(0.2), &DriveCommand::accel(-4.0, CommandSource::Script), &VehicleLimits::default(), 0.1);
        assert_eq!(s.v, 0.0);
        assert!((s.r - 0.2 * 0.2 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn pedal_mapping() {
        let lim = VehicleLimits::default();
        let a = |t, b| match human_input_adapter(PedalInput { throttle: t, brake: b }, &lim).value {
            CommandValue::TargetAccel(a) => a,
            _ => unreachable!(),
        };
        assert_eq!(a(0.0, 0.0), 0.0);
        assert_eq!(a(1.0, 0.0), 3.0);
        assert_eq!(a(0.5, 0.5), -0.5);
        assert_eq!(a(2.0, -1.0), 3.0);
        let cmd = human_input_adapter(PedalInput::default(), &lim);
        assert_eq!(cmd.source, CommandSource::Human);
    }

    proptest! {
        #[test]
        fn speed_bounded_and_monotone_position(v in 0.0f64..15.0, a in -10.0f64..10.0, dt in 0.001f64..0.1) {
            let lim = VehicleLimits::default();
            let st = car(v);
            let (s, _) = step_vehicle(&st, &DriveCommand::accel(a, CommandSource::Script), &lim, dt);
            prop_assert!(s.v >= 0.0 && s.v <= lim.v_max);
            prop_assert!(s.r >= st.r);
            prop_assert!(s.a >= lim.a_min - 1e-9 && s.a <= lim.a_max + 1e-9);
            let (s2, _) = step_vehicle(&st, &DriveCommand::accel(a, CommandSource::Script), &lim, dt);
            prop_assert_eq!(s.r.to_bits(), s2.r.to_bits());
            prop_assert_eq!(s.v.to_bits(), s2.v.to_bits());
        }
    }
}
