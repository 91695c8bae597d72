use serde::{Deserialize, Serialize};

use super::ControlError;

/// Positional PID loop with conditional-integration anti-windup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidState {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Accumulated error·seconds.
    #[serde(default)]
    pub integral: f64,
    /// `None` until the first step, which reports zero derivative.
    #[serde(default)]
    pub prev_error: Option<f64>,
    pub output_limits: (f64, f64),
    pub integral_limits: (f64, f64),
}

impl PidState {
    pub fn new(
        kp: f64,
        ki: f64,
        kd: f64,
        output_limits: (f64, f64),
        integral_limits: (f64, f64),
    ) -> Result<Self, ControlError> {
        let s = Self {
            kp,
            ki,
            kd,
            integral: 0.0,
            prev_error: None,
            output_limits,
            integral_limits,
        };
        s.validate("pid")?;
        Ok(s)
    }

    /// Checks gains and limit pairs; `path` prefixes the reported field.
    pub fn validate(&self, path: &str) -> Result<(), ControlError> {
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !v.is_finite() {
                return Err(ControlError::invalid(
                    format!("{path}.{name}"),
                    "must be finite",
                ));
            }
        }
        for (name, (lo, hi)) in [
            ("output_limits", self.output_limits),
            ("integral_limits", self.integral_limits),
        ] {
            if !(lo < hi) {
                return Err(ControlError::invalid(
                    format!("{path}.{name}"),
                    format!("need lo < hi, got [{lo}, {hi}]"),
                ));
            }
        }
        let (lo, hi) = self.integral_limits;
        if !(lo..=hi).contains(&self.integral) {
            return Err(ControlError::invalid(
                format!("{path}.integral"),
                "outside integral_limits",
            ));
        }
        Ok(())
    }

    /// Clears the integral and derivative memory.
    pub fn reset(&mut self) {
        self.integral = 0.0_f64.clamp(self.integral_limits.0, self.integral_limits.1);
        self.prev_error = None;
    }
}

/// One control update. Returns the clamped command and the next state.
///
/// The integral is held when the unclamped output would saturate and the
/// current error pushes further into that saturation.
pub fn pid_step(
    s: &PidState,
    setpoint: f64,
    measured: f64,
    dt: f64,
) -> Result<(f64, PidState), ControlError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ControlError::invalid(
            "dt",
            format!("must be positive, got {dt}"),
        ));
    }
    let (lo, hi) = s.output_limits;
    let e = setpoint - measured;
    let derivative = s.prev_error.map_or(0.0, |p| (e - p) / dt);
    let candidate = (s.integral + e * dt).clamp(s.integral_limits.0, s.integral_limits.1);
    let raw_candidate = s.kp * e + s.ki * candidate + s.kd * derivative;
    let push = s.ki * e;
    let winding = (raw_candidate > hi && push > 0.0) || (raw_candidate < lo && push < 0.0);
    let integral = if winding { s.integral } else { candidate };
    let raw = s.kp * e + s.ki * integral + s.kd * derivative;
    let next = PidState {
        integral,
        prev_error: Some(e),
        ..s.clone()
    };
    Ok((raw.clamp(lo, hi), next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const WIDE: (f64, f64) = (-1e9, 1e9);

    #[test]
    fn pure_proportional() {
        let s = PidState::new(2.0, 0.0, 0.0, WIDE, WIDE).unwrap();
        let (u, _) = pid_step(&s, 1.5, 0.0, 1.0).unwrap();
        assert_eq!(u, 3.0);
    }

    #[test]
    fn zero_error_first_call() {
        let s = PidState::new(3.0, 0.7, 5.0, WIDE, WIDE).unwrap();
        assert_eq!(pid_step(&s, 21.0, 21.0, 60.0).unwrap().0, 0.0);
    }

    #[test]
    fn hand_iterated_pi() {
        let mut s = PidState::new(1.0, 0.1, 0.0, WIDE, WIDE).unwrap();
        let mut out = vec![];
        for _ in 0..3 {
            let (u, next) = pid_step(&s, 1.0, 0.0, 1.0).unwrap();
            out.push(u);
            s = next;
        }
        let expected = [1.1, 1.2, 1.3];
        for (u, e) in out.iter().zip(expected) {
            assert!((u - e).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn derivative_uses_previous_error() {
        let s = PidState::new(0.0, 0.0, 2.0, WIDE, WIDE).unwrap();
        let (_, s) = pid_step(&s, 1.0, 0.0, 1.0).unwrap();
        let (u, _) = pid_step(&s, 3.0, 0.0, 0.5).unwrap();
        assert_eq!(u, 8.0);
    }

    #[test]
    fn integral_holds_while_saturated() {
        let mut s = PidState::new(1.0, 1.0, 0.0, (0.0, 1.0), (-100.0, 100.0)).unwrap();
        for _ in 0..50 {
            let (u, next) = pid_step(&s, 10.0, 0.0, 1.0).unwrap();
            assert_eq!(u, 1.0);
            s = next;
        }
        assert_eq!(s.integral, 0.0);
        // error reverses: no wound-up integral to unwind
        let (u, _) = pid_step(&s, 0.0, 0.5, 1.0).unwrap();
        assert_eq!(u, 0.0);
    }

    #[test]
    fn rejects_bad_limits_and_dt() {
        assert!(PidState::new(1.0, 0.0, 0.0, (1.0, 1.0), WIDE).is_err());
        let err = PidState::new(f64::NAN, 0.0, 0.0, WIDE, WIDE).unwrap_err();
        assert!(err.to_string().contains("pid.kp"));
        let s = PidState::new(1.0, 0.0, 0.0, WIDE, WIDE).unwrap();
        assert!(pid_step(&s, 0.0, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn stays_within_limits(
            gains in prop::array::uniform3(0.0f64..5.0),
            steps in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..200),
        ) {
            let mut s = PidState::new(gains[0], gains[1], gains[2], (-1.0, 1.0), (-10.0, 10.0)).unwrap();
            for (sp, m) in steps {
                let (u, next) = pid_step(&s, sp, m, 1.0).unwrap();
                prop_assert!((-1.0..=1.0).contains(&u));
                prop_assert!((-10.0..=10.0).contains(&next.integral));
                s = next;
            }
        }

        #[test]
        fn linear_below_saturation(
            gains in prop::array::uniform3(0.0f64..2.0),
            errors in prop::collection::vec(-5.0f64..5.0, 1..30),
            alpha in 0.1f64..3.0,
        ) {
            let run = |scale: f64| {
                let mut s = PidState::new(gains[0], gains[1], gains[2], WIDE, WIDE).unwrap();
                errors
                    .iter()
                    .map(|e| {
                        let (u, next) = pid_step(&s, scale * e, 0.0, 1.0).unwrap();
                        s = next;
                        u
                    })
                    .collect::<Vec<_>>()
            };
            for (a, b) in run(alpha).iter().zip(run(1.0)) {
                prop_assert!((a - alpha * b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }
    }
}
