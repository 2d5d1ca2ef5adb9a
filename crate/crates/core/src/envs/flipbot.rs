use std::f64::consts::PI;
use std::fmt::Write as _;

use super::{schema, uniform_noise, wrap_angle, EnvSpec, EnvState, Environment, ResetMode, SceneDocument};
use crate::types::StateVector;

/// A planar wheeled body that can lie upright (`phi = 0`) or overturned
/// (`phi = π`). Both are stable rest postures; the roll actuator can push the
/// body over the barrier between them.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipBotParams {
    pub drive_gain: f64,
    pub drive_drag: f64,
    pub roll_gain: f64,
    /// Strength of the two-well restoring term `-k sin(2 phi)`.
    pub posture_stiffness: f64,
    pub roll_damping: f64,
    pub dt: f64,
    pub reset_noise: f64,
    pub max_episode_steps: usize,
}

impl Default for FlipBotParams {
    fn default() -> Self {
        Self {
            drive_gain: 5.0,
            drive_drag: 2.0,
            roll_gain: 8.0,
            posture_stiffness: 6.0,
            roll_damping: 1.0,
            dt: 0.02,
            reset_noise: 0.05,
            max_episode_steps: 1000,
        }
    }
}

pub const UPRIGHT_LIMIT: f64 = 0.3;

#[derive(Debug, Clone)]
pub struct FlipBot {
    pub params: FlipBotParams,
    spec: EnvSpec,
}

impl Default for FlipBot {
    fn default() -> Self {
        Self::new(FlipBotParams::default())
    }
}

impl FlipBot {
    pub fn new(params: FlipBotParams) -> Self {
        let state_schema = schema(
            "flipbot_state",
            &[
                ("x", "m, body position along the ground", None),
                ("x_dot", "m/s, forward velocity", None),
                ("phi", "rad, body roll from upright, wrapped to (-pi, pi]", Some((-PI, PI))),
                ("phi_dot", "rad/s, roll rate", None),
            ],
        );
        let action_schema = schema(
            "flipbot_action",
            &[
                ("drive", "normalised wheel drive; only acts while abs(phi) < 0.3", Some((-1.0, 1.0))),
                ("roll_torque", "normalised roll torque", Some((-1.0, 1.0))),
            ],
        );
        let derived = [
            ("cos_phi", "cos(phi); 1 when upright, -1 when upside down"),
            ("abs_phi", "abs(phi); rad"),
            ("abs_phi_dot", "abs(phi_dot); rad/s"),
        ];
        let mut view: Vec<(&str, &str, Option<(f64, f64)>)> = vec![
            ("x", "m", None),
            ("x_dot", "m/s", None),
            ("phi", "rad", Some((-PI, PI))),
            ("phi_dot", "rad/s", None),
        ];
        view.extend(derived.iter().map(|(n, u)| (*n, *u, None)));
        let spec = EnvSpec {
            name: "flipbot".into(),
            state_schema,
            action_schema,
            reward_view_schema: schema("flipbot_reward_view", &view),
            derived_features: vec![
                ("cos_phi".into(), "cos(phi)".into()),
                ("abs_phi".into(), "abs(phi)".into()),
                ("abs_phi_dot".into(), "abs(phi_dot)".into()),
            ],
            dt: params.dt,
            max_episode_steps: params.max_episode_steps,
            termination: format!("abs(phi) > {UPRIGHT_LIMIT} rad"),
            task_description: "A small wheeled robot body drives along flat ground. The original task \
                is to drive forward as fast as possible while staying upright (task reward x_dot when \
                abs(phi) < 0.3, minus 0.01 * |action|^2). The wheels only touch the ground while the body \
                is upright. Original-task episodes end once the body rolls more than 0.3 rad."
                .into(),
            default_lambda: 0.05,
        };
        Self { params, spec }
    }

    fn drive_gate(phi: f64) -> f64 {
        if phi.abs() < UPRIGHT_LIMIT {
            1.0
        } else {
            0.0
        }
    }
}

impl Environment for FlipBot {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, mode: ResetMode, seed: u64) -> EnvState {
        let noise = uniform_noise(seed, 4, self.params.reset_noise);
        let base = match mode {
            ResetMode::Original => [0.0, 0.0, 0.0, 0.0],
            ResetMode::Ood => [0.0, 0.0, PI, 0.0],
        };
        let mut values: Vec<f64> = base.iter().zip(&noise).map(|(b, n)| b + n).collect();
        values[2] = wrap_angle(values[2]);
        EnvState {
            state: StateVector::new(values, self.spec.state_schema.clone()).expect("finite reset"),
            step_count: 0,
            enforce_termination: mode == ResetMode::Original,
        }
    }

    fn dynamics(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let (x, x_dot, phi, phi_dot) = (s[0], s[1], s[2], s[3]);
        let x_acc = p.drive_gain * a[0] * Self::drive_gate(phi) - p.drive_drag * x_dot;
        let phi_acc = p.roll_gain * a[1] - p.posture_stiffness * (2.0 * phi).sin() - p.roll_damping * phi_dot;
        let x_dot = x_dot + p.dt * x_acc;
        let phi_dot = phi_dot + p.dt * phi_acc;
        vec![x + p.dt * x_dot, x_dot, wrap_angle(phi + p.dt * phi_dot), phi_dot]
    }

    fn task_reward(&self, next: &[f64], a: &[f64]) -> f64 {
        next[1] * Self::drive_gate(next[2]) - 0.01 * (a[0] * a[0] + a[1] * a[1])
    }

    fn termination_predicate(&self, s: &[f64]) -> bool {
        s[2].abs() > UPRIGHT_LIMIT
    }

    fn truth_valid(&self, s: &StateVector) -> bool {
        s.values()[2].abs() <= UPRIGHT_LIMIT
    }

    fn reward_view_values(&self, s: &[f64]) -> Vec<f64> {
        vec![s[0], s[1], s[2], s[3], s[2].cos(), s[2].abs(), s[3].abs()]
    }

    fn render_snapshot(&self, state: &StateVector) -> SceneDocument {
        let v = state.values();
        let (x, x_dot, phi, phi_dot) = (v[0], v[1], v[2], v[3]);
        let side = if phi > 0.0 { "right" } else { "left" };
        let (posture, contact) = if phi.abs() <= UPRIGHT_LIMIT {
            (
                format!("the robot is upright, rolled slightly to the {side}"),
                "the wheels touch the ground",
            )
        } else if phi.abs() >= 2.5 {
            (
                "the robot is upside down, lying on its back".to_string(),
                "the top of the body touches the ground and the wheels point up into the air",
            )
        } else {
            (
                format!("the robot is tipped over onto its {side} side"),
                "the side of the body touches the ground and the wheels are off the ground",
            )
        };
        let mut text = String::new();
        let _ = writeln!(text, "Scene: a small wheeled robot on flat ground, seen from behind by a fixed camera.");
        let _ = writeln!(text, "Body: position {x:.3} m, forward velocity {x_dot:.3} m/s.");
        let _ = writeln!(
            text,
            "Roll: {:.1} degrees from upright, roll rate {phi_dot:.3} rad/s.",
            phi.to_degrees()
        );
        let _ = writeln!(text, "Orientation: {posture}.");
        let _ = writeln!(text, "Contact: {contact}.");

        // Rear view: the body is a box rotated by phi about its centre.
        let (cx, cy) = (300.0, 200.0);
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="600" height="360" viewBox="0 0 600 360">"#
        );
        let _ = writeln!(svg, r##"  <rect width="600" height="360" fill="#ffffff"/>"##);
        let _ = writeln!(svg, r##"  <line x1="0" y1="240" x2="600" y2="240" stroke="#555555" stroke-width="3"/>"##);
        let _ = writeln!(svg, r##"  <g transform="rotate({:.3} {cx:.1} {cy:.1})">"##, phi.to_degrees());
        let _ = writeln!(
            svg,
            r##"    <rect x="{:.1}" y="{:.1}" width="120" height="60" fill="#3366cc"/>"##,
            cx - 60.0,
            cy - 30.0
        );
        for dx in [-45.0, 45.0] {
            let _ = writeln!(
                svg,
                r##"    <circle cx="{:.1}" cy="{:.1}" r="12" fill="#222222"/>"##,
                cx + dx,
                cy + 30.0
            );
        }
        let _ = writeln!(svg, "  </g>");
        let _ = writeln!(svg, "</svg>");
        SceneDocument { text, svg }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ActionVector;

    fn act(env: &FlipBot, d: f64, r: f64) -> ActionVector {
        ActionVector::new(vec![d, r], env.spec().action_schema.clone()).unwrap()
    }

    fn at(env: &FlipBot, v: [f64; 4]) -> EnvState {
        EnvState {
            state: StateVector::new(v.to_vec(), env.spec().state_schema.clone()).unwrap(),
            step_count: 0,
            enforce_termination: false,
        }
    }

    #[test]
    fn drive_is_gated_when_flipped() {
        let env = FlipBot::default();
        let r = env.step(&at(&env, [0.0, 0.0, PI, 0.0]), &act(&env, 1.0, 0.0)).unwrap();
        assert_eq!(r.next.state.values()[1], 0.0);
        let r = env.step(&at(&env, [0.0, 0.0, 0.0, 0.0]), &act(&env, 1.0, 0.0)).unwrap();
        assert!(r.next.state.values()[1] > 0.0);
    }

    #[test]
    fn both_postures_are_rest_points() {
        let env = FlipBot::new(FlipBotParams {
            reset_noise: 0.0,
            ..Default::default()
        });
        for mode in [ResetMode::Original, ResetMode::Ood] {
            let s0 = env.reset(mode, 0);
            let mut s = s0.clone();
            for _ in 0..50 {
                s = env.step(&s, &act(&env, 0.0, 0.0)).unwrap().next;
            }
            assert!((s.state.values()[2] - s0.state.values()[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn full_roll_torque_flips_back_upright() {
        let env = FlipBot::new(FlipBotParams {
            reset_noise: 0.0,
            ..Default::default()
        });
        let mut s = env.reset(ResetMode::Ood, 0);
        let mut reached = false;
        for _ in 0..500 {
            let phi = s.state.values()[2];
            // Push away from π toward 0 through the positive side.
            let torque = if phi.abs() < 0.2 { 0.0 } else if phi > 0.0 { -1.0 } else { 1.0 };
            s = env.step(&s, &act(&env, 0.0, torque)).unwrap().next;
            if env.truth_valid(&s.state) {
                reached = true;
                break;
            }
        }
        assert!(reached);
    }

    #[test]
    fn snapshot_upside_down() {
        let env = FlipBot::default();
        let s = StateVector::new(vec![0.0, 0.0, PI, 0.0], env.spec().state_schema.clone()).unwrap();
        let doc = env.render_snapshot(&s);
        assert!(doc.text.contains("upside down"));
        assert_eq!(doc, env.render_snapshot(&s));
    }

    #[test]
    fn reward_and_valid_region() {
        let env = FlipBot::default();
        assert_eq!(env.task_reward(&[0.0, 2.0, 0.1, 0.0], &[0.0, 0.0]), 2.0);
        assert_eq!(env.task_reward(&[0.0, 2.0, 1.0, 0.0], &[0.0, 0.0]), 0.0);
        let sch = env.spec().state_schema.clone();
        assert!(env.truth_valid(&StateVector::new(vec![0.0, 0.0, 0.3, 0.0], sch.clone()).unwrap()));
        assert!(!env.truth_valid(&StateVector::new(vec![0.0, 0.0, PI, 0.0], sch).unwrap()));
    }
}
