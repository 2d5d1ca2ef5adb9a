use std::f64::consts::PI;
use std::fmt::Write as _;

use super::{schema, uniform_noise, wrap_angle, EnvSpec, EnvState, Environment, ResetMode, SceneDocument};
use crate::types::StateVector;

/// Physical constants of the cart-pole. `theta = 0` is upright.
#[derive(Debug, Clone, PartialEq)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub gravity: f64,
    pub force_scale: f64,
    pub dt: f64,
    /// Cart travel limit; the cart stops dead at ±`track_limit`.
    pub track_limit: f64,
    pub reset_noise: f64,
    pub max_episode_steps: usize,
    /// Test-only variant: the cart is held fixed and the pole swings freely
    /// about the pivot.
    pub clamp_cart: bool,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.8,
            force_scale: 10.0,
            dt: 0.02,
            track_limit: 3.0,
            reset_noise: 0.05,
            max_episode_steps: 1000,
            clamp_cart: false,
        }
    }
}

pub const VALID_ANGLE: f64 = 0.5;
pub const VALID_ANGULAR_SPEED: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct CartPole {
    pub params: CartPoleParams,
    spec: EnvSpec,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new(CartPoleParams::default())
    }
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Self {
        let lim = params.track_limit;
        let state_schema = schema(
            "cartpole_state",
            &[
                ("x", "m, cart position along the track", Some((-lim, lim))),
                ("x_dot", "m/s, cart velocity", None),
                ("theta", "rad, pole angle from upright, wrapped to (-pi, pi]", Some((-PI, PI))),
                ("theta_dot", "rad/s, pole angular velocity", None),
            ],
        );
        let action_schema = schema(
            "cartpole_action",
            &[("force", "normalised horizontal force on the cart; 1.0 = 10 N", Some((-1.0, 1.0)))],
        );
        let derived = [
            ("cos_theta", "cos(theta)", "1 when upright, -1 when hanging"),
            ("sin_theta", "sin(theta)", ""),
            ("abs_theta", "abs(theta)", "rad"),
            ("abs_theta_dot", "abs(theta_dot)", "rad/s"),
            ("upright_err", "abs(theta)", "rad, distance from upright"),
        ];
        let mut view: Vec<(&str, &str, Option<(f64, f64)>)> = vec![
            ("x", "m", Some((-lim, lim))),
            ("x_dot", "m/s", None),
            ("theta", "rad", Some((-PI, PI))),
            ("theta_dot", "rad/s", None),
        ];
        let derived_units: Vec<String> = derived
            .iter()
            .map(|(_, f, note)| if note.is_empty() { f.to_string() } else { format!("{f}; {note}") })
            .collect();
        for ((name, _, _), unit) in derived.iter().zip(&derived_units) {
            view.push((name, unit.as_str(), None));
        }
        let reward_view_schema = schema("cartpole_reward_view", &view);
        let spec = EnvSpec {
            name: "cartpole".into(),
            state_schema,
            action_schema,
            reward_view_schema,
            derived_features: derived.iter().map(|(n, f, _)| (n.to_string(), f.to_string())).collect(),
            dt: params.dt,
            max_episode_steps: params.max_episode_steps,
            termination: format!("abs(theta) > {VALID_ANGLE} rad"),
            task_description: "A cart moves along a horizontal track with a pole hinged on top. \
                The original task is to keep the pole balanced upright above the cart for as long as \
                possible (task reward cos(theta) - 0.01 * force^2 per step). Original-task episodes end \
                once the pole tilts more than 0.5 rad from vertical."
                .into(),
            default_lambda: 0.05,
        };
        Self { params, spec }
    }

    /// Pole angular acceleration and cart acceleration for force `f` (N).
    fn accelerations(&self, theta: f64, theta_dot: f64, f: f64) -> (f64, f64) {
        let p = &self.params;
        let (s, c) = theta.sin_cos();
        if p.clamp_cart {
            // Physical pendulum about a fixed pivot: I = (4/3) m l².
            return (3.0 * p.gravity * s / (4.0 * p.half_length), 0.0);
        }
        let total = p.cart_mass + p.pole_mass;
        let pml = p.pole_mass * p.half_length;
        let temp = (f + pml * theta_dot * theta_dot * s) / total;
        let theta_acc =
            (p.gravity * s - c * temp) / (p.half_length * (4.0 / 3.0 - p.pole_mass * c * c / total));
        let x_acc = temp - pml * theta_acc * c / total;
        (theta_acc, x_acc)
    }

    /// Mechanical energy of the clamped-cart pendulum, zero at rest hanging.
    pub fn pendulum_energy(&self, theta: f64, theta_dot: f64) -> f64 {
        let p = &self.params;
        let inertia = 4.0 / 3.0 * p.pole_mass * p.half_length * p.half_length;
        0.5 * inertia * theta_dot * theta_dot + p.pole_mass * p.gravity * p.half_length * (theta.cos() + 1.0)
    }
}

impl Environment for CartPole {
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
        let (mut x, mut x_dot, theta, mut theta_dot) = (s[0], s[1], s[2], s[3]);
        let f = p.force_scale * a[0];
        let (theta_acc, x_acc) = self.accelerations(theta, theta_dot, f);
        // Semi-implicit Euler: velocities first, positions from new velocities.
        x_dot += p.dt * x_acc;
        theta_dot += p.dt * theta_acc;
        x += p.dt * x_dot;
        let theta = wrap_angle(theta + p.dt * theta_dot);
        if x.abs() > p.track_limit {
            x = x.clamp(-p.track_limit, p.track_limit);
            x_dot = 0.0;
        }
        vec![x, x_dot, theta, theta_dot]
    }

    fn task_reward(&self, next: &[f64], a: &[f64]) -> f64 {
        next[2].cos() - 0.01 * a[0] * a[0]
    }

    fn termination_predicate(&self, s: &[f64]) -> bool {
        s[2].abs() > VALID_ANGLE
    }

    fn truth_valid(&self, s: &StateVector) -> bool {
        let v = s.values();
        v[2].abs() <= VALID_ANGLE && v[3].abs() <= VALID_ANGULAR_SPEED
    }

    fn reward_view_values(&self, s: &[f64]) -> Vec<f64> {
        let theta = s[2];
        vec![
            s[0],
            s[1],
            s[2],
            s[3],
            theta.cos(),
            theta.sin(),
            theta.abs(),
            s[3].abs(),
            theta.abs(),
        ]
    }

    fn render_snapshot(&self, state: &StateVector) -> SceneDocument {
        let v = state.values();
        let (x, x_dot, theta, theta_dot) = (v[0], v[1], v[2], v[3]);
        let pole_len = 2.0 * self.params.half_length;
        let tip_x = x + pole_len * theta.sin();
        let tip_h = pole_len * theta.cos();
        let deg = theta.to_degrees();
        let side = if theta > 0.0 { "right" } else { "left" };
        let posture = if theta.abs() <= VALID_ANGLE {
            format!("the pole is nearly upright above the cart, leaning slightly to the {side}")
        } else if theta.abs() >= 2.5 {
            "the pole is hanging downward below the cart".to_string()
        } else if theta.abs() < PI / 2.0 {
            format!("the pole is tilted steeply to the {side} but still above the pivot")
        } else {
            format!("the pole points below the pivot, swung out to the {side}")
        };
        let mut text = String::new();
        let _ = writeln!(text, "Scene: a cart-pole system seen from the side by a fixed camera.");
        let _ = writeln!(
            text,
            "Track: horizontal, from {:.1} m to {:.1} m; the cart's wheels rest on the track.",
            -self.params.track_limit, self.params.track_limit
        );
        let _ = writeln!(text, "Cart: position {x:.3} m, velocity {x_dot:.3} m/s.");
        let _ = writeln!(
            text,
            "Pole: length {pole_len:.2} m, angle {deg:.1} degrees from upright, angular velocity {theta_dot:.3} rad/s."
        );
        let _ = writeln!(text, "Orientation: {posture}.");
        let _ = writeln!(
            text,
            "Pole tip: {:.2} m {} the pivot, {:.2} m horizontally from the cart centre.",
            tip_h.abs(),
            if tip_h >= 0.0 { "above" } else { "below" },
            (tip_x - x).abs()
        );
        let _ = writeln!(text, "Contact: the pole does not touch the ground.");

        // 1 m = 100 px; the track sits at y = 200.
        let px = |m: f64| 300.0 + 100.0 * m;
        let (cx, cy) = (px(x), 200.0);
        let (tx, ty) = (cx + 100.0 * pole_len * theta.sin(), cy - 100.0 * pole_len * theta.cos());
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="600" height="360" viewBox="0 0 600 360">"#
        );
        let _ = writeln!(svg, r##"  <rect width="600" height="360" fill="#ffffff"/>"##);
        let _ = writeln!(
            svg,
            r##"  <line x1="{:.1}" y1="215" x2="{:.1}" y2="215" stroke="#555555" stroke-width="3"/>"##,
            px(-self.params.track_limit),
            px(self.params.track_limit)
        );
        let _ = writeln!(
            svg,
            r##"  <rect x="{:.1}" y="{:.1}" width="50" height="25" fill="#3366cc"/>"##,
            cx - 25.0,
            cy - 12.5
        );
        let _ = writeln!(
            svg,
            r##"  <line x1="{cx:.1}" y1="{cy:.1}" x2="{tx:.1}" y2="{ty:.1}" stroke="#cc6633" stroke-width="6"/>"##
        );
        let _ = writeln!(svg, r##"  <circle cx="{cx:.1}" cy="{cy:.1}" r="4" fill="#000000"/>"##);
        let _ = writeln!(svg, "</svg>");
        SceneDocument { text, svg }
    }
}
