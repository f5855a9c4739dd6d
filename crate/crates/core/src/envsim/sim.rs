use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::RngStream;

pub type Vec2 = [f64; 2];

/// Radius of the pushable object in the push task.
pub const OBJECT_RADIUS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    PlanarReach,
    PlanarPush,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::PlanarReach => "planar-reach",
            EnvKind::PlanarPush => "planar-push",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::PlanarReach => 7,
            EnvKind::PlanarPush => 9,
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planar-reach" => Ok(EnvKind::PlanarReach),
            "planar-push" => Ok(EnvKind::PlanarPush),
            other => Err(Error::config(
                "name",
                format!("unknown environment `{other}` (expected planar-reach or planar-push)"),
            )),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const ACTION_DIM: usize = 2;

/// Deserializes from a partial document: fields left out take the preset
/// values for `name`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvConfigDoc")]
pub struct EnvConfig {
    pub name: EnvKind,
    pub horizon: usize,
    pub success_tol: f64,
    /// Per-step displacement bound on each action component.
    pub max_step: f64,
    pub control_hz: f64,
    /// Obstacle radius is drawn uniformly from this range at reset.
    pub obstacle_radius: [f64; 2],
    /// Probability that the scripted expert detours to the left.
    pub expert_bias: f64,
    /// Steps per action chunk (H).
    pub chunk_len: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvConfigDoc {
    name: EnvKind,
    horizon: Option<usize>,
    success_tol: Option<f64>,
    max_step: Option<f64>,
    control_hz: Option<f64>,
    obstacle_radius: Option<[f64; 2]>,
    expert_bias: Option<f64>,
    chunk_len: Option<usize>,
}

impl TryFrom<EnvConfigDoc> for EnvConfig {
    type Error = Error;

    fn try_from(d: EnvConfigDoc) -> Result<Self> {
        let p = EnvConfig::preset(d.name);
        let cfg = EnvConfig {
            name: d.name,
            horizon: d.horizon.unwrap_or(p.horizon),
            success_tol: d.success_tol.unwrap_or(p.success_tol),
            max_step: d.max_step.unwrap_or(p.max_step),
            control_hz: d.control_hz.unwrap_or(p.control_hz),
            obstacle_radius: d.obstacle_radius.unwrap_or(p.obstacle_radius),
            expert_bias: d.expert_bias.unwrap_or(p.expert_bias),
            chunk_len: d.chunk_len.unwrap_or(p.chunk_len),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl EnvConfig {
    /// Parses a partial document, keeping validation errors typed.
    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        let doc: EnvConfigDoc = serde_json::from_value(v).map_err(|e| Error::config("env", e.to_string()))?;
        doc.try_into()
    }

    pub fn planar_reach() -> Self {
        Self {
            name: EnvKind::PlanarReach,
            horizon: 56,
            success_tol: 0.05,
            max_step: 0.04,
            control_hz: 10.0,
            obstacle_radius: [0.12, 0.18],
            expert_bias: 0.9,
            chunk_len: 8,
        }
    }

    pub fn planar_push() -> Self {
        Self {
            name: EnvKind::PlanarPush,
            horizon: 72,
            success_tol: 0.05,
            max_step: 0.04,
            control_hz: 10.0,
            obstacle_radius: [0.06, 0.08],
            expert_bias: 0.9,
            chunk_len: 8,
        }
    }

    pub fn preset(kind: EnvKind) -> Self {
        match kind {
            EnvKind::PlanarReach => Self::planar_reach(),
            EnvKind::PlanarPush => Self::planar_push(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.name.obs_dim()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.success_tol > 0.0) {
            return Err(Error::config("success_tol", "must be positive"));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::config("max_step", "must be positive"));
        }
        if !(self.control_hz > 0.0) {
            return Err(Error::config("control_hz", "must be positive"));
        }
        if self.chunk_len == 0 {
            return Err(Error::config("chunk_len", "must be at least 1"));
        }
        if self.horizon < self.chunk_len {
            return Err(Error::config("horizon", "must be at least chunk_len"));
        }
        let [lo, hi] = self.obstacle_radius;
        if !(lo > 0.0 && hi >= lo && hi < 0.3) {
            return Err(Error::config("obstacle_radius", "expected 0 < lo <= hi < 0.3"));
        }
        if !(0.0..=1.0).contains(&self.expert_bias) {
            return Err(Error::config("expert_bias", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub kind: EnvKind,
    pub robot: Vec2,
    /// Present only for the push task.
    pub object: Option<Vec2>,
    pub goal: Vec2,
    pub obstacle: Obstacle,
    pub step: usize,
    /// Seed the episode was reset from.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub done: bool,
    pub success: bool,
    /// The action after clipping, which is what gets recorded.
    pub applied_action: Vec2,
}

pub(crate) fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

pub(crate) fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

pub(crate) fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn norm(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist(a: Vec2, b: Vec2) -> f64 {
    norm(sub(a, b))
}

pub(crate) fn normalize(a: Vec2) -> Vec2 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        [0.0, 0.0]
    }
}

/// Left-hand perpendicular of a direction of travel.
pub(crate) fn left_of(dir: Vec2) -> Vec2 {
    [-dir[1], dir[0]]
}

fn clamp_box(p: Vec2, margin: f64) -> Vec2 {
    [p[0].clamp(margin, 1.0 - margin), p[1].clamp(margin, 1.0 - margin)]
}

/// Distance from `c` to the segment `a`–`b`.
pub(crate) fn segment_distance(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(sub(c, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(add(a, scale(ab, t)), c)
}

fn to_unit(v: f64) -> f64 {
    2.0 * v - 1.0
}

fn from_unit(v: f64) -> f64 {
    (v + 1.0) / 2.0
}

impl EnvState {
    pub fn observation(&self) -> Vec<f64> {
        let mut o = Vec::with_capacity(self.kind.obs_dim());
        o.extend(self.robot.map(to_unit));
        if let Some(obj) = self.object {
            o.extend(obj.map(to_unit));
        }
        o.extend(self.goal.map(to_unit));
        o.extend(self.obstacle.center.map(to_unit));
        o.push(self.obstacle.radius * 5.0);
        o
    }

    /// The tracked point whose distance to the goal decides success.
    pub fn target(&self) -> Vec2 {
        self.object.unwrap_or(self.robot)
    }

    pub fn is_success(&self, tol: f64) -> bool {
        dist(self.target(), self.goal) <= tol
    }
}

/// Robot position encoded in an observation vector.
pub fn robot_from_observation(obs: &[f64]) -> Vec2 {
    [from_unit(obs[0]), from_unit(obs[1])]
}

pub fn reset(cfg: &EnvConfig, seed: u64) -> (EnvState, Vec<f64>) {
    let mut rng = RngStream::new(seed, format!("env/reset/{}", cfg.name));
    let [r_lo, r_hi] = cfg.obstacle_radius;
    let state = match cfg.name {
        EnvKind::PlanarReach => {
            let start = [rng.uniform_range(0.15, 0.85), rng.uniform_range(0.06, 0.14)];
            let goal = [
                (start[0] + rng.uniform_range(-0.15, 0.15)).clamp(0.1, 0.9),
                rng.uniform_range(0.84, 0.94),
            ];
            let dir = normalize(sub(goal, start));
            let mid = scale(add(start, goal), 0.5);
            let lateral = rng.uniform_range(-0.04, 0.04);
            let along = rng.uniform_range(-0.05, 0.05);
            let center = add(mid, add(scale(left_of(dir), lateral), scale(dir, along)));
            let radius = rng.uniform_range(r_lo, r_hi);
            EnvState {
                kind: cfg.name,
                robot: start,
                object: None,
                goal,
                obstacle: Obstacle { center, radius },
                step: 0,
                seed,
            }
        }
        EnvKind::PlanarPush => {
            let object = [rng.uniform_range(0.3, 0.7), rng.uniform_range(0.35, 0.5)];
            let goal = clamp_box(
                [
                    object[0] + rng.uniform_range(-0.15, 0.15),
                    object[1] + rng.uniform_range(0.28, 0.38),
                ],
                0.1,
            );
            // Robot starts on a ring around the object, mostly behind it
            // but sometimes beside or in front so it has to go around.
            let u = normalize(sub(goal, object));
            let theta = rng.uniform_range(-2.2, 2.2);
            let behind = scale(u, -1.0);
            let (s, c) = theta.sin_cos();
            let ring_dir = [behind[0] * c - behind[1] * s, behind[0] * s + behind[1] * c];
            let robot = clamp_box(add(object, scale(ring_dir, rng.uniform_range(0.15, 0.22))), 0.03);
            let radius = rng.uniform_range(r_lo, r_hi);
            let side = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            let mut cx = object[0] + side * rng.uniform_range(0.25, 0.3);
            if !(0.1..=0.9).contains(&cx) {
                cx = object[0] - side * rng.uniform_range(0.25, 0.3);
            }
            let cy = rng.uniform_range(0.3, 0.7);
            EnvState {
                kind: cfg.name,
                robot,
                object: Some(object),
                goal,
                obstacle: Obstacle {
                    center: [cx.clamp(0.08, 0.92), cy],
                    radius,
                },
                step: 0,
                seed,
            }
        }
    };
    let obs = state.observation();
    (state, obs)
}

/// Moves `from` by `delta`, sliding along the obstacle instead of entering it.
fn move_blocked(from: Vec2, delta: Vec2, obstacle: &Obstacle, keep_out: f64) -> Vec2 {
    let r = obstacle.radius + keep_out;
    let mut to = clamp_box(add(from, delta), 0.0);
    if dist(to, obstacle.center) < r {
        let n = normalize(sub(from, obstacle.center));
        let into = dot(delta, n);
        let slide = if into < 0.0 { sub(delta, scale(n, into)) } else { delta };
        to = clamp_box(add(from, slide), 0.0);
        let off = sub(to, obstacle.center);
        if norm(off) < r {
            let dir = if norm(off) > 0.0 { normalize(off) } else { n };
            to = clamp_box(add(obstacle.center, scale(dir, r)), 0.0);
            if dist(to, obstacle.center) < r - 1e-12 {
                to = from;
            }
        }
    }
    to
}

pub fn clip_action(cfg: &EnvConfig, action: Vec2) -> Vec2 {
    let m = cfg.max_step;
    action.map(|a| if a.is_finite() { a.clamp(-m, m) } else { 0.0 })
}

pub fn step(cfg: &EnvConfig, state: &mut EnvState, action: Vec2) -> StepOutcome {
    let a = clip_action(cfg, action);
    let robot = move_blocked(state.robot, a, &state.obstacle, 0.0);
    state.robot = robot;
    if let Some(obj) = state.object {
        let gap = sub(obj, robot);
        let d = norm(gap);
        if d < OBJECT_RADIUS {
            let n = if d > 1e-12 { scale(gap, 1.0 / d) } else { normalize(a) };
            let pushed = add(robot, scale(n, OBJECT_RADIUS));
            let moved = move_blocked(obj, sub(pushed, obj), &state.obstacle, OBJECT_RADIUS);
            state.object = Some(clamp_box(moved, OBJECT_RADIUS));
        }
    }
    state.step += 1;
    let success = state.is_success(cfg.success_tol);
    StepOutcome {
        observation: state.observation(),
        done: success || state.step >= cfg.horizon,
        success,
        applied_action: a,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn reset_is_deterministic() {
        for cfg in [EnvConfig::planar_reach(), EnvConfig::planar_push()] {
            let (a, oa) = reset(&cfg, 17);
            let (b, ob) = reset(&cfg, 17);
            assert_eq!(a, b);
            assert_eq!(oa, ob);
            assert_eq!(oa.len(), cfg.obs_dim());
        }
    }

    #[test]
    fn hundred_seeds_give_distinct_starts() {
        let cfg = EnvConfig::planar_reach();
        let starts: HashSet<Vec<u64>> = (0..100)
            .map(|s| reset(&cfg, s).1.iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(starts.len(), 100);
    }

    #[test]
    fn reset_positions_inside_workspace_and_clear_of_obstacle() {
        for cfg in [EnvConfig::planar_reach(), EnvConfig::planar_push()] {
            for seed in 0..200 {
                let (s, _) = reset(&cfg, seed);
                for p in [s.robot, s.goal, s.obstacle.center] {
                    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)), "{p:?}");
                }
                assert!(dist(s.robot, s.obstacle.center) > s.obstacle.radius);
                assert!(dist(s.goal, s.obstacle.center) > s.obstacle.radius);
            }
        }
    }

    #[test]
    fn zero_action_only_advances_step() {
        let cfg = EnvConfig::planar_push();
        let (mut s, _) = reset(&cfg, 3);
        let before = s.clone();
        step(&cfg, &mut s, [0.0, 0.0]);
        assert_eq!(s.step, 1);
        assert_eq!((s.robot, s.object, s.goal), (before.robot, before.object, before.goal));
    }

    #[test]
    fn half_tolerance_step_reaches_goal() {
        let cfg = EnvConfig::planar_reach();
        let (mut s, _) = reset(&cfg, 5);
        let tol = cfg.success_tol;
        s.robot = [s.goal[0] - tol / 2.0, s.goal[1]];
        let out = step(&cfg, &mut s, [tol / 2.0, 0.0]);
        assert!(out.success && out.done);
    }

    #[test]
    fn actions_are_clipped() {
        let cfg = EnvConfig::planar_reach();
        let (mut s, _) = reset(&cfg, 1);
        let out = step(&cfg, &mut s, [1.0, -f64::INFINITY]);
        assert_eq!(out.applied_action, [cfg.max_step, 0.0]);
    }

    #[test]
    fn obstacle_blocks_head_on_motion() {
        let cfg = EnvConfig::planar_reach();
        let (mut s, _) = reset(&cfg, 2);
        s.obstacle = Obstacle {
            center: [0.5, 0.5],
            radius: 0.1,
        };
        s.robot = [0.5, 0.39];
        for _ in 0..5 {
            step(&cfg, &mut s, [0.0, 0.04]);
            assert!(dist(s.robot, s.obstacle.center) >= 0.1 - 1e-12);
        }
        assert!(s.robot[1] < 0.41);
    }

    #[test]
    fn pushing_moves_object_along_contact_normal() {
        let cfg = EnvConfig::planar_push();
        let (mut s, _) = reset(&cfg, 4);
        s.obstacle.center = [0.95, 0.05];
        s.obstacle.radius = 0.03;
        s.object = Some([0.5, 0.5]);
        s.robot = [0.5, 0.42];
        for _ in 0..5 {
            step(&cfg, &mut s, [0.0, 0.03]);
        }
        // robot ends at y = 0.57, object held one radius ahead of it
        let obj = s.object.unwrap();
        assert!((obj[0] - 0.5).abs() < 1e-12);
        assert!((obj[1] - (0.57 + OBJECT_RADIUS)).abs() < 1e-9, "{obj:?}");
    }

    #[test]
    fn horizon_ends_episode() {
        let cfg = EnvConfig::planar_reach();
        let (mut s, _) = reset(&cfg, 8);
        let mut done = false;
        for _ in 0..cfg.horizon {
            done = step(&cfg, &mut s, [0.0, 0.0]).done;
        }
        assert!(done);
    }

    #[test]
    fn invalid_config_names_field() {
        let mut cfg = EnvConfig::planar_reach();
        cfg.success_tol = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "success_tol"));
        assert!("planar-fly".parse::<EnvKind>().is_err());
    }
}
