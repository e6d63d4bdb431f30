//! Deterministic 2D tabletop world.
//!
//! The table is the unit square; the gripper adds a height channel in
//! [0, 0.3]. Blocks, a bowl, an LED button, a sliding drawer, and a slider
//! rail live on it. State evolution is a pure function of (state, action):
//! two runs with the same seed and action sequence produce bitwise-identical
//! state streams and renders.

mod detect;
mod expert;
pub mod render;
mod tasks;

pub use detect::detect;
pub use expert::{pre_interaction_pose, run_expert_subtask, scripted_expert, task_feasible, ExpertStep, Phase};
pub use render::{render, Image, Observation, PerturbationSpec, View};
pub use tasks::{task_detector, TargetObject, TaskId, TaskSpec, ALL_TASKS};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::io::{RecordReader, RecordWriter};
use crate::rng::Rng;

/// Fixed scene geometry (world layout, not physics — physics constants live
/// in [`SimConfig`]).
pub mod geom {
    /// Gripper height range.
    pub const Z_MAX: f64 = 0.3;
    /// Button column.
    pub const BUTTON_X: f64 = 0.92;
    pub const BUTTON_RADIUS: f64 = 0.025;
    /// Drawer handle travel along x at fixed y.
    pub const DRAWER_Y: f64 = 0.90;
    pub const DRAWER_X0: f64 = 0.58;
    pub const DRAWER_TRAVEL: f64 = 0.22;
    /// Slider handle travel along x at fixed y.
    pub const SLIDER_Y: f64 = 0.06;
    pub const SLIDER_X0: f64 = 0.30;
    pub const SLIDER_TRAVEL: f64 = 0.40;
    /// Free placement region for blocks, bowl, and gripper starts.
    pub const REGION_X: (f64, f64) = (0.12, 0.80);
    pub const REGION_Y: (f64, f64) = (0.18, 0.78);
    pub const BLOCK_RADIUS: f64 = 0.025;
    /// Minimum center distance between placed objects.
    pub const MIN_SEPARATION: f64 = 0.10;
    /// Expert hover height and contact heights.
    pub const HOVER_Z: f64 = 0.18;
    pub const GRASP_Z: f64 = 0.05;
    pub const PLACE_Z: f64 = 0.12;
    pub const PRESS_Z: f64 = 0.03;

    pub fn drawer_handle_x(frac: f64) -> f64 {
        DRAWER_X0 + DRAWER_TRAVEL * frac
    }

    pub fn slider_handle_x(pos: f64) -> f64 {
        SLIDER_X0 + SLIDER_TRAVEL * pos
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Color {
    Red,
    Green,
    Blue,
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Red, Color::Green, Color::Blue];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
        }
    }

    pub fn parse(s: &str) -> Option<Color> {
        match s {
            "red" => Some(Color::Red),
            "green" => Some(Color::Green),
            "blue" => Some(Color::Blue),
            _ => None,
        }
    }

    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Red => [0.95, 0.10, 0.10],
            Color::Green => [0.10, 0.90, 0.10],
            Color::Blue => [0.15, 0.25, 1.00],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub id: usize,
    pub color: Color,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl GripperPose {
    pub fn planar_dist(&self, x: f64, y: f64) -> f64 {
        ((self.x - x).powi(2) + (self.y - y).powi(2)).sqrt()
    }
}

/// Full simulator ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub time: u64,
    pub gripper: GripperPose,
    pub gripper_closed: bool,
    /// Id of the held block, if any. Held implies `gripper_closed`.
    pub held: Option<usize>,
    pub blocks: Vec<Block>,
    pub bowl: (f64, f64),
    pub led_on: bool,
    pub button_y: f64,
    pub drawer_open_frac: f64,
    pub slider_pos: f64,
    pub rng: Rng,
}

/// 8-channel action token: absolute end-effector target (x, y, z), Euler
/// orientation channels (only yaw is live in the planar world), gripper
/// channel s_g (sign < 0 opens, >= 0 closes), and phase channel s_p
/// (sign < 0 moving, >= 0 interaction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action8 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub eu_x: f64,
    pub eu_y: f64,
    pub eu_z: f64,
    pub s_g: f64,
    pub s_p: f64,
}

impl Action8 {
    pub fn to_array(self) -> [f64; 8] {
        [self.x, self.y, self.z, self.eu_x, self.eu_y, self.eu_z, self.s_g, self.s_p]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Action8 { x: a[0], y: a[1], z: a[2], eu_x: a[3], eu_y: a[4], eu_z: a[5], s_g: a[6], s_p: a[7] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Action whose fixed point is the current state: target = current pose,
    /// gripper channel unchanged.
    pub fn hold(state: &SceneState) -> Self {
        Action8 {
            x: state.gripper.x,
            y: state.gripper.y,
            z: state.gripper.z,
            eu_x: state.gripper.yaw,
            eu_y: 0.0,
            eu_z: 0.0,
            s_g: if state.gripper_closed { 1.0 } else { -1.0 },
            s_p: -1.0,
        }
    }
}

fn press_active(pose: &GripperPose, closed: bool, button_y: f64, cfg: &SimConfig) -> bool {
    closed && pose.z < cfg.press_height && pose.planar_dist(geom::BUTTON_X, button_y) <= cfg.press_radius
}

impl SceneState {
    pub fn check_invariants(&self) -> Result<()> {
        let g = &self.gripper;
        let in_table = |x: f64, y: f64| (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y);
        if !in_table(g.x, g.y) || !(0.0..=geom::Z_MAX).contains(&g.z) {
            return Err(Error::InvalidAction(format!("gripper out of bounds: {g:?}")));
        }
        for b in &self.blocks {
            if !in_table(b.x, b.y) {
                return Err(Error::InvalidAction(format!("block out of bounds: {b:?}")));
            }
        }
        if self.held.is_some() && !self.gripper_closed {
            return Err(Error::InvalidAction("held without closed gripper".into()));
        }
        if !(0.0..=1.0).contains(&self.drawer_open_frac) || !(0.0..=1.0).contains(&self.slider_pos) {
            return Err(Error::InvalidAction("articulation fraction out of [0,1]".into()));
        }
        Ok(())
    }

    pub fn block(&self, id: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn block_by_color(&self, color: Color) -> Option<&Block> {
        self.blocks.iter().find(|b| b.color == color)
    }

    pub fn held_color(&self) -> Option<Color> {
        self.held.and_then(|id| self.block(id)).map(|b| b.color)
    }

    /// True once a block sits in the bowl and is not being carried.
    pub fn block_in_bowl(&self, id: usize, cfg: &SimConfig) -> bool {
        if self.held == Some(id) {
            return false;
        }
        match self.block(id) {
            Some(b) => {
                let d = ((b.x - self.bowl.0).powi(2) + (b.y - self.bowl.1).powi(2)).sqrt();
                d <= cfg.bowl_radius
            }
            None => false,
        }
    }

    /// Serialize to the dataset record layout.
    pub fn put(&self, w: &mut RecordWriter) {
        w.put_u64(self.time);
        for v in [self.gripper.x, self.gripper.y, self.gripper.z, self.gripper.yaw] {
            w.put_f32(v as f32);
        }
        w.put_u8(self.gripper_closed as u8);
        w.put_u8(self.held.map(|h| h as u8 + 1).unwrap_or(0));
        w.put_u32(self.blocks.len() as u32);
        for b in &self.blocks {
            w.put_u8(b.id as u8);
            w.put_u8(match b.color {
                Color::Red => 0,
                Color::Green => 1,
                Color::Blue => 2,
            });
            w.put_f32(b.x as f32);
            w.put_f32(b.y as f32);
        }
        w.put_f32(self.bowl.0 as f32);
        w.put_f32(self.bowl.1 as f32);
        w.put_u8(self.led_on as u8);
        w.put_f32(self.button_y as f32);
        w.put_f32(self.drawer_open_frac as f32);
        w.put_f32(self.slider_pos as f32);
        w.put_u64(self.rng.state());
    }

    pub fn get(r: &mut RecordReader) -> Result<SceneState> {
        let time = r.get_u64()?;
        let gripper = GripperPose {
            x: r.get_f32()? as f64,
            y: r.get_f32()? as f64,
            z: r.get_f32()? as f64,
            yaw: r.get_f32()? as f64,
        };
        let gripper_closed = r.get_u8()? != 0;
        let held = match r.get_u8()? {
            0 => None,
            h => Some(h as usize - 1),
        };
        let n = r.get_u32()? as usize;
        if n > 16 {
            return Err(Error::Format(format!("implausible block count {n}")));
        }
        let mut blocks = Vec::with_capacity(n);
        for _ in 0..n {
            let id = r.get_u8()? as usize;
            let color = match r.get_u8()? {
                0 => Color::Red,
                1 => Color::Green,
                2 => Color::Blue,
                c => return Err(Error::Format(format!("bad color tag {c}"))),
            };
            blocks.push(Block { id, color, x: r.get_f32()? as f64, y: r.get_f32()? as f64 });
        }
        Ok(SceneState {
            time,
            gripper,
            gripper_closed,
            held,
            blocks,
            bowl: (r.get_f32()? as f64, r.get_f32()? as f64),
            led_on: r.get_u8()? != 0,
            button_y: r.get_f32()? as f64,
            drawer_open_frac: r.get_f32()? as f64,
            slider_pos: r.get_f32()? as f64,
            rng: Rng::from_state(r.get_u64()?),
        })
    }
}

/// Sample a fresh scene. Blocks get colors in the fixed order red, green,
/// blue; placements are rejection-sampled for separation. Deterministic per
/// seed. Panics if the retry cap is exhausted, which can only happen with a
/// misconfigured placement region.
pub fn reset(seed: u64, n_blocks: usize) -> SceneState {
    assert!((1..=3).contains(&n_blocks), "n_blocks must be in [1,3]");
    let mut rng = Rng::new(seed);
    let sample_point = |rng: &mut Rng| {
        (rng.range(geom::REGION_X.0, geom::REGION_X.1), rng.range(geom::REGION_Y.0, geom::REGION_Y.1))
    };
    let mut placed: Vec<(f64, f64)> = Vec::new();
    let mut retries = 0;
    while placed.len() < n_blocks + 1 {
        let (x, y) = sample_point(&mut rng);
        let ok = placed
            .iter()
            .all(|(px, py)| ((px - x).powi(2) + (py - y).powi(2)).sqrt() >= geom::MIN_SEPARATION);
        if ok {
            placed.push((x, y));
        } else {
            retries += 1;
            assert!(retries < 10_000, "placement rejection cap exhausted; region too small");
        }
    }
    let bowl = placed[0];
    let blocks = placed[1..]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Block { id: i, color: Color::ALL[i], x, y })
        .collect();
    let button_y = rng.range(0.30, 0.70);
    let (gx, gy) = sample_point(&mut rng);
    SceneState {
        time: 0,
        gripper: GripperPose { x: gx, y: gy, z: geom::HOVER_Z, yaw: 0.0 },
        gripper_closed: false,
        held: None,
        blocks,
        bowl,
        led_on: false,
        button_y,
        drawer_open_frac: 0.0,
        slider_pos: 0.1,
        rng,
    }
}

/// Advance the world by one step.
pub fn step(state: &SceneState, a: &Action8, cfg: &SimConfig) -> Result<SceneState> {
    if !a.is_finite() {
        return Err(Error::InvalidAction(format!("non-finite action {a:?}")));
    }
    let mut next = state.clone();
    let prev_pose = state.gripper;
    let prev_closed = state.gripper_closed;

    // Motion toward the clamped target, bounded by v_max per step.
    let tx = a.x.clamp(0.0, 1.0);
    let ty = a.y.clamp(0.0, 1.0);
    let tz = a.z.clamp(0.0, geom::Z_MAX);
    let (dx, dy, dz) = (tx - prev_pose.x, ty - prev_pose.y, tz - prev_pose.z);
    let dist = (dx * dx + dy * dy + dz * dz).sqrt();
    let scale = if dist > cfg.v_max { cfg.v_max / dist } else { 1.0 };
    next.gripper.x = prev_pose.x + dx * scale;
    next.gripper.y = prev_pose.y + dy * scale;
    next.gripper.z = prev_pose.z + dz * scale;
    let dyaw = (a.eu_x - prev_pose.yaw).clamp(-cfg.yaw_rate, cfg.yaw_rate);
    next.gripper.yaw = prev_pose.yaw + dyaw;

    // Gripper open/close and grasp bookkeeping. Grasping is level-triggered:
    // a closed gripper low over a block attaches it, whether it closed this
    // step or was already closed.
    let now_closed = a.s_g >= 0.0;
    next.gripper_closed = now_closed;
    if prev_closed && !now_closed {
        next.held = None; // release where it stands
    }
    if now_closed && next.held.is_none() && next.gripper.z <= cfg.grasp_height {
        let mut best: Option<(f64, usize)> = None;
        for b in &next.blocks {
            let d = next.gripper.planar_dist(b.x, b.y);
            if d <= cfg.grasp_radius && best.map(|(bd, _)| d < bd).unwrap_or(true) {
                best = Some((d, b.id));
            }
        }
        if let Some((_, id)) = best {
            next.held = Some(id);
        }
    }
    if let Some(id) = next.held {
        if let Some(b) = next.blocks.iter_mut().find(|b| b.id == id) {
            b.x = next.gripper.x;
            b.y = next.gripper.y;
        }
    }

    // LED toggles on the press edge.
    let pressed_before = press_active(&prev_pose, prev_closed, state.button_y, cfg);
    let pressed_after = press_active(&next.gripper, now_closed, state.button_y, cfg);
    if !pressed_before && pressed_after {
        next.led_on = !next.led_on;
    }

    // Handle drags: an empty, closed, low gripper that started the step on a
    // handle carries it along x.
    if now_closed && next.held.is_none() && next.gripper.z <= cfg.grasp_height {
        let moved_x = next.gripper.x - prev_pose.x;
        let drawer_handle = (geom::drawer_handle_x(state.drawer_open_frac), geom::DRAWER_Y);
        if prev_pose.planar_dist(drawer_handle.0, drawer_handle.1) <= cfg.drag_radius {
            next.drawer_open_frac =
                (state.drawer_open_frac + moved_x / geom::DRAWER_TRAVEL).clamp(0.0, 1.0);
        }
        let slider_handle = (geom::slider_handle_x(state.slider_pos), geom::SLIDER_Y);
        if prev_pose.planar_dist(slider_handle.0, slider_handle.1) <= cfg.drag_radius {
            next.slider_pos = (state.slider_pos + moved_x / geom::SLIDER_TRAVEL).clamp(0.0, 1.0);
        }
    }

    next.time += 1;
    Ok(next)
}

/// Sample a randomized state from which `task` is feasible, used both for
/// demonstration collection and for independent-mode evaluation resets.
/// Unrelated scene attributes are mildly randomized to widen the training
/// start distribution without covering the deep chained states.
pub fn feasible_start(seed: u64, task: TaskId, cfg: &SimConfig) -> SceneState {
    let mut state = reset(seed, 3);
    let mut rng = Rng::derive(seed, 0x5EED_57A7);

    // Mild unrelated randomization.
    if !matches!(task, TaskId::TurnLedOn | TaskId::TurnLedOff) {
        state.led_on = rng.chance(0.3);
    }
    if !matches!(task, TaskId::OpenDrawer | TaskId::CloseDrawer) {
        state.drawer_open_frac = rng.range(0.0, 0.15);
    }
    if !matches!(task, TaskId::PushSliderLeft | TaskId::PushSliderRight) {
        state.slider_pos = if rng.chance(0.5) { rng.range(0.0, 0.15) } else { rng.range(0.85, 1.0) };
    }
    // Occasionally pre-place one non-target block in the bowl.
    if rng.chance(0.15) {
        let target_color = match task.target() {
            TargetObject::Block(c) => Some(c),
            _ => None,
        };
        let candidates: Vec<usize> = state
            .blocks
            .iter()
            .filter(|b| Some(b.color) != target_color)
            .map(|b| b.id)
            .collect();
        if !candidates.is_empty() {
            let id = *rng.choose(&candidates);
            let (bx, by) = state.bowl;
            if let Some(b) = state.blocks.iter_mut().find(|b| b.id == id) {
                b.x = bx + rng.range(-0.02, 0.02);
                b.y = by + rng.range(-0.02, 0.02);
            }
        }
    }

    // Long approaches: resample the gripper away from the task target so
    // the moving phase spans enough frames for the cutting rule.
    let (tx, ty) = match task.target() {
        TargetObject::Block(c) => {
            let b = state.block_by_color(c).unwrap();
            (b.x, b.y)
        }
        TargetObject::Bowl => state.bowl,
        TargetObject::Button => (geom::BUTTON_X, state.button_y),
        TargetObject::DrawerHandle => (geom::drawer_handle_x(state.drawer_open_frac), geom::DRAWER_Y),
        TargetObject::SliderHandle => (geom::slider_handle_x(state.slider_pos), geom::SLIDER_Y),
    };
    let mut best = (state.gripper.x, state.gripper.y);
    let mut best_d = ((best.0 - tx).powi(2) + (best.1 - ty).powi(2)).sqrt();
    for _ in 0..40 {
        if best_d >= 0.45 {
            break;
        }
        let cand =
            (rng.range(geom::REGION_X.0, geom::REGION_X.1), rng.range(geom::REGION_Y.0, geom::REGION_Y.1));
        let d = ((cand.0 - tx).powi(2) + (cand.1 - ty).powi(2)).sqrt();
        if d > best_d {
            best = cand;
            best_d = d;
        }
    }
    state.gripper.x = best.0;
    state.gripper.y = best.1;

    // Task preconditions.
    match task {
        TaskId::PickRed | TaskId::PickGreen | TaskId::PickBlue => {}
        TaskId::PlaceRedInBowl | TaskId::PlaceGreenInBowl | TaskId::PlaceBlueInBowl => {
            let color = task.color().unwrap();
            let id = state.block_by_color(color).unwrap().id;
            state.held = Some(id);
            state.gripper_closed = true;
            state.gripper.z = geom::HOVER_Z;
            if let Some(b) = state.blocks.iter_mut().find(|b| b.id == id) {
                b.x = state.gripper.x;
                b.y = state.gripper.y;
            }
        }
        TaskId::TurnLedOn => state.led_on = false,
        TaskId::TurnLedOff => state.led_on = true,
        TaskId::OpenDrawer => state.drawer_open_frac = rng.range(0.0, 0.1),
        TaskId::CloseDrawer => state.drawer_open_frac = rng.range(0.9, 1.0),
        TaskId::PushSliderLeft => state.slider_pos = rng.range(0.85, 1.0),
        TaskId::PushSliderRight => state.slider_pos = rng.range(0.0, 0.15),
    }
    debug_assert!(state.check_invariants().is_ok());
    let _ = cfg;
    state
}
