//! Discrete gaze environment over a scene, and the scripted expert that
//! produces guaranteed-successful episodes for behavior cloning.
//!
//! The camera center lives on an 8x8 grid of 4-pixel cells. A pan action
//! moves one cell; `select` ends the episode. The episode succeeds when the
//! selected view holds the target's center inside the central quarter-width
//! window, which on a 32-pixel canvas means within 4 pixels of the gaze
//! point on each axis.

use super::raster::{shift_view, Image, Style, WIDTH};
use super::scene::{render_scene, SceneSpec};
use super::vocab::Category;
use super::{Result, WorldError};
use crate::util::rng::stream;
use rand::Rng;

/// Pan step in pixels; one grid cell.
pub const CELL: i32 = 4;
/// Cells per axis.
pub const GRID: i32 = (WIDTH as i32) / CELL;
/// Fixation tolerance in pixels per axis: half the central quarter-width
/// window.
pub const SUCCESS_RADIUS: f32 = WIDTH as f32 / 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    PanLeft,
    PanRight,
    PanUp,
    PanDown,
    Select,
}

pub const ACTIONS: [Action; 5] = [
    Action::PanLeft,
    Action::PanRight,
    Action::PanUp,
    Action::PanDown,
    Action::Select,
];

impl Action {
    pub fn id(self) -> u32 {
        match self {
            Action::PanLeft => 0,
            Action::PanRight => 1,
            Action::PanUp => 2,
            Action::PanDown => 3,
            Action::Select => 4,
        }
    }

    pub fn from_id(id: u32) -> Result<Action> {
        ACTIONS
            .get(id as usize)
            .copied()
            .ok_or_else(|| WorldError::invalid("action", format!("unknown action id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::PanLeft => "pan_left",
            Action::PanRight => "pan_right",
            Action::PanUp => "pan_up",
            Action::PanDown => "pan_down",
            Action::Select => "select",
        }
    }
}

/// The environment's MDP surrogate metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvMeta {
    pub actions: Vec<String>,
    pub success_radius: f32,
}

pub fn env_meta() -> EnvMeta {
    EnvMeta {
        actions: ACTIONS.iter().map(|a| a.name().to_string()).collect(),
        success_radius: SUCCESS_RADIUS,
    }
}

/// Panning camera over one rendered scene with a category target.
#[derive(Debug, Clone)]
pub struct GazeEnv {
    scene: SceneSpec,
    base: Image,
    target: Category,
    target_px: (f32, f32),
    cell: (i32, i32),
    selected: bool,
}

impl GazeEnv {
    /// The target category must name an object of the scene; `init_cell`
    /// coordinates are grid cells in `[0, 8)` per axis.
    pub fn new(scene: SceneSpec, target: Category, init_cell: (i32, i32)) -> Result<Self> {
        let obj = scene
            .objects
            .iter()
            .find(|o| o.category == target)
            .ok_or_else(|| {
                WorldError::invalid("gaze_env", format!("target '{}' not in scene", target.name()))
            })?;
        if !(0..GRID).contains(&init_cell.0) || !(0..GRID).contains(&init_cell.1) {
            return Err(WorldError::invalid(
                "gaze_env",
                format!("init cell {init_cell:?} outside the {GRID}x{GRID} grid"),
            ));
        }
        let target_px = (obj.center.0 * WIDTH as f32, obj.center.1 * WIDTH as f32);
        let base = render_scene(&scene);
        Ok(GazeEnv {
            scene,
            base,
            target,
            target_px,
            cell: init_cell,
            selected: false,
        })
    }

    pub fn prompt(&self) -> String {
        format!("gaze at the {}", self.target.name())
    }

    pub fn target(&self) -> Category {
        self.target
    }

    pub fn cell(&self) -> (i32, i32) {
        self.cell
    }

    pub fn style(&self) -> Style {
        self.scene.style
    }

    /// Gaze point in scene pixels: the center of the current cell.
    pub fn gaze_px(&self) -> (f32, f32) {
        (
            (CELL * self.cell.0 + CELL / 2) as f32,
            (CELL * self.cell.1 + CELL / 2) as f32,
        )
    }

    /// Current camera view: the scene translated so the gaze point sits at
    /// the canvas center, background continuing past the scene edge.
    pub fn frame(&self) -> Image {
        let (gx, gy) = self.gaze_px();
        let half = WIDTH as i32 / 2;
        shift_view(
            &self.base,
            self.scene.style,
            half - gx as i32,
            half - gy as i32,
        )
    }

    /// True while no `select` has been taken.
    pub fn active(&self) -> bool {
        !self.selected
    }

    /// Fixation predicate at the current gaze.
    pub fn fixated(&self) -> bool {
        let (gx, gy) = self.gaze_px();
        (self.target_px.0 - gx).abs() <= SUCCESS_RADIUS
            && (self.target_px.1 - gy).abs() <= SUCCESS_RADIUS
    }

    pub fn success(&self) -> bool {
        self.selected && self.fixated()
    }

    /// Applies one action; returns true when the episode is over. Pans
    /// clamp at the grid edge; stepping after `select` is rejected.
    pub fn step(&mut self, action: Action) -> Result<bool> {
        if self.selected {
            return Err(WorldError::invalid("gaze_env", "episode already ended"));
        }
        match action {
            Action::PanLeft => self.cell.0 = (self.cell.0 - 1).max(0),
            Action::PanRight => self.cell.0 = (self.cell.0 + 1).min(GRID - 1),
            Action::PanUp => self.cell.1 = (self.cell.1 - 1).max(0),
            Action::PanDown => self.cell.1 = (self.cell.1 + 1).min(GRID - 1),
            Action::Select => self.selected = true,
        }
        Ok(self.selected)
    }
}

/// One gaze rollout. Frames bracket the actions: `frames[i]` is the view
/// before `actions[i]`, and the final frame is the view at episode end.
#[derive(Debug, Clone)]
pub struct Episode {
    pub frames: Vec<Image>,
    pub actions: Vec<Action>,
    pub prompt: String,
    pub target: Category,
    pub success: bool,
    pub meta: EnvMeta,
    pub scene_seed: u64,
    pub init_cell: (i32, i32),
}

/// Grid cell whose center is nearest to a pixel coordinate.
fn nearest_cell(px: f32) -> i32 {
    (((px - (CELL / 2) as f32) / CELL as f32).round() as i32).clamp(0, GRID - 1)
}

/// Greedy expert action sequence from `init_cell`: horizontal pans, then
/// vertical pans, then `select`.
pub fn expert_actions(scene: &SceneSpec, target: Category, init_cell: (i32, i32)) -> Result<Vec<Action>> {
    let obj = scene
        .objects
        .iter()
        .find(|o| o.category == target)
        .ok_or_else(|| {
            WorldError::invalid("script_expert", format!("target '{}' not in scene", target.name()))
        })?;
    let tx = nearest_cell(obj.center.0 * WIDTH as f32);
    let ty = nearest_cell(obj.center.1 * WIDTH as f32);
    let (dx, dy) = (tx - init_cell.0, ty - init_cell.1);
    let mut actions = Vec::with_capacity((dx.abs() + dy.abs() + 1) as usize);
    for _ in 0..dx.abs() {
        actions.push(if dx < 0 { Action::PanLeft } else { Action::PanRight });
    }
    for _ in 0..dy.abs() {
        actions.push(if dy < 0 { Action::PanUp } else { Action::PanDown });
    }
    actions.push(Action::Select);
    Ok(actions)
}

/// Rolls the greedy expert through the environment. The starting cell is
/// drawn from the scene seed's `gaze-init` stream, so the episode is a pure
/// function of (scene, target).
pub fn script_expert(scene: &SceneSpec, target: Category) -> Result<Episode> {
    let mut rng = stream(scene.seed, "gaze-init");
    let init_cell = (rng.gen_range(0..GRID), rng.gen_range(0..GRID));
    run_episode(scene, target, init_cell)
}

/// Replays an action sequence from a fixed start, collecting frames.
pub fn replay_episode(
    scene: &SceneSpec,
    target: Category,
    init_cell: (i32, i32),
    actions: &[Action],
) -> Result<Episode> {
    let mut env = GazeEnv::new(scene.clone(), target, init_cell)?;
    let mut frames = vec![env.frame()];
    for (i, &a) in actions.iter().enumerate() {
        let done = env.step(a)?;
        frames.push(env.frame());
        if done != (i + 1 == actions.len()) {
            return Err(WorldError::invalid(
                "episode",
                format!("select at step {i} of {}", actions.len()),
            ));
        }
    }
    if !env.selected {
        return Err(WorldError::invalid("episode", "action sequence never selects"));
    }
    Ok(Episode {
        frames,
        actions: actions.to_vec(),
        prompt: env.prompt(),
        target,
        success: env.success(),
        meta: env_meta(),
        scene_seed: scene.seed,
        init_cell,
    })
}

fn run_episode(scene: &SceneSpec, target: Category, init_cell: (i32, i32)) -> Result<Episode> {
    let actions = expert_actions(scene, target, init_cell)?;
    let ep = replay_episode(scene, target, init_cell, &actions)?;
    debug_assert!(ep.success, "expert episode failed fixation");
    Ok(ep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::scene::{sample_scene, SceneSpec};
    use crate::world::vocab::{all_categories, Color, Shape, Texture};
    use crate::world::Style;

    fn one_circle_at(cx: f32, cy: f32) -> SceneSpec {
        SceneSpec::from_geometry(
            5,
            Style::Plain,
            &[(
                Category::new(Shape::Circle, Texture::Solid),
                Color::Red,
                (cx, cy),
                5.0,
            )],
        )
        .unwrap()
    }

    #[test]
    fn centered_target_selects_immediately() {
        // Cell (3, 3) has center (14, 14); the object sits on it exactly.
        let scene = one_circle_at(14.0 / 32.0, 14.0 / 32.0);
        let target = scene.objects[0].category;
        let actions = expert_actions(&scene, target, (3, 3)).unwrap();
        assert_eq!(actions, vec![Action::Select]);
        let ep = replay_episode(&scene, target, (3, 3), &actions).unwrap();
        assert!(ep.success);
        assert_eq!(ep.frames.len(), 2);
    }

    #[test]
    fn target_three_cells_left_pans_left_three_times() {
        let scene = one_circle_at(14.0 / 32.0, 14.0 / 32.0);
        let target = scene.objects[0].category;
        let actions = expert_actions(&scene, target, (6, 3)).unwrap();
        assert_eq!(
            actions,
            vec![Action::PanLeft, Action::PanLeft, Action::PanLeft, Action::Select]
        );
    }

    #[test]
    fn five_hundred_scripted_episodes_all_succeed() {
        let pool = all_categories();
        for seed in 0..500u64 {
            let scene = sample_scene(seed, Style::Plain, &pool).unwrap();
            let pick = stream(seed, "target").gen_range(0..scene.objects.len());
            let target = scene.objects[pick].category;
            let ep = script_expert(&scene, target).unwrap();
            assert!(ep.success, "seed {seed}");
            assert_eq!(ep.actions.len(), ep.frames.len() - 1, "seed {seed}");
            assert_eq!(ep.prompt, format!("gaze at the {}", target.name()));
        }
    }

    #[test]
    fn success_tracks_the_fixation_predicate() {
        let scene = one_circle_at(14.0 / 32.0, 14.0 / 32.0);
        let target = scene.objects[0].category;
        // Selecting far from the target fails; the replayed record says so.
        let ep = replay_episode(&scene, target, (7, 7), &[Action::Select]).unwrap();
        assert!(!ep.success);
        let mut env = GazeEnv::new(scene, target, (3, 3)).unwrap();
        assert!(env.fixated());
        assert!(!env.success(), "no select taken yet");
        env.step(Action::Select).unwrap();
        assert!(env.success());
        assert!(env.step(Action::PanLeft).is_err());
    }

    #[test]
    fn pans_clamp_at_the_grid_edge() {
        let scene = one_circle_at(14.0 / 32.0, 14.0 / 32.0);
        let target = scene.objects[0].category;
        let mut env = GazeEnv::new(scene, target, (0, 0)).unwrap();
        env.step(Action::PanLeft).unwrap();
        env.step(Action::PanUp).unwrap();
        assert_eq!(env.cell(), (0, 0));
    }

    #[test]
    fn views_translate_with_the_gaze() {
        let scene = one_circle_at(14.0 / 32.0, 14.0 / 32.0);
        let target = scene.objects[0].category;
        let mut env = GazeEnv::new(scene.clone(), target, (3, 3)).unwrap();
        let before = env.frame();
        env.step(Action::PanRight).unwrap();
        let after = env.frame();
        assert_ne!(before.rgb, after.rgb);
        // The panned view equals the base shifted by one more cell.
        let base = render_scene(&scene);
        let expected = shift_view(&base, Style::Plain, 16 - 18, 16 - 14);
        assert_eq!(after.rgb, expected.rgb);
    }
}
