//! Short panning clips over robotics-style scenes, and the frame sampler
//! that turns them into fine-tuning pairs.
//!
//! A clip is a camera sweep across one scene: a start cell and a per-frame
//! step, clamped at the grid edge. Fine-tuning draws frames uniformly
//! without replacement from the clip's middle third and prepends the
//! embodiment word to the caption.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gaze::{CELL, GRID};
use super::raster::{shift_view, Image, Style, WIDTH};
use super::scene::{render_scene, sample_scene, SceneSpec};
use super::vocab::Category;
use super::{Result, WorldError};
use crate::util::rng::stream;

/// Camera holder named in the fine-tuning caption prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embodiment {
    Human,
    Robot,
}

impl Embodiment {
    pub fn word(self) -> &'static str {
        match self {
            Embodiment::Human => "human",
            Embodiment::Robot => "robot",
        }
    }
}

/// Minimum clip length: the middle third must be nonempty.
pub const MIN_CLIP_FRAMES: usize = 9;

/// A rendered camera sweep with its caption and embodiment tag.
#[derive(Debug, Clone)]
pub struct Clip {
    pub frames: Vec<Image>,
    pub caption: String,
    pub embodiment: Embodiment,
    pub scene: SceneSpec,
    pub start_cell: (i32, i32),
    pub step: (i32, i32),
}

/// The centered `floor(n/3)` frame indices forming the middle third.
pub fn middle_third(n: usize) -> std::ops::Range<usize> {
    let m = n / 3;
    let start = (n - m + 1) / 2;
    start..start + m
}

/// Renders a clip over a freshly sampled robotics-style scene. The sweep
/// direction, start, length, and embodiment all come from the seed.
pub fn make_clip(seed: u64, pool: &[Category]) -> Result<Clip> {
    let scene = sample_scene(seed, Style::Robotics, pool)?;
    let mut rng = stream(seed, "clip");
    let n = rng.gen_range(MIN_CLIP_FRAMES..=2 * MIN_CLIP_FRAMES);
    let start_cell = (rng.gen_range(0..GRID), rng.gen_range(0..GRID));
    let dirs = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1)];
    let step = dirs[rng.gen_range(0..dirs.len())];
    let embodiment = if rng.gen::<bool>() {
        Embodiment::Human
    } else {
        Embodiment::Robot
    };
    clip_from_path(scene, start_cell, step, n, embodiment)
}

/// Renders the frames of a deterministic sweep path.
pub fn clip_from_path(
    scene: SceneSpec,
    start_cell: (i32, i32),
    step: (i32, i32),
    n: usize,
    embodiment: Embodiment,
) -> Result<Clip> {
    if n < MIN_CLIP_FRAMES {
        return Err(WorldError::invalid(
            "clip",
            format!("{n} frames; need at least {MIN_CLIP_FRAMES}"),
        ));
    }
    let base = render_scene(&scene);
    let half = WIDTH as i32 / 2;
    let mut frames = Vec::with_capacity(n);
    let (mut cx, mut cy) = start_cell;
    for _ in 0..n {
        let gx = CELL * cx + CELL / 2;
        let gy = CELL * cy + CELL / 2;
        frames.push(shift_view(&base, scene.style, half - gx, half - gy));
        cx = (cx + step.0).clamp(0, GRID - 1);
        cy = (cy + step.1).clamp(0, GRID - 1);
    }
    let caption = scene.caption.clone();
    Ok(Clip {
        frames,
        caption,
        embodiment,
        scene,
        start_cell,
        step,
    })
}

/// Uniform without-replacement draw of `k` middle-third frame indices.
pub fn sample_frame_indices(n: usize, k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let mid = middle_third(n);
    if k > mid.len() {
        return Err(WorldError::invalid(
            "sample_clip_frames",
            format!("k = {k} exceeds the {}-frame middle third", mid.len()),
        ));
    }
    let mut idx: Vec<usize> = mid.collect();
    idx.shuffle(rng);
    idx.truncate(k);
    Ok(idx)
}

/// Draws `k` fine-tuning pairs from the clip's middle third: the frame, the
/// caption with the embodiment word prepended, and the tag itself.
pub fn sample_clip_frames(
    clip: &Clip,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(Image, String, Embodiment)>> {
    let idx = sample_frame_indices(clip.frames.len(), k, rng)?;
    let caption = format!("{} {}", clip.embodiment.word(), clip.caption);
    Ok(idx
        .into_iter()
        .map(|i| (clip.frames[i].clone(), caption.clone(), clip.embodiment))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::vocab::all_categories;

    #[test]
    fn middle_third_matches_the_examples() {
        assert_eq!(middle_third(9), 3..6);
        assert_eq!(middle_third(30), 10..20);
        assert_eq!(middle_third(12), 4..8);
        for n in MIN_CLIP_FRAMES..60 {
            assert_eq!(middle_third(n).len(), n / 3);
        }
    }

    #[test]
    fn nine_frame_clip_samples_only_central_indices() {
        let mut rng = stream(0, "test");
        for _ in 0..50 {
            let idx = sample_frame_indices(9, 3, &mut rng).unwrap();
            assert_eq!(idx.len(), 3);
            for i in idx {
                assert!((3..6).contains(&i), "index {i}");
            }
        }
        assert!(sample_frame_indices(9, 4, &mut rng).is_err());
    }

    #[test]
    fn embodiment_word_prefixes_the_caption() {
        let pool = all_categories();
        let clip = make_clip(11, &pool).unwrap();
        let mut rng = stream(1, "test");
        let pairs = sample_clip_frames(&clip, 2, &mut rng).unwrap();
        for (img, caption, tag) in &pairs {
            assert_eq!(*tag, clip.embodiment);
            assert_eq!(*caption, format!("{} {}", clip.embodiment.word(), clip.caption));
            assert!(clip.frames.iter().any(|f| f.rgb == img.rgb));
        }
    }

    #[test]
    fn frame_index_distribution_is_uniform_over_the_middle_third() {
        // 30-frame clip, k = 4: indices land in {10..19}. Chi-squared over
        // the 10 bins with 9 degrees of freedom; 21.67 is the p = 0.01 cut.
        let mut rng = stream(7, "chi2");
        let mut counts = [0u32; 10];
        let draws = 10_000;
        for _ in 0..draws {
            for i in sample_frame_indices(30, 4, &mut rng).unwrap() {
                assert!((10..20).contains(&i));
                counts[i - 10] += 1;
            }
        }
        let expected = (draws * 4) as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 21.67, "chi2 = {chi2:.2}");
    }

    #[test]
    fn clips_are_deterministic_in_seed_and_long_enough() {
        let pool = all_categories();
        let a = make_clip(3, &pool).unwrap();
        let b = make_clip(3, &pool).unwrap();
        assert!(a.frames.len() >= MIN_CLIP_FRAMES);
        assert_eq!(a.caption, b.caption);
        assert_eq!(a.frames.len(), b.frames.len());
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.rgb, fb.rgb);
        }
        assert!(clip_from_path(a.scene.clone(), (0, 0), (1, 0), 8, a.embodiment).is_err());
    }
}
