//! Scene sampling, rasterized annotation, the caption grammar, and category
//! splits.
//!
//! A scene is 1 to 5 textured shapes with distinct shape words, composited
//! bottom to top; the stored mask and box of each object cover exactly the
//! pixels it contributes to the render under that z-order. Sampling resolves
//! its own constraint violations (overcrowded or overly occluded draws) by
//! redrawing the whole scene from the next attempt stream, so a scene is a
//! pure function of (seed, style, category pool).

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::raster::{
    background, mask_area, paint, raster_mask, radius_for_area, textured, Image, Style, HEIGHT,
    PIXELS, WIDTH,
};
use super::vocab::{Category, Color, Shape, Texture, COLORS};
use super::{Result, WorldError};
use crate::util::rng::substream;

/// Per-object visible area bounds as a fraction of the canvas.
pub const MIN_AREA_FRAC: f64 = 0.04;
pub const MAX_AREA_FRAC: f64 = 0.40;

/// Redraw the scene when more than this fraction of any object is hidden.
pub const MAX_HIDDEN_FRAC: f64 = 0.60;

/// Target-area draw range, log-uniform. Kept well inside the visible-area
/// bounds so occlusion rarely pushes a draw out of contract.
const AREA_DRAW_FRAC: (f64, f64) = (0.045, 0.16);

const SAMPLE_ATTEMPTS: u64 = 64;

/// One placed object with its rasterized ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub category: Category,
    pub color: Color,
    /// Center in image fractions of [0, 1] per axis.
    pub center: (f32, f32),
    /// Rasterization radius in pixels.
    pub radius: f32,
    /// Tight half-open pixel box around the visible mask.
    pub bbox: (u32, u32, u32, u32),
    /// Pixels this object contributes to the render under the z-order.
    pub mask: Vec<bool>,
    /// Half-open token span of this object's caption phrase.
    pub phrase_span: (usize, usize),
    /// Token index of this object's shape word inside the caption.
    pub shape_word: usize,
}

/// A fully annotated scene; `objects` is bottom-to-top z-order.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub style: Style,
    pub objects: Vec<ObjectSpec>,
    pub caption: String,
}

impl SceneSpec {
    /// Builds the annotations for hand-placed geometry: rasterizes masks
    /// under z-order, computes boxes, and generates the caption. Fails when
    /// any object ends up outside the visible-area or occlusion contracts.
    pub fn from_geometry(
        seed: u64,
        style: Style,
        geometry: &[(Category, Color, (f32, f32), f32)],
    ) -> Result<Self> {
        if geometry.is_empty() || geometry.len() > 5 {
            return Err(WorldError::invalid(
                "scene",
                format!("need 1 to 5 objects, got {}", geometry.len()),
            ));
        }
        let shapes: BTreeSet<Shape> = geometry.iter().map(|g| g.0.shape).collect();
        if shapes.len() != geometry.len() {
            return Err(WorldError::invalid("scene", "shape words must be distinct"));
        }

        let full: Vec<Vec<bool>> = geometry
            .iter()
            .map(|&(cat, _, (fx, fy), r)| {
                raster_mask(cat.shape, fx * WIDTH as f32, fy * HEIGHT as f32, r)
            })
            .collect();
        let visible = occlude(&full);
        for (i, (f, v)) in full.iter().zip(&visible).enumerate() {
            let (fa, va) = (mask_area(f), mask_area(v));
            if fa == 0 {
                return Err(WorldError::invalid("scene", format!("object {i} is empty")));
            }
            let hidden = 1.0 - va as f64 / fa as f64;
            if hidden > MAX_HIDDEN_FRAC {
                return Err(WorldError::invalid(
                    "scene",
                    format!("object {i} is {:.0}% hidden", 100.0 * hidden),
                ));
            }
            let frac = va as f64 / PIXELS as f64;
            if !(MIN_AREA_FRAC..=MAX_AREA_FRAC).contains(&frac) {
                return Err(WorldError::invalid(
                    "scene",
                    format!("object {i} visible area {:.1}% out of bounds", 100.0 * frac),
                ));
            }
        }

        let cap = caption_for(geometry);
        let objects = geometry
            .iter()
            .enumerate()
            .map(|(i, &(category, color, center, radius))| ObjectSpec {
                category,
                color,
                center,
                radius,
                bbox: tight_box(&visible[i]),
                mask: visible[i].clone(),
                phrase_span: cap.phrase_spans[i],
                shape_word: cap.shape_words[i],
            })
            .collect();
        Ok(SceneSpec {
            seed,
            style,
            objects,
            caption: cap.text,
        })
    }
}

/// Caption text with per-object token positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionInfo {
    pub text: String,
    /// Half-open token span of each object's phrase, in z-order.
    pub phrase_spans: Vec<(usize, usize)>,
    /// Token index of each object's shape word.
    pub shape_words: Vec<usize>,
}

/// Regenerates the caption from a scene's geometry.
///
/// Grammar (objects mentioned once each, in z-order):
///
/// ```text
/// caption := phrase (rel phrase)*
/// phrase  := "a" color [texture] shape
/// rel     := "left" "of" | "right" "of" | "above" | "below"
/// ```
///
/// The relation between consecutive objects follows the dominant axis of
/// their center offset, ties going to the horizontal words.
pub fn sample_caption(spec: &SceneSpec) -> CaptionInfo {
    let geometry: Vec<(Category, Color, (f32, f32), f32)> = spec
        .objects
        .iter()
        .map(|o| (o.category, o.color, o.center, o.radius))
        .collect();
    caption_for(&geometry)
}

fn caption_for(geometry: &[(Category, Color, (f32, f32), f32)]) -> CaptionInfo {
    let mut words: Vec<String> = Vec::new();
    let mut phrase_spans = Vec::new();
    let mut shape_words = Vec::new();
    for (i, &(cat, color, (x, y), _)) in geometry.iter().enumerate() {
        if i > 0 {
            let (px, py, _) = (geometry[i - 1].2 .0, geometry[i - 1].2 .1, ());
            let (dx, dy) = (px - x, py - y);
            if dx.abs() >= dy.abs() {
                words.push(if dx < 0.0 { "left" } else { "right" }.to_string());
                words.push("of".to_string());
            } else {
                words.push(if dy < 0.0 { "above" } else { "below" }.to_string());
            }
        }
        let start = words.len();
        words.push("a".to_string());
        words.push(color.word().to_string());
        if let Some(t) = cat.texture.word() {
            words.push(t.to_string());
        }
        shape_words.push(words.len());
        words.push(cat.shape.word().to_string());
        phrase_spans.push((start, words.len()));
    }
    CaptionInfo {
        text: words.join(" "),
        phrase_spans,
        shape_words,
    }
}

/// Samples an annotated scene from the category pool. Draws that violate
/// the area or occlusion contracts are logged and redrawn from the next
/// attempt stream.
pub fn sample_scene(seed: u64, style: Style, pool: &[Category]) -> Result<SceneSpec> {
    if pool.is_empty() {
        return Err(WorldError::invalid("sample_scene", "empty category pool"));
    }
    let mut by_shape: Vec<(Shape, Vec<Texture>)> = Vec::new();
    for c in pool {
        match by_shape.iter_mut().find(|(s, _)| *s == c.shape) {
            Some((_, ts)) => ts.push(c.texture),
            None => by_shape.push((c.shape, vec![c.texture])),
        }
    }

    for attempt in 0..SAMPLE_ATTEMPTS {
        let mut rng = substream(seed, "scene", attempt);
        let n = rng
            .gen_range(1..=5usize)
            .min(by_shape.len());
        let mut shape_order: Vec<usize> = (0..by_shape.len()).collect();
        shape_order.shuffle(&mut rng);
        let mut geometry = Vec::with_capacity(n);
        for &si in shape_order.iter().take(n) {
            let (shape, ref textures) = by_shape[si];
            let texture = textures[rng.gen_range(0..textures.len())];
            let color = COLORS[rng.gen_range(0..COLORS.len())];
            let (lo, hi) = AREA_DRAW_FRAC;
            let frac = (rng.gen_range(lo.ln()..hi.ln())).exp();
            let target = (frac * PIXELS as f64).round() as usize;
            let radius = radius_for_area(shape, WIDTH as f32 / 2.0, HEIGHT as f32 / 2.0, target);
            let ext = radius + 1.0;
            let center = |rng: &mut rand_chacha::ChaCha8Rng, size: f32| {
                if 2.0 * ext >= size {
                    0.5
                } else {
                    rng.gen_range(ext..size - ext) / size
                }
            };
            let cx = center(&mut rng, WIDTH as f32);
            let cy = center(&mut rng, HEIGHT as f32);
            geometry.push((Category::new(shape, texture), color, (cx, cy), radius));
        }
        match SceneSpec::from_geometry(seed, style, &geometry) {
            Ok(spec) => return Ok(spec),
            Err(e) => log::debug!("scene {seed}: redraw after attempt {attempt}: {e}"),
        }
    }
    Err(WorldError::invalid(
        "sample_scene",
        format!("no contract-satisfying scene in {SAMPLE_ATTEMPTS} attempts for seed {seed}"),
    ))
}

/// Renders the scene: background pattern, then objects bottom to top with
/// scene-absolute texture phase.
pub fn render_scene(spec: &SceneSpec) -> Image {
    let mut img = Image::filled([0, 0, 0]);
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            img.set(x, y, background(spec.style, x as i32, y as i32));
        }
    }
    for o in &spec.objects {
        let base = paint(o.color, spec.style);
        let full = raster_mask(
            o.category.shape,
            o.center.0 * WIDTH as f32,
            o.center.1 * HEIGHT as f32,
            o.radius,
        );
        for y in 0..HEIGHT {
            for x in 0..WIDTH {
                if full[y * WIDTH + x] {
                    img.set(x, y, textured(base, o.category.texture, x as i32, y as i32));
                }
            }
        }
    }
    img
}

/// Visible masks recomputed from geometry: each object's raster minus every
/// higher-z raster.
pub fn visible_masks(spec: &SceneSpec) -> Vec<Vec<bool>> {
    let full: Vec<Vec<bool>> = spec
        .objects
        .iter()
        .map(|o| {
            raster_mask(
                o.category.shape,
                o.center.0 * WIDTH as f32,
                o.center.1 * HEIGHT as f32,
                o.radius,
            )
        })
        .collect();
    occlude(&full)
}

fn occlude(full: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let mut visible = full.to_vec();
    for i in 0..full.len() {
        for j in i + 1..full.len() {
            for p in 0..PIXELS {
                if full[j][p] {
                    visible[i][p] = false;
                }
            }
        }
    }
    visible
}

fn tight_box(mask: &[bool]) -> (u32, u32, u32, u32) {
    let (mut x0, mut y0, mut x1, mut y1) = (WIDTH, HEIGHT, 0usize, 0usize);
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            if mask[y * WIDTH + x] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    (x0 as u32, y0 as u32, x1 as u32, y1 as u32)
}

/// Seen/unseen partition of a category vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct CategorySplit {
    pub seen: BTreeSet<Category>,
    pub unseen: BTreeSet<Category>,
    pub seen_fraction: f32,
}

impl CategorySplit {
    pub fn seen_vec(&self) -> Vec<Category> {
        self.seen.iter().copied().collect()
    }

    pub fn unseen_vec(&self) -> Vec<Category> {
        self.unseen.iter().copied().collect()
    }
}

/// Deterministic partition of `vocabulary` with `seen_fraction` of the
/// categories on the seen side. Fractions that would leave either side
/// empty are rejected.
pub fn make_splits(
    vocabulary: &[Category],
    seen_fraction: f32,
    seed: u64,
) -> Result<CategorySplit> {
    if !(0.0 < seen_fraction && seen_fraction < 1.0) {
        return Err(WorldError::invalid(
            "make_splits",
            format!("seen fraction {seen_fraction} outside (0, 1)"),
        ));
    }
    let n = vocabulary.len();
    let n_seen = (seen_fraction as f64 * n as f64).round() as usize;
    if n_seen == 0 || n_seen == n {
        return Err(WorldError::invalid(
            "make_splits",
            format!("fraction {seen_fraction} leaves one side of {n} categories empty"),
        ));
    }
    let mut order: Vec<Category> = vocabulary.to_vec();
    order.sort();
    order.shuffle(&mut crate::util::rng::stream(seed, "category-split"));
    Ok(CategorySplit {
        seen: order[..n_seen].iter().copied().collect(),
        unseen: order[n_seen..].iter().copied().collect(),
        seen_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::vocab::{all_categories, Vocab};

    fn solid(shape: Shape) -> Category {
        Category::new(shape, Texture::Solid)
    }

    #[test]
    fn centered_circle_bbox_is_the_tight_analytic_box() {
        let r = 6.0f32;
        let spec = SceneSpec::from_geometry(
            1,
            Style::Plain,
            &[(solid(Shape::Circle), Color::Red, (0.5, 0.5), r)],
        )
        .unwrap();
        let (x0, y0, x1, y1) = spec.objects[0].bbox;
        let (ax0, ax1) = ((16.0 - r).floor() as i64, (16.0 + r).ceil() as i64);
        for (got, want) in [
            (x0 as i64, ax0),
            (y0 as i64, ax0),
            (x1 as i64, ax1),
            (y1 as i64, ax1),
        ] {
            assert!((got - want).abs() <= 1, "bbox {got} vs analytic {want}");
        }
    }

    #[test]
    fn same_seed_renders_bit_identical_images() {
        let pool = all_categories();
        let a = sample_scene(41, Style::Plain, &pool).unwrap();
        let b = sample_scene(41, Style::Plain, &pool).unwrap();
        assert_eq!(a, b);
        assert_eq!(render_scene(&a).rgb, render_scene(&b).rgb);
    }

    #[test]
    fn masks_match_render_exactly_under_z_order() {
        let pool = all_categories();
        for seed in 0..40u64 {
            let spec = sample_scene(seed, Style::Plain, &pool).unwrap();
            let img = render_scene(&spec);
            let recomputed = visible_masks(&spec);
            for (i, o) in spec.objects.iter().enumerate() {
                assert_eq!(o.mask, recomputed[i], "seed {seed} object {i}");
                let base = paint(o.color, spec.style);
                for y in 0..HEIGHT {
                    for x in 0..WIDTH {
                        if o.mask[y * WIDTH + x] {
                            assert_eq!(
                                img.get(x, y),
                                textured(base, o.category.texture, x as i32, y as i32),
                                "seed {seed} object {i} pixel ({x},{y})"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn five_hundred_scenes_keep_visible_areas_in_contract() {
        let pool = all_categories();
        for seed in 0..500u64 {
            let spec = sample_scene(seed, Style::Plain, &pool).unwrap();
            for (i, o) in spec.objects.iter().enumerate() {
                let frac = mask_area(&o.mask) as f64 / PIXELS as f64;
                assert!(
                    (MIN_AREA_FRAC..=MAX_AREA_FRAC).contains(&frac),
                    "seed {seed} object {i}: visible {:.2}%",
                    100.0 * frac
                );
            }
        }
    }

    #[test]
    fn single_object_caption_is_the_grammar_base_case() {
        let spec = SceneSpec::from_geometry(
            3,
            Style::Plain,
            &[(solid(Shape::Circle), Color::Red, (0.5, 0.5), 5.0)],
        )
        .unwrap();
        assert_eq!(spec.caption, "a red circle");
        assert_eq!(spec.objects[0].phrase_span, (0, 3));
        assert_eq!(spec.objects[0].shape_word, 2);
    }

    #[test]
    fn two_object_captions_have_exactly_one_relation_word() {
        let pool = all_categories();
        let mut seen_two = 0;
        for seed in 0..200u64 {
            let spec = sample_scene(seed, Style::Plain, &pool).unwrap();
            if spec.objects.len() != 2 {
                continue;
            }
            seen_two += 1;
            let rel_count = spec
                .caption
                .split_whitespace()
                .filter(|w| ["left", "right", "above", "below"].contains(w))
                .count();
            assert_eq!(rel_count, 1, "seed {seed}: '{}'", spec.caption);
        }
        assert!(seen_two >= 10, "only {seen_two} two-object scenes");
    }

    #[test]
    fn thousand_captions_stay_inside_the_vocabulary() {
        let pool = all_categories();
        let vocab = Vocab::new();
        for seed in 1000..2000u64 {
            let spec = sample_scene(seed, Style::Plain, &pool).unwrap();
            let ids = vocab.encode(&spec.caption).unwrap();
            assert!(!ids.is_empty());
            let round = vocab.decode(&ids).unwrap();
            assert_eq!(round, spec.caption);
            let info = sample_caption(&spec);
            assert_eq!(info.text, spec.caption);
            for (o, span) in spec.objects.iter().zip(&info.phrase_spans) {
                assert_eq!(o.phrase_span, *span);
                assert_eq!(
                    spec.caption.split_whitespace().nth(o.shape_word).unwrap(),
                    o.category.shape.word()
                );
            }
        }
    }

    #[test]
    fn caption_mentions_each_category_once() {
        let pool = all_categories();
        for seed in 0..100u64 {
            let spec = sample_scene(seed, Style::Plain, &pool).unwrap();
            for o in &spec.objects {
                let occurrences = spec
                    .caption
                    .split_whitespace()
                    .filter(|w| *w == o.category.shape.word())
                    .count();
                assert_eq!(occurrences, 1, "seed {seed}: '{}'", spec.caption);
            }
        }
    }

    #[test]
    fn split_partitions_the_vocabulary() {
        let vocab = all_categories();
        let s = make_splits(&vocab, 0.75, 9).unwrap();
        assert_eq!(s.seen.len(), 18);
        assert_eq!(s.unseen.len(), 6);
        assert_eq!(make_splits(&vocab, 0.75, 9).unwrap(), s);
        for seed in 0..100u64 {
            let s = make_splits(&vocab, 0.6, seed).unwrap();
            assert!(s.seen.is_disjoint(&s.unseen));
            let union: BTreeSet<Category> = s.seen.union(&s.unseen).copied().collect();
            assert_eq!(union, vocab.iter().copied().collect());
        }
        assert!(make_splits(&vocab, 0.01, 0).is_err());
        assert!(make_splits(&vocab, 0.999, 0).is_err());
        assert!(make_splits(&vocab, 1.2, 0).is_err());
    }
}
