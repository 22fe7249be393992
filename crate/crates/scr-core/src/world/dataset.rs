//! On-disk dataset layout: `images/*.png`, `annotations.jsonl`,
//! `episodes.jsonl`, and `meta.json`, with a reader that cross-checks every
//! record against the pure generators.
//!
//! Masks are stored run-length encoded over the row-major boolean grid,
//! alternating hidden and visible run lengths and starting with a hidden
//! run (possibly zero). Episode records store the generative coordinates
//! (scene seed, start cell, action ids) rather than frame pixels; the reader
//! re-renders frames through the environment and verifies the stored
//! outcome. The full schema is documented in `docs/dataset-schema.md`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::clips::Embodiment;
use super::gaze::{replay_episode, Action, Episode};
use super::raster::{Image, Style, HEIGHT, PIXELS, WIDTH};
use super::scene::{render_scene, SceneSpec};
use super::vocab::{Category, Color, Shape, Texture, Vocab};
use super::{Result, WorldError};

pub const FORMAT_VERSION: u32 = 1;

/// Corpus header: generation parameters and counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: u32,
    pub seed: u64,
    pub style: Style,
    /// Category pool the sampler drew from, by caption name.
    pub categories: Vec<String>,
    pub n_scenes: usize,
    pub n_episodes: usize,
}

/// One line of `annotations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    /// Path of the rendered PNG relative to the dataset root.
    pub image: String,
    pub seed: u64,
    pub style: Style,
    pub caption: String,
    /// Caption prefix tag for clip-frame corpora; absent for scene corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embodiment: Option<Embodiment>,
    /// Bottom-to-top z-order; empty for clip-frame records, whose views are
    /// translated and so carry no pixel-exact annotations.
    #[serde(default)]
    pub objects: Vec<ObjectRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    /// Caption name, e.g. "striped circle"; composed from shape and texture.
    pub category: String,
    pub shape: Shape,
    pub texture: Texture,
    pub color: Color,
    /// Center in image fractions.
    pub center: [f32; 2],
    /// Rasterization radius in pixels.
    pub radius: f32,
    /// Tight half-open pixel box around the visible mask.
    pub bbox: [u32; 4],
    /// Position in the z-order; equals the record index.
    pub z: usize,
    /// Run-length encoded visible mask; see [`encode_rle`].
    pub mask_rle: Vec<u32>,
    /// Half-open token span of the object's caption phrase.
    pub phrase_span: [usize; 2],
    /// Token index of the shape word.
    pub shape_word: usize,
}

/// One line of `episodes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Seed of the scene this episode runs on; the scene must be present in
    /// `annotations.jsonl`.
    pub scene_seed: u64,
    pub prompt: String,
    /// Target category by caption name.
    pub target: String,
    pub init_cell: [i32; 2],
    /// Action ids in execution order, ending with `select`.
    pub actions: Vec<u32>,
    pub success: bool,
}

/// A corpus loaded and fully validated.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<SceneRecord>,
    pub images: Vec<Image>,
    /// Reconstructed specs for records with objects, by record index.
    pub scenes: BTreeMap<usize, SceneSpec>,
    pub episodes: Vec<EpisodeRecord>,
}

impl Dataset {
    /// Scene spec for a record index, present when the record has objects.
    pub fn scene(&self, idx: usize) -> Option<&SceneSpec> {
        self.scenes.get(&idx)
    }

    /// Re-renders an episode through the environment.
    pub fn replay(&self, ep: &EpisodeRecord) -> Result<Episode> {
        let spec = self
            .scenes
            .values()
            .find(|s| s.seed == ep.scene_seed)
            .ok_or_else(|| {
                WorldError::format(format!("episode references unknown scene {}", ep.scene_seed))
            })?;
        let actions: Result<Vec<Action>> = ep.actions.iter().map(|&a| Action::from_id(a)).collect();
        replay_episode(
            spec,
            Category::parse(&ep.target)?,
            (ep.init_cell[0], ep.init_cell[1]),
            &actions?,
        )
    }
}

/// Run-length encodes a boolean grid: alternating false and true run
/// lengths, starting with a false run that may be zero. Runs sum to the
/// grid size.
pub fn encode_rle(mask: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in mask {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn decode_rle(runs: &[u32], size: usize) -> Result<Vec<bool>> {
    let mut mask = Vec::with_capacity(size);
    for (i, &len) in runs.iter().enumerate() {
        let value = i % 2 == 1;
        for _ in 0..len {
            mask.push(value);
        }
    }
    if mask.len() != size {
        return Err(WorldError::format(format!(
            "mask runs sum to {}, grid has {size} pixels",
            mask.len()
        )));
    }
    Ok(mask)
}

fn object_record(spec: &SceneSpec, i: usize) -> ObjectRecord {
    let o = &spec.objects[i];
    ObjectRecord {
        category: o.category.name(),
        shape: o.category.shape,
        texture: o.category.texture,
        color: o.color,
        center: [o.center.0, o.center.1],
        radius: o.radius,
        bbox: [o.bbox.0, o.bbox.1, o.bbox.2, o.bbox.3],
        z: i,
        mask_rle: encode_rle(&o.mask),
        phrase_span: [o.phrase_span.0, o.phrase_span.1],
        shape_word: o.shape_word,
    }
}

/// Record for a fully annotated scene.
pub fn scene_record(spec: &SceneSpec, image: String) -> SceneRecord {
    SceneRecord {
        image,
        seed: spec.seed,
        style: spec.style,
        caption: spec.caption.clone(),
        embodiment: None,
        objects: (0..spec.objects.len()).map(|i| object_record(spec, i)).collect(),
    }
}

/// Record for one sampled clip frame: caption already carries the prefix,
/// no pixel annotations.
pub fn clip_frame_record(
    image: String,
    seed: u64,
    caption: String,
    embodiment: Embodiment,
) -> SceneRecord {
    SceneRecord {
        image,
        seed,
        style: Style::Robotics,
        caption,
        embodiment: Some(embodiment),
        objects: Vec::new(),
    }
}

pub fn episode_record(ep: &Episode) -> EpisodeRecord {
    EpisodeRecord {
        scene_seed: ep.scene_seed,
        prompt: ep.prompt.clone(),
        target: ep.target.name(),
        init_cell: [ep.init_cell.0, ep.init_cell.1],
        actions: ep.actions.iter().map(|a| a.id()).collect(),
        success: ep.success,
    }
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let buf = image::RgbImage::from_raw(WIDTH as u32, HEIGHT as u32, img.rgb.clone())
        .expect("buffer length matches dimensions");
    buf.save(path)
        .map_err(|e| WorldError::format(format!("writing {}: {e}", path.display())))
}

pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| WorldError::format(format!("reading {}: {e}", path.display())))?
        .to_rgb8();
    if img.width() as usize != WIDTH || img.height() as usize != HEIGHT {
        return Err(WorldError::format(format!(
            "{}: expected {WIDTH}x{HEIGHT}, got {}x{}",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    Ok(Image { rgb: img.into_raw() })
}

/// Writes a corpus: images under `images/`, one JSONL line per record, and
/// the header. Record order is preserved; images are named by record index.
pub fn write_dataset(
    dir: &Path,
    meta: &DatasetMeta,
    pairs: &[(SceneRecord, Image)],
    episodes: &[EpisodeRecord],
) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    let mut ann = fs::File::create(dir.join("annotations.jsonl"))?;
    for (rec, img) in pairs {
        write_png(&dir.join(&rec.image), img)?;
        serde_json::to_writer(&mut ann, rec)?;
        ann.write_all(b"\n")?;
    }
    let mut eps = fs::File::create(dir.join("episodes.jsonl"))?;
    for ep in episodes {
        serde_json::to_writer(&mut eps, ep)?;
        eps.write_all(b"\n")?;
    }
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

/// Standard image path for a record index.
pub fn image_name(idx: usize) -> String {
    format!("images/{idx:06}.png")
}

/// Loads a corpus and validates every record against the generators:
/// categories parse and compose, captions tokenize, masks decode and match
/// the re-rasterized scene bit for bit, boxes are tight and in bounds,
/// caption spans point at the right words, rendered PNGs match the spec
/// render, and episodes replay to their stored action list and outcome.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    if meta.format != FORMAT_VERSION {
        return Err(WorldError::format(format!(
            "format {} unsupported; reader expects {FORMAT_VERSION}",
            meta.format
        )));
    }
    for name in &meta.categories {
        Category::parse(name)?;
    }
    let vocab = Vocab::new();

    let mut records = Vec::new();
    let mut images = Vec::new();
    let mut scenes = BTreeMap::new();
    let ann = BufReader::new(fs::File::open(dir.join("annotations.jsonl"))?);
    for (idx, line) in ann.lines().enumerate() {
        let rec: SceneRecord = serde_json::from_str(&line?)?;
        let img = read_png(&dir.join(&rec.image))?;
        validate_record(&vocab, &rec, &img, idx)?;
        if !rec.objects.is_empty() {
            scenes.insert(idx, reconstruct_scene(&rec, &img, idx)?);
        }
        records.push(rec);
        images.push(img);
    }

    let mut episodes = Vec::new();
    let eps_path = dir.join("episodes.jsonl");
    if eps_path.exists() {
        for line in BufReader::new(fs::File::open(eps_path)?).lines() {
            episodes.push(serde_json::from_str::<EpisodeRecord>(&line?)?);
        }
    }
    if records.len() != meta.n_scenes || episodes.len() != meta.n_episodes {
        return Err(WorldError::format(format!(
            "meta counts ({}, {}) disagree with files ({}, {})",
            meta.n_scenes,
            meta.n_episodes,
            records.len(),
            episodes.len()
        )));
    }

    let ds = Dataset {
        meta,
        records,
        images,
        scenes,
        episodes,
    };
    for (i, ep) in ds.episodes.iter().enumerate() {
        validate_episode(&ds, ep).map_err(|e| WorldError::format(format!("episode {i}: {e}")))?;
    }
    Ok(ds)
}

fn validate_record(vocab: &Vocab, rec: &SceneRecord, _img: &Image, idx: usize) -> Result<()> {
    let fail = |msg: String| Err(WorldError::format(format!("record {idx}: {msg}")));
    if vocab.encode(&rec.caption).is_err() {
        return fail(format!("caption '{}' leaves the vocabulary", rec.caption));
    }
    if let Some(tag) = rec.embodiment {
        if !rec.caption.starts_with(tag.word()) {
            return fail(format!("caption does not carry the '{}' prefix", tag.word()));
        }
    }
    for (z, o) in rec.objects.iter().enumerate() {
        let cat = Category::parse(&o.category)?;
        if cat.shape != o.shape || cat.texture != o.texture {
            return fail(format!("category '{}' disagrees with shape fields", o.category));
        }
        if o.z != z {
            return fail(format!("object {z} stores z = {}", o.z));
        }
        if o.bbox[2] > WIDTH as u32 || o.bbox[3] > HEIGHT as u32 || o.bbox[0] >= o.bbox[2] || o.bbox[1] >= o.bbox[3] {
            return fail(format!("object {z} box {:?} out of bounds", o.bbox));
        }
        let words: Vec<&str> = rec.caption.split_whitespace().collect();
        if words.get(o.shape_word) != Some(&o.shape.word()) {
            return fail(format!("object {z} shape word index {} is wrong", o.shape_word));
        }
        let (a, b) = (o.phrase_span[0], o.phrase_span[1]);
        if !(a < b && b <= words.len() && (a..b).contains(&o.shape_word)) {
            return fail(format!("object {z} phrase span {:?} is wrong", o.phrase_span));
        }
    }
    Ok(())
}

/// Rebuilds the spec from stored geometry and demands every derived field
/// (masks, boxes, caption, spans, pixels) match the record.
fn reconstruct_scene(rec: &SceneRecord, img: &Image, idx: usize) -> Result<SceneSpec> {
    let fail = |msg: String| Err(WorldError::format(format!("record {idx}: {msg}")));
    let geometry: Result<Vec<(Category, Color, (f32, f32), f32)>> = rec
        .objects
        .iter()
        .map(|o| {
            Ok((
                Category::parse(&o.category)?,
                o.color,
                (o.center[0], o.center[1]),
                o.radius,
            ))
        })
        .collect();
    let spec = SceneSpec::from_geometry(rec.seed, rec.style, &geometry?)?;
    if spec.caption != rec.caption {
        return fail(format!(
            "caption '{}' disagrees with geometry ('{}')",
            rec.caption, spec.caption
        ));
    }
    for (z, (o, rec_o)) in spec.objects.iter().zip(&rec.objects).enumerate() {
        let mask = decode_rle(&rec_o.mask_rle, PIXELS)?;
        if mask != o.mask {
            return fail(format!("object {z} mask disagrees with the rasterizer"));
        }
        let bbox = [o.bbox.0, o.bbox.1, o.bbox.2, o.bbox.3];
        if bbox != rec_o.bbox {
            return fail(format!("object {z} box {:?} is not tight ({bbox:?})", rec_o.bbox));
        }
        if (o.phrase_span.0, o.phrase_span.1) != (rec_o.phrase_span[0], rec_o.phrase_span[1])
            || o.shape_word != rec_o.shape_word
        {
            return fail(format!("object {z} caption spans disagree"));
        }
    }
    if render_scene(&spec).rgb != img.rgb {
        return fail("stored image disagrees with the renderer".to_string());
    }
    Ok(spec)
}

fn validate_episode(ds: &Dataset, ep: &EpisodeRecord) -> Result<()> {
    let target = Category::parse(&ep.target)?;
    if ep.prompt != format!("gaze at the {}", target.name()) {
        return Err(WorldError::format(format!("prompt '{}' is malformed", ep.prompt)));
    }
    match ep.actions.last().map(|&a| Action::from_id(a)) {
        Some(Ok(Action::Select)) => {}
        _ => return Err(WorldError::format("action list must end with select")),
    }
    let replayed = ds.replay(ep)?;
    if replayed.success != ep.success {
        return Err(WorldError::format(format!(
            "stored success {} but replay says {}",
            ep.success, replayed.success
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng::stream;
    use crate::world::gaze::script_expert;
    use crate::world::scene::sample_scene;
    use crate::world::vocab::all_categories;
    use rand::Rng;

    fn tiny_corpus(dir: &Path) -> (DatasetMeta, Vec<(SceneRecord, Image)>, Vec<EpisodeRecord>) {
        let pool = all_categories();
        let mut pairs = Vec::new();
        let mut episodes = Vec::new();
        for (i, seed) in (100..106u64).enumerate() {
            let spec = sample_scene(seed, Style::Plain, &pool).unwrap();
            let img = render_scene(&spec);
            pairs.push((scene_record(&spec, image_name(i)), img));
            let pick = stream(seed, "target").gen_range(0..spec.objects.len());
            let ep = script_expert(&spec, spec.objects[pick].category).unwrap();
            episodes.push(episode_record(&ep));
        }
        let meta = DatasetMeta {
            format: FORMAT_VERSION,
            seed: 100,
            style: Style::Plain,
            categories: pool.iter().map(|c| c.name()).collect(),
            n_scenes: pairs.len(),
            n_episodes: episodes.len(),
        };
        write_dataset(dir, &meta, &pairs, &episodes).unwrap();
        (meta, pairs, episodes)
    }

    #[test]
    fn rle_round_trips_every_mask() {
        let pool = all_categories();
        for seed in 0..30u64 {
            let spec = sample_scene(seed, Style::Plain, &pool).unwrap();
            for o in &spec.objects {
                let runs = encode_rle(&o.mask);
                assert_eq!(decode_rle(&runs, PIXELS).unwrap(), o.mask);
                assert_eq!(runs.iter().sum::<u32>() as usize, PIXELS);
            }
        }
        assert!(decode_rle(&[10, 5], PIXELS).is_err());
    }

    #[test]
    fn write_read_round_trip_validates() {
        let dir = tempfile::tempdir().unwrap();
        let (meta, pairs, episodes) = tiny_corpus(dir.path());
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.meta, meta);
        assert_eq!(ds.records.len(), pairs.len());
        assert_eq!(ds.episodes, episodes);
        assert_eq!(ds.scenes.len(), pairs.len());
        for (i, (rec, img)) in pairs.iter().enumerate() {
            assert_eq!(&ds.records[i], rec);
            assert_eq!(ds.images[i].rgb, img.rgb);
        }
        let ep = ds.replay(&ds.episodes[0]).unwrap();
        assert_eq!(ep.actions.len(), ds.episodes[0].actions.len());
    }

    #[test]
    fn reader_rejects_a_corrupted_mask() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path());
        let path = dir.path().join("annotations.jsonl");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let mut rec: SceneRecord = serde_json::from_str(&lines[0]).unwrap();
        // Shift one run boundary: still sums to the grid, no longer matches.
        rec.objects[0].mask_rle[0] += 1;
        rec.objects[0].mask_rle[1] -= 1;
        lines[0] = serde_json::to_string(&rec).unwrap();
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("mask disagrees"), "{err}");
    }

    #[test]
    fn reader_rejects_a_stale_image() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path());
        let img_path = dir.path().join(image_name(2));
        let mut img = read_png(&img_path).unwrap();
        img.rgb[0] ^= 0x40;
        write_png(&img_path, &img).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("disagrees with the renderer"), "{err}");
    }

    #[test]
    fn reader_rejects_a_forged_success_flag() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path());
        let path = dir.path().join("episodes.jsonl");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let mut ep: EpisodeRecord = serde_json::from_str(&lines[0]).unwrap();
        ep.success = !ep.success;
        lines[0] = serde_json::to_string(&ep).unwrap();
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("replay says"), "{err}");
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let pool = all_categories();
        let spec = sample_scene(9, Style::Robotics, &pool).unwrap();
        let img = render_scene(&spec);
        let p = dir.path().join("t.png");
        write_png(&p, &img).unwrap();
        assert_eq!(read_png(&p).unwrap().rgb, img.rgb);
    }
}
