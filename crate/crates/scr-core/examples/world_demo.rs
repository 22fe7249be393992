//! Scratch driver: exercises the world generators end to end and dumps
//! upscaled renders for visual inspection.

use scr_core::world::clips::{make_clip, sample_clip_frames};
use scr_core::world::dataset::{
    episode_record, read_dataset, scene_record, write_dataset, DatasetMeta, FORMAT_VERSION,
};
use scr_core::world::gaze::script_expert;
use scr_core::world::raster::{Image, Style, HEIGHT, WIDTH};
use scr_core::world::scene::{make_splits, render_scene, sample_scene};
use scr_core::world::vocab::all_categories;
use scr_core::util::rng::stream;

fn save_x8(img: &Image, path: &str) {
    let s = 8u32;
    let mut out = image::RgbImage::new(WIDTH as u32 * s, HEIGHT as u32 * s);
    for y in 0..HEIGHT as u32 * s {
        for x in 0..WIDTH as u32 * s {
            let px = img.get((x / s) as usize, (y / s) as usize);
            out.put_pixel(x, y, image::Rgb(px));
        }
    }
    out.save(path).unwrap();
    println!("wrote {path}");
}

fn main() {
    let pool = all_categories();

    // Scene sampling and rendering, both styles.
    for (seed, style, path) in [
        (7u64, Style::Plain, "/tmp/scene_plain.png"),
        (7u64, Style::Robotics, "/tmp/scene_robotics.png"),
        (11u64, Style::Plain, "/tmp/scene_plain2.png"),
    ] {
        let scene = sample_scene(seed, style, &pool).unwrap();
        let img = render_scene(&scene);
        println!("seed {seed} {style:?}: \"{}\"", scene.caption);
        for (i, o) in scene.objects.iter().enumerate() {
            let vis = o.mask.iter().filter(|&&m| m).count();
            println!(
                "  z{i} {} {:?} center ({:.2},{:.2}) r {:.1} bbox {:?} visible {vis}px",
                o.category.name(),
                o.color,
                o.center.0,
                o.center.1,
                o.radius,
                o.bbox
            );
        }
        save_x8(&img, path);
    }

    // Expert episode on a fresh scene.
    let scene = sample_scene(21, Style::Plain, &pool).unwrap();
    let target = scene.objects.last().unwrap().category;
    let ep = script_expert(&scene, target).unwrap();
    println!(
        "\nepisode: \"{}\" from cell {:?}, {} actions {:?}, success {}",
        ep.prompt,
        ep.init_cell,
        ep.actions.len(),
        ep.actions.iter().map(|a| a.name()).collect::<Vec<_>>(),
        ep.success
    );
    save_x8(&ep.frames[0], "/tmp/ep_first.png");
    save_x8(ep.frames.last().unwrap(), "/tmp/ep_last.png");

    // Clip with embodiment-tagged frames.
    let clip = make_clip(33, &pool).unwrap();
    let mut rng = stream(33, "demo-clip");
    let frames = sample_clip_frames(&clip, 3, &mut rng).unwrap();
    println!(
        "\nclip: {} frames, caption \"{}\"",
        clip.frames.len(),
        frames[0].1
    );
    save_x8(&clip.frames[0], "/tmp/clip_first.png");
    save_x8(clip.frames.last().unwrap(), "/tmp/clip_last.png");

    // Category split.
    let split = make_splits(&pool, 0.75, 5).unwrap();
    println!(
        "\nsplit: {} seen / {} unseen, e.g. unseen {:?}",
        split.seen.len(),
        split.unseen.len(),
        split.unseen_vec().iter().take(3).map(|c| c.name()).collect::<Vec<_>>()
    );

    // Round-trip a small corpus through disk and the validating reader.
    let dir = tempfile::tempdir().unwrap();
    let mut pairs = Vec::new();
    let mut episodes = Vec::new();
    for seed in 500..506u64 {
        let scene = sample_scene(seed, Style::Plain, &pool).unwrap();
        let img = render_scene(&scene);
        let target = scene.objects[0].category;
        let ep = script_expert(&scene, target).unwrap();
        episodes.push(episode_record(&ep));
        let name = scr_core::world::dataset::image_name(pairs.len());
        pairs.push((scene_record(&scene, name), img));
    }
    let meta = DatasetMeta {
        format: FORMAT_VERSION,
        seed: 500,
        style: Style::Plain,
        categories: pool.iter().map(|c| c.name()).collect(),
        n_scenes: pairs.len(),
        n_episodes: episodes.len(),
    };
    write_dataset(dir.path(), &meta, &pairs, &episodes).unwrap();
    let ds = read_dataset(dir.path()).unwrap();
    println!(
        "\ndataset round trip: {} scenes, {} episodes, all validated",
        ds.records.len(),
        ds.episodes.len()
    );
}
