//! Pixel-exact rasterization of textured shapes onto 32x32 RGB canvases.
//!
//! Shapes are analytic inside-tests evaluated at pixel centers, so a mask is
//! a pure function of (shape, center, radius) and every rasterized pixel
//! count is monotone in the radius. Backgrounds are total functions of scene
//! coordinates, which lets a panning view reveal a seamlessly continued
//! pattern beyond the canvas edge.

use serde::{Deserialize, Serialize};

use super::vocab::{Color, Shape, Texture};

pub const WIDTH: usize = 32;
pub const HEIGHT: usize = 32;
pub const PIXELS: usize = WIDTH * HEIGHT;

/// 8-bit RGB canvas, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn filled(color: [u8; 3]) -> Self {
        let mut rgb = Vec::with_capacity(3 * PIXELS);
        for _ in 0..PIXELS {
            rgb.extend_from_slice(&color);
        }
        Image { rgb }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * WIDTH + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = 3 * (y * WIDTH + x);
        self.rgb[i..i + 3].copy_from_slice(&c);
    }
}

/// Rendering style. `Robotics` is the deliberate domain shift used by the
/// fine-tuning corpus: gray wall, gridded table, desaturated object colors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Plain,
    Robotics,
}

/// Row where the robotics wall meets the table.
const HORIZON: i32 = 12;

/// Background color at scene coordinate (x, y), defined for all integers.
pub fn background(style: Style, x: i32, y: i32) -> [u8; 3] {
    match style {
        Style::Plain => [24, 26, 32],
        Style::Robotics => {
            if y < HORIZON {
                [88, 88, 92]
            } else if x.rem_euclid(8) == 0 || y.rem_euclid(8) == 4 {
                [98, 100, 102]
            } else {
                [116, 118, 120]
            }
        }
    }
}

/// Object fill color under a style. Robotics scenes pull colors halfway to
/// their gray value.
pub fn paint(color: Color, style: Style) -> [u8; 3] {
    let [r, g, b] = color.rgb();
    match style {
        Style::Plain => [r, g, b],
        Style::Robotics => {
            let gray =
                (0.30 * f32::from(r) + 0.59 * f32::from(g) + 0.11 * f32::from(b)).round() as u8;
            let mix = |c: u8| ((u16::from(c) + u16::from(gray)) / 2) as u8;
            [mix(r), mix(g), mix(b)]
        }
    }
}

fn darken(c: [u8; 3]) -> [u8; 3] {
    [
        (f32::from(c[0]) * 0.45) as u8,
        (f32::from(c[1]) * 0.45) as u8,
        (f32::from(c[2]) * 0.45) as u8,
    ]
}

/// Fill color at scene coordinate (x, y) for a textured object. Texture
/// phase is scene-absolute, so occlusion and panning never shift it.
pub fn textured(base: [u8; 3], texture: Texture, x: i32, y: i32) -> [u8; 3] {
    match texture {
        Texture::Solid => base,
        Texture::Striped => {
            if (x + y).rem_euclid(4) < 2 {
                base
            } else {
                darken(base)
            }
        }
        Texture::Dotted => {
            if x.rem_euclid(3) == 1 && y.rem_euclid(3) == 1 {
                darken(base)
            } else {
                base
            }
        }
    }
}

/// True when the pixel-center offset (dx, dy) from the shape center lies
/// inside the shape of the given radius.
pub fn inside(shape: Shape, dx: f32, dy: f32, r: f32) -> bool {
    let (ax, ay) = (dx.abs(), dy.abs());
    match shape {
        Shape::Circle => dx * dx + dy * dy <= r * r,
        Shape::Square => ax <= r && ay <= r,
        Shape::Triangle => dy >= -r && dy <= r && ax <= (dy + r) * 0.5,
        Shape::Diamond => ax + ay <= r,
        Shape::Cross => (ax <= r / 3.0 && ay <= r) || (ay <= r / 3.0 && ax <= r),
        Shape::Ring => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
        }
        Shape::Star => ax <= r && ay <= r && ax * ay <= 0.16 * r * r,
        Shape::Bar => ax <= r && ay <= r / 3.0,
    }
}

/// Boolean mask of the shape over the canvas, row-major.
pub fn raster_mask(shape: Shape, cx: f32, cy: f32, r: f32) -> Vec<bool> {
    let mut m = vec![false; PIXELS];
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            let dx = x as f32 + 0.5 - cx;
            let dy = y as f32 + 0.5 - cy;
            m[y * WIDTH + x] = inside(shape, dx, dy, r);
        }
    }
    m
}

pub fn mask_area(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

/// Smallest radius whose rasterized pixel count at this center reaches at
/// least `target_px`, found by bisection over the monotone count.
pub fn radius_for_area(shape: Shape, cx: f32, cy: f32, target_px: usize) -> f32 {
    let count = |r: f32| mask_area(&raster_mask(shape, cx, cy, r));
    let (mut lo, mut hi) = (0.5f32, 15.0f32);
    for _ in 0..28 {
        let mid = 0.5 * (lo + hi);
        if count(mid) >= target_px {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// View of `base` translated by (dx, dy) pixels; pixels with no source fall
/// back to the style's background pattern evaluated at the source coordinate.
pub fn shift_view(base: &Image, style: Style, dx: i32, dy: i32) -> Image {
    let mut out = Image::filled([0, 0, 0]);
    for y in 0..HEIGHT as i32 {
        for x in 0..WIDTH as i32 {
            let (sx, sy) = (x - dx, y - dy);
            let c = if sx >= 0 && sx < WIDTH as i32 && sy >= 0 && sy < HEIGHT as i32 {
                base.get(sx as usize, sy as usize)
            } else {
                background(style, sx, sy)
            };
            out.set(x as usize, y as usize, c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_calibration_reaches_target_areas() {
        for shape in crate::world::vocab::SHAPES {
            for target in [45, 90, 160] {
                let r = radius_for_area(shape, 16.0, 16.0, target);
                let got = mask_area(&raster_mask(shape, 16.0, 16.0, r));
                assert!(got >= target, "{shape:?} target {target} got {got}");
                let below = mask_area(&raster_mask(shape, 16.0, 16.0, r - 0.02));
                assert!(below < target + 24, "{shape:?} overshoots: {below}");
            }
        }
    }

    #[test]
    fn circle_mask_matches_analytic_area() {
        let r = 5.0;
        let area = mask_area(&raster_mask(Shape::Circle, 16.0, 16.0, r)) as f32;
        let analytic = std::f32::consts::PI * r * r;
        assert!((area - analytic).abs() < 0.12 * analytic, "{area} vs {analytic}");
    }

    #[test]
    fn shifted_view_restores_under_inverse_shift() {
        let mut base = Image::filled([10, 20, 30]);
        base.set(5, 7, [200, 100, 50]);
        let there = shift_view(&base, Style::Plain, 3, -2);
        assert_eq!(there.get(8, 5), [200, 100, 50]);
        let back = shift_view(&there, Style::Plain, -3, 2);
        assert_eq!(back.get(5, 7), [200, 100, 50]);
    }

    #[test]
    fn robotics_background_continues_beyond_canvas() {
        let a = background(Style::Robotics, -8, 20);
        let b = background(Style::Robotics, 0, 20);
        assert_eq!(a, b);
        assert_ne!(
            background(Style::Robotics, 1, 2),
            background(Style::Robotics, 1, 20)
        );
    }
}
