//! Synthetic sign-like images for desk-scale experiments.

use std::f64::consts::PI;

use super::{Dataset, Image};
use crate::error::{Error, Result};
use crate::rng::RngState;

pub const TEMPLATE_NAMES: [&str; 12] = [
    "octagon",
    "triangle",
    "diamond",
    "cross",
    "circle",
    "square",
    "yield",
    "pentagon",
    "hexagon",
    "rectangle",
    "star",
    "ring",
];

const SIZE_FRACTION: f64 = 0.32;
const JITTER_FRACTION: f64 = 0.10;
const BRIGHTNESS_JITTER: f64 = 0.20;
const NOISE_STD: f64 = 0.02;
/// Minimum largest-channel gap between sign and background color.
const MIN_CONTRAST: f64 = 0.5;

fn random_color(rng: &mut RngState) -> [f64; 3] {
    [rng.next_f64(), rng.next_f64(), rng.next_f64()]
}

fn regular_polygon(n: usize, rotation: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let a = rotation + 2.0 * PI * k as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .collect()
}

fn star() -> Vec<(f64, f64)> {
    (0..10)
        .map(|k| {
            let r = if k % 2 == 0 { 1.0 } else { 0.45 };
            let a = -PI / 2.0 + PI * k as f64 / 5.0;
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

/// Even-odd rule point-in-polygon test.
fn in_polygon(poly: &[(f64, f64)], u: f64, v: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Whether the offset `(u, v)` (in units of the shape radius, v pointing down)
/// falls inside template `t`.
fn inside(t: usize, u: f64, v: f64) -> bool {
    match TEMPLATE_NAMES[t] {
        "octagon" => in_polygon(&regular_polygon(8, PI / 8.0), u, v),
        "triangle" => in_polygon(&regular_polygon(3, -PI / 2.0), u, v),
        "circle" => u * u + v * v <= 1.0,
        "square" => in_polygon(&regular_polygon(4, PI / 4.0), u, v),
        "diamond" => in_polygon(&regular_polygon(4, 0.0), u, v),
        "yield" => in_polygon(&regular_polygon(3, PI / 2.0), u, v),
        "pentagon" => in_polygon(&regular_polygon(5, -PI / 2.0), u, v),
        "hexagon" => in_polygon(&regular_polygon(6, 0.0), u, v),
        "rectangle" => u.abs() <= 1.0 && v.abs() <= 0.5,
        "cross" => (u.abs() <= 1.0 && v.abs() <= 0.3) || (u.abs() <= 0.3 && v.abs() <= 1.0),
        "star" => in_polygon(&star(), u, v),
        "ring" => {
            let r2 = u * u + v * v;
            (0.3..=1.0).contains(&r2)
        }
        _ => unreachable!(),
    }
}

/// Renders one image. Only the shape carries the class; sign and background
/// colors are drawn per image.
fn render(template: usize, side: usize, rng: &mut RngState) -> Image {
    let s = side as f64;
    let fg = random_color(rng);
    let mut bg = random_color(rng);
    while (0..3).map(|c| (fg[c] - bg[c]).abs()).fold(0.0, f64::max) < MIN_CONTRAST {
        bg = random_color(rng);
    }
    let cx = s / 2.0 + rng.uniform(-JITTER_FRACTION, JITTER_FRACTION) * s;
    let cy = s / 2.0 + rng.uniform(-JITTER_FRACTION, JITTER_FRACTION) * s;
    let brightness = 1.0 + rng.uniform(-BRIGHTNESS_JITTER, BRIGHTNESS_JITTER);
    let radius = SIZE_FRACTION * s;

    let mut pixels = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let u = (x as f64 + 0.5 - cx) / radius;
            let v = (y as f64 + 0.5 - cy) / radius;
            let base = if inside(template, u, v) { fg } else { bg };
            for c in base {
                let p = (c * brightness + rng.normal(0.0, NOISE_STD)).clamp(0.0, 1.0);
                // 8-bit quantization so the images survive a PPM round trip unchanged.
                pixels.push((p * 255.0).round() / 255.0);
            }
        }
    }
    Image::new(side, side, pixels).expect("pixels clamped")
}

/// Generates `classes * per_class` images, ordered by class. Class `k` uses
/// template `k` of [`TEMPLATE_NAMES`] and is named `"{k:02}_{template}"`.
pub fn synth_signs(classes: usize, per_class: usize, side: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 || classes > TEMPLATE_NAMES.len() {
        return Err(Error::Config(format!(
            "classes must be between 2 and {}, got {classes}",
            TEMPLATE_NAMES.len()
        )));
    }
    if per_class == 0 {
        return Err(Error::Config("per_class must be at least 1".into()));
    }
    if side < 16 {
        return Err(Error::Config(format!("side must be at least 16, got {side}")));
    }
    let mut rng = RngState::new(seed);
    let mut examples = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        for _ in 0..per_class {
            examples.push((render(class, side, &mut rng), class));
        }
    }
    let names = (0..classes)
        .map(|k| format!("{k:02}_{}", TEMPLATE_NAMES[k]))
        .collect();
    Dataset::new(examples, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_names() {
        let ds = synth_signs(4, 50, 16, 1).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.class_counts(), vec![50; 4]);
        assert_eq!(ds.class_names()[0], "00_octagon");
        let mut sorted = ds.class_names().to_vec();
        sorted.sort();
        assert_eq!(sorted, ds.class_names());
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synth_signs(3, 5, 16, 9).unwrap(), synth_signs(3, 5, 16, 9).unwrap());
        assert_ne!(synth_signs(3, 5, 16, 9).unwrap(), synth_signs(3, 5, 16, 10).unwrap());
    }

    #[test]
    fn config_errors() {
        assert!(matches!(synth_signs(13, 1, 16, 0), Err(Error::Config(_))));
        assert!(matches!(synth_signs(1, 1, 16, 0), Err(Error::Config(_))));
        assert!(matches!(synth_signs(2, 0, 16, 0), Err(Error::Config(_))));
        assert!(matches!(synth_signs(2, 1, 15, 0), Err(Error::Config(_))));
    }

    #[test]
    fn all_templates_render_distinct_masks() {
        let side = 48;
        let masks: Vec<Vec<bool>> = (0..12)
            .map(|t| {
                (0..side * side)
                    .map(|i| {
                        let (x, y) = ((i % side) as f64 + 0.5, (i / side) as f64 + 0.5);
                        let r = SIZE_FRACTION * side as f64;
                        inside(t, (x - 24.0) / r, (y - 24.0) / r)
                    })
                    .collect()
            })
            .collect();
        for a in 0..12 {
            assert!(masks[a].iter().any(|&b| b), "{} is empty", TEMPLATE_NAMES[a]);
            for b in a + 1..12 {
                assert_ne!(masks[a], masks[b], "{} vs {}", TEMPLATE_NAMES[a], TEMPLATE_NAMES[b]);
            }
        }
    }

    #[test]
    fn pixels_are_quantized_and_in_range() {
        let ds = synth_signs(12, 2, 16, 4).unwrap();
        for (img, _) in ds.examples() {
            for &p in img.pixels() {
                assert!((0.0..=1.0).contains(&p));
                assert_eq!(((p * 255.0).round() / 255.0), p);
            }
        }
    }
}
