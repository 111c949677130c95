//! Random geometric phantoms: an ellipse, a rectangle and a star-like shape
//! with randomly drawn parameters, rasterized hard-edged onto a black
//! background so the images are exactly piecewise constant.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;

/// Training corpus size of the reference configuration.
pub const REFERENCE_TRAIN_COUNT: usize = 1500;
/// Validation corpus size of the reference configuration.
pub const REFERENCE_VAL_COUNT: usize = 500;
/// Image side of the reference configuration.
pub const REFERENCE_IMAGE_SIZE: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct EllipseParams {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub rotation: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RectangleParams {
    pub center: (f64, f64),
    /// Half-extents along the rotated axes.
    pub extents: (f64, f64),
    pub rotation: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StarParams {
    pub center: (f64, f64),
    pub outer_radius: f64,
    pub inner_radius: f64,
    pub points: usize,
    pub rotation: f64,
    pub intensity: f64,
}

/// Fully resolved description of one phantom.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub size: usize,
    pub ellipse: EllipseParams,
    pub rectangle: RectangleParams,
    pub star: StarParams,
}

impl PhantomSpec {
    /// Draw a random spec. Shape centers fall in the central 60% of the
    /// frame; radii and half-extents are capped by the distance to the
    /// nearest border so every shape lies fully inside the image.
    pub fn sample(size: usize, rng: &mut ChaCha8Rng) -> PhantomSpec {
        let s = size as f64;
        let lo = 0.2 * s;
        let hi = 0.8 * s;
        let min_r = 0.08 * s;
        let max_r = 0.25 * s;
        let center = |rng: &mut ChaCha8Rng| -> ((f64, f64), f64) {
            let c = (rng.random_range(lo..hi), rng.random_range(lo..hi));
            let border = c.0.min(c.1).min(s - c.0).min(s - c.1);
            (c, border)
        };

        let (ec, eb) = center(rng);
        let ellipse = EllipseParams {
            center: ec,
            semi_axes: (
                rng.random_range(min_r..max_r.min(eb)),
                rng.random_range(min_r..max_r.min(eb)),
            ),
            rotation: rng.random_range(0.0..std::f64::consts::TAU),
            intensity: rng.random_range(0.3..1.0),
        };

        let (rc, rb) = center(rng);
        // Corner distance is hypot(ex, ey), so each half-extent stays below
        // border/sqrt(2).
        let cap = max_r.min(rb / std::f64::consts::SQRT_2);
        let rectangle = RectangleParams {
            center: rc,
            extents: (rng.random_range(min_r..cap), rng.random_range(min_r..cap)),
            rotation: rng.random_range(0.0..std::f64::consts::TAU),
            intensity: rng.random_range(0.3..1.0),
        };

        let (sc, sb) = center(rng);
        let outer = rng.random_range(min_r..max_r.min(sb));
        let star = StarParams {
            center: sc,
            outer_radius: outer,
            inner_radius: outer * rng.random_range(0.4..0.6),
            points: rng.random_range(5..=8),
            rotation: rng.random_range(0.0..std::f64::consts::TAU),
            intensity: rng.random_range(0.3..1.0),
        };

        PhantomSpec { size, ellipse, rectangle, star }
    }
}

fn rotate(p: (f64, f64), c: (f64, f64), angle: f64) -> (f64, f64) {
    let (dx, dy) = (p.0 - c.0, p.1 - c.1);
    let (sin, cos) = angle.sin_cos();
    (dx * cos + dy * sin, -dx * sin + dy * cos)
}

fn in_ellipse(p: (f64, f64), e: &EllipseParams) -> bool {
    let (x, y) = rotate(p, e.center, e.rotation);
    let (a, b) = e.semi_axes;
    (x / a) * (x / a) + (y / b) * (y / b) <= 1.0
}

fn in_rectangle(p: (f64, f64), r: &RectangleParams) -> bool {
    let (x, y) = rotate(p, r.center, r.rotation);
    x.abs() <= r.extents.0 && y.abs() <= r.extents.1
}

/// Star polygon vertices alternate between the outer and inner radius.
fn star_vertices(s: &StarParams) -> Vec<(f64, f64)> {
    let n = 2 * s.points;
    (0..n)
        .map(|i| {
            let angle = s.rotation + std::f64::consts::TAU * i as f64 / n as f64;
            let r = if i % 2 == 0 { s.outer_radius } else { s.inner_radius };
            (s.center.0 + r * angle.cos(), s.center.1 + r * angle.sin())
        })
        .collect()
}

/// Even-odd ray cast.
fn in_polygon(p: (f64, f64), verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > p.1) != (yj > p.1) {
            let x_cross = xj + (p.1 - yj) / (yi - yj) * (xi - xj);
            if p.0 < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Per-shape hit masks of a rasterized phantom, for oracle checks.
pub struct ShapeMasks {
    pub ellipse: Vec<bool>,
    pub rectangle: Vec<bool>,
    pub star: Vec<bool>,
}

/// Rasterize the three shapes in painter's order ellipse → rectangle → star
/// (later shapes overwrite) at pixel centers, background exactly zero.
pub fn generate(spec: &PhantomSpec) -> Image {
    generate_with_masks(spec).0
}

/// As [`generate`], also returning the per-shape membership masks.
pub fn generate_with_masks(spec: &PhantomSpec) -> (Image, ShapeMasks) {
    let n = spec.size;
    let verts = star_vertices(&spec.star);
    let mut data = vec![0.0; n * n];
    let mut masks = ShapeMasks {
        ellipse: vec![false; n * n],
        rectangle: vec![false; n * n],
        star: vec![false; n * n],
    };
    for row in 0..n {
        for col in 0..n {
            // Pixel center in (x right, y down) coordinates.
            let p = (col as f64 + 0.5, row as f64 + 0.5);
            let i = row * n + col;
            if in_ellipse(p, &spec.ellipse) {
                masks.ellipse[i] = true;
                data[i] = spec.ellipse.intensity;
            }
            if in_rectangle(p, &spec.rectangle) {
                masks.rectangle[i] = true;
                data[i] = spec.rectangle.intensity;
            }
            if in_polygon(p, &verts) {
                masks.star[i] = true;
                data[i] = spec.star.intensity;
            }
        }
    }
    (Image { height: n, width: n, data }, masks)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-item seed stream derived from a master seed, so work
/// items (images, epochs) parallelize or resume without changing results.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index))
}

/// Generate a reproducible corpus of `count` phantoms of side `size`.
pub fn generate_dataset(count: usize, size: usize, master_seed: u64) -> Result<Vec<Image>> {
    if count == 0 {
        return Err(Error::arg("generate_dataset", "count must be >= 1"));
    }
    if size == 0 {
        return Err(Error::arg("generate_dataset", "size must be >= 1"));
    }
    Ok(par::map_indexed(count, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, i as u64));
        generate(&PhantomSpec::sample(size, &mut rng))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec(seed: u64, size: usize) -> PhantomSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PhantomSpec::sample(size, &mut rng)
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(7, 64);
        assert_eq!(generate(&s).data, generate(&s).data);
        let d1 = generate_dataset(8, 32, 123).unwrap();
        let d2 = generate_dataset(8, 32, 123).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn pixels_bounded_and_background_zero() {
        for seed in 0..20 {
            let img = generate(&spec(seed, 64));
            assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            // Corners stay background: shapes live in the central region.
            assert_eq!(img.data[0], 0.0);
            assert_eq!(img.data[63], 0.0);
            assert_eq!(img.data[64 * 63], 0.0);
        }
    }

    #[test]
    fn distinct_intensity_levels_present() {
        let s = spec(11, 64);
        let img = generate(&s);
        let levels: HashSet<u64> = img.data.iter().filter(|v| **v != 0.0).map(|v| v.to_bits()).collect();
        assert!(levels.len() >= 2, "expected at least 2 foreground levels, got {}", levels.len());
    }

    #[test]
    fn every_shape_contributes_pixels_of_its_intensity() {
        for seed in 0..25 {
            let s = spec(seed, 256);
            let (img, masks) = generate_with_masks(&s);
            let n = s.size;
            // The star is drawn last, so inside its own mask its intensity
            // must appear; for earlier shapes check the unoccluded part.
            let star_hit = (0..n * n).any(|i| masks.star[i] && img.data[i] == s.star.intensity);
            assert!(star_hit, "seed {seed}: star never visible");
            let rect_hit =
                (0..n * n).any(|i| masks.rectangle[i] && !masks.star[i] && img.data[i] == s.rectangle.intensity);
            assert!(rect_hit, "seed {seed}: rectangle fully occluded");
            let ell_hit = (0..n * n).any(|i| {
                masks.ellipse[i] && !masks.star[i] && !masks.rectangle[i] && img.data[i] == s.ellipse.intensity
            });
            assert!(ell_hit, "seed {seed}: ellipse fully occluded");
        }
    }

    #[test]
    fn shapes_lie_inside_the_frame() {
        for seed in 0..50 {
            let s = spec(seed, 128);
            let (_, masks) = generate_with_masks(&s);
            let n = s.size;
            for i in 0..n {
                for mask in [&masks.ellipse, &masks.rectangle, &masks.star] {
                    assert!(!mask[i], "top row hit, seed {seed}");
                    assert!(!mask[(n - 1) * n + i], "bottom row hit, seed {seed}");
                    assert!(!mask[i * n], "left column hit, seed {seed}");
                    assert!(!mask[i * n + n - 1], "right column hit, seed {seed}");
                }
            }
        }
    }

    #[test]
    fn disjoint_master_seeds_give_distinct_images() {
        let a = generate_dataset(16, 64, 1).unwrap();
        let b = generate_dataset(16, 64, 2).unwrap();
        let hash = |img: &Image| {
            let mut h = std::collections::hash_map::DefaultHasher::new();
            use std::hash::{Hash, Hasher};
            for v in &img.data {
                v.to_bits().hash(&mut h);
            }
            h.finish()
        };
        let ha: HashSet<u64> = a.iter().map(hash).collect();
        let hb: HashSet<u64> = b.iter().map(hash).collect();
        assert!(ha.is_disjoint(&hb));
    }
}
