//! Image quality metrics: SSIM, PSNR and the per-pixel image distance (ID),
//! plus the ratio tables used by the thresholding experiments.

use crate::error::{Error, Result};
use crate::image::Image;

/// Pixel tolerance of the image distance: one 8-bit step.
pub const ID_EPSILON: f64 = 1.0 / 256.0;

/// Scores of one reconstruction against its reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub ssim: f64,
    /// dB; +inf for a perfect match.
    pub psnr: f64,
    /// Fraction of pixels equal within [`ID_EPSILON`], in [0, 1].
    pub id: f64,
}

fn check_same_shape(op: &'static str, x: &Image, y: &Image) -> Result<()> {
    if (x.height, x.width) != (y.height, y.width) {
        return Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", x.height, x.width, y.height, y.width),
        ));
    }
    Ok(())
}

/// Fraction of entries with |x_i − x̂_i| ≤ epsilon.
pub fn id_metric(x: &Image, xhat: &Image, epsilon: f64) -> Result<f64> {
    check_same_shape("id_metric", x, xhat)?;
    if epsilon <= 0.0 {
        return Err(Error::arg("id_metric", "epsilon must be positive"));
    }
    let hits = x
        .data
        .iter()
        .zip(&xhat.data)
        .filter(|(a, b)| (*a - *b).abs() <= epsilon)
        .count();
    Ok(hits as f64 / x.pixels() as f64)
}

/// 10·log10(peak² / MSE); +inf when the images agree exactly.
pub fn psnr(x: &Image, xhat: &Image, peak: f64) -> Result<f64> {
    check_same_shape("psnr", x, xhat)?;
    if peak <= 0.0 {
        return Err(Error::arg("psnr", "peak must be positive"));
    }
    let mse = x
        .data
        .iter()
        .zip(&xhat.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.pixels() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (peak * peak / mse).log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            let v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[i * SSIM_WINDOW + j] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean local SSIM over all fully-interior 11x11 Gaussian windows
/// (σ = 1.5, dynamic range 1). Inputs are clamped to [0, 1] first.
pub fn ssim(x: &Image, xhat: &Image) -> Result<f64> {
    check_same_shape("ssim", x, xhat)?;
    if x.height < SSIM_WINDOW || x.width < SSIM_WINDOW {
        return Err(Error::arg(
            "ssim",
            format!("image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", x.height, x.width),
        ));
    }
    let a = x.clamped01();
    let b = xhat.clamped01();
    let win = gaussian_window();
    let (h, w) = (x.height, x.width);
    let oh = h - SSIM_WINDOW + 1;
    let ow = w - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for oi in 0..oh {
        for oj in 0..ow {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for u in 0..SSIM_WINDOW {
                let row = (oi + u) * w + oj;
                for v in 0..SSIM_WINDOW {
                    let g = win[u * SSIM_WINDOW + v];
                    let av = a.data[row + v];
                    let bv = b.data[row + v];
                    mu_a += g * av;
                    mu_b += g * bv;
                    aa += g * av * av;
                    bb += g * bv * bv;
                    ab += g * av * bv;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
            total += num / den;
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// Full report with peak 1 and the standard ID tolerance.
pub fn report(reference: &Image, reconstruction: &Image) -> Result<MetricReport> {
    Ok(MetricReport {
        ssim: ssim(reference, reconstruction)?,
        psnr: psnr(reference, reconstruction, 1.0)?,
        id: id_metric(reference, reconstruction, ID_EPSILON)?,
    })
}

/// The thresholding grid {0.50, 0.55, …, 0.95}.
pub fn default_p_grid() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Mean metric ratios (thresholded / reference) at one thresholding level.
#[derive(Clone, Copy, Debug)]
pub struct RatioRow {
    pub p: f64,
    pub id_ratio: f64,
    pub ssim_ratio: f64,
    pub psnr_ratio: f64,
    /// Images evaluated at this level (missing ratios are excluded from the
    /// per-metric means but still counted here).
    pub n_images: usize,
}

fn ratio(reference: f64, thresholded: f64) -> Option<f64> {
    if reference.is_infinite() && thresholded.is_infinite() {
        return Some(1.0);
    }
    if !reference.is_finite() || !thresholded.is_finite() || reference.abs() < 1e-12 {
        return None;
    }
    Some(thresholded / reference)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Per-p mean ratios over an image set.
///
/// `reference_reports[i]` scores image i reconstructed from all
/// coefficients; `thresholded_reports[i][j]` scores the same image
/// reconstructed after thresholding at `p_grid[j]`.
pub fn ratio_curve(
    reference_reports: &[MetricReport],
    thresholded_reports: &[Vec<MetricReport>],
    p_grid: &[f64],
) -> Result<Vec<RatioRow>> {
    if reference_reports.len() != thresholded_reports.len() {
        return Err(Error::shape(
            "ratio_curve",
            format!("{} reference vs {} thresholded image entries", reference_reports.len(), thresholded_reports.len()),
        ));
    }
    for (i, per_p) in thresholded_reports.iter().enumerate() {
        if per_p.len() != p_grid.len() {
            return Err(Error::shape(
                "ratio_curve",
                format!("image {i} has {} entries for {} grid points", per_p.len(), p_grid.len()),
            ));
        }
    }
    Ok(p_grid
        .iter()
        .enumerate()
        .map(|(j, &p)| RatioRow {
            p,
            id_ratio: mean(
                reference_reports.iter().zip(thresholded_reports).map(|(r, t)| ratio(r.id, t[j].id)),
            ),
            ssim_ratio: mean(
                reference_reports.iter().zip(thresholded_reports).map(|(r, t)| ratio(r.ssim, t[j].ssim)),
            ),
            psnr_ratio: mean(
                reference_reports.iter().zip(thresholded_reports).map(|(r, t)| ratio(r.psnr, t[j].psnr)),
            ),
            n_images: reference_reports.len(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn id_identical_is_one() {
        let x = rand_image(1, 8, 8);
        assert_eq!(id_metric(&x, &x, ID_EPSILON).unwrap(), 1.0);
    }

    #[test]
    fn id_uniform_offset_is_zero() {
        let x = rand_image(2, 8, 8);
        let shifted = Image::new(8, 8, x.data.iter().map(|v| v + 0.5).collect()).unwrap();
        assert_eq!(id_metric(&x, &shifted, ID_EPSILON).unwrap(), 0.0);
    }

    #[test]
    fn id_partial_match() {
        let x = Image::new(1, 3, vec![0.0, 0.1, 0.2]).unwrap();
        let y = Image::new(1, 3, vec![0.0, 0.1040, 0.2]).unwrap();
        // |0.0040| exceeds 1/256 ≈ 0.0039, so exactly one entry differs.
        let v = id_metric(&x, &y, ID_EPSILON).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        // A difference just below the tolerance still counts as equal.
        let z = Image::new(1, 3, vec![0.0, 0.1039, 0.2]).unwrap();
        assert_eq!(id_metric(&x, &z, ID_EPSILON).unwrap(), 1.0);
    }

    #[test]
    fn id_invariant_under_shared_permutation() {
        let x = rand_image(3, 4, 4);
        let y = rand_image(4, 4, 4);
        let base = id_metric(&x, &y, ID_EPSILON).unwrap();
        let mut perm: Vec<usize> = (0..16).collect();
        perm.reverse();
        perm.swap(2, 7);
        let px = Image::new(4, 4, perm.iter().map(|&i| x.data[i]).collect()).unwrap();
        let py = Image::new(4, 4, perm.iter().map(|&i| y.data[i]).collect()).unwrap();
        assert_eq!(id_metric(&px, &py, ID_EPSILON).unwrap(), base);
    }

    #[test]
    fn psnr_basics() {
        let x = rand_image(5, 8, 8);
        assert!(psnr(&x, &x, 1.0).unwrap().is_infinite());
        let shifted = Image::new(8, 8, x.data.iter().map(|v| v + 0.1).collect()).unwrap();
        let db = psnr(&x, &shifted, 1.0).unwrap();
        assert!((db - 20.0).abs() < 1e-9, "got {db}");
    }

    #[test]
    fn psnr_matches_hand_computed_mse() {
        let x = rand_image(6, 5, 5);
        let y = rand_image(7, 5, 5);
        let mse: f64 = x.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 25.0;
        let expect = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&x, &y, 1.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn psnr_depends_only_on_difference() {
        let x = rand_image(8, 6, 6);
        let noise: Vec<f64> = rand_image(9, 6, 6).data.iter().map(|v| v * 0.1).collect();
        let y = Image::new(6, 6, x.data.iter().zip(&noise).map(|(a, n)| a + n).collect()).unwrap();
        let z = Image::new(6, 6, noise.clone()).unwrap();
        let zero = Image::zeros(6, 6);
        assert!((psnr(&x, &y, 1.0).unwrap() - psnr(&zero, &z, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_identical_is_one() {
        let x = rand_image(10, 16, 16);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn ssim_of_inverted_binary_image_is_negative() {
        // Checkerboard-ish binary pattern.
        let mut data = vec![0.0; 16 * 16];
        for i in 0..16 {
            for j in 0..16 {
                if (i / 2 + j / 2) % 2 == 0 {
                    data[i * 16 + j] = 1.0;
                }
            }
        }
        let x = Image::new(16, 16, data.clone()).unwrap();
        let inv = Image::new(16, 16, data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let s = ssim(&x, &inv).unwrap();
        assert!(s < 0.0, "anticorrelated ssim {s}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let x = rand_image(11, 12, 12);
        let y = rand_image(12, 12, 12);
        let a = ssim(&x, &y).unwrap();
        let b = ssim(&y, &x).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let x = rand_image(13, 8, 8);
        assert!(ssim(&x, &x).is_err());
    }

    #[test]
    fn metrics_degrade_with_noise_amplitude() {
        let x = rand_image(14, 16, 16);
        let noise = rand_image(15, 16, 16);
        let mut prev = MetricReport { ssim: 1.0, psnr: f64::INFINITY, id: 1.0 };
        for level in [0.01, 0.05, 0.2] {
            let y = Image::new(
                16,
                16,
                x.data.iter().zip(&noise.data).map(|(a, n)| a + level * (n - 0.5)).collect(),
            )
            .unwrap();
            let r = report(&x, &y).unwrap();
            assert!(r.ssim < prev.ssim);
            assert!(r.psnr < prev.psnr);
            assert!(r.id <= prev.id);
            prev = r;
        }
    }

    #[test]
    fn ratio_curve_identity_case() {
        let reports: Vec<MetricReport> =
            (0..4).map(|i| MetricReport { ssim: 0.9, psnr: 30.0 + i as f64, id: 0.8 }).collect();
        let thresholded: Vec<Vec<MetricReport>> = reports.iter().map(|r| vec![*r, *r]).collect();
        let rows = ratio_curve(&reports, &thresholded, &[0.0, 0.5]).unwrap();
        for row in rows {
            assert_eq!(row.id_ratio, 1.0);
            assert_eq!(row.ssim_ratio, 1.0);
            assert_eq!(row.psnr_ratio, 1.0);
            assert_eq!(row.n_images, 4);
        }
    }

    #[test]
    fn ratio_guards_tiny_and_infinite_references() {
        let refs = vec![
            MetricReport { ssim: 0.0, psnr: f64::INFINITY, id: 1.0 },
            MetricReport { ssim: 0.5, psnr: 40.0, id: 1.0 },
        ];
        let thr = vec![
            vec![MetricReport { ssim: 0.1, psnr: 35.0, id: 0.5 }],
            vec![MetricReport { ssim: 0.25, psnr: 20.0, id: 0.5 }],
        ];
        let rows = ratio_curve(&refs, &thr, &[0.85]).unwrap();
        // ssim of image 0 is below the guard, psnr of image 0 is infinite:
        // both fall back to the single valid image.
        assert!((rows[0].ssim_ratio - 0.5).abs() < 1e-12);
        assert!((rows[0].psnr_ratio - 0.5).abs() < 1e-12);
        assert!((rows[0].id_ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn default_grid_matches_expected_domain() {
        let g = default_p_grid();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 0.5).abs() < 1e-12);
        assert!((g[9] - 0.95).abs() < 1e-12);
    }
}
