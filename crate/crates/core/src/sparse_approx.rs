//! Coefficient-thresholding experiments: encode, zero the fraction p of
//! smallest-magnitude entries per channel, decode, score.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{self, MetricReport, RatioRow};
use crate::ndtensor::{BnMode, Tensor};
use crate::par;
use crate::tfunet::{decode, encode, CoeffPyramid, NetworkParams};

/// Which coefficient stacks participate in thresholding. The default is all
/// of them: the protocol thresholds "each channel" of the encoded domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ThresholdScope {
    pub high_pass: bool,
    pub coarse: bool,
    pub bypass: bool,
}

impl Default for ThresholdScope {
    fn default() -> Self {
        ThresholdScope { high_pass: true, coarse: true, bypass: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdPlan {
    /// Fraction of entries to zero per channel, in [0, 1].
    pub p: f64,
    pub scope: ThresholdScope,
}

impl ThresholdPlan {
    pub fn new(p: f64) -> ThresholdPlan {
        ThresholdPlan { p, scope: ThresholdScope::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::arg("threshold_fraction", format!("p = {} outside [0, 1]", self.p)));
        }
        Ok(())
    }
}

/// Zero the ⌊p·m⌋ smallest-magnitude entries of one channel (ties broken by
/// lowest flat index).
fn threshold_channel(data: &mut [f64], p: f64) {
    let m = data.len();
    let k = (p * m as f64).floor() as usize;
    if k == 0 {
        return;
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_unstable_by(|&a, &b| {
        data[a].abs().total_cmp(&data[b].abs()).then(a.cmp(&b))
    });
    for &i in &order[..k.min(m)] {
        data[i] = 0.0;
    }
}

fn threshold_tensor(t: &Tensor, p: f64) -> Result<Tensor> {
    let (bsz, c, h, w) = t.dims4()?;
    let plane = h * w;
    let mut data = t.to_vec();
    for bc in 0..bsz * c {
        threshold_channel(&mut data[bc * plane..(bc + 1) * plane], p);
    }
    Ok(Tensor::from_raw(t.shape().to_vec(), data))
}

/// Per-channel magnitude thresholding over the participating stacks.
pub fn threshold_fraction(pyr: &CoeffPyramid, plan: &ThresholdPlan) -> Result<CoeffPyramid> {
    plan.validate()?;
    let apply = |t: &Tensor, on: bool| -> Result<Tensor> {
        if on {
            threshold_tensor(t, plan.p)
        } else {
            Ok(t.clone())
        }
    };
    let mut levels = Vec::with_capacity(pyr.levels.len());
    for l in &pyr.levels {
        levels.push(crate::tfunet::LevelStacks {
            h: apply(&l.h, plan.scope.high_pass)?,
            v: apply(&l.v, plan.scope.high_pass)?,
            d: apply(&l.d, plan.scope.high_pass)?,
        });
    }
    let coarse = apply(&pyr.coarse, plan.scope.coarse)?;
    let bypass = match &pyr.bypass {
        None => None,
        Some(bp) => Some(bp.iter().map(|t| apply(t, plan.scope.bypass)).collect::<Result<Vec<_>>>()?),
    };
    Ok(CoeffPyramid { levels, coarse, bypass })
}

/// Reconstructions of one image from all and from thresholded coefficients,
/// with their scores against the original.
pub struct SparseRecon {
    pub full: Image,
    pub thresholded: Image,
    pub report_full: MetricReport,
    pub report_thresholded: MetricReport,
}

/// Encode, threshold at `p`, decode, and score both reconstructions
/// against `x` (clamped to [0, 1] for the metrics).
pub fn sparse_reconstruct(
    params: &NetworkParams,
    x: &Image,
    p: f64,
    scope: ThresholdScope,
) -> Result<SparseRecon> {
    let pyr = encode(params, &x.to_tensor(), BnMode::Eval)?;
    let full_t = decode(params, &pyr, BnMode::Eval)?;
    let thr = threshold_fraction(&pyr, &ThresholdPlan { p, scope })?;
    let thr_t = decode(params, &thr, BnMode::Eval)?;
    let full = Image::from_tensor(&full_t, 0)?;
    let thresholded = Image::from_tensor(&thr_t, 0)?;
    Ok(SparseRecon {
        report_full: metrics::report(x, &full.clamped01())?,
        report_thresholded: metrics::report(x, &thresholded.clamped01())?,
        full,
        thresholded,
    })
}

/// Reference and per-p thresholded reports for every image, evaluated in
/// parallel (reference first, then one report per grid entry).
pub fn per_image_reports(
    params: &NetworkParams,
    images: &[Image],
    p_grid: &[f64],
    scope: ThresholdScope,
) -> Result<(Vec<MetricReport>, Vec<Vec<MetricReport>>)> {
    let per_image: Vec<Result<(MetricReport, Vec<MetricReport>)>> = par::map_indexed(images.len(), |i| {
        let x = &images[i];
        let pyr = encode(params, &x.to_tensor(), BnMode::Eval)?;
        let full = Image::from_tensor(&decode(params, &pyr, BnMode::Eval)?, 0)?;
        let reference = metrics::report(x, &full.clamped01())?;
        let mut rows = Vec::with_capacity(p_grid.len());
        for &p in p_grid {
            let thr = threshold_fraction(&pyr, &ThresholdPlan { p, scope })?;
            let img = Image::from_tensor(&decode(params, &thr, BnMode::Eval)?, 0)?;
            rows.push(metrics::report(x, &img.clamped01())?);
        }
        Ok((reference, rows))
    });
    let mut refs = Vec::with_capacity(images.len());
    let mut thrs = Vec::with_capacity(images.len());
    for r in per_image {
        let (reference, rows) = r?;
        refs.push(reference);
        thrs.push(rows);
    }
    Ok((refs, thrs))
}

/// Ratio table of one model over an image set and thresholding grid.
pub fn model_ratio_table(
    params: &NetworkParams,
    images: &[Image],
    p_grid: &[f64],
    scope: ThresholdScope,
) -> Result<Vec<RatioRow>> {
    let (refs, thrs) = per_image_reports(params, images, p_grid, scope)?;
    metrics::ratio_curve(&refs, &thrs, p_grid)
}

/// Compare two trained models (conventionally a = with bypass, b = without)
/// on the same validation images and grid.
pub fn run_experiment(
    params_a: &NetworkParams,
    params_b: &NetworkParams,
    validation: &[Image],
    p_grid: &[f64],
    scope: ThresholdScope,
) -> Result<(Vec<RatioRow>, Vec<RatioRow>)> {
    if validation.is_empty() {
        return Err(Error::arg("run_experiment", "empty validation set"));
    }
    Ok((
        model_ratio_table(params_a, validation, p_grid, scope)?,
        model_ratio_table(params_b, validation, p_grid, scope)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tfunet::{init_params, ArchConfig, LevelStacks, PyramidLayout};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_stack_pyramid(values: Vec<f64>) -> CoeffPyramid {
        let n = values.len();
        CoeffPyramid {
            levels: vec![LevelStacks {
                h: Tensor::new(vec![1, 1, 1, n], values).unwrap(),
                v: Tensor::zeros(vec![1, 1, 1, n]),
                d: Tensor::zeros(vec![1, 1, 1, n]),
            }],
            coarse: Tensor::zeros(vec![1, 1, 1, n]),
            bypass: None,
        }
    }

    #[test]
    fn half_threshold_zeroes_two_smallest() {
        let pyr = single_stack_pyramid(vec![0.1, -0.5, 0.2, 0.9]);
        let out = threshold_fraction(&pyr, &ThresholdPlan::new(0.5)).unwrap();
        assert_eq!(out.levels[0].h.data(), &[0.0, -0.5, 0.0, 0.9]);
    }

    #[test]
    fn p_zero_is_identity_and_p_one_clears() {
        let pyr = single_stack_pyramid(vec![0.3, -0.1, 0.7, 0.2]);
        let same = threshold_fraction(&pyr, &ThresholdPlan::new(0.0)).unwrap();
        assert_eq!(same, pyr);
        let cleared = threshold_fraction(&pyr, &ThresholdPlan::new(1.0)).unwrap();
        assert!(cleared.levels[0].h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ties_break_by_lowest_flat_index() {
        let pyr = single_stack_pyramid(vec![0.3, -0.3, 0.7, 0.9]);
        let out = threshold_fraction(&pyr, &ThresholdPlan::new(0.25)).unwrap();
        // Exactly one of the ±0.3 entries is zeroed: the one at index 0.
        assert_eq!(out.levels[0].h.data(), &[0.0, -0.3, 0.7, 0.9]);
    }

    #[test]
    fn scope_flags_exempt_stacks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let arch = ArchConfig { levels: 1, base_channels: 2, channel_growth: 2, kernel_size: 3, bypass: true };
        let layout = PyramidLayout::new(&arch, 1, 8, 8).unwrap();
        let flat: Vec<f64> = (0..layout.total_len()).map(|_| rng.random_range(0.5..2.0)).collect();
        let pyr = layout.unflatten(&flat).unwrap();

        let scope = ThresholdScope { high_pass: true, coarse: false, bypass: false };
        let out = threshold_fraction(&pyr, &ThresholdPlan { p: 1.0, scope }).unwrap();
        assert_eq!(out.coarse, pyr.coarse);
        assert_eq!(out.bypass, pyr.bypass);
        assert!(out.levels[0].h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sparse_reconstruct_p_zero_matches_full_bitwise() {
        let arch = ArchConfig { levels: 2, base_channels: 2, channel_growth: 2, kernel_size: 3, bypass: true };
        let params = init_params(&arch, 5).unwrap();
        let img = crate::phantoms::generate_dataset(1, 16, 9).unwrap().remove(0);
        let rec = sparse_reconstruct(&params, &img, 0.0, ThresholdScope::default()).unwrap();
        assert_eq!(rec.full, rec.thresholded);
        assert_eq!(rec.report_full, rec.report_thresholded);
    }

    #[test]
    fn experiment_row_count_matches_grid() {
        let arch = ArchConfig { levels: 1, base_channels: 2, channel_growth: 2, kernel_size: 3, bypass: false };
        let a = init_params(&arch, 7).unwrap();
        let b = init_params(&arch, 8).unwrap();
        let imgs = crate::phantoms::generate_dataset(2, 16, 11).unwrap();
        let grid = [0.5, 0.7, 0.9];
        let (ta, tb) = run_experiment(&a, &b, &imgs, &grid, ThresholdScope::default()).unwrap();
        assert_eq!(ta.len(), grid.len());
        assert_eq!(tb.len(), grid.len());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn zeroes_exactly_floor_p_m_and_never_grows(
                vals in proptest::collection::vec(-10.0f64..10.0, 4..64),
                p in 0.0f64..1.0,
            ) {
                let m = vals.len();
                let pyr = single_stack_pyramid(vals.clone());
                let out = threshold_fraction(&pyr, &ThresholdPlan::new(p)).unwrap();
                let data = out.levels[0].h.data();
                let zeroed = data.iter().zip(&vals).filter(|(o, i)| **o == 0.0 && **i != 0.0).count();
                let original_zeros = vals.iter().filter(|v| **v == 0.0).count();
                let expect = (p * m as f64).floor() as usize;
                // Entries that were already zero stay zero and may absorb
                // part of the quota.
                prop_assert_eq!(zeroed + original_zeros.min(expect), expect);
                for (o, i) in data.iter().zip(&vals) {
                    prop_assert!(o.abs() <= i.abs());
                    prop_assert!(*o == 0.0 || o == i);
                }
            }

            #[test]
            fn nested_supports(
                vals in proptest::collection::vec(-10.0f64..10.0, 8..48),
                p1 in 0.0f64..0.5,
                extra in 0.0f64..0.5,
            ) {
                let p2 = p1 + extra;
                let pyr = single_stack_pyramid(vals);
                let two_pass = threshold_fraction(
                    &threshold_fraction(&pyr, &ThresholdPlan::new(p1)).unwrap(),
                    &ThresholdPlan::new(p2),
                ).unwrap();
                let one_pass = threshold_fraction(&pyr, &ThresholdPlan::new(p2)).unwrap();
                prop_assert_eq!(two_pass, one_pass);
            }
        }
    }
}
