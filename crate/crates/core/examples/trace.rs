// Desk-scale rehearsal of the acceptance criteria (scratch tool).
use std::path::Path;
use std::time::Instant;
use tfsynth_core::config::{MuSetting, TrainConfig};
use tfsynth_core::image::Image;
use tfsynth_core::io;
use tfsynth_core::metrics;
use tfsynth_core::ndtensor::BnMode;
use tfsynth_core::phantoms;
use tfsynth_core::solver::{self, ForwardOperator, MaskOp, SolverConfig};
use tfsynth_core::sparse_approx::{self, ThresholdScope};
use tfsynth_core::tfunet::{self, autoencode, decode, encode, zero_bypass, NetworkParams};
use tfsynth_core::training::train;

fn desk_cfg(bypass: bool) -> TrainConfig {
    let mut cfg = TrainConfig::reference(bypass);
    cfg.image_size = 64;
    cfg.epochs = 15;
    cfg.learning_rate = 1e-2;
    cfg.mu = MuSetting::Auto;
    cfg.seed = 2024;
    cfg
}

fn get_model(bypass: bool, train_set: &[Image], val_set: &[Image]) -> NetworkParams {
    let tag = if bypass { "bypass" } else { "nobypass" };
    let dir = Path::new("/tmp/desk").join(tag);
    if let Ok(p) = io::load_weights(&dir) {
        eprintln!("loaded cached {tag}");
        return p;
    }
    let t = Instant::now();
    let out = train(&desk_cfg(bypass), train_set, val_set, None, None, &mut |m| {
        eprintln!("  [{tag}] epoch {:2} val_mse {:.5}", m.epoch, m.val_mse);
    })
    .unwrap();
    eprintln!("trained {tag} in {:.0?}", t.elapsed());
    io::save_weights(&dir, &out.params).unwrap();
    out.params
}

fn mean_psnr(params: &NetworkParams, val: &[Image]) -> f64 {
    let mut sum = 0.0;
    for img in val {
        let (out, _) = autoencode(params, &img.to_tensor(), BnMode::Eval).unwrap();
        sum += metrics::psnr(img, &Image::from_tensor(&out, 0).unwrap().clamped01(), 1.0).unwrap();
    }
    sum / val.len() as f64
}

fn main() {
    let train_set = phantoms::generate_dataset(200, 64, 1).unwrap();
    let val_set = phantoms::generate_dataset(50, 64, 2).unwrap();
    let bypass = get_model(true, &train_set, &val_set);
    let nobypass = get_model(false, &train_set, &val_set);

    // Criterion 4.
    let (p_by, p_nb) = (mean_psnr(&bypass, &val_set), mean_psnr(&nobypass, &val_set));
    println!("C4: PSNR bypass {p_by:.2} dB, no-bypass {p_nb:.2} dB (need >= 28)");

    // Criterion 5.
    let grid = metrics::default_p_grid();
    let subset = &val_set[..20];
    let t = Instant::now();
    let (rows_a, rows_b) =
        sparse_approx::run_experiment(&bypass, &nobypass, subset, &grid, ThresholdScope::default()).unwrap();
    for (a, b) in rows_a.iter().zip(&rows_b) {
        println!(
            "C5 p={:.2}: bypass ssim_r {:.4} id_r {:.4} | nobypass ssim_r {:.4} id_r {:.4}",
            a.p, a.ssim_ratio, a.id_ratio, b.ssim_ratio, b.id_ratio
        );
    }
    println!("C5 experiment took {:.0?}", t.elapsed());

    // Criterion 6.
    let mut drop_sum = 0.0;
    for img in &val_set[..20] {
        let pyr = encode(&bypass, &img.to_tensor(), BnMode::Eval).unwrap();
        let full = Image::from_tensor(&decode(&bypass, &pyr, BnMode::Eval).unwrap(), 0).unwrap();
        let zb = Image::from_tensor(&decode(&bypass, &zero_bypass(&pyr).unwrap(), BnMode::Eval).unwrap(), 0).unwrap();
        let s_full = metrics::ssim(img, &full.clamped01()).unwrap();
        let s_zb = metrics::ssim(img, &zb.clamped01()).unwrap();
        drop_sum += s_full - s_zb;
    }
    println!("C6: mean SSIM drop after zeroing bypass = {:.4} (need >= 0.1)", drop_sum / 20.0);

    // Criterion 7.
    let t = Instant::now();
    let mut wins = 0;
    for (i, img) in val_set[..20].iter().enumerate() {
        let op = MaskOp::random(64, 64, 0.5, 1000 + i as u64).unwrap();
        let y = op.apply(img);
        let mut cfg = SolverConfig::new(1e-4);
        cfg.max_iters = 150;
        cfg.tol = 1e-5;
        let sol = solver::solve(&nobypass, &op, &y, &cfg, &mut |_| {}).unwrap();
        let base = op.adjoint(&y);
        let psnr_sol = metrics::psnr(img, &sol.image.clamped01(), 1.0).unwrap();
        let psnr_base = metrics::psnr(img, &base.clamped01(), 1.0).unwrap();
        let mono = sol.history.windows(2).all(|w| w[1].total <= w[0].total + 1e-12);
        if psnr_sol > psnr_base {
            wins += 1;
        }
        println!(
            "C7 phantom {i:2}: solver {psnr_sol:.2} dB vs baseline {psnr_base:.2} dB, iters {}, monotone {mono}",
            sol.history.len()
        );
    }
    println!("C7: wins {wins}/20 (need >= 18), total {:.0?}", t.elapsed());

    // Criterion 8.
    let xi0 = encode(&nobypass, &val_set[0].to_tensor(), BnMode::Eval).unwrap();
    let y_img = Image::from_tensor(&decode(&nobypass, &xi0, BnMode::Eval).unwrap(), 0).unwrap();
    let op = solver::IdentityOp { height: 64, width: 64 };
    let y = op.apply(&y_img);
    let y_norm_sq: f64 = y.iter().map(|v| v * v).sum();
    let mut cfg = SolverConfig::new(1e-6);
    cfg.max_iters = 300;
    cfg.tol = 1e-9;
    let t = Instant::now();
    let sol = solver::solve(&nobypass, &op, &y, &cfg, &mut |_| {}).unwrap();
    println!(
        "C8: data term {:.3e} vs bound {:.3e} ({} iters, {:.0?})",
        sol.objective.data_term,
        1e-4 * y_norm_sq,
        sol.history.len(),
        t.elapsed()
    );

    // Criterion 2 seed scan: full-loss gradient vs central differences.
    for seed in [2024u64] {
        let t = Instant::now();
        let arch = tfunet::ArchConfig::reference(true);
        let params = tfunet::init_params(&arch, seed).unwrap();
        let img = phantoms::generate_dataset(1, 16, seed + 500).unwrap().remove(0);
        let batch = img.to_tensor();
        let w = [0.5, 0.25, 0.125];
        let mu = 1e-4;
        let eval = tfsynth_core::training::loss(&params, &batch, mu, &w).unwrap();
        let mut names = Vec::new();
        params.visit_trainable(|n, _, t| names.push((n.to_string(), t.clone())));
        let mut worst: (String, f64) = (String::new(), 0.0);
        for (gi, (name, tensor)) in names.iter().enumerate() {
            let base = tensor.to_vec();
            let fd = tfsynth_core::gradcheck::central_differences(
                &|vals: &[f64]| {
                    let mut p2 = params.clone();
                    let mut idx = 0;
                    p2.visit_trainable_mut(|n, t| {
                        if n == name.as_str() {
                            let _ = idx;
                            *t = tfsynth_core::ndtensor::Tensor::new(t.shape().to_vec(), vals.to_vec()).unwrap();
                        }
                        idx += 1;
                    });
                    let (total, _, _) =
                        tfsynth_core::training::loss_value(&p2, &batch, mu, &w, BnMode::Train).unwrap();
                    total
                },
                &base,
                1e-4,
            );
            let ad = eval.grads[gi].data();
            let diff: f64 = ad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let fd_norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ad_norm: f64 = ad.iter().map(|v| v * v).sum::<f64>().sqrt();
            if fd_norm < 1e-6 {
                println!("  C2 {name}: degenerate |fd| {fd_norm:.2e} |ad| {ad_norm:.2e}");
            } else {
                let rel = diff / fd_norm;
                println!("  C2 {name}: rel {rel:.3e} (|fd| {fd_norm:.3e})");
                if rel > worst.1 {
                    worst = (name.clone(), rel);
                }
            }
        }
        println!("C2 seed {seed}: worst group {} rel {:.3e} ({:.0?})", worst.0, worst.1, t.elapsed());
    }
}
