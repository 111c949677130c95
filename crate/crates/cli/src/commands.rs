//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use tfsynth_core::config::{parse_kv, parse_kv_file, write_snapshot, TrainConfig};
use tfsynth_core::error::{Error, Result};
use tfsynth_core::metrics::{self, RatioRow};
use tfsynth_core::ndtensor::BnMode;
use tfsynth_core::sparse_approx::{self, ThresholdScope};
use tfsynth_core::solver::{self, InitStrategy, SolverConfig};
use tfsynth_core::training;
use tfsynth_core::{haar, io, phantoms, tfunet};

use crate::{
    EncodeArgs, EvaluateArgs, ExperimentArgs, FrameCheckArgs, GenerateArgs, SolveArgs, ThresholdArgs,
    TrainArgs,
};

const SNAPSHOT_FILE: &str = "resolved-config.txt";
pub const RATIO_CSV_HEADER: &str = "p,id_ratio,ssim_ratio,psnr_ratio,n_images";
pub const HISTORY_CSV_HEADER: &str = "iter,data_term,penalty,total,step";

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn ratio_csv(rows: &[RatioRow]) -> String {
    let mut out = String::from(RATIO_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{}\n",
            r.p, r.id_ratio, r.ssim_ratio, r.psnr_ratio, r.n_images
        ));
    }
    out
}

fn parse_p_grid(spec: &Option<String>) -> Result<Vec<f64>> {
    let Some(s) = spec else {
        return Ok(metrics::default_p_grid());
    };
    let parse = |v: &str| -> Result<f64> {
        v.trim()
            .parse()
            .map_err(|_| Error::ConfigValue { key: "p-grid".into(), detail: format!("cannot parse `{v}`") })
    };
    let grid: Vec<f64> = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::ConfigValue { key: "p-grid".into(), detail: "expected start:end:step".into() });
        }
        let (start, end, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        if step <= 0.0 || end < start {
            return Err(Error::ConfigValue { key: "p-grid".into(), detail: "need step > 0 and end >= start".into() });
        }
        let n = ((end - start) / step + 0.5).floor() as usize + 1;
        (0..n).map(|i| start + step * i as f64).collect()
    } else {
        s.split(',').map(parse).collect::<Result<Vec<f64>>>()?
    };
    if grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::ConfigValue { key: "p-grid".into(), detail: "levels must lie in [0, 1]".into() });
    }
    Ok(grid)
}

fn scope_from_flags(skip_coarse: bool, skip_bypass: bool) -> ThresholdScope {
    ThresholdScope { high_pass: true, coarse: !skip_coarse, bypass: !skip_bypass }
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    ensure_out(&a.out)?;
    let images = phantoms::generate_dataset(a.count, a.size, a.seed)?;
    for (i, img) in images.iter().enumerate() {
        io::write_pgm(&a.out.join(format!("img_{i:05}.pgm")), img)?;
        io::write_raw_f64(&a.out.join(format!("img_{i:05}.f64")), img)?;
    }
    let mut kv = BTreeMap::new();
    kv.insert("subcommand".into(), "generate".into());
    kv.insert("count".into(), a.count.to_string());
    kv.insert("size".into(), a.size.to_string());
    kv.insert("seed".into(), a.seed.to_string());
    write_snapshot(&a.out.join(SNAPSHOT_FILE), &kv)?;
    println!(
        "{}",
        serde_json::json!({ "generated": a.count, "size": a.size, "out": a.out.display().to_string() })
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::reference(true);
    cfg.apply_kv(&parse_kv_file(&a.config)?)?;
    let overrides = parse_kv(&a.set.join("\n"))?;
    cfg.apply_kv(&overrides)?;
    cfg.validate()?;

    // Datasets must load before any compute happens.
    let train_dir = cfg.train_dir.clone().ok_or(Error::ConfigValue {
        key: "train_dir".into(),
        detail: "required for training".into(),
    })?;
    let val_dir = cfg.val_dir.clone().ok_or(Error::ConfigValue {
        key: "val_dir".into(),
        detail: "required for training".into(),
    })?;
    let train_set = io::load_dataset_dir(&train_dir)?;
    let val_set = io::load_dataset_dir(&val_dir)?;

    ensure_out(&a.out)?;
    let mut kv = cfg.snapshot();
    kv.insert("subcommand".into(), "train".into());
    kv.insert("n_train".into(), train_set.len().to_string());
    kv.insert("n_val".into(), val_set.len().to_string());
    kv.insert("mu_resolved".into(), format!("{:e}", cfg.mu.resolve(train_set.len())));
    write_snapshot(&a.out.join(SNAPSHOT_FILE), &kv)?;

    let csv_path = a.out.join("metrics.csv");
    let mut csv = fs::File::create(&csv_path).map_err(|e| Error::io(format!("writing {}", csv_path.display()), e))?;
    writeln!(csv, "{}", training::METRICS_CSV_HEADER).map_err(|e| Error::io("metrics.csv", e))?;

    let checkpoints = a.out.join("checkpoints");
    let outcome = training::train(&cfg, &train_set, &val_set, None, Some(&checkpoints), &mut |m| {
        let _ = writeln!(csv, "{}", training::metrics_csv_row(m));
        let _ = csv.flush();
        eprintln!(
            "epoch {:3}: train_loss {:.6e} val_loss {:.6e} val_mse {:.6e} mean_l1 {:.6e}",
            m.epoch, m.train_loss, m.val_loss, m.val_mse, m.mean_l1
        );
    })?;

    let last = outcome.metrics.last().expect("at least one epoch");
    println!(
        "{}",
        serde_json::json!({
            "epochs": outcome.metrics.len(),
            "final_val_loss": last.val_loss,
            "final_val_mse": last.val_mse,
            "weights": checkpoints.join("final").display().to_string(),
        })
    );
    Ok(())
}

pub fn encode(a: EncodeArgs) -> Result<()> {
    let params = io::load_weights(&a.weights)?;
    let img = io::load_image(&a.input)?;
    let pyr = tfunet::encode(&params, &img.to_tensor(), BnMode::Eval)?;
    ensure_out(&a.out)?;
    io::save_pyramid(&a.out, &pyr)?;
    let mut kv = BTreeMap::new();
    kv.insert("subcommand".into(), "encode".into());
    kv.insert("weights".into(), a.weights.display().to_string());
    kv.insert("input".into(), a.input.display().to_string());
    write_snapshot(&a.out.join(SNAPSHOT_FILE), &kv)?;
    println!(
        "{}",
        serde_json::json!({ "coefficients": pyr.numel(), "nonzero": pyr.count_nonzero() })
    );
    Ok(())
}

pub fn threshold(a: ThresholdArgs) -> Result<()> {
    let params = io::load_weights(&a.weights)?;
    let img = io::load_image(&a.input)?;
    let scope = scope_from_flags(a.skip_coarse, a.skip_bypass);
    let rec = sparse_approx::sparse_reconstruct(&params, &img, a.p, scope)?;
    ensure_out(&a.out)?;
    io::write_pgm(&a.out.join("full.pgm"), &rec.full.clamped01())?;
    io::write_raw_f64(&a.out.join("full.f64"), &rec.full)?;
    io::write_pgm(&a.out.join("thresholded.pgm"), &rec.thresholded.clamped01())?;
    io::write_raw_f64(&a.out.join("thresholded.f64"), &rec.thresholded)?;
    let csv = format!(
        "p,id_full,ssim_full,psnr_full,id_thresh,ssim_thresh,psnr_thresh\n{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
        a.p,
        rec.report_full.id,
        rec.report_full.ssim,
        rec.report_full.psnr,
        rec.report_thresholded.id,
        rec.report_thresholded.ssim,
        rec.report_thresholded.psnr,
    );
    write_text(&a.out.join("metrics.csv"), &csv)?;
    let mut kv = BTreeMap::new();
    kv.insert("subcommand".into(), "threshold".into());
    kv.insert("p".into(), a.p.to_string());
    kv.insert("weights".into(), a.weights.display().to_string());
    kv.insert("input".into(), a.input.display().to_string());
    kv.insert("skip_coarse".into(), a.skip_coarse.to_string());
    kv.insert("skip_bypass".into(), a.skip_bypass.to_string());
    write_snapshot(&a.out.join(SNAPSHOT_FILE), &kv)?;
    println!(
        "{}",
        serde_json::json!({
            "p": a.p,
            "ssim_full": rec.report_full.ssim,
            "ssim_thresholded": rec.report_thresholded.ssim,
        })
    );
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let params = io::load_weights(&a.weights)?;
    let images = io::load_dataset_dir(&a.val)?;
    let grid = parse_p_grid(&a.p_grid)?;
    let scope = scope_from_flags(a.skip_coarse, a.skip_bypass);
    let (refs, thrs) = sparse_approx::per_image_reports(&params, &images, &grid, scope)?;
    let rows = metrics::ratio_curve(&refs, &thrs, &grid)?;
    ensure_out(&a.out)?;
    write_text(&a.out.join("ratios.csv"), &ratio_csv(&rows))?;
    if a.per_image {
        let mut detail = String::from("image,kind,p,id,ssim,psnr\n");
        for (i, r) in refs.iter().enumerate() {
            detail.push_str(&format!("{i},reference,,{:e},{:e},{:e}\n", r.id, r.ssim, r.psnr));
            for (j, t) in thrs[i].iter().enumerate() {
                detail.push_str(&format!("{i},thresholded,{},{:e},{:e},{:e}\n", grid[j], t.id, t.ssim, t.psnr));
            }
        }
        write_text(&a.out.join("per_image.csv"), &detail)?;
    }
    let mut kv = BTreeMap::new();
    kv.insert("subcommand".into(), "evaluate".into());
    kv.insert("weights".into(), a.weights.display().to_string());
    kv.insert("val".into(), a.val.display().to_string());
    kv.insert("p_grid".into(), grid.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","));
    kv.insert("per_image".into(), a.per_image.to_string());
    kv.insert("skip_coarse".into(), a.skip_coarse.to_string());
    kv.insert("skip_bypass".into(), a.skip_bypass.to_string());
    write_snapshot(&a.out.join(SNAPSHOT_FILE), &kv)?;
    println!("{}", serde_json::json!({ "images": images.len(), "grid_points": grid.len() }));
    Ok(())
}

pub fn experiment(a: ExperimentArgs) -> Result<()> {
    let params_a = io::load_weights(&a.weights_a)?;
    let params_b = io::load_weights(&a.weights_b)?;
    let images = io::load_dataset_dir(&a.val)?;
    let grid = parse_p_grid(&a.p_grid)?;
    let (rows_a, rows_b) =
        sparse_approx::run_experiment(&params_a, &params_b, &images, &grid, ThresholdScope::default())?;
    ensure_out(&a.out)?;
    write_text(&a.out.join("ratios_a.csv"), &ratio_csv(&rows_a))?;
    write_text(&a.out.join("ratios_b.csv"), &ratio_csv(&rows_b))?;

    // Representative reconstructions of the first validation image.
    let sample_dir = a.out.join("images");
    ensure_out(&sample_dir)?;
    for (tag, params) in [("a", &params_a), ("b", &params_b)] {
        let rec = sparse_approx::sparse_reconstruct(params, &images[0], grid[grid.len() - 1], ThresholdScope::default())?;
        io::write_pgm(&sample_dir.join(format!("model_{tag}_full.pgm")), &rec.full.clamped01())?;
        io::write_pgm(
            &sample_dir.join(format!("model_{tag}_p{:.2}.pgm", grid[grid.len() - 1])),
            &rec.thresholded.clamped01(),
        )?;
    }

    let mut kv = BTreeMap::new();
    kv.insert("subcommand".into(), "experiment".into());
    kv.insert("weights_a".into(), a.weights_a.display().to_string());
    kv.insert("weights_b".into(), a.weights_b.display().to_string());
    kv.insert("val".into(), a.val.display().to_string());
    kv.insert("p_grid".into(), grid.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","));
    write_snapshot(&a.out.join(SNAPSHOT_FILE), &kv)?;
    println!(
        "{}",
        serde_json::json!({ "images": images.len(), "grid_points": grid.len() })
    );
    Ok(())
}

pub fn solve(a: SolveArgs) -> Result<()> {
    let params = io::load_weights(&a.weights)?;
    let setup = crate::opspec::build(&a.operator, &a.operator_args, &a.data)?;
    let mut cfg = SolverConfig::new(a.mu);
    cfg.max_iters = a.max_iters;
    cfg.tol = a.tol;
    cfg.accelerated = !a.no_accel;
    cfg.init = match a.init.as_str() {
        "encode-adjoint" => InitStrategy::EncodeAdjoint,
        "zero" => InitStrategy::Zero,
        other => {
            return Err(Error::ConfigValue { key: "init".into(), detail: format!("unknown strategy `{other}`") })
        }
    };

    ensure_out(&a.out)?;
    let mut kv = setup.resolved.clone();
    kv.insert("subcommand".into(), "solve".into());
    kv.insert("weights".into(), a.weights.display().to_string());
    kv.insert("mu".into(), format!("{:e}", a.mu));
    kv.insert("max_iters".into(), a.max_iters.to_string());
    kv.insert("tol".into(), format!("{:e}", a.tol));
    kv.insert("accelerated".into(), cfg.accelerated.to_string());
    kv.insert("init".into(), a.init.clone());
    write_snapshot(&a.out.join(SNAPSHOT_FILE), &kv)?;

    // History rows stream to disk, so a diverging run still leaves its state.
    let hist_path = a.out.join("history.csv");
    let mut hist =
        fs::File::create(&hist_path).map_err(|e| Error::io(format!("writing {}", hist_path.display()), e))?;
    writeln!(hist, "{HISTORY_CSV_HEADER}").map_err(|e| Error::io("history.csv", e))?;

    let baseline = setup.op.adjoint(&setup.y);
    io::write_pgm(&a.out.join("adjoint.pgm"), &baseline.clamped01())?;
    io::write_raw_f64(&a.out.join("adjoint.f64"), &baseline)?;

    let solution = solver::solve(&params, setup.op.as_ref(), &setup.y, &cfg, &mut |row| {
        let _ = writeln!(hist, "{},{:e},{:e},{:e},{:e}", row.iter, row.data_term, row.penalty, row.total, row.step);
        let _ = hist.flush();
    })?;

    io::write_pgm(&a.out.join("reconstruction.pgm"), &solution.image.clamped01())?;
    io::write_raw_f64(&a.out.join("reconstruction.f64"), &solution.image)?;
    let layout = tfunet::PyramidLayout::new(&params.arch, 1, solution.image.height, solution.image.width)?;
    io::save_pyramid(&a.out.join("coefficients"), &layout.unflatten(&solution.xi)?)?;

    println!(
        "{}",
        serde_json::json!({
            "converged": solution.converged,
            "iterations": solution.history.len(),
            "objective": solution.objective.total,
            "data_term": solution.objective.data_term,
            "penalty": solution.objective.penalty,
        })
    );
    Ok(())
}

pub fn frame_check(a: FrameCheckArgs) -> Result<()> {
    let report = haar::frame_check(a.trials, a.size, a.size, a.seed)?;
    println!(
        "{}",
        serde_json::to_string(&report)
            .map_err(|e| Error::Codec { format: "json", offset: 0, detail: e.to_string() })?
    );
    Ok(())
}
