//! Implementations of the CLI subcommands.

use oodflow::checkpoint::{load_model, save_model};
use oodflow::complexity::{Codec, DeflateCodec};
use oodflow::config::ExperimentConfig;
use oodflow::data::{self, GenMeta, Nonlinearity, ThetaProfile};
use oodflow::huber::{
    fit_gaussian_sigma, fit_scale_newton, norm_const, CalibrationReport, ScaleKind,
};
use oodflow::manifold::train::{train as train_model, TrainOptions};
use oodflow::scoring::{
    self, auroc, classify, hard_threshold, variant_scores, ScoreFileMeta, ScoreOptions,
};
use oodflow::{Error, FlowModel, LatentSplit, ManifoldFlowModel, PenaltyKind, Result, SampleMode, Tensor};
use std::io::Write;
use std::path::Path;

fn require<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Config(format!("config key {key:?} is required for this command")))
}

pub fn train(config_path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::from_file(config_path)?;
    let dim = *require(&cfg.dim, "dims.D")?;
    let d = *require(&cfg.d, "dims.d")?;
    let data_path = require(&cfg.data_path, "data.path")?.clone();
    let ckpt_path = require(&cfg.checkpoint_path, "checkpoint.path")?.clone();

    let data = data::load_tensor(Path::new(&data_path))?;
    if data.shape().len() != 2 || data.cols() != dim {
        return Err(Error::Config(format!(
            "data {} has shape {:?}, config expects [n, {dim}]",
            data_path,
            data.shape()
        )));
    }

    let flow = FlowModel::dense(dim, cfg.flow_blocks, &cfg.flow_hidden, cfg.seed)?;
    let manifold_flow = if cfg.manifold_flow_enabled {
        Some(if d >= 2 {
            FlowModel::dense(d, cfg.manifold_flow_blocks, &cfg.flow_hidden, cfg.seed + 1)?
        } else {
            FlowModel::dense_affine(d, cfg.manifold_flow_blocks, cfg.seed + 1)?
        })
    } else {
        None
    };
    let mut model = ManifoldFlowModel::new(
        flow,
        LatentSplit::new(d, dim)?,
        manifold_flow,
        cfg.penalty_spec()?,
    )?;

    let options = TrainOptions {
        lr: cfg.lr,
        batch_size: cfg.batch,
        epochs: cfg.epochs,
        seed: cfg.seed,
    };
    let outcome = train_model(&mut model, &data, &options);

    // The checkpoint is written in both outcomes: on divergence the model
    // holds the last completed epoch's parameters.
    if let Some(parent) = Path::new(&ckpt_path).parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_model(Path::new(&ckpt_path), &model)?;

    let history = outcome?;
    let history_path = match &cfg.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Path::new(dir).join("history.csv")
        }
        None => Path::new(&ckpt_path).with_extension("history.csv"),
    };
    let mut out = String::from("# oodflow history v1\n");
    for line in cfg.echo().lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("epoch,mean_loss,mean_nll,mean_penalty\n");
    for e in &history.epochs {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.mean_loss, e.mean_nll, e.mean_penalty
        ));
    }
    std::fs::write(&history_path, out)?;
    println!(
        "trained {} epochs; checkpoint {} history {}",
        history.epochs.len(),
        ckpt_path,
        history_path.display()
    );
    Ok(())
}

pub fn fit_scale(checkpoint: &Path, data_path: &Path, out: &Path, c_const: f64) -> Result<()> {
    let model = load_model(checkpoint)?;
    let data = data::load_tensor(data_path)?;
    if data.shape().len() != 2 || data.cols() != model.dim() {
        return Err(Error::Config(format!(
            "data has shape {:?}, checkpoint dimension is {}",
            data.shape(),
            model.dim()
        )));
    }
    let errors = model.reconstruction_errors(&data)?;
    let report = match model.penalty.kind {
        PenaltyKind::Huber => {
            let fit = fit_scale_newton(&errors, model.penalty.delta)?;
            CalibrationReport::from_huber_fit(fit, errors.len(), c_const)
        }
        PenaltyKind::Mse => {
            let sigma = fit_gaussian_sigma(&errors)?;
            CalibrationReport::from_gaussian_fit(sigma, &errors, c_const)
        }
    };
    std::fs::write(out, report.render())?;
    println!("calibration written to {}", out.display());
    Ok(())
}

pub fn score(
    checkpoint: &Path,
    calibration: &Path,
    data_path: &Path,
    out: &Path,
    no_ic: bool,
    c_const: Option<f64>,
) -> Result<()> {
    let model = load_model(checkpoint)?;
    let report = CalibrationReport::parse(&std::fs::read_to_string(calibration)?)?;
    let data = data::load_tensor(data_path)?;
    if data.shape().len() != 2 || data.cols() != model.dim() {
        return Err(Error::Config(format!(
            "data has shape {:?}, checkpoint dimension is {}",
            data.shape(),
            model.dim()
        )));
    }
    let kind_matches = matches!(
        (&report.fit.kind, model.penalty.kind),
        (ScaleKind::Huber { .. }, PenaltyKind::Huber) | (ScaleKind::Gaussian { .. }, PenaltyKind::Mse)
    );
    if !kind_matches {
        return Err(Error::Config(
            "calibration report penalty kind does not match the checkpoint".into(),
        ));
    }

    let options = ScoreOptions {
        c_const: c_const.unwrap_or(report.c_const),
        use_ic: !no_ic,
    };
    let codec = DeflateCodec::default();
    let records = scoring::score_batch(
        &model,
        &data,
        &report.fit,
        &options,
        options.use_ic.then_some(&codec as &dyn Codec),
    )?;

    let (scale, log_norm_const) = match report.fit.kind {
        ScaleKind::Huber { k, delta_prime } => (
            format!("k={k}"),
            Some(-norm_const(delta_prime, k)?.ln()),
        ),
        ScaleKind::Gaussian { sigma } => (format!("sigma={sigma}"), None),
    };
    let meta = ScoreFileMeta {
        dim: model.dim(),
        penalty: match model.penalty.kind {
            PenaltyKind::Huber => "huber".into(),
            PenaltyKind::Mse => "mse".into(),
        },
        delta: model.penalty.delta,
        lambda: oodflow::huber::lambda_coefficient(&report.fit, options.c_const),
        c_const: options.c_const,
        use_ic: options.use_ic,
        codec: options.use_ic.then(|| codec.id()),
        scale,
        log_norm_const,
        checkpoint: checkpoint.display().to_string(),
    };
    let mut buf = Vec::new();
    scoring::write_scores(&mut buf, &meta, &records)?;
    std::fs::write(out, buf)?;
    let invalid = records.iter().filter(|r| !r.valid).count();
    println!(
        "scored {} samples ({invalid} invalid) into {}",
        records.len(),
        out.display()
    );
    Ok(())
}

pub fn eval(id: &Path, oods: &[std::path::PathBuf], out: &Path) -> Result<()> {
    let (id_meta, id_records) = scoring::read_scores(id)?;
    let (id_variants, id_excluded) = variant_scores(&id_records, id_meta.dim);
    let id_primary: Vec<f64> = id_records
        .iter()
        .filter(|r| r.valid)
        .map(|r| r.score)
        .collect();
    if id_primary.is_empty() {
        return Err(Error::Eval("no valid ID scores".into()));
    }
    let threshold = hard_threshold(&id_primary)?;
    let id_fp = classify(&id_primary, threshold).iter().filter(|&&c| c).count();

    let mut text = String::from("# oodflow metrics v1\n");
    text.push_str(&format!("# id = {}\n", id.display()));
    text.push_str(&format!("excluded_invalid_id = {id_excluded}\n"));
    text.push_str(&format!("threshold = {threshold}\n"));
    text.push_str(&format!("id_fp = {id_fp}\n"));
    text.push_str(&format!("id_tn = {}\n", id_primary.len() - id_fp));

    for ood_path in oods {
        let (ood_meta, ood_records) = scoring::read_scores(ood_path)?;
        if ood_meta.dim != id_meta.dim
            || ood_meta.penalty != id_meta.penalty
            || ood_meta.use_ic != id_meta.use_ic
        {
            return Err(Error::Config(format!(
                "score file {} header does not match the ID file (dim/penalty/use_ic)",
                ood_path.display()
            )));
        }
        let (ood_variants, ood_excluded) = variant_scores(&ood_records, ood_meta.dim);
        let ood_primary: Vec<f64> = ood_records
            .iter()
            .filter(|r| r.valid)
            .map(|r| r.score)
            .collect();
        if ood_primary.is_empty() {
            return Err(Error::Eval(format!(
                "no valid OOD scores in {}",
                ood_path.display()
            )));
        }
        text.push_str(&format!("[{}]\n", ood_path.display()));
        text.push_str(&format!("auroc={}\n", auroc(&id_primary, &ood_primary)?));
        text.push_str(&format!(
            "auroc_nll={}\n",
            auroc(&id_variants.nll, &ood_variants.nll)?
        ));
        text.push_str(&format!(
            "auroc_penalty={}\n",
            auroc(&id_variants.penalty, &ood_variants.penalty)?
        ));
        text.push_str(&format!(
            "auroc_combined={}\n",
            auroc(&id_variants.combined, &ood_variants.combined)?
        ));
        if let (Some(idc), Some(oodc)) = (&id_variants.combined_ic, &ood_variants.combined_ic) {
            text.push_str(&format!("auroc_combined_ic={}\n", auroc(idc, oodc)?));
        }
        text.push_str(&format!("excluded_invalid={ood_excluded}\n"));
        let decisions = classify(&ood_primary, threshold);
        let tp = decisions.iter().filter(|&&c| c).count();
        text.push_str(&format!("tp={tp}\n"));
        text.push_str(&format!("fn={}\n", ood_primary.len() - tp));
    }
    std::fs::write(out, &text)?;
    print!("{text}");
    Ok(())
}

pub fn grid(
    checkpoint: &Path,
    bounds: &str,
    step: f64,
    out: &Path,
    calibration: Option<&Path>,
) -> Result<()> {
    let model = load_model(checkpoint)?;
    if model.dim() != 2 {
        return Err(Error::Config(format!(
            "grid export needs a D=2 checkpoint, this model has D={}",
            model.dim()
        )));
    }
    let (lo, hi) = bounds
        .split_once(',')
        .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)))
        .ok_or_else(|| Error::Config(format!("bounds must be lo,hi — got {bounds:?}")))?;
    if hi <= lo || step <= 0.0 {
        return Err(Error::Config("grid needs hi > lo and step > 0".into()));
    }
    let lambda = match calibration {
        Some(path) => CalibrationReport::parse(&std::fs::read_to_string(path)?)?.lambda(),
        None => model.penalty.lambda_train,
    };
    let n = ((hi - lo) / step).round() as usize + 1;

    let file = std::fs::File::create(out)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "# oodflow grid v1")?;
    writeln!(w, "# checkpoint = {}", checkpoint.display())?;
    writeln!(w, "# bounds = {lo},{hi}")?;
    writeln!(w, "# step = {step}")?;
    writeln!(w, "# lambda = {lambda}")?;
    writeln!(w, "x,y,nll,penalty,score")?;
    let chunk = 4096;
    let mut points = Vec::with_capacity(chunk * 2);
    let mut coords = Vec::with_capacity(chunk);
    let flush = |points: &mut Vec<f64>,
                     coords: &mut Vec<(f64, f64)>,
                     w: &mut std::io::BufWriter<std::fs::File>|
     -> Result<()> {
        if coords.is_empty() {
            return Ok(());
        }
        let t = Tensor::new(vec![coords.len(), 2], points.clone())?;
        match model.training_loss(&t) {
            Ok(parts) => {
                for ((x, y), p) in coords.iter().zip(&parts) {
                    let nll = p.nll();
                    writeln!(w, "{x},{y},{nll},{},{}", p.penalty, nll + lambda * p.penalty)?;
                }
            }
            Err(_) => {
                // Rare non-finite region: fall back to per-point evaluation.
                for (i, (x, y)) in coords.iter().enumerate() {
                    let row = Tensor::new(vec![1, 2], points[2 * i..2 * i + 2].to_vec())?;
                    match model.training_loss(&row) {
                        Ok(parts) => {
                            let nll = parts[0].nll();
                            writeln!(
                                w,
                                "{x},{y},{nll},{},{}",
                                parts[0].penalty,
                                nll + lambda * parts[0].penalty
                            )?;
                        }
                        Err(_) => writeln!(w, "{x},{y},nan,nan,nan")?,
                    }
                }
            }
        }
        points.clear();
        coords.clear();
        Ok(())
    };
    for i in 0..n {
        for j in 0..n {
            let x = lo + i as f64 * step;
            let y = lo + j as f64 * step;
            points.push(x);
            points.push(y);
            coords.push((x, y));
            if coords.len() == chunk {
                flush(&mut points, &mut coords, &mut w)?;
            }
        }
    }
    flush(&mut points, &mut coords, &mut w)?;
    w.flush()?;
    println!("grid with {} rows written to {}", n * n, out.display());
    Ok(())
}

pub fn sample(checkpoint: &Path, n: usize, mode: &str, seed: u64, out: &Path) -> Result<()> {
    let model = load_model(checkpoint)?;
    let sample_mode = match mode {
        "full" => SampleMode::Full,
        "manifold" => SampleMode::Manifold(model.split.d()),
        other => {
            return Err(Error::Config(format!(
                "sample mode must be full or manifold, got {other:?}"
            )))
        }
    };
    let samples = model.sample(n, sample_mode, seed)?;
    data::save_tensor(out, &samples)?;
    data::write_sidecar(
        out,
        &GenMeta::Sample {
            checkpoint: checkpoint.display().to_string(),
            mode: mode.to_string(),
            n,
            seed,
        },
    )?;
    println!("{n} {mode} samples written to {}", out.display());
    Ok(())
}

pub fn gen_semicircle(n: usize, noise: f64, profile: &str, seed: u64, out: &Path) -> Result<()> {
    let ds = data::gen_semicircle(n, noise, ThetaProfile::parse(profile)?, seed)?;
    data::save_tensor(out, &ds.tensor)?;
    data::write_sidecar(out, &ds.meta)?;
    println!("{n} semicircle samples written to {}", out.display());
    Ok(())
}

pub fn gen_embedded(
    n: usize,
    d: usize,
    dim: usize,
    nonlinearity: &str,
    noise: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let ds = data::gen_embedded_manifold(n, d, dim, Nonlinearity::parse(nonlinearity)?, noise, seed)?;
    data::save_tensor(out, &ds.tensor)?;
    data::write_sidecar(out, &ds.meta)?;
    println!("{n} embedded-manifold samples written to {}", out.display());
    Ok(())
}

pub fn gen_idx(input: &Path, out: &Path) -> Result<()> {
    let ds = data::load_idx(input)?;
    data::save_tensor(out, &ds.tensor)?;
    data::write_sidecar(out, &ds.meta)?;
    println!(
        "{} samples of width {} written to {}",
        ds.n(),
        ds.dim(),
        out.display()
    );
    Ok(())
}
