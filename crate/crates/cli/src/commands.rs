use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use attnae::checkpoint::Checkpoint;
use attnae::data::{ingest_csv, scale, split_train_val, Mask, ScalerBounds, SignalFrame, CHANNELS};
use attnae::diagnostics::{
    emit_report, localization_accuracy, read_events_csv, BaselineStats, ReportSummary,
};
use attnae::pipeline::{calibrate_raw, detect_raw, train_checkpoint, TRAIN_FRACTION};
use attnae::scenario::{
    gen_normal, inject_multi, InjectionSpec, NoiseScales, OperationProfile, ProfileSource,
    Reference,
};
use attnae::train::tune;
use attnae::{Error, Result};
use log::info;

use crate::config::{read_json, RunConfig};
use crate::{Cli, Command};

fn need(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone().or_else(|| fallback.clone()).ok_or_else(|| {
        Error::Usage(format!(
            "--{name} is required (or set it in the config file)"
        ))
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

fn read_frame(path: &Path) -> Result<SignalFrame> {
    let ing = ingest_csv(path, &CHANNELS)?;
    for g in &ing.filled {
        info!(
            "interpolated {} missing samples of `{}` at row {}",
            g.len, g.channel, g.row
        );
    }
    Ok(ing.frame)
}

fn resolve_profile(source: &ProfileSource, seed: Option<u64>) -> Result<OperationProfile> {
    match source {
        ProfileSource::Preset(name) => OperationProfile::preset(name, seed.unwrap_or(0)),
        ProfileSource::Custom(p) => {
            let mut p = p.clone();
            if let Some(s) = seed {
                p.seed = s;
            }
            p.validate()?;
            Ok(p)
        }
    }
}

pub fn run(cli: &Cli, mut cfg: RunConfig) -> Result<()> {
    let seed = cfg.resolve_seed(cli.seed)?;
    cfg.seed = seed;
    match &cli.command {
        Command::Generate(a) => generate(a, &mut cfg, seed)?,
        Command::Inject(a) => inject(a, &mut cfg, seed)?,
        Command::Train(a) => train(a, &mut cfg, seed)?,
        Command::Tune(a) => tune_cmd(a, &mut cfg, seed)?,
        Command::Calibrate(a) => calibrate(a, &mut cfg)?,
        Command::Detect(a) => detect(a, &mut cfg)?,
        Command::Eval(a) => eval(a, &mut cfg)?,
        Command::Report(a) => report(a, &mut cfg)?,
    }
    if let Some(path) = &cli.save_config {
        write_file(path, &to_json(&cfg))?;
    }
    Ok(())
}

fn generate(a: &crate::GenerateArgs, cfg: &mut RunConfig, seed: Option<u64>) -> Result<()> {
    if let Some(p) = &a.profile {
        let path = Path::new(p);
        cfg.profile = if p.ends_with(".json") || path.is_file() {
            ProfileSource::Custom(read_json(path, "profile JSON file not found")?)
        } else {
            ProfileSource::Preset(p.clone())
        };
    }
    let profile = resolve_profile(&cfg.profile, seed)?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .unwrap_or_else(|| "data".into());
    cfg.paths.out = Some(out.clone());
    let (frame, bounds) = gen_normal(&profile)?;
    create_dir(&out)?;
    frame.write_csv(&out.join("frame.csv"))?;
    bounds.save(&out.join("bounds.json"))?;
    let mask = frame
        .mask
        .clone()
        .unwrap_or_else(|| Mask::new(frame.len(), frame.channels.len()));
    mask.write_csv(&out.join("mask.csv"), &frame.channels)?;
    println!("wrote {} seconds to {}", frame.len(), out.display());
    Ok(())
}

fn inject(a: &crate::InjectArgs, cfg: &mut RunConfig, seed: Option<u64>) -> Result<()> {
    let data = need(&a.data, &cfg.paths.data, "data")?;
    let mut frame = read_frame(&data)?;
    if let Some(m) = a.mask.clone().or_else(|| cfg.paths.mask.clone()) {
        let mask = Mask::read_csv(&m, &frame.channels)?;
        if mask.rows() != frame.len() {
            return Err(Error::Usage(format!(
                "mask has {} rows but the frame has {}",
                mask.rows(),
                frame.len()
            )));
        }
        frame.mask = Some(mask);
    }
    let specs: Vec<InjectionSpec> = if let Some(name) = &a.scenario {
        let noise = match &cfg.profile {
            ProfileSource::Custom(_) => resolve_profile(&cfg.profile, seed)?.noise,
            ProfileSource::Preset(_) => NoiseScales::default(),
        };
        Reference::parse(name)?.specs(&noise, frame.len())
    } else if let Some(path) = &a.spec {
        read_json(path, "injection spec file not found")?
    } else if !cfg.injections.is_empty() {
        cfg.injections.clone()
    } else {
        return Err(Error::Usage(
            "give --scenario, --spec, or injections in the config file".into(),
        ));
    };
    cfg.injections = specs.clone();
    let out = a
        .out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .unwrap_or_else(|| "injected".into());
    cfg.paths.out = Some(out.clone());
    let inj = inject_multi(&frame, &specs)?;
    create_dir(&out)?;
    inj.frame.write_csv(&out.join("frame.csv"))?;
    inj.mask
        .write_csv(&out.join("mask.csv"), &inj.frame.channels)?;
    write_file(&out.join("injections.json"), &to_json(&specs))?;
    println!(
        "applied {} injections; {} anomalous cells",
        specs.len(),
        inj.mask.count()
    );
    Ok(())
}

fn train(a: &crate::TrainArgs, cfg: &mut RunConfig, seed: Option<u64>) -> Result<()> {
    let h = &a.hyper;
    let hp = &mut cfg.hyperparams;
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = h.$f { hp.$f = v; } )* };
    }
    set!(
        epochs,
        learning_rate,
        batch_size,
        window,
        hidden1,
        hidden2,
        bottleneck,
        dropout
    );
    if let Some(p) = h.patience {
        hp.patience = (p > 0).then_some(p);
    }
    if let Some(s) = seed {
        hp.seed = s;
    }
    let data = need(&a.data, &cfg.paths.data, "data")?;
    let bounds_path = need(&a.bounds, &cfg.paths.bounds, "bounds")?;
    let model = a
        .model
        .clone()
        .or_else(|| cfg.paths.model.clone())
        .unwrap_or_else(|| "model.json".into());
    cfg.paths.data = Some(data.clone());
    cfg.paths.bounds = Some(bounds_path.clone());
    cfg.paths.model = Some(model.clone());
    let frame = read_frame(&data)?;
    let bounds = ScalerBounds::load(&bounds_path)?;
    let (ck, report) = train_checkpoint(&frame, &bounds, &cfg.hyperparams)?;
    ck.save(&model)?;
    let loss = a
        .loss_csv
        .clone()
        .unwrap_or_else(|| model.with_extension("loss.csv"));
    write_file(&loss, &report.to_csv())?;
    println!(
        "trained {} epochs (best {}), val MSE {:.3e} -> {:.3e}; checkpoint {}",
        report.val_loss.len(),
        report.best_epoch + 1,
        report.initial_val_loss,
        report.val_loss[report.best_epoch],
        model.display()
    );
    Ok(())
}

fn tune_cmd(a: &crate::TuneArgs, cfg: &mut RunConfig, seed: Option<u64>) -> Result<()> {
    if let Some(t) = a.trials {
        cfg.tune.trials = t;
    }
    if let Some(e) = a.epochs {
        cfg.tune.epochs = e;
    }
    let data = need(&a.data, &cfg.paths.data, "data")?;
    let bounds_path = need(&a.bounds, &cfg.paths.bounds, "bounds")?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .unwrap_or_else(|| "tune".into());
    let frame = read_frame(&data)?;
    let bounds = ScalerBounds::load(&bounds_path)?;
    let guard = cfg
        .tune
        .space
        .window
        .iter()
        .copied()
        .max()
        .unwrap_or(cfg.hyperparams.window);
    let (tr, va) = split_train_val(&scale(&frame, &bounds)?, TRAIN_FRACTION, guard)?;
    let seed = seed.unwrap_or(cfg.hyperparams.seed);
    let outcome = tune(
        &cfg.tune.space,
        &cfg.hyperparams,
        cfg.tune.trials,
        cfg.tune.epochs,
        seed,
        &tr.values,
        &va.values,
    )?;
    let mut best = outcome.best.clone();
    best.epochs = cfg.hyperparams.epochs;
    best.patience = cfg.hyperparams.patience;
    best.seed = cfg.hyperparams.seed;
    create_dir(&out)?;
    write_file(&out.join("best_hyperparams.json"), &to_json(&best))?;
    write_file(&out.join("trials.csv"), &outcome.to_csv())?;
    let win = &outcome.trials[outcome.best_trial];
    println!(
        "best of {} trials: #{} with final val MSE {:.3e}",
        outcome.trials.len(),
        win.trial,
        win.final_val_loss
    );
    Ok(())
}

fn calibrate(a: &crate::CalibrateArgs, cfg: &mut RunConfig) -> Result<()> {
    if let Some(m) = a.min_windows {
        cfg.min_windows = m;
    }
    let model = need(&a.model, &cfg.paths.model, "model")?;
    let data = need(&a.data, &cfg.paths.data, "data")?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.paths.baseline.clone())
        .unwrap_or_else(|| "baseline.json".into());
    cfg.paths.baseline = Some(out.clone());
    let ck = Checkpoint::load(&model)?;
    let baseline = calibrate_raw(&ck, &read_frame(&data)?, cfg.min_windows)?;
    baseline.save(&out)?;
    println!(
        "baseline from {} windows written to {}",
        baseline.windows,
        out.display()
    );
    Ok(())
}

fn detect(a: &crate::DetectArgs, cfg: &mut RunConfig) -> Result<()> {
    let p = &a.policy;
    let pol = &mut cfg.policy;
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = p.$f { pol.$f = v; } )* };
    }
    set!(k_feature, k_temporal, hysteresis, min_length, vote);
    if let Some(s) = a.heatmap_stride {
        cfg.report.heatmap_stride = s;
    }
    let model = need(&a.model, &cfg.paths.model, "model")?;
    let baseline_path = need(&a.baseline, &cfg.paths.baseline, "baseline")?;
    let data = need(&a.data, &cfg.paths.data, "data")?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.paths.report_dir.clone())
        .unwrap_or_else(|| "report".into());
    cfg.paths.report_dir = Some(out.clone());
    let ck = Checkpoint::load(&model)?;
    let baseline = BaselineStats::load(&baseline_path)?;
    let (score, events) = detect_raw(&ck, &baseline, &read_frame(&data)?, &cfg.policy)?;
    emit_report(&out, &score, &events, &baseline, &cfg.policy, &cfg.report)?;
    println!("{} events; report in {}", events.len(), out.display());
    for e in &events {
        println!(
            "  {:<15} [{:>5}, {:>5})  severity {:.2}",
            e.channel, e.onset, e.offset, e.severity
        );
    }
    Ok(())
}

fn read_summary(dir: &Path) -> Result<ReportSummary> {
    read_json(
        &dir.join("summary.json"),
        "run `attnae detect` to produce a report",
    )
}

fn eval(a: &crate::EvalArgs, cfg: &mut RunConfig) -> Result<()> {
    if a.interval.is_some() {
        cfg.interval = a.interval;
    }
    let dir = need(&a.report, &cfg.paths.report_dir, "report")?;
    let mask_path = need(&a.mask, &cfg.paths.mask, "mask")?;
    let summary = read_summary(&dir)?;
    let events = read_events_csv(&dir.join("events.csv"))?;
    let channels: Vec<String> = summary.channels.iter().map(|c| c.channel.clone()).collect();
    let mask = Mask::read_csv(&mask_path, &channels)?;
    if mask.rows() != summary.frame_len {
        return Err(Error::Usage(format!(
            "mask has {} rows but the report covers {} seconds",
            mask.rows(),
            summary.frame_len
        )));
    }
    let acc = localization_accuracy(&events, &mask, &channels, cfg.interval)?;
    let json = to_json(&acc);
    match &a.out {
        Some(path) => {
            write_file(path, &json)?;
            println!(
                "overall accuracy {:.4} on [{}, {})",
                acc.overall, acc.interval.0, acc.interval.1
            );
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn report(a: &crate::ReportArgs, cfg: &mut RunConfig) -> Result<()> {
    let dir = need(&a.report, &cfg.paths.report_dir, "report")?;
    let s = read_summary(&dir)?;
    let mut md = String::new();
    let _ = writeln!(md, "# Detection report\n");
    let _ = writeln!(
        md,
        "{} seconds, {} windows of {} s, policy k_feature={} k_temporal={} hysteresis={} min_length={}.\n",
        s.frame_len, s.windows, s.window, s.policy.k_feature, s.policy.k_temporal, s.policy.hysteresis, s.policy.min_length
    );
    let _ = writeln!(md, "## Channels\n");
    let _ = writeln!(md, "| channel | mean feature weight | baseline | mean temporal weight | baseline | flagged s |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for (i, c) in s.channels.iter().enumerate() {
        let _ = writeln!(
            md,
            "| {} | {:.3} | {:.3} ± {:.3} | {:.4} | {:.4} ± {:.4} | {} |",
            c.channel,
            c.mean_feature_weight,
            s.baseline.feature_mean[i],
            s.baseline.feature_std[i],
            c.mean_temporal_weight,
            s.baseline.temporal_mean[i],
            s.baseline.temporal_std[i],
            c.flagged_seconds
        );
    }
    let _ = writeln!(md, "\n## Events\n");
    if s.events.is_empty() {
        let _ = writeln!(md, "None.");
    } else {
        let _ = writeln!(md, "| channel | onset | offset | duration | severity |");
        let _ = writeln!(md, "|---|---|---|---|---|");
        for e in &s.events {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {:.2} |",
                e.channel, e.onset, e.offset, e.duration, e.severity
            );
        }
    }
    if !s.heatmaps.is_empty() {
        let _ = writeln!(md, "\n## Heatmaps\n");
        for i in &s.heatmaps {
            let _ = writeln!(md, "![window {i}](heatmaps/window_{i}.svg)");
        }
    }
    let path = dir.join("report.md");
    write_file(&path, &md)?;
    print!("{md}");
    Ok(())
}
