use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use jdnet_core::data::{load_manifest, load_png, save_png, Dataset, Image, PairPattern, RainSynthConfig, Range};
use jdnet_core::gradcheck_suite::{registry, run_suite, CheckGroup};
use jdnet_core::metrics::Colorspace;
use jdnet_core::nn::{Ablation, AttentionNormalize, Stage};
use jdnet_core::train::{self, derain_image, evaluate, Checkpoint, Estimator, RunDir, TrainConfig, Trainer};
use jdnet_core::{OpKind, Tensor};

use crate::config::{absolute, parse_key, FileConfig};
use crate::error::{CliError, CliResult};
use crate::{DerainArgs, EvalArgs, GradcheckArgs, RainArgs, SynthArgs, TrainArgs};

enum DataSource {
    Root { path: PathBuf, pattern: PairPattern },
    Synth { count: usize, size: usize, rain: RainSynthConfig },
}

fn pattern(value: Option<&str>) -> CliResult<PairPattern> {
    value.map_or_else(|| Ok(PairPattern::default()), |p| parse_key("pair_pattern", p))
}

fn rain_config(flags: &RainArgs, file: &FileConfig, seed: u64) -> CliResult<RainSynthConfig> {
    let mut cfg = RainSynthConfig { seed, ..Default::default() };
    let pick = |flag: &Option<String>, file: &Option<String>| flag.clone().or_else(|| file.clone());
    if let Some(v) = pick(&flags.streaks, &file.streaks) {
        cfg.streak_count = parse_key::<Range<u32>>("streaks", &v)?;
    }
    for (key, flag, file, slot) in [
        ("angle", &flags.angle, &file.angle, &mut cfg.angle),
        ("length", &flags.length, &file.length, &mut cfg.length),
        ("width", &flags.width, &file.width, &mut cfg.width),
        ("intensity", &flags.intensity, &file.intensity, &mut cfg.intensity),
    ] {
        if let Some(v) = pick(flag, file) {
            *slot = parse_key(key, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(a: &TrainArgs, f: &FileConfig) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let epochs = a.epochs.or(f.epochs);
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    match a.milestones.clone().or_else(|| f.milestones.clone()) {
        Some(m) => cfg.milestones = m,
        None if epochs.is_some() => cfg.milestones = TrainConfig::scaled_milestones(cfg.epochs),
        None => {}
    }
    macro_rules! take {
        ($($field:ident).+ <- $name:ident) => {
            if let Some(v) = a.$name.clone().or_else(|| f.$name.clone()) {
                cfg.$($field).+ = v;
            }
        };
    }
    take!(base_lr <- base_lr);
    take!(lr_factor <- lr_factor);
    take!(crop <- crop);
    take!(batch_size <- batch_size);
    take!(seed <- seed);
    take!(eval_every <- eval_every);
    take!(eval_sample <- eval_sample);
    take!(checkpoint_every <- checkpoint_every);
    take!(net.units <- units);
    take!(net.channels <- channels);
    take!(net.scales <- scales);
    take!(net.pool_rate <- pool_rate);
    take!(net.attention.footprint <- footprint);
    take!(net.attention.reduction <- reduction);
    take!(net.attention.share <- share);
    if let Some(v) = a.loss.clone().or_else(|| f.loss.clone()) {
        cfg.loss = parse_key("loss", &v)?;
    }
    if let Some(v) = a.ablation.clone().or_else(|| f.ablation.clone()) {
        cfg.net.ablation = parse_key::<Ablation>("ablation", &v)?;
    }
    if let Some(v) = a.attention_normalize.clone().or_else(|| f.attention_normalize.clone()) {
        cfg.net.attention.normalize = parse_key::<AttentionNormalize>("attention_normalize", &v)?;
    }
    if let Some(v) = a.stage_order.clone().or_else(|| f.stage_order.clone()) {
        cfg.net.order = v.iter().map(|s| parse_key::<Stage>("stage_order", s)).collect::<CliResult<_>>()?;
    }
    cfg.validate().map_err(|e| CliError::Usage(format!("invalid training configuration: {e}")))?;
    Ok(cfg)
}

fn data_source(a: &TrainArgs, f: &FileConfig, seed: u64) -> CliResult<DataSource> {
    let root = match &a.data_root {
        Some(p) => Some(absolute(p)?),
        None if a.synth => None,
        None => f.data_root.clone().map(|p| absolute(&p)).transpose()?,
    };
    let synth = a.synth || (root.is_none() && f.synth.unwrap_or(false));
    match (root, synth) {
        (Some(path), false) => {
            Ok(DataSource::Root { path, pattern: pattern(a.pair_pattern.as_deref().or(f.pair_pattern.as_deref()))? })
        }
        (None, true) => Ok(DataSource::Synth {
            count: a.synth_count.or(f.synth_count).unwrap_or(8),
            size: a.synth_size.or(f.synth_size).unwrap_or(64),
            rain: rain_config(&a.rain, f, seed)?,
        }),
        _ => Err(CliError::Usage("exactly one of --data-root or --synth is required".into())),
    }
}

fn load_dataset(source: &DataSource) -> CliResult<Dataset> {
    match source {
        DataSource::Root { path, pattern } => {
            let manifest = load_manifest(path, pattern)?;
            for w in manifest.warnings() {
                eprintln!("warning: {w}");
            }
            Ok(Dataset::from_manifest(&manifest)?)
        }
        DataSource::Synth { count, size, rain } => Ok(Dataset::synthetic(*count, *size, *size, rain)?),
    }
}

fn describe(cfg: &TrainConfig) -> String {
    format!(
        "units={} channels={} scales={} pool_rate={} ablation={} loss={} epochs={} lr={} milestones={:?} \
         lr_factor={} batch_size={} crop={} seed={}",
        cfg.net.units,
        cfg.net.channels,
        cfg.net.scales,
        cfg.net.pool_rate,
        cfg.net.ablation,
        cfg.loss,
        cfg.epochs,
        cfg.base_lr,
        cfg.milestones,
        cfg.lr_factor,
        cfg.batch_size,
        cfg.crop,
        cfg.seed
    )
}

pub fn train(a: TrainArgs) -> CliResult {
    let file = match &a.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let out = a
        .out
        .clone()
        .or_else(|| file.out.clone())
        .ok_or_else(|| CliError::Usage("missing --out (or `out` in the config file)".into()))?;
    let out = absolute(&out)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path).map_err(|e| CliError::from(e).context(path.display()))?;
            let mut t = Trainer::from_checkpoint(&ck)?;
            if let Some(e) = a.epochs {
                t.cfg.epochs = e;
                t.cfg.validate().map_err(|e| CliError::Usage(format!("invalid training configuration: {e}")))?;
            }
            t
        }
        None => Trainer::new(train_config(&a, &file)?)?,
    };
    let source = data_source(&a, &file, trainer.cfg.seed)?;
    let data = load_dataset(&source)?;
    println!("config: {}", describe(&trainer.cfg));
    println!(
        "data: {} pairs, {} parameters, output {}",
        data.len(),
        trainer.net.param_count(&trainer.store),
        out.display()
    );
    let dir = RunDir::create(&out)?;
    std::fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&trainer.cfg).map_err(|e| CliError::Data(e.to_string()))?,
    )?;
    let total = trainer.cfg.epochs;
    let result = train::train(&mut trainer, &data, Some(&dir), |log| {
        match (log.ssim, log.psnr) {
            (Some(s), Some(p)) => println!(
                "epoch {}/{total} loss {:.6} ssim {s:.4} psnr {p:.2} lr {}",
                log.epoch, log.loss, log.lr
            ),
            _ => println!("epoch {}/{total} loss {:.6} lr {}", log.epoch, log.loss, log.lr),
        }
        true
    });
    match result {
        Ok(_) => {
            println!("done: {}", dir.last().display());
            Ok(())
        }
        Err(e) => {
            let err = CliError::from(e);
            let last = dir.last();
            Err(if last.exists() {
                err.context(format!("stopped in epoch {}; last good checkpoint {}", trainer.epoch + 1, last.display()))
            } else {
                err.context(format!("stopped in epoch {}", trainer.epoch + 1))
            })
        }
    }
}

pub fn eval(a: EvalArgs) -> CliResult {
    let space: Colorspace = parse_key("colorspace", &a.colorspace)?;
    let manifest = load_manifest(&a.data_root, &pattern(a.pair_pattern.as_deref())?)?;
    for w in manifest.warnings() {
        eprintln!("warning: {w}");
    }
    let report = match &a.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path).map_err(|e| CliError::from(e).context(path.display()))?;
            let (net, store, _) = ck.restore()?;
            evaluate(&manifest, Estimator::Network { net: &net, store: &store }, space)
        }
        None => evaluate(&manifest, Estimator::Identity, space),
    };
    std::fs::write(&a.report, report.to_csv())
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", a.report.display())))?;
    print!("{}", report.summary());
    Ok(report.ensure_complete()?)
}

fn png_inputs(paths: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .into_iter()
                .flatten()
                .flatten()
                .map(|e| e.path())
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    out
}

/// Rescales the rain layer to `[0, 1]` over all channels; a constant layer maps to 0.
fn normalized_streaks(r: &Tensor<f32>) -> CliResult<Image> {
    let (lo, hi) = r.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    let scaled = r.map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 });
    Ok(Image::from_tensor(&scaled, 0)?)
}

fn derain_one(
    net: &jdnet_core::nn::JdNet,
    store: &mut jdnet_core::ParamStore<f32>,
    input: &Path,
    out: &Path,
    dump: bool,
) -> CliResult {
    let img = load_png(input)?;
    let (b_hat, r_hat) = derain_image(net, store, &img)?;
    let name = input.file_name().ok_or_else(|| CliError::Data(format!("{} has no file name", input.display())))?;
    save_png(&b_hat, &out.join(name))?;
    if dump {
        let stem = input.file_stem().unwrap_or(name).to_string_lossy();
        save_png(&normalized_streaks(&r_hat)?, &out.join(format!("{stem}-streaks.png")))?;
    }
    Ok(())
}

pub fn derain(a: DerainArgs) -> CliResult {
    let ck = Checkpoint::load(&a.checkpoint).map_err(|e| CliError::from(e).context(a.checkpoint.display()))?;
    let (net, mut store, _) = ck.restore()?;
    std::fs::create_dir_all(&a.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", a.out.display())))?;
    let inputs = png_inputs(&a.inputs);
    let mut failed = 0;
    for input in &inputs {
        match derain_one(&net, &mut store, input, &a.out, a.dump_streaks) {
            Ok(()) => println!("{}", input.display()),
            Err(e) => {
                failed += 1;
                eprintln!("error: {}: {e}", input.display());
            }
        }
    }
    if failed > 0 || inputs.is_empty() {
        return Err(CliError::Data(format!("{failed} of {} inputs failed", inputs.len())));
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> CliResult {
    let group: CheckGroup = parse_key("module", &a.module)?;
    if let Some(t) = a.tol {
        if !(t >= 0.0) {
            return Err(CliError::Usage(format!("tolerance must be non-negative, got {t}")));
        }
    }
    let cases: Vec<_> = registry().into_iter().filter(|c| c.in_group(group)).collect();
    let covered: BTreeSet<&str> = cases.iter().flat_map(|c| c.covers.iter().map(|k| k.name())).collect();
    let report = run_suite(group, a.tol, a.seed).map_err(|e| CliError::Numeric(e.to_string()))?;
    for o in &report.outcomes {
        println!(
            "{:<24} {:<28} max rel err {:.3e} (tol {:.0e}, {} probes, {} re-stepped) {}",
            o.case,
            o.shape,
            o.max_rel_error,
            o.tol,
            o.probes,
            o.restepped,
            if o.passed { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{} cases, {}/{} differentiable operators covered",
        cases.len(),
        covered.len(),
        OpKind::DIFFERENTIABLE.len()
    );
    let failed: Vec<&str> = report.per_case().into_iter().filter(|c| !c.3).map(|c| c.0).collect();
    if report.passed() {
        println!("all gradient checks passed");
        Ok(())
    } else {
        Err(CliError::Numeric(format!("gradient check failed: {}", failed.join(", "))))
    }
}

pub fn synth(a: SynthArgs) -> CliResult {
    let rain = rain_config(&a.rain, &FileConfig::default(), a.seed)?;
    let pattern = pattern(a.pair_pattern.as_deref())?;
    let data = match (&a.clean_dir, a.procedural) {
        (Some(dir), None) => {
            let files = png_inputs(std::slice::from_ref(dir));
            if !dir.is_dir() || files.is_empty() {
                return Err(CliError::Data(format!("no PNG files in {}", dir.display())));
            }
            let cleans = files
                .iter()
                .map(|f| {
                    let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    Ok((id, load_png(f)?))
                })
                .collect::<CliResult<Vec<_>>>()?;
            Dataset::rain_over(cleans, &rain)?
        }
        (None, Some(n)) => Dataset::synthetic(n, a.size, a.size, &rain)?,
        _ => return Err(CliError::Usage("exactly one of --clean-dir or --procedural is required".into())),
    };
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", a.out_dir.display())))?;
    for p in &data.pairs {
        save_png(&p.rainy, &a.out_dir.join(pattern.rainy_name(&p.id)))?;
        save_png(&p.clean, &a.out_dir.join(pattern.clean_name(&p.id)))?;
    }
    println!("wrote {} pairs to {}", data.len(), a.out_dir.display());
    Ok(())
}
