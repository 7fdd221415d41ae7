//! One function per subcommand. Each reads its inputs from disk and writes
//! its artifacts under the configured output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use aridprob_core::basis::{class_balance, encode_rasters, BasisConfig};
use aridprob_core::checkpoint::{load_checkpoint, save_checkpoint, sidecar_json, Checkpoint};
use aridprob_core::evaluation::{evaluate, format_percent_table, write_metrics_csv, write_timeseries_csv};
use aridprob_core::fluctuation::VAR_CLASS;
use aridprob_core::fluctuation::{
    area_proportions, cv_map, region_summary, write_proportions_csv, write_region_csv, write_region_overall_csv,
    FluctuationLevel, ProbCube,
};
use aridprob_core::grid::{
    load_grid, read_layers, save_grid, synth_generate, write_layers, GridSpec, LayerStack, StGrid,
};
use aridprob_core::ktc::{
    label_grid, labels_from_layers, labels_to_layers, years_with_missing, LabelRaster, VAR_LABEL,
};
use aridprob_core::nn::{accuracy, init, train, AdamState, EpochStats};
use aridprob_core::pipeline::predict_cube;
use log::{info, warn};

use crate::config::PipelineConfig;
use crate::render::{render, ImageFormat, RenderSpec, RenderVariable};
use crate::{
    Cli, Command, DataError, EvaluateArgs, FluctArgs, LabelArgs, PredictArgs, RenderArgs, SynthArgs, TrainArgs,
    UsageError, YearRange,
};

pub const LOSS_CSV: &str = "loss.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const TIMESERIES_CSV: &str = "metrics_timeseries.csv";
pub const PROPORTIONS_CSV: &str = "fluct_proportions.csv";
pub const REGIONS_CSV: &str = "regions.csv";
pub const REGIONS_OVERALL_CSV: &str = "regions_overall.csv";
pub const SIDECAR_JSON: &str = "model.json";

/// Resolves configuration (defaults < file < env < flags) and runs the command.
pub fn dispatch(cli: Cli, env: impl Fn(&str) -> Option<String>) -> Result<()> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    cfg.apply_env(env)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Command::Synth(SynthArgs { format: Some(f) }) = &cli.command {
        cfg.grid.format = f.clone();
    }
    cfg.validate()?;
    match cli.command {
        Command::Synth(_) => synth(&cfg).map(drop),
        Command::Label(a) => label(&cfg, &a).map(drop),
        Command::Train(a) => train_cmd(&cfg, &a).map(drop),
        Command::Predict(a) => predict(&cfg, &a).map(drop),
        Command::Evaluate(a) => evaluate_cmd(&cfg, &a).map(drop),
        Command::Fluct(a) => fluct(&cfg, &a),
        Command::Render(a) => render_cmd(&cfg, &a).map(drop),
        Command::Run => run_all(&cfg),
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn ensure_out(cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))
}

fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if !path.is_file() {
        bail!(UsageError(format!("{what} file {} does not exist", path.display())));
    }
    Ok(path)
}

fn read_stack(path: &Path, spec: &GridSpec) -> Result<LayerStack> {
    read_layers(path, Some(spec)).with_context(|| format!("reading {}", path.display()))
}

fn load_climate(cfg: &PipelineConfig, path: Option<&PathBuf>) -> Result<StGrid> {
    let path = existing(path.cloned().unwrap_or_else(|| cfg.grid_path()), "grid")?;
    load_grid(&path, Some(&cfg.grid_spec()?)).with_context(|| format!("reading {}", path.display()))
}

fn select_years(rasters: &[LabelRaster], years: YearRange, what: &str) -> Result<Vec<LabelRaster>> {
    let out: Vec<LabelRaster> = rasters.iter().filter(|r| (years.0..=years.1).contains(&r.year)).cloned().collect();
    let want = (years.1 - years.0 + 1) as usize;
    if out.len() != want {
        bail!(DataError(format!("{what} cover {} of the {want} requested years {}-{}", out.len(), years.0, years.1)));
    }
    Ok(out)
}

fn range(r: [i32; 2]) -> YearRange {
    YearRange(r[0], r[1])
}

pub fn synth(cfg: &PipelineConfig) -> Result<PathBuf> {
    ensure_out(cfg)?;
    let grid = synth_generate(&cfg.synth_config()?)?;
    let path = cfg.grid_path();
    save_grid(&grid, &path, cfg.grid_format()?)?;
    info!("wrote synthetic grid {}", path.display());
    Ok(path)
}

pub fn label(cfg: &PipelineConfig, args: &LabelArgs) -> Result<PathBuf> {
    ensure_out(cfg)?;
    let grid = load_climate(cfg, args.grid.as_ref())?;
    let spec = grid.spec();
    let years = args.years.unwrap_or(YearRange(spec.year_start, spec.year_end));
    let rasters = label_grid(&grid, years.0..=years.1)?;
    let missing = years_with_missing(&rasters);
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|(y, n)| format!("{y} ({n} pixels)")).collect();
        warn!("pixels with missing months left unlabeled in: {}", list.join(", "));
    }
    let counts = rasters.iter().fold([0usize; 3], |mut acc, r| {
        for l in r.cells.iter().flatten() {
            acc[l.class.index()] += 1;
        }
        acc
    });
    info!("labeled {} years: arid {} semiarid {} nonarid {}", rasters.len(), counts[0], counts[1], counts[2]);
    let path = cfg.labels_path();
    write_layers(&labels_to_layers(&rasters)?, &path, cfg.grid_format()?)?;
    info!("wrote labels {}", path.display());
    Ok(path)
}

fn write_loss_csv(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for h in history {
        let val = h.val_loss.map_or_else(String::new, |v| format!("{v}"));
        out.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, val));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn train_cmd(cfg: &PipelineConfig, args: &TrainArgs) -> Result<PathBuf> {
    ensure_out(cfg)?;
    let grid = load_climate(cfg, args.grid.as_ref())?;
    let labels_path = existing(args.labels.clone().unwrap_or_else(|| cfg.labels_path()), "labels")?;
    let stack = read_stack(&labels_path, &cfg.grid_spec()?)?;
    if !stack.spec.same_space(grid.spec()) {
        bail!(UsageError(format!(
            "labels {} were produced on a different grid than {}",
            labels_path.display(),
            cfg.grid_path().display()
        )));
    }
    let rasters = labels_from_layers(&stack, VAR_LABEL)?;
    let years = args.years.unwrap_or(range(cfg.years.train));
    let train_rasters = select_years(&rasters, years, "labels")?;

    let resumed = match &args.resume {
        Some(p) => Some(load_checkpoint(&existing(p.clone(), "checkpoint")?)?),
        None => None,
    };
    let basis = match &resumed {
        Some(c) => c.basis.clone(),
        None => BasisConfig::build(
            grid.spec(),
            cfg.basis.spatial_side,
            cfg.basis.bandwidth_rule,
            cfg.basis.temporal_knots,
            cfg.pr_clamp(),
        )?,
    };
    let (data, _) = encode_rasters(&train_rasters, &basis)?;
    if data.is_empty() {
        bail!(DataError("no labeled pixel-years in the training years".into()));
    }
    let balance = class_balance(data.labels());
    info!(
        "training on {} examples x {} features (arid {} semiarid {} nonarid {})",
        data.len(),
        data.n_features(),
        balance[0],
        balance[1],
        balance[2]
    );

    let (mut net, mut adam, mut history) = match resumed {
        Some(c) => {
            c.check_input_width(basis.n_features())?;
            let adam = c.adam.clone().ok_or_else(|| DataError("checkpoint has no optimizer state".into()))?;
            (c.network, adam, c.history)
        }
        None => {
            let net = init(&cfg.network_config(basis.n_features()))?;
            let adam = AdamState::new(&net, cfg.adam_hyper());
            (net, adam, Vec::new())
        }
    };
    let start = history.last().map_or(0, |h| h.epoch);
    let mut tcfg = cfg.train_config();
    if let Some(e) = args.epochs {
        tcfg.epochs = e;
    }
    let report = train(&mut net, &mut adam, &data, &tcfg, start)?;
    history.extend(report.history.iter().copied());
    if report.stopped_early {
        info!("early stop; kept epoch {}", report.best_epoch);
    }
    info!("training accuracy {:.4}", accuracy(&net, &data)?);

    let ckpt = Checkpoint { network: net, adam: Some(adam), basis, history };
    let path = cfg.model_path();
    save_checkpoint(&ckpt, &path)?;
    fs::write(cfg.path(SIDECAR_JSON), sidecar_json(&ckpt) + "\n")?;
    write_loss_csv(&ckpt.history, &cfg.path(LOSS_CSV))?;
    info!("wrote checkpoint {} after epoch {}", path.display(), ckpt.epochs_completed());
    Ok(path)
}

pub fn predict(cfg: &PipelineConfig, args: &PredictArgs) -> Result<PathBuf> {
    ensure_out(cfg)?;
    let model_path = existing(args.model.clone().unwrap_or_else(|| cfg.model_path()), "model")?;
    let ckpt = load_checkpoint(&model_path)?;
    let grid = load_climate(cfg, args.grid.as_ref())?;
    let years = args.years.unwrap_or(range(cfg.years.test));
    if !grid.spec().contains_year(years.0) || !grid.spec().contains_year(years.1) {
        bail!(UsageError(format!("prediction years {}-{} are not all in the grid", years.0, years.1)));
    }
    ckpt.check_input_width(ckpt.basis.n_features())?;
    let rasters = label_grid(&grid, years.0..=years.1)?;
    let cube = predict_cube(&ckpt.network, &ckpt.basis, &rasters)?;
    let path = cfg.predictions_path();
    write_layers(&cube.to_layers()?, &path, cfg.grid_format()?)?;
    info!("wrote predictions for {}-{} to {}", years.0, years.1, path.display());
    Ok(path)
}

pub fn evaluate_cmd(cfg: &PipelineConfig, args: &EvaluateArgs) -> Result<PathBuf> {
    ensure_out(cfg)?;
    let spec = cfg.grid_spec()?;
    let truth_path = existing(args.truth.clone().unwrap_or_else(|| cfg.labels_path()), "labels")?;
    let pred_path = existing(args.pred.clone().unwrap_or_else(|| cfg.predictions_path()), "predictions")?;
    let truth = labels_from_layers(&read_stack(&truth_path, &spec)?, VAR_LABEL)?;
    let pred = labels_from_layers(&read_stack(&pred_path, &spec)?, VAR_CLASS)?;
    let (y0, y1) = match (pred.first(), pred.last()) {
        (Some(a), Some(b)) => (a.year, b.year),
        _ => bail!(DataError(format!("{} holds no class layers", pred_path.display()))),
    };
    let years = args.years.unwrap_or(YearRange(y0, y1));
    let truth = select_years(&truth, years, "labels")?;
    let pred = select_years(&pred, years, "predictions")?;
    let report = evaluate(&truth, &pred, None)?;
    let path = cfg.path(METRICS_CSV);
    write_metrics_csv(&report, &path)?;
    write_timeseries_csv(&report, &cfg.path(TIMESERIES_CSV))?;
    print!("{}", format_percent_table(&report));
    if let Some(acc) = report.overall_accuracy {
        println!("overall accuracy {:.2}%", 100.0 * acc);
    }
    Ok(path)
}

pub fn fluct(cfg: &PipelineConfig, args: &FluctArgs) -> Result<()> {
    ensure_out(cfg)?;
    let mut cfg = cfg.clone();
    if let Some(r) = &args.regions {
        cfg.fluct.regions = r.iter().filter(|s| !s.is_empty()).cloned().collect();
        cfg.fluct.custom_regions.clear();
    }
    let regions = cfg.regions()?;
    let pred_path = existing(args.pred.clone().unwrap_or_else(|| cfg.predictions_path()), "predictions")?;
    let cube = ProbCube::from_layers(&read_stack(&pred_path, &cfg.grid_spec()?)?)?;
    let years = args.years.unwrap_or(range(cfg.fluct_years()));
    let cube = cube.slice_years(years.0, years.1)?;

    let map = cv_map(&cube, cfg.fluct.sd);
    write_layers(&map.to_layers()?, &cfg.cv_path(), cfg.grid_format()?)?;
    let props = area_proportions(&map, cfg.fluct.weighting)?;
    write_proportions_csv(&props, &cfg.path(PROPORTIONS_CSV))?;
    println!("fluctuation level        area %");
    for (k, level) in FluctuationLevel::ALL.iter().enumerate() {
        println!("{:<24} {:>6.2}", level.range_label(), props.percent[k]);
    }

    let summaries = regions.iter().map(|r| region_summary(&cube, r)).collect::<aridprob_core::Result<Vec<_>>>()?;
    write_region_csv(&summaries, &cfg.path(REGIONS_CSV))?;
    write_region_overall_csv(&summaries, &cfg.path(REGIONS_OVERALL_CSV))?;
    for s in &summaries {
        println!(
            "{}: arid {:.1}% semiarid {:.1}% nonarid {:.1}%",
            s.name,
            100.0 * s.overall.p_arid(),
            100.0 * s.overall.p_semiarid(),
            100.0 * s.overall.p_nonarid()
        );
    }
    Ok(())
}

fn default_input(cfg: &PipelineConfig, variable: RenderVariable) -> PathBuf {
    match variable {
        RenderVariable::Label | RenderVariable::PrWinsorized => cfg.labels_path(),
        RenderVariable::Cv | RenderVariable::Level => cfg.cv_path(),
        _ => cfg.predictions_path(),
    }
}

pub fn render_cmd(cfg: &PipelineConfig, args: &RenderArgs) -> Result<PathBuf> {
    let variable = RenderVariable::parse(&args.variable)?;
    let format = ImageFormat::parse(args.format.as_deref().unwrap_or(&cfg.render.format))?;
    let scale = args.scale.unwrap_or(cfg.render.scale);
    if scale == 0 {
        bail!(UsageError("scale must be >= 1".into()));
    }
    let input = existing(args.input.clone().unwrap_or_else(|| default_input(cfg, variable)), "raster")?;
    let stack = read_stack(&input, &cfg.grid_spec()?)?;
    let image = match &args.image {
        Some(p) => p.clone(),
        None => {
            let dir = cfg.path("render");
            fs::create_dir_all(&dir)?;
            let year = args.year.map_or_else(|| "first".to_string(), |y| y.to_string());
            dir.join(format!("{}_{year}.{}", variable.name(), format.ext()))
        }
    };
    if let Some(parent) = image.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let spec = RenderSpec { variable, year: args.year, scale, format };
    let (img, legend) = render(&stack, &spec, &image)?;
    info!("wrote {} and {}", img.display(), legend.display());
    Ok(img)
}

pub fn run_all(cfg: &PipelineConfig) -> Result<()> {
    synth(cfg)?;
    label(cfg, &LabelArgs { grid: None, years: None })?;
    train_cmd(cfg, &TrainArgs { grid: None, labels: None, years: None, resume: None, epochs: None })?;
    predict(cfg, &PredictArgs { model: None, grid: None, years: None })?;
    evaluate_cmd(cfg, &EvaluateArgs { truth: None, pred: None, years: None })?;
    fluct(cfg, &FluctArgs { pred: None, years: None, regions: None })?;
    let year = cfg.years.test[0];
    for v in &cfg.render.variables {
        let variable = RenderVariable::parse(v)?;
        let year = match variable {
            RenderVariable::Cv | RenderVariable::Level => cfg.fluct_years()[0],
            _ => year,
        };
        render_cmd(
            cfg,
            &RenderArgs { variable: v.clone(), input: None, year: Some(year), scale: None, format: None, image: None },
        )?;
    }
    std::io::stdout().flush()?;
    Ok(())
}
