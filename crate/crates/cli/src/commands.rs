use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use subsample_core::adaptive::{adaptive_label, optimization_experiment, IntervalSnapshot};
use subsample_core::harness::{purity_scalogram, run_experiment, ExperimentConfig, RasterSource};
use subsample_core::raster::{save_ascii_grid, CategoricalRaster};
use subsample_core::report::{self, write_atomic};
use subsample_service::SessionStore;

use crate::args::{
    Common, DesignFamily, GenerateArgs, LabelArgs, OptimizeArgs, RuleArgs, ScalogramArgs, ServeArgs, SimulateArgs,
};
use crate::config::{
    config_err, load_json, load_or_default, require_raster, resolve_seed, runtime_err, CliError, CliResult,
    GenerateConfig, LabelConfig, OptimizeConfig, RuleConfig, ScalogramConfig,
};

const DEFAULT_OUTPUT_DIR: &str = "results";
const RESOLVED_CONFIG: &str = "config.json";

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(runtime_err)
}

/// Prints the config and reports whether the caller should stop there.
fn print_config_only<T: Serialize>(common: &Common, value: &T) -> CliResult<bool> {
    if common.print_config {
        println!("{}", to_json(value)?);
    }
    Ok(common.print_config)
}

/// Relative raster paths in a config file are taken from the file's folder.
fn anchor_raster(source: &mut RasterSource, config: Option<&Path>) {
    if let (RasterSource::File { path }, Some(cfg)) = (source, config) {
        if path.is_relative() {
            if let Some(dir) = cfg.parent() {
                *path = dir.join(&*path);
            }
        }
    }
}

fn anchor_optional(source: &mut Option<RasterSource>, config: Option<&Path>) {
    if let Some(s) = source {
        anchor_raster(s, config);
    }
}

fn load_raster(source: &RasterSource) -> CliResult<CategoricalRaster> {
    source.load().map_err(|e| match e {
        // Generator parameters are part of the config.
        subsample_core::Error::InvalidArgument(m) => CliError::Config(format!("raster: {m}")),
        other => runtime_err(other),
    })
}

fn write_resolved<T: Serialize>(dir: &Path, value: &T) -> CliResult<()> {
    let mut text = to_json(value)?;
    text.push('\n');
    write_atomic(&dir.join(RESOLVED_CONFIG), text.as_bytes()).map_err(runtime_err)
}

fn apply_rule(rule: &mut RuleConfig, args: &RuleArgs) {
    if let Some(l) = &args.legend {
        rule.legend = l.clone();
    }
    if let Some(a) = args.alpha {
        rule.alpha = a;
    }
    if let Some(n) = args.n_init {
        rule.n_init = n;
    }
    if let Some(n) = args.n_max {
        rule.n_max = n;
    }
    if let Some(i) = args.increment {
        rule.increment = i;
    }
}

pub fn generate(args: GenerateArgs) -> CliResult<()> {
    let mut cfg: GenerateConfig = load_or_default(args.common.config.as_deref())?;
    if let Some(k) = args.kind {
        cfg.kind = k;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = args.$flag.clone() {
                cfg.$field = v;
            }
        )*};
    }
    set!(width => width, height => height, classes => class_count, density => patch_density,
         radius => smoothing_radius, cover => cover_fraction);
    if let Some(w) = args.weights.clone() {
        cfg.class_weights = Some(w);
    }
    cfg.seed = Some(resolve_seed(args.common.seed, cfg.seed)?);
    let source = cfg.source()?;
    if print_config_only(&args.common, &cfg)? {
        return Ok(());
    }
    let output = args
        .output
        .ok_or_else(|| CliError::Config("output: --output is required".into()))?;
    let raster = load_raster(&source)?;
    write_atomic(&output, save_ascii_grid(&raster).as_bytes()).map_err(runtime_err)?;
    let counts = raster.class_counts();
    let total = (raster.width() * raster.height()) as f64;
    let shares: Vec<String> = counts.iter().map(|&c| format!("{:.4}", c as f64 / total)).collect();
    println!(
        "wrote {} ({}x{}, class shares {})",
        output.display(),
        raster.width(),
        raster.height(),
        shares.join(" ")
    );
    Ok(())
}

fn simulate_config(args: &SimulateArgs) -> CliResult<ExperimentConfig> {
    let config_path = args.common.config.as_deref();
    let mut cfg = match (config_path, &args.raster) {
        (Some(p), _) => {
            let mut cfg: ExperimentConfig = load_json(p)?;
            anchor_raster(&mut cfg.raster, Some(p));
            cfg
        }
        (None, Some(r)) => ExperimentConfig::new(RasterSource::File { path: r.clone() }),
        (None, None) => return Err(CliError::Config("raster: give --raster or --config".into())),
    };
    if let Some(r) = &args.raster {
        cfg.raster = RasterSource::File { path: r.clone() };
    }
    if !args.legend.is_empty() {
        cfg.legends = args.legend.clone();
    }
    if let Some(n) = &args.n {
        cfg.designs.point_counts = n.clone();
    }
    if let Some(k) = &args.k {
        cfg.designs.partition_ks = k.clone();
    }
    if let Some(p) = &args.protocols {
        cfg.designs.protocols = p.clone();
    }
    match args.design {
        Some(DesignFamily::Points) => cfg.designs.partition_ks.clear(),
        Some(DesignFamily::Partition) => cfg.designs.point_counts.clear(),
        Some(DesignFamily::All) | None => {}
    }
    if let Some(r) = args.realizations {
        cfg.realizations = r;
    }
    if let Some(s) = args.side {
        cfg.unit_side = s;
    }
    if let Some(s) = &args.shifts {
        cfg.shifts = s.clone();
    }
    if let Some(s) = &args.scalogram_sides {
        cfg.scalogram_sides = s.clone();
    }
    if let Some(d) = &args.output_dir {
        cfg.output_dir = Some(d.clone());
    }
    cfg.output_dir.get_or_insert_with(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    cfg.master_seed = Some(resolve_seed(args.common.seed, cfg.master_seed)?);
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

pub fn simulate(args: SimulateArgs) -> CliResult<()> {
    let cfg = simulate_config(&args)?;
    if print_config_only(&args.common, &cfg)? {
        return Ok(());
    }
    let raster = load_raster(&cfg.raster)?;
    cfg.validate_for(&raster).map_err(config_err)?;
    let rep = run_experiment(&cfg, &raster).map_err(runtime_err)?;
    let dir = cfg.output_dir.clone().expect("resolved above");
    let written = report::write_report(&rep, &dir).map_err(runtime_err)?;
    write_resolved(&dir, &cfg)?;

    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:<22} {:<28} {:>6} {:>9} {:>9}", "legend", "design", "n_or_k", "error", "stderr");
    for r in &rep.designs {
        let _ = writeln!(
            out,
            "{:<22} {:<28} {:>6} {:>9.4} {:>9.4}",
            r.legend, r.design, r.n_or_k, r.overall_error, r.stderr
        );
    }
    let _ = writeln!(out, "wrote {} files to {}", written.len() + 1, dir.display());
    Ok(())
}

pub fn optimize(args: OptimizeArgs) -> CliResult<()> {
    let config_path = args.common.config.as_deref();
    let mut cfg: OptimizeConfig = load_or_default(config_path)?;
    anchor_optional(&mut cfg.raster, config_path);
    if let Some(r) = &args.raster {
        cfg.raster = Some(RasterSource::File { path: r.clone() });
    }
    apply_rule(&mut cfg.rule, &args.rule);
    if let Some(s) = args.side {
        cfg.unit_side = s;
    }
    if let Some(r) = args.repetitions {
        cfg.repetitions = r;
    }
    if let Some(d) = &args.output_dir {
        cfg.output_dir = Some(d.clone());
    }
    cfg.output_dir.get_or_insert_with(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    cfg.master_seed = Some(resolve_seed(args.common.seed, cfg.master_seed)?);
    if cfg.repetitions == 0 {
        return Err(CliError::Config("repetitions: must be at least 1".into()));
    }
    if cfg.unit_side < 2 {
        return Err(CliError::Config("unit_side: must be at least 2".into()));
    }
    let adaptive = cfg.rule.adaptive();
    adaptive
        .validate(usize::MAX)
        .map_err(|e| CliError::Config(format!("rule: {e}")))?;
    let source = require_raster(&cfg.raster)?.clone();
    if print_config_only(&args.common, &cfg)? {
        return Ok(());
    }
    let raster = load_raster(&source)?;
    adaptive
        .validate(raster.class_count())
        .map_err(|e| CliError::Config(format!("rule: {e}")))?;
    if cfg.unit_side > raster.width() || cfg.unit_side > raster.height() {
        return Err(CliError::Config(format!(
            "unit_side: {} exceeds the {}x{} raster",
            cfg.unit_side,
            raster.width(),
            raster.height()
        )));
    }
    let rep = optimization_experiment(&raster, cfg.unit_side, &adaptive, cfg.repetitions, cfg.master_seed.unwrap())
        .map_err(runtime_err)?;
    let dir = cfg.output_dir.clone().expect("resolved above");
    let written = report::write_optimization_report(&rep, &dir).map_err(runtime_err)?;
    write_resolved(&dir, &cfg)?;
    let s = &rep.summary;
    println!(
        "{} units x {} runs, legend {}, alpha {}: mean points {:.2} (cap {}), error {:.4}, cap hits {:.3}, \
         confident-stop errors {}/{}, fixed-{} error {:.4}",
        s.unit_count,
        rep.repetitions,
        rep.legend,
        rep.alpha,
        s.mean_n,
        rep.n_max,
        s.error_rate,
        s.cap_hit_fraction,
        s.confident_errors,
        s.confident_stops,
        rep.n_max,
        s.benchmark_error_rate
    );
    println!("wrote {} files to {}", written.len() + 1, dir.display());
    Ok(())
}

pub fn scalogram(args: ScalogramArgs) -> CliResult<()> {
    let config_path = args.common.config.as_deref();
    let mut cfg: ScalogramConfig = load_or_default(config_path)?;
    anchor_optional(&mut cfg.raster, config_path);
    if let Some(r) = &args.raster {
        cfg.raster = Some(RasterSource::File { path: r.clone() });
    }
    if let Some(s) = &args.sides {
        cfg.unit_sides = s.clone();
    }
    if let Some(d) = &args.output_dir {
        cfg.output_dir = Some(d.clone());
    }
    cfg.output_dir.get_or_insert_with(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    if cfg.unit_sides.is_empty() || cfg.unit_sides.contains(&0) {
        return Err(CliError::Config("unit_sides: need positive unit sides".into()));
    }
    let source = require_raster(&cfg.raster)?.clone();
    if print_config_only(&args.common, &cfg)? {
        return Ok(());
    }
    let raster = load_raster(&source)?;
    if let Some(s) = cfg.unit_sides.iter().find(|&&s| s > raster.width() || s > raster.height()) {
        return Err(CliError::Config(format!("unit_sides: {s} exceeds the raster")));
    }
    let rows = purity_scalogram(&raster, &cfg.unit_sides).map_err(runtime_err)?;
    let dir = cfg.output_dir.clone().expect("resolved above");
    report::write_scalogram(&rows, &dir).map_err(runtime_err)?;
    write_resolved(&dir, &cfg)?;
    println!("{:>9} {:>10} {:>10}", "unit_side", "pi>0.90", "pi<0.50");
    for r in &rows {
        println!(
            "{:>9} {:>10.4} {:>10.4}",
            r.unit_side, r.frac_purity_gt_090, r.frac_purity_lt_050
        );
    }
    Ok(())
}

pub fn label(args: LabelArgs) -> CliResult<()> {
    let config_path = args.common.config.as_deref();
    let mut cfg: LabelConfig = load_or_default(config_path)?;
    anchor_optional(&mut cfg.raster, config_path);
    if let Some(r) = &args.raster {
        cfg.raster = Some(RasterSource::File { path: r.clone() });
    }
    apply_rule(&mut cfg.rule, &args.rule);
    if let Some(s) = args.side {
        cfg.unit_side = s;
    }
    if let Some(r) = args.row {
        cfg.unit_row = r;
    }
    if let Some(c) = args.col {
        cfg.unit_col = c;
    }
    cfg.seed = Some(resolve_seed(args.common.seed, cfg.seed)?);
    let adaptive = cfg.rule.adaptive();
    adaptive
        .validate(usize::MAX)
        .map_err(|e| CliError::Config(format!("rule: {e}")))?;
    let source = require_raster(&cfg.raster)?.clone();
    if print_config_only(&args.common, &cfg)? {
        return Ok(());
    }
    let raster = load_raster(&source)?;
    adaptive
        .validate(raster.class_count())
        .map_err(|e| CliError::Config(format!("rule: {e}")))?;
    let unit = raster
        .unit(cfg.unit_row, cfg.unit_col, cfg.unit_side)
        .map_err(|e| CliError::Config(format!("unit: {e}")))?;
    let outcome = adaptive_label(&unit, &adaptive, cfg.seed.unwrap()).map_err(runtime_err)?;
    if args.json {
        println!("{}", to_json(&outcome)?);
        return Ok(());
    }
    let truth = subsample_core::legend::decide(&unit.true_proportions(), &adaptive.legend);
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:>4}  {:<24} {:<14} interval", "n", "tallies", "status");
    for e in &outcome.trace {
        let interval = match &e.decision.intervals {
            IntervalSnapshot::Binomial(ci) => format!("[{:.4}, {:.4}]", ci.lower, ci.upper),
            IntervalSnapshot::Simultaneous(cis) => cis
                .iter()
                .map(|ci| format!("[{:.3}, {:.3}]", ci.lower, ci.upper))
                .collect::<Vec<_>>()
                .join(" "),
        };
        let _ = writeln!(
            out,
            "{:>4}  {:<24} {:<14} {}",
            e.n,
            format!("{:?}", e.tallies),
            format!("{:?}", e.decision.status),
            interval
        );
    }
    let _ = writeln!(
        out,
        "label {} after {} points ({:?}); true label {}",
        outcome.label.value, outcome.n_used, outcome.status, truth.value
    );
    Ok(())
}

pub fn serve(args: ServeArgs) -> CliResult<()> {
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::Config(format!("host/port: {e}")))?;
    let store = match &args.journal {
        Some(p) => SessionStore::with_journal(p).map_err(runtime_err)?,
        None => SessionStore::new(),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(runtime_err)?;
    runtime.block_on(async move {
        let restored = store.len();
        eprintln!("listening on http://{addr} ({restored} sessions restored)");
        subsample_service::serve(addr, Arc::new(store)).await
    })
    .map_err(runtime_err)
}
