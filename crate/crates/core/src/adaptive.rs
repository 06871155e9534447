//! Sequential stopping rule for point-based labeling.
//!
//! Points are added one at a time after an initial batch until the
//! confidence interval of the estimated proportion no longer straddles the
//! decision boundary (binary legends: the threshold; majority legends: the
//! estimated share of the runner-up class), or the point budget runs out.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::PointStream;
use crate::error::{Error, Result};
use crate::legend::{self, Label, Legend};
use crate::metrics::{self, BinnedCurve};
use crate::raster::{extract_units, CategoricalRaster, ProportionVector, SamplingUnit};
use crate::seed::derive_seed;
use crate::stats::{self, ConfidenceInterval};

pub const DEFAULT_N_INIT: usize = 9;
pub const DEFAULT_N_MAX: usize = 144;
pub const DEFAULT_REPETITIONS: usize = 25;

fn default_n_init() -> usize {
    DEFAULT_N_INIT
}
fn default_n_max() -> usize {
    DEFAULT_N_MAX
}
fn default_increment() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub alpha: f64,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Points added per iteration after the initial batch.
    #[serde(default = "default_increment")]
    pub increment: usize,
    pub legend: Legend,
}

impl AdaptiveConfig {
    pub fn new(alpha: f64, legend: Legend) -> Self {
        Self {
            alpha,
            n_init: DEFAULT_N_INIT,
            n_max: DEFAULT_N_MAX,
            increment: 1,
            legend,
        }
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.n_init == 0 || self.n_init > self.n_max {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= n_init <= n_max, got n_init = {}, n_max = {}",
                self.n_init, self.n_max
            )));
        }
        if self.increment == 0 {
            return Err(Error::InvalidArgument("increment must be positive".into()));
        }
        if matches!(self.legend, Legend::Majority) && class_count < 2 {
            return Err(Error::InvalidArgument("majority legend needs at least two classes".into()));
        }
        self.legend.validate(class_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopStatus {
    Continue,
    StopConfident,
    StopCapped,
}

impl StopStatus {
    pub fn is_stop(self) -> bool {
        self != StopStatus::Continue
    }
}

/// Intervals that drove a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntervalSnapshot {
    Binomial(ConfidenceInterval),
    Simultaneous(Vec<ConfidenceInterval>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopDecision {
    pub status: StopStatus,
    pub label: Option<Label>,
    pub intervals: IntervalSnapshot,
}

/// Stop when the exact interval of the target share lies strictly on one
/// side of the threshold.
pub fn check_binary(m: u64, n: u64, threshold: f64, alpha: f64) -> Result<StopDecision> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let ci = stats::clopper_pearson(m, n, alpha)?;
    let (status, label) = if ci.lower > threshold {
        (StopStatus::StopConfident, Some(Label::presence(true, false)))
    } else if ci.upper < threshold {
        (StopStatus::StopConfident, Some(Label::presence(false, false)))
    } else {
        (StopStatus::Continue, None)
    };
    Ok(StopDecision {
        status,
        label,
        intervals: IntervalSnapshot::Binomial(ci),
    })
}

/// Stop when the simultaneous lower bound of the leading class exceeds the
/// estimated share of the runner-up. Tied leaders never stop.
pub fn check_majority(counts: &[u64], alpha: f64) -> Result<StopDecision> {
    let cis = stats::goodman_intervals(counts, alpha)?;
    let n: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let (first, second) = (order[0], order[1]);
    let confident = counts[first] > counts[second]
        && cis[first].lower > counts[second] as f64 / n as f64;
    Ok(StopDecision {
        status: if confident { StopStatus::StopConfident } else { StopStatus::Continue },
        label: confident.then(|| Label::class(first, false)),
        intervals: IntervalSnapshot::Simultaneous(cis),
    })
}

/// Applies the legend's stopping check to per-class tallies.
pub fn check_tallies(tallies: &[u64], legend: &Legend, alpha: f64) -> Result<StopDecision> {
    let n: u64 = tallies.iter().sum();
    match legend {
        Legend::Binary(b) => {
            let m = b.classes.iter().map(|&c| tallies.get(c).copied().unwrap_or(0)).sum();
            check_binary(m, n, b.threshold, alpha)
        }
        Legend::Majority => check_majority(tallies, alpha),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub n: usize,
    pub tallies: Vec<u64>,
    pub decision: StopDecision,
}

/// Tally bookkeeping and stop evaluation for one unit, independent of where
/// the labels come from (a raster lookup or a human interpreter).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    config: AdaptiveConfig,
    cap: usize,
    tallies: Vec<u64>,
    trace: Vec<TraceEntry>,
}

impl StoppingRule {
    /// `population` is the number of distinct sub-sample locations; the
    /// point budget is `min(n_max, population)`.
    pub fn new(config: AdaptiveConfig, class_count: usize, population: usize) -> Result<Self> {
        config.validate(class_count)?;
        if population == 0 {
            return Err(Error::InvalidArgument("unit has no cells".into()));
        }
        let cap = config.n_max.min(population);
        Ok(Self {
            config,
            cap,
            tallies: vec![0; class_count],
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &AdaptiveConfig {
        &self.config
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn labeled(&self) -> usize {
        self.tallies.iter().sum::<u64>() as usize
    }

    pub fn tallies(&self) -> &[u64] {
        &self.tallies
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn last_decision(&self) -> Option<&StopDecision> {
        self.trace.last().map(|t| &t.decision)
    }

    pub fn is_finished(&self) -> bool {
        self.last_decision().is_some_and(|d| d.status.is_stop())
    }

    /// Number of points to request next: the initial batch, then the
    /// increment, never beyond the cap. Zero once finished.
    pub fn next_batch(&self) -> usize {
        if self.is_finished() {
            return 0;
        }
        let labeled = self.labeled();
        let want = if labeled == 0 { self.config.n_init } else { self.config.increment };
        want.min(self.cap - labeled)
    }

    pub fn record(&mut self, class: usize) -> Result<()> {
        if self.is_finished() {
            return Err(Error::InvalidArgument("stopping rule already finished".into()));
        }
        if class >= self.tallies.len() {
            return Err(Error::InvalidArgument(format!(
                "class {class} not below class count {}",
                self.tallies.len()
            )));
        }
        if self.labeled() >= self.cap {
            return Err(Error::InvalidArgument("point budget exhausted".into()));
        }
        self.tallies[class] += 1;
        Ok(())
    }

    /// Empirical class proportions; `None` before the first label.
    pub fn proportions(&self) -> Option<ProportionVector> {
        ProportionVector::from_counts(&self.tallies).ok()
    }

    /// Runs the stop check on the current tallies and appends it to the
    /// trace. At the cap, a non-confident check becomes a capped stop labeled
    /// from the empirical proportions.
    pub fn evaluate(&mut self) -> Result<&StopDecision> {
        if self.is_finished() {
            return Err(Error::InvalidArgument("stopping rule already finished".into()));
        }
        let n = self.labeled();
        if n == 0 {
            return Err(Error::InvalidArgument("no labels to evaluate".into()));
        }
        let mut decision = check_tallies(&self.tallies, &self.config.legend, self.config.alpha)?;
        if decision.status == StopStatus::Continue && n >= self.cap {
            let p = self.proportions().expect("n > 0");
            decision.status = StopStatus::StopCapped;
            decision.label = Some(legend::decide(&p, &self.config.legend));
        }
        self.trace.push(TraceEntry {
            n,
            tallies: self.tallies.clone(),
            decision,
        });
        Ok(&self.trace.last().expect("just pushed").decision)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveOutcome {
    pub label: Label,
    pub status: StopStatus,
    pub n_used: usize,
    pub trace: Vec<TraceEntry>,
}

/// Runs the stopping rule on a unit, reading point classes from the raster.
pub fn adaptive_label(unit: &SamplingUnit<'_>, config: &AdaptiveConfig, seed: u64) -> Result<AdaptiveOutcome> {
    let mut rule = StoppingRule::new(config.clone(), unit.class_count(), unit.cell_count())?;
    let mut points = PointStream::new(*unit, seed);
    loop {
        for _ in 0..rule.next_batch() {
            let p = points.next().expect("cap never exceeds the unit size");
            rule.record(p.class as usize)?;
        }
        let decision = rule.evaluate()?;
        if decision.status.is_stop() {
            let label = decision.label.expect("stopped decisions carry a label");
            let status = decision.status;
            return Ok(AdaptiveOutcome {
                label,
                status,
                n_used: rule.labeled(),
                trace: rule.trace,
            });
        }
    }
}

/// Per-unit summary over repeated adaptive runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitOptimization {
    pub unit_row: usize,
    pub unit_col: usize,
    /// Target purity for binary legends, ERP for the majority legend.
    pub metric: f64,
    pub mean_n: f64,
    pub error_rate: f64,
    pub cap_hit_fraction: f64,
    pub confident_stops: usize,
    pub confident_errors: usize,
    /// Error rate of a fixed design using the full point budget on the same
    /// draws.
    pub benchmark_error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSummary {
    pub unit_count: usize,
    pub mean_n: f64,
    pub error_rate: f64,
    pub cap_hit_fraction: f64,
    pub confident_stops: usize,
    pub confident_errors: usize,
    pub benchmark_error_rate: f64,
}

impl OptimizationSummary {
    /// Mislabel rate among confident stops.
    pub fn confident_error_rate(&self) -> f64 {
        if self.confident_stops == 0 {
            0.0
        } else {
            self.confident_errors as f64 / self.confident_stops as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub legend: Legend,
    pub alpha: f64,
    pub n_max: usize,
    pub repetitions: usize,
    pub units: Vec<UnitOptimization>,
    pub summary: OptimizationSummary,
    /// Mean effort per metric bin.
    pub effort_curve: BinnedCurve,
    /// Mean error per metric bin.
    pub error_curve: BinnedCurve,
}

fn unit_metric(p: &ProportionVector, legend: &Legend) -> Result<f64> {
    match legend {
        Legend::Binary(b) => metrics::purity(p, &b.classes),
        Legend::Majority => metrics::erp(p),
    }
}

/// Repeats the adaptive rule on every unit of the raster (offset 0).
/// Repetition `r` of unit `i` uses seed `derive_seed(master_seed, [i, r])`.
pub fn optimization_experiment(
    raster: &CategoricalRaster,
    side: usize,
    config: &AdaptiveConfig,
    repetitions: usize,
    master_seed: u64,
) -> Result<OptimizationReport> {
    config.validate(raster.class_count())?;
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be positive".into()));
    }
    let units = extract_units(raster, side, 0, 0)?;
    if units.is_empty() {
        return Err(Error::NoUnits(format!("side {side}")));
    }
    let rows: Vec<UnitOptimization> = units
        .par_iter()
        .enumerate()
        .map(|(i, unit)| -> Result<UnitOptimization> {
            let truth_p = unit.true_proportions();
            let truth = legend::decide(&truth_p, &config.legend);
            let cap = config.n_max.min(unit.cell_count());
            let (mut n_sum, mut errors, mut caps, mut conf, mut conf_err, mut bench_err) =
                (0usize, 0usize, 0usize, 0usize, 0usize, 0usize);
            for r in 0..repetitions {
                let seed = derive_seed(master_seed, &[i as u64, r as u64]);
                let out = adaptive_label(unit, config, seed)?;
                n_sum += out.n_used;
                let wrong = !out.label.agrees_with(&truth);
                errors += wrong as usize;
                match out.status {
                    StopStatus::StopCapped => caps += 1,
                    StopStatus::StopConfident => {
                        conf += 1;
                        conf_err += wrong as usize;
                    }
                    StopStatus::Continue => unreachable!("outcomes are always stopped"),
                }
                let fixed: Vec<_> = PointStream::new(*unit, seed).take(cap).collect();
                let fixed_label = crate::design::label_from_points(&fixed, unit.class_count(), &config.legend);
                bench_err += !fixed_label.agrees_with(&truth) as usize;
            }
            let reps = repetitions as f64;
            Ok(UnitOptimization {
                unit_row: unit.origin_row(),
                unit_col: unit.origin_col(),
                metric: unit_metric(&truth_p, &config.legend)?,
                mean_n: n_sum as f64 / reps,
                error_rate: errors as f64 / reps,
                cap_hit_fraction: caps as f64 / reps,
                confident_stops: conf,
                confident_errors: conf_err,
                benchmark_error_rate: bench_err as f64 / reps,
            })
        })
        .collect::<Result<_>>()?;

    let count = rows.len() as f64;
    let mean = |f: fn(&UnitOptimization) -> f64| rows.iter().map(f).sum::<f64>() / count;
    let summary = OptimizationSummary {
        unit_count: rows.len(),
        mean_n: mean(|u| u.mean_n),
        error_rate: mean(|u| u.error_rate),
        cap_hit_fraction: mean(|u| u.cap_hit_fraction),
        confident_stops: rows.iter().map(|u| u.confident_stops).sum(),
        confident_errors: rows.iter().map(|u| u.confident_errors).sum(),
        benchmark_error_rate: mean(|u| u.benchmark_error_rate),
    };
    let metric: Vec<f64> = rows.iter().map(|u| u.metric).collect();
    let effort: Vec<f64> = rows.iter().map(|u| u.mean_n).collect();
    let error: Vec<f64> = rows.iter().map(|u| u.error_rate).collect();
    Ok(OptimizationReport {
        legend: config.legend.clone(),
        alpha: config.alpha,
        n_max: config.n_max,
        repetitions,
        effort_curve: metrics::bin_errors(&metric, &effort, metrics::DEFAULT_BIN_STEP)?,
        error_curve: metrics::bin_errors(&metric, &error, metrics::DEFAULT_BIN_STEP)?,
        units: rows,
        summary,
    })
}
