//! Monte Carlo experiments over a reference raster: point designs, shifted
//! partition designs and the purity-versus-unit-size scalogram.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{self, PartitionCounts, PointStream, Protocol, DEFAULT_SHIFTS};
use crate::error::{Error, Result};
use crate::legend::{self, Label, Legend};
use crate::metrics::{self, DEFAULT_BIN_STEP};
use crate::raster::{self, extract_units, CategoricalRaster, ProportionVector, SamplingUnit};
use crate::seed::derive_seed;

pub const DEFAULT_UNIT_SIDE: usize = 180;
pub const DEFAULT_REALIZATIONS: usize = 36;
pub const DEFAULT_POINT_COUNTS: [usize; 7] = [4, 9, 16, 25, 36, 100, 144];
pub const DEFAULT_PARTITION_KS: [usize; 7] = [2, 3, 4, 5, 6, 10, 12];

/// Where the reference raster comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterSource {
    File {
        path: PathBuf,
    },
    PatchMosaic {
        width: usize,
        height: usize,
        class_count: usize,
        patch_density: f64,
        class_weights: Vec<f64>,
        seed: u64,
    },
    SmoothedBinary {
        width: usize,
        height: usize,
        smoothing_radius: usize,
        cover_fraction: f64,
        seed: u64,
    },
}

impl RasterSource {
    pub fn load(&self) -> Result<CategoricalRaster> {
        match self {
            RasterSource::File { path } => raster::read_ascii_grid_file(path),
            RasterSource::PatchMosaic {
                width,
                height,
                class_count,
                patch_density,
                class_weights,
                seed,
            } => raster::generate_patch_mosaic(*width, *height, *class_count, *patch_density, class_weights, *seed),
            RasterSource::SmoothedBinary {
                width,
                height,
                smoothing_radius,
                cover_fraction,
                seed,
            } => raster::generate_smoothed_binary(*width, *height, *smoothing_radius, *cover_fraction, *seed),
        }
    }
}

fn default_point_counts() -> Vec<usize> {
    DEFAULT_POINT_COUNTS.to_vec()
}
fn default_partition_ks() -> Vec<usize> {
    DEFAULT_PARTITION_KS.to_vec()
}
fn default_protocols() -> Vec<Protocol> {
    vec![Protocol::Ttm, Protocol::Mtt]
}

/// Sub-sample sizes to simulate. Partition protocols apply to binary
/// legends; the majority legend always uses the two-stage majority.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignGrid {
    #[serde(default = "default_point_counts")]
    pub point_counts: Vec<usize>,
    #[serde(default = "default_partition_ks")]
    pub partition_ks: Vec<usize>,
    #[serde(default = "default_protocols")]
    pub protocols: Vec<Protocol>,
}

impl Default for DesignGrid {
    fn default() -> Self {
        Self {
            point_counts: default_point_counts(),
            partition_ks: default_partition_ks(),
            protocols: default_protocols(),
        }
    }
}

impl DesignGrid {
    fn protocols_for(&self, legend: &Legend) -> Vec<Protocol> {
        match legend {
            Legend::Majority => vec![Protocol::TwoStageMajority],
            Legend::Binary(_) => self
                .protocols
                .iter()
                .copied()
                .filter(|p| *p != Protocol::TwoStageMajority)
                .collect(),
        }
    }
}

fn default_side() -> usize {
    DEFAULT_UNIT_SIDE
}
fn default_realizations() -> usize {
    DEFAULT_REALIZATIONS
}
fn default_shifts() -> Vec<usize> {
    DEFAULT_SHIFTS.to_vec()
}
fn default_legends() -> Vec<Legend> {
    vec![
        Legend::Majority,
        Legend::binary(vec![1], 0.10),
        Legend::binary(vec![1], 0.50),
        Legend::binary(vec![1], 0.75),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub raster: RasterSource,
    #[serde(default = "default_side")]
    pub unit_side: usize,
    #[serde(default = "default_legends")]
    pub legends: Vec<Legend>,
    #[serde(default)]
    pub designs: DesignGrid,
    /// Point-design repetitions per unit. Partition realizations come from
    /// the shift list (one per shift pair).
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default = "default_shifts")]
    pub shifts: Vec<usize>,
    #[serde(default)]
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Unit sides for the purity scalogram; empty to skip it.
    #[serde(default)]
    pub scalogram_sides: Vec<usize>,
}

impl ExperimentConfig {
    pub fn new(raster: RasterSource) -> Self {
        Self {
            raster,
            unit_side: DEFAULT_UNIT_SIDE,
            legends: default_legends(),
            designs: DesignGrid::default(),
            realizations: DEFAULT_REALIZATIONS,
            shifts: default_shifts(),
            master_seed: None,
            output_dir: None,
            scalogram_sides: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.master_seed.unwrap_or(0)
    }

    /// Checks everything that can be checked without the raster.
    pub fn validate(&self) -> Result<()> {
        let side = self.unit_side;
        if side < 2 {
            return Err(Error::InvalidArgument(format!("unit_side must be >= 2, got {side}")));
        }
        if self.realizations == 0 {
            return Err(Error::InvalidArgument("realizations must be >= 1".into()));
        }
        for &n in &self.designs.point_counts {
            if n == 0 || n > side * side {
                return Err(Error::InvalidArgument(format!(
                    "designs.point_counts: {n} points do not fit a unit of {} cells",
                    side * side
                )));
            }
        }
        for &k in &self.designs.partition_ks {
            if k == 0 || !side.is_multiple_of(k) {
                return Err(Error::InvalidArgument(format!(
                    "designs.partition_ks: {k} does not divide unit_side {side}"
                )));
            }
        }
        if !self.designs.partition_ks.is_empty() && self.shifts.is_empty() {
            return Err(Error::InvalidArgument("shifts: empty shift list".into()));
        }
        if self.legends.is_empty() {
            return Err(Error::InvalidArgument("legends: no legend given".into()));
        }
        Ok(())
    }

    pub fn validate_for(&self, raster: &CategoricalRaster) -> Result<()> {
        self.validate()?;
        for (i, l) in self.legends.iter().enumerate() {
            l.validate(raster.class_count())
                .map_err(|e| Error::InvalidArgument(format!("legends[{i}]: {e}")))?;
        }
        if self.unit_side > raster.width() || self.unit_side > raster.height() {
            return Err(Error::InvalidArgument(format!(
                "unit_side {} exceeds the {}x{} raster",
                self.unit_side,
                raster.width(),
                raster.height()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignErrorRow {
    pub legend: String,
    pub design: String,
    pub protocol: String,
    pub n_or_k: usize,
    pub overall_error: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitErrorRow {
    pub unit_row: usize,
    pub unit_col: usize,
    pub pi: f64,
    pub erp: f64,
    pub legend: String,
    pub design: String,
    pub n_or_k: usize,
    pub error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub metric: String,
    pub bin_center: f64,
    pub mean_error: Option<f64>,
    pub count: usize,
    pub legend: String,
    pub design: String,
    pub n_or_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalogramRow {
    pub unit_side: usize,
    pub frac_purity_gt_090: f64,
    pub frac_purity_lt_050: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub designs: Vec<DesignErrorRow>,
    pub units: Vec<UnitErrorRow>,
    pub curves: Vec<CurveRow>,
    pub scalogram: Vec<ScalogramRow>,
}

impl ErrorReport {
    pub fn extend(&mut self, other: ErrorReport) {
        self.designs.extend(other.designs);
        self.units.extend(other.units);
        self.curves.extend(other.curves);
        self.scalogram.extend(other.scalogram);
    }

    pub fn design(&self, legend: &str, design: &str, protocol: &str, n_or_k: usize) -> Option<&DesignErrorRow> {
        self.designs
            .iter()
            .find(|r| r.legend == legend && r.design == design && r.protocol == protocol && r.n_or_k == n_or_k)
    }
}

/// Design label used in report rows: `points` or `partition_TTM` etc.
fn design_name(kind: &str, protocol: Option<Protocol>) -> String {
    match protocol {
        None => kind.to_string(),
        Some(p) => format!("{kind}_{p}"),
    }
}

/// Metric a legend is analysed against, and its value for a unit.
fn curve_metric(legend: &Legend) -> &'static str {
    match legend {
        Legend::Binary(_) => "pi",
        Legend::Majority => "erp",
    }
}

struct UnitFacts {
    truth: Vec<Label>,
    pi: Vec<f64>,
    erp: f64,
}

fn unit_facts(p: &ProportionVector, legends: &[Legend]) -> Result<UnitFacts> {
    let erp = if p.len() < 2 { 1.0 } else { metrics::erp(p)? };
    Ok(UnitFacts {
        truth: legends.iter().map(|l| legend::decide(p, l)).collect(),
        pi: legends
            .iter()
            .map(|l| match l {
                Legend::Binary(b) => b.target_share(p),
                Legend::Majority => p.dominant().1,
            })
            .collect(),
        erp,
    })
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Assembles report rows for one (legend, design) series.
#[allow(clippy::too_many_arguments)]
fn series_rows(
    report: &mut ErrorReport,
    legend: &Legend,
    design: &str,
    protocol: &str,
    n_or_k: usize,
    per_realization: &[f64],
    units: &[(usize, usize, f64, f64, f64)],
) -> Result<()> {
    let legend_name = legend.to_string();
    let (overall, stderr) = mean_and_stderr(per_realization);
    report.designs.push(DesignErrorRow {
        legend: legend_name.clone(),
        design: design.to_string(),
        protocol: protocol.to_string(),
        n_or_k,
        overall_error: overall,
        stderr,
    });
    let metric = curve_metric(legend);
    let mut xs = Vec::with_capacity(units.len());
    let mut errs = Vec::with_capacity(units.len());
    for &(row, col, pi, erp, err) in units {
        report.units.push(UnitErrorRow {
            unit_row: row,
            unit_col: col,
            pi,
            erp,
            legend: legend_name.clone(),
            design: design.to_string(),
            n_or_k,
            error_rate: err,
        });
        xs.push(if metric == "pi" { pi } else { erp });
        errs.push(err);
    }
    let curve = metrics::bin_errors(&xs, &errs, DEFAULT_BIN_STEP)?;
    for i in 0..curve.bin_centers.len() {
        report.curves.push(CurveRow {
            metric: metric.to_string(),
            bin_center: curve.bin_centers[i],
            mean_error: curve.mean_error[i],
            count: curve.counts[i],
            legend: legend_name.clone(),
            design: design.to_string(),
            n_or_k,
        });
    }
    Ok(())
}

/// Point designs: for every unit (offset 0), `realizations` independent
/// draws per point count. Draws for unit `i`, realization `r` and point
/// count index `d` use `derive_seed(master, [i, r, d])` and are shared by
/// all legends.
pub fn run_point_experiment(config: &ExperimentConfig, raster: &CategoricalRaster) -> Result<ErrorReport> {
    config.validate_for(raster)?;
    let counts = &config.designs.point_counts;
    let legends = &config.legends;
    let reps = config.realizations;
    let units = extract_units(raster, config.unit_side, 0, 0)?;
    if units.is_empty() {
        return Err(Error::NoUnits(format!("side {}", config.unit_side)));
    }
    let seed = config.seed();
    let (nl, nd) = (legends.len(), counts.len());

    // wrong[(l * nd + d) * reps + r] per unit.
    let per_unit: Vec<(UnitFacts, Vec<bool>)> = units
        .par_iter()
        .enumerate()
        .map(|(i, unit)| -> Result<_> {
            let facts = unit_facts(&unit.true_proportions(), legends)?;
            let mut wrong = vec![false; nl * nd * reps];
            for (d, &n) in counts.iter().enumerate() {
                for r in 0..reps {
                    let s = derive_seed(seed, &[i as u64, r as u64, d as u64]);
                    let pts: Vec<_> = PointStream::new(*unit, s).take(n).collect();
                    for (l, lg) in legends.iter().enumerate() {
                        let label = design::label_from_points(&pts, unit.class_count(), lg);
                        wrong[(l * nd + d) * reps + r] = !label.agrees_with(&facts.truth[l]);
                    }
                }
            }
            Ok((facts, wrong))
        })
        .collect::<Result<_>>()?;

    let mut report = ErrorReport::default();
    let nu = units.len() as f64;
    for (l, lg) in legends.iter().enumerate() {
        for (d, &n) in counts.iter().enumerate() {
            let mut per_real = vec![0.0; reps];
            let mut rows = Vec::with_capacity(units.len());
            for (unit, (facts, wrong)) in units.iter().zip(&per_unit) {
                let slice = &wrong[(l * nd + d) * reps..(l * nd + d + 1) * reps];
                for (acc, &w) in per_real.iter_mut().zip(slice) {
                    *acc += w as u8 as f64;
                }
                let err = slice.iter().filter(|&&w| w).count() as f64 / reps as f64;
                rows.push((unit.origin_row(), unit.origin_col(), facts.pi[l], facts.erp, err));
            }
            per_real.iter_mut().for_each(|v| *v /= nu);
            series_rows(&mut report, lg, "points", "none", n, &per_real, &rows)?;
        }
    }
    Ok(report)
}

/// Partition designs over every shift realization. Each realization's error
/// rate is its own unit average; the overall error weights realizations
/// equally.
pub fn run_partition_experiment(config: &ExperimentConfig, raster: &CategoricalRaster) -> Result<ErrorReport> {
    config.validate_for(raster)?;
    let ks = &config.designs.partition_ks;
    let legends = &config.legends;
    let sets = design::shifted_unit_sets(raster, config.unit_side, &config.shifts)?;

    // Series: (legend index, protocol) × k.
    let series: Vec<(usize, Protocol)> = legends
        .iter()
        .enumerate()
        .flat_map(|(l, lg)| config.designs.protocols_for(lg).into_iter().map(move |p| (l, p)))
        .collect();
    let (ns, nk) = (series.len(), ks.len());

    let flat: Vec<(usize, SamplingUnit<'_>)> = sets
        .iter()
        .enumerate()
        .flat_map(|(s, set)| set.iter().map(move |u| (s, *u)))
        .collect();
    let per_unit: Vec<(UnitFacts, Vec<bool>)> = flat
        .par_iter()
        .map(|(_, unit)| -> Result<_> {
            let facts = unit_facts(&unit.true_proportions(), legends)?;
            let pc = PartitionCounts::new(unit, ks)?;
            let mut wrong = vec![false; ns * nk];
            for (ki, &k) in ks.iter().enumerate() {
                let cells = pc.cells(k)?;
                for (si, &(l, protocol)) in series.iter().enumerate() {
                    let label = design::label_from_partition(&cells, protocol, &legends[l])?;
                    wrong[si * nk + ki] = !label.agrees_with(&facts.truth[l]);
                }
            }
            Ok((facts, wrong))
        })
        .collect::<Result<_>>()?;

    let mut report = ErrorReport::default();
    for (si, &(l, protocol)) in series.iter().enumerate() {
        let design = design_name("partition", Some(protocol));
        for (ki, &k) in ks.iter().enumerate() {
            let mut wrong_per_set = vec![0usize; sets.len()];
            let mut rows = Vec::with_capacity(flat.len());
            for ((s, unit), (facts, wrong)) in flat.iter().zip(&per_unit) {
                let w = wrong[si * nk + ki];
                wrong_per_set[*s] += w as usize;
                rows.push((unit.origin_row(), unit.origin_col(), facts.pi[l], facts.erp, w as u8 as f64));
            }
            let per_real: Vec<f64> = wrong_per_set
                .iter()
                .zip(&sets)
                .map(|(&w, set)| w as f64 / set.len() as f64)
                .collect();
            series_rows(&mut report, &legends[l], &design, &protocol.to_string(), k, &per_real, &rows)?;
        }
    }
    Ok(report)
}

/// For each unit side, the fractions of offset-0 units whose dominant class
/// covers more than 90% and less than 50% of the unit.
pub fn purity_scalogram(raster: &CategoricalRaster, unit_sides: &[usize]) -> Result<Vec<ScalogramRow>> {
    unit_sides
        .iter()
        .map(|&side| {
            let units = extract_units(raster, side, 0, 0)?;
            if units.is_empty() {
                return Err(Error::NoUnits(format!("side {side}")));
            }
            let purities: Vec<f64> = units
                .par_iter()
                .map(|u| u.true_proportions().dominant().1)
                .collect();
            let n = purities.len() as f64;
            Ok(ScalogramRow {
                unit_side: side,
                frac_purity_gt_090: purities.iter().filter(|&&p| p > 0.9).count() as f64 / n,
                frac_purity_lt_050: purities.iter().filter(|&&p| p < 0.5).count() as f64 / n,
            })
        })
        .collect()
}

/// Runs every configured design family and the scalogram.
pub fn run_experiment(config: &ExperimentConfig, raster: &CategoricalRaster) -> Result<ErrorReport> {
    config.validate_for(raster)?;
    let mut report = ErrorReport::default();
    if !config.designs.point_counts.is_empty() {
        report.extend(run_point_experiment(config, raster)?);
    }
    if !config.designs.partition_ks.is_empty() {
        report.extend(run_partition_experiment(config, raster)?);
    }
    if !config.scalogram_sides.is_empty() {
        report.scalogram = purity_scalogram(raster, &config.scalogram_sides)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_config(raster: RasterSource, side: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(raster);
        c.unit_side = side;
        c
    }

    fn pure_source() -> RasterSource {
        RasterSource::PatchMosaic {
            width: 120,
            height: 120,
            class_count: 2,
            patch_density: 1.0,
            class_weights: vec![0.0, 1.0],
            seed: 1,
        }
    }

    #[test]
    fn pure_raster_has_zero_error_everywhere() {
        let mut cfg = binary_config(pure_source(), 60);
        cfg.designs.point_counts = vec![1, 4, 9];
        cfg.designs.partition_ks = vec![1, 2, 3];
        cfg.shifts = vec![0, 11];
        cfg.realizations = 5;
        let raster = cfg.raster.load().unwrap();
        let rep = run_experiment(&cfg, &raster).unwrap();
        assert!(!rep.designs.is_empty());
        assert!(rep.designs.iter().all(|r| r.overall_error == 0.0 && r.stderr == 0.0));
        assert!(rep.units.iter().all(|r| r.error_rate == 0.0));
    }

    #[test]
    fn k_equal_one_reproduces_true_labels() {
        let src = RasterSource::PatchMosaic {
            width: 200,
            height: 200,
            class_count: 3,
            patch_density: 20.0,
            class_weights: vec![1.0, 1.0, 1.0],
            seed: 4,
        };
        let mut cfg = binary_config(src, 40);
        cfg.designs.point_counts = vec![];
        cfg.designs.partition_ks = vec![1];
        cfg.shifts = vec![0, 22];
        cfg.legends = vec![
            Legend::Majority,
            Legend::binary(vec![1], 0.1),
            Legend::binary(vec![2], 0.5),
            Legend::binary(vec![2], 0.75),
        ];
        let raster = cfg.raster.load().unwrap();
        let rep = run_partition_experiment(&cfg, &raster).unwrap();
        for r in &rep.designs {
            // A single MTT cell applies the majority rule, so it only matches
            // the threshold rule at t = 0.5.
            if r.protocol == "MTT" && r.legend != "binary_t0.5_c2" {
                continue;
            }
            assert_eq!(r.overall_error, 0.0, "{r:?}");
        }
        let mtt = rep.design("binary_t0.1_c1", "partition_MTT", "MTT", 1).unwrap();
        assert!(mtt.overall_error > 0.0);
    }

    #[test]
    fn config_validation_names_fields() {
        let mut cfg = binary_config(pure_source(), 60);
        cfg.designs.partition_ks = vec![7];
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("partition_ks"), "{err}");
        cfg.designs.partition_ks = vec![];
        cfg.designs.point_counts = vec![3601];
        assert!(cfg.validate().unwrap_err().to_string().contains("point_counts"));
        cfg.designs.point_counts = vec![4];
        cfg.realizations = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scalogram_basics() {
        let r = CategoricalRaster::new(8, 8, 1.0, 3, vec![1; 64]).unwrap();
        for row in purity_scalogram(&r, &[2, 4, 8]).unwrap() {
            assert_eq!((row.frac_purity_gt_090, row.frac_purity_lt_050), (1.0, 0.0));
        }
        let values = (0..64).map(|i| ((i / 8 + i % 8) % 2) as u16).collect();
        let r = CategoricalRaster::new(8, 8, 1.0, 2, values).unwrap();
        let row = &purity_scalogram(&r, &[2]).unwrap()[0];
        assert_eq!((row.frac_purity_gt_090, row.frac_purity_lt_050), (0.0, 0.0));
        assert!(purity_scalogram(&r, &[9]).is_err());
    }

    #[test]
    fn json_config_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"raster":{"smoothed_binary":{"width":360,"height":360,"smoothing_radius":5,"cover_fraction":0.4,"seed":3}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.unit_side, 180);
        assert_eq!(cfg.realizations, 36);
        assert_eq!(cfg.shifts, DEFAULT_SHIFTS.to_vec());
        assert_eq!(cfg.designs.point_counts, DEFAULT_POINT_COUNTS.to_vec());
        assert_eq!(cfg.legends.len(), 4);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"raster":{"file":{"path":"x"}},"bogus":1}"#).is_err());
    }
}
