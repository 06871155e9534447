//! Response designs: random point sub-samples and regular k×k partitions.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::legend::{self, Label, Legend};
use crate::raster::{extract_units, CategoricalRaster, ProportionVector, SamplingUnit};
use crate::seed;

/// Grid-origin shifts (in cells) applied along both axes; their Cartesian
/// product gives 36 partition realizations.
pub const DEFAULT_SHIFTS: [usize; 6] = [22, 33, 44, 55, 66, 77];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "TTM")]
    Ttm,
    #[serde(rename = "MTT")]
    Mtt,
    #[serde(rename = "TwoStageMajority", alias = "majority")]
    TwoStageMajority,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Ttm => "TTM",
            Protocol::Mtt => "MTT",
            Protocol::TwoStageMajority => "TwoStageMajority",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ResponseDesign {
    #[serde(rename = "points")]
    PointBased { n: usize },
    #[serde(rename = "partition")]
    PartitionBased { k: usize, protocol: Protocol },
}

impl ResponseDesign {
    /// Number of sub-samples an interpreter labels.
    pub fn sub_samples(&self) -> usize {
        match *self {
            ResponseDesign::PointBased { n } => n,
            ResponseDesign::PartitionBased { k, .. } => k * k,
        }
    }

    /// `n` for point designs, `k` for partitions.
    pub fn size_parameter(&self) -> usize {
        match *self {
            ResponseDesign::PointBased { n } => n,
            ResponseDesign::PartitionBased { k, .. } => k,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ResponseDesign::PointBased { .. } => "points",
            ResponseDesign::PartitionBased { .. } => "partition",
        }
    }

    pub fn protocol_name(&self) -> String {
        match self {
            ResponseDesign::PointBased { .. } => "none".into(),
            ResponseDesign::PartitionBased { protocol, .. } => protocol.to_string(),
        }
    }

    /// Checks the design against a unit side.
    pub fn validate(&self, side: usize) -> Result<()> {
        match *self {
            ResponseDesign::PointBased { n } => {
                if n == 0 || n > side * side {
                    return Err(Error::InvalidArgument(format!(
                        "{n} points do not fit a unit of {} cells",
                        side * side
                    )));
                }
            }
            ResponseDesign::PartitionBased { k, .. } => {
                if k == 0 || !side.is_multiple_of(k) {
                    return Err(Error::InvalidArgument(format!(
                        "partition k = {k} does not divide unit side {side}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn check_legend(&self, legend: &Legend) -> Result<()> {
        let ok = match (self, legend) {
            (ResponseDesign::PointBased { .. }, _) => true,
            (ResponseDesign::PartitionBased { protocol, .. }, Legend::Majority) => {
                *protocol == Protocol::TwoStageMajority
            }
            (ResponseDesign::PartitionBased { protocol, .. }, Legend::Binary(_)) => {
                *protocol != Protocol::TwoStageMajority
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::DesignLegendMismatch {
                design: format!("{self:?}"),
                legend: legend.to_string(),
            })
        }
    }
}

/// One sampled cell, at unit-relative coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledPoint {
    pub row: usize,
    pub col: usize,
    pub class: u16,
}

/// Lazy uniform draw without replacement over `population` indices
/// (sparse Fisher-Yates). Each prefix of the stream is a uniform sample.
#[derive(Debug, Clone)]
pub struct IndexStream {
    population: u32,
    drawn: u32,
    displaced: HashMap<u32, u32>,
    rng: ChaCha8Rng,
}

impl IndexStream {
    pub fn new(population: usize, seed: u64) -> Self {
        Self {
            population: u32::try_from(population).expect("population fits in u32"),
            drawn: 0,
            displaced: HashMap::new(),
            rng: seed::rng(seed),
        }
    }

    pub fn drawn(&self) -> usize {
        self.drawn as usize
    }

    pub fn remaining(&self) -> usize {
        (self.population - self.drawn) as usize
    }
}

impl Iterator for IndexStream {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.drawn == self.population {
            return None;
        }
        let i = self.drawn;
        let j = self.rng.gen_range(i..self.population);
        let at_j = self.displaced.get(&j).copied().unwrap_or(j);
        let at_i = self.displaced.remove(&i).unwrap_or(i);
        if j != i {
            self.displaced.insert(j, at_i);
        }
        self.drawn += 1;
        Some(at_j as usize)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining(), Some(self.remaining()))
    }
}

/// Stream of distinct random cells of a unit, paired with their classes.
#[derive(Debug, Clone)]
pub struct PointStream<'a> {
    unit: SamplingUnit<'a>,
    indices: IndexStream,
}

impl<'a> PointStream<'a> {
    pub fn new(unit: SamplingUnit<'a>, seed: u64) -> Self {
        Self {
            unit,
            indices: IndexStream::new(unit.cell_count(), seed),
        }
    }
}

impl Iterator for PointStream<'_> {
    type Item = SampledPoint;

    fn next(&mut self) -> Option<SampledPoint> {
        let idx = self.indices.next()?;
        let (row, col) = (idx / self.unit.side(), idx % self.unit.side());
        Some(SampledPoint {
            row,
            col,
            class: self.unit.class_at(row, col),
        })
    }
}

/// `n` distinct cells drawn uniformly without replacement.
pub fn sample_points(unit: &SamplingUnit<'_>, n: usize, seed: u64) -> Result<Vec<SampledPoint>> {
    if n == 0 || n > unit.cell_count() {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {n} points from {} cells",
            unit.cell_count()
        )));
    }
    Ok(PointStream::new(*unit, seed).take(n).collect())
}

/// Exact class proportions of each of the k×k sub-squares, row-major.
pub fn partition_cells(unit: &SamplingUnit<'_>, k: usize) -> Result<Vec<ProportionVector>> {
    if k == 0 || !unit.side().is_multiple_of(k) {
        return Err(Error::InvalidArgument(format!(
            "partition k = {k} does not divide unit side {}",
            unit.side()
        )));
    }
    let block = unit.side() / k;
    let mut cells = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let counts = unit.block_counts(i * block, j * block, block);
            cells.push(ProportionVector::from_counts(&counts)?);
        }
    }
    Ok(cells)
}

/// Class counts of a unit on a regular grid of fine blocks, from which the
/// proportions of any partition whose block size is a multiple of the fine
/// block are assembled without rereading the raster.
#[derive(Debug, Clone)]
pub struct PartitionCounts {
    side: usize,
    fine: usize,
    grid: usize,
    classes: usize,
    counts: Vec<u64>,
}

impl PartitionCounts {
    /// Fine blocks are the largest size dividing `side / k` for every `k`.
    pub fn new(unit: &SamplingUnit<'_>, ks: &[usize]) -> Result<Self> {
        let side = unit.side();
        let mut fine = side;
        for &k in ks {
            if k == 0 || !side.is_multiple_of(k) {
                return Err(Error::InvalidArgument(format!(
                    "partition k = {k} does not divide unit side {side}"
                )));
            }
            fine = gcd(fine, side / k);
        }
        let grid = side / fine;
        let classes = unit.class_count();
        let mut counts = vec![0u64; grid * grid * classes];
        for r in 0..side {
            let gr = r / fine;
            for c in 0..side {
                let gc = c / fine;
                counts[(gr * grid + gc) * classes + unit.class_at(r, c) as usize] += 1;
            }
        }
        Ok(Self {
            side,
            fine,
            grid,
            classes,
            counts,
        })
    }

    /// Same result as [`partition_cells`] for any `k` passed to `new`.
    pub fn cells(&self, k: usize) -> Result<Vec<ProportionVector>> {
        if k == 0 || !self.side.is_multiple_of(k) || !(self.side / k).is_multiple_of(self.fine) {
            return Err(Error::InvalidArgument(format!(
                "partition k = {k} is not compatible with these counts"
            )));
        }
        let per = self.grid / k;
        let mut out = Vec::with_capacity(k * k);
        let mut acc = vec![0u64; self.classes];
        for i in 0..k {
            for j in 0..k {
                acc.iter_mut().for_each(|a| *a = 0);
                for gr in i * per..(i + 1) * per {
                    for gc in j * per..(j + 1) * per {
                        let base = (gr * self.grid + gc) * self.classes;
                        for (a, c) in acc.iter_mut().zip(&self.counts[base..base + self.classes]) {
                            *a += c;
                        }
                    }
                }
                out.push(ProportionVector::from_counts(&acc)?);
            }
        }
        Ok(out)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Label from a set of sampled points through their empirical proportions.
pub fn label_from_points(points: &[SampledPoint], class_count: usize, legend: &Legend) -> Label {
    let mut counts = vec![0u64; class_count];
    for p in points {
        counts[p.class as usize] += 1;
    }
    let p = ProportionVector::from_counts(&counts).expect("at least one point");
    legend::decide(&p, legend)
}

/// Label of a partition design, given precomputed cell proportions.
pub fn label_from_partition(cells: &[ProportionVector], protocol: Protocol, legend: &Legend) -> Result<Label> {
    match (protocol, legend) {
        (Protocol::Ttm, Legend::Binary(b)) => Ok(legend::aggregate_ttm(cells, b)),
        (Protocol::Mtt, Legend::Binary(b)) => Ok(legend::aggregate_mtt(cells, b)),
        (Protocol::TwoStageMajority, Legend::Majority) => Ok(legend::aggregate_majority_two_stage(cells)),
        _ => Err(Error::DesignLegendMismatch {
            design: protocol.to_string(),
            legend: legend.to_string(),
        }),
    }
}

/// One realization of a response design over a unit.
pub fn simulate_label(
    unit: &SamplingUnit<'_>,
    design: &ResponseDesign,
    legend: &Legend,
    seed: u64,
) -> Result<Label> {
    design.check_legend(legend)?;
    design.validate(unit.side())?;
    match *design {
        ResponseDesign::PointBased { n } => {
            let points = sample_points(unit, n, seed)?;
            Ok(label_from_points(&points, unit.class_count(), legend))
        }
        ResponseDesign::PartitionBased { k, protocol } => {
            label_from_partition(&partition_cells(unit, k)?, protocol, legend)
        }
    }
}

/// Unit sets for every (row shift, column shift) pair of `shifts`.
pub fn shifted_unit_sets<'a>(
    raster: &'a CategoricalRaster,
    side: usize,
    shifts: &[usize],
) -> Result<Vec<Vec<SamplingUnit<'a>>>> {
    if shifts.is_empty() {
        return Err(Error::InvalidArgument("empty shift list".into()));
    }
    let mut sets = Vec::with_capacity(shifts.len() * shifts.len());
    for &dy in shifts {
        for &dx in shifts {
            let units = extract_units(raster, side, dy, dx)?;
            if units.is_empty() {
                return Err(Error::NoUnits(format!(
                    "side {side} with shift ({dy}, {dx}) leaves no unit inside a {}x{} raster",
                    raster.width(),
                    raster.height()
                )));
            }
            sets.push(units);
        }
    }
    Ok(sets)
}
