//! Legends and label decision rules, including the two partition
//! aggregation protocols for binary legends.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::ProportionVector;

/// Proportions closer than this are treated as equal by the decision rules.
/// Far below the resolution of any count-based proportion.
pub const RULE_TOLERANCE: f64 = 1e-12;

/// Presence of a set of target classes at or above a cover threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryThreshold {
    pub classes: Vec<usize>,
    pub threshold: f64,
}

impl BinaryThreshold {
    pub fn new(classes: Vec<usize>, threshold: f64) -> Self {
        Self { classes, threshold }
    }

    /// Summed proportion of the target classes.
    pub fn target_share(&self, p: &ProportionVector) -> f64 {
        self.classes.iter().map(|&c| p.get(c)).sum()
    }

    pub fn is_target(&self, class: usize) -> bool {
        self.classes.contains(&class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Legend {
    #[serde(rename = "binary")]
    Binary(BinaryThreshold),
    #[serde(rename = "majority")]
    Majority,
}

impl Legend {
    pub fn binary(classes: Vec<usize>, threshold: f64) -> Self {
        Legend::Binary(BinaryThreshold::new(classes, threshold))
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        match self {
            Legend::Majority => Ok(()),
            Legend::Binary(b) => {
                if !(b.threshold > 0.0 && b.threshold < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "binary threshold must lie in (0, 1), got {}",
                        b.threshold
                    )));
                }
                if b.classes.is_empty() {
                    return Err(Error::InvalidArgument("binary legend has no target class".into()));
                }
                if let Some(c) = b.classes.iter().find(|&&c| c >= class_count) {
                    return Err(Error::InvalidArgument(format!(
                        "target class {c} not below class count {class_count}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Legend::Binary(_))
    }
}

impl fmt::Display for Legend {
    /// Compact identifier used in report files, e.g. `binary_t0.1_c1+2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Legend::Majority => f.write_str("majority"),
            Legend::Binary(b) => {
                write!(f, "binary_t{}_c", b.threshold)?;
                for (i, c) in b.classes.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    write!(f, "{c}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelValue {
    Class(usize),
    Presence(bool),
}

impl fmt::Display for LabelValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelValue::Class(c) => write!(f, "class {c}"),
            LabelValue::Presence(true) => f.write_str("present"),
            LabelValue::Presence(false) => f.write_str("absent"),
        }
    }
}

/// A unit label. `tie` records that the rule had to break an exact tie.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub value: LabelValue,
    pub tie: bool,
}

impl Label {
    pub fn class(class: usize, tie: bool) -> Self {
        Self {
            value: LabelValue::Class(class),
            tie,
        }
    }

    pub fn presence(present: bool, tie: bool) -> Self {
        Self {
            value: LabelValue::Presence(present),
            tie,
        }
    }

    /// Same decided value, ignoring the tie flag.
    pub fn agrees_with(&self, other: &Label) -> bool {
        self.value == other.value
    }
}

/// Argmax with ties to the lowest index; the flag reports an exact tie.
fn majority_of(values: &[f64]) -> (usize, bool) {
    let (best, max) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let tied = values
        .iter()
        .enumerate()
        .any(|(i, &v)| i != best && (max - v).abs() <= RULE_TOLERANCE);
    (best, tied)
}

fn binary_present(share: f64, threshold: f64) -> bool {
    share >= threshold - RULE_TOLERANCE
}

pub fn decide(proportions: &ProportionVector, legend: &Legend) -> Label {
    match legend {
        Legend::Binary(b) => Label::presence(binary_present(b.target_share(proportions), b.threshold), false),
        Legend::Majority => {
            let (class, tie) = majority_of(proportions.as_slice());
            Label::class(class, tie)
        }
    }
}

/// Threshold-Then-Majority: threshold each cell, then majority of cells.
/// Exactly half the cells present resolves to absent with the tie flag.
pub fn aggregate_ttm(cells: &[ProportionVector], legend: &BinaryThreshold) -> Label {
    assert!(!cells.is_empty(), "TTM needs at least one cell");
    let present = cells
        .iter()
        .filter(|p| binary_present(legend.target_share(p), legend.threshold))
        .count();
    let n = cells.len();
    Label::presence(2 * present > n, 2 * present == n)
}

/// Majority-Then-Threshold: a cell is present when the target classes hold
/// strictly more than half of it; the unit is present when the fraction of
/// present cells reaches the threshold. A cell at exactly one half sets the
/// tie flag.
pub fn aggregate_mtt(cells: &[ProportionVector], legend: &BinaryThreshold) -> Label {
    assert!(!cells.is_empty(), "MTT needs at least one cell");
    let mut present = 0usize;
    let mut tie = false;
    for p in cells {
        let share = legend.target_share(p);
        if (share - 0.5).abs() <= RULE_TOLERANCE {
            tie = true;
        } else if share > 0.5 {
            present += 1;
        }
    }
    let fraction = present as f64 / cells.len() as f64;
    Label::presence(binary_present(fraction, legend.threshold), tie)
}

/// Majority class per cell, then majority vote among the cell labels.
pub fn aggregate_majority_two_stage(cells: &[ProportionVector]) -> Label {
    assert!(!cells.is_empty(), "two-stage majority needs at least one cell");
    let k = cells[0].len();
    let mut votes = vec![0.0f64; k];
    let mut tie = false;
    for p in cells {
        let (c, t) = majority_of(p.as_slice());
        votes[c] += 1.0;
        tie |= t;
    }
    let (class, t) = majority_of(&votes);
    Label::class(class, tie || t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProportionVector {
        ProportionVector::new(v.to_vec()).unwrap()
    }

    fn forest(share: f64) -> ProportionVector {
        pv(&[share, 1.0 - share])
    }

    fn t(threshold: f64) -> BinaryThreshold {
        BinaryThreshold::new(vec![0], threshold)
    }

    #[test]
    fn binary_rule_is_inclusive() {
        let l = Legend::Binary(t(0.5));
        assert_eq!(decide(&pv(&[1.0, 0.0]), &l), Label::presence(true, false));
        let l = Legend::Binary(t(0.10));
        assert_eq!(decide(&pv(&[0.0999, 0.9001]), &l).value, LabelValue::Presence(false));
        assert_eq!(decide(&pv(&[0.10, 0.90]), &l).value, LabelValue::Presence(true));
    }

    #[test]
    fn majority_tie_goes_low_with_flag() {
        let l = decide(&pv(&[0.4, 0.4, 0.2]), &Legend::Majority);
        assert_eq!(l, Label::class(0, true));
        assert_eq!(decide(&pv(&[0.2, 0.5, 0.3]), &Legend::Majority), Label::class(1, false));
    }

    /// 12×12 unit split 3×3 into 4×4 cells; a compact 5×5 forest patch in the
    /// top-left corner covers one cell fully and 9 of 16 pixels of the next.
    fn compact_patch_cells() -> Vec<ProportionVector> {
        let mut shares = vec![0.0; 9];
        shares[0] = 1.0;
        shares[1] = 9.0 / 16.0;
        shares.into_iter().map(forest).collect()
    }

    #[test]
    fn compact_patch_ttm_misses_mtt_hits() {
        let cells = compact_patch_cells();
        let true_share = (16.0 + 9.0) / 144.0;
        assert!(true_share >= 0.10);
        assert_eq!(aggregate_ttm(&cells, &t(0.10)).value, LabelValue::Presence(false));
        assert_eq!(aggregate_mtt(&cells, &t(0.10)), Label::presence(true, false));
    }

    #[test]
    fn scattered_forest_ttm_hits_mtt_misses() {
        let cells: Vec<_> = (0..9).map(|_| forest(3.0 / 16.0)).collect();
        assert_eq!(aggregate_ttm(&cells, &t(0.10)), Label::presence(true, false));
        assert_eq!(aggregate_mtt(&cells, &t(0.10)).value, LabelValue::Presence(false));
    }

    #[test]
    fn pure_cells() {
        let all: Vec<_> = (0..4).map(|_| forest(1.0)).collect();
        let none: Vec<_> = (0..4).map(|_| forest(0.0)).collect();
        assert_eq!(aggregate_ttm(&all, &t(0.75)).value, LabelValue::Presence(true));
        assert_eq!(aggregate_mtt(&none, &t(0.1)).value, LabelValue::Presence(false));
    }

    #[test]
    fn ttm_half_cells_is_a_tie() {
        let cells = vec![forest(1.0), forest(1.0), forest(0.0), forest(0.0)];
        assert_eq!(aggregate_ttm(&cells, &t(0.5)), Label::presence(false, true));
    }

    #[test]
    fn mtt_half_cell_is_a_tie() {
        let cells = vec![forest(0.5), forest(1.0), forest(0.0)];
        assert_eq!(aggregate_mtt(&cells, &t(0.3)), Label::presence(true, true));
    }

    #[test]
    fn two_stage_majority() {
        let c2 = pv(&[0.0, 0.0, 1.0]);
        assert_eq!(aggregate_majority_two_stage(&[c2.clone(), c2]), Label::class(2, false));

        let cells = vec![
            pv(&[1.0, 0.0, 0.0]),
            pv(&[0.6, 0.4, 0.0]),
            pv(&[0.0, 1.0, 0.0]),
            pv(&[0.0, 0.0, 1.0]),
        ];
        assert_eq!(aggregate_majority_two_stage(&cells), Label::class(0, false));
    }

    #[test]
    fn two_stage_majority_differs_from_direct_majority() {
        // Five equal cells: class 0 wins three with 51%, class 1 owns two.
        let mut cells: Vec<_> = (0..3).map(|_| pv(&[0.51, 0.49])).collect();
        cells.extend((0..2).map(|_| pv(&[0.0, 1.0])));
        let direct: Vec<f64> = (0..2)
            .map(|c| cells.iter().map(|p| p.get(c)).sum::<f64>() / 5.0)
            .collect();
        // 3·0.51/5 = 0.306 for class 0 against 0.694 for class 1.
        assert!((direct[0] - 0.306).abs() < 1e-12);
        assert_eq!(aggregate_majority_two_stage(&cells), Label::class(0, false));
        assert_eq!(decide(&pv(&direct), &Legend::Majority), Label::class(1, false));
    }

    #[test]
    fn legend_json_shapes() {
        let b: Legend = serde_json_like(r#"{"type":"binary","classes":[1,2],"threshold":0.5}"#);
        assert_eq!(b, Legend::binary(vec![1, 2], 0.5));
        let m: Legend = serde_json_like(r#"{"type":"majority"}"#);
        assert_eq!(m, Legend::Majority);
        assert_eq!(b.to_string(), "binary_t0.5_c1+2");
    }

    fn serde_json_like(s: &str) -> Legend {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn validation() {
        assert!(Legend::binary(vec![0], 0.0).validate(2).is_err());
        assert!(Legend::binary(vec![0], 1.0).validate(2).is_err());
        assert!(Legend::binary(vec![], 0.5).validate(2).is_err());
        assert!(Legend::binary(vec![2], 0.5).validate(2).is_err());
        assert!(Legend::binary(vec![1], 0.5).validate(2).is_ok());
        assert!(Legend::Majority.validate(5).is_ok());
    }

    fn cells_strategy() -> impl Strategy<Value = Vec<ProportionVector>> {
        // Shares on a 1/16 grid so exact-half cells occur.
        proptest::collection::vec(0u32..=16, 1..30)
            .prop_map(|v| v.into_iter().map(|s| forest(s as f64 / 16.0)).collect())
    }

    proptest! {
        #[test]
        fn ttm_equals_mtt_at_half_outside_ties(cells in cells_strategy()) {
            let ttm = aggregate_ttm(&cells, &t(0.5));
            let mtt = aggregate_mtt(&cells, &t(0.5));
            if !ttm.tie && !mtt.tie {
                prop_assert_eq!(ttm.value, mtt.value);
            }
        }

        #[test]
        fn raising_a_cell_never_removes_presence(
            cells in cells_strategy(),
            idx in 0usize..30,
            threshold in prop_oneof![Just(0.1), Just(0.5), Just(0.75), 0.05f64..0.95],
        ) {
            let idx = idx % cells.len();
            let mut raised = cells.clone();
            raised[idx] = forest((cells[idx].get(0) + 0.25).min(1.0));
            for agg in [aggregate_ttm, aggregate_mtt] {
                let before = agg(&cells, &t(threshold));
                let after = agg(&raised, &t(threshold));
                if before.value == LabelValue::Presence(true) {
                    prop_assert_eq!(after.value, LabelValue::Presence(true));
                }
            }
        }

        #[test]
        fn binary_label_ignores_non_target_split(
            target in 0.0f64..1.0, split in 0.0f64..1.0, threshold in 0.01f64..0.99,
        ) {
            let rest = 1.0 - target;
            let a = pv(&[target, rest * split, rest * (1.0 - split)]);
            let b = pv(&[target, rest * (1.0 - split), rest * split]);
            let l = Legend::binary(vec![0], threshold);
            prop_assert_eq!(decide(&a, &l), decide(&b, &l));
        }
    }
}
