//! One interactive labeling session: proposes sub-sample locations inside a
//! unit, takes class answers and runs the same stopping rule as the
//! simulations.

use serde::{Deserialize, Serialize};
use subsample_core::adaptive::{AdaptiveConfig, StopDecision, StopStatus, StoppingRule, TraceEntry};
use subsample_core::design::IndexStream;
use subsample_core::harness::DEFAULT_UNIT_SIDE;
use subsample_core::legend::{Label, Legend};
use subsample_core::stats::{self, ConfidenceInterval};

use crate::error::{ServiceError, ServiceResult};

pub const DEFAULT_ALPHA: f64 = 0.001;

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_n_init() -> usize {
    subsample_core::adaptive::DEFAULT_N_INIT
}
fn default_n_max() -> usize {
    subsample_core::adaptive::DEFAULT_N_MAX
}
fn default_increment() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitGeometry {
    /// Unit side in cells; proposals are drawn from the side² cell centres.
    pub side: usize,
}

/// Body of `POST /sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub legend: Legend,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_increment")]
    pub increment: usize,
    /// Number of classes the interpreter can choose from. Binary legends
    /// default to one past the largest target class (at least two).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<UnitGeometry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CreateSession {
    pub fn new(legend: Legend, alpha: f64) -> Self {
        Self {
            legend,
            alpha,
            n_init: default_n_init(),
            n_max: default_n_max(),
            increment: 1,
            class_count: None,
            unit: None,
            image_url: None,
            seed: None,
        }
    }

    pub fn config(&self) -> AdaptiveConfig {
        AdaptiveConfig {
            alpha: self.alpha,
            n_init: self.n_init,
            n_max: self.n_max,
            increment: self.increment,
            legend: self.legend.clone(),
        }
    }

    fn resolved_class_count(&self) -> ServiceResult<usize> {
        match (&self.legend, self.class_count) {
            (_, Some(k)) => Ok(k),
            (Legend::Binary(b), None) => Ok(b.classes.iter().max().map_or(2, |&c| (c + 1).max(2))),
            (Legend::Majority, None) => Err(ServiceError::InvalidRequest(
                "class_count: required for a majority legend".into(),
            )),
        }
    }

    fn resolved_side(&self) -> ServiceResult<usize> {
        match (self.unit, &self.image_url) {
            (Some(u), _) if u.side == 0 => Err(ServiceError::InvalidRequest("unit.side: must be positive".into())),
            (Some(u), _) => Ok(u.side),
            (None, Some(_)) => Ok(DEFAULT_UNIT_SIDE),
            (None, None) => Err(ServiceError::InvalidRequest(
                "unit: give unit.side or image_url".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Completed,
    Capped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Point {
    row: usize,
    col: usize,
    class: Option<usize>,
}

/// A proposed location as unit-relative fractions in [0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointView {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntervalView {
    Binomial(ConfidenceInterval),
    Simultaneous(Vec<ConfidenceInterval>),
}

/// Snapshot returned by every session endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub session_id: String,
    pub status: SessionStatus,
    pub legend: Legend,
    pub alpha: f64,
    pub n_init: usize,
    pub n_max: usize,
    /// Point budget: `min(n_max, side²)`.
    pub cap: usize,
    pub class_count: usize,
    pub unit: UnitGeometry,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub image_url: Option<String>,
    pub seed: u64,
    pub tallies: Vec<u64>,
    /// Empirical class shares; `null` before the first label.
    pub proportions: Option<Vec<f64>>,
    pub ci: IntervalView,
    /// Outcome of the most recent stop check, if one has run.
    pub decision: Option<StopDecision>,
    pub final_label: Option<Label>,
    pub n_used: usize,
    pub points: Vec<PointView>,
    pub proposed_points: Vec<PointView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceView {
    pub session_id: String,
    pub status: SessionStatus,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    request: CreateSession,
    seed: u64,
    side: usize,
    rule: StoppingRule,
    stream: IndexStream,
    points: Vec<Point>,
}

impl Session {
    /// Validates the request and proposes the initial batch. `seed` is used
    /// when the request carries none.
    pub fn create(id: String, mut request: CreateSession, seed: u64) -> ServiceResult<Self> {
        let seed = *request.seed.get_or_insert(seed);
        let side = request.resolved_side()?;
        let class_count = request.resolved_class_count()?;
        if class_count > usize::from(u16::MAX) + 1 {
            return Err(ServiceError::InvalidRequest(format!("class_count: {class_count} is too large")));
        }
        let population = side
            .checked_mul(side)
            .filter(|&p| u32::try_from(p).is_ok())
            .ok_or_else(|| ServiceError::InvalidRequest(format!("unit.side: {side} is too large")))?;
        let rule = StoppingRule::new(request.config(), class_count, population)
            .map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
        let mut session = Self {
            id,
            request,
            seed,
            side,
            rule,
            stream: IndexStream::new(population, seed),
            points: Vec::new(),
        };
        session.propose();
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// The request with its seed filled in; enough to rebuild the session.
    pub fn request(&self) -> &CreateSession {
        &self.request
    }

    pub fn rule(&self) -> &StoppingRule {
        &self.rule
    }

    pub fn status(&self) -> SessionStatus {
        match self.rule.last_decision().map(|d| d.status) {
            Some(StopStatus::StopConfident) => SessionStatus::Completed,
            Some(StopStatus::StopCapped) => SessionStatus::Capped,
            _ => SessionStatus::Active,
        }
    }

    pub fn pending(&self) -> impl Iterator<Item = usize> + '_ {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.class.is_none())
            .map(|(i, _)| i)
    }

    fn propose(&mut self) {
        for _ in 0..self.rule.next_batch() {
            let idx = self.stream.next().expect("the cap never exceeds the unit size");
            self.points.push(Point {
                row: idx / self.side,
                col: idx % self.side,
                class: None,
            });
        }
    }

    /// Records the interpreter's class for a proposed point. Nothing changes
    /// when the call fails.
    pub fn submit_label(&mut self, point_index: usize, class: usize) -> ServiceResult<()> {
        if self.status() != SessionStatus::Active {
            return Err(ServiceError::Conflict(format!("session {} is already finished", self.id)));
        }
        let point = self
            .points
            .get(point_index)
            .ok_or_else(|| ServiceError::InvalidRequest(format!("point_index: no proposed point {point_index}")))?;
        if point.class.is_some() {
            return Err(ServiceError::Conflict(format!("point {point_index} is already labeled")));
        }
        let class_count = self.rule.tallies().len();
        if class >= class_count {
            return Err(ServiceError::InvalidRequest(format!(
                "class: {class} is not below the class count {class_count}"
            )));
        }
        self.rule.record(class).map_err(|e| ServiceError::Conflict(e.to_string()))?;
        self.points[point_index].class = Some(class);
        if self.pending().next().is_none() {
            let decision = self.rule.evaluate().map_err(|e| ServiceError::Internal(e.to_string()))?;
            if !decision.status.is_stop() {
                self.propose();
            }
        }
        Ok(())
    }

    fn point_view(&self, index: usize) -> PointView {
        let p = self.points[index];
        let side = self.side as f64;
        PointView {
            index,
            x: (p.col as f64 + 0.5) / side,
            y: (p.row as f64 + 0.5) / side,
            class: p.class,
        }
    }

    /// Confidence intervals recomputed from the current tallies: the
    /// Clopper-Pearson interval of the target share for binary legends, the
    /// simultaneous intervals of every class share otherwise.
    pub fn intervals(&self) -> IntervalView {
        let tallies = self.rule.tallies();
        let n: u64 = tallies.iter().sum();
        let alpha = self.request.alpha;
        let level = 1.0 - alpha;
        match &self.request.legend {
            Legend::Binary(b) => {
                if n == 0 {
                    return IntervalView::Binomial(ConfidenceInterval::full(level));
                }
                let m: u64 = b.classes.iter().map(|&c| tallies[c]).sum();
                IntervalView::Binomial(stats::clopper_pearson(m, n, alpha).expect("validated alpha"))
            }
            Legend::Majority => {
                if n == 0 {
                    return IntervalView::Simultaneous(vec![ConfidenceInterval::full(level); tallies.len()]);
                }
                IntervalView::Simultaneous(stats::goodman_intervals(tallies, alpha).expect("validated alpha"))
            }
        }
    }

    pub fn view(&self) -> StateView {
        let decision = self.rule.last_decision().cloned();
        let final_label = decision.as_ref().filter(|d| d.status.is_stop()).and_then(|d| d.label);
        StateView {
            session_id: self.id.clone(),
            status: self.status(),
            legend: self.request.legend.clone(),
            alpha: self.request.alpha,
            n_init: self.request.n_init,
            n_max: self.request.n_max,
            cap: self.rule.cap(),
            class_count: self.rule.tallies().len(),
            unit: UnitGeometry { side: self.side },
            image_url: self.request.image_url.clone(),
            seed: self.seed,
            tallies: self.rule.tallies().to_vec(),
            proportions: self.rule.proportions().map(|p| p.as_slice().to_vec()),
            ci: self.intervals(),
            decision,
            final_label,
            n_used: self.rule.labeled(),
            points: (0..self.points.len()).map(|i| self.point_view(i)).collect(),
            proposed_points: self.pending().map(|i| self.point_view(i)).collect(),
        }
    }

    pub fn trace(&self) -> TraceView {
        TraceView {
            session_id: self.id.clone(),
            status: self.status(),
            trace: self.rule.trace().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use subsample_core::legend::LabelValue;

    fn binary_request(t: f64, alpha: f64) -> CreateSession {
        let mut r = CreateSession::new(Legend::binary(vec![1], t), alpha);
        r.unit = Some(UnitGeometry { side: 180 });
        r.seed = Some(7);
        r
    }

    fn label_all_pending(s: &mut Session, class: usize) {
        let pending: Vec<usize> = s.pending().collect();
        for i in pending {
            s.submit_label(i, class).unwrap();
        }
    }

    #[test]
    fn default_session_proposes_nine_points() {
        let s = Session::create("a".into(), binary_request(0.5, 0.001), 0).unwrap();
        let v = s.view();
        assert_eq!(v.proposed_points.len(), 9);
        assert_eq!(v.n_used, 0);
        assert_eq!(v.status, SessionStatus::Active);
        assert_eq!(v.tallies, vec![0, 0]);
        assert_eq!(v.proportions, None);
        assert_eq!(v.ci, IntervalView::Binomial(ConfidenceInterval::full(0.999)));
        for p in &v.proposed_points {
            assert!((0.0..1.0).contains(&p.x) && (0.0..1.0).contains(&p.y));
        }
    }

    #[test]
    fn single_initial_point() {
        let mut r = binary_request(0.5, 0.1);
        r.n_init = 1;
        let s = Session::create("a".into(), r, 0).unwrap();
        assert_eq!(s.view().proposed_points.len(), 1);
    }

    #[test]
    fn same_seed_same_locations() {
        let a = Session::create("a".into(), binary_request(0.5, 0.1), 0).unwrap();
        let b = Session::create("b".into(), binary_request(0.5, 0.1), 0).unwrap();
        assert_eq!(a.view().proposed_points, b.view().proposed_points);
        let mut other = binary_request(0.5, 0.1);
        other.seed = Some(8);
        let c = Session::create("c".into(), other, 0).unwrap();
        assert_ne!(a.view().proposed_points, c.view().proposed_points);
    }

    #[test]
    fn nine_forest_labels_complete_the_session() {
        let mut s = Session::create("a".into(), binary_request(0.5, 0.1), 0).unwrap();
        label_all_pending(&mut s, 1);
        let v = s.view();
        assert_eq!(v.status, SessionStatus::Completed);
        assert_eq!(v.n_used, 9);
        assert_eq!(v.final_label.unwrap().value, LabelValue::Presence(true));
        assert!(v.proposed_points.is_empty());
        match v.ci {
            IntervalView::Binomial(ci) => assert!((ci.lower - 0.05f64.powf(1.0 / 9.0)).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_labels_continue_with_one_new_point() {
        let mut s = Session::create("a".into(), binary_request(0.5, 0.1), 0).unwrap();
        let pending: Vec<usize> = s.pending().collect();
        for (j, i) in pending.into_iter().enumerate() {
            s.submit_label(i, usize::from(j < 5)).unwrap();
        }
        let v = s.view();
        assert_eq!(v.status, SessionStatus::Active);
        assert_eq!(v.proposed_points.len(), 1);
        assert_eq!(v.proposed_points[0].index, 9);
        assert_eq!(v.decision.unwrap().status, StopStatus::Continue);
    }

    #[test]
    fn failed_calls_leave_state_unchanged() {
        let mut s = Session::create("a".into(), binary_request(0.5, 0.1), 0).unwrap();
        s.submit_label(0, 1).unwrap();
        let before = s.view();
        assert!(matches!(s.submit_label(0, 0), Err(ServiceError::Conflict(_))));
        assert!(matches!(s.submit_label(99, 0), Err(ServiceError::InvalidRequest(_))));
        assert!(matches!(s.submit_label(1, 2), Err(ServiceError::InvalidRequest(_))));
        assert_eq!(s.view(), before);
    }

    #[test]
    fn finished_sessions_reject_labels_and_stay_put() {
        let mut s = Session::create("a".into(), binary_request(0.5, 0.1), 0).unwrap();
        label_all_pending(&mut s, 0);
        let v = s.view();
        assert_eq!(v.final_label.unwrap().value, LabelValue::Presence(false));
        assert!(matches!(s.submit_label(0, 0), Err(ServiceError::Conflict(_))));
        assert_eq!(s.view(), v);
        assert_eq!(s.view(), v);
    }

    #[test]
    fn snapshot_interval_is_recomputed_between_checks() {
        let mut s = Session::create("a".into(), binary_request(0.5, 0.01), 0).unwrap();
        s.submit_label(0, 1).unwrap();
        s.submit_label(1, 0).unwrap();
        s.submit_label(2, 1).unwrap();
        assert!(s.view().decision.is_none());
        let expected = stats::clopper_pearson(2, 3, 0.01).unwrap();
        assert_eq!(s.view().ci, IntervalView::Binomial(expected));
    }

    #[test]
    fn majority_sessions_report_simultaneous_intervals() {
        let mut r = CreateSession::new(Legend::Majority, 0.05);
        r.unit = Some(UnitGeometry { side: 30 });
        assert!(matches!(
            Session::create("m".into(), r.clone(), 1),
            Err(ServiceError::InvalidRequest(_))
        ));
        r.class_count = Some(3);
        let mut s = Session::create("m".into(), r, 1).unwrap();
        let v = s.view();
        assert_eq!(v.ci, IntervalView::Simultaneous(vec![ConfidenceInterval::full(0.95); 3]));
        assert_eq!(v.seed, 1);
        label_all_pending(&mut s, 2);
        let v = s.view();
        assert_eq!(v.status, SessionStatus::Completed);
        let expected = stats::goodman_intervals(&[0, 0, 9], 0.05).unwrap();
        assert_eq!(v.ci, IntervalView::Simultaneous(expected));
    }

    #[test]
    fn tiny_unit_caps_at_its_cell_count() {
        let mut r = binary_request(0.5, 0.001);
        r.unit = Some(UnitGeometry { side: 3 });
        let mut s = Session::create("t".into(), r, 0).unwrap();
        assert_eq!(s.view().cap, 9);
        label_all_pending(&mut s, 1);
        // 9 of 9 at alpha = 0.001 is not confident, but the unit is exhausted.
        let v = s.view();
        assert_eq!(v.status, SessionStatus::Capped);
        assert_eq!(v.final_label.unwrap().value, LabelValue::Presence(true));
        let cells: std::collections::HashSet<_> = v.points.iter().map(|p| ((p.x * 3.0) as usize, (p.y * 3.0) as usize)).collect();
        assert_eq!(cells.len(), 9);
    }

    #[test]
    fn request_validation() {
        let mut r = binary_request(0.5, 1.5);
        assert!(Session::create("x".into(), r.clone(), 0).is_err());
        r.alpha = 0.1;
        r.unit = None;
        assert!(Session::create("x".into(), r.clone(), 0).is_err());
        r.image_url = Some("https://example.org/tile.png".into());
        let s = Session::create("x".into(), r.clone(), 0).unwrap();
        assert_eq!(s.view().unit.side, DEFAULT_UNIT_SIDE);
        r.unit = Some(UnitGeometry { side: 0 });
        assert!(Session::create("x".into(), r, 0).is_err());
    }
}
