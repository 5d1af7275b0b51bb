//! Spatial Classifier: one segment per active movement, running from the
//! rest centroid to that movement's centroid; a point takes the label of
//! the nearest segment, or Rest if its projection lands close to the anchor.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::movement::Movement;
use crate::signal::{EmgWindow, FeatureExtractor, FeatureVector};
use crate::subspace::SubspaceModel;

pub const DEFAULT_REST_THRESHOLD: f64 = 0.15;

/// Axes shorter than this are rejected as degenerate.
pub const MIN_AXIS_LENGTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub movement: Movement,
    pub tip: Vec<f64>,
    direction: Vec<f64>,
    length_sq: f64,
}

impl Axis {
    /// `t·(tip − anchor) + anchor`.
    pub fn point_at(&self, anchor: &[f64], t: f64) -> Vec<f64> {
        anchor.iter().zip(&self.direction).map(|(a, d)| a + t * d).collect()
    }
}

/// Segments sharing the rest anchor, sorted by movement id.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisSet {
    anchor: Vec<f64>,
    axes: Vec<Axis>,
}

impl AxisSet {
    pub fn from_centroids(rest: Vec<f64>, mut tips: Vec<(Movement, Vec<f64>)>) -> Result<Self> {
        if tips.is_empty() {
            return Err(Error::EmptyAxisSet);
        }
        tips.sort_by_key(|(m, _)| *m);
        let mut axes = Vec::with_capacity(tips.len());
        for (movement, tip) in tips {
            if movement == Movement::Rest {
                continue;
            }
            if tip.len() != rest.len() {
                return Err(Error::DimensionMismatch {
                    expected: rest.len(),
                    actual: tip.len(),
                });
            }
            let direction: Vec<f64> = tip.iter().zip(&rest).map(|(t, r)| t - r).collect();
            let length_sq: f64 = direction.iter().map(|v| v * v).sum();
            if !(length_sq.sqrt() >= MIN_AXIS_LENGTH) {
                return Err(Error::DegenerateAxis(movement));
            }
            axes.push(Axis {
                movement,
                tip,
                direction,
                length_sq,
            });
        }
        if axes.is_empty() {
            return Err(Error::EmptyAxisSet);
        }
        Ok(AxisSet { anchor: rest, axes })
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn movements(&self) -> impl Iterator<Item = Movement> + '_ {
        self.axes.iter().map(|a| a.movement)
    }
}

pub fn build_axes(model: &SubspaceModel) -> Result<AxisSet> {
    let rest = model
        .centroid(Movement::Rest)
        .ok_or(Error::MissingClass(Movement::Rest))?
        .to_vec();
    let tips = model
        .classes()
        .iter()
        .filter(|c| c.movement != Movement::Rest)
        .map(|c| (c.movement, c.centroid[..model.p()].to_vec()))
        .collect::<Vec<_>>();
    AxisSet::from_centroids(rest, tips)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub label: Movement,
    pub winning_axis: Option<Movement>,
    /// Clamped projection parameter on the winning axis.
    pub t_star: f64,
    /// Distance to the winning segment.
    pub distance: f64,
    /// Runner-up distance minus winning distance; absent with a single axis.
    pub margin: Option<f64>,
}

impl Decision {
    pub fn rest() -> Self {
        Decision {
            label: Movement::Rest,
            winning_axis: None,
            t_star: 0.0,
            distance: 0.0,
            margin: None,
        }
    }
}

/// Clamped segment parameter and distance of `y` to one axis.
pub fn segment_distance(anchor: &[f64], axis: &Axis, y: &[f64]) -> (f64, f64) {
    let dot: f64 = y
        .iter()
        .zip(anchor)
        .zip(&axis.direction)
        .map(|((y, a), d)| (y - a) * d)
        .sum();
    let t = (dot / axis.length_sq).clamp(0.0, 1.0);
    let dist_sq: f64 = y
        .iter()
        .zip(anchor)
        .zip(&axis.direction)
        .map(|((y, a), d)| {
            let r = y - (a + t * d);
            r * r
        })
        .sum();
    (t, dist_sq.sqrt())
}

pub fn classify(axes: &AxisSet, y: &[f64], t_rest: f64) -> Result<Decision> {
    if axes.is_empty() {
        return Err(Error::EmptyAxisSet);
    }
    if !(0.0..1.0).contains(&t_rest) {
        return Err(Error::InvalidArgument(format!(
            "rest threshold {t_rest} outside [0, 1)"
        )));
    }
    if y.len() != axes.dim() {
        return Err(Error::DimensionMismatch {
            expected: axes.dim(),
            actual: y.len(),
        });
    }
    let mut best: Option<(usize, f64, f64)> = None;
    let mut runner_up = f64::INFINITY;
    for (i, axis) in axes.axes.iter().enumerate() {
        let (t, d) = segment_distance(&axes.anchor, axis, y);
        match best {
            // strict comparison keeps the lowest movement id on ties
            Some((_, _, best_d)) if d >= best_d => runner_up = runner_up.min(d),
            Some((_, _, best_d)) => {
                runner_up = best_d;
                best = Some((i, t, d));
            }
            None => best = Some((i, t, d)),
        }
    }
    let (idx, t_star, distance) = best.expect("axis set is non-empty");
    let winner = axes.axes[idx].movement;
    Ok(Decision {
        label: if t_star < t_rest { Movement::Rest } else { winner },
        winning_axis: Some(winner),
        t_star,
        distance,
        margin: runner_up.is_finite().then_some(runner_up - distance),
    })
}

/// Majority vote over the last `m` labels. On a tie the previous output is
/// kept if it is among the leaders, otherwise the most recent leader wins.
#[derive(Debug, Clone)]
pub struct MajorityVote {
    size: usize,
    history: VecDeque<Movement>,
    last: Option<Movement>,
}

impl MajorityVote {
    pub fn new(size: usize) -> Self {
        MajorityVote {
            size: size.max(1),
            history: VecDeque::with_capacity(size.max(1)),
            last: None,
        }
    }

    pub fn push(&mut self, label: Movement) -> Movement {
        if self.history.len() == self.size {
            self.history.pop_front();
        }
        self.history.push_back(label);
        let mut counts = [0usize; Movement::ALL.len()];
        for m in &self.history {
            counts[m.id() as usize] += 1;
        }
        let top = counts.iter().copied().max().unwrap_or(0);
        let out = match self.last {
            Some(prev) if counts[prev.id() as usize] == top => prev,
            _ => *self
                .history
                .iter()
                .rev()
                .find(|m| counts[m.id() as usize] == top)
                .expect("history is non-empty"),
        };
        self.last = Some(out);
        out
    }
}

/// Model, axes and decision settings bundled for the live loop. Cloning is
/// cheap; recalibration swaps in a whole new `Decoder`.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub model: Arc<SubspaceModel>,
    pub axes: Arc<AxisSet>,
    pub t_rest: f64,
}

impl Decoder {
    pub fn new(model: SubspaceModel, t_rest: f64) -> Result<Self> {
        let axes = build_axes(&model)?;
        Ok(Decoder {
            model: Arc::new(model),
            axes: Arc::new(axes),
            t_rest,
        })
    }

    pub fn decide(&self, features: &[f64]) -> Result<Decision> {
        classify(&self.axes, &self.model.project(features)?, self.t_rest)
    }

    /// Decision plus Reviewer coordinates for one window.
    pub fn decode_window(
        &self,
        extractor: &mut FeatureExtractor,
        window: &EmgWindow,
    ) -> Result<(FeatureVector, Decision, [f64; 3])> {
        let features = extractor.extract(window);
        let decision = self.decide(&features.values)?;
        let coords = self.model.reviewer_coords(&features.values)?;
        Ok((features, decision, coords))
    }
}

/// One decision per feature vector, in order; `smoothing` enables a
/// majority vote over that many decisions.
pub fn decision_stream(
    model: &SubspaceModel,
    axes: &AxisSet,
    features: &[FeatureVector],
    t_rest: f64,
    smoothing: Option<usize>,
) -> Result<Vec<Decision>> {
    let mut vote = smoothing.map(MajorityVote::new);
    features
        .iter()
        .map(|f| {
            let mut d = classify(axes, &model.project(&f.values)?, t_rest)?;
            if let Some(v) = vote.as_mut() {
                d.label = v.push(d.label);
            }
            Ok(d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::tests::gaussian_set;
    use crate::subspace::{fit_lda, Regularization};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_axes(rng: &mut ChaCha8Rng, p: usize, k: usize) -> AxisSet {
        let rest: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tips = Movement::ALL[1..k]
            .iter()
            .map(|m| (*m, (0..p).map(|_| rng.random_range(-5.0..5.0)).collect()))
            .collect();
        AxisSet::from_centroids(rest, tips).unwrap()
    }

    fn grid_oracle(axes: &AxisSet, y: &[f64]) -> (Movement, f64) {
        let mut best = (Movement::Rest, f64::INFINITY);
        for axis in axes.axes() {
            for step in 0..=10_000 {
                let t = step as f64 * 1e-4;
                let p = axis.point_at(axes.anchor(), t);
                let d = p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if d < best.1 {
                    best = (axis.movement, d);
                }
            }
        }
        best
    }

    #[test]
    fn endpoints() {
        let axes = AxisSet::from_centroids(
            vec![0.0, 0.0],
            vec![
                (Movement::PowerGrasp, vec![2.0, 0.0]),
                (Movement::HandOpen, vec![0.0, 3.0]),
            ],
        )
        .unwrap();
        let a = &axes.axes()[1];
        assert_eq!(a.point_at(axes.anchor(), 0.0), vec![0.0, 0.0]);
        assert_eq!(a.point_at(axes.anchor(), 1.0), vec![2.0, 0.0]);

        let d = classify(&axes, &[2.0, 0.0], 0.15).unwrap();
        assert_eq!(d.label, Movement::PowerGrasp);
        assert_eq!(d.distance, 0.0);
        assert_eq!(d.t_star, 1.0);

        let d = classify(&axes, &[0.0, 0.0], 0.15).unwrap();
        assert_eq!(d.label, Movement::Rest);
        assert_eq!(d.t_star, 0.0);
        // both segments touch the anchor: lowest id wins the tie
        assert_eq!(d.winning_axis, Some(Movement::HandOpen));
    }

    #[test]
    fn clamps_beyond_tip() {
        let axes = AxisSet::from_centroids(vec![0.0], vec![(Movement::PowerGrasp, vec![1.0])]).unwrap();
        let d = classify(&axes, &[3.0], 0.15).unwrap();
        assert_eq!(d.t_star, 1.0);
        assert_eq!(d.distance, 2.0);
        assert_eq!(d.margin, None);
        let d = classify(&axes, &[-3.0], 0.15).unwrap();
        assert_eq!(d.t_star, 0.0);
        assert_eq!(d.label, Movement::Rest);
    }

    #[test]
    fn five_class_model_has_four_axes() {
        let model = fit_lda(&gaussian_set(5, 48, 40, 2.0, 1), Regularization::Auto).unwrap();
        let axes = build_axes(&model).unwrap();
        assert_eq!(axes.len(), 4);
        assert!(axes.movements().all(|m| m != Movement::Rest));
        assert_eq!(axes.anchor(), model.centroid(Movement::Rest).unwrap());
    }

    #[test]
    fn degenerate_axis_names_movement() {
        let err = AxisSet::from_centroids(
            vec![1.0, 1.0],
            vec![
                (Movement::PowerGrasp, vec![2.0, 1.0]),
                (Movement::KeyGrasp, vec![1.0, 1.0]),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateAxis(Movement::KeyGrasp)));
        assert!(err.to_string().contains("key_grasp"));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            AxisSet::from_centroids(vec![0.0], vec![]),
            Err(Error::EmptyAxisSet)
        ));
        let axes = AxisSet::from_centroids(vec![0.0], vec![(Movement::PowerGrasp, vec![1.0])]).unwrap();
        assert!(classify(&axes, &[0.0, 1.0], 0.15).is_err());
        assert!(classify(&axes, &[0.0], 1.0).is_err());
    }

    #[test]
    fn matches_dense_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let axes = random_axes(&mut rng, 4, 5);
        for _ in 0..200 {
            let y: Vec<f64> = (0..4).map(|_| rng.random_range(-6.0..6.0)).collect();
            let d = classify(&axes, &y, 0.15).unwrap();
            if d.margin.unwrap() > 1e-3 {
                assert_eq!(d.winning_axis, Some(grid_oracle(&axes, &y).0));
            }
        }
    }

    #[test]
    fn majority_vote_delays_change() {
        use Movement::{HandOpen as B, PowerGrasp as A};
        let mut vote = MajorityVote::new(3);
        let out: Vec<Movement> = [A, A, A, B, B, B].iter().map(|m| vote.push(*m)).collect();
        assert_eq!(out, vec![A, A, A, A, B, B]);
    }

    #[test]
    fn stream_follows_inputs() {
        let cal = gaussian_set(3, 6, 40, 4.0, 8);
        let model = fit_lda(&cal, Regularization::Auto).unwrap();
        let axes = build_axes(&model).unwrap();
        let mean_of = |m: Movement| {
            let s = cal.class(m).unwrap();
            let mut v = vec![0.0; 6];
            for x in s {
                for (a, b) in v.iter_mut().zip(x) {
                    *a += b / s.len() as f64;
                }
            }
            FeatureVector::new(v)
        };
        let rest = mean_of(Movement::Rest);
        let a = mean_of(Movement::HandOpen);
        let b = mean_of(Movement::PowerGrasp);

        let all_rest = decision_stream(&model, &axes, &vec![rest; 5], 0.15, None).unwrap();
        assert!(all_rest.iter().all(|d| d.label == Movement::Rest));

        let alternating: Vec<FeatureVector> = (0..6).map(|i| if i % 2 == 0 { a.clone() } else { b.clone() }).collect();
        let labels: Vec<Movement> = decision_stream(&model, &axes, &alternating, 0.15, None)
            .unwrap()
            .iter()
            .map(|d| d.label)
            .collect();
        assert_eq!(labels, [Movement::HandOpen, Movement::PowerGrasp].repeat(3));

        let step: Vec<FeatureVector> = [&a, &a, &a, &b, &b, &b].iter().map(|f| (*f).clone()).collect();
        let raw: Vec<Movement> = decision_stream(&model, &axes, &step, 0.15, None)
            .unwrap()
            .iter()
            .map(|d| d.label)
            .collect();
        let smooth: Vec<Movement> = decision_stream(&model, &axes, &step, 0.15, Some(3))
            .unwrap()
            .iter()
            .map(|d| d.label)
            .collect();
        let first_change = |v: &[Movement]| v.windows(2).position(|w| w[0] != w[1]).unwrap();
        assert_eq!(first_change(&smooth), first_change(&raw) + 1);
    }

    proptest! {
        #[test]
        fn t_star_is_clamped_and_distances_nonnegative(seed in 0u64..1000, y in prop::collection::vec(-10.0f64..10.0, 3)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let axes = random_axes(&mut rng, 3, 4);
            let d = classify(&axes, &y, 0.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&d.t_star));
            prop_assert!(d.distance >= 0.0);
            prop_assert!(d.margin.unwrap() >= 0.0);
            if d.t_star > 0.0 {
                prop_assert_ne!(d.label, Movement::Rest);
            }
        }

        #[test]
        fn rotation_leaves_labels_unchanged(seed in 0u64..1000, angle in 0.0f64..std::f64::consts::TAU, y in prop::collection::vec(-6.0f64..6.0, 2)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let axes = random_axes(&mut rng, 2, 5);
            let (s, c) = angle.sin_cos();
            let rot = |v: &[f64]| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]];
            let rotated = AxisSet::from_centroids(
                rot(axes.anchor()),
                axes.axes().iter().map(|a| (a.movement, rot(&a.tip))).collect(),
            ).unwrap();
            let before = classify(&axes, &y, 0.15).unwrap();
            let after = classify(&rotated, &rot(&y), 0.15).unwrap();
            if before.margin.unwrap() > 1e-9 && (before.t_star - 0.15).abs() > 1e-9 {
                prop_assert_eq!(before.label, after.label);
            }
        }
    }
}
