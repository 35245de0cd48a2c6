//! Hypergraph construction from two point sets and belief discretization.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{build_factor_graph, run_sum_product, BeliefState, BpOptions};
use crate::potential::{CandidateMatch, Hyperedge, MatchHypergraph, PenaltyModel};

pub type Point = [f64; 2];

/// Feature locations of one image, optionally with one descriptor per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PointSetRepr")]
pub struct PointSet {
    points: Vec<Point>,
    #[serde(skip_serializing_if = "Option::is_none")]
    descriptors: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
struct PointSetRepr {
    points: Vec<Point>,
    #[serde(default)]
    descriptors: Option<Vec<Vec<f64>>>,
}

impl TryFrom<PointSetRepr> for PointSet {
    type Error = Error;

    fn try_from(r: PointSetRepr) -> Result<Self> {
        PointSet::new(r.points, r.descriptors)
    }
}

impl PointSet {
    pub fn new(points: Vec<Point>, descriptors: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if let Some(p) = points
            .iter()
            .find(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::Data(format!("non-finite coordinate {p:?}")));
        }
        if let Some(d) = &descriptors {
            if d.len() != points.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} descriptors for {} points",
                    d.len(),
                    points.len()
                )));
            }
            if let Some(first) = d.first() {
                if first.is_empty() {
                    return Err(Error::DimensionMismatch(
                        "descriptor dimension must be at least 1".into(),
                    ));
                }
                if d.iter().any(|v| v.len() != first.len()) {
                    return Err(Error::DimensionMismatch(
                        "descriptors differ in dimension".into(),
                    ));
                }
                if d.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(Error::Data("non-finite descriptor entry".into()));
                }
            }
        }
        Ok(Self {
            points,
            descriptors,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn descriptors(&self) -> Option<&[Vec<f64>]> {
        self.descriptors.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Known correspondences, left index to right index.
pub type GroundTruth = BTreeMap<usize, usize>;

/// Normalized correlation of two descriptors, clamped to `[0, 1]`.
pub fn appearance_weight(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "descriptor dimensions {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu: f64 = u.iter().map(|x| x * x).sum();
    let nv: f64 = v.iter().map(|x| x * x).sum();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateDescriptor("all-zero descriptor".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(0.0, 1.0))
}

fn require_descriptors<'a>(set: &'a PointSet, side: &'static str) -> Result<&'a [Vec<f64>]> {
    set.descriptors().ok_or(Error::MissingDescriptors(side))
}

/// Best-first ordering of candidates for one left feature.
fn by_weight_then_index(a: &CandidateMatch, b: &CandidateMatch) -> Ordering {
    b.appearance_weight
        .total_cmp(&a.appearance_weight)
        .then(a.right_index.cmp(&b.right_index))
}

/// `μ(a_l)`: the `m` right features most similar in appearance to each left one.
pub fn candidate_matches(
    left: &PointSet,
    right: &PointSet,
    m: usize,
) -> Result<Vec<Vec<CandidateMatch>>> {
    if m == 0 {
        return Err(Error::InvalidConfig("m must be at least 1".into()));
    }
    let ld = require_descriptors(left, "left")?;
    let rd = require_descriptors(right, "right")?;
    if right.is_empty() {
        return Err(Error::InvalidConfig("right point set is empty".into()));
    }
    ld.iter()
        .enumerate()
        .map(|(l, u)| {
            let mut all = rd
                .iter()
                .enumerate()
                .map(|(r, v)| CandidateMatch::new(l, r, appearance_weight(u, v)?))
                .collect::<Result<Vec<_>>>()?;
            all.sort_by(by_weight_then_index);
            all.truncate(m);
            Ok(all)
        })
        .collect()
}

/// Interior angles at `p1`, `p2`, `p3`, in that order.
pub fn interior_angles(p1: Point, p2: Point, p3: Point) -> Result<[f64; 3]> {
    let d2 = |a: Point, b: Point| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let diameter2 = d2(p1, p2).max(d2(p2, p3)).max(d2(p1, p3));
    let cross = (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p2[1] - p1[1]) * (p3[0] - p1[0]);
    if !(0.5 * cross.abs() > 1e-9 * diameter2) {
        return Err(Error::DegenerateTriangle);
    }
    let angle_at = |a: Point, b: Point, c: Point| {
        let u = [b[0] - a[0], b[1] - a[1]];
        let v = [c[0] - a[0], c[1] - a[1]];
        (u[0] * v[1] - u[1] * v[0])
            .abs()
            .atan2(u[0] * v[0] + u[1] * v[1])
    };
    let t1 = angle_at(p1, p2, p3);
    let t2 = angle_at(p2, p3, p1);
    Ok([t1, t2, PI - t1 - t2])
}

/// `1 − ε/δ` with `ε` the summed squared angle difference, or `None` when
/// `ε > δ` and the pair is discarded.
pub fn geometric_weight(left: [f64; 3], right: [f64; 3], delta: f64) -> Option<f64> {
    let eps: f64 = left
        .iter()
        .zip(&right)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (eps <= delta).then(|| 1.0 - eps / delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypergraphParams {
    /// Candidates kept per left feature.
    pub m: usize,
    /// Nearest neighbours used to form left triangles.
    pub knn: usize,
    /// Angle-difference threshold `δ` in squared radians.
    pub delta: f64,
}

impl Default for HypergraphParams {
    fn default() -> Self {
        Self {
            m: 3,
            knn: 5,
            delta: 0.5,
        }
    }
}

impl HypergraphParams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if self.knn < 2 {
            return Err(Error::InvalidConfig("knn must be at least 2".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "delta {} must be positive",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Counters collected while building the hypergraph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub left_triangles: usize,
    pub triangle_pairs: usize,
    pub repeated_right: usize,
    pub degenerate: usize,
    pub discarded: usize,
    pub duplicates_merged: usize,
    pub hyperedges: usize,
}

fn nearest_neighbours(points: &[Point], of: usize, k: usize) -> Vec<usize> {
    let p = points[of];
    let mut others: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != of)
        .map(|(i, q)| ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2), i))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.truncate(k);
    others.into_iter().map(|(_, i)| i).collect()
}

pub fn build_match_hypergraph(
    left: &PointSet,
    right: &PointSet,
    params: &HypergraphParams,
) -> Result<(MatchHypergraph, BuildReport)> {
    params.validate()?;
    if left.is_empty() {
        return Err(Error::InvalidConfig("left point set is empty".into()));
    }
    let candidates = candidate_matches(left, right, params.m)?;
    let mut nodes = Vec::new();
    let mut node_of: Vec<Vec<usize>> = Vec::with_capacity(candidates.len());
    for group in &candidates {
        node_of.push((nodes.len()..nodes.len() + group.len()).collect());
        nodes.extend_from_slice(group);
    }

    let lp = left.points();
    let rp = right.points();
    let mut triangles = BTreeSet::new();
    for l in 0..lp.len() {
        let nn = nearest_neighbours(lp, l, params.knn);
        for (a, &u) in nn.iter().enumerate() {
            for &v in &nn[a + 1..] {
                let mut t = [l, u, v];
                t.sort_unstable();
                triangles.insert(t);
            }
        }
    }

    let mut report = BuildReport {
        left_triangles: triangles.len(),
        ..Default::default()
    };
    let mut best: BTreeMap<[usize; 3], f64> = BTreeMap::new();
    for tri in &triangles {
        let left_angles = match interior_angles(lp[tri[0]], lp[tri[1]], lp[tri[2]]) {
            Ok(a) => a,
            Err(_) => {
                report.degenerate += 1;
                continue;
            }
        };
        for &n0 in &node_of[tri[0]] {
            for &n1 in &node_of[tri[1]] {
                for &n2 in &node_of[tri[2]] {
                    report.triangle_pairs += 1;
                    let r = [
                        nodes[n0].right_index,
                        nodes[n1].right_index,
                        nodes[n2].right_index,
                    ];
                    if r[0] == r[1] || r[1] == r[2] || r[0] == r[2] {
                        report.repeated_right += 1;
                        continue;
                    }
                    let right_angles = match interior_angles(rp[r[0]], rp[r[1]], rp[r[2]]) {
                        Ok(a) => a,
                        Err(_) => {
                            report.degenerate += 1;
                            continue;
                        }
                    };
                    let Some(geo) = geometric_weight(left_angles, right_angles, params.delta)
                    else {
                        report.discarded += 1;
                        continue;
                    };
                    let appearance = nodes[n0].appearance_weight
                        * nodes[n1].appearance_weight
                        * nodes[n2].appearance_weight;
                    let lambda = (geo * appearance).clamp(0.0, 1.0);
                    let mut key = [n0, n1, n2];
                    key.sort_unstable();
                    best.entry(key)
                        .and_modify(|w| {
                            report.duplicates_merged += 1;
                            *w = w.max(lambda);
                        })
                        .or_insert(lambda);
                }
            }
        }
    }

    let edges = best
        .into_iter()
        .map(|(ids, w)| Hyperedge::new(ids.to_vec(), w))
        .collect::<Result<Vec<_>>>()?;
    report.hyperedges = edges.len();
    Ok((MatchHypergraph::new(nodes, edges)?, report))
}

/// Hard correspondences, at most one per left feature.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchAssignment {
    pub pairs: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
}

impl MatchAssignment {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, left: usize) -> Option<usize> {
        self.pairs.iter().find(|(l, _)| *l == left).map(|(_, r)| *r)
    }

    pub(crate) fn push(&mut self, left: usize, right: usize, score: f64) {
        self.pairs.push((left, right));
        self.scores.push(score);
    }

    /// Orders pairs by left index.
    pub(crate) fn sorted(mut self) -> Self {
        let mut idx: Vec<usize> = (0..self.pairs.len()).collect();
        idx.sort_by_key(|&i| self.pairs[i]);
        self.pairs = idx.iter().map(|&i| self.pairs[i]).collect();
        self.scores = idx.iter().map(|&i| self.scores[i]).collect();
        self
    }
}

const BELIEF_FLOOR: f64 = 1e-12;

/// `log b_i(1) − log b_i(0)` with beliefs floored at `1e−12`.
pub fn belief_log_ratio(belief: [f64; 2]) -> f64 {
    belief[1].max(BELIEF_FLOOR).ln() - belief[0].max(BELIEF_FLOOR).ln()
}

/// Picks, for every left feature, the candidate with the largest belief ratio.
/// With `one_to_one`, candidates are instead accepted greedily in descending
/// score order while both endpoints are still free.
pub fn discretize(
    graph: &MatchHypergraph,
    beliefs: &BeliefState,
    one_to_one: bool,
) -> Result<MatchAssignment> {
    if beliefs.node_beliefs.len() != graph.node_count() {
        return Err(Error::LabelingLength {
            expected: graph.node_count(),
            got: beliefs.node_beliefs.len(),
        });
    }
    let scores: Vec<f64> = beliefs
        .node_beliefs
        .iter()
        .map(|b| belief_log_ratio(*b))
        .collect();
    let nodes = graph.nodes();
    let rank = |a: usize, b: usize| {
        scores[b]
            .total_cmp(&scores[a])
            .then(
                nodes[b]
                    .appearance_weight
                    .total_cmp(&nodes[a].appearance_weight),
            )
            .then(nodes[a].right_index.cmp(&nodes[b].right_index))
    };

    let mut out = MatchAssignment::default();
    if one_to_one {
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by(|&a, &b| rank(a, b).then(nodes[a].left_index.cmp(&nodes[b].left_index)));
        let mut used_left = BTreeSet::new();
        let mut used_right = BTreeSet::new();
        for i in order {
            let n = nodes[i];
            if !used_left.contains(&n.left_index) && !used_right.contains(&n.right_index) {
                used_left.insert(n.left_index);
                used_right.insert(n.right_index);
                out.push(n.left_index, n.right_index, scores[i]);
            }
        }
        return Ok(out.sorted());
    }
    for group in graph.left_groups().values() {
        if let Some(&best) = group.iter().min_by(|&&a, &&b| rank(a, b)) {
            out.push(
                nodes[best].left_index,
                nodes[best].right_index,
                scores[best],
            );
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineParams {
    pub hypergraph: HypergraphParams,
    pub bp: BpOptions,
    pub one_to_one: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub graph: MatchHypergraph,
    pub assignment: MatchAssignment,
    pub beliefs: BeliefState,
    pub report: BuildReport,
    /// Left features that received no match.
    pub unmatched_left: usize,
}

/// Build the hypergraph, run sum-product under `model`, and discretize.
pub fn match_pipeline(
    left: &PointSet,
    right: &PointSet,
    model: &PenaltyModel,
    params: &PipelineParams,
) -> Result<PipelineOutput> {
    let (graph, report) = build_match_hypergraph(left, right, &params.hypergraph)?;
    let fg = build_factor_graph(&graph, model)?;
    let beliefs = run_sum_product(&fg, &params.bp)?;
    let assignment = discretize(&graph, &beliefs, params.one_to_one)?;
    let unmatched_left = left.len() - assignment.len();
    Ok(PipelineOutput {
        graph,
        assignment,
        beliefs,
        report,
        unmatched_left,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::FactorMessages;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn beliefs(node_beliefs: Vec<[f64; 2]>) -> BeliefState {
        BeliefState {
            node_beliefs,
            clique_count_marginals: vec![],
            converged: true,
            iterations: 1,
            max_residual: 0.0,
            messages: FactorMessages::uniform(
                &crate::inference::FactorGraph::new(0, vec![]).unwrap(),
            ),
            trace: vec![],
        }
    }

    fn lcg_points(n: usize, seed: u64) -> (Vec<Point>, Vec<Vec<f64>>) {
        let mut s = seed;
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let pts = (0..n).map(|_| [next(), next()]).collect();
        let desc = (0..n)
            .map(|_| (0..6).map(|_| next() - 0.5).collect())
            .collect();
        (pts, desc)
    }

    #[test]
    fn appearance_examples() {
        let u = [0.3, -1.2, 2.0];
        assert_abs_diff_eq!(appearance_weight(&u, &u).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(appearance_weight(&u, &[-0.3, 1.2, -2.0]).unwrap(), 0.0);
        assert_eq!(appearance_weight(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(
            appearance_weight(&[0.0, 0.0], &[1.0, 2.0]),
            Err(Error::DegenerateDescriptor(_))
        ));
        assert!(appearance_weight(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn candidate_examples() {
        let (pts, desc) = lcg_points(6, 3);
        let left = PointSet::new(pts.clone(), Some(desc.clone())).unwrap();
        let one = PointSet::new(vec![pts[0]], Some(vec![desc[0].clone()])).unwrap();
        for group in candidate_matches(&left, &one, 3).unwrap() {
            assert_eq!(group.len(), 1);
            assert_eq!(group[0].right_index, 0);
        }
        for (l, group) in candidate_matches(&left, &left, 1)
            .unwrap()
            .iter()
            .enumerate()
        {
            assert_eq!(group[0].right_index, l);
        }
        assert!(candidate_matches(&left, &left, 3)
            .unwrap()
            .iter()
            .all(|g| g.len() == 3));
        let bare = PointSet::new(pts, None).unwrap();
        assert!(matches!(
            candidate_matches(&left, &bare, 3),
            Err(Error::MissingDescriptors("right"))
        ));
        let empty = PointSet::new(vec![], Some(vec![])).unwrap();
        assert!(candidate_matches(&left, &empty, 3).is_err());
    }

    #[test]
    fn candidate_ties_prefer_lower_right_index() {
        let left = PointSet::new(vec![[0.0, 0.0]], Some(vec![vec![1.0, 0.0]])).unwrap();
        let right = PointSet::new(
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            Some(vec![vec![0.0, 1.0], vec![2.0, 0.0], vec![1.0, 0.0]]),
        )
        .unwrap();
        let c = candidate_matches(&left, &right, 2).unwrap();
        assert_eq!(
            c[0].iter().map(|m| m.right_index).collect::<Vec<_>>(),
            vec![1, 2]
        );
    }

    #[test]
    fn angle_examples() {
        let h = 3f64.sqrt() / 2.0;
        for a in interior_angles([0.0, 0.0], [1.0, 0.0], [0.5, h]).unwrap() {
            assert_abs_diff_eq!(a, PI / 3.0, epsilon = 1e-12);
        }
        let r = interior_angles([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(r[0], PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], PI / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[2], PI / 4.0, epsilon = 1e-12);
        assert!(interior_angles([0.0, 0.0], [1.0, 1.0], [2.0, 2.0]).is_err());
        assert!(interior_angles([0.0, 0.0], [0.0, 0.0], [2.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn angles_sum_to_pi_and_scale(
            p in prop::array::uniform3(prop::array::uniform2(-10.0f64..10.0)),
            s in 0.01f64..100.0,
        ) {
            if let Ok(a) = interior_angles(p[0], p[1], p[2]) {
                prop_assert!(a.iter().all(|x| *x > 0.0));
                prop_assert!((a.iter().sum::<f64>() - PI).abs() < 1e-9);
                let q = p.map(|x| [x[0] * s, x[1] * s]);
                let b = interior_angles(q[0], q[1], q[2]).unwrap();
                for i in 0..3 { prop_assert!((a[i] - b[i]).abs() < 1e-9); }
            }
        }

        #[test]
        fn geometric_weight_is_symmetric(
            a in prop::array::uniform3(0.0f64..3.0),
            b in prop::array::uniform3(0.0f64..3.0),
        ) {
            prop_assert_eq!(geometric_weight(a, b, 0.5), geometric_weight(b, a, 0.5));
        }
    }

    #[test]
    fn geometric_weight_boundaries() {
        let t = [1.0, 1.0, PI - 2.0];
        assert_eq!(geometric_weight(t, t, 0.5), Some(1.0));
        assert_eq!(geometric_weight(t, [1.5, 0.5, PI - 2.0], 0.5), Some(0.0));
        assert_eq!(
            geometric_weight([0.0; 3], [0.6f64.sqrt(), 0.0, 0.0], 0.5),
            None
        );
    }

    #[test]
    fn identical_sets_give_unit_weight_correct_edges() {
        let (pts, desc) = lcg_points(12, 11);
        let set = PointSet::new(pts, Some(desc)).unwrap();
        let params = HypergraphParams {
            m: 1,
            ..Default::default()
        };
        let (g, report) = build_match_hypergraph(&set, &set, &params).unwrap();
        assert!(report.hyperedges > 0);
        for e in g.edges() {
            assert_abs_diff_eq!(e.weight(), 1.0, epsilon = 1e-9);
            for &id in e.node_ids() {
                assert_eq!(g.nodes()[id].left_index, g.nodes()[id].right_index);
            }
        }
    }

    #[test]
    fn two_points_make_no_edges() {
        let (pts, desc) = lcg_points(2, 5);
        let set = PointSet::new(pts, Some(desc)).unwrap();
        let (g, _) = build_match_hypergraph(&set, &set, &HypergraphParams::default()).unwrap();
        assert_eq!(g.edges().len(), 0);
        assert_eq!(g.node_count(), 4);
    }

    #[test]
    fn default_construction_bounds() {
        let (lp, ld) = lcg_points(20, 1);
        let (rp, rd) = lcg_points(20, 2);
        let left = PointSet::new(lp, Some(ld)).unwrap();
        let right = PointSet::new(rp, Some(rd)).unwrap();
        let (g, report) =
            build_match_hypergraph(&left, &right, &HypergraphParams::default()).unwrap();
        assert!(report.left_triangles <= 20 * 10);
        assert!(report.triangle_pairs <= report.left_triangles * 27);
        for e in g.edges() {
            assert_eq!(e.len(), 3);
            assert!((0.0..=1.0).contains(&e.weight()));
            let ids = e.node_ids();
            let ls: BTreeSet<_> = ids.iter().map(|&i| g.nodes()[i].left_index).collect();
            let rs: BTreeSet<_> = ids.iter().map(|&i| g.nodes()[i].right_index).collect();
            assert_eq!((ls.len(), rs.len()), (3, 3));
        }
        assert!(g.left_groups().values().all(|grp| grp.len() == 3));
    }

    #[test]
    fn construction_is_permutation_invariant() {
        let (lp, ld) = lcg_points(15, 21);
        let (rp, rd) = lcg_points(15, 22);
        let perm: Vec<usize> = (0..15).map(|i| (i * 7 + 3) % 15).collect();
        let left = PointSet::new(lp.clone(), Some(ld.clone())).unwrap();
        let right = PointSet::new(rp.clone(), Some(rd.clone())).unwrap();
        let left_p = PointSet::new(
            perm.iter().map(|&i| lp[i]).collect(),
            Some(perm.iter().map(|&i| ld[i].clone()).collect()),
        )
        .unwrap();
        let right_p = PointSet::new(
            perm.iter().map(|&i| rp[i]).collect(),
            Some(perm.iter().map(|&i| rd[i].clone()).collect()),
        )
        .unwrap();
        let canon =
            |g: &MatchHypergraph, lmap: &dyn Fn(usize) -> usize, rmap: &dyn Fn(usize) -> usize| {
                let mut out: Vec<(Vec<(usize, usize)>, f64)> = g
                    .edges()
                    .iter()
                    .map(|e| {
                        let mut m: Vec<_> = e
                            .node_ids()
                            .iter()
                            .map(|&i| {
                                (
                                    lmap(g.nodes()[i].left_index),
                                    rmap(g.nodes()[i].right_index),
                                )
                            })
                            .collect();
                        m.sort_unstable();
                        (m, e.weight())
                    })
                    .collect();
                out.sort_by(|a, b| a.0.cmp(&b.0));
                out
            };
        let params = HypergraphParams::default();
        let (g1, _) = build_match_hypergraph(&left, &right, &params).unwrap();
        let (g2, _) = build_match_hypergraph(&left_p, &right_p, &params).unwrap();
        let a = canon(&g1, &|i| i, &|i| i);
        let b = canon(&g2, &|i| perm[i], &|i| perm[i]);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.0, y.0);
            assert_abs_diff_eq!(x.1, y.1, epsilon = 1e-12);
        }
    }

    fn toy_graph(weights: &[(usize, usize, f64)]) -> MatchHypergraph {
        MatchHypergraph::new(
            weights
                .iter()
                .map(|&(l, r, w)| CandidateMatch::new(l, r, w).unwrap())
                .collect(),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn discretize_examples() {
        let g = toy_graph(&[(0, 0, 0.5), (1, 1, 0.5)]);
        let a = discretize(&g, &beliefs(vec![[0.99, 0.01], [0.7, 0.3]]), false).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);

        let g = toy_graph(&[(0, 0, 0.5), (0, 1, 0.5)]);
        let a = discretize(&g, &beliefs(vec![[0.9, 0.1], [0.2, 0.8]]), false).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_abs_diff_eq!(a.scores[0], 4f64.ln(), epsilon = 1e-12);

        let g = toy_graph(&[(0, 0, 0.4), (0, 1, 0.9), (0, 2, 0.9)]);
        let a = discretize(&g, &beliefs(vec![[0.5, 0.5]; 3]), false).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert!(discretize(&g, &beliefs(vec![[0.5, 0.5]; 2]), false).is_err());
    }

    #[test]
    fn one_to_one_resolves_conflicts() {
        let g = toy_graph(&[(0, 0, 0.9), (0, 1, 0.5), (1, 0, 0.9), (1, 2, 0.5)]);
        let b = beliefs(vec![[0.1, 0.9], [0.4, 0.6], [0.2, 0.8], [0.45, 0.55]]);
        assert_eq!(
            discretize(&g, &b, false).unwrap().pairs,
            vec![(0, 0), (1, 0)]
        );
        assert_eq!(
            discretize(&g, &b, true).unwrap().pairs,
            vec![(0, 0), (1, 2)]
        );
    }

    proptest! {
        #[test]
        fn discretize_selects_argmax(raw in prop::collection::vec(0.0f64..1.0, 12)) {
            let g = toy_graph(&(0..12).map(|i| (i / 3, i % 3, 0.5)).collect::<Vec<_>>());
            let bs: Vec<[f64; 2]> = raw.iter().map(|&p| [1.0 - p, p]).collect();
            let a = discretize(&g, &beliefs(bs.clone()), false).unwrap();
            for (&(l, _), &score) in a.pairs.iter().zip(&a.scores) {
                for &id in &g.left_groups()[&l] {
                    prop_assert!(score >= belief_log_ratio(bs[id]));
                }
            }
        }
    }

    #[test]
    fn pipeline_identity_and_errors() {
        let (pts, desc) = lcg_points(15, 9);
        let set = PointSet::new(pts, Some(desc)).unwrap();
        let model = crate::baselines::linear_penalty_model(3);
        let params = PipelineParams {
            hypergraph: HypergraphParams {
                m: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = match_pipeline(&set, &set, &model, &params).unwrap();
        assert_eq!(
            out.assignment.pairs,
            (0..15).map(|i| (i, i)).collect::<Vec<_>>()
        );
        let empty = PointSet::new(vec![], Some(vec![])).unwrap();
        assert!(match_pipeline(&set, &empty, &model, &params).is_err());
    }

    #[test]
    fn point_set_json() {
        let s = PointSet::from_json(r#"{"points":[[0,1],[2,3]],"descriptors":[[1],[2]]}"#).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(PointSet::from_json(&s.to_json().unwrap()).unwrap(), s);
        assert!(PointSet::from_json(r#"{"points":[[0,1]],"descriptors":[[1],[2]]}"#).is_err());
        let bare = PointSet::from_json(r#"{"points":[[0,1]]}"#).unwrap();
        assert!(bare.descriptors().is_none());
    }
}
