//! Structure metrics (SHD, directed F1, NNZ) and expected calibration error
//! of edge marginals.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Adjacency;

pub const DEFAULT_BINS: usize = 10;

fn check_pair(truth: &Adjacency, pred: &Adjacency) -> Result<()> {
    if truth.nodes() != pred.nodes() {
        return Err(Error::invalid(format!(
            "graphs have {} and {} nodes",
            truth.nodes(),
            pred.nodes()
        )));
    }
    if truth.has_self_loop() || pred.has_self_loop() {
        return Err(Error::invalid("graphs must have a zero diagonal"));
    }
    Ok(())
}

/// One unit per unordered pair whose connection differs: a missing or extra
/// link, or a link pointing the other way.
pub fn shd(truth: &Adjacency, pred: &Adjacency) -> Result<usize> {
    check_pair(truth, pred)?;
    let d = truth.nodes();
    let mut count = 0;
    for i in 0..d {
        for j in i + 1..d {
            if (truth.get(i, j), truth.get(j, i)) != (pred.get(i, j), pred.get(j, i)) {
                count += 1;
            }
        }
    }
    Ok(count)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Directed-edge precision, recall and F1. Undefined ratios count as 0.
pub fn classify(truth: &Adjacency, pred: &Adjacency) -> Result<Classification> {
    check_pair(truth, pred)?;
    let tp = truth.edges().iter().filter(|&&(i, j)| pred.get(i, j)).count();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, pred.nnz());
    let recall = ratio(tp, truth.nnz());
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Classification {
        true_positives: tp,
        precision,
        recall,
        f1,
    })
}

pub fn f1(truth: &Adjacency, pred: &Adjacency) -> Result<f64> {
    Ok(classify(truth, pred)?.f1)
}

pub fn nnz(adj: &Adjacency) -> usize {
    adj.nnz()
}

/// Statistics of one confidence bin over `(lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub ece: f64,
    pub bins: Vec<CalibrationBin>,
}

/// ECE of binary predictions `(p, label)`: confidence `max(p, 1−p)`, predicted
/// label `p > 0.5`, `bins` equal-width bins over `[0.5, 1]`.
pub fn ece_from_pairs(pairs: &[(f64, bool)], bins: usize) -> Result<Calibration> {
    if bins == 0 {
        return Err(Error::invalid("at least one bin is required"));
    }
    if let Some(&(p, _)) = pairs.iter().find(|(p, _)| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid(format!("probability {p} is outside [0, 1]")));
    }
    let width = 0.5 / bins as f64;
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    for &(p, label) in pairs {
        let conf = p.max(1.0 - p);
        // confidence 0.5 joins the lowest bin
        let k = (((conf - 0.5) / width).ceil() as usize).clamp(1, bins) - 1;
        count[k] += 1;
        conf_sum[k] += conf;
        if (p > 0.5) == label {
            correct[k] += 1;
        }
    }
    let total = pairs.len().max(1) as f64;
    let mut ece = 0.0;
    let table = (0..bins)
        .map(|k| {
            let (accuracy, confidence) = if count[k] > 0 {
                (correct[k] as f64 / count[k] as f64, conf_sum[k] / count[k] as f64)
            } else {
                (0.0, 0.0)
            };
            ece += count[k] as f64 / total * (accuracy - confidence).abs();
            CalibrationBin {
                lower: 0.5 + k as f64 * width,
                upper: 0.5 + (k + 1) as f64 * width,
                count: count[k],
                accuracy,
                confidence,
            }
        })
        .collect();
    Ok(Calibration { ece, bins: table })
}

/// Every off-diagonal ordered pair is one prediction.
pub fn calibration(edge_probs: &DMatrix<f64>, truth: &Adjacency, bins: usize) -> Result<Calibration> {
    let d = truth.nodes();
    if edge_probs.nrows() != d || edge_probs.ncols() != d {
        return Err(Error::invalid(format!(
            "edge probabilities are {}x{}, truth has {d} nodes",
            edge_probs.nrows(),
            edge_probs.ncols()
        )));
    }
    let mut pairs = Vec::with_capacity(d * d.saturating_sub(1));
    for i in 0..d {
        for j in 0..d {
            if i != j {
                pairs.push((edge_probs[(i, j)], truth.get(i, j)));
            }
        }
    }
    ece_from_pairs(&pairs, bins)
}

pub fn ece(edge_probs: &DMatrix<f64>, truth: &Adjacency, bins: usize) -> Result<f64> {
    Ok(calibration(edge_probs, truth, bins)?.ece)
}

/// Thresholded edge marginals, repaired to be acyclic.
#[derive(Clone, Debug, PartialEq)]
pub struct Consensus {
    pub graph: Adjacency,
    /// Edges removed to break cycles, in removal order.
    pub dropped: Vec<(usize, usize)>,
}

/// Edge `i → j` iff `p_ij > threshold`. While a cycle remains, the weakest
/// edge lying on a cycle is removed (ties broken by row-major position).
pub fn consensus_graph(edge_probs: &DMatrix<f64>, threshold: f64) -> Result<Consensus> {
    if edge_probs.nrows() != edge_probs.ncols() {
        return Err(Error::invalid("edge probabilities must be square"));
    }
    let d = edge_probs.nrows();
    let mut graph = Adjacency::from_fn(d, |i, j| i != j && edge_probs[(i, j)] > threshold);
    let mut dropped = Vec::new();
    if graph.topological_order().is_some() {
        return Ok(Consensus { graph, dropped });
    }
    let mut edges = graph.edges();
    edges.sort_by(|a, b| edge_probs[*a].total_cmp(&edge_probs[*b]));
    for (i, j) in edges {
        if graph.reaches(j, i) {
            graph.set(i, j, false);
            dropped.push((i, j));
            if graph.topological_order().is_some() {
                break;
            }
        }
    }
    Ok(Consensus { graph, dropped })
}

/// Flat summary with stable keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub shd: usize,
    pub f1: f64,
    pub nnz: usize,
    pub ece: f64,
    pub bins: usize,
}

impl MetricsReport {
    pub fn compute(truth: &Adjacency, pred: &Adjacency, edge_probs: &DMatrix<f64>, bins: usize) -> Result<Self> {
        Ok(Self {
            shd: shd(truth, pred)?,
            f1: f1(truth, pred)?,
            nnz: nnz(pred),
            ece: ece(edge_probs, truth, bins)?,
            bins,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(d: usize, edges: &[(usize, usize)]) -> Adjacency {
        Adjacency::from_edges(d, edges).unwrap()
    }

    #[test]
    fn shd_cases() {
        let t = graph(4, &[(0, 1), (1, 2), (0, 3)]);
        assert_eq!(shd(&t, &t).unwrap(), 0);
        assert_eq!(shd(&t, &graph(4, &[(1, 0), (1, 2), (0, 3)])).unwrap(), 1);
        assert_eq!(shd(&t, &Adjacency::empty(4)).unwrap(), 3);
        assert!(shd(&t, &Adjacency::empty(3)).is_err());
    }

    #[test]
    fn f1_cases() {
        let t = graph(3, &[(0, 1), (1, 2)]);
        assert_eq!(f1(&t, &t).unwrap(), 1.0);
        assert_eq!(f1(&t, &graph(3, &[(1, 0), (2, 1)])).unwrap(), 0.0);
        let c = classify(&t, &graph(3, &[(0, 1), (0, 2)])).unwrap();
        assert_eq!((c.precision, c.recall, c.f1), (0.5, 0.5, 0.5));
        assert_eq!(f1(&Adjacency::empty(3), &Adjacency::empty(3)).unwrap(), 0.0);
    }

    #[test]
    fn nnz_of_complete_dag() {
        assert_eq!(nnz(&Adjacency::from_fn(6, |i, j| i < j)), 15);
        assert_eq!(nnz(&Adjacency::empty(6)), 0);
    }

    #[test]
    fn perfect_predictions_have_zero_ece() {
        let t = graph(3, &[(0, 1), (2, 1)]);
        let p = t.to_matrix();
        assert_eq!(ece(&p, &t, 10).unwrap(), 0.0);
    }

    #[test]
    fn barely_confident_correct_predictions_have_half_ece() {
        let eps = 1e-6;
        let pairs: Vec<(f64, bool)> = (0..100).map(|k| if k % 2 == 0 { (0.5 + eps, true) } else { (0.5 - eps, false) }).collect();
        let c = ece_from_pairs(&pairs, 10).unwrap();
        assert!((c.ece - 0.5).abs() < 1e-5);
        assert_eq!(c.bins[0].count, 100);
    }

    #[test]
    fn single_bin_collapses_to_global_gap() {
        let pairs = [(0.9, true), (0.2, true), (0.6, false), (0.05, false)];
        let c = ece_from_pairs(&pairs, 1).unwrap();
        let acc: f64 = 2.0 / 4.0;
        let conf = (0.9 + 0.8 + 0.6 + 0.95) / 4.0;
        assert!((c.ece - (acc - conf).abs()).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_probability_is_rejected() {
        assert!(ece_from_pairs(&[(1.2, true)], 10).is_err());
        assert!(ece_from_pairs(&[(0.2, true)], 0).is_err());
    }

    #[test]
    fn consensus_drops_weakest_cycle_edge() {
        let mut p = DMatrix::zeros(4, 4);
        p[(0, 1)] = 0.9;
        p[(1, 2)] = 0.8;
        p[(2, 0)] = 0.6;
        p[(3, 0)] = 0.55;
        let c = consensus_graph(&p, 0.5).unwrap();
        assert_eq!(c.dropped, vec![(2, 0)]);
        assert_eq!(c.graph.edges(), vec![(0, 1), (1, 2), (3, 0)]);
    }

    fn arb_graph(d: usize) -> impl Strategy<Value = Adjacency> {
        proptest::collection::vec(any::<bool>(), d * d)
            .prop_map(move |cells| Adjacency::from_fn(d, |i, j| i != j && cells[i * d + j]))
    }

    proptest! {
        #[test]
        fn shd_is_symmetric(a in arb_graph(5), b in arb_graph(5)) {
            prop_assert_eq!(shd(&a, &b).unwrap(), shd(&b, &a).unwrap());
            prop_assert_eq!(shd(&a, &a).unwrap(), 0);
        }

        #[test]
        fn f1_is_relabel_invariant(a in arb_graph(5), b in arb_graph(5), perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
            let fa = f1(&a, &b).unwrap();
            let fb = f1(&a.relabel(&perm), &b.relabel(&perm)).unwrap();
            prop_assert!((fa - fb).abs() < 1e-15);
        }

        #[test]
        fn consensus_is_always_acyclic(cells in proptest::collection::vec(0.0f64..=1.0, 36), threshold in 0.0f64..0.9) {
            let p = DMatrix::from_row_slice(6, 6, &cells);
            let c = consensus_graph(&p, threshold).unwrap();
            prop_assert!(c.graph.topological_order().is_some());
            for (i, j) in c.graph.edges() {
                prop_assert!(p[(i, j)] > threshold);
            }
            prop_assert_eq!(c.graph.nnz() + c.dropped.len(), Adjacency::from_fn(6, |i, j| i != j && p[(i, j)] > threshold).nnz());
        }

        #[test]
        fn ece_stays_in_unit_interval(pairs in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200), bins in 1usize..20) {
            let e = ece_from_pairs(&pairs, bins).unwrap().ece;
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }
}
