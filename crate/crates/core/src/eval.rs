//! Generalized zero-shot evaluation and retrieval.
//!
//! A calibration bias is added to every unseen-candidate score. Sweeping it
//! from −∞ to +∞ trades seen accuracy for unseen accuracy; the area under
//! that curve is the AUC. Operating points change only where the bias crosses
//! a row's margin `max seen score − max unseen score`, so evaluating just
//! either side of every distinct margin visits the whole curve.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{encode_candidates, encode_image, encode_text, logits_against, FrozenEncoders, PromptTable};
use crate::space::{CompositionSpace, Pair};

/// Logits of every sample against the closed-world candidates: the seen
/// block followed by the split's unseen block.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    /// rows × candidates
    pub scores: Array2<f64>,
    pub candidates: Vec<Pair>,
    /// Column of each row's true pair.
    pub truth: Vec<usize>,
    pub seen_column: Vec<bool>,
}

impl ScoreMatrix {
    pub fn new(scores: Array2<f64>, candidates: Vec<Pair>, truth: Vec<usize>, seen_column: Vec<bool>) -> Result<Self> {
        let (rows, cols) = scores.dim();
        if candidates.len() != cols || seen_column.len() != cols || truth.len() != rows {
            return Err(Error::Config("score matrix shape mismatch".into()));
        }
        if truth.iter().any(|&t| t >= cols) {
            return Err(Error::Config("truth column out of range".into()));
        }
        if let Some(bad) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "score",
                context: format!("entry {bad}"),
            });
        }
        Ok(ScoreMatrix {
            scores,
            candidates,
            truth,
            seen_column,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.truth.len()
    }

    fn truth_is_seen(&self, row: usize) -> bool {
        self.seen_column[self.truth[row]]
    }

    /// Column predicted for `row` with `bias` added to unseen columns; ties go
    /// to the lowest column.
    pub fn biased_prediction(&self, row: usize, bias: f64) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (c, &s) in self.scores.row(row).iter().enumerate() {
            let v = if self.seen_column[c] { s } else { s + bias };
            if v > best.1 {
                best = (c, v);
            }
        }
        best.0
    }
}

/// Score `dataset` against its split's candidates using `threads` workers.
pub fn score_matrix(
    enc: &FrozenEncoders,
    table: &PromptTable,
    dataset: &Dataset,
    space: &CompositionSpace,
    threads: usize,
) -> Result<ScoreMatrix> {
    let (candidates, n_seen) = space.candidates(dataset.split);
    let text = encode_candidates(enc, table, &candidates)?;
    let column_of = |p: Pair| candidates.iter().position(|&c| c == p);
    let truth = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            column_of(s.label).ok_or(Error::UnknownLabel {
                index: i,
                state: s.label.state,
                object: s.label.object,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = dataset.len();
    let cols = candidates.len();
    let mut scores = Array2::zeros((n, cols));
    let chunk = n.div_ceil(threads.max(1)).max(1);
    let score_rows = |start: usize, rows: &mut [f64]| -> Result<()> {
        for (k, out) in rows.chunks_mut(cols).enumerate() {
            let f_v = encode_image(&dataset.samples[start + k].features)?;
            out.copy_from_slice(&logits_against(&f_v, &text, enc.tau));
        }
        Ok(())
    };
    let flat = scores.as_slice_mut().expect("standard layout");
    if threads <= 1 || n <= chunk {
        score_rows(0, flat)?;
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = flat
                .chunks_mut(chunk * cols)
                .enumerate()
                .map(|(i, rows)| {
                    let score_rows = &score_rows;
                    scope.spawn(move || score_rows(i * chunk, rows))
                })
                .collect();
            handles.into_iter().try_for_each(|h| h.join().expect("scoring worker panicked"))
        })?;
    }
    let seen_column = (0..cols).map(|c| c < n_seen).collect();
    ScoreMatrix::new(scores, candidates, truth, seen_column)
}

fn accuracy(hits: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    }
}

/// Seen and unseen accuracy with `bias` added to unseen columns. A side with
/// no rows reports 1.0.
pub fn biased_accuracy(scores: &ScoreMatrix, bias: f64) -> (f64, f64) {
    let (mut seen_hit, mut seen_n, mut unseen_hit, mut unseen_n) = (0, 0, 0, 0);
    for row in 0..scores.n_rows() {
        let hit = scores.biased_prediction(row, bias) == scores.truth[row];
        if scores.truth_is_seen(row) {
            seen_n += 1;
            seen_hit += usize::from(hit);
        } else {
            unseen_n += 1;
            unseen_hit += usize::from(hit);
        }
    }
    (accuracy(seen_hit, seen_n), accuracy(unseen_hit, unseen_n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub bias: f64,
    pub seen_acc: f64,
    pub unseen_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accuracies at bias 0.
    pub seen_acc: f64,
    pub unseen_acc: f64,
    pub hm_at_zero: f64,
    pub best_hm: f64,
    pub best_hm_bias: f64,
    pub auc: f64,
    /// Diagnostics at bias 0: fraction of rows whose predicted state (object)
    /// matches the truth.
    pub state_acc: f64,
    pub object_acc: f64,
    pub n_seen_rows: usize,
    pub n_unseen_rows: usize,
    /// Sweep points in increasing bias order.
    pub curve: Vec<CurvePoint>,
}

fn harmonic_mean(s: f64, u: f64) -> f64 {
    if s + u == 0.0 {
        0.0
    } else {
        2.0 * s * u / (s + u)
    }
}

struct RowSummary {
    margin: f64,
    seen: bool,
    /// True pair wins within its own block.
    block_hit: bool,
}

/// Full bias sweep, AUC and harmonic means.
pub fn sweep_auc(scores: &ScoreMatrix) -> Result<EvalReport> {
    let n_seen_cols = scores.seen_column.iter().filter(|&&s| s).count();
    let n_unseen_cols = scores.seen_column.len() - n_seen_cols;
    let mut rows = Vec::with_capacity(scores.n_rows());
    for r in 0..scores.n_rows() {
        let block_best = |want_seen: bool| {
            let mut best: Option<(usize, f64)> = None;
            for (c, &s) in scores.scores.row(r).iter().enumerate() {
                if scores.seen_column[c] == want_seen && best.is_none_or(|(_, b)| s > b) {
                    best = Some((c, s));
                }
            }
            best
        };
        let seen_best = block_best(true);
        let unseen_best = block_best(false);
        let seen = scores.truth_is_seen(r);
        let margin = match (seen_best, unseen_best) {
            (Some((_, s)), Some((_, u))) => s - u,
            (Some(_), None) => f64::INFINITY,
            (None, _) => f64::NEG_INFINITY,
        };
        let own = if seen { seen_best } else { unseen_best };
        rows.push(RowSummary {
            margin,
            seen,
            block_hit: own.is_some_and(|(c, _)| c == scores.truth[r]),
        });
    }
    let n_seen_rows = rows.iter().filter(|r| r.seen).count();
    let n_unseen_rows = rows.len() - n_seen_rows;
    if n_seen_rows == 0 || n_seen_cols == 0 {
        return Err(Error::OneSidedSplit("seen"));
    }
    if n_unseen_rows == 0 || n_unseen_cols == 0 {
        return Err(Error::OneSidedSplit("unseen"));
    }

    // A row is predicted seen iff bias <= margin.
    let at_bias = |bias: f64| {
        let (mut s, mut u) = (0, 0);
        for row in rows.iter().filter(|r| r.block_hit) {
            if row.seen && bias <= row.margin {
                s += 1;
            } else if !row.seen && bias > row.margin {
                u += 1;
            }
        }
        (accuracy(s, n_seen_rows), accuracy(u, n_unseen_rows))
    };

    let mut margins: Vec<f64> = rows.iter().map(|r| r.margin).filter(|m| m.is_finite()).collect();
    margins.sort_by(f64::total_cmp);
    margins.dedup();
    let lo = scores.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let eps = 1e-6 * range;
    let mut biases = Vec::with_capacity(2 * margins.len() + 2);
    biases.push(margins.first().copied().unwrap_or(0.0) - range - 1.0);
    for &m in &margins {
        biases.push(m - eps);
        biases.push(m + eps);
    }
    biases.push(margins.last().copied().unwrap_or(0.0) + range + 1.0);

    let curve: Vec<CurvePoint> = biases
        .into_iter()
        .map(|bias| {
            let (seen_acc, unseen_acc) = at_bias(bias);
            CurvePoint {
                bias,
                seen_acc,
                unseen_acc,
            }
        })
        .collect();

    let auc = curve
        .windows(2)
        .map(|w| (w[0].seen_acc - w[1].seen_acc) * (w[0].unseen_acc + w[1].unseen_acc) / 2.0)
        .sum::<f64>();
    let (best_hm, best_hm_bias) = curve
        .iter()
        .map(|p| (harmonic_mean(p.seen_acc, p.unseen_acc), p.bias))
        .fold((f64::NEG_INFINITY, 0.0), |best, cur| if cur.0 > best.0 { cur } else { best });

    let (seen_acc, unseen_acc) = biased_accuracy(scores, 0.0);
    let (mut state_hits, mut object_hits) = (0, 0);
    for r in 0..scores.n_rows() {
        let predicted = scores.candidates[scores.biased_prediction(r, 0.0)];
        let truth = scores.candidates[scores.truth[r]];
        state_hits += usize::from(predicted.state == truth.state);
        object_hits += usize::from(predicted.object == truth.object);
    }
    let hm_at_zero = harmonic_mean(seen_acc, unseen_acc);
    Ok(EvalReport {
        seen_acc,
        unseen_acc,
        hm_at_zero,
        best_hm: best_hm.max(hm_at_zero),
        best_hm_bias: if hm_at_zero > best_hm { 0.0 } else { best_hm_bias },
        auc,
        state_acc: accuracy(state_hits, scores.n_rows()),
        object_acc: accuracy(object_hits, scores.n_rows()),
        n_seen_rows,
        n_unseen_rows,
        curve,
    })
}

/// Evaluate a model on a val/test dataset.
pub fn evaluate(
    enc: &FrozenEncoders,
    table: &PromptTable,
    dataset: &Dataset,
    space: &CompositionSpace,
    threads: usize,
) -> Result<EvalReport> {
    sweep_auc(&score_matrix(enc, table, dataset, space, threads)?)
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("bias,seen_acc,unseen_acc\n");
        for p in &self.curve {
            out.push_str(&format!("{},{},{}\n", p.bias, p.seen_acc, p.unseen_acc));
        }
        out
    }

    pub fn write_curve_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.curve_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Ranked retrieval hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranked<T> {
    pub item: T,
    pub score: f64,
}

fn top_k<T: Copy>(items: impl IntoIterator<Item = (T, f64)>, k: usize) -> Vec<Ranked<T>> {
    let mut ranked: Vec<(usize, T, f64)> = items.into_iter().enumerate().map(|(i, (t, s))| (i, t, s)).collect();
    // Stable sort keeps lower indices first among equal scores.
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2));
    ranked
        .into_iter()
        .take(k)
        .map(|(_, item, score)| Ranked { item, score })
        .collect()
}

/// Image-to-text: the `k` best candidate pairs for one image (fewer if the
/// candidate set is smaller).
pub fn topk_text_retrieval(
    enc: &FrozenEncoders,
    table: &PromptTable,
    features: &[f32],
    candidates: &[Pair],
    k: usize,
) -> Result<Vec<Ranked<Pair>>> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let f_v = encode_image(features)?;
    let text = encode_candidates(enc, table, candidates)?;
    let logits = logits_against(&f_v, &text, enc.tau);
    Ok(top_k(candidates.iter().copied().zip(logits), k))
}

/// Text-to-image: the `k` dataset samples most similar to `pair`.
pub fn topk_image_retrieval(
    enc: &FrozenEncoders,
    table: &PromptTable,
    pair: Pair,
    dataset: &Dataset,
    k: usize,
) -> Result<Vec<Ranked<usize>>> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let f_t = encode_text(enc, table, pair)?;
    let scores = dataset
        .samples
        .iter()
        .map(|s| encode_image(&s.features).map(|f_v| f_v.dot(&*f_t)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(top_k(scores.into_iter().enumerate(), k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hand_matrix() -> ScoreMatrix {
        ScoreMatrix::new(array![[2.0, 1.0], [0.0, 3.0]], vec![Pair::new(0, 0), Pair::new(1, 1)], vec![0, 1], vec![
            true, false,
        ])
        .unwrap()
    }

    #[test]
    fn hand_argmax_at_zero_bias() {
        assert_eq!(biased_accuracy(&hand_matrix(), 0.0), (1.0, 1.0));
    }

    #[test]
    fn extreme_biases_confine_predictions() {
        let m = hand_matrix();
        assert_eq!(biased_accuracy(&m, 1e9), (0.0, 1.0));
        assert_eq!(biased_accuracy(&m, -1e9), (1.0, 0.0));
    }

    #[test]
    fn perfect_classifier_scores_one() {
        let m = hand_matrix();
        let r = sweep_auc(&m).unwrap();
        assert_eq!((r.seen_acc, r.unseen_acc, r.best_hm, r.auc), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn hopeless_unseen_rows_give_zero_auc() {
        // Unseen truth is column 2, which always loses to column 1 within the
        // unseen block.
        let m = ScoreMatrix::new(
            array![[3.0, 1.0, 0.0], [0.0, 2.0, 1.0], [1.0, 5.0, -1.0]],
            vec![Pair::new(0, 0), Pair::new(1, 1), Pair::new(1, 0)],
            vec![0, 2, 2],
            vec![true, false, false],
        )
        .unwrap();
        let r = sweep_auc(&m).unwrap();
        assert_eq!(r.auc, 0.0);
        assert!(r.curve.iter().all(|p| p.unseen_acc == 0.0));
    }

    #[test]
    fn one_sided_split_is_an_error() {
        let m = ScoreMatrix::new(array![[2.0, 1.0]], vec![Pair::new(0, 0), Pair::new(1, 1)], vec![0], vec![true, false])
            .unwrap();
        assert!(matches!(sweep_auc(&m), Err(Error::OneSidedSplit("unseen"))));
    }

    fn random_matrix(rng: &mut ChaCha8Rng) -> ScoreMatrix {
        let rows = rng.random_range(2..=20);
        let cols = rng.random_range(2..=12);
        let n_seen = rng.random_range(1..cols);
        let seen_column: Vec<bool> = (0..cols).map(|c| c < n_seen).collect();
        let mut truth: Vec<usize> = (0..rows).map(|_| rng.random_range(0..cols)).collect();
        truth[0] = 0;
        truth[1] = cols - 1;
        let scores = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0));
        let candidates = (0..cols).map(|c| Pair::new(c, 0)).collect();
        ScoreMatrix::new(scores, candidates, truth, seen_column).unwrap()
    }

    #[test]
    fn curve_is_monotone_and_matches_literal_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let m = random_matrix(&mut rng);
            let r = sweep_auc(&m).unwrap();
            for w in r.curve.windows(2) {
                assert!(w[1].seen_acc <= w[0].seen_acc);
                assert!(w[1].unseen_acc >= w[0].unseen_acc);
            }
            for p in &r.curve {
                assert_eq!(biased_accuracy(&m, p.bias), (p.seen_acc, p.unseen_acc));
            }
            assert!((0.0..=1.0).contains(&r.auc));
            assert!(r.best_hm >= r.hm_at_zero);
        }
    }

    #[test]
    fn auc_invariant_to_row_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_matrix(&mut rng);
        let mut shifted = m.clone();
        for (i, mut row) in shifted.scores.rows_mut().into_iter().enumerate() {
            row += i as f64 * 0.37 - 2.0;
        }
        let a = sweep_auc(&m).unwrap().auc;
        let b = sweep_auc(&shifted).unwrap().auc;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn top_k_orders_by_score_with_index_ties() {
        let ranked = top_k([(10, 0.5), (11, 0.9), (12, 0.5), (13, 0.1)], 3);
        let items: Vec<i32> = ranked.iter().map(|r| r.item).collect();
        assert_eq!(items, vec![11, 10, 12]);
        assert_eq!(top_k([(1, 1.0)], 5).len(), 1);
    }
}
