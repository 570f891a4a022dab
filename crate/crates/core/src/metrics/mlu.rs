//! Machine-learning utility: fit a regressor on synthetic rows, score it on
//! real rows with MAPE.
//!
//! The random forest is plain Breiman-style bagging of variance-reduction
//! CART trees grown to purity (minimum leaf size 1, no depth limit). Feature
//! subsampling happens once per tree. Each tree draws from its own ChaCha
//! stream of the run seed, so the ensemble is identical whether trees are
//! grown sequentially or in parallel.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::table::Table;

pub const MAPE_FLOOR: f64 = 1e-8;
pub const RIDGE_FALLBACK: f64 = 1e-8;

/// `mean(|y − ŷ| / max(|y|, 1e−8))`.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::Size(format!("length mismatch: {} vs {}", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(MetricError::Size("MAPE of an empty sample".into()));
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs() / a.abs().max(MAPE_FLOOR)).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl RegressionTree {
    /// Grows a tree on `rows` (indices into `x`/`y`, repeats allowed) using
    /// only the listed features.
    pub fn fit(x: &[Vec<f64>], y: &[f64], rows: Vec<usize>, features: &[usize]) -> Self {
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut stack = vec![(0usize, rows)];
        while let Some((id, rows)) = stack.pop() {
            let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
            let pure = rows.iter().all(|&i| y[i] == y[rows[0]]);
            let split = if rows.len() < 2 || pure { None } else { Self::best_split(x, y, &rows, features) };
            match split {
                None => nodes[id] = Node::Leaf(mean),
                Some(s) => {
                    let (l, r) = (nodes.len(), nodes.len() + 1);
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[id] = Node::Split { feature: s.feature, threshold: s.threshold, left: l, right: r };
                    stack.push((r, s.right));
                    stack.push((l, s.left));
                }
            }
        }
        Self { nodes }
    }

    /// Maximizes `S_l²/n_l + S_r²/n_r`, equivalent to minimizing the summed
    /// squared error of the two children.
    fn best_split(x: &[Vec<f64>], y: &[f64], rows: &[usize], features: &[usize]) -> Option<BestSplit> {
        let n = rows.len();
        let total: f64 = rows.iter().map(|&i| y[i]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<(usize, usize, f64, f64, Vec<usize>)> = None;
        for &f in features {
            let mut order = rows.to_vec();
            order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += y[order[k]];
                let (lo, hi) = (x[order[k]][f], x[order[k + 1]][f]);
                if lo == hi {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = (n - k - 1) as f64;
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                if score > parent && best.as_ref().is_none_or(|b| score > b.3) {
                    let mut threshold = 0.5 * (lo + hi);
                    if !(threshold >= lo && threshold < hi) {
                        threshold = lo;
                    }
                    best = Some((f, k, threshold, score, order.clone()));
                }
            }
        }
        best.map(|(feature, k, threshold, score, order)| BestSplit {
            feature,
            threshold,
            score,
            left: order[..=k].to_vec(),
            right: order[k + 1..].to_vec(),
        })
        .filter(|b| b.score.is_finite())
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    id = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features per tree; `None` means `⌈d/3⌉`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_features: None, bootstrap: true }
    }
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: &ForestParams, seed: u64) -> Result<Self, MetricError> {
        if x.is_empty() || x.len() != y.len() {
            return Err(MetricError::Size("forest needs matching, non-empty features and targets".into()));
        }
        if params.n_trees == 0 {
            return Err(MetricError::Config("forest needs at least one tree".into()));
        }
        let d = x[0].len();
        let per_tree = params.max_features.unwrap_or(d.div_ceil(3)).clamp(1, d.max(1));
        let n = x.len();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let mut features = sample_indices(&mut rng, d, per_tree).into_vec();
                features.sort_unstable();
                let rows: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                RegressionTree::fit(x, y, rows, &features)
            })
            .collect();
        Ok(Self { trees })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Ordinary least squares with intercept via the normal equations; falls
/// back to ridge `λ = 1e−8` when `XᵀX` is singular.
#[derive(Debug, Clone)]
pub struct LinearRegression {
    /// Intercept first, then one weight per feature.
    pub coefficients: Vec<f64>,
}

impl LinearRegression {
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self, MetricError> {
        if x.is_empty() || x.len() != y.len() {
            return Err(MetricError::Size("regression needs matching, non-empty features and targets".into()));
        }
        let (n, d) = (x.len(), x[0].len() + 1);
        let design = DMatrix::from_fn(n, d, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
        let target = DVector::from_column_slice(y);
        let xtx = design.transpose() * &design;
        let xty = design.transpose() * target;
        // Cholesky succeeds numerically on some exactly-collinear designs;
        // treat a pivot that is tiny relative to the diagonal as singular.
        let scale = xtx.diagonal().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let solved = xtx.clone().cholesky().and_then(|c| {
            let min_pivot = c.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, b| a.min(b * b));
            (min_pivot > 1e-12 * scale).then(|| c.solve(&xty))
        });
        let beta = match solved {
            Some(b) if b.iter().all(|v| v.is_finite()) => b,
            _ => {
                let ridge = xtx + DMatrix::identity(d, d) * RIDGE_FALLBACK;
                ridge
                    .lu()
                    .solve(&xty)
                    .ok_or_else(|| MetricError::Config("normal equations are singular even with ridge".into()))?
            }
        };
        Ok(Self { coefficients: beta.iter().copied().collect() })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.coefficients[0] + row.iter().zip(&self.coefficients[1..]).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MluModel {
    RandomForest,
    LinearRegression,
}

/// Train on synthetic rows, evaluate MAPE on real rows. Features are every
/// numeric column other than `target` present in both tables.
pub fn mlu(syn_train: &Table, real_test: &Table, target: &str, model: MluModel, seed: u64) -> Result<f64, MetricError> {
    for (t, label) in [(syn_train, "synthetic"), (real_test, "real")] {
        if !t.column(target).is_some_and(|c| c.is_numeric()) {
            return Err(MetricError::Schema(format!("{label} table has no numeric target `{target}`")));
        }
    }
    if syn_train.len() < 5 {
        return Err(MetricError::Size(format!("MLU needs at least 5 synthetic rows, got {}", syn_train.len())));
    }
    if real_test.is_empty() {
        return Err(MetricError::Size("real test table is empty".into()));
    }
    let features: Vec<&str> = real_test
        .numeric_column_names()
        .into_iter()
        .filter(|c| *c != target && syn_train.column(c).is_some_and(|s| s.is_numeric()))
        .collect();
    if features.is_empty() {
        return Err(MetricError::Schema("no numeric feature columns besides the target".into()));
    }
    let y_test = real_test.numeric_column(target).expect("checked");
    if y_test.iter().all(|v| *v == 0.0) {
        return Err(MetricError::MapeUndefined("every real target value is zero".into()));
    }
    let err = |e: crate::error::TableError| MetricError::Schema(e.to_string());
    let x_train = syn_train.numeric_matrix(&features).map_err(err)?;
    let y_train = syn_train.numeric_column(target).expect("checked");
    let x_test = real_test.numeric_matrix(&features).map_err(err)?;
    let preds: Vec<f64> = match model {
        MluModel::RandomForest => {
            let f = RandomForest::fit(&x_train, &y_train, &ForestParams::default(), seed)?;
            x_test.iter().map(|r| f.predict(r)).collect()
        }
        MluModel::LinearRegression => {
            let m = LinearRegression::fit(&x_train, &y_train)?;
            x_test.iter().map(|r| m.predict(r)).collect()
        }
    };
    mape(&y_test, &preds)
}
