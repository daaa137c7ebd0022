use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Fitted, Learner, Task};
use crate::error::{Error, Result};

/// Gradient boosting over shallow histogram trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_bins: usize,
    /// Probability clip for classification predictions.
    pub p_min: f64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            learning_rate: 0.1,
            max_depth: 2,
            min_leaf: 5,
            max_bins: 64,
            p_min: 1e-3,
        }
    }
}

impl BoostConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("boosting learning_rate must be positive".into()));
        }
        if self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::Config(
                "boosting max_depth and min_leaf must be at least 1".into(),
            ));
        }
        if !(2..=256).contains(&self.max_bins) {
            return Err(Error::Config("boosting max_bins must be in [2, 256]".into()));
        }
        if !(self.p_min > 0.0 && self.p_min < 0.5) {
            return Err(Error::Config("boosting p_min must be in (0, 0.5)".into()));
        }
        Ok(())
    }
}

pub(crate) struct BoostLearner(pub BoostConfig);

impl Learner for BoostLearner {
    fn name(&self) -> String {
        format!(
            "boosted(rounds={}, lr={}, depth={})",
            self.0.rounds, self.0.learning_rate, self.0.max_depth
        )
    }

    fn supports(&self, _task: Task) -> bool {
        true
    }

    fn fit(&self, x: &DMatrix<f64>, y: &[f64], task: Task) -> Result<Box<dyn Fitted>> {
        Ok(Box::new(fit_boosted(x, y, task, &self.0)?))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn eval(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[(i, *feature)] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoostedTrees {
    task: Task,
    base: f64,
    trees: Vec<Node>,
    p_min: f64,
}

impl BoostedTrees {
    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }
}

impl Fitted for BoostedTrees {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                let f = self.base + self.trees.iter().map(|t| t.eval(x, i)).sum::<f64>();
                match self.task {
                    Task::Regression => f,
                    Task::Classification => sigmoid(f).clamp(self.p_min, 1.0 - self.p_min),
                }
            })
            .collect()
    }
}

fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

/// Column-major binned copy of the training features.
struct Binned {
    n: usize,
    bins: Vec<Vec<u8>>,
    cuts: Vec<Vec<f64>>,
}

impl Binned {
    fn new(x: &DMatrix<f64>, max_bins: usize) -> Self {
        let n = x.nrows();
        let mut bins = Vec::with_capacity(x.ncols());
        let mut cuts = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mut sorted: Vec<f64> = col.iter().copied().collect();
            sorted.sort_by(f64::total_cmp);
            let mut uniq = sorted.clone();
            uniq.dedup();
            let c: Vec<f64> = if uniq.len() <= max_bins {
                uniq.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut c: Vec<f64> = (1..max_bins)
                    .map(|b| sorted[(b * n / max_bins).min(n - 1)])
                    .collect();
                c.dedup();
                // the largest value never acts as a cut
                if c.last() == sorted.last() {
                    c.pop();
                }
                c
            };
            bins.push(col.iter().map(|&v| c.partition_point(|&t| t < v) as u8).collect());
            cuts.push(c);
        }
        Self { n, bins, cuts }
    }
}

struct TreeBuilder<'a> {
    data: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a BoostConfig,
    /// Newton leaves get a tiny ridge so near-pure nodes stay finite.
    lambda: f64,
}

impl TreeBuilder<'_> {
    fn leaf_value(&self, rows: &[u32]) -> f64 {
        let g: f64 = rows.iter().map(|&i| self.grad[i as usize]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i as usize]).sum();
        (self.cfg.learning_rate * g / (h + self.lambda)).clamp(-5.0, 5.0)
    }

    fn build(&self, rows: Vec<u32>, depth: usize, out: &mut [f64]) -> Node {
        if depth < self.cfg.max_depth && rows.len() >= 2 * self.cfg.min_leaf {
            if let Some((feature, bin)) = self.best_split(&rows) {
                let col = &self.data.bins[feature];
                let (left, right): (Vec<u32>, Vec<u32>) =
                    rows.into_iter().partition(|&i| col[i as usize] as usize <= bin);
                return Node::Split {
                    feature,
                    threshold: self.data.cuts[feature][bin],
                    left: Box::new(self.build(left, depth + 1, out)),
                    right: Box::new(self.build(right, depth + 1, out)),
                };
            }
        }
        let v = self.leaf_value(&rows);
        for &i in &rows {
            out[i as usize] = v;
        }
        Node::Leaf(v)
    }

    fn best_split(&self, rows: &[u32]) -> Option<(usize, usize)> {
        let g_tot: f64 = rows.iter().map(|&i| self.grad[i as usize]).sum();
        let h_tot: f64 = rows.iter().map(|&i| self.hess[i as usize]).sum();
        let parent = g_tot * g_tot / (h_tot + self.lambda);
        let min_leaf = self.cfg.min_leaf;
        let mut best: Option<(usize, usize)> = None;
        let mut best_gain = 1e-12 * parent.abs().max(1e-300);

        let mut hg = vec![0.0; 256];
        let mut hh = vec![0.0; 256];
        let mut hc = vec![0usize; 256];
        for (f, col) in self.data.bins.iter().enumerate() {
            let nb = self.data.cuts[f].len() + 1;
            if nb < 2 {
                continue;
            }
            hg[..nb].fill(0.0);
            hh[..nb].fill(0.0);
            hc[..nb].fill(0);
            for &i in rows {
                let b = col[i as usize] as usize;
                hg[b] += self.grad[i as usize];
                hh[b] += self.hess[i as usize];
                hc[b] += 1;
            }
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
            for b in 0..nb - 1 {
                gl += hg[b];
                hl += hh[b];
                cl += hc[b];
                let cr = rows.len() - cl;
                if cl < min_leaf {
                    continue;
                }
                if cr < min_leaf {
                    break;
                }
                let (gr, hr) = (g_tot - gl, h_tot - hl);
                let gain = gl * gl / (hl + self.lambda) + gr * gr / (hr + self.lambda) - parent;
                if gain > best_gain {
                    best_gain = gain;
                    best = Some((f, b));
                }
            }
        }
        best
    }
}

/// Fits boosted trees with squared loss (regression) or log-loss with Newton
/// leaf values (classification).
pub fn fit_boosted(x: &DMatrix<f64>, y: &[f64], task: Task, cfg: &BoostConfig) -> Result<BoostedTrees> {
    cfg.validate()?;
    let n = y.len();
    if x.nrows() != n || n == 0 {
        return Err(Error::Validation(
            "boosting design and target lengths differ".into(),
        ));
    }
    if task == Task::Classification && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation("classification labels must be 0 or 1".into()));
    }
    let data = Binned::new(x, cfg.max_bins);
    debug_assert_eq!(data.n, n);

    let base = match task {
        Task::Regression => y[0] + y.iter().map(|v| v - y[0]).sum::<f64>() / n as f64,
        Task::Classification => {
            let p = (y.iter().sum::<f64>() / n as f64).clamp(cfg.p_min, 1.0 - cfg.p_min);
            (p / (1.0 - p)).ln()
        }
    };
    let lambda = match task {
        Task::Regression => 0.0,
        Task::Classification => 1e-6,
    };

    let mut f = vec![base; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![1.0; n];
    let mut step = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        match task {
            Task::Regression => {
                for i in 0..n {
                    grad[i] = y[i] - f[i];
                }
            }
            Task::Classification => {
                for i in 0..n {
                    let p = sigmoid(f[i]);
                    grad[i] = y[i] - p;
                    hess[i] = p * (1.0 - p);
                }
            }
        }
        let builder = TreeBuilder {
            data: &data,
            grad: &grad,
            hess: &hess,
            cfg,
            lambda,
        };
        let tree = builder.build((0..n as u32).collect(), 0, &mut step);
        if let Node::Leaf(v) = tree {
            if v.abs() < 1e-15 {
                break;
            }
        }
        for i in 0..n {
            f[i] += step[i];
        }
        trees.push(tree);
    }
    Ok(BoostedTrees {
        task,
        base,
        trees,
        p_min: cfg.p_min,
    })
}
