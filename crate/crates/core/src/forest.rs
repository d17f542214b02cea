//! Random-forest regression: bootstrap-sampled CART regression trees with a
//! fresh random subset of candidate columns at every node, predicting by the
//! plain average of tree outputs.
//!
//! Defaults follow the long-standing regression defaults of R's
//! `randomForest`: 500 trees, `mtry = max(1, floor(p / 3))`, node size 5,
//! bootstrap samples of size `n` drawn with replacement, no depth cap.
//!
//! # Randomness
//!
//! Every tree owns a ChaCha8 stream: the key is derived from
//! [`ForestConfig::seed`] and the stream number is the tree index. Within a
//! tree, the bootstrap draws come first and node-level candidate draws follow
//! in depth-first, left-before-right order. Trees never share RNG state, so
//! the fitted forest is bit-identical whatever the size of the rayon pool.
//!
//! # Serialized format
//!
//! [`Forest::to_text`] writes a line-oriented UTF-8 format. Reals are written
//! as the 16 hex digits of their IEEE-754 bit pattern, so a round trip is
//! bit-exact.
//!
//! ```text
//! rforecast-forest 1
//! p <usize>
//! n_trees <usize>
//! mtry <usize>
//! min_node_size <usize>
//! bootstrap <0|1>
//! seed <u64>
//! y_min <hex>
//! y_max <hex>
//! oob_mse <hex|none>
//! tree <node count>        -- repeated n_trees times, nodes in pre-order:
//! S <split_var> <hex>      --   internal node, left subtree follows first
//! L <hex> <n_samples>      --   leaf
//! end
//! ```

use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::matrix::Matrix;

const FORMAT_MAGIC: &str = "rforecast-forest";
const FORMAT_VERSION: u32 = 1;

/// Relative tolerance used when comparing SSE reductions. A candidate split
/// must beat the incumbent by more than `SPLIT_TOL * parent_sse`, and a
/// split only counts as an improvement above that same margin.
pub const SPLIT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training data is empty")]
    EmptyData,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid forest configuration: {0}")]
    Config(String),
    #[error("malformed forest file at line {line}: {msg}")]
    Format { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` resolves to `max(1, floor(p / 3))` at fit time.
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            min_node_size: 5,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| (p / 3).max(1))
    }

    fn validate(&self, p: usize) -> Result<usize, ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::Config("n_trees must be >= 1".into()));
        }
        if self.min_node_size == 0 {
            return Err(ForestError::Config("min_node_size must be >= 1".into()));
        }
        let mtry = self.resolved_mtry(p);
        if mtry == 0 || mtry > p {
            return Err(ForestError::Config(format!(
                "mtry must be in 1..={p}, got {mtry}"
            )));
        }
        Ok(mtry)
    }
}

/// One node of a [`Tree`]. A split's left child is the node stored
/// immediately after it; `right` is the index of its right child.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Leaf {
        prediction: f64,
        n_samples: usize,
    },
    Split {
        split_var: usize,
        split_value: f64,
        right: usize,
    },
}

/// A regression tree stored as a pre-order node list.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { right, .. } => 1 + go(nodes, i + 1).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<(f64, usize)> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                TreeNode::Leaf {
                    prediction,
                    n_samples,
                } => Some((prediction, n_samples)),
                TreeNode::Split { .. } => None,
            })
            .collect()
    }

    fn max_split_var(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { split_var, .. } => Some(*split_var),
                TreeNode::Leaf { .. } => None,
            })
            .max()
    }
}

/// Descends left iff `x[split_var] <= split_value`.
pub fn predict_tree(tree: &Tree, x: &[f64]) -> f64 {
    let mut i = 0;
    loop {
        match tree.nodes[i] {
            TreeNode::Leaf { prediction, .. } => return prediction,
            TreeNode::Split {
                split_var,
                split_value,
                right,
            } => {
                i = if x[split_var] <= split_value { i + 1 } else { right };
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub var: usize,
    pub value: f64,
    pub sse_reduction: f64,
}

/// Best SSE-reducing split of a node over `candidate_vars`.
///
/// Thresholds are midpoints between consecutive distinct sorted values.
/// Equal reductions (within [`SPLIT_TOL`]) resolve to the lowest variable
/// index, then the lowest threshold. Returns `None` for nodes with fewer
/// than two rows, when every candidate column is constant, or when no split
/// reduces SSE.
pub fn find_best_split(x_node: &Matrix, y_node: &[f64], candidate_vars: &[usize]) -> Option<Split> {
    assert_eq!(x_node.rows(), y_node.len());
    let items: Vec<Item> = (0..y_node.len() as u32).map(|row| Item { row, weight: 1 }).collect();
    let mut vars = candidate_vars.to_vec();
    vars.sort_unstable();
    vars.dedup();
    let mut work = NodeWork::new(std::sync::Arc::new(Ranked::new(x_node)));
    best_split_items(y_node, &items, &vars, &mut work).map(|(s, _)| s)
}

/// A distinct training row in a node and how many times the bootstrap
/// sample drew it. Trees are grown on these rather than on the raw draws:
/// the fit depends only on the multiset of rows, and about a third of a
/// bootstrap sample is repeats.
#[derive(Debug, Clone, Copy)]
struct Item {
    row: u32,
    weight: u32,
}

/// Per-column dense ranks of the training matrix, built once per forest so
/// node-level sorting compares integers rather than floats.
struct Ranked {
    n: usize,
    /// `rank[c * n + r]` is the rank of `x[r][c]` among column `c`'s
    /// distinct values.
    rank: Vec<u32>,
    /// Column `c`'s distinct values in increasing order.
    values: Vec<Vec<f64>>,
    /// Column `c`'s rows in increasing rank order.
    order: Vec<Vec<u32>>,
}

impl Ranked {
    fn new(x: &Matrix) -> Self {
        let n = x.rows();
        let mut rank = vec![0u32; n * x.cols()];
        let mut values = Vec::with_capacity(x.cols());
        let mut order = Vec::with_capacity(x.cols());
        for c in 0..x.cols() {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x.get(a as usize, c).total_cmp(&x.get(b as usize, c)));
            let mut distinct: Vec<f64> = Vec::new();
            for &r in &idx {
                let v = x.get(r as usize, c);
                if distinct.last() != Some(&v) {
                    distinct.push(v);
                }
                rank[c * n + r as usize] = (distinct.len() - 1) as u32;
            }
            values.push(distinct);
            order.push(idx);
        }
        Self {
            n,
            rank,
            values,
            order,
        }
    }

    fn column(&self, c: usize) -> &[u32] {
        &self.rank[c * self.n..(c + 1) * self.n]
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Pair {
    rank: u32,
    weight: u32,
    dev: f64,
}

/// Scratch space for one tree's split searches.
struct NodeWork {
    ranked: std::sync::Arc<Ranked>,
    weights: Vec<u32>,
    pairs: Vec<Pair>,
}

impl NodeWork {
    fn new(ranked: std::sync::Arc<Ranked>) -> Self {
        let n = ranked.n;
        Self {
            ranked,
            weights: vec![0; n],
            pairs: vec![Pair::default(); n],
        }
    }

    /// Fills `pairs[..items.len()]` with the node's rows in increasing rank
    /// order. Large nodes walk the column's presorted row order; small
    /// nodes sort directly.
    fn gather(&mut self, y: &[f64], items: &[Item], var: usize, mean: f64) {
        let ranked = &*self.ranked;
        let rank = ranked.column(var);
        let pairs = &mut self.pairs[..items.len()];
        if items.len() * 8 >= ranked.n {
            for it in items {
                self.weights[it.row as usize] = it.weight;
            }
            let mut k = 0;
            for &r in &ranked.order[var] {
                let r = r as usize;
                let weight = self.weights[r];
                if weight > 0 {
                    pairs[k] = Pair {
                        rank: rank[r],
                        weight,
                        dev: y[r] - mean,
                    };
                    k += 1;
                    self.weights[r] = 0;
                }
            }
        } else {
            for (slot, it) in pairs.iter_mut().zip(items) {
                let r = it.row as usize;
                *slot = Pair {
                    rank: rank[r],
                    weight: it.weight,
                    dev: y[r] - mean,
                };
            }
            pairs.sort_unstable_by_key(|p| p.rank);
        }
    }
}

/// Best split plus the rank of the largest value sent left.
fn best_split_items(
    y: &[f64],
    items: &[Item],
    sorted_vars: &[usize],
    work: &mut NodeWork,
) -> Option<(Split, u32)> {
    let k = items.len();
    let (sum, total_w) = items
        .iter()
        .fold((0.0, 0u32), |(s, w), it| (s + it.weight as f64 * y[it.row as usize], w + it.weight));
    if total_w < 2 || k < 2 {
        return None;
    }
    let nf = total_w as f64;
    let mean = sum / nf;
    let mut tol = None;

    let mut best: Option<(Split, u32)> = None;
    for &var in sorted_vars {
        work.gather(y, items, var, mean);
        let pairs = &work.pairs[..k];
        let tol = *tol.get_or_insert_with(|| {
            SPLIT_TOL * pairs.iter().map(|p| p.weight as f64 * p.dev * p.dev).sum::<f64>()
        });
        if pairs[0].rank == pairs[k - 1].rank {
            continue;
        }
        let total: f64 = pairs.iter().map(|p| p.weight as f64 * p.dev).sum();
        let mut left_sum = 0.0;
        let mut left_w = 0u32;
        let mut best_here: Option<(f64, u32)> = None;
        let mut incumbent = best.map_or(tol, |(b, _)| b.sse_reduction + tol);
        for i in 0..k - 1 {
            let p = pairs[i];
            left_sum += p.weight as f64 * p.dev;
            left_w += p.weight;
            if p.rank == pairs[i + 1].rank {
                continue;
            }
            // nl·nr/n·(mean_l − mean_r)², with a single division.
            let nl = left_w as f64;
            let nr = nf - nl;
            let d = left_sum * nf - total * nl;
            let reduction = d * d / (nl * nr * nf);
            if reduction > incumbent {
                best_here = Some((reduction, p.rank));
                incumbent = reduction + tol;
            }
        }
        if let Some((reduction, lo_rank)) = best_here {
            let values = &work.ranked.values[var];
            let (lo, hi) = (values[lo_rank as usize], values[lo_rank as usize + 1]);
            let mut value = lo + (hi - lo) / 2.0;
            if value >= hi {
                value = lo;
            }
            let split = Split {
                var,
                value,
                sse_reduction: reduction,
            };
            best = Some((split, lo_rank));
        }
    }
    best
}

/// `n` uniform draws with replacement from `0..n`.
pub fn bootstrap_sample<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// RNG stream for tree `tree` of a forest seeded with `seed`.
pub fn tree_rng(seed: u64, tree: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree);
    rng
}

/// Weighted mean that is exact for constant input, clamped to the input
/// range.
fn bounded_mean(y: &[f64], items: &[Item]) -> f64 {
    let first = y[items[0].row as usize];
    let (mut lo, mut hi, mut dev, mut n) = (first, first, 0.0, 0u32);
    for it in items {
        let v = y[it.row as usize];
        lo = lo.min(v);
        hi = hi.max(v);
        dev += it.weight as f64 * (v - first);
        n += it.weight;
    }
    (first + dev / n as f64).clamp(lo, hi)
}

struct Grower<'a> {
    y: &'a [f64],
    p: usize,
    mtry: usize,
    min_node_size: usize,
    rng: ChaCha8Rng,
    work: &'a mut NodeWork,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    fn leaf(&mut self, items: &[Item], n_samples: usize) {
        self.nodes.push(TreeNode::Leaf {
            prediction: bounded_mean(self.y, items),
            n_samples,
        });
    }

    fn grow(&mut self, items: &mut [Item]) {
        let n_samples: usize = items.iter().map(|it| it.weight as usize).sum();
        if n_samples < 2 * self.min_node_size {
            return self.leaf(items, n_samples);
        }
        let mut vars = index::sample(&mut self.rng, self.p, self.mtry).into_vec();
        vars.sort_unstable();
        let Some((split, lo_rank)) = best_split_items(self.y, items, &vars, self.work) else {
            return self.leaf(items, n_samples);
        };
        let rank = self.work.ranked.column(split.var);
        let mut mid = 0;
        for i in 0..items.len() {
            if rank[items[i].row as usize] <= lo_rank {
                items.swap(i, mid);
                mid += 1;
            }
        }
        debug_assert!(mid > 0 && mid < items.len());
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            prediction: 0.0,
            n_samples: 0,
        });
        let (l, r) = items.split_at_mut(mid);
        self.grow(l);
        let right = self.nodes.len();
        self.grow(r);
        self.nodes[at] = TreeNode::Split {
            split_var: split.var,
            split_value: split.value,
            right,
        };
    }
}

/// A fitted tree plus the rows it never saw.
struct TreeFit {
    root: Tree,
    out_of_bag: Vec<usize>,
}

fn fit_tree(
    config: &ForestConfig,
    mtry: usize,
    y: &[f64],
    t: usize,
    work: &mut NodeWork,
) -> TreeFit {
    let n = y.len();
    let mut rng = tree_rng(config.seed, t as u64);
    let mut draws = vec![0u32; n];
    if config.bootstrap {
        for r in bootstrap_sample(&mut rng, n) {
            draws[r] += 1;
        }
    } else {
        draws.fill(1);
    }
    let mut items: Vec<Item> = (0..n as u32)
        .filter(|&r| draws[r as usize] > 0)
        .map(|row| Item {
            row,
            weight: draws[row as usize],
        })
        .collect();
    let out_of_bag = (0..n).filter(|&r| draws[r] == 0).collect();
    let mut grower = Grower {
        y,
        p: work.ranked.values.len(),
        mtry,
        min_node_size: config.min_node_size,
        rng,
        work,
        nodes: Vec::with_capacity(2 * n / config.min_node_size + 1),
    };
    grower.grow(&mut items);
    TreeFit {
        root: Tree { nodes: grower.nodes },
        out_of_bag,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    config: ForestConfig,
    p: usize,
    y_min: f64,
    y_max: f64,
    oob_mse: Option<f64>,
}

pub fn fit_forest(config: &ForestConfig, x: &Matrix, y: &[f64]) -> Result<Forest, ForestError> {
    Forest::fit(config, x, y)
}

pub fn predict(forest: &Forest, x: &[f64]) -> Result<f64, ForestError> {
    forest.predict(x)
}

impl Forest {
    /// Trains the trees on the current rayon pool.
    pub fn fit(config: &ForestConfig, x: &Matrix, y: &[f64]) -> Result<Self, ForestError> {
        let n = y.len();
        if n == 0 || x.cols() == 0 {
            return Err(ForestError::EmptyData);
        }
        if x.rows() != n {
            return Err(ForestError::DimensionMismatch {
                expected: n,
                got: x.rows(),
            });
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite("features"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite("target"));
        }
        let mtry = config.validate(x.cols())?;
        let ranked = std::sync::Arc::new(Ranked::new(x));

        let fits: Vec<TreeFit> = (0..config.n_trees)
            .into_par_iter()
            .map_init(
                || NodeWork::new(ranked.clone()),
                |work, t| fit_tree(config, mtry, y, t, work),
            )
            .collect();

        let mut oob_sum = vec![0.0; n];
        let mut oob_count = vec![0usize; n];
        for fit in &fits {
            for &r in &fit.out_of_bag {
                oob_sum[r] += predict_tree(&fit.root, x.row(r));
                oob_count[r] += 1;
            }
        }
        let (sq, m) = (0..n)
            .filter(|&r| oob_count[r] > 0)
            .fold((0.0, 0usize), |(sq, m), r| {
                let err = oob_sum[r] / oob_count[r] as f64 - y[r];
                (sq + err * err, m + 1)
            });
        let oob_mse = (m > 0).then(|| sq / m as f64);

        let mut config = config.clone();
        config.mtry = Some(mtry);
        Ok(Self {
            trees: fits.into_iter().map(|f| f.root).collect(),
            config,
            p: x.cols(),
            y_min: y.iter().copied().fold(f64::INFINITY, f64::min),
            y_max: y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            oob_mse,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// The configuration used, with `mtry` resolved.
    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.p
    }

    pub fn target_range(&self) -> (f64, f64) {
        (self.y_min, self.y_max)
    }

    /// Out-of-bag mean squared error. Reported only; never used for tuning.
    pub fn oob_mse(&self) -> Option<f64> {
        self.oob_mse
    }

    /// Mean of the tree predictions, summed in tree order and clamped to the
    /// training target range (the clamp only absorbs final-ulp rounding).
    pub fn predict(&self, x: &[f64]) -> Result<f64, ForestError> {
        if x.len() != self.p {
            return Err(ForestError::DimensionMismatch {
                expected: self.p,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite("prediction input"));
        }
        let sum: f64 = self.trees.iter().map(|t| predict_tree(t, x)).sum();
        Ok((sum / self.trees.len() as f64).clamp(self.y_min, self.y_max))
    }

    pub fn predict_rows(&self, x: &Matrix) -> Result<Vec<f64>, ForestError> {
        (0..x.rows()).map(|r| self.predict(x.row(r))).collect()
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(out, "p {}", self.p);
        let _ = writeln!(out, "n_trees {}", c.n_trees);
        let _ = writeln!(out, "mtry {}", c.resolved_mtry(self.p));
        let _ = writeln!(out, "min_node_size {}", c.min_node_size);
        let _ = writeln!(out, "bootstrap {}", u8::from(c.bootstrap));
        let _ = writeln!(out, "seed {}", c.seed);
        let _ = writeln!(out, "y_min {:016x}", self.y_min.to_bits());
        let _ = writeln!(out, "y_max {:016x}", self.y_max.to_bits());
        match self.oob_mse {
            Some(v) => {
                let _ = writeln!(out, "oob_mse {:016x}", v.to_bits());
            }
            None => out.push_str("oob_mse none\n"),
        }
        for tree in &self.trees {
            let _ = writeln!(out, "tree {}", tree.node_count());
            for node in &tree.nodes {
                write_node(node, &mut out);
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ForestError> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
            line: 0,
        };
        let header = lines.next_fields()?;
        if header != [FORMAT_MAGIC, &FORMAT_VERSION.to_string()] {
            return Err(lines.err(format!("unsupported header {header:?}")));
        }
        let p: usize = lines.keyed("p")?;
        let n_trees: usize = lines.keyed("n_trees")?;
        let mtry: usize = lines.keyed("mtry")?;
        let min_node_size: usize = lines.keyed("min_node_size")?;
        let bootstrap = match lines.keyed::<u8>("bootstrap")? {
            0 => false,
            1 => true,
            v => return Err(lines.err(format!("bootstrap flag {v}"))),
        };
        let seed: u64 = lines.keyed("seed")?;
        let y_min = lines.keyed_hex("y_min")?;
        let y_max = lines.keyed_hex("y_max")?;
        let oob = lines.keyed::<String>("oob_mse")?;
        let oob_mse = match oob.as_str() {
            "none" => None,
            h => Some(parse_hex(h).ok_or_else(|| lines.err("bad oob_mse".into()))?),
        };
        let config = ForestConfig {
            n_trees,
            mtry: Some(mtry),
            min_node_size,
            bootstrap,
            seed,
        };
        if p == 0 {
            return Err(lines.err("p must be >= 1".into()));
        }
        config
            .validate(p)
            .map_err(|e| lines.err(e.to_string()))?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let count: usize = lines.keyed("tree")?;
            let mut nodes = Vec::new();
            read_node(&mut lines, p, &mut nodes)?;
            let tree = Tree { nodes };
            if tree.node_count() != count {
                return Err(lines.err(format!(
                    "tree declares {count} nodes, found {}",
                    tree.node_count()
                )));
            }
            trees.push(tree);
        }
        if lines.next_fields()? != ["end"] {
            return Err(lines.err("expected `end`".into()));
        }
        let forest = Self {
            trees,
            config,
            p,
            y_min,
            y_max,
            oob_mse,
        };
        debug_assert!(forest.trees.iter().all(|t| t.max_split_var().is_none_or(|v| v < p)));
        Ok(forest)
    }
}

fn write_node(node: &TreeNode, out: &mut String) {
    match node {
        TreeNode::Leaf {
            prediction,
            n_samples,
        } => {
            let _ = writeln!(out, "L {:016x} {n_samples}", prediction.to_bits());
        }
        TreeNode::Split {
            split_var,
            split_value,
            ..
        } => {
            let _ = writeln!(out, "S {split_var} {:016x}", split_value.to_bits());
        }
    }
}

fn parse_hex(s: &str) -> Option<f64> {
    if s.len() != 16 {
        return None;
    }
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

struct Lines<'a, I: Iterator<Item = (usize, &'a str)>> {
    inner: I,
    line: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Lines<'a, I> {
    fn err(&self, msg: String) -> ForestError {
        ForestError::Format {
            line: self.line,
            msg,
        }
    }

    fn next_fields(&mut self) -> Result<Vec<&'a str>, ForestError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.split_ascii_whitespace().collect())
            }
            None => Err(self.err("unexpected end of input".into())),
        }
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ForestError> {
        let f = self.next_fields()?;
        match f.as_slice() {
            [k, v] if *k == key => v
                .parse()
                .map_err(|_| self.err(format!("bad value for `{key}`: {v}"))),
            _ => Err(self.err(format!("expected `{key} <value>`"))),
        }
    }

    fn keyed_hex(&mut self, key: &str) -> Result<f64, ForestError> {
        let v: String = self.keyed(key)?;
        parse_hex(&v).ok_or_else(|| self.err(format!("bad hex real for `{key}`")))
    }
}

fn read_node<'a, I: Iterator<Item = (usize, &'a str)>>(
    lines: &mut Lines<'a, I>,
    p: usize,
    nodes: &mut Vec<TreeNode>,
) -> Result<(), ForestError> {
    let f = lines.next_fields()?;
    match f.as_slice() {
        ["L", v, n] => {
            let prediction = parse_hex(v).ok_or_else(|| lines.err("bad leaf value".into()))?;
            let n_samples: usize = n
                .parse()
                .map_err(|_| lines.err("bad leaf sample count".into()))?;
            if n_samples == 0 {
                return Err(lines.err("leaf with zero samples".into()));
            }
            nodes.push(TreeNode::Leaf {
                prediction,
                n_samples,
            });
            Ok(())
        }
        ["S", var, v] => {
            let split_var: usize = var
                .parse()
                .map_err(|_| lines.err("bad split variable".into()))?;
            if split_var >= p {
                return Err(lines.err(format!("split variable {split_var} >= p = {p}")));
            }
            let split_value = parse_hex(v).ok_or_else(|| lines.err("bad split value".into()))?;
            let at = nodes.len();
            nodes.push(TreeNode::Leaf {
                prediction: 0.0,
                n_samples: 0,
            });
            read_node(lines, p, nodes)?;
            let right = nodes.len();
            read_node(lines, p, nodes)?;
            nodes[at] = TreeNode::Split {
                split_var,
                split_value,
                right,
            };
            Ok(())
        }
        _ => Err(lines.err("expected `L` or `S` node".into())),
    }
}
