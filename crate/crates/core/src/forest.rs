//! Bagged ensemble of Gini classification trees for the binary
//! landslide / non-landslide problem.
//!
//! Each tree draws its bootstrap and its per-node feature subsets from a
//! counter-based stream keyed by `(seed, tree index)`, so a forest is the same
//! no matter how many workers train it.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureStack;
use crate::raster::{Raster, NODATA};
use crate::rng::{stream_rng, TaskRng};
use crate::sampling::{Label, TrainingMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per node; `None` means `floor(sqrt(p))`, at least 1.
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            mtry: None,
            min_node_size: 1,
            max_depth: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(seed: u64) -> Self {
        ForestParams {
            seed,
            ..Default::default()
        }
    }

    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1))
    }
}

/// Node of a flattened tree. `left` takes rows with `value <= threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// Bootstrap-weighted class counts, indexed by [`Label::index`].
        votes: [u32; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn from_nodes(nodes: Vec<TreeNode>, n_features: usize) -> Result<Self> {
        validate_nodes(&nodes, n_features).map_err(Error::Input)?;
        Ok(DecisionTree { nodes })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left as usize).max(go(nodes, right as usize)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn predict(&self, row: &[f64]) -> Label {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
                TreeNode::Leaf { votes } => return majority(votes),
            }
        }
    }
}

/// Majority class; a tie goes to non-landslide.
fn majority(votes: [u32; 2]) -> Label {
    if votes[1] > votes[0] {
        Label::Landslide
    } else {
        Label::NonLandslide
    }
}

fn validate_nodes(nodes: &[TreeNode], n_features: usize) -> std::result::Result<(), String> {
    if nodes.is_empty() {
        return Err("tree has no nodes".into());
    }
    let mut referenced = vec![0u32; nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        if let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } = *node
        {
            if feature as usize >= n_features {
                return Err(format!("node {i} splits on feature {feature} of {n_features}"));
            }
            if !threshold.is_finite() {
                return Err(format!("node {i} has a non-finite threshold"));
            }
            for child in [left, right] {
                let c = child as usize;
                if c <= i || c >= nodes.len() {
                    return Err(format!("node {i} has invalid child {child}"));
                }
                referenced[c] += 1;
            }
        }
    }
    if referenced[0] != 0 || referenced[1..].iter().any(|&r| r != 1) {
        return Err("tree nodes are not a single rooted tree".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel {
    trees: Vec<DecisionTree>,
    pub feature_names: Vec<String>,
    /// Out-of-bag accuracy over rows left out by at least one tree.
    pub oob_accuracy: Option<f64>,
    /// Mean decrease in Gini impurity per feature.
    pub importance: Vec<f64>,
}

impl RandomForestModel {
    pub fn from_trees(
        trees: Vec<DecisionTree>,
        feature_names: Vec<String>,
        oob_accuracy: Option<f64>,
        importance: Vec<f64>,
    ) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Input("forest needs at least one tree".into()));
        }
        if importance.len() != feature_names.len() {
            return Err(Error::Input("importance length differs from feature count".into()));
        }
        let p = feature_names.len();
        for t in &trees {
            validate_nodes(&t.nodes, p).map_err(Error::Input)?;
        }
        Ok(RandomForestModel {
            trees,
            feature_names,
            oob_accuracy,
            importance,
        })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Tree votes per class for a row assumed valid.
    pub fn votes(&self, row: &[f64]) -> [u32; 2] {
        let mut v = [0u32; 2];
        for t in &self.trees {
            v[t.predict(row).index()] += 1;
        }
        v
    }

    /// Majority label and the fraction of trees voting for it.
    pub fn predict(&self, row: &[f64]) -> Result<(Label, f64)> {
        if row.len() != self.n_features() {
            return Err(Error::Input(format!(
                "row has {} features, model expects {}",
                row.len(),
                self.n_features()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("row has a missing value".into()));
        }
        let v = self.votes(row);
        let label = majority(v);
        Ok((label, v[label.index()] as f64 / self.trees.len() as f64))
    }

    pub fn predict_matrix(&self, data: &TrainingMatrix) -> Result<Vec<Label>> {
        if data.feature_names != self.feature_names {
            return Err(Error::Schema("matrix features differ from model features".into()));
        }
        Ok((0..data.n_rows())
            .into_par_iter()
            .map(|i| majority(self.votes(data.row(i))))
            .collect())
    }
}

struct Columns<'a> {
    cols: Vec<Vec<f64>>,
    labels: Vec<u8>,
    _data: &'a TrainingMatrix,
}

impl<'a> Columns<'a> {
    fn new(data: &'a TrainingMatrix) -> Self {
        let p = data.n_features();
        let mut cols = vec![Vec::with_capacity(data.n_rows()); p];
        for row in data.rows() {
            for (c, &v) in cols.iter_mut().zip(row) {
                c.push(v);
            }
        }
        let labels = data.labels.iter().map(|l| l.index() as u8).collect();
        Columns {
            cols,
            labels,
            _data: data,
        }
    }
}

struct TreeOutput {
    tree: DecisionTree,
    importance: Vec<f64>,
    oob: Vec<(u32, u8)>,
}

pub fn train_forest(data: &TrainingMatrix, params: &ForestParams) -> Result<RandomForestModel> {
    let n = data.n_rows();
    let p = data.n_features();
    if n < 2 {
        return Err(Error::Training(format!("need at least 2 rows, got {n}")));
    }
    if p == 0 {
        return Err(Error::Training("need at least one feature".into()));
    }
    if params.n_trees == 0 {
        return Err(Error::Parameter("n_trees must be at least 1".into()));
    }
    let mtry = params.resolved_mtry(p);
    if mtry == 0 || mtry > p {
        return Err(Error::Parameter(format!("mtry must be in 1..={p}, got {mtry}")));
    }
    if params.min_node_size == 0 {
        return Err(Error::Parameter("min_node_size must be at least 1".into()));
    }
    let landslides = data.labels.iter().filter(|l| l.is_landslide()).count();
    if landslides == 0 || landslides == n {
        return Err(Error::Training("training data holds a single class".into()));
    }

    let cols = Columns::new(data);
    let outputs: Vec<TreeOutput> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(params.seed, t as u64);
            let mut weights = vec![0u32; n];
            for _ in 0..n {
                weights[rng.random_range(0..n)] += 1;
            }
            let (tree, importance) = grow_tree(&cols.cols, &cols.labels, &weights, mtry, params, &mut rng);
            let oob = (0..n)
                .filter(|&i| weights[i] == 0)
                .map(|i| {
                    let row: Vec<f64> = cols.cols.iter().map(|c| c[i]).collect();
                    (i as u32, tree.predict(&row).index() as u8)
                })
                .collect();
            TreeOutput { tree, importance, oob }
        })
        .collect();

    let mut importance = vec![0.0f64; p];
    let mut oob_votes = vec![[0u32; 2]; n];
    let mut trees = Vec::with_capacity(outputs.len());
    for out in outputs {
        for (acc, v) in importance.iter_mut().zip(&out.importance) {
            *acc += v;
        }
        for (i, c) in out.oob {
            oob_votes[i as usize][c as usize] += 1;
        }
        trees.push(out.tree);
    }
    for v in &mut importance {
        *v /= params.n_trees as f64;
    }
    let (mut seen, mut correct) = (0usize, 0usize);
    for (votes, &label) in oob_votes.iter().zip(&cols.labels) {
        if votes[0] + votes[1] > 0 {
            seen += 1;
            correct += usize::from(majority(*votes).index() as u8 == label);
        }
    }
    let oob_accuracy = (seen > 0).then(|| correct as f64 / seen as f64);
    Ok(RandomForestModel {
        trees,
        feature_names: data.feature_names.clone(),
        oob_accuracy,
        importance,
    })
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Grows one tree on bootstrap weights. Returns the tree and its per-feature
/// impurity decrease, scaled by the bootstrap size.
fn grow_tree(
    cols: &[Vec<f64>],
    labels: &[u8],
    weights: &[u32],
    mtry: usize,
    params: &ForestParams,
    rng: &mut TaskRng,
) -> (DecisionTree, Vec<f64>) {
    let p = cols.len();
    let total_weight: f64 = weights.iter().map(|&w| w as f64).sum();
    let min_node = params.min_node_size as f64;
    let mut importance = vec![0.0f64; p];
    let mut samples: Vec<u32> = (0..weights.len() as u32).filter(|&i| weights[i as usize] > 0).collect();
    let mut features: Vec<usize> = (0..p).collect();
    let mut buf: Vec<(f64, u8, u32)> = Vec::with_capacity(samples.len());
    let mut nodes: Vec<TreeNode> = Vec::new();

    // (node slot, start, end, depth)
    let mut stack = vec![(0usize, 0usize, samples.len(), 0usize)];
    nodes.push(TreeNode::Leaf { votes: [0, 0] });
    while let Some((slot, start, end, depth)) = stack.pop() {
        let node = &samples[start..end];
        let mut counts = [0u32; 2];
        for &i in node {
            counts[labels[i as usize] as usize] += weights[i as usize];
        }
        let n_w = (counts[0] + counts[1]) as f64;
        let pure = counts[0] == 0 || counts[1] == 0;
        let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || n_w < 2.0 * min_node {
            nodes[slot] = TreeNode::Leaf { votes: counts };
            continue;
        }
        let parent_score = (counts[0] as f64).powi(2) / n_w + (counts[1] as f64).powi(2) / n_w;

        let (chosen, _) = features.partial_shuffle(rng, mtry);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        let mut best: Option<Candidate> = None;
        for &f in &chosen {
            buf.clear();
            buf.extend(node.iter().map(|&i| (cols[f][i as usize], labels[i as usize], weights[i as usize])));
            buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0f64; 2];
            for k in 0..buf.len() - 1 {
                let (v, c, w) = buf[k];
                left[c as usize] += w as f64;
                let next = buf[k + 1].0;
                if next <= v {
                    continue;
                }
                let nl = left[0] + left[1];
                let nr = n_w - nl;
                if nl < min_node || nr < min_node {
                    continue;
                }
                let r0 = counts[0] as f64 - left[0];
                let r1 = counts[1] as f64 - left[1];
                let score = (left[0] * left[0] + left[1] * left[1]) / nl + (r0 * r0 + r1 * r1) / nr;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = 0.5 * (v + next);
                    if !(threshold < next) {
                        threshold = v;
                    }
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }

        let Some(best) = best.filter(|b| b.score - parent_score > 1e-12 * n_w) else {
            nodes[slot] = TreeNode::Leaf { votes: counts };
            continue;
        };
        importance[best.feature] += (best.score - parent_score) / total_weight;

        // Partition samples[start..end] by the split.
        let col = &cols[best.feature];
        let mut mid = start;
        for k in start..end {
            if col[samples[k] as usize] <= best.threshold {
                samples.swap(mid, k);
                mid += 1;
            }
        }
        let left_slot = nodes.len();
        nodes.push(TreeNode::Leaf { votes: [0, 0] });
        let right_slot = nodes.len();
        nodes.push(TreeNode::Leaf { votes: [0, 0] });
        nodes[slot] = TreeNode::Split {
            feature: best.feature as u32,
            threshold: best.threshold,
            left: left_slot as u32,
            right: right_slot as u32,
        };
        // Right pushed first so the left subtree is grown first.
        stack.push((right_slot, mid, end, depth + 1));
        stack.push((left_slot, start, mid, depth + 1));
    }
    (DecisionTree { nodes }, importance)
}

/// Per-pixel labels (1 landslide, 0 non-landslide); nodata where any layer is.
pub fn classify_stack(model: &RandomForestModel, stack: &FeatureStack) -> Result<Raster> {
    let names = stack.layer_names();
    if names != model.feature_names {
        return Err(Error::Schema(format!(
            "stack layers {:?} do not match model features {:?}",
            names, model.feature_names
        )));
    }
    let header = stack.header().clone();
    let mut out = vec![NODATA; header.len()];
    out.par_chunks_mut(header.width.max(1))
        .enumerate()
        .for_each(|(r, chunk)| {
            let base = r * header.width;
            for (k, o) in chunk.iter_mut().enumerate() {
                if let Some(row) = stack.pixel_row(base + k) {
                    *o = if majority(model.votes(&row)).is_landslide() { 1.0 } else { 0.0 };
                }
            }
        });
    Raster::new(header, out)
}

// ---------------------------------------------------------------------------
// Binary model format
//
//   magic "LSRF", u16 version
//   u32 n_trees, u32 p
//   p x (u32 byte length, UTF-8 name)
//   u8 has_oob, f64 oob_accuracy
//   p x f64 importance
//   per tree: u32 n_nodes, then n_nodes fixed records of
//     u8 node type (0 leaf, 1 split), u32 feature, f64 threshold,
//     u32 left, u32 right
//   For leaves the feature is u32::MAX, the threshold 0, and the two child
//   slots hold the non-landslide and landslide vote counts.
// All integers and floats are little-endian.

const MAGIC: &[u8; 4] = b"LSRF";
const VERSION: u16 = 1;

impl RandomForestModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.trees.len() as u32).to_le_bytes());
        b.extend_from_slice(&(self.feature_names.len() as u32).to_le_bytes());
        for name in &self.feature_names {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
        }
        b.push(u8::from(self.oob_accuracy.is_some()));
        b.extend_from_slice(&self.oob_accuracy.unwrap_or(0.0).to_le_bytes());
        for v in &self.importance {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for t in &self.trees {
            b.extend_from_slice(&(t.nodes.len() as u32).to_le_bytes());
            for n in &t.nodes {
                let (kind, feature, threshold, left, right) = match *n {
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => (1u8, feature, threshold, left, right),
                    TreeNode::Leaf { votes } => (0u8, u32::MAX, 0.0, votes[0], votes[1]),
                };
                b.push(kind);
                b.extend_from_slice(&feature.to_le_bytes());
                b.extend_from_slice(&threshold.to_le_bytes());
                b.extend_from_slice(&left.to_le_bytes());
                b.extend_from_slice(&right.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Input("not a forest model (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Input(format!("unsupported model version {version}")));
        }
        let n_trees = r.u32()? as usize;
        let p = r.u32()? as usize;
        let mut feature_names = Vec::with_capacity(p.min(4096));
        for _ in 0..p {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Input("feature name is not UTF-8".into()))?;
            feature_names.push(name.to_string());
        }
        let has_oob = r.u8()? != 0;
        let oob = r.f64()?;
        let oob_accuracy = has_oob.then_some(oob);
        if let Some(a) = oob_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Input(format!("oob accuracy {a} outside [0, 1]")));
            }
        }
        let mut importance = Vec::with_capacity(p);
        for _ in 0..p {
            let v = r.f64()?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Input(format!("invalid importance {v}")));
            }
            importance.push(v);
        }
        let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
        for _ in 0..n_trees {
            let n_nodes = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
            for _ in 0..n_nodes {
                let kind = r.u8()?;
                let feature = r.u32()?;
                let threshold = r.f64()?;
                let left = r.u32()?;
                let right = r.u32()?;
                nodes.push(match kind {
                    0 => TreeNode::Leaf { votes: [left, right] },
                    1 => TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    },
                    k => return Err(Error::Input(format!("unknown node type {k}"))),
                });
            }
            trees.push(DecisionTree { nodes });
        }
        if r.pos != bytes.len() {
            return Err(Error::Input("trailing bytes after model".into()));
        }
        Self::from_trees(trees, feature_names, oob_accuracy, importance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Input("model data truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{assemble_stack, ModelVariant, Season, SeasonalComposite};
    use crate::raster::GridHeader;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::collections::BTreeMap;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|i| format!("f{i}")).collect()
    }

    pub(crate) fn two_clusters(n_per_class: usize, sep: f64, seed: u64) -> TrainingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for label in [Label::NonLandslide, Label::Landslide] {
            let shift = if label.is_landslide() { sep } else { 0.0 };
            for _ in 0..n_per_class {
                rows.push(vec![shift + noise.sample(&mut rng), noise.sample(&mut rng)]);
                labels.push(label);
            }
        }
        TrainingMatrix::new(rows, labels, names(2)).unwrap()
    }

    /// Accuracy of assigning each row to the nearer class centroid.
    fn nearest_centroid_accuracy(m: &TrainingMatrix) -> f64 {
        let mut sum = [[0.0; 2]; 2];
        let mut cnt = [0.0; 2];
        for (row, l) in m.rows().zip(&m.labels) {
            sum[l.index()][0] += row[0];
            sum[l.index()][1] += row[1];
            cnt[l.index()] += 1.0;
        }
        let c: Vec<[f64; 2]> = (0..2).map(|k| [sum[k][0] / cnt[k], sum[k][1] / cnt[k]]).collect();
        let d = |r: &[f64], k: usize| (r[0] - c[k][0]).powi(2) + (r[1] - c[k][1]).powi(2);
        let ok = m
            .rows()
            .zip(&m.labels)
            .filter(|(r, l)| usize::from(d(r, 1) < d(r, 0)) == l.index())
            .count();
        ok as f64 / m.n_rows() as f64
    }

    #[test]
    fn separable_clusters_have_high_oob() {
        let m = two_clusters(500, 3.0 * 2f64.sqrt() * 1.0 + 0.8, 1);
        let oracle = nearest_centroid_accuracy(&m);
        assert!(oracle > 0.97, "{oracle}");
        let model = train_forest(&m, &ForestParams { n_trees: 100, ..ForestParams::with_seed(3) }).unwrap();
        assert!(model.oob_accuracy.unwrap() >= 0.95);
        assert!(model.importance.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sign_feature_dominates_importance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..400 {
            let row: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            labels.push(if row[0] > 0.0 { Label::Landslide } else { Label::NonLandslide });
            rows.push(row);
        }
        let m = TrainingMatrix::new(rows, labels, names(4)).unwrap();
        let model = train_forest(&m, &ForestParams { n_trees: 60, mtry: Some(2), ..ForestParams::with_seed(4) }).unwrap();
        let imp = &model.importance;
        assert!(imp[1..].iter().all(|&v| imp[0] > v), "{imp:?}");
    }

    #[test]
    fn identical_rows_degenerate_to_leaves() {
        let rows = vec![vec![1.0, 2.0]; 300];
        let labels = (0..300).map(|i| if i % 3 == 0 { Label::Landslide } else { Label::NonLandslide }).collect();
        let m = TrainingMatrix::new(rows, labels, names(2)).unwrap();
        let model = train_forest(&m, &ForestParams { n_trees: 50, ..ForestParams::with_seed(5) }).unwrap();
        assert!(model.trees().iter().all(|t| t.nodes().len() == 1));
        assert!((model.oob_accuracy.unwrap() - 2.0 / 3.0).abs() < 0.05);
    }

    #[test]
    fn training_errors() {
        let one_class = TrainingMatrix::new(vec![vec![1.0]; 4], vec![Label::Landslide; 4], names(1)).unwrap();
        assert!(matches!(train_forest(&one_class, &ForestParams::default()), Err(Error::Training(_))));
        let tiny = TrainingMatrix::new(vec![vec![1.0]], vec![Label::Landslide], names(1)).unwrap();
        assert!(matches!(train_forest(&tiny, &ForestParams::default()), Err(Error::Training(_))));
    }

    fn stump(label: Label) -> DecisionTree {
        let votes = if label.is_landslide() { [0, 1] } else { [1, 0] };
        DecisionTree::from_nodes(vec![TreeNode::Leaf { votes }], 1).unwrap()
    }

    #[test]
    fn predict_examples() {
        let unanimous = RandomForestModel::from_trees(vec![stump(Label::Landslide); 500], names(1), None, vec![0.0]).unwrap();
        assert_eq!(unanimous.predict(&[0.3]).unwrap(), (Label::Landslide, 1.0));

        let mut trees = vec![stump(Label::Landslide); 250];
        trees.extend(vec![stump(Label::NonLandslide); 250]);
        let split = RandomForestModel::from_trees(trees, names(1), None, vec![0.0]).unwrap();
        assert_eq!(split.predict(&[0.3]).unwrap(), (Label::NonLandslide, 0.5));

        assert!(matches!(split.predict(&[f64::NAN]), Err(Error::Input(_))));
        assert!(matches!(split.predict(&[1.0, 2.0]), Err(Error::Input(_))));
    }

    fn stack_from_rows(rows: &[Vec<f64>], w: usize, h: usize) -> FeatureStack {
        let header = GridHeader::new(w, h, 0.0, 30.0 * h as f64, 30.0, "c").unwrap();
        let layer = |k: usize| Raster::new(header.clone(), rows.iter().map(|r| r[k] as f32).collect()).unwrap();
        let comps: BTreeMap<Season, SeasonalComposite> = [(
            Season::Winter,
            SeasonalComposite::from_layers(Season::Winter, 2005, (0..8).map(layer).collect()).unwrap(),
        )]
        .into();
        assemble_stack(&comps, &layer(8), None, &ModelVariant::winter_only(), 2005).unwrap()
    }

    fn nine_feature_data(n: usize, seed: u64) -> TrainingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            // Values on an f32-exact grid so stack pixels equal rows exactly.
            let row: Vec<f64> = (0..9).map(|_| rng.random_range(0..64) as f64 / 64.0).collect();
            labels.push(if row[0] + row[8] > 1.0 { Label::Landslide } else { Label::NonLandslide });
            rows.push(row);
        }
        TrainingMatrix::new(rows, labels, ModelVariant::winter_only().layer_names()).unwrap()
    }

    #[test]
    fn classified_map_matches_pointwise_predict() {
        let data = nine_feature_data(300, 6);
        let model = train_forest(&data, &ForestParams { n_trees: 40, ..ForestParams::with_seed(7) }).unwrap();
        let rows: Vec<Vec<f64>> = data.rows().take(256).map(|r| r.to_vec()).collect();
        let stack = stack_from_rows(&rows, 16, 16);
        let map = classify_stack(&model, &stack).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let (label, frac) = model.predict(r).unwrap();
            assert!(frac >= 0.5);
            assert_eq!(map.values()[i], if label.is_landslide() { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn nodata_layer_gives_nodata_pixel_and_schema_checked() {
        let data = nine_feature_data(200, 8);
        let model = train_forest(&data, &ForestParams { n_trees: 10, ..ForestParams::with_seed(1) }).unwrap();
        let mut rows: Vec<Vec<f64>> = data.rows().take(4).map(|r| r.to_vec()).collect();
        rows[2][3] = f64::NAN;
        let map = classify_stack(&model, &stack_from_rows(&rows, 2, 2)).unwrap();
        assert_eq!(map.get(1, 0), None);
        assert!(map.get(0, 0).is_some());

        let other = RandomForestModel::from_trees(vec![stump(Label::Landslide)], names(9), None, vec![0.0; 9]).unwrap();
        assert!(matches!(classify_stack(&other, &stack_from_rows(&rows, 2, 2)), Err(Error::Schema(_))));
    }

    #[test]
    fn bytes_roundtrip_and_validation() {
        let data = nine_feature_data(150, 9);
        let model = train_forest(&data, &ForestParams { n_trees: 8, ..ForestParams::with_seed(2) }).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(RandomForestModel::from_bytes(&bytes).unwrap(), model);
        assert!(RandomForestModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(RandomForestModel::from_bytes(&bad).is_err());
        // A child pointing back at the root must be rejected.
        let looped = vec![
            TreeNode::Split { feature: 0, threshold: 0.5, left: 0, right: 1 },
            TreeNode::Leaf { votes: [1, 0] },
        ];
        assert!(DecisionTree::from_nodes(looped, 1).is_err());
    }

    #[test]
    fn row_permutation_with_remapped_bootstrap_gives_same_tree() {
        let data = nine_feature_data(120, 10);
        let cols = Columns::new(&data);
        let n = data.n_rows();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weights: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let params = ForestParams::with_seed(0);
        let (tree_a, imp_a) = grow_tree(&cols.cols, &cols.labels, &weights, 3, &params, &mut stream_rng(42, 0));

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pcols: Vec<Vec<f64>> = cols.cols.iter().map(|c| perm.iter().map(|&i| c[i]).collect()).collect();
        let plabels: Vec<u8> = perm.iter().map(|&i| cols.labels[i]).collect();
        let pweights: Vec<u32> = perm.iter().map(|&i| weights[i]).collect();
        let (tree_b, imp_b) = grow_tree(&pcols, &plabels, &pweights, 3, &params, &mut stream_rng(42, 0));
        assert_eq!(tree_a, tree_b);
        assert_eq!(imp_a, imp_b);
    }

    #[test]
    fn worker_count_does_not_change_forest() {
        let data = nine_feature_data(300, 11);
        let params = ForestParams { n_trees: 30, ..ForestParams::with_seed(99) };
        let train_with = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train_forest(&data, &params).unwrap())
        };
        let a = train_with(1);
        assert_eq!(a, train_with(4));
        assert_eq!(a, train_with(8));
    }

    #[test]
    fn random_labels_give_chance_oob() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..1000 {
            rows.push((0..4).map(|_| rng.random::<f64>()).collect());
            labels.push(if i % 2 == 0 { Label::Landslide } else { Label::NonLandslide });
        }
        labels.shuffle(&mut rng);
        let m = TrainingMatrix::new(rows, labels, names(4)).unwrap();
        let model = train_forest(&m, &ForestParams { n_trees: 100, ..ForestParams::with_seed(13) }).unwrap();
        let oob = model.oob_accuracy.unwrap();
        assert!((0.4..=0.6).contains(&oob), "{oob}");
    }
}
