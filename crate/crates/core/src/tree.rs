//! Tree construction, routing, audits and export.
//!
//! Every node owns a community of root rows and a PU model. The root model is a
//! plain non-negative PU model; each child is trained with the adversarial risk
//! against its parent, on its own augmented rows, with its own estimated prior.
//! The tree grows one level at a time so both siblings have models before either
//! is split. Node models read z-scored inputs; splits and routing use raw values.
//!
//! Fusion networks are trained once the tree is complete, one per leaf path.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::augment::{augment_traced, fit_recovery, mask_count, rank_features, top_features, AugmentConfig, AugmentReport, RecoveryFit};
use crate::dataset::{route, Class, PuDataset, PuLabel, Split, Standardizer};
use crate::explain::{select_split, ExplainBudget, SplitDecision};
use crate::fusion::{path_representations, train_fusion, FusionHyper, FusionNetwork};
use crate::mlp::{logistic, Mlp, Standardized};
use crate::prior::{estimate_prior_traced, PriorEstimate, PriorHyper};
use crate::purisk::{train_pu, RiskConfig, TrainHyper};
use crate::rng::derive_seed;
use crate::{Error, Result};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    pub max_depth: usize,
    /// Smallest node that may be split, and smallest allowed child.
    pub min_node_size: usize,
    pub lambda: f64,
    pub augment: AugmentConfig,
    pub explain: ExplainBudget,
    pub node: TrainHyper,
    pub prior: PriorHyper,
    pub fusion: FusionHyper,
    /// Train path fusion; off means leaves predict with their own model.
    pub use_fusion: bool,
    /// Epochs of the short model that ranks root features for augmentation.
    pub scout_epochs: usize,
    /// Rescale sibling prior estimates so their hidden-positive counts add up
    /// to the parent's.
    pub conserve_prior_mass: bool,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 3,
            min_node_size: 200,
            lambda: 0.5,
            augment: AugmentConfig::default(),
            explain: ExplainBudget::default(),
            node: TrainHyper::default(),
            prior: PriorHyper::default(),
            fusion: FusionHyper::default(),
            use_fusion: true,
            scout_epochs: 10,
            conserve_prior_mass: false,
            seed: 0,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_node_size < 2 {
            return Err(Error::invalid(format!("minimum node size {} must be at least 2", self.min_node_size)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid(format!("consistency weight {} must be >= 0", self.lambda)));
        }
        if self.node.hidden.is_empty() {
            return Err(Error::invalid("node models need at least one hidden layer"));
        }
        self.explain.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafReason {
    MaxDepth,
    TooSmall,
    /// No labeled positives in the community.
    Pure,
    NoSplit,
    /// The node's own training failed; it keeps its parent's model.
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub depth: usize,
    pub parent: Option<NodeId>,
    pub sibling: Option<NodeId>,
    /// `[<=, >]`
    pub children: Option<[NodeId; 2]>,
    pub split: Option<Split>,
    /// Original root rows in this community.
    pub rows: Vec<usize>,
    pub n_positive: usize,
    pub model: Mlp,
    pub prior: f64,
    pub prior_report: Option<PriorEstimate>,
    pub augmentation: AugmentReport,
    pub split_decision: Option<SplitDecision>,
    pub leaf_reason: Option<LeafReason>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuTree {
    pub nodes: Vec<TreeNode>,
    pub scaler: Standardizer,
    pub feature_names: Vec<String>,
    /// One network per leaf, keyed by leaf id.
    pub fusion: BTreeMap<NodeId, FusionNetwork>,
    /// For each fused leaf, the node whose rows trained its network.
    pub fusion_rows_from: BTreeMap<NodeId, NodeId>,
}

/// Why a node with these statistics must stay a leaf, if it must.
pub fn leaf_reason(depth: usize, n_rows: usize, n_positive: usize, config: &TreeConfig) -> Option<LeafReason> {
    if n_positive == 0 {
        Some(LeafReason::Pure)
    } else if depth >= config.max_depth {
        Some(LeafReason::MaxDepth)
    } else if n_rows < config.min_node_size {
        Some(LeafReason::TooSmall)
    } else {
        None
    }
}

struct NodeFit {
    model: Mlp,
    prior: f64,
    prior_report: Option<PriorEstimate>,
    augmentation: AugmentReport,
}

struct Builder<'a> {
    std: PuDataset,
    config: &'a TreeConfig,
}

impl Builder<'_> {
    /// Augmented copy of `data`, the report, and the source row of every appended row.
    fn augmented(&self, data: &PuDataset, ranker: &Mlp, seed: u64) -> Result<(PuDataset, AugmentReport, Vec<usize>)> {
        let cfg = &self.config.augment;
        let mut report = AugmentReport::default();
        if !cfg.enabled {
            report.skipped = Some("disabled".into());
            return Ok((data.clone(), report, Vec::new()));
        }
        let d = data.dim();
        let k = mask_count(d, cfg.mask_fraction);
        if k >= d {
            report.skipped = Some(format!("{d} features leave nothing unmasked"));
            return Ok((data.clone(), report, Vec::new()));
        }
        let importance = rank_features(ranker, data.features(), cfg.importance, &self.config.explain, derive_seed(seed, 1))?;
        let mask = top_features(&importance, k);
        let mut plan = fit_recovery(data.features(), &mask, cfg.perturbation, cfg.ridge)?;
        if cfg.recovery == RecoveryFit::ByLabel {
            plan = plan.with_positive_recovery(data, cfg.ridge)?;
        }
        let m = cfg.effective_multiplier(data.n_rows(), self.config.min_node_size);
        let (out, sources) = augment_traced(data, &plan, m, derive_seed(seed, 2))?;
        report.mask = mask;
        report.multiplier = m;
        report.positives_added = out.n_positive() - data.n_positive();
        report.unlabeled_added = out.n_unlabeled() - data.n_unlabeled();
        Ok((out, report, sources))
    }

    fn fit_root(&self, seed: u64) -> Result<NodeFit> {
        let prior = self.std.class_prior();
        let scout_hyper = TrainHyper {
            epochs: self.config.scout_epochs,
            seed: derive_seed(seed, 3),
            ..self.config.node.clone()
        };
        let scout = train_pu(&self.std, &RiskConfig::nnpu(prior), &scout_hyper)?;
        let (data, augmentation, _) = self.augmented(&self.std, &scout, seed)?;
        let hyper = TrainHyper {
            seed: derive_seed(seed, 4),
            ..self.config.node.clone()
        };
        let model = train_pu(&data, &RiskConfig::nnpu(prior), &hyper)?;
        Ok(NodeFit {
            model,
            prior,
            prior_report: None,
            augmentation,
        })
    }

    fn prepare_child(&self, rows: &[usize], parent: &Mlp, seed: u64) -> Result<ChildPrep> {
        let own = self.std.select(rows);
        let (data, augmentation, sources) = self.augmented(&own, parent, seed)?;
        let synthetic_pos: Vec<usize> = (own.n_rows()..data.n_rows())
            .filter(|&r| data.labels()[r] == PuLabel::Positive)
            .collect();
        let synthetic = data.features().select(Axis(0), &synthetic_pos);
        let synthetic_sources: Vec<usize> = synthetic_pos.iter().map(|&r| sources[r - own.n_rows()]).collect();
        let prior_hyper = PriorHyper {
            seed: derive_seed(seed, 5),
            ..self.config.prior.clone()
        };
        let estimate = estimate_prior_traced(&own, synthetic.view(), Some(&synthetic_sources), &prior_hyper)?;
        Ok(ChildPrep {
            data,
            prior: estimate.prior,
            estimate,
            augmentation,
            n_unlabeled: own.n_unlabeled(),
        })
    }

    fn train_child(&self, prep: ChildPrep, parent: &Mlp, seed: u64) -> Result<NodeFit> {
        let data = prep.data.with_prior(prep.prior)?;
        let hyper = TrainHyper {
            seed: derive_seed(seed, 6),
            ..self.config.node.clone()
        };
        let model = train_pu(&data, &RiskConfig::adversarial(prep.prior, self.config.lambda, parent), &hyper)?;
        Ok(NodeFit {
            model,
            prior: prep.prior,
            prior_report: Some(prep.estimate),
            augmentation: prep.augmentation,
        })
    }
}

struct ChildPrep {
    data: PuDataset,
    prior: f64,
    estimate: PriorEstimate,
    augmentation: AugmentReport,
    n_unlabeled: usize,
}

/// Scales the estimated sibling priors so that the hidden positives they imply
/// sum to the parent's. Siblings without an estimate count at the parent prior.
fn conserve_mass(preps: &mut [Option<ChildPrep>], unlabeled: [usize; 2], parent_prior: f64, clamp: f64) {
    let total: usize = unlabeled.iter().sum();
    let fixed: f64 = preps
        .iter()
        .zip(unlabeled)
        .filter(|(p, _)| p.is_none())
        .map(|(_, n)| parent_prior * n as f64)
        .sum();
    let target = parent_prior * total as f64 - fixed;
    let implied: f64 = preps.iter().flatten().map(|p| p.prior * p.n_unlabeled as f64).sum();
    if !(target > 0.0 && implied > 0.0) {
        return;
    }
    let scale = target / implied;
    for p in preps.iter_mut().flatten() {
        p.prior = (p.prior * scale).clamp(clamp, 1.0 - clamp);
    }
}

fn n_positive(data: &PuDataset, rows: &[usize]) -> usize {
    rows.iter().filter(|&&r| data.labels()[r] == PuLabel::Positive).count()
}

/// Grows a tree on `root_data` and, unless disabled, trains one fusion network
/// per leaf path.
pub fn build_tree(root_data: &PuDataset, config: &TreeConfig) -> Result<PuTree> {
    config.validate()?;
    root_data.require_trainable()?;
    let scaler = Standardizer::fit(root_data.features())?;
    let builder = Builder {
        std: root_data.standardized(&scaler)?,
        config,
    };
    let all: Vec<usize> = (0..root_data.n_rows()).collect();
    let fit = builder.fit_root(derive_seed(config.seed, 100))?;
    let mut nodes = vec![TreeNode {
        id: 0,
        depth: 0,
        parent: None,
        sibling: None,
        children: None,
        split: None,
        n_positive: root_data.n_positive(),
        rows: all,
        model: fit.model,
        prior: fit.prior,
        prior_report: None,
        augmentation: fit.augmentation,
        split_decision: None,
        leaf_reason: None,
    }];
    log_node(&nodes[0]);

    let mut level: VecDeque<NodeId> = VecDeque::from([0]);
    while !level.is_empty() {
        let mut next = VecDeque::new();
        for id in level {
            if nodes[id].leaf_reason.is_some() {
                continue;
            }
            let node = &nodes[id];
            if let Some(reason) = leaf_reason(node.depth, node.rows.len(), node.n_positive, config) {
                nodes[id].leaf_reason = Some(reason);
                continue;
            }
            let x = root_data.features().select(Axis(0), &node.rows);
            let scorer = Standardized {
                model: &node.model,
                scaler: &scaler,
            };
            let sibling = node.sibling.map(|s| Standardized {
                model: &nodes[s].model,
                scaler: &scaler,
            });
            let decision = select_split(
                x.view(),
                &scorer,
                sibling.as_ref().map(|s| s as &dyn crate::mlp::Scorer),
                &config.explain,
                config.min_node_size,
                derive_seed(config.seed, 200 + id as u64),
            )?;
            let Some(decision) = decision else {
                nodes[id].leaf_reason = Some(LeafReason::NoSplit);
                continue;
            };
            let split = decision.chosen.split;
            let (le, gt) = split.partition(root_data.features(), &nodes[id].rows);
            let depth = nodes[id].depth + 1;
            let first = nodes.len();
            let parent_unlabeled = |rows: &[usize]| rows.len() - n_positive(root_data, rows);
            let unlabeled = [parent_unlabeled(&le), parent_unlabeled(&gt)];
            let mut preps: Vec<Option<ChildPrep>> = Vec::new();
            let mut reasons: Vec<Option<LeafReason>> = Vec::new();
            for (k, rows) in [&le, &gt].into_iter().enumerate() {
                let child_id = first + k;
                if n_positive(root_data, rows) == 0 {
                    preps.push(None);
                    reasons.push(Some(LeafReason::Pure));
                    continue;
                }
                match builder.prepare_child(rows, &nodes[id].model, derive_seed(config.seed, 100 + child_id as u64)) {
                    Ok(p) => {
                        preps.push(Some(p));
                        reasons.push(None);
                    }
                    Err(e) => {
                        log::warn!("node={child_id} preparation failed: {e}");
                        preps.push(None);
                        reasons.push(Some(LeafReason::Failed(e.to_string())));
                    }
                }
            }
            if config.conserve_prior_mass {
                conserve_mass(&mut preps, unlabeled, nodes[id].prior, config.prior.clamp);
            }
            for (k, ((rows, prep), mut reason)) in [le, gt].into_iter().zip(preps).zip(reasons).enumerate() {
                let child_id = first + k;
                let n_pos = n_positive(root_data, &rows);
                let parent = &nodes[id];
                let fit = match prep {
                    Some(prep) => match builder.train_child(prep, &parent.model, derive_seed(config.seed, 100 + child_id as u64)) {
                        Ok(fit) => Some(fit),
                        Err(e) => {
                            log::warn!("node={child_id} training failed: {e}");
                            reason = Some(LeafReason::Failed(e.to_string()));
                            None
                        }
                    },
                    None => None,
                };
                let fit = fit.unwrap_or_else(|| NodeFit {
                    model: parent.model.clone(),
                    prior: parent.prior,
                    prior_report: None,
                    augmentation: AugmentReport {
                        skipped: Some("inherited parent model".into()),
                        ..Default::default()
                    },
                });
                nodes.push(TreeNode {
                    id: child_id,
                    depth,
                    parent: Some(id),
                    sibling: Some(first + 1 - k),
                    children: None,
                    split: None,
                    rows,
                    n_positive: n_pos,
                    model: fit.model,
                    prior: fit.prior,
                    prior_report: fit.prior_report,
                    augmentation: fit.augmentation,
                    split_decision: None,
                    leaf_reason: reason,
                });
                log_node(&nodes[child_id]);
                next.push_back(child_id);
            }
            nodes[id].split = Some(split);
            nodes[id].children = Some([first, first + 1]);
            nodes[id].split_decision = Some(decision);
        }
        level = next;
    }

    let mut tree = PuTree {
        nodes: preorder(nodes),
        scaler,
        feature_names: root_data.feature_names().to_vec(),
        fusion: BTreeMap::new(),
        fusion_rows_from: BTreeMap::new(),
    };
    if config.use_fusion {
        train_all_fusion(&mut tree, &builder.std, config)?;
    }
    Ok(tree)
}

fn log_node(n: &TreeNode) {
    log::info!(
        "node={} depth={} rows={} positives={} prior={:.4} aug_added={} leaf={:?}",
        n.id,
        n.depth,
        n.rows.len(),
        n.n_positive,
        n.prior,
        n.augmentation.positives_added + n.augmentation.unlabeled_added,
        n.leaf_reason
    );
}

/// Renumbers breadth-first ids into pre-order.
fn preorder(mut nodes: Vec<TreeNode>) -> Vec<TreeNode> {
    let mut order = Vec::with_capacity(nodes.len());
    let mut stack = vec![0];
    while let Some(id) = stack.pop() {
        order.push(id);
        if let Some([le, gt]) = nodes[id].children {
            stack.push(gt);
            stack.push(le);
        }
    }
    let mut new_id = vec![0; nodes.len()];
    for (new, &old) in order.iter().enumerate() {
        new_id[old] = new;
    }
    for n in nodes.iter_mut() {
        n.id = new_id[n.id];
        n.parent = n.parent.map(|p| new_id[p]);
        n.sibling = n.sibling.map(|s| new_id[s]);
        n.children = n.children.map(|[a, b]| [new_id[a], new_id[b]]);
    }
    nodes.sort_by_key(|n| n.id);
    nodes
}

fn train_all_fusion(tree: &mut PuTree, std_root: &PuDataset, config: &TreeConfig) -> Result<()> {
    for leaf in tree.leaves() {
        let path = tree.path_to(leaf);
        let models: Vec<&Mlp> = path.iter().map(|&id| &tree.nodes[id].model).collect();
        // a community without positives or unlabeled rows borrows its nearest
        // trainable ancestor's rows
        let mut source = leaf;
        loop {
            let rows = &tree.nodes[source].rows;
            let pos = n_positive(std_root, rows);
            if pos > 0 && pos < rows.len() {
                break;
            }
            match tree.nodes[source].parent {
                Some(p) => source = p,
                None => return Err(Error::EmptyInput("no community can train path fusion")),
            }
        }
        let data = std_root.select(&tree.nodes[source].rows);
        let hyper = FusionHyper {
            seed: derive_seed(config.seed, 300 + leaf as u64),
            ..config.fusion.clone()
        };
        let net = train_fusion(&models, &data, tree.nodes[leaf].prior, &hyper)?;
        tree.fusion.insert(leaf, net);
        tree.fusion_rows_from.insert(leaf, source);
    }
    Ok(())
}

/// Node ids from the root to the leaf `instance` lands in.
pub fn leaf_path(tree: &PuTree, instance: ArrayView1<f64>) -> Result<Vec<NodeId>> {
    if instance.len() != tree.feature_names.len() {
        return Err(Error::DimensionMismatch {
            context: "leaf path",
            expected: tree.feature_names.len(),
            got: instance.len(),
        });
    }
    let mut path = vec![0];
    let mut id = 0;
    while !tree.nodes[id].is_leaf() {
        id = route(instance, &tree.nodes[id])?;
        path.push(id);
    }
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

impl FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(Self::Dot),
            "json" => Ok(Self::Json),
            _ => Err(Error::Unknown {
                kind: "export format",
                name: s.to_string(),
            }),
        }
    }
}

/// Structure and reports of a tree without its model weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeSkeleton {
    pub feature_names: Vec<String>,
    pub nodes: Vec<SkeletonNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonNode {
    pub id: NodeId,
    pub depth: usize,
    pub parent: Option<NodeId>,
    pub sibling: Option<NodeId>,
    pub children: Option<[NodeId; 2]>,
    pub split: Option<Split>,
    /// `[<= label, > label]`
    pub split_labels: Option<[String; 2]>,
    pub n_rows: usize,
    pub n_positive: usize,
    pub prior: f64,
    pub prior_report: Option<PriorEstimate>,
    pub augmentation: AugmentReport,
    pub split_decision: Option<SplitDecision>,
    pub leaf_reason: Option<LeafReason>,
    pub fused: bool,
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

impl PuTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.is_leaf()).map(|n| n.id).collect()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Ids from the root down to `node`.
    pub fn path_to(&self, node: NodeId) -> Vec<NodeId> {
        let mut path = vec![node];
        let mut id = node;
        while let Some(p) = self.nodes[id].parent {
            path.push(p);
            id = p;
        }
        path.reverse();
        path
    }

    /// Models on the path an instance takes, root first.
    pub fn leaf_path_models(&self, instance: ArrayView1<f64>) -> Result<Vec<&Mlp>> {
        Ok(leaf_path(self, instance)?.into_iter().map(|id| &self.nodes[id].model).collect())
    }

    pub fn split_labels(&self, split: &Split) -> [String; 2] {
        let name = self
            .feature_names
            .get(split.feature)
            .cloned()
            .unwrap_or_else(|| format!("x{}", split.feature));
        [format!("{name} ≤ {:.4}", split.threshold), format!("{name} > {:.4}", split.threshold)]
    }

    /// Scores for raw rows: the fused logit when the leaf has a fusion network,
    /// otherwise the leaf model's logit.
    pub fn predict_scores(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let mut by_leaf: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        for (r, row) in x.rows().into_iter().enumerate() {
            let leaf = *leaf_path(self, row)?.last().expect("non-empty path");
            by_leaf.entry(leaf).or_default().push(r);
        }
        let mut out = Array1::zeros(x.nrows());
        for (leaf, rows) in by_leaf {
            let xs = self.scaler.transform(x.select(Axis(0), &rows).view())?;
            let z = match self.fusion.get(&leaf) {
                Some(net) => {
                    let models: Vec<&Mlp> = self.path_to(leaf).into_iter().map(|id| &self.nodes[id].model).collect();
                    net.forward_q(&path_representations(&models, xs.view())?)?.logits
                }
                None => self.nodes[leaf].model.forward(xs.view())?,
            };
            for (k, &r) in rows.iter().enumerate() {
                out[r] = z[k];
            }
        }
        Ok(out)
    }

    /// Class (score 0 is negative) and positive probability per row.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<(Class, f64)>> {
        Ok(self
            .predict_scores(x)?
            .iter()
            .map(|&z| (Class::from_score(z), logistic(z)))
            .collect())
    }

    /// Fusion gate values for one raw row, if its leaf is fused.
    pub fn gates(&self, instance: ArrayView1<f64>) -> Result<Option<Array1<f64>>> {
        let path = leaf_path(self, instance)?;
        let leaf = *path.last().expect("non-empty path");
        let Some(net) = self.fusion.get(&leaf) else {
            return Ok(None);
        };
        let xs = self.scaler.transform(instance.insert_axis(Axis(0)))?;
        let models: Vec<&Mlp> = path.iter().map(|&id| &self.nodes[id].model).collect();
        let t = net.forward_q(&path_representations(&models, xs.view())?)?;
        Ok(Some(t.gates.row(0).to_owned()))
    }

    /// Structural checks: root shape, sibling mutuality, children partitioning
    /// their parent's rows, and every node's rows routing to it.
    pub fn audit(&self, root_data: ArrayView2<f64>) -> Result<()> {
        let fail = |m: String| Err(Error::Routing(m));
        let root = self.root();
        if root.depth != 0 || root.parent.is_some() || root.sibling.is_some() {
            return fail("root must have depth 0 and no parent or sibling".into());
        }
        if root.rows.len() != root_data.nrows() {
            return fail("root does not own every row".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return fail(format!("node at position {i} has id {}", n.id));
            }
            if let Some(s) = n.sibling {
                if self.nodes[s].sibling != Some(n.id) || self.nodes[s].parent != n.parent || s == n.id {
                    return fail(format!("sibling link {} -> {s} is not mutual", n.id));
                }
            }
            if let Some([a, b]) = n.children {
                let split = n.split.ok_or_else(|| Error::Routing(format!("node {} has children but no split", n.id)))?;
                for c in [a, b] {
                    if self.nodes[c].parent != Some(n.id) || self.nodes[c].depth != n.depth + 1 {
                        return fail(format!("child {c} does not point back to {}", n.id));
                    }
                }
                let (le, gt) = split.partition(root_data, &n.rows);
                if le != self.nodes[a].rows || gt != self.nodes[b].rows {
                    return fail(format!("children of {} do not partition its rows", n.id));
                }
            } else if n.split.is_some() {
                return fail(format!("leaf {} carries a split", n.id));
            }
        }
        let mut owner = vec![usize::MAX; root_data.nrows()];
        for leaf in self.leaves() {
            for &r in &self.nodes[leaf].rows {
                if owner[r] != usize::MAX {
                    return fail(format!("row {r} is in two leaves"));
                }
                owner[r] = leaf;
            }
        }
        for (r, &o) in owner.iter().enumerate() {
            if o == usize::MAX {
                return fail(format!("row {r} is in no leaf"));
            }
            if *leaf_path(self, root_data.row(r))?.last().expect("non-empty") != o {
                return fail(format!("row {r} routes away from its training leaf"));
            }
        }
        Ok(())
    }

    pub fn skeleton(&self) -> TreeSkeleton {
        TreeSkeleton {
            feature_names: self.feature_names.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| SkeletonNode {
                    id: n.id,
                    depth: n.depth,
                    parent: n.parent,
                    sibling: n.sibling,
                    children: n.children,
                    split: n.split,
                    split_labels: n.split.as_ref().map(|s| self.split_labels(s)),
                    n_rows: n.rows.len(),
                    n_positive: n.n_positive,
                    prior: n.prior,
                    prior_report: n.prior_report.clone(),
                    augmentation: n.augmentation.clone(),
                    split_decision: n.split_decision.clone(),
                    leaf_reason: n.leaf_reason.clone(),
                    fused: self.fusion.contains_key(&n.id),
                })
                .collect(),
        }
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph putree {\n  node [shape=box];\n");
        for n in &self.nodes {
            let kind = match &n.leaf_reason {
                Some(r) => format!("\\nleaf: {}", escape(&format!("{r:?}"))),
                None if n.is_leaf() => "\\nleaf".to_string(),
                None => String::new(),
            };
            let _ = writeln!(
                s,
                "  n{} [label=\"#{} rows={} P={}\\nprior={:.3}{}\"];",
                n.id,
                n.id,
                n.rows.len(),
                n.n_positive,
                n.prior,
                kind
            );
        }
        for n in &self.nodes {
            if let (Some(split), Some(children)) = (n.split, n.children) {
                let labels = self.split_labels(&split);
                for (c, l) in children.iter().zip(labels) {
                    let _ = writeln!(s, "  n{} -> n{} [label=\"{}\"];", n.id, c, escape(&l));
                }
            }
        }
        s.push_str("}\n");
        s
    }

    pub fn export(&self, format: ExportFormat) -> Result<String> {
        match format {
            ExportFormat::Dot => Ok(self.to_dot()),
            ExportFormat::Json => Ok(serde_json::to_string_pretty(&self.skeleton())?),
        }
    }

    /// Full tree with weights and fusion networks.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let tree: PuTree = serde_json::from_str(s)?;
        if tree.nodes.is_empty() {
            return Err(Error::Config("tree has no nodes".into()));
        }
        Ok(tree)
    }
}

/// Exports `tree` as `"dot"` or `"json"`.
pub fn export_tree(tree: &PuTree, format: &str) -> Result<String> {
    tree.export(format.parse()?)
}
