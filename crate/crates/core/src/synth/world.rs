use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::labelling::LogitTrace;
use crate::matrix::{argmax, dot, softmax};
use crate::sdag::{SDag, SemanticNode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub num_leaf_classes: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Children per internal node.
    pub fanout: usize,
    /// Offset scale of the root's children.
    pub top_spread: f64,
    /// Each level down multiplies the offset scale by this.
    pub spread_decay: f64,
    /// Stored samples per node, used for pre-testing.
    pub samples_per_node: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_leaf_classes: 100,
            feature_dim: 16,
            noise_sigma: 1.0,
            fanout: 5,
            top_spread: 4.0,
            spread_decay: 0.6,
            samples_per_node: 50,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        if self.num_leaf_classes < 2 {
            return bad("need at least two leaf classes");
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be at least 2");
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be positive");
        }
        if self.fanout < 2 {
            return bad("fanout must be at least 2");
        }
        if !(self.top_spread > 0.0 && self.spread_decay > 0.0) {
            return bad("spreads must be positive");
        }
        if self.samples_per_node == 0 {
            return bad("samples_per_node must be positive");
        }
        Ok(())
    }
}

/// Gaussian classes arranged in a tree. Siblings share their parent's center
/// plus a smaller offset, so nearby leaves are easier to confuse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub config: WorldConfig,
    /// node id → center; for internal nodes the center the children were offset from
    pub class_means: BTreeMap<String, Vec<f64>>,
    pub noise_sigma: f64,
    pub sdag: SDag,
    /// Leaf ids in generation order.
    pub leaves: Vec<String>,
    /// node id → leaf ids below it (a leaf lists itself)
    pub descendants: BTreeMap<String, Vec<String>>,
    pub node_samples: BTreeMap<String, Vec<Vec<f64>>>,
}

const CONSONANTS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(3..=4);
    (0..syllables)
        .map(|_| {
            let c = CONSONANTS[rng.random_range(0..CONSONANTS.len())];
            let v = VOWELS[rng.random_range(0..VOWELS.len())];
            format!("{c}{v}")
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn draw(rng: &mut ChaCha8Rng, mean: &[f64], sigma: f64) -> Vec<f64> {
    mean.iter().map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Deterministic world for `seed`. Leaves are grouped `fanout` at a time into
/// parents, level by level, until a single root remains.
pub fn gen_world(seed: u64, config: &WorldConfig) -> Result<SyntheticWorld, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.feature_dim;

    // bottom-up grouping: levels[0] = leaves
    let leaves: Vec<String> = (0..config.num_leaf_classes).map(|i| format!("L{i:04}")).collect();
    let mut levels: Vec<Vec<String>> = vec![leaves.clone()];
    let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
    while levels.last().expect("non-empty").len() > 1 {
        let depth = levels.len();
        let below = levels.last().expect("non-empty").clone();
        let mut level = Vec::new();
        for (j, group) in below.chunks(config.fanout).enumerate() {
            let id = format!("I{depth}-{j:03}");
            children.insert(id.clone(), group.to_vec());
            level.push(id);
        }
        levels.push(level);
    }
    let root = levels.last().expect("non-empty")[0].clone();

    // top-down means
    let mut class_means = BTreeMap::new();
    class_means.insert(root.clone(), vec![0.0; d]);
    let mut scale = config.top_spread;
    for level in levels.iter().rev() {
        for parent in level {
            let Some(kids) = children.get(parent) else { continue };
            let center = class_means[parent].clone();
            for kid in kids {
                let offset = gaussian(&mut rng, d);
                let norm = (d as f64).sqrt();
                let mean: Vec<f64> = center.iter().zip(&offset).map(|(c, o)| c + scale * o / norm).collect();
                class_means.insert(kid.clone(), mean);
            }
        }
        if level.iter().any(|p| children.contains_key(p)) {
            scale *= config.spread_decay;
        }
    }

    let mut names = BTreeSet::new();
    let mut nodes = Vec::new();
    for id in class_means.keys() {
        let name = loop {
            let w = pseudo_word(&mut rng);
            if names.insert(w.clone()) {
                break w;
            }
        };
        let kids = children.get(id).cloned().unwrap_or_default();
        let refs = (0..config.samples_per_node).map(|i| format!("{id}#{i}")).collect();
        let mut node = SemanticNode::new(id.clone(), name).with_successors(kids);
        node.sample_refs = refs;
        nodes.push(node);
    }
    let sdag = SDag::build(nodes).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;

    let mut descendants: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for level in &levels {
        for id in level {
            let below = match children.get(id) {
                None => vec![id.clone()],
                Some(kids) => kids.iter().flat_map(|k| descendants[k].clone()).collect(),
            };
            descendants.insert(id.clone(), below);
        }
    }

    let sigma = config.noise_sigma;
    let mut node_samples = BTreeMap::new();
    for (id, below) in &descendants {
        let samples = (0..config.samples_per_node)
            .map(|_| {
                let leaf = &below[rng.random_range(0..below.len())];
                draw(&mut rng, &class_means[leaf], sigma)
            })
            .collect();
        node_samples.insert(id.clone(), samples);
    }

    Ok(SyntheticWorld {
        seed,
        config: config.clone(),
        class_means,
        noise_sigma: sigma,
        sdag,
        leaves,
        descendants,
        node_samples,
    })
}

impl SyntheticWorld {
    pub fn name_of(&self, node_id: &str) -> Option<&str> {
        self.sdag.node(node_id).map(|n| n.name.as_str())
    }

    pub fn is_leaf(&self, node_id: &str) -> bool {
        self.descendants.get(node_id).is_some_and(|d| d.len() == 1 && d[0] == node_id)
    }

    /// Internal nodes whose children are all leaves.
    pub fn leaf_parents(&self) -> Vec<String> {
        self.sdag
            .nodes()
            .filter(|n| !n.successor_ids.is_empty() && n.successor_ids.iter().all(|s| self.is_leaf(s)))
            .map(|n| n.node_id.clone())
            .collect()
    }

    fn check_leaves(&self, ids: &[String]) -> Result<(), SynthError> {
        match ids.iter().find(|id| !self.is_leaf(id)) {
            Some(id) => Err(SynthError::UnknownClass(id.clone())),
            None => Ok(()),
        }
    }
}

/// A linear-softmax classifier over a subset of leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticExpert {
    pub model_id: String,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub corruption: f64,
}

/// What each head of an expert was built for. Only oracles read this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertOracle {
    pub model_id: String,
    pub head_nodes: Vec<String>,
}

impl SyntheticExpert {
    pub fn heads(&self) -> usize {
        self.weights.len()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(&self.biases).map(|(w, b)| dot(w, x) + b).collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x)).expect("expert has heads")
    }
}

fn build_linear(
    world: &SyntheticWorld,
    classes: &[String],
    corruption: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = world.config.feature_dim;
    let mut weights = Vec::with_capacity(classes.len());
    let mut biases = Vec::with_capacity(classes.len());
    for c in classes {
        let noise = gaussian(rng, d);
        let w: Vec<f64> = world.class_means[c].iter().zip(&noise).map(|(m, e)| m + corruption * e).collect();
        biases.push(-0.5 * dot(&w, &w));
        weights.push(w);
    }
    (weights, biases)
}

/// Expert with one head per class in `class_subset`, heads in shuffled order.
/// Head logit is `w·x − ½‖w‖²` with `w = mean + corruption·ε`.
pub fn gen_expert(
    world: &SyntheticWorld,
    class_subset: &[String],
    corruption: f64,
    model_id: impl Into<String>,
    seed: u64,
) -> Result<(SyntheticExpert, ExpertOracle), SynthError> {
    if class_subset.is_empty() {
        return Err(SynthError::InvalidConfig("expert needs at least one class".into()));
    }
    world.check_leaves(class_subset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head_nodes = class_subset.to_vec();
    head_nodes.shuffle(&mut rng);
    let (weights, biases) = build_linear(world, &head_nodes, corruption, &mut rng);
    let model_id = model_id.into();
    Ok((
        SyntheticExpert {
            model_id: model_id.clone(),
            weights,
            biases,
            corruption,
        },
        ExpertOracle { model_id, head_nodes },
    ))
}

/// General-purpose stand-in: a corrupted classifier over all task classes,
/// outputs in task class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGeneralist {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub corruption: f64,
}

impl SyntheticGeneralist {
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self.weights.iter().zip(&self.biases).map(|(w, b)| dot(w, x) + b).collect();
        softmax(&logits)
    }
}

pub fn gen_generalist(
    world: &SyntheticWorld,
    task_leaves: &[String],
    corruption: f64,
    seed: u64,
) -> Result<SyntheticGeneralist, SynthError> {
    if task_leaves.is_empty() {
        return Err(SynthError::InvalidConfig("generalist needs classes".into()));
    }
    world.check_leaves(task_leaves)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (weights, biases) = build_linear(world, task_leaves, corruption, &mut rng);
    Ok(SyntheticGeneralist {
        weights,
        biases,
        corruption,
    })
}

/// Pre-tests `expert` on the first `samples_per_node` stored samples of every node.
pub fn gen_trace(
    expert: &SyntheticExpert,
    world: &SyntheticWorld,
    samples_per_node: usize,
) -> Result<LogitTrace, SynthError> {
    if samples_per_node == 0 || samples_per_node > world.config.samples_per_node {
        return Err(SynthError::InsufficientSamples {
            requested: samples_per_node,
            available: world.config.samples_per_node,
        });
    }
    let mut trace = LogitTrace::new(expert.model_id.clone(), expert.heads(), world.sdag.version());
    for (node, samples) in &world.node_samples {
        for x in &samples[..samples_per_node] {
            trace.push(node.clone(), expert.logits(x));
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    /// Index into the task's class list.
    pub class_index: usize,
    pub leaf: String,
}

/// Balanced draws: sample `i` belongs to class `i mod |classes|`, a leaf is
/// picked uniformly inside the class's group.
pub fn sample_task(
    world: &SyntheticWorld,
    class_groups: &[Vec<String>],
    n: usize,
    seed: u64,
) -> Result<Vec<LabeledSample>, SynthError> {
    if class_groups.is_empty() || class_groups.iter().any(Vec::is_empty) {
        return Err(SynthError::InvalidConfig("every class needs at least one leaf".into()));
    }
    for g in class_groups {
        world.check_leaves(g)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| {
            let class_index = i % class_groups.len();
            let group = &class_groups[class_index];
            let leaf = group[rng.random_range(0..group.len())].clone();
            LabeledSample {
                features: draw(&mut rng, &world.class_means[&leaf], world.noise_sigma),
                class_index,
                leaf,
            }
        })
        .collect())
}

/// Bayes decision among groups of leaves under equal class priors, each
/// group a uniform mixture of its leaves.
pub fn bayes_predict(world: &SyntheticWorld, class_groups: &[Vec<String>], x: &[f64]) -> usize {
    let two_var = 2.0 * world.noise_sigma * world.noise_sigma;
    // log p(x | class) up to a shared constant
    let scores: Vec<f64> = class_groups
        .iter()
        .map(|g| {
            let terms: Vec<f64> = g
                .iter()
                .map(|leaf| {
                    let m = &world.class_means[leaf];
                    -m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / two_var
                })
                .collect();
            let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln() - (g.len() as f64).ln()
        })
        .collect();
    argmax(&scores).expect("at least one group")
}

/// Monte Carlo accuracy of the optimal rule for a task whose classes are
/// equal-weight mixtures of leaf Gaussians (equal class priors). Returns the
/// estimate and its standard error.
pub fn bayes_accuracy_groups(
    world: &SyntheticWorld,
    class_groups: &[Vec<String>],
    n_mc: usize,
    seed: u64,
) -> Result<(f64, f64), SynthError> {
    if class_groups.len() < 2 {
        return Err(SynthError::InvalidConfig("need at least two classes".into()));
    }
    if n_mc < 1000 {
        return Err(SynthError::InvalidConfig("n_mc must be at least 1000".into()));
    }
    let samples = sample_task(world, class_groups, n_mc, seed)?;
    let hits = samples
        .iter()
        .filter(|s| bayes_predict(world, class_groups, &s.features) == s.class_index)
        .count();
    let acc = hits as f64 / n_mc as f64;
    Ok((acc, (acc * (1.0 - acc) / n_mc as f64).sqrt()))
}

/// Nearest-mean accuracy for a task over single leaves.
pub fn bayes_accuracy(
    world: &SyntheticWorld,
    task_leaves: &[String],
    n_mc: usize,
    seed: u64,
) -> Result<(f64, f64), SynthError> {
    let groups: Vec<Vec<String>> = task_leaves.iter().map(|l| vec![l.clone()]).collect();
    bayes_accuracy_groups(world, &groups, n_mc, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn small(leaves: usize, fanout: usize) -> WorldConfig {
        WorldConfig {
            num_leaf_classes: leaves,
            fanout,
            samples_per_node: 10,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_world() {
        let a = gen_world(3, &small(12, 3)).unwrap();
        let b = gen_world(3, &small(12, 3)).unwrap();
        assert_eq!(a, b);
        let c = gen_world(4, &small(12, 3)).unwrap();
        assert_ne!(a.class_means, c.class_means);
    }

    #[test]
    fn fanout_two_four_leaves() {
        let w = gen_world(1, &small(4, 2)).unwrap();
        let leaves = w.sdag.nodes().filter(|n| n.successor_ids.is_empty()).count();
        assert_eq!(leaves, 4);
        assert_eq!(w.sdag.len(), 7);
        let roots: Vec<_> = w.sdag.nodes().filter(|n| w.sdag.predecessors(&n.node_id).is_empty()).collect();
        assert_eq!(roots.len(), 1);
        assert_eq!(roots[0].successor_ids.len(), 2);
        assert_eq!(w.descendants[&roots[0].node_id].len(), 4);
    }

    #[test]
    fn names_are_unique_and_means_distinct() {
        let w = gen_world(5, &small(60, 4)).unwrap();
        let names: BTreeSet<_> = w.sdag.nodes().map(|n| n.name.clone()).collect();
        assert_eq!(names.len(), w.sdag.len());
        let means: Vec<&Vec<f64>> = w.leaves.iter().map(|l| &w.class_means[l]).collect();
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                assert_ne!(means[i], means[j]);
            }
        }
        assert!(w.sdag.nodes().all(|n| w.node_samples[&n.node_id].len() == 10));
    }

    #[test]
    fn siblings_are_closer_than_cousins() {
        let w = gen_world(6, &WorldConfig { num_leaf_classes: 40, fanout: 4, ..Default::default() }).unwrap();
        let dist = |a: &str, b: &str| -> f64 {
            w.class_means[a].iter().zip(&w.class_means[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        let (mut sib, mut far, mut ns, mut nf) = (0.0, 0.0, 0, 0);
        for p in w.leaf_parents() {
            let kids = w.sdag.successors(&p);
            for a in kids {
                for b in w.leaves.iter().filter(|b| *b != a) {
                    if kids.contains(b) {
                        sib += dist(a, b);
                        ns += 1;
                    } else {
                        far += dist(a, b);
                        nf += 1;
                    }
                }
            }
        }
        assert!(sib / (ns as f64) < far / (nf as f64));
    }

    #[test]
    fn internal_samples_come_from_descendants() {
        let cfg = WorldConfig { noise_sigma: 1e-6, ..small(6, 3) };
        let w = gen_world(7, &cfg).unwrap();
        for p in w.leaf_parents() {
            for x in &w.node_samples[&p] {
                let near = w.descendants[&p].iter().any(|l| {
                    w.class_means[l].iter().zip(x).all(|(m, v)| (m - v).abs() < 1e-3)
                });
                assert!(near);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(gen_world(0, &small(1, 2)).is_err());
        assert!(gen_world(0, &WorldConfig { fanout: 1, ..Default::default() }).is_err());
        assert!(gen_world(0, &WorldConfig { noise_sigma: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn expert_heads_and_oracle() {
        let w = gen_world(8, &small(10, 5)).unwrap();
        let subset = w.leaves[..4].to_vec();
        let (e, o) = gen_expert(&w, &subset, 0.0, "m", 1).unwrap();
        assert_eq!(e.heads(), 4);
        let mut sorted = o.head_nodes.clone();
        sorted.sort();
        assert_eq!(sorted, subset);
        // corruption 0: each head is the Bayes score of its class
        let x = vec![0.3; 16];
        for (h, node) in o.head_nodes.iter().enumerate() {
            let m = &w.class_means[node];
            let expected = dot(m, &x) - 0.5 * dot(m, m);
            assert!((e.logits(&x)[h] - expected).abs() < 1e-12);
        }
        assert!(matches!(
            gen_expert(&w, &["I1-000".to_string()], 0.0, "m", 1),
            Err(SynthError::UnknownClass(_))
        ));
        let (single, _) = gen_expert(&w, &subset[..1], 0.3, "s", 2).unwrap();
        assert_eq!(single.predict(&x), 0);
    }

    #[test]
    fn uncorrupted_expert_matches_bayes() {
        let cfg = WorldConfig { num_leaf_classes: 10, fanout: 5, samples_per_node: 5, ..Default::default() };
        let w = gen_world(9, &cfg).unwrap();
        let task = w.leaves.clone();
        let (e, o) = gen_expert(&w, &task, 0.0, "m", 3).unwrap();
        let groups: Vec<Vec<String>> = task.iter().map(|l| vec![l.clone()]).collect();
        let test = sample_task(&w, &groups, 20_000, 77).unwrap();
        let hits = test
            .iter()
            .filter(|s| o.head_nodes[e.predict(&s.features)] == task[s.class_index])
            .count();
        let acc = hits as f64 / test.len() as f64;
        let (bayes, se) = bayes_accuracy(&w, &task, 20_000, 78).unwrap();
        assert!((acc - bayes).abs() < 4.0 * se * 2f64.sqrt() + 1e-9, "{acc} vs {bayes}");
    }

    #[test]
    fn corruption_drives_accuracy_to_chance() {
        let cfg = WorldConfig { num_leaf_classes: 10, fanout: 5, samples_per_node: 5, ..Default::default() };
        let w = gen_world(10, &cfg).unwrap();
        let task = w.leaves.clone();
        let groups: Vec<Vec<String>> = task.iter().map(|l| vec![l.clone()]).collect();
        let test = sample_task(&w, &groups, 3000, 5).unwrap();
        let accuracy = |corruption: f64| {
            let mut total = 0.0;
            for s in 0..5 {
                let (e, o) = gen_expert(&w, &task, corruption, "m", s).unwrap();
                let hits = test.iter().filter(|t| o.head_nodes[e.predict(&t.features)] == task[t.class_index]).count();
                total += hits as f64 / test.len() as f64;
            }
            total / 5.0
        };
        let levels: Vec<f64> = (0..10).map(|i| accuracy(i as f64 * 3.0)).collect();
        assert!(levels[0] > 0.6);
        assert!(levels[9] < 0.25, "{levels:?}");
        assert!(levels[0] > levels[3] && levels[3] > levels[9]);
    }

    #[test]
    fn traces_are_deterministic_and_shaped() {
        let w = gen_world(11, &small(6, 3)).unwrap();
        let (e, _) = gen_expert(&w, &w.leaves[..3], 0.2, "m", 4).unwrap();
        let t = gen_trace(&e, &w, 1).unwrap();
        assert_eq!(t, gen_trace(&e.clone(), &w, 1).unwrap());
        assert_eq!(t.node_logits.len(), w.sdag.len());
        assert!(t.node_logits.values().all(|v| v.len() == 1 && v[0].len() == 3));
        let means = crate::labelling::mean_logits(&t).unwrap();
        for (n, m) in &means.means {
            assert_eq!(m, &t.node_logits[n][0]);
        }
        assert!(gen_trace(&e, &w, 11).is_err());
        assert_eq!(t.sdag_version, w.sdag.version());
    }

    #[test]
    fn own_class_dominates_mean_logit_at_low_noise() {
        let cfg = WorldConfig { noise_sigma: 0.05, num_leaf_classes: 8, fanout: 4, ..Default::default() };
        let w = gen_world(12, &cfg).unwrap();
        let (e, o) = gen_expert(&w, &w.leaves, 0.0, "m", 5).unwrap();
        let means = crate::labelling::mean_logits(&gen_trace(&e, &w, 50).unwrap()).unwrap();
        for (h, node) in o.head_nodes.iter().enumerate() {
            assert_eq!(argmax(&means.means[node]), Some(h));
        }
    }

    #[test]
    fn bayes_closed_form_two_classes() {
        // means at ±σ along one axis: ‖μ1−μ2‖/(2σ) = 1, accuracy Φ(1)
        let mut w = gen_world(13, &small(2, 2)).unwrap();
        let sigma = w.noise_sigma;
        let mut a = vec![0.0; 16];
        a[0] = sigma;
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        w.class_means.insert(w.leaves[0].clone(), a);
        w.class_means.insert(w.leaves[1].clone(), b);
        let (acc, se) = bayes_accuracy(&w, &w.leaves.clone(), 200_000, 1).unwrap();
        let phi1 = Normal::new(0.0, 1.0).unwrap().cdf(1.0);
        assert!((phi1 - 0.8413).abs() < 1e-4);
        assert!((acc - phi1).abs() < 4.0 * se, "{acc} vs {phi1}");
    }

    #[test]
    fn bayes_limits() {
        let w = gen_world(14, &WorldConfig { noise_sigma: 1e-4, ..small(6, 3) }).unwrap();
        let (acc, _) = bayes_accuracy(&w, &w.leaves.clone(), 2000, 2).unwrap();
        assert_eq!(acc, 1.0);

        let mut same = gen_world(15, &small(4, 2)).unwrap();
        let m = same.class_means[&same.leaves[0]].clone();
        for l in same.leaves.clone() {
            same.class_means.insert(l, m.clone());
        }
        let (acc, se) = bayes_accuracy(&same, &same.leaves.clone(), 4000, 3).unwrap();
        // every score ties, argmax picks class 0: a quarter of balanced samples
        assert!((acc - 0.25).abs() <= 4.0 * se.max(1e-3));
        assert!(bayes_accuracy(&same, &same.leaves[..1].to_vec(), 4000, 3).is_err());
        assert!(bayes_accuracy(&same, &same.leaves.clone(), 10, 3).is_err());
    }
}
