//! Brute-force ground truth.
//!
//! Disorder placements are enumerated exactly up to a cutoff `C`, with the
//! remaining prior mass lumped into three tail atoms whose likelihood is
//! the same for every prefix of length `≤ C`. Observation histories are
//! enumerated as a tree, which caps the usable horizon.

use serde::Serialize;

use crate::error::{DisorderError, Result};
use crate::filter::{filter_step, PosteriorState};
use crate::model::{powu, ModelSpec, Regime};
use crate::segment::TrajectoryPrefix;

/// Longest prefix [`bayes_filter_exact`] accepts.
pub const MAX_PREFIX: usize = 10;
/// Largest number of leaves a history tree may have.
pub const TREE_LIMIT: f64 = 1e7;

/// One cell of the partition of `(θ₁, θ₂)` relative to the cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Atom {
    /// `θ₁ = j, θ₂ = k` with `j ≤ k ≤ C`.
    Exact { j: u64, k: u64 },
    /// `θ₁ = j ≤ C < θ₂`.
    SecondBeyond { j: u64 },
    /// `C < θ₁ = θ₂`.
    EqualBeyond,
    /// `C < θ₁ < θ₂`.
    BothBeyond,
}

impl Atom {
    /// Regime of step `n ≤ C` under this placement.
    pub fn regime(self, n: u64) -> Regime {
        match self {
            Atom::Exact { j, k } => Regime::at(n, j, k),
            Atom::SecondBeyond { j } => {
                if n < j {
                    Regime::Pre
                } else {
                    Regime::Middle
                }
            }
            Atom::EqualBeyond | Atom::BothBeyond => Regime::Pre,
        }
    }

    /// `θ₁` if it is known exactly.
    pub fn theta1(self) -> Option<u64> {
        match self {
            Atom::Exact { j, .. } | Atom::SecondBeyond { j } => Some(j),
            _ => None,
        }
    }

    /// `θ₂` if it is known exactly.
    pub fn theta2(self) -> Option<u64> {
        match self {
            Atom::Exact { k, .. } => Some(k),
            _ => None,
        }
    }

    /// `θ₁ ≤ t`, decidable for `t ≤ C`.
    pub fn first_by(self, t: u64) -> bool {
        self.theta1().is_some_and(|j| j <= t)
    }

    /// `θ₂ ≤ t`, decidable for `t ≤ C`.
    pub fn second_by(self, t: u64) -> bool {
        self.theta2().is_some_and(|k| k <= t)
    }

    /// `θ₁ = θ₂`, always decidable.
    pub fn equal(self) -> bool {
        match self {
            Atom::Exact { j, k } => j == k,
            Atom::EqualBeyond => true,
            _ => false,
        }
    }
}

/// Partition of the prior with cutoff `C`, each atom paired with its mass.
pub fn atoms(model: &ModelSpec, cutoff: u64) -> Vec<(Atom, f64)> {
    let p = &model.prior;
    let mut out = Vec::new();
    for j in 0..=cutoff {
        let pj = p.theta1_pmf(j);
        for k in j..=cutoff {
            out.push((Atom::Exact { j, k }, pj * p.theta2_given_theta1(j, k)));
        }
        out.push((Atom::SecondBeyond { j }, pj * (1.0 - p.rho) * powu(p.p2, cutoff - j)));
    }
    let late = (1.0 - p.pi) * powu(p.p1, cutoff);
    out.push((Atom::EqualBeyond, late * p.rho));
    out.push((Atom::BothBeyond, late * (1.0 - p.rho)));
    out
}

/// Exact posteriors of a prefix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactPosteriors {
    pub n: usize,
    pub pi1: f64,
    pub pi2: f64,
    pub pi12: f64,
    /// `Π_{mn}` for `m = 0..=n`.
    pub pinm: Vec<f64>,
    /// Joint density `Sₙ` of the prefix.
    pub s_n: f64,
}

/// Unnormalised atom weights `P(atom) · f(x₁..xₙ | atom)` of a prefix.
pub struct AtomWeights {
    pub cutoff: u64,
    pub atoms: Vec<Atom>,
    pub weights: Vec<f64>,
}

impl AtomWeights {
    pub fn new(model: &ModelSpec, prefix: &TrajectoryPrefix, cutoff: u64) -> Result<Self> {
        let n = prefix.len() as u64;
        if cutoff < n {
            return Err(DisorderError::InvalidArgument(format!(
                "cutoff {cutoff} shorter than the prefix {n}"
            )));
        }
        let (atoms, mut weights): (Vec<_>, Vec<_>) = atoms(model, cutoff).into_iter().unzip();
        let xs = prefix.states();
        for s in 1..xs.len() {
            for (a, w) in atoms.iter().zip(weights.iter_mut()) {
                *w *= model.density(a.regime(s as u64), xs[s - 1], xs[s]);
            }
        }
        Ok(Self {
            cutoff,
            atoms,
            weights,
        })
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Unnormalised mass of the atoms satisfying `event`.
    pub fn mass(&self, event: impl Fn(Atom) -> bool) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .filter(|(a, _)| event(**a))
            .map(|(_, w)| w)
            .sum()
    }
}

fn check_prefix(prefix: &TrajectoryPrefix) -> Result<()> {
    if prefix.len() > MAX_PREFIX {
        return Err(DisorderError::PrefixTooLong {
            len: prefix.len(),
            max: MAX_PREFIX,
        });
    }
    Ok(())
}

/// `P(event | x₀..xₙ)` where `event` is a predicate over atoms with cutoff
/// `n + 3`. Events must be decidable on that partition.
pub fn event_probability(model: &ModelSpec, prefix: &TrajectoryPrefix, event: impl Fn(Atom) -> bool) -> Result<f64> {
    check_prefix(prefix)?;
    let w = AtomWeights::new(model, prefix, prefix.len() as u64 + 3)?;
    let total = w.total();
    if !(total > 0.0) {
        return Err(zero_prefix(prefix));
    }
    Ok(w.mass(event) / total)
}

fn zero_prefix(prefix: &TrajectoryPrefix) -> DisorderError {
    let xs = prefix.states();
    let n = xs.len() - 1;
    DisorderError::ZeroLikelihood {
        step: n,
        from: xs[n.saturating_sub(1)],
        to: xs[n],
    }
}

/// Posteriors by Bayes' formula over all disorder placements.
pub fn bayes_filter_exact(model: &ModelSpec, prefix: &TrajectoryPrefix) -> Result<ExactPosteriors> {
    check_prefix(prefix)?;
    let n = prefix.len() as u64;
    let w = AtomWeights::new(model, prefix, n + 1)?;
    let s_n = w.total();
    if !(s_n > 0.0) {
        return Err(zero_prefix(prefix));
    }
    let pinm = (0..=n)
        .map(|m| w.mass(|a| a.theta1() == Some(m) && !a.second_by(n)) / s_n)
        .collect();
    Ok(ExactPosteriors {
        n: n as usize,
        pi1: w.mass(|a| a.first_by(n)) / s_n,
        pi2: w.mass(|a| a.second_by(n)) / s_n,
        pi12: w.mass(|a| a.equal() && !a.first_by(n)) / s_n,
        pinm,
        s_n,
    })
}

/// Number of leaves of the history tree of depth `horizon`.
pub fn tree_leaves(model: &ModelSpec, horizon: usize) -> f64 {
    (model.n_states() as f64).powi(horizon as i32)
}

/// Fails with `TreeTooLarge` when the depth-`horizon` tree exceeds the limit.
pub fn guard(model: &ModelSpec, horizon: usize) -> Result<()> {
    let nodes = tree_leaves(model, horizon);
    if nodes > TREE_LIMIT {
        return Err(DisorderError::TreeTooLarge {
            nodes,
            limit: TREE_LIMIT,
        });
    }
    Ok(())
}

/// A node of the history tree.
#[derive(Clone)]
pub struct HistoryNode {
    /// `x₀..xₙ`.
    pub states: Vec<usize>,
    /// `P(x₁..xₙ)` including the reference-measure weights.
    pub prob: f64,
    /// Recursive filter state at this node.
    pub filter: PosteriorState,
    /// Unnormalised atom masses, consistent with `prob`.
    pub weights: Vec<f64>,
}

impl HistoryNode {
    pub fn n(&self) -> usize {
        self.states.len() - 1
    }
}

/// Depth-first walker over the history tree, sharing the atom list.
pub struct HistoryTree<'a> {
    pub model: &'a ModelSpec,
    pub atoms: Vec<Atom>,
    pub horizon: usize,
}

impl<'a> HistoryTree<'a> {
    /// Tree of depth `horizon` below the root `x₀`.
    pub fn new(model: &'a ModelSpec, horizon: usize) -> Result<Self> {
        guard(model, horizon)?;
        let atoms = atoms(model, horizon as u64 + 1).into_iter().map(|(a, _)| a).collect();
        Ok(Self {
            model,
            atoms,
            horizon,
        })
    }

    pub fn root(&self) -> HistoryNode {
        let weights = atoms(self.model, self.horizon as u64 + 1)
            .into_iter()
            .map(|(_, w)| w)
            .collect();
        HistoryNode {
            states: vec![self.model.x0],
            prob: 1.0,
            filter: PosteriorState::initial(self.model),
            weights,
        }
    }

    /// Node reached by following `observations` from the root.
    pub fn node(&self, observations: &[usize]) -> Result<HistoryNode> {
        let mut node = self.root();
        for &y in observations {
            node = self.child(&node, y)?.ok_or_else(|| DisorderError::ZeroLikelihood {
                step: node.n() + 1,
                from: node.states[node.n()],
                to: y,
            })?;
        }
        Ok(node)
    }

    /// Child after observing `y`, or `None` when it has probability zero.
    pub fn child(&self, node: &HistoryNode, y: usize) -> Result<Option<HistoryNode>> {
        let n = node.n() + 1;
        let x = node.states[n - 1];
        let mu = self.model.weight(y);
        let weights: Vec<f64> = self
            .atoms
            .iter()
            .zip(&node.weights)
            .map(|(a, w)| w * self.model.density(a.regime(n as u64), x, y) * mu)
            .collect();
        let prob: f64 = weights.iter().sum();
        if !(prob > 0.0) {
            return Ok(None);
        }
        let mut states = node.states.clone();
        states.push(y);
        Ok(Some(HistoryNode {
            states,
            prob,
            filter: filter_step(self.model, &node.filter, y)?,
            weights,
        }))
    }

    pub fn children(&self, node: &HistoryNode) -> Result<Vec<HistoryNode>> {
        let mut out = Vec::with_capacity(self.model.n_states());
        for y in 0..self.model.n_states() {
            if let Some(c) = self.child(node, y)? {
                out.push(c);
            }
        }
        Ok(out)
    }

    /// Unnormalised mass of `event` at `node`.
    pub fn mass(&self, node: &HistoryNode, event: impl Fn(Atom) -> bool) -> f64 {
        self.atoms
            .iter()
            .zip(&node.weights)
            .filter(|(a, _)| event(**a))
            .map(|(_, w)| w)
            .sum()
    }

    /// Sum of leaf probabilities at every depth (each should be 1).
    pub fn level_masses(&self) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.horizon + 1];
        self.walk(&self.root(), &mut |node| out[node.n()] += node.prob)?;
        Ok(out)
    }

    fn walk(&self, node: &HistoryNode, f: &mut impl FnMut(&HistoryNode)) -> Result<()> {
        f(node);
        if node.n() < self.horizon {
            for c in self.children(node)? {
                self.walk(&c, f)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Stop,
    Continue,
}

/// Decision at one history node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeAction {
    pub observations: Vec<usize>,
    /// First-stop action (the only one for detection).
    pub first: Action,
    /// Second-stop actions for `τ = m`, indexed by `m ≤ n` (double problem only).
    pub second: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpResult {
    pub horizon: usize,
    /// Value computed from conditional probabilities.
    pub value: f64,
    /// Same value computed from unnormalised joint masses.
    pub value_raw: f64,
    pub actions: Vec<NodeAction>,
}

/// `E[Z_τ]` maximised over stopping rules `τ ≤ N`, where
/// `Zₙ = P(θ₁ ≤ n < θ₂ | Fₙ)`.
pub fn dp_detect(model: &ModelSpec, horizon: usize) -> Result<DpResult> {
    dp_detect_from(model, &[], horizon)
}

/// Optimal detection value with `steps` more observations allowed after
/// the node reached by `observations`, conditional on that node.
pub fn dp_detect_from(model: &ModelSpec, observations: &[usize], steps: usize) -> Result<DpResult> {
    let tree = HistoryTree::new(model, observations.len() + steps)?;
    let start = tree.node(observations)?;
    let mut actions = Vec::new();
    let (value, value_raw) = detect_rec(&tree, &start, &mut actions)?;
    Ok(DpResult {
        horizon: steps,
        value,
        value_raw: value_raw / start.prob,
        actions,
    })
}

/// Returns `(normalised value, raw value)` of the subtree.
fn detect_rec(tree: &HistoryTree, node: &HistoryNode, actions: &mut Vec<NodeAction>) -> Result<(f64, f64)> {
    let n = node.n() as u64;
    let raw_stop = tree.mass(node, |a| a.first_by(n) && !a.second_by(n));
    let z = raw_stop / node.prob;
    let slot = actions.len();
    actions.push(NodeAction {
        observations: node.states[1..].to_vec(),
        first: Action::Stop,
        second: Vec::new(),
    });
    if node.n() == tree.horizon {
        return Ok((z, raw_stop));
    }
    let (mut cont, mut cont_raw) = (0.0, 0.0);
    for c in tree.children(node)? {
        let (v, r) = detect_rec(tree, &c, actions)?;
        cont += c.prob / node.prob * v;
        cont_raw += r;
    }
    let stop = z >= cont;
    if !stop {
        actions[slot].first = Action::Continue;
    }
    Ok((z.max(cont), raw_stop.max(cont_raw)))
}

/// `P(τ = θ₁, σ = θ₂)` maximised over compound rules `τ ≤ σ ≤ N`.
pub fn dp_double(model: &ModelSpec, horizon: usize) -> Result<DpResult> {
    let tree = HistoryTree::new(model, horizon)?;
    let mut actions = Vec::new();
    let (v, v_raw, _) = double_rec(&tree, &tree.root(), &mut actions)?;
    Ok(DpResult {
        horizon,
        value: v,
        value_raw: v_raw,
        actions,
    })
}

/// Second-stop values of a subtree, one per `m ≤ n`.
struct PhaseTwo {
    norm: Vec<f64>,
    raw: Vec<f64>,
}

fn double_rec(
    tree: &HistoryTree,
    node: &HistoryNode,
    actions: &mut Vec<NodeAction>,
) -> Result<(f64, f64, PhaseTwo)> {
    let n = node.n();
    let nn = n as u64;
    // ξ(m, n) = P(θ₁ = m, θ₂ = n, x₁..xₙ)
    let xi_raw: Vec<f64> = (0..=nn)
        .map(|m| tree.mass(node, |a| a == Atom::Exact { j: m, k: nn }))
        .collect();
    let slot = actions.len();
    actions.push(NodeAction {
        observations: node.states[1..].to_vec(),
        first: Action::Stop,
        second: vec![Action::Stop; n + 1],
    });
    if n == tree.horizon {
        let norm = xi_raw.iter().map(|x| x / node.prob).collect();
        let u = PhaseTwo { norm, raw: xi_raw };
        return Ok((u.norm[n], u.raw[n], u));
    }
    let mut cont_u = vec![0.0; n + 1];
    let mut cont_u_raw = vec![0.0; n + 1];
    let (mut cont_v, mut cont_v_raw) = (0.0, 0.0);
    for c in tree.children(node)? {
        let w = c.prob / node.prob;
        let (v, v_raw, u) = double_rec(tree, &c, actions)?;
        cont_v += w * v;
        cont_v_raw += v_raw;
        for m in 0..=n {
            cont_u[m] += w * u.norm[m];
            cont_u_raw[m] += u.raw[m];
        }
    }
    let mut u = PhaseTwo {
        norm: vec![0.0; n + 1],
        raw: vec![0.0; n + 1],
    };
    for m in 0..=n {
        let xi = xi_raw[m] / node.prob;
        if xi < cont_u[m] {
            actions[slot].second[m] = Action::Continue;
        }
        u.norm[m] = xi.max(cont_u[m]);
        u.raw[m] = xi_raw[m].max(cont_u_raw[m]);
    }
    if u.norm[n] < cont_v {
        actions[slot].first = Action::Continue;
    }
    let v = u.norm[n].max(cont_v);
    let v_raw = u.raw[n].max(cont_v_raw);
    Ok((v, v_raw, u))
}

/// Exact success probability `P(θ₁ ≤ τ < θ₂)` of a detection rule on the
/// tree of depth `horizon`; the rule is forced to stop at the horizon.
pub fn detect_policy_value(
    model: &ModelSpec,
    horizon: usize,
    stop: &dyn Fn(&HistoryNode) -> bool,
) -> Result<f64> {
    let tree = HistoryTree::new(model, horizon)?;
    fn rec(tree: &HistoryTree, node: &HistoryNode, stop: &dyn Fn(&HistoryNode) -> bool) -> Result<f64> {
        let n = node.n() as u64;
        if node.n() == tree.horizon || stop(node) {
            return Ok(tree.mass(node, |a| a.first_by(n) && !a.second_by(n)));
        }
        let mut acc = 0.0;
        for c in tree.children(node)? {
            acc += rec(tree, &c, stop)?;
        }
        Ok(acc)
    }
    rec(&tree, &tree.root(), stop)
}

/// Exact success probability `P(τ = θ₁, σ = θ₂)` of a compound rule. The
/// first rule sees the node; the second also gets `τ`. Both are forced to
/// stop at the horizon.
pub fn double_policy_value(
    model: &ModelSpec,
    horizon: usize,
    first: &dyn Fn(&HistoryNode) -> bool,
    second: &dyn Fn(usize, &HistoryNode) -> bool,
) -> Result<f64> {
    let tree = HistoryTree::new(model, horizon)?;
    type Second<'a> = &'a dyn Fn(usize, &HistoryNode) -> bool;
    fn phase2(tree: &HistoryTree, node: &HistoryNode, m: usize, second: Second) -> Result<f64> {
        let n = node.n();
        if n == tree.horizon || second(m, node) {
            let k = n as u64;
            return Ok(tree.mass(node, |a| a == Atom::Exact { j: m as u64, k }));
        }
        let mut acc = 0.0;
        for c in tree.children(node)? {
            acc += phase2(tree, &c, m, second)?;
        }
        Ok(acc)
    }
    fn phase1(
        tree: &HistoryTree,
        node: &HistoryNode,
        first: &dyn Fn(&HistoryNode) -> bool,
        second: Second,
    ) -> Result<f64> {
        if node.n() == tree.horizon || first(node) {
            return phase2(tree, node, node.n(), second);
        }
        let mut acc = 0.0;
        for c in tree.children(node)? {
            acc += phase1(tree, &c, first, second)?;
        }
        Ok(acc)
    }
    phase1(&tree, &tree.root(), first, second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{identical_kernels, m2};
    use crate::model::PriorParams;

    #[test]
    fn atoms_partition_the_prior() {
        for c in [0, 1, 5] {
            let total: f64 = atoms(&m2(), c).iter().map(|(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn root_posteriors_are_the_boundary() {
        let m = m2();
        let e = bayes_filter_exact(&m, &TrajectoryPrefix::from_observations(&m, &[]).unwrap()).unwrap();
        assert!((e.pi1 - 0.1).abs() < 1e-15);
        assert!((e.pi2 - 0.025).abs() < 1e-15);
        assert!((e.pi12 - 0.225).abs() < 1e-15);
        assert!((e.pinm[0] - 0.075).abs() < 1e-15);
    }

    #[test]
    fn certain_origin_disorder() {
        let m = m2().with_prior(PriorParams::new(1.0, 1.0, 0.9, 0.8));
        let e = bayes_filter_exact(&m, &TrajectoryPrefix::from_observations(&m, &[1, 0, 1]).unwrap()).unwrap();
        assert_eq!((e.pi1, e.pi2, e.pi12), (1.0, 1.0, 0.0));
    }

    #[test]
    fn prefix_limit() {
        let m = m2();
        let p = TrajectoryPrefix::from_observations(&m, &[0; 11]).unwrap();
        assert!(matches!(bayes_filter_exact(&m, &p), Err(DisorderError::PrefixTooLong { .. })));
    }

    #[test]
    fn leaf_probabilities_sum_to_one() {
        let m = m2();
        for mass in HistoryTree::new(&m, 7).unwrap().level_masses().unwrap() {
            assert!((mass - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn detect_dp_trivial_cases() {
        let m = m2();
        let v0 = dp_detect(&m, 0).unwrap().value;
        assert!((v0 - 0.1 * 0.75).abs() < 1e-15);
        let none = m2().with_prior(PriorParams::new(0.0, 1.0, 0.9, 0.8));
        for n in 0..6 {
            assert_eq!(dp_detect(&none, n).unwrap().value, 0.0);
        }
    }

    #[test]
    fn dp_paths_agree_and_grow() {
        let m = m2();
        let mut last = (0.0, 0.0);
        for n in 0..7 {
            let d = dp_detect(&m, n).unwrap();
            let e = dp_double(&m, n).unwrap();
            assert!((d.value - d.value_raw).abs() < 1e-12);
            assert!((e.value - e.value_raw).abs() < 1e-12);
            assert!(d.value >= last.0 - 1e-15 && e.value >= last.1 - 1e-15);
            last = (d.value, e.value);
        }
    }

    #[test]
    fn double_dp_certain_origin() {
        let m = m2().with_prior(PriorParams::new(1.0, 1.0, 0.9, 0.8));
        assert!((dp_double(&m, 4).unwrap().value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uninformative_double_dp_is_best_fixed_pair() {
        let prior = PriorParams::new(0.1, 0.25, 0.9, 0.8);
        let m = identical_kernels(prior);
        let n = 6;
        let mut best: f64 = 0.0;
        for j in 0..=n {
            for k in j..=n {
                best = best.max(prior.joint_pmf(j, k).unwrap());
            }
        }
        assert!((dp_double(&m, n as usize).unwrap().value - best).abs() < 1e-14);
    }

    #[test]
    fn policy_value_matches_dp_actions() {
        let m = m2();
        let d = dp_detect(&m, 5).unwrap();
        let stop_set: std::collections::HashSet<Vec<usize>> = d
            .actions
            .iter()
            .filter(|a| a.first == Action::Stop)
            .map(|a| a.observations.clone())
            .collect();
        let v = detect_policy_value(&m, 5, &|node| stop_set.contains(&node.states[1..].to_vec())).unwrap();
        assert!((v - d.value).abs() < 1e-14);
    }

    #[test]
    fn too_large_tree_is_refused() {
        let m = m2();
        assert!(matches!(dp_detect(&m, 24), Err(DisorderError::TreeTooLarge { .. })));
    }
}
