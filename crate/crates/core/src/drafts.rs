//! Draft-set construction.
//!
//! A [`DraftSet`] is stored as a rooted tree of draft nodes. I.i.d. drafts
//! are `K` disjoint chains hanging off the root; prefix-tree drafts branch
//! by `k_i` at depth `i`. In both cases the children of any node are i.i.d.
//! draws from the small model conditioned on that node's prefix, which is
//! what sequence-level selection relies on.

use std::collections::HashMap;
use std::sync::Arc;

use crate::lm::ToyLm;
use crate::prob::{self, ProbVector, RngStream, TokenId};
use crate::{Error, Result};

/// Upper limit on the number of draft sequences in one set.
pub const MAX_DRAFT_SEQUENCES: usize = 1 << 16;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DraftConstruction {
    Iid { k: usize },
    Tree { factors: Vec<usize> },
}

#[derive(Debug, Clone)]
struct DraftNode {
    token: Option<TokenId>,
    parent: Option<NodeId>,
    depth: usize,
    children: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct DraftSet {
    context: Vec<TokenId>,
    length: usize,
    nodes: Vec<DraftNode>,
    leaves: Vec<NodeId>,
    construction: DraftConstruction,
    /// Small-model next-token law for every draft prefix (relative to the context).
    small_conditionals: HashMap<Vec<TokenId>, Arc<ProbVector>>,
}

impl DraftSet {
    fn empty(context: &[TokenId], length: usize, construction: DraftConstruction) -> Self {
        Self {
            context: context.to_vec(),
            length,
            nodes: vec![DraftNode {
                token: None,
                parent: None,
                depth: 0,
                children: Vec::new(),
            }],
            leaves: Vec::new(),
            construction,
            small_conditionals: HashMap::new(),
        }
    }

    fn push_child(&mut self, parent: NodeId, token: TokenId) -> NodeId {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(DraftNode {
            token: Some(token),
            parent: Some(parent),
            depth,
            children: Vec::new(),
        });
        self.nodes[parent].children.push(id);
        if depth == self.length {
            self.leaves.push(id);
        }
        id
    }

    fn conditional_for(&mut self, small: &ToyLm, prefix: &[TokenId]) -> Result<Arc<ProbVector>> {
        if let Some(d) = self.small_conditionals.get(prefix) {
            return Ok(Arc::clone(d));
        }
        let mut full = self.context.clone();
        full.extend_from_slice(prefix);
        let dist = small.next_dist(&full)?;
        self.small_conditionals.insert(prefix.to_vec(), Arc::clone(&dist));
        Ok(dist)
    }

    pub fn context(&self) -> &[TokenId] {
        &self.context
    }

    /// Common draft length `L`.
    pub fn draft_length(&self) -> usize {
        self.length
    }

    pub fn construction(&self) -> &DraftConstruction {
        &self.construction
    }

    pub fn num_sequences(&self) -> usize {
        self.leaves.len()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn children(&self, node: NodeId) -> &[NodeId] {
        &self.nodes[node].children
    }

    /// Token at a non-root node.
    pub fn token(&self, node: NodeId) -> TokenId {
        self.nodes[node].token.expect("root has no token")
    }

    pub fn depth(&self, node: NodeId) -> usize {
        self.nodes[node].depth
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Draft tokens from the root down to and including `node`.
    pub fn prefix(&self, node: NodeId) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(self.nodes[node].depth);
        let mut cur = Some(node);
        while let Some(id) = cur {
            if let Some(t) = self.nodes[id].token {
                out.push(t);
            }
            cur = self.nodes[id].parent;
        }
        out.reverse();
        out
    }

    /// All draft sequences (root-to-leaf paths), in construction order.
    pub fn sequences(&self) -> Vec<Vec<TokenId>> {
        self.leaves.iter().map(|&l| self.prefix(l)).collect()
    }

    /// Cached small-model conditional after `prefix` (relative to the context).
    pub fn small_conditional(&self, prefix: &[TokenId]) -> Option<&Arc<ProbVector>> {
        self.small_conditionals.get(prefix)
    }

    pub fn cached_prefixes(&self) -> impl Iterator<Item = &Vec<TokenId>> {
        self.small_conditionals.keys()
    }

    /// Probability of this exact realization under the small model: the
    /// product over nodes of the conditional of their token given the parent prefix.
    pub fn realization_probability(&self) -> f64 {
        self.nodes
            .iter()
            .skip(1)
            .map(|node| {
                let parent = node.parent.expect("non-root node has a parent");
                self.small_conditionals
                    .get(&self.prefix(parent))
                    .map_or(0.0, |d| d.prob(node.token.expect("non-root node has a token")))
            })
            .product()
    }

    /// I.i.d.-style draft set holding the given sequences verbatim.
    pub fn from_sequences(small: &ToyLm, context: &[TokenId], sequences: &[Vec<TokenId>]) -> Result<Self> {
        let length = sequences.first().map_or(0, Vec::len);
        if length == 0 {
            return Err(Error::Structure("draft set is empty".into()));
        }
        if sequences.iter().any(|s| s.len() != length) {
            return Err(Error::Structure("drafts of mixed length".into()));
        }
        let mut set = DraftSet::empty(context, length, DraftConstruction::Iid { k: sequences.len() });
        for seq in sequences {
            let mut node = set.root();
            for (i, &tok) in seq.iter().enumerate() {
                set.conditional_for(small, &seq[..i])?.check_token(tok)?;
                node = set.push_child(node, tok);
            }
        }
        Ok(set)
    }

    /// Prefix tree with the given expansion factors whose node tokens are
    /// listed in breadth-first order.
    pub fn from_tree_tokens(small: &ToyLm, context: &[TokenId], factors: &[usize], tokens: &[TokenId]) -> Result<Self> {
        check_factors(factors)?;
        let mut set = DraftSet::empty(
            context,
            factors.len(),
            DraftConstruction::Tree {
                factors: factors.to_vec(),
            },
        );
        let mut next_token = tokens.iter();
        let mut frontier = vec![set.root()];
        for &branch in factors {
            let mut next = Vec::with_capacity(frontier.len() * branch);
            for node in frontier {
                let prefix = set.prefix(node);
                let dist = set.conditional_for(small, &prefix)?;
                for _ in 0..branch {
                    let tok = *next_token
                        .next()
                        .ok_or_else(|| Error::Structure("too few tokens for the tree shape".into()))?;
                    dist.check_token(tok)?;
                    next.push(set.push_child(node, tok));
                }
            }
            frontier = next;
        }
        if next_token.next().is_some() {
            return Err(Error::Structure("too many tokens for the tree shape".into()));
        }
        Ok(set)
    }

    /// Checks the structural invariants of the set.
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.leaves.is_empty() {
            return Err(Error::Structure("draft set is empty".into()));
        }
        for node in &self.nodes {
            let leaf = node.depth == self.length;
            if leaf != node.children.is_empty() {
                return Err(Error::Structure(format!(
                    "drafts of mixed length: node at depth {} has {} children with L = {}",
                    node.depth,
                    node.children.len(),
                    self.length
                )));
            }
        }
        let expected = match &self.construction {
            DraftConstruction::Iid { k } => *k,
            DraftConstruction::Tree { factors } => factors.iter().product(),
        };
        if expected != self.leaves.len() {
            return Err(Error::Structure(format!(
                "expected {expected} sequences, found {}",
                self.leaves.len()
            )));
        }
        Ok(())
    }
}

fn check_factors(factors: &[usize]) -> Result<usize> {
    if factors.is_empty() || factors.contains(&0) {
        return Err(Error::Domain(format!("expansion factors must be nonempty and >= 1, got {factors:?}")));
    }
    factors
        .iter()
        .try_fold(1usize, |acc, f| acc.checked_mul(*f))
        .filter(|n| *n <= MAX_DRAFT_SEQUENCES)
        .ok_or(Error::SizeLimit {
            what: "draft sequences",
            size: usize::MAX,
            cap: MAX_DRAFT_SEQUENCES,
        })
}

/// `k` independent rollouts of length `len`; rollout `i` draws from `rng.substream(i)`.
pub fn sample_iid_drafts(
    small: &ToyLm,
    context: &[TokenId],
    k: usize,
    len: usize,
    rng: &RngStream,
) -> Result<DraftSet> {
    if k == 0 || len == 0 {
        return Err(Error::Domain(format!("need K >= 1 and L >= 1, got K = {k}, L = {len}")));
    }
    if k > MAX_DRAFT_SEQUENCES {
        return Err(Error::SizeLimit {
            what: "draft sequences",
            size: k,
            cap: MAX_DRAFT_SEQUENCES,
        });
    }
    let mut set = DraftSet::empty(context, len, DraftConstruction::Iid { k });
    for i in 0..k {
        let mut stream = rng.substream(i as u64);
        let mut node = set.root();
        let mut prefix = Vec::with_capacity(len);
        for _ in 0..len {
            let dist = set.conditional_for(small, &prefix)?;
            let tok = prob::sample(&dist, &mut stream);
            prefix.push(tok);
            node = set.push_child(node, tok);
        }
    }
    Ok(set)
}

/// Prefix-tree drafts: every depth-`i` node spawns `factors[i]` children whose
/// tokens are i.i.d. from the small model given the node's sequence. The node
/// reached by child indices `(c1, c2, ...)` draws from
/// `rng.substream(c1).substream(c2)...`, independent of traversal order.
pub fn build_prefix_tree_drafts(
    small: &ToyLm,
    context: &[TokenId],
    factors: &[usize],
    rng: &RngStream,
) -> Result<DraftSet> {
    check_factors(factors)?;
    let mut set = DraftSet::empty(
        context,
        factors.len(),
        DraftConstruction::Tree {
            factors: factors.to_vec(),
        },
    );
    let mut frontier: Vec<(NodeId, RngStream)> = vec![(set.root(), rng.clone())];
    for &branch in factors {
        let mut next = Vec::with_capacity(frontier.len() * branch);
        for (node, stream) in frontier {
            let prefix = set.prefix(node);
            let dist = set.conditional_for(small, &prefix)?;
            for c in 0..branch {
                let child_stream = stream.substream(c as u64);
                let tok = prob::sample(&dist, &mut child_stream.clone());
                let child = set.push_child(node, tok);
                next.push((child, child_stream));
            }
        }
        frontier = next;
    }
    Ok(set)
}
