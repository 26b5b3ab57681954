//! Per-opinion sub-graph construction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_rows, Var};
use crate::dataset::{OpinionAnnotation, Polarity, Span};
use crate::encoder::{overlapping_tokens, ByteSpan};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Holder,
    Sentiment,
    Target,
    Qualifier,
    Aspect,
}

impl Role {
    /// Node order inside a graph.
    pub const ALL: [Role; 5] = [Role::Holder, Role::Sentiment, Role::Target, Role::Qualifier, Role::Aspect];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Holder => "holder",
            Role::Sentiment => "sentiment",
            Role::Target => "target",
            Role::Qualifier => "qualifier",
            Role::Aspect => "aspect",
        }
    }

    fn span(self, op: &OpinionAnnotation) -> Option<Span> {
        match self {
            Role::Holder => op.holder,
            Role::Sentiment => op.sentiment_expression,
            Role::Target => op.target,
            Role::Qualifier => op.qualifier,
            Role::Aspect => op.aspect_term,
        }
    }
}

/// Which node each role attaches to: the first present role in its list.
/// Every attachment produces a pair of opposite directed edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Topology {
    pub attach: BTreeMap<Role, Vec<Role>>,
}

impl Default for Topology {
    fn default() -> Self {
        let mut attach = BTreeMap::new();
        attach.insert(Role::Holder, vec![Role::Sentiment]);
        attach.insert(Role::Target, vec![Role::Sentiment]);
        attach.insert(Role::Qualifier, vec![Role::Sentiment]);
        attach.insert(Role::Aspect, vec![Role::Target, Role::Sentiment]);
        Self { attach }
    }
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        for (role, targets) in &self.attach {
            if targets.contains(role) {
                return Err(Error::config(
                    format!("gat.topology.{}", role.as_str()),
                    "a role cannot attach to itself",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphNode {
    pub role: Role,
    /// Character span; `None` for a sentiment node standing in for a missing span.
    pub span: Option<Span>,
    pub tokens: Vec<usize>,
    /// Feature comes from the pooled sequence vector.
    pub fallback: bool,
}

/// Graph structure without features.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphSkeleton {
    pub nodes: Vec<GraphNode>,
    /// `(src, dst)`: `dst` aggregates from `src`.
    pub edges: Vec<(usize, usize)>,
    pub polarity: Polarity,
    /// Roles whose span covered no token.
    pub dropped: Vec<Role>,
}

impl GraphSkeleton {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn position(&self, role: Role) -> Option<usize> {
        self.nodes.iter().position(|n| n.role == role)
    }

    pub fn edge_attr(&self) -> [f64; 3] {
        self.polarity.one_hot()
    }

    /// Neighbourhood mask `[n x n]`: entry `(i, j)` admits `j` into the softmax of `i`.
    pub fn attention_mask(&self) -> Vec<bool> {
        let n = self.len();
        let mut mask = vec![false; n * n];
        for i in 0..n {
            mask[i * n + i] = true;
        }
        for &(src, dst) in &self.edges {
            mask[dst * n + src] = true;
        }
        mask
    }

    pub fn is_edge(&self, src: usize, dst: usize) -> bool {
        self.edges.contains(&(src, dst))
    }
}

/// Resolves the spans of one opinion against token offsets and wires the
/// configured topology.
pub fn build_skeleton(
    text: &str,
    opinion: &OpinionAnnotation,
    offsets: &[ByteSpan],
    topology: &Topology,
) -> Result<GraphSkeleton> {
    let mut nodes = Vec::new();
    let mut dropped = Vec::new();
    for role in Role::ALL {
        let Some(span) = role.span(opinion) else {
            if role == Role::Sentiment {
                nodes.push(GraphNode {
                    role,
                    span: None,
                    tokens: vec![],
                    fallback: true,
                });
            }
            continue;
        };
        let bytes = span.byte_range(text);
        let tokens = overlapping_tokens(offsets, bytes.start, bytes.end);
        if tokens.is_empty() {
            log::warn!(
                "{} span {}..{} overlaps no token; node dropped",
                role.as_str(),
                span.start,
                span.end
            );
            dropped.push(role);
            if role == Role::Sentiment {
                nodes.push(GraphNode {
                    role,
                    span: Some(span),
                    tokens,
                    fallback: true,
                });
            }
            continue;
        }
        nodes.push(GraphNode {
            role,
            span: Some(span),
            tokens,
            fallback: false,
        });
    }
    if dropped.len() == opinion.spans().count() {
        return Err(Error::GraphEmpty);
    }
    if nodes.iter().any(|n| n.fallback) {
        log::debug!("sentiment node falls back to the pooled sequence vector");
    }

    let mut edges = Vec::new();
    for (i, node) in nodes.iter().enumerate() {
        let Some(targets) = topology.attach.get(&node.role) else { continue };
        let hub = targets
            .iter()
            .find_map(|r| nodes.iter().position(|n| n.role == *r));
        if let Some(j) = hub {
            edges.push((i, j));
            edges.push((j, i));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    Ok(GraphSkeleton {
        nodes,
        edges,
        polarity: opinion.polarity,
        dropped,
    })
}

/// Node features `[|V| x d]`: span means of `hidden`, or `pooled` for fallback nodes.
pub fn node_features<'t>(skeleton: &GraphSkeleton, hidden: Var<'t>, pooled: Var<'t>) -> Result<Var<'t>> {
    let rows = skeleton
        .nodes
        .iter()
        .map(|n| {
            if n.fallback {
                Ok(pooled)
            } else {
                hidden.gather_rows(&n.tokens)?.mean_rows()
            }
        })
        .collect::<Result<Vec<_>>>()?;
    concat_rows(&rows)
}

/// A skeleton with its node features on a tape.
#[derive(Clone, Debug)]
pub struct OpinionGraph<'t> {
    pub skeleton: GraphSkeleton,
    pub features: Var<'t>,
}
