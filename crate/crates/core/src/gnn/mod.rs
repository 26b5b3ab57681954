//! Opinion sub-graphs: construction, GATv2 message passing, readout and
//! per-sentence aggregation.

mod gat;
mod graph;

pub use gat::{
    gat_forward, gat_layer, pair_edge_attrs, param_prefix, with_roles, GatConfig, GatOutput, EDGE_DIM, ROLE_EMBED,
};
pub use graph::{build_skeleton, node_features, GraphNode, GraphSkeleton, OpinionGraph, Role, Topology};

use crate::autodiff::{concat_rows, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sum of node vectors as a `1 x w` row.
pub fn readout(nodes: Var<'_>) -> Result<Var<'_>> {
    if nodes.rows() == 0 {
        return Err(Error::GraphEmpty);
    }
    nodes.sum_rows()
}

pub struct SentenceVector<'t> {
    pub vector: Var<'t>,
    /// False when no graph maps to this sentence and `vector` is zero.
    pub has_opinions: bool,
}

/// Mean readout per sentence; `mapping[g]` is the sentence of graph `g`.
pub fn aggregate_sentences<'t>(
    tape: &'t Tape,
    readouts: &[Var<'t>],
    mapping: &[usize],
    sentences: usize,
    width: usize,
) -> Result<Vec<SentenceVector<'t>>> {
    if mapping.len() != readouts.len() {
        return Err(Error::dim("aggregate_sentences", &[readouts.len()], &[mapping.len()]));
    }
    let mut groups: Vec<Vec<Var<'t>>> = vec![Vec::new(); sentences];
    for (r, &s) in readouts.iter().zip(mapping) {
        groups
            .get_mut(s)
            .ok_or_else(|| Error::InvalidArgument {
                op: "aggregate_sentences",
                msg: format!("graph mapped to sentence {s} of {sentences}"),
            })?
            .push(*r);
    }
    groups
        .into_iter()
        .map(|g| {
            if g.is_empty() {
                return Ok(SentenceVector {
                    vector: tape.constant(Tensor::zeros(&[1, width])),
                    has_opinions: false,
                });
            }
            Ok(SentenceVector {
                vector: concat_rows(&g)?.mean_rows()?,
                has_opinions: true,
            })
        })
        .collect()
}

/// Single-sentence form of [`aggregate_sentences`].
pub fn aggregate_sentence<'t>(tape: &'t Tape, readouts: &[Var<'t>], width: usize) -> Result<SentenceVector<'t>> {
    let mapping = vec![0; readouts.len()];
    Ok(aggregate_sentences(tape, readouts, &mapping, 1, width)?
        .pop()
        .expect("one sentence"))
}
