"""Edge-weight assignment: two passes of edge-centric message passing.

Pass 1 runs on each support graph from the pretrained relation vectors and
pools a graph summary; the support summaries are averaged. Pass 2 reruns the
process on every support and query graph with that average appended to the
initial edge features, and a sigmoid head turns final edge embeddings into
weights in (0, 1).
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Sequence

import numpy as np

from .autodiff import (
    Tensor,
    concat,
    div,
    gather,
    mean_stack,
    segment_max,
    segment_sum,
    sigmoid,
    sub,
    tile_rows,
)
from .nn import Mlp
from .subgraph import ContextGraph, GraphBatch, as_batch

if TYPE_CHECKING:
    from .model import ModelParams


def pw_node_aggregate(graph: ContextGraph | GraphBatch, edge_embs: Tensor) -> Tensor:
    """Node embedding = sum of incident edge embeddings / (1 + degree)."""
    b = as_batch(graph)
    summed = segment_sum(gather(edge_embs, b.inc_edge), b.inc_node, b.num_nodes)
    return div(summed, Tensor((1.0 + b.degree)[:, None]))


def node_features(b: GraphBatch, node_embs: Tensor) -> Tensor:
    """Append the is-head and is-tail indicator columns."""
    flags = Tensor(np.stack([b.head_flag, b.tail_flag], axis=1))
    return concat([node_embs, flags], axis=1)


def pw_edge_update(graph: ContextGraph | GraphBatch, node_embs: Tensor, edge_embs: Tensor, f: Mlp) -> Tensor:
    """b_e <- f(r_src || r_dst || b_e) with r the flagged node features."""
    b = as_batch(graph)
    r = node_features(b, node_embs)
    return f(concat([gather(r, b.src), gather(r, b.dst), edge_embs], axis=1))


def run_pw(
    graph: ContextGraph | GraphBatch,
    init_edge: Tensor,
    f: Mlp,
    iterations: int,
    trace: list | None = None,
) -> tuple[Tensor, Tensor]:
    """Run the aggregation process; returns final (edge, node) embeddings.

    ``trace`` (if given) receives ``(node_embs, edge_embs)`` for every
    iteration 0..L, where iteration ``i`` pairs b_v^i with b_e^i.
    """
    b = as_batch(graph)
    edge = init_edge
    for _ in range(iterations):
        node = pw_node_aggregate(b, edge)
        if trace is not None:
            trace.append((node, edge))
        edge = pw_edge_update(b, node, edge, f)
    node = pw_node_aggregate(b, edge)
    if trace is not None:
        trace.append((node, edge))
    return edge, node


def graph_embedding(graph: ContextGraph | GraphBatch, node_embs: Tensor) -> Tensor:
    """Per graph: column-wise max over its nodes || head emb || tail emb."""
    b = as_batch(graph)
    pooled = segment_max(node_embs, b.node_graph, b.num_graphs)
    return concat([pooled, gather(node_embs, b.heads), gather(node_embs, b.tails)], axis=1)


def relation_features(b: GraphBatch, rel_table: Tensor) -> Tensor:
    return gather(rel_table, b.rel)


def support_summary(
    supports: GraphBatch, rel_table: Tensor, params: "ModelParams", iterations: int
) -> Tensor:
    """Average of the pass-1 graph embeddings of the support graphs."""
    init = params.proj1(relation_features(supports, rel_table))
    _, node = run_pw(supports, init, params.f1, iterations)
    g = graph_embedding(supports, node)
    return mean_stack([gather(g, k) for k in range(supports.num_graphs)])


def edge_weights(
    graph: ContextGraph | GraphBatch,
    g_all: Tensor,
    rel_table: Tensor,
    params: "ModelParams",
    iterations: int,
) -> Tensor:
    """Pass-2 weights, shape (edges, 1); depends on the supports only via ``g_all``."""
    b = as_batch(graph)
    raw = concat([relation_features(b, rel_table), tile_rows(g_all, b.num_edges)], axis=1)
    edge, _ = run_pw(b, params.proj2(raw), params.f2, iterations)
    if params.norm_mean is not None:
        edge = params.observe_head_input(edge)
        edge = div(sub(edge, Tensor(params.norm_mean)), Tensor(np.sqrt(params.norm_var + 1e-5)))
    return sigmoid(params.head(edge))


def assign_edge_weights(
    supports: Sequence[ContextGraph] | GraphBatch,
    query: ContextGraph | Sequence[ContextGraph] | GraphBatch,
    rel_table: Tensor,
    params: "ModelParams",
    iterations: int,
    write: bool = True,
) -> tuple[Tensor, Tensor, Tensor]:
    """Weights for support and query edges plus the support summary g_all.

    With ``write`` the numeric weights are also stored on each ContextGraph.
    """
    sb, qb = as_batch(supports), as_batch(query)
    g_all = support_summary(sb, rel_table, params, iterations)
    sw = edge_weights(sb, g_all, rel_table, params, iterations)
    qw = edge_weights(qb, g_all, rel_table, params, iterations)
    if write:
        for b, w in ((sb, sw), (qb, qw)):
            flat = w.data[:, 0]
            for k, g in enumerate(b.graphs):
                g.weights = flat[b.edge_graph == k].copy()
    return sw, qw, g_all
