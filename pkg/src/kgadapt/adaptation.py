"""Weighted aggregation with support and query adaptation, and candidate scoring.

Support graphs are processed in lockstep: after every aggregation the tail
node embeddings are replaced by their mean over the K graphs, and that shared
value is recorded. A query graph is processed the same way, except its tail
embedding is mixed with the recorded support value at ratio ``lam``. The
candidate score compares a mixed (``lam > 0``) and a pure (``lam = 0``) pass
over the same query graph by cosine similarity.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    concat,
    cosine_rows,
    div,
    gather,
    mean_stack,
    mul,
    replace_rows,
    scale,
    segment_sum,
    tile_rows,
)
from .nn import Mlp
from .subgraph import ContextGraph, GraphBatch, as_batch
from .weights import pw_edge_update


class AdaptationStateError(RuntimeError):
    pass


def pa_node_aggregate(graph: ContextGraph | GraphBatch, edge_embs: Tensor, weights: Tensor) -> Tensor:
    """a_v = sum(w_e * b_e) / (1 + sum(w_e)) over edges incident to v.

    ``weights`` has shape (edges, 1).
    """
    b = as_batch(graph)
    if weights is None:
        raise AdaptationStateError("edge weights are not assigned")
    if weights.shape != (b.num_edges, 1):
        raise ShapeError("pa_node_aggregate", f"weights {weights.shape} for {b.num_edges} edges")
    w = gather(weights, b.inc_edge)
    num = segment_sum(mul(gather(edge_embs, b.inc_edge), w), b.inc_node, b.num_nodes)
    den = add(segment_sum(w, b.inc_node, b.num_nodes), Tensor(1.0))
    return div(num, den)


def t_sa(tail_aggs: Sequence[Tensor]) -> Tensor:
    """Shared support tail: the (order-independent) mean of the K tails."""
    if not tail_aggs:
        raise ShapeError("t_sa", "no support tails to average")
    return mean_stack(tail_aggs)


def t_qa(a_t: Tensor, shared: Tensor, lam: float) -> Tensor:
    """(1 - lam) * a_t + lam * shared; rows of ``a_t`` share one ``shared``."""
    if a_t.shape[-1] != shared.shape[-1]:
        raise ShapeError("t_qa", f"length mismatch {a_t.shape} vs {shared.shape}")
    if a_t.data.ndim == 2 and shared.data.ndim == 1:
        shared = tile_rows(shared, a_t.shape[0])
    return add(scale(a_t, 1.0 - lam), scale(shared, lam))


def run_support_adaptation(
    supports: Sequence[ContextGraph] | GraphBatch,
    init_edge: Tensor,
    weights: Tensor,
    f: Mlp,
    iterations: int,
    share_tails: bool = True,
    trace: list | None = None,
) -> list[Tensor]:
    """Lockstep aggregation over the K support graphs.

    Returns the shared tail value after each of the ``iterations + 1``
    aggregations. With ``share_tails=False`` each graph keeps its own tail
    and the recorded value is only the mean of the per-graph tails.
    """
    b = as_batch(supports)
    k = b.num_graphs
    if k == 0:
        raise ShapeError("run_support_adaptation", "no support graphs")
    history: list[Tensor] = []
    edge = init_edge
    for i in range(iterations + 1):
        agg = pa_node_aggregate(b, edge, weights)
        tails = gather(agg, b.tails)
        shared = t_sa([gather(tails, j) for j in range(k)])
        history.append(shared)
        node = replace_rows(agg, b.tails, tile_rows(shared, k)) if share_tails else agg
        if trace is not None:
            trace.append((node, edge))
        if i < iterations:
            edge = pw_edge_update(b, node, edge, f)
    return history


def run_query_adaptation(
    query: ContextGraph | Sequence[ContextGraph] | GraphBatch,
    init_edge: Tensor,
    weights: Tensor,
    f: Mlp,
    iterations: int,
    history: Sequence[Tensor] | None,
    lam: float,
    trace: list | None = None,
) -> Tensor:
    """Aggregate over query graph(s), mixing support tails at ratio ``lam``.

    Returns the final tail embedding of every graph in the batch, shape
    (graphs, hidden). With ``lam == 0`` the history is never read.
    """
    b = as_batch(query)
    if lam != 0.0:
        if history is None or len(history) != iterations + 1:
            got = None if history is None else len(history)
            raise AdaptationStateError(f"need {iterations + 1} support tail values, got {got}")
    edge = init_edge
    node = None
    for i in range(iterations + 1):
        agg = pa_node_aggregate(b, edge, weights)
        if lam != 0.0:
            node = replace_rows(agg, b.tails, t_qa(gather(agg, b.tails), history[i], lam))
        else:
            node = agg
        if trace is not None:
            trace.append((node, edge))
        if i < iterations:
            edge = pw_edge_update(b, node, edge, f)
    return gather(node, b.tails)


def score_candidates(
    e_s: Tensor,
    e_q: Tensor,
    support_side: Tensor,
    query_side: Tensor,
) -> Tensor:
    """cos(E_s || support features, E_q || query features), one per row.

    ``support_side`` is a vector shared by every row (the mean pretrained
    support tail, optionally followed by extra features); ``query_side``
    holds one row per candidate.
    """
    if e_s.shape != e_q.shape:
        raise ShapeError("score_candidates", f"E_s {e_s.shape} vs E_q {e_q.shape}")
    n = e_s.shape[0]
    left = concat([e_s, tile_rows(support_side, n)], axis=1)
    right = concat([e_q, query_side], axis=1)
    return cosine_rows(left, right)


def score_candidate(
    e_s: Tensor,
    e_q: Tensor,
    support_tails: Sequence[np.ndarray],
    v_tq: np.ndarray,
    support_diffs: Sequence[np.ndarray] | None = None,
    query_diff: np.ndarray | None = None,
) -> float:
    """Single-candidate convenience wrapper around :func:`score_candidates`."""
    side = mean_stack([Tensor(v) for v in support_tails])
    q = np.asarray(v_tq, dtype=np.float64)
    if support_diffs is not None:
        side = concat([side, mean_stack([Tensor(v) for v in support_diffs])])
        q = np.concatenate([q, query_diff])
    rows = [e if e.data.ndim == 2 else Tensor(e.data[None]) for e in (e_s, e_q)]
    return score_candidates(rows[0], rows[1], side, Tensor(q[None])).data[0].item()
