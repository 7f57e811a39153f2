"""Seeded case generators and checks shared by property tests and acceptance.

Every ``check_*`` takes an integer seed, builds a small random KG, model and
task, and returns normally or raises AssertionError.
"""

from __future__ import annotations

import numpy as np

from kgadapt.adaptation import run_query_adaptation, run_support_adaptation
from kgadapt.autodiff import no_grad
from kgadapt.kg import FewShotTask
from kgadapt.model import ModelConfig, ModelParams, Scorer
from kgadapt.subgraph import Extractor, GraphBatch
from kgadapt.trainer import metrics_from_ranks
from kgadapt.weights import edge_weights, relation_features

import reference as ref
from conftest import random_kg, random_table


def random_case(seed, max_nodes=20, max_edges=40, **overrides):
    """(scorer, task) on a random KG with at most ``max_nodes``/``max_edges``."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, max_nodes + 1))
    m = int(rng.integers(1, max_edges + 1))
    kg = random_kg(rng, n, m, int(rng.integers(1, 4)))
    # dim 1 lets opposite unit tails cancel into a zero-norm score operand
    dim = int(rng.integers(2, 5))
    cfg = dict(
        pretrained_dim=dim,
        hidden_dim=int(rng.integers(1, 5)),
        iterations=int(rng.integers(1, 4)),
        lam=float(rng.choice([0.0, 0.25, 0.5, 1.0, rng.uniform()])),
        mlp_layers=int(rng.integers(1, 3)),
        normalize_weight_head=bool(rng.integers(2)),
    )
    cfg.update(overrides)
    params = ModelParams(ModelConfig(**cfg), rng)
    for p in params.parameters():
        p.data[...] = rng.normal(scale=0.7, size=p.shape)
    if params.norm_mean is not None:
        params.norm_mean = rng.normal(size=params.norm_mean.shape)
        params.norm_var = rng.uniform(0.5, 2.0, size=params.norm_var.shape)
    table = random_table(kg, dim, rng)
    scorer = Scorer(kg, table, params, Extractor(kg, int(rng.integers(1, 3))))
    k = int(rng.integers(1, 5))
    pairs = [tuple(int(x) for x in rng.choice(n, size=2, replace=False)) for _ in range(k)]
    cands = tuple(int(c) for c in rng.choice(n, size=int(rng.integers(1, min(n, 6) + 1)), replace=False))
    label = str(rng.choice(kg.relations + ["unseen"]))
    task = FewShotTask(label, tuple(pairs), int(rng.integers(n)), cands, cands[0])
    return scorer, task


def oracle_max_error(seed) -> float:
    """Largest absolute gap between the library and the dense reference."""
    scorer, task = random_case(seed)
    p, cfg = scorer.params, scorer.cfg
    L = cfg.iterations
    with no_grad():
        ctx = scorer.support_context(task.relation, task.support)
        queries = [(task.query_head, c) for c in task.candidates]
        scores = scorer.score_queries(ctx, queries).data
        qgraphs = [scorer.extractor(h, c, scorer._mask(h, c, ctx.relation_id)) for h, c in queries]
        qb = GraphBatch.of(qgraphs)
        sw = edge_weights(ctx.batch, ctx.g_all, scorer.rel_table, p, L).data[:, 0]
        qw = edge_weights(qb, ctx.g_all, scorer.rel_table, p, L)
        init = p.proj3(relation_features(qb, scorer.rel_table))
        e_q = run_query_adaptation(qb, init, qw, p.f3, L, None, 0.0).data
        e_s = run_query_adaptation(qb, init, qw, p.f3, L, ctx.history, cfg.lam).data
    want = ref.forward(
        ctx.batch.graphs, qgraphs, scorer.table.relation, scorer.table.entity, ctx.support, queries, p,
        cfg.lam, L,
    )
    gaps = [
        np.abs(ctx.g_all.data - want["g_all"]).max(),
        np.abs(np.array(scores) - np.array(want["scores"])).max(),
        np.abs(e_q - np.array(want["e_q"])).max(),
        np.abs(e_s - np.array(want["e_s"])).max(),
    ]
    if len(sw):
        gaps.append(np.abs(sw - np.concatenate(want["support_weights"])).max())
    if qb.num_edges:
        gaps.append(np.abs(qw.data[:, 0] - np.concatenate(want["query_weights"])).max())
    gaps += [np.abs(h.data - w).max() for h, w in zip(ctx.history, want["history"])]
    return float(max(gaps))


def check_weights_open_interval(seed):
    scorer, task = random_case(seed)
    with no_grad():
        ctx = scorer.support_context(task.relation, task.support)
        qb = GraphBatch.of([scorer.extractor(task.query_head, c) for c in task.candidates])
        for b in (ctx.batch, qb):
            w = edge_weights(b, ctx.g_all, scorer.rel_table, scorer.params, scorer.cfg.iterations).data
            assert np.all((w > 0.0) & (w < 1.0)), w


def check_sa_tail_equality(seed):
    scorer, task = random_case(seed)
    p, L = scorer.params, scorer.cfg.iterations
    with no_grad():
        ctx = scorer.support_context(task.relation, task.support)
        w = edge_weights(ctx.batch, ctx.g_all, scorer.rel_table, p, L)
        init = p.proj3(relation_features(ctx.batch, scorer.rel_table))
        trace = []
        run_support_adaptation(ctx.batch, init, w, p.f3, L, trace=trace)
    assert len(trace) == L + 1
    for node, _ in trace:
        tails = node.data[ctx.batch.tails]
        for t in tails[1:]:
            assert t.tobytes() == tails[0].tobytes()


def check_support_permutation(seed):
    scorer, task = random_case(seed)
    rng = np.random.default_rng(seed + 1)
    perm = rng.permutation(task.shots)
    shuffled = FewShotTask(task.relation, tuple(task.support[i] for i in perm), task.query_head,
                           task.candidates, task.true_tail)
    a, b = scorer.score_task(task), scorer.score_task(shuffled)
    assert a.tobytes() == b.tobytes()


class _RelabelingExtractor:
    """Returns each extracted graph with its local node order shuffled."""

    def __init__(self, inner, seed):
        self.inner, self.rng = inner, np.random.default_rng(seed)

    def __call__(self, h, t, mask=()):
        g = self.inner(h, t, mask)
        return g.permuted(self.rng.permutation(g.num_nodes))


def check_node_relabel(seed):
    scorer, task = random_case(seed)
    base = scorer.score_task(task)
    relabeled = Scorer(scorer.kg, scorer.table, scorer.params, _RelabelingExtractor(scorer.extractor, seed))
    np.testing.assert_allclose(relabeled.score_task(task), base, rtol=0, atol=1e-12)


def check_lambda_zero_equal_passes(seed):
    scorer, task = random_case(seed, lam=0.0)
    p, L = scorer.params, scorer.cfg.iterations
    with no_grad():
        ctx = scorer.support_context(task.relation, task.support)
        qb = GraphBatch.of([scorer.extractor(task.query_head, c) for c in task.candidates])
        w = edge_weights(qb, ctx.g_all, scorer.rel_table, p, L)
        init = p.proj3(relation_features(qb, scorer.rel_table))
        e_s = run_query_adaptation(qb, init, w, p.f3, L, ctx.history, 0.0)
        e_q = run_query_adaptation(qb, init, w, p.f3, L, None, 0.0)
    assert e_s.data.tobytes() == e_q.data.tobytes()


def check_hits_monotone(seed):
    rng = np.random.default_rng(seed)
    ranks = rng.integers(1, int(rng.integers(2, 60)), size=int(rng.integers(1, 50)))
    m = metrics_from_ranks(ranks.tolist())
    assert 0.0 <= m.hits1 <= m.hits5 <= m.hits10 <= 1.0
    assert m.hits1 <= m.mrr <= 1.0


INVARIANTS = {
    "edge weights in (0,1)": check_weights_open_interval,
    "SA tail equality": check_sa_tail_equality,
    "support-permutation bitwise invariance": check_support_permutation,
    "node-relabel invariance": check_node_relabel,
    "lambda=0 gives E_s = E_q": check_lambda_zero_equal_passes,
    "Hits monotonicity": check_hits_monotone,
}
