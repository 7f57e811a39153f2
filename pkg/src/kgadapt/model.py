"""Model parameters and the end-to-end scoring pipeline for one task."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .adaptation import run_query_adaptation, run_support_adaptation, score_candidates
from .autodiff import Tensor, concat, mean_stack, no_grad
from .kg import FewShotTask, KnowledgeGraph
from .nn import Mlp
from .pretrain import EmbeddingTable
from .subgraph import Extractor, GraphBatch
from .weights import edge_weights, relation_features, support_summary


@dataclass
class ModelConfig:
    pretrained_dim: int = 100
    hidden_dim: int = 128
    iterations: int = 4
    lam: float = 0.5
    mlp_layers: int = 2
    concat_head_tail_diff: bool = False
    normalize_weight_head: bool = False
    # ablation switches
    use_weights: bool = True
    use_support_adaptation: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.mlp_layers < 1:
            raise ValueError("mlp_layers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)


class ModelParams:
    """The three message-passing networks, their input projections, and
    the edge-weight head.

    ``proj*`` lift the initial edge features (pretrained relation vector, or
    relation vector || support summary) to the hidden width so that every
    iteration of ``f*`` sees the same input shape.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        d, h = cfg.pretrained_dim, cfg.hidden_dim
        f_in = 2 * (h + 2) + h
        f_dims = [f_in] + [h] * cfg.mlp_layers
        self.proj1 = Mlp.init(rng, [d, h], "pw1.proj")
        self.f1 = Mlp.init(rng, f_dims, "pw1.f")
        self.proj2 = Mlp.init(rng, [d + 3 * h, h], "pw2.proj")
        self.f2 = Mlp.init(rng, f_dims, "pw2.f")
        self.head = Mlp.init(rng, [h, 1], "weight_head")
        self.proj3 = Mlp.init(rng, [d, h], "pa.proj")
        self.f3 = Mlp.init(rng, f_dims, "pa.f")
        self.norm_mean = np.zeros(h) if cfg.normalize_weight_head else None
        self.norm_var = np.ones(h) if cfg.normalize_weight_head else None
        self.norm_momentum = 0.1
        self.training = False

    def modules(self) -> list[Mlp]:
        return [self.proj1, self.f1, self.proj2, self.f2, self.head, self.proj3, self.f3]

    def parameters(self) -> list[Tensor]:
        return [p for m in self.modules() for p in m.parameters()]

    def state(self) -> dict[str, np.ndarray]:
        out = {p.name: p.data.copy() for p in self.parameters()}
        if self.norm_mean is not None:
            out["weight_head.norm.mean"] = self.norm_mean.copy()
            out["weight_head.norm.var"] = self.norm_var.copy()
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in state:
                raise KeyError(f"checkpoint lacks parameter {p.name!r}")
            if state[p.name].shape != p.shape:
                raise ValueError(f"{p.name}: shape {state[p.name].shape} != {p.shape}")
            p.data[...] = state[p.name]
        if self.norm_mean is not None:
            self.norm_mean = state["weight_head.norm.mean"].copy()
            self.norm_var = state["weight_head.norm.var"].copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def observe_head_input(self, edge: Tensor) -> Tensor:
        """Update running feature statistics while training; identity map."""
        if self.training and edge.shape[0] > 1:
            mu = edge.data.mean(axis=0)
            var = edge.data.var(axis=0)
            m = self.norm_momentum
            self.norm_mean = (1 - m) * self.norm_mean + m * mu
            self.norm_var = (1 - m) * self.norm_var + m * var
        return edge


@dataclass
class SupportContext:
    """Everything a task's support set contributes to candidate scoring."""

    relation: str
    relation_id: int | None
    support: tuple[tuple[int, int], ...]
    batch: GraphBatch
    g_all: Tensor
    history: list[Tensor]
    support_side: Tensor


class Scorer:
    """Scores (head, candidate) queries against a support set.

    Pretrained tables are constants; only ``params`` receive gradients.
    """

    def __init__(
        self,
        kg: KnowledgeGraph,
        table: EmbeddingTable,
        params: ModelParams,
        extractor: Extractor,
    ):
        self.kg = kg
        self.table = table.aligned(kg)
        if self.table.dim != params.cfg.pretrained_dim:
            raise ValueError(f"table dim {self.table.dim} != model pretrained_dim {params.cfg.pretrained_dim}")
        self.params = params
        self.cfg = params.cfg
        self.extractor = extractor
        self.rel_table = Tensor(self.table.relation)

    def _mask(self, h: int, t: int, relation_id: int | None) -> tuple:
        if relation_id is not None and self.kg.contains(h, relation_id, t):
            return ((h, relation_id, t),)
        return ()

    def _weights(self, batch: GraphBatch, g_all: Tensor) -> Tensor:
        if not self.cfg.use_weights:
            return Tensor(np.ones((batch.num_edges, 1)))
        return edge_weights(batch, g_all, self.rel_table, self.params, self.cfg.iterations)

    def support_context(self, relation: str, support: Sequence[tuple[int, int]]) -> SupportContext:
        cfg = self.cfg
        rid = self.kg.relation_index.get(relation)
        # canonical order makes every K-dependence permutation-free
        pairs = tuple(sorted((int(h), int(t)) for h, t in support))
        graphs = [self.extractor(h, t, self._mask(h, t, rid)) for h, t in pairs]
        batch = GraphBatch.of(graphs)
        g_all = support_summary(batch, self.rel_table, self.params, cfg.iterations)
        w = self._weights(batch, g_all)
        init = self.params.proj3(relation_features(batch, self.rel_table))
        history = run_support_adaptation(
            batch, init, w, self.params.f3, cfg.iterations, share_tails=cfg.use_support_adaptation
        )
        ent = self.table.entity
        side = mean_stack([Tensor(ent[t]) for _, t in pairs])
        if cfg.concat_head_tail_diff:
            side = concat([side, mean_stack([Tensor(ent[h] - ent[t]) for h, t in pairs])])
        return SupportContext(relation, rid, pairs, batch, g_all, history, side)

    def score_queries(
        self,
        ctx: SupportContext,
        queries: Sequence[tuple[int, int]],
        masks: Sequence[tuple] | None = None,
    ) -> Tensor:
        """Scores for (head, candidate) pairs, one batched pass each for E_s and E_q.

        ``masks`` overrides the per-query masked triplets (default: the
        query triplet itself under the task relation, if it is in the KG).
        """
        cfg = self.cfg
        if masks is None:
            masks = [self._mask(h, c, ctx.relation_id) for h, c in queries]
        graphs = [self.extractor(h, c, m) for (h, c), m in zip(queries, masks)]
        batch = GraphBatch.of(graphs)
        w = self._weights(batch, ctx.g_all)
        init = self.params.proj3(relation_features(batch, self.rel_table))
        f3, L = self.params.f3, cfg.iterations
        e_q = run_query_adaptation(batch, init, w, f3, L, None, 0.0)
        e_s = e_q if cfg.lam == 0.0 else run_query_adaptation(batch, init, w, f3, L, ctx.history, cfg.lam)
        ent = self.table.entity
        heads = np.array([h for h, _ in queries], dtype=np.int64)
        cands = np.array([c for _, c in queries], dtype=np.int64)
        side = ent[cands]
        if cfg.concat_head_tail_diff:
            side = np.concatenate([side, ent[heads] - ent[cands]], axis=1)
        return score_candidates(e_s, e_q, ctx.support_side, Tensor(side))

    def score_task(self, task: FewShotTask) -> np.ndarray:
        """Forward-only scores for every candidate of ``task``."""
        with no_grad():
            ctx = self.support_context(task.relation, task.support)
            return self.score_queries(ctx, [(task.query_head, c) for c in task.candidates]).data.copy()


def score_query(scorer: Scorer, task: FewShotTask, candidate: int) -> float:
    with no_grad():
        ctx = scorer.support_context(task.relation, task.support)
        return float(scorer.score_queries(ctx, [(task.query_head, candidate)]).data[0])
