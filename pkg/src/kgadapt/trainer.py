"""Contrastive task sampling, margin-ranking training, and ranking metrics."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import NumericError, Tensor, add, gather, hinge, no_grad, sub
from .kg import FewShotTask, KnowledgeGraph, SamplingError
from .model import Scorer
from .optim import AdamWState, Schedule, adamw_step, lr_at, save_checkpoint

log = logging.getLogger(__name__)

HITS_AT = (1, 5, 10)


class ProtocolError(ValueError):
    pass


@dataclass
class TrainConfig:
    shots: int = 3
    steps: int = 20000
    warmup_steps: int = 2000
    peak_lr: float = 1e-5
    margin: float = 0.5
    seed: int = 0
    negatives_per_positive: int = 1
    weight_decay: float = 0.01
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    # relation labels to draw tasks from; None means every eligible relation
    training_relations: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.steps > 0 and self.steps <= self.warmup_steps:
            raise ValueError("steps must exceed warmup_steps")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.shots < 1 or self.negatives_per_positive < 1:
            raise ValueError("shots and negatives_per_positive must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainingTask:
    relation: int
    support: list[tuple[int, int, int]]
    positive: tuple[int, int, int]
    negatives: list[tuple[int, int, int]]


@dataclass
class MetricsReport:
    mrr: float
    hits1: float
    hits5: float
    hits10: float
    ranks: list[int] = field(default_factory=list)

    def record(self) -> dict:
        d = asdict(self)
        d["num_tasks"] = len(self.ranks)
        return d


class TaskSampler:
    """Draws training tasks uniformly over relations with at least K+1 triplets.

    ``relations`` restricts the draw to designated task relations; the rest
    of the graph then only serves as background and as negatives.
    """

    def __init__(self, kg: KnowledgeGraph, shots: int, relations: Sequence[str] | None = None):
        if kg.num_relations < 2:
            raise SamplingError("training needs at least two relations")
        self.kg = kg
        self.shots = shots
        if relations is None:
            pool = range(kg.num_relations)
        else:
            unknown = [r for r in relations if r not in kg.relation_index]
            if unknown:
                raise SamplingError(f"training relations not in the graph: {unknown}")
            pool = sorted(kg.relation_index[r] for r in set(relations))
        self.eligible = [r for r in pool if len(kg.edges_of_relation(r)) >= shots + 1]
        if not self.eligible:
            raise SamplingError(f"no training relation has {shots + 1} or more triplets")

    def sample(self, rng: np.random.Generator, negatives: int = 1) -> TrainingTask:
        kg = self.kg
        r = self.eligible[rng.integers(len(self.eligible))]
        picked = rng.choice(kg.edges_of_relation(r), size=self.shots + 1, replace=False)
        trips = [kg.triplet(int(i)) for i in picked]
        if np.all(kg.rels == r):
            raise SamplingError("no triplets of another relation to use as negatives")
        negs = []
        while len(negs) < negatives:
            i = int(rng.integers(kg.num_edges))
            if kg.rels[i] != r:
                negs.append(tuple(kg.triplet(i)))
        return TrainingTask(int(r), [tuple(t) for t in trips[:-1]], tuple(trips[-1]), negs)


def sample_training_task(
    kg: KnowledgeGraph, shots: int, rng: np.random.Generator, relations: Sequence[str] | None = None
) -> TrainingTask:
    return TaskSampler(kg, shots, relations).sample(rng)


def margin_loss(s_pos, s_neg, gamma: float):
    """max(s_neg - s_pos + gamma, 0) on floats or tensors."""
    if isinstance(s_pos, Tensor) or isinstance(s_neg, Tensor):
        return hinge(add(sub(s_neg, s_pos), Tensor(gamma)))
    return max(s_neg - s_pos + gamma, 0.0)


def task_loss(scorer: Scorer, task: TrainingTask, gamma: float) -> Tensor:
    """Mean margin loss of one positive against each negative query."""
    kg = scorer.kg
    ctx = scorer.support_context(kg.relations[task.relation], [(h, t) for h, _, t in task.support])
    queries = [(task.positive[0], task.positive[2])] + [(h, t) for h, _, t in task.negatives]
    masks = [(task.positive,)] + [(n,) for n in task.negatives]
    scores = scorer.score_queries(ctx, queries, masks)
    pos = gather(scores, 0)
    losses = [margin_loss(pos, gather(scores, j), gamma) for j in range(1, len(queries))]
    total = losses[0]
    for extra in losses[1:]:
        total = add(total, extra)
    return total * (1.0 / len(losses)) if len(losses) > 1 else total


@dataclass
class TrainResult:
    losses: list[float]
    optimizer: AdamWState


def train(
    scorer: Scorer,
    cfg: TrainConfig,
    log_fh=None,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Optimize ``scorer.params`` in place; pretrained tables stay fixed.

    ``log_fh`` receives one JSON record per step.
    """
    params = scorer.params
    rng = np.random.default_rng(cfg.seed)
    state = AdamWState(lr=cfg.peak_lr, weight_decay=cfg.weight_decay)
    losses: list[float] = []
    if cfg.steps == 0:
        return TrainResult(losses, state)
    sampler = TaskSampler(scorer.kg, cfg.shots, cfg.training_relations)
    schedule = Schedule(cfg.warmup_steps, cfg.steps, cfg.peak_lr)
    plist = params.parameters()
    params.training = True
    try:
        for step in range(1, cfg.steps + 1):
            task = sampler.sample(rng, cfg.negatives_per_positive)
            params.zero_grad()
            loss = task_loss(scorer, task, cfg.margin)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at step {step}; task={task}")
            if loss.requires_grad:
                loss.backward()
            for p in plist:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            lr = lr_at(schedule, step)
            adamw_step(plist, state, lr)
            losses.append(value)
            if log_fh is not None:
                log_fh.write(json.dumps({"step": step, "loss": value, "lr": lr}) + "\n")
            if on_step is not None:
                on_step(step, value)
            if cfg.checkpoint_every and cfg.checkpoint_dir and step % cfg.checkpoint_every == 0:
                path = Path(cfg.checkpoint_dir) / f"step{step:06d}.ckpt"
                save_checkpoint(path, params.state(), state, {"step": step})
    finally:
        params.training = False
        params.zero_grad()
    return TrainResult(losses, state)


def rank_candidates(scores: Sequence[tuple[int, float]], true_tail: int) -> int:
    """1 + number of other candidates scoring >= the true tail (ties count against)."""
    true_scores = [s for c, s in scores if c == true_tail]
    if not true_scores:
        raise ProtocolError("true tail is not among the candidates")
    st = true_scores[0]
    return 1 + sum(1 for c, s in scores if c != true_tail and s >= st)


def metrics_from_ranks(ranks: Sequence[int]) -> MetricsReport:
    if len(ranks) == 0:
        raise ProtocolError("cannot evaluate an empty task list")
    r = np.asarray(ranks, dtype=np.float64)
    return MetricsReport(
        mrr=float(np.mean(1.0 / r)),
        hits1=float(np.mean(r <= 1)),
        hits5=float(np.mean(r <= 5)),
        hits10=float(np.mean(r <= 10)),
        ranks=[int(x) for x in ranks],
    )


def evaluate_with(score_fn: Callable[[FewShotTask], np.ndarray], tasks: Iterable[FewShotTask]) -> MetricsReport:
    ranks = []
    for task in tasks:
        if task.true_tail is None:
            raise ProtocolError("evaluation tasks need a true tail")
        scores = score_fn(task)
        ranks.append(rank_candidates(list(zip(task.candidates, scores.tolist())), task.true_tail))
    return metrics_from_ranks(ranks)


def evaluate(scorer: Scorer, tasks: Sequence[FewShotTask]) -> MetricsReport:
    with no_grad():
        return evaluate_with(scorer.score_task, tasks)


def random_baseline(tasks: Sequence[FewShotTask], rng: np.random.Generator) -> MetricsReport:
    """Rank every task's candidates by independent uniform noise."""
    return evaluate_with(lambda t: rng.random(len(t.candidates)), tasks)
