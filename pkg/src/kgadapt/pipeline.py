"""Glue between a RunConfig and the library: build, train, save, load, evaluate.

Every random component (synthesis, pretraining, parameter init, task
sampling, context sampling) gets its own generator seeded from
``RunConfig.seed``, so a config fully determines a run.
"""

from __future__ import annotations

import json
import logging
import multiprocessing
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import no_grad
from .config import RunConfig, parse_config_text
from .kg import FewShotTask, KnowledgeGraph
from .model import ModelConfig, ModelParams, Scorer
from .optim import AdamWState, load_checkpoint, save_checkpoint
from .pretrain import EmbeddingTable, pretrain_embeddings
from .subgraph import Extractor, kg_checksum
from .synth import SynthResult, composition_benchmark
from .trainer import (
    MetricsReport,
    TrainConfig,
    TrainResult,
    evaluate,
    metrics_from_ranks,
    rank_candidates,
    train,
)

log = logging.getLogger(__name__)


class DependencyError(RuntimeError):
    """A required input artifact is missing or does not match."""


def benchmark_config(**overrides) -> RunConfig:
    """Settings for the desk-scale composition benchmark."""
    base = dict(
        entities=200,
        seed=0,
        shots=3,
        hops=1,
        pretrained_dim=32,
        pretrain_epochs=200,
        hidden_dim=32,
        iterations=4,
        lam=0.5,
        steps=2000,
        warmup_steps=200,
        peak_lr=1e-3,
        margin=0.5,
        normalize_weight_head=True,
    )
    base.update(overrides)
    return RunConfig(**base)


def pretrain_for(kg: KnowledgeGraph, cfg: RunConfig) -> EmbeddingTable:
    return pretrain_embeddings(
        kg,
        dim=cfg.pretrained_dim,
        epochs=cfg.pretrain_epochs,
        margin=cfg.pretrain_margin,
        lr=cfg.pretrain_lr,
        rng=np.random.default_rng(cfg.seed),
    )


def build_scorer(kg: KnowledgeGraph, table: EmbeddingTable, cfg: RunConfig) -> Scorer:
    """Fresh parameters initialized from ``cfg.seed``."""
    params = ModelParams(ModelConfig.from_dict(cfg.model_dict()), np.random.default_rng(cfg.seed))
    extractor = Extractor(kg, cfg.hops, cfg.extra_sample, cfg.node_cap, cfg.seed)
    return Scorer(kg, table, params, extractor)


def train_scorer(scorer: Scorer, cfg: RunConfig, trace_fh=None, checkpoint_dir: str | None = None) -> TrainResult:
    tc = TrainConfig.from_dict(cfg.train_dict())
    tc.checkpoint_dir = checkpoint_dir
    return train(scorer, tc, log_fh=trace_fh)


def save_model(path: str | Path, scorer: Scorer, cfg: RunConfig, optimizer: AdamWState | None = None) -> None:
    """Checkpoint the parameters with the resolved config and KG checksum."""
    meta = {"config": cfg.to_text(), "kg_checksum": kg_checksum(scorer.kg)}
    save_checkpoint(path, scorer.params.state(), optimizer, meta)


def load_model(path: str | Path) -> tuple[dict[str, np.ndarray], RunConfig, dict]:
    """Returns (parameter arrays, embedded RunConfig, raw meta)."""
    p = Path(path)
    if not p.is_file():
        raise DependencyError(f"checkpoint not found: {p}")
    state, _, meta = load_checkpoint(p)
    if "config" not in meta:
        raise DependencyError(f"{p}: checkpoint carries no run config")
    return state, RunConfig(**parse_config_text(meta["config"], f"{p}:config")), meta


def restore_scorer(kg: KnowledgeGraph, table: EmbeddingTable, state: dict, cfg: RunConfig, meta: dict) -> Scorer:
    if meta.get("kg_checksum") not in (None, kg_checksum(kg)):
        log.warning("checkpoint was trained on a different graph")
    scorer = build_scorer(kg, table, cfg)
    scorer.params.load_state(state)
    return scorer


_POOL_SCORER: Scorer | None = None


def _pool_rank(task: FewShotTask) -> int:
    with no_grad():
        scores = _POOL_SCORER.score_task(task)
    return rank_candidates(list(zip(task.candidates, scores.tolist())), task.true_tail)


def evaluate_tasks(scorer: Scorer, tasks: Sequence[FewShotTask], workers: int = 1) -> MetricsReport:
    """Like :func:`trainer.evaluate`, optionally across forked worker processes."""
    if workers <= 1 or len(tasks) < 2 or "fork" not in multiprocessing.get_all_start_methods():
        return evaluate(scorer, tasks)
    global _POOL_SCORER
    _POOL_SCORER = scorer
    try:
        with multiprocessing.get_context("fork").Pool(workers) as pool:
            ranks = pool.map(_pool_rank, tasks, chunksize=max(1, len(tasks) // (4 * workers)))
    finally:
        _POOL_SCORER = None
    return metrics_from_ranks(ranks)


def metrics_record(report: MetricsReport, cfg: RunConfig | None = None) -> dict:
    rec = {"metrics": report.record()}
    if cfg is not None:
        rec["config"] = cfg.to_text()
    return rec


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def run_benchmark(cfg: RunConfig, synth: SynthResult | None = None) -> tuple[MetricsReport, Scorer, TrainResult]:
    """Synthesize (unless given), pretrain, train, and evaluate in memory."""
    if synth is None:
        synth = composition_benchmark(cfg.seed, cfg.entities, cfg.num_test_tasks)
    if not cfg.training_relations:
        cfg = cfg.replace(training_relations=synth.train_relations)
    table = pretrain_for(synth.kg, cfg)
    scorer = build_scorer(synth.kg, table, cfg)
    result = train_scorer(scorer, cfg)
    return evaluate_tasks(scorer, synth.test_tasks, cfg.workers), scorer, result
