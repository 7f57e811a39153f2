import numpy as np
import pytest

from kgadapt.kg import KnowledgeGraph
from kgadapt.model import ModelConfig, ModelParams, Scorer
from kgadapt.pretrain import EmbeddingTable
from kgadapt.subgraph import Extractor


def random_kg(rng, num_entities=12, num_edges=24, num_relations=3):
    """Random simple KG (no self-loops, no duplicates)."""
    seen = set()
    tries = 0
    while len(seen) < num_edges and tries < 50 * num_edges:
        tries += 1
        h, t = rng.choice(num_entities, size=2, replace=False)
        seen.add((int(h), int(rng.integers(num_relations)), int(t)))
    return KnowledgeGraph([f"e{i}" for i in range(num_entities)], [f"r{i}" for i in range(num_relations)], sorted(seen))


def random_table(kg, dim, rng):
    ent = rng.normal(size=(kg.num_entities, dim))
    ent /= np.linalg.norm(ent, axis=1, keepdims=True)
    return EmbeddingTable(list(kg.entities), list(kg.relations), ent, rng.normal(size=(kg.num_relations, dim)))


def make_scorer(kg, dim=4, hidden=5, iterations=2, lam=0.5, seed=0, hops=1, **cfg):
    rng = np.random.default_rng(seed)
    table = random_table(kg, dim, rng)
    params = ModelParams(ModelConfig(pretrained_dim=dim, hidden_dim=hidden, iterations=iterations, lam=lam, **cfg), rng)
    return Scorer(kg, table, params, Extractor(kg, hops))


@pytest.fixture
def chain_kg():
    # h -r0-> a -r1-> t, plus a distractor hanging off t
    return KnowledgeGraph.from_named([("h", "r0", "a"), ("a", "r1", "t"), ("t", "r2", "x")])


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
