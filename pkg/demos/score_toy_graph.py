"""Score the candidates of one few-shot task on a hand-written graph.

Untrained parameters, so the ranking is arbitrary; the point is the API
path from triplets to scores.

    python demos/score_toy_graph.py
"""

import numpy as np

from kgadapt.kg import FewShotTask, KnowledgeGraph
from kgadapt.model import ModelConfig, ModelParams, Scorer
from kgadapt.pretrain import pretrain_embeddings
from kgadapt.subgraph import Extractor

TRIPLETS = [
    ("alice", "born_in", "paris"), ("paris", "city_of", "france"),
    ("bob", "born_in", "lyon"), ("lyon", "city_of", "france"),
    ("carol", "born_in", "rome"), ("rome", "city_of", "italy"),
    ("dave", "born_in", "madrid"), ("madrid", "city_of", "spain"),
    ("alice", "knows", "bob"), ("carol", "knows", "dave"),
]


def main():
    kg = KnowledgeGraph.from_named(TRIPLETS)
    rng = np.random.default_rng(0)
    table = pretrain_embeddings(kg, dim=8, epochs=100, rng=rng)
    params = ModelParams(ModelConfig(pretrained_dim=8, hidden_dim=8, iterations=2), rng)
    scorer = Scorer(kg, table, params, Extractor(kg, hops=1))
    E = kg.entity_index
    # nationality is not a relation of the graph: it is learned from two shots
    task = FewShotTask(
        relation="nationality",
        support=((E["alice"], E["france"]), (E["carol"], E["italy"])),
        query_head=E["dave"],
        candidates=(E["france"], E["italy"], E["spain"]),
        true_tail=E["spain"],
    )
    for c, s in sorted(zip(task.candidates, scorer.score_task(task)), key=lambda x: -x[1]):
        print(f"{kg.entities[c]:>8s}  {s:+.4f}")


if __name__ == "__main__":
    main()
