"""Synthetic knowledge graphs with planted composition rules.

A rule ``target(a, c) <- body[0](a, x1), body[1](x1, x2), ..., body[-1](xm, c)``
is planted by adding random body paths; its target triplets are then every
(a, c) pair connected by such a path in the finished graph. Withheld rules
become few-shot evaluation tasks and never appear in the graph; the rest are
added as ordinary relations and give training tasks something to learn.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kg import FewShotTask, KnowledgeGraph, build_eval_task


class GenerationError(ValueError):
    pass


@dataclass
class RuleSpec:
    target: str
    body: tuple[str, ...]
    instances: int = 60
    noise_edge_rate: float = 0.0
    similar_pairs: tuple[tuple[str, str], ...] = ()
    withheld: bool = True

    def __post_init__(self):
        self.body = tuple(self.body)
        self.similar_pairs = tuple(tuple(p) for p in self.similar_pairs)
        if len(self.body) < 1:
            raise ValueError("rule body needs at least one relation")
        if not 0.0 <= self.noise_edge_rate <= 1.0:
            raise ValueError("noise_edge_rate must be in [0, 1]")

    def alternatives(self, rel: str) -> tuple[str, ...]:
        """Relations usable in place of ``rel`` in this rule's body."""
        alts = [rel]
        for a, b in self.similar_pairs:
            if a == rel:
                alts.append(b)
            elif b == rel:
                alts.append(a)
        return tuple(alts)


@dataclass
class SynthResult:
    kg: KnowledgeGraph
    train_tasks: list[FewShotTask]
    test_tasks: list[FewShotTask]
    targets: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    rules: list[RuleSpec] = field(default_factory=list)

    @property
    def train_relations(self) -> list[str]:
        """Targets of the rules kept in the graph: the designated task relations."""
        return [r.target for r in self.rules if not r.withheld]


def rule_targets(
    edges: Sequence[tuple[int, int, int]], rule: RuleSpec, rel_ids: dict[str, int]
) -> list[tuple[int, int]]:
    """All (a, c), a != c, joined by a body path (similar relations allowed)."""
    out_edges: dict[int, list[tuple[int, int]]] = {}
    for h, r, t in edges:
        out_edges.setdefault(h, []).append((r, t))
    steps = [{rel_ids[a] for a in rule.alternatives(rel)} for rel in rule.body]
    found = set()
    for a in sorted(out_edges):
        frontier = {a}
        for allowed in steps:
            frontier = {t for u in frontier for r, t in out_edges.get(u, ()) if r in allowed}
            if not frontier:
                break
        found.update((a, c) for c in frontier if c != a)
    return sorted(found)


def _tasks_for(
    kg: KnowledgeGraph,
    label: str,
    pairs: list[tuple[int, int]],
    count: int,
    shots: int,
    num_negatives: int,
    rng: np.random.Generator,
) -> list[FewShotTask]:
    if count == 0:
        return []
    if len(pairs) < shots + 1:
        raise GenerationError(f"rule {label!r} has {len(pairs)} target triplets; need {shots + 1}")
    tails_of: dict[int, set[int]] = {}
    for h, t in pairs:
        tails_of.setdefault(h, set()).add(t)
    order = rng.permutation(len(pairs))
    tasks = []
    for i in range(count):
        qi = int(order[i % len(pairs)])
        others = np.delete(np.arange(len(pairs)), qi)
        sup = [pairs[j] for j in rng.choice(others, size=shots, replace=False)]
        h, t = pairs[qi]
        tasks.append(
            build_eval_task(kg, label, sup, (h, t), num_negatives, rng, exclude=tails_of[h] - {t})
        )
    return tasks


def generate_rule_kg(
    num_entities: int,
    relations: Sequence[str],
    rules: Sequence[RuleSpec],
    rng: np.random.Generator,
    background_edges: int | None = None,
    shots: int = 3,
    num_negatives: int = 50,
    num_test_tasks: int = 200,
    num_train_tasks: int = 0,
) -> SynthResult:
    """Random background graph plus planted rules; see the module docstring.

    ``relations`` is the full KG relation vocabulary and must include the
    target of every non-withheld rule. Evaluation candidates exclude the
    query head's other true tails (filtered ranking).
    """
    if num_entities < 2 or not relations:
        raise GenerationError("need at least two entities and one relation")
    relations = list(relations)
    rel_ids = {r: i for i, r in enumerate(relations)}
    derived = {rule.target for rule in rules if not rule.withheld}
    for rule in rules:
        names = [a for rel in rule.body for a in rule.alternatives(rel)]
        unknown = [n for n in names if n not in rel_ids]
        if unknown:
            raise GenerationError(f"rule {rule.target!r} uses unknown relations {unknown}")
        if set(names) & derived:
            raise GenerationError(f"rule {rule.target!r} body uses a derived relation")
        if rule.withheld and rule.target in rel_ids:
            raise GenerationError(f"withheld target {rule.target!r} must not be a KG relation")
        if not rule.withheld and rule.target not in rel_ids:
            raise GenerationError(f"derived target {rule.target!r} missing from relations")
    base = [rel_ids[r] for r in relations if r not in derived]

    edges: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()

    def add(h: int, r: int, t: int) -> None:
        if h != t and (h, r, t) not in seen:
            seen.add((h, r, t))
            edges.append((h, r, t))

    n_bg = num_entities if background_edges is None else background_edges
    for _ in range(n_bg):
        h, t = rng.choice(num_entities, size=2, replace=False)
        add(int(h), int(base[rng.integers(len(base))]), int(t))

    for rule in rules:
        hub = int(rng.integers(num_entities))
        spurious = int(base[rng.integers(len(base))])
        for _ in range(rule.instances):
            path = [int(x) for x in rng.choice(num_entities, size=len(rule.body) + 1, replace=False)]
            for j, rel in enumerate(rule.body):
                alts = rule.alternatives(rel)
                pick = alts[0] if len(alts) == 1 else alts[int(rng.integers(len(alts)))]
                add(path[j], rel_ids[pick], path[j + 1])
            if rng.random() < rule.noise_edge_rate:
                add(path[0], spurious, hub)
                add(path[-1], spurious, hub)

    touched = {h for h, _, _ in edges} | {t for _, _, t in edges}
    for e in range(num_entities):
        if e not in touched:
            other = int(rng.integers(num_entities - 1))
            other += other >= e
            add(e, int(base[rng.integers(len(base))]), other)

    base_edges = list(edges)
    targets: dict[str, list[tuple[int, int]]] = {}
    for rule in rules:
        pairs = rule_targets(base_edges, rule, rel_ids)
        if not pairs:
            raise GenerationError(f"rule {rule.target!r} has no satisfying paths")
        targets[rule.target] = pairs
    for rule in rules:
        if not rule.withheld:
            r = rel_ids[rule.target]
            for h, t in targets[rule.target]:
                add(h, r, t)

    # ids follow first appearance, exactly as a reload of the written triplet file assigns them
    names = [f"e{i:04d}" for i in range(num_entities)]
    kg = KnowledgeGraph.from_named((names[h], relations[r], names[t]) for h, r, t in edges)
    emap = [kg.entity_index[n] for n in names]
    targets = {k: sorted((emap[h], emap[t]) for h, t in v) for k, v in targets.items()}
    withheld = [r for r in rules if r.withheld]
    kept = [r for r in rules if not r.withheld]
    test, train = [], []
    for i, rule in enumerate(withheld):
        share = num_test_tasks // len(withheld) + (i < num_test_tasks % len(withheld))
        test += _tasks_for(kg, rule.target, targets[rule.target], share, shots, num_negatives, rng)
    for i, rule in enumerate(kept):
        share = num_train_tasks // len(kept) + (i < num_train_tasks % len(kept))
        train += _tasks_for(kg, rule.target, targets[rule.target], share, shots, num_negatives, rng)
    return SynthResult(kg, train, test, targets, list(rules))


def composition_benchmark(seed: int = 0, num_entities: int = 200, num_test_tasks: int = 200) -> SynthResult:
    """The reference desk-scale setup: 8 relations, withheld r' = r1 o r2 with
    r5 interchangeable for r2, noise-edge rate 0.05, 3-shot, 50 negatives.

    r6 = r3 o r4 and r7 = r0 o r3 stay in the graph as learnable training
    relations.
    """
    rules = [
        RuleSpec("r_prime", ("r1", "r2"), instances=40, noise_edge_rate=0.05, similar_pairs=(("r2", "r5"),)),
        RuleSpec("r6", ("r3", "r4"), instances=40, noise_edge_rate=0.05, withheld=False),
        RuleSpec("r7", ("r0", "r3"), instances=40, noise_edge_rate=0.05, withheld=False),
    ]
    return generate_rule_kg(
        num_entities,
        [f"r{i}" for i in range(8)],
        rules,
        np.random.default_rng(seed),
        background_edges=num_entities // 2,
        shots=3,
        num_negatives=50,
        num_test_tasks=num_test_tasks,
        num_train_tasks=100,
    )
