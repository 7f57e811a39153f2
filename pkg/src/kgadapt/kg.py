"""Background knowledge graph: loading, adjacency index, few-shot tasks."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)


class ParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class SamplingError(ValueError):
    pass


class Direction(enum.IntEnum):
    OUTGOING = 0
    INCOMING = 1


class Triplet(NamedTuple):
    head: int
    relation: int
    tail: int


class KnowledgeGraph:
    """Immutable directed multi-relational graph with dense integer ids.

    ``adjacency(v)`` lists every edge touching ``v`` once per endpoint, in
    load order, tagged with its direction relative to ``v``.
    """

    def __init__(
        self,
        entities: Sequence[str],
        relations: Sequence[str],
        triplets: Iterable[tuple[int, int, int]],
        duplicates_rejected: int = 0,
    ):
        self.entities = list(entities)
        self.relations = list(relations)
        self.entity_index = {name: i for i, name in enumerate(self.entities)}
        self.relation_index = {name: i for i, name in enumerate(self.relations)}
        if len(self.entity_index) != len(self.entities) or len(self.relation_index) != len(self.relations):
            raise ValueError("vocabulary names must be unique")
        arr = np.asarray(list(triplets), dtype=np.int64).reshape(-1, 3)
        n_ent, n_rel = len(self.entities), len(self.relations)
        if arr.size and (
            arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= n_ent or arr[:, 1].min() < 0 or arr[:, 1].max() >= n_rel
        ):
            raise ValueError("triplet ids out of vocabulary range")
        self.heads = arr[:, 0].copy()
        self.rels = arr[:, 1].copy()
        self.tails = arr[:, 2].copy()
        for a in (self.heads, self.rels, self.tails):
            a.setflags(write=False)
        self.duplicates_rejected = duplicates_rejected
        self._triplet_set = set(map(tuple, arr.tolist()))
        if len(self._triplet_set) != len(arr):
            raise ValueError("duplicate triplets")

        # CSR adjacency; each edge appears at its head (outgoing) and tail (incoming)
        m = len(arr)
        ends = np.concatenate([self.heads, self.tails])
        edge_ids = np.concatenate([np.arange(m), np.arange(m)])
        dirs = np.concatenate([np.zeros(m, np.int8), np.ones(m, np.int8)])
        order = np.lexsort((dirs, edge_ids, ends))
        self._adj_edges = edge_ids[order]
        self._adj_dirs = dirs[order]
        self._adj_other = np.concatenate([self.tails, self.heads])[order]
        self._adj_ptr = np.zeros(n_ent + 1, dtype=np.int64)
        np.add.at(self._adj_ptr, ends + 1, 1)
        np.cumsum(self._adj_ptr, out=self._adj_ptr)

        by_rel: dict[int, list[int]] = {}
        for i, r in enumerate(self.rels.tolist()):
            by_rel.setdefault(r, []).append(i)
        self._by_relation = {r: np.asarray(ix, dtype=np.int64) for r, ix in by_rel.items()}

    @classmethod
    def from_named(cls, triplets: Iterable[tuple[str, str, str]]) -> "KnowledgeGraph":
        """Build from name triples, assigning ids in first-appearance order."""
        ents: dict[str, int] = {}
        rels: dict[str, int] = {}
        ids: list[tuple[int, int, int]] = []
        seen: set[tuple[int, int, int]] = set()
        dups = 0
        for h, r, t in triplets:
            hi = ents.setdefault(h, len(ents))
            ri = rels.setdefault(r, len(rels))
            ti = ents.setdefault(t, len(ents))
            key = (hi, ri, ti)
            if key in seen:
                dups += 1
                continue
            seen.add(key)
            ids.append(key)
        return cls(list(ents), list(rels), ids, duplicates_rejected=dups)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def num_edges(self) -> int:
        return len(self.heads)

    def triplet(self, i: int) -> Triplet:
        return Triplet(int(self.heads[i]), int(self.rels[i]), int(self.tails[i]))

    def triplets(self) -> list[Triplet]:
        return [Triplet(h, r, t) for h, r, t in zip(self.heads.tolist(), self.rels.tolist(), self.tails.tolist())]

    def contains(self, h: int, r: int, t: int) -> bool:
        return (h, r, t) in self._triplet_set

    def edges_of_relation(self, r: int) -> np.ndarray:
        return self._by_relation.get(r, np.zeros(0, dtype=np.int64))

    def _check_entity(self, v: int) -> None:
        if not 0 <= v < self.num_entities:
            raise KeyError(f"unknown entity id {v}")

    def adjacency_arrays(self, v: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(edge ids, directions, opposite endpoints) for entity ``v``."""
        self._check_entity(v)
        lo, hi = self._adj_ptr[v], self._adj_ptr[v + 1]
        return self._adj_edges[lo:hi], self._adj_dirs[lo:hi], self._adj_other[lo:hi]

    def neighbors(self, v: int) -> np.ndarray:
        """Distinct entities adjacent to ``v`` ignoring direction, ascending."""
        return np.unique(self.adjacency_arrays(v)[2])

    def summary(self) -> dict:
        return {
            "entities": self.num_entities,
            "relations": self.num_relations,
            "edges": self.num_edges,
            "duplicates_rejected": self.duplicates_rejected,
        }


def incident_edges(kg: KnowledgeGraph, v: int) -> list[tuple[int, Direction]]:
    edges, dirs, _ = kg.adjacency_arrays(v)
    return [(int(e), Direction(int(d))) for e, d in zip(edges, dirs)]


def parse_triplet_lines(source: IO[str] | Iterable[str]) -> list[tuple[str, str, str]]:
    out = []
    for lineno, line in enumerate(source, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(lineno, f"expected 3 tab-separated fields, got {len(parts)}")
        out.append((parts[0], parts[1], parts[2]))
    return out


def load_triplets(source: IO[str] | Iterable[str]) -> KnowledgeGraph:
    """Read ``head<TAB>relation<TAB>tail`` lines; duplicates are dropped."""
    kg = KnowledgeGraph.from_named(parse_triplet_lines(source))
    if kg.duplicates_rejected:
        log.warning("rejected %d duplicate triplet(s)", kg.duplicates_rejected)
    return kg


def load_triplet_file(path: str | Path) -> KnowledgeGraph:
    with open(path, encoding="utf-8") as fh:
        return load_triplets(fh)


def write_triplets(kg: KnowledgeGraph, fh: IO[str]) -> None:
    for h, r, t in zip(kg.heads.tolist(), kg.rels.tolist(), kg.tails.tolist()):
        fh.write(f"{kg.entities[h]}\t{kg.relations[r]}\t{kg.entities[t]}\n")


@dataclass(frozen=True)
class FewShotTask:
    """K support (head, tail) pairs of one target relation plus a ranking query.

    ``relation`` is an opaque label; it need not exist in the KG vocabulary.
    """

    relation: str
    support: tuple[tuple[int, int], ...]
    query_head: int
    candidates: tuple[int, ...] = ()
    true_tail: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.support) < 1:
            raise ValueError("a few-shot task needs at least one support triplet")
        if self.true_tail is not None and self.candidates and self.candidates.count(self.true_tail) != 1:
            raise ValueError("true tail must appear exactly once among candidates")

    @property
    def shots(self) -> int:
        return len(self.support)


def build_eval_task(
    kg: KnowledgeGraph,
    relation: str,
    support: Sequence[tuple[int, int]],
    query: tuple[int, int],
    num_negatives: int,
    rng: np.random.Generator,
    exclude: Iterable[int] = (),
) -> FewShotTask:
    """Pair the true tail with ``num_negatives`` uniformly drawn other entities.

    ``exclude`` removes further entities from the negative pool (e.g. other
    known tails of the same head, for filtered ranking).
    """
    head, tail = query
    banned = set(exclude) | {tail}
    pool = np.array([e for e in range(kg.num_entities) if e not in banned], dtype=np.int64)
    if num_negatives > len(pool):
        raise SamplingError(f"need {num_negatives} negatives but only {len(pool)} entities are eligible")
    negs = rng.choice(pool, size=num_negatives, replace=False) if num_negatives else np.zeros(0, np.int64)
    cands = np.concatenate([[tail], negs]).astype(np.int64)
    rng.shuffle(cands)
    return FewShotTask(
        relation=relation,
        support=tuple((int(h), int(t)) for h, t in support),
        query_head=int(head),
        candidates=tuple(int(c) for c in cands),
        true_tail=int(tail),
    )


def task_to_record(kg: KnowledgeGraph, task: FewShotTask) -> dict:
    ent = kg.entities
    return {
        "relation": task.relation,
        "support": [[ent[h], task.relation, ent[t]] for h, t in task.support],
        "query_head": ent[task.query_head],
        "candidates": [ent[c] for c in task.candidates],
        "true_tail": None if task.true_tail is None else ent[task.true_tail],
    }


def task_from_record(kg: KnowledgeGraph, rec: dict) -> FewShotTask:
    idx = kg.entity_index
    try:
        support = tuple((idx[h], idx[t]) for h, _, t in rec["support"])
        rels = {r for _, r, _ in rec["support"]}
        relation = rec.get("relation") or next(iter(rels))
        if rels - {relation}:
            raise ValueError(f"support triplets mix relations {sorted(rels)}")
        tail = rec.get("true_tail")
        return FewShotTask(
            relation=relation,
            support=support,
            query_head=idx[rec["query_head"]],
            candidates=tuple(idx[c] for c in rec.get("candidates", [])),
            true_tail=None if tail is None else idx[tail],
        )
    except KeyError as exc:
        raise KeyError(f"task references unknown entity or field {exc}") from None


def write_tasks(kg: KnowledgeGraph, tasks: Iterable[FewShotTask], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(task_to_record(kg, task), sort_keys=True) + "\n")


def read_tasks(kg: KnowledgeGraph, path: str | Path) -> list[FewShotTask]:
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                tasks.append(task_from_record(kg, json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise ParseError(lineno, str(exc)) from None
    return tasks
