"""Contextualized graphs: induced subgraphs around a (head, tail) pair."""

from __future__ import annotations

import hashlib
import logging
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kg import KnowledgeGraph

log = logging.getLogger(__name__)

DEFAULT_NODE_CAP = 500
CACHE_VERSION = 1


@dataclass
class ContextGraph:
    """A locally indexed subgraph; edge ``i`` runs ``src[i] -> dst[i]``."""

    nodes: np.ndarray
    head_idx: int
    tail_idx: int
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    weights: np.ndarray | None = None
    distance: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def edge_triplets(self) -> list[tuple[int, int, int]]:
        n = self.nodes
        return [(int(n[u]), int(r), int(n[v])) for u, v, r in zip(self.src, self.dst, self.rel)]

    def permuted(self, perm: Sequence[int]) -> "ContextGraph":
        """Relabel nodes so that new index ``i`` holds old node ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return ContextGraph(
            nodes=self.nodes[perm],
            head_idx=int(inv[self.head_idx]),
            tail_idx=int(inv[self.tail_idx]),
            src=inv[self.src],
            dst=inv[self.dst],
            rel=self.rel.copy(),
            weights=None if self.weights is None else self.weights.copy(),
            distance=None if self.distance is None else self.distance[perm],
        )


def _bfs(kg: KnowledgeGraph, v: int, n: int) -> dict[int, int]:
    dist = {v: 0}
    frontier = [v]
    for d in range(1, n + 1):
        nxt = []
        for u in frontier:
            for w in kg.adjacency_arrays(u)[2].tolist():
                if w not in dist:
                    dist[w] = d
                    nxt.append(w)
        if not nxt:
            break
        frontier = nxt
    return dist


def khop_nodes(kg: KnowledgeGraph, v: int, n: int) -> set[int]:
    """All entities within ``n`` undirected hops of ``v``, including ``v``."""
    if n < 0:
        raise ValueError("hop count must be non-negative")
    kg._check_entity(v)
    return set(_bfs(kg, v, n))


def extract_context_graph(
    kg: KnowledgeGraph,
    h: int,
    t: int,
    n: int,
    extra_sample: int = 0,
    rng: np.random.Generator | None = None,
    mask: Iterable[tuple[int, int, int]] = (),
    cap: int = DEFAULT_NODE_CAP,
) -> ContextGraph:
    """Induced subgraph on the ``n``-hop neighbourhoods of ``h`` and ``t``.

    ``extra_sample`` further nodes are drawn uniformly from the ring one hop
    beyond either neighbourhood. Triplets in ``mask`` are dropped from the
    edge set. When more than ``cap`` nodes are selected, the closest ones are
    kept (ties by entity id).
    """
    if n < 1:
        raise ValueError("hop count must be at least 1")
    kg._check_entity(h)
    kg._check_entity(t)
    dh = _bfs(kg, h, n + (1 if extra_sample else 0))
    dt = _bfs(kg, t, n + (1 if extra_sample else 0))
    dist: dict[int, int] = {}
    ring: set[int] = set()
    for d in (dh, dt):
        for e, k in d.items():
            if k <= n:
                dist[e] = min(k, dist.get(e, k))
            else:
                ring.add(e)
    ring -= dist.keys()
    if extra_sample and ring:
        if rng is None:
            raise ValueError("extra_sample requires an rng")
        pool = np.array(sorted(ring), dtype=np.int64)
        take = min(extra_sample, len(pool))
        for e in rng.choice(pool, size=take, replace=False).tolist():
            dist[e] = n + 1

    others = sorted((k, e) for e, k in dist.items() if e != h and e != t)
    ordered = [h] if h == t else [h, t]
    ordered += [e for _, e in others]
    if len(ordered) > cap:
        log.warning("context graph of (%d, %d) has %d nodes; truncated to %d", h, t, len(ordered), cap)
        ordered = ordered[: max(cap, len(set((h, t))))]
    local = {e: i for i, e in enumerate(ordered)}

    masked = set(mask)
    src, dst, rel = [], [], []
    edge_ids = []
    for e in ordered:
        edges, dirs, other = kg.adjacency_arrays(e)
        for eid, d, o in zip(edges.tolist(), dirs.tolist(), other.tolist()):
            if d == 0 and o in local:
                edge_ids.append(eid)
    edge_ids.sort()
    for eid in edge_ids:
        trip = (int(kg.heads[eid]), int(kg.rels[eid]), int(kg.tails[eid]))
        if trip in masked:
            continue
        src.append(local[trip[0]])
        dst.append(local[trip[2]])
        rel.append(trip[1])
    return ContextGraph(
        nodes=np.array(ordered, dtype=np.int64),
        head_idx=0,
        tail_idx=0 if h == t else 1,
        src=np.array(src, dtype=np.int64),
        dst=np.array(dst, dtype=np.int64),
        rel=np.array(rel, dtype=np.int64),
        distance=np.array([dist[e] for e in ordered], dtype=np.int64),
    )


def pair_rng(seed: int, h: int, t: int) -> np.random.Generator:
    """Generator keyed by (seed, h, t) so extraction is order-independent."""
    return np.random.default_rng(np.random.SeedSequence([seed, h, t]))


def kg_checksum(kg: KnowledgeGraph) -> str:
    d = hashlib.sha256()
    d.update("\x1f".join(kg.entities).encode())
    d.update(b"\x1e")
    d.update("\x1f".join(kg.relations).encode())
    for a in (kg.heads, kg.rels, kg.tails):
        d.update(np.ascontiguousarray(a, dtype="<i8").tobytes())
    return d.hexdigest()


class Extractor:
    """Memoizing context-graph extractor over one read-only KG."""

    def __init__(
        self,
        kg: KnowledgeGraph,
        hops: int,
        extra_sample: int = 0,
        cap: int = DEFAULT_NODE_CAP,
        seed: int = 0,
    ):
        self.kg = kg
        self.hops = hops
        self.extra_sample = extra_sample
        self.cap = cap
        self.seed = seed
        self._cache: dict[tuple, ContextGraph] = {}

    def __call__(self, h: int, t: int, mask: tuple[tuple[int, int, int], ...] = ()) -> ContextGraph:
        key = (h, t, mask)
        g = self._cache.get(key)
        if g is None:
            g = extract_context_graph(
                self.kg, h, t, self.hops, self.extra_sample, pair_rng(self.seed, h, t), mask, self.cap
            )
            self._cache[key] = g
        return g

    def save(self, path: str | Path) -> None:
        record = {
            "version": CACHE_VERSION,
            "checksum": kg_checksum(self.kg),
            "params": (self.hops, self.extra_sample, self.cap, self.seed),
            "graphs": self._cache,
        }
        with open(path, "wb") as fh:
            pickle.dump(record, fh, protocol=4)

    def load(self, path: str | Path) -> bool:
        """Merge a saved cache; returns False (and loads nothing) if stale."""
        try:
            with open(path, "rb") as fh:
                record = pickle.load(fh)
        except FileNotFoundError:
            return False
        if (
            record.get("version") != CACHE_VERSION
            or record.get("checksum") != kg_checksum(self.kg)
            or tuple(record.get("params", ())) != (self.hops, self.extra_sample, self.cap, self.seed)
        ):
            log.info("ignoring stale subgraph cache %s", path)
            return False
        self._cache.update(record["graphs"])
        return True


@dataclass
class GraphBatch:
    """Disjoint union of context graphs with global node/edge numbering."""

    graphs: list[ContextGraph]
    node_graph: np.ndarray
    edge_graph: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    heads: np.ndarray
    tails: np.ndarray
    head_flag: np.ndarray
    tail_flag: np.ndarray
    num_nodes: int
    inc_node: np.ndarray
    inc_edge: np.ndarray
    degree: np.ndarray

    @property
    def num_graphs(self) -> int:
        return len(self.graphs)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    @classmethod
    def of(cls, graphs: Sequence[ContextGraph]) -> "GraphBatch":
        offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
        n = int(offsets[-1])
        node_graph = np.repeat(np.arange(len(graphs)), [g.num_nodes for g in graphs])
        edge_graph = np.repeat(np.arange(len(graphs)), [g.num_edges for g in graphs])

        def cat(parts):
            return np.concatenate(parts).astype(np.int64) if parts else np.zeros(0, np.int64)

        src = cat([g.src + o for g, o in zip(graphs, offsets)])
        dst = cat([g.dst + o for g, o in zip(graphs, offsets)])
        rel = cat([g.rel for g in graphs])
        heads = np.array([g.head_idx + o for g, o in zip(graphs, offsets)], dtype=np.int64)
        tails = np.array([g.tail_idx + o for g, o in zip(graphs, offsets)], dtype=np.int64)
        head_flag = np.zeros(n)
        tail_flag = np.zeros(n)
        head_flag[heads] = 1.0
        tail_flag[tails] = 1.0
        # incidence pairs (node, edge); a self-loop counts once at its node
        loops = src == dst
        eids = np.arange(len(src), dtype=np.int64)
        inc_node = np.concatenate([src, dst[~loops]])
        inc_edge = np.concatenate([eids, eids[~loops]])
        return cls(
            graphs=list(graphs),
            node_graph=node_graph,
            edge_graph=edge_graph,
            src=src,
            dst=dst,
            rel=rel,
            heads=heads,
            tails=tails,
            head_flag=head_flag,
            tail_flag=tail_flag,
            num_nodes=n,
            inc_node=inc_node,
            inc_edge=inc_edge,
            degree=np.bincount(inc_node, minlength=n).astype(np.float64),
        )


def as_batch(graphs: ContextGraph | GraphBatch | Sequence[ContextGraph]) -> GraphBatch:
    if isinstance(graphs, GraphBatch):
        return graphs
    if isinstance(graphs, ContextGraph):
        return GraphBatch.of([graphs])
    return GraphBatch.of(list(graphs))
