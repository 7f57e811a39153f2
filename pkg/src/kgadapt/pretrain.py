"""TransE entity/relation embeddings and the table file format."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg import KnowledgeGraph, Triplet

log = logging.getLogger(__name__)

TABLE_MAGIC = b"KGAEMB\x00\x00"
TABLE_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class EmbeddingTable:
    """Row ``i`` of ``entity`` (``relation``) is the vector of id ``i``."""

    entity_names: list[str]
    relation_names: list[str]
    entity: np.ndarray
    relation: np.ndarray

    def __post_init__(self):
        if self.entity.shape[0] != len(self.entity_names) or self.relation.shape[0] != len(self.relation_names):
            raise ValueError("one vector per vocabulary entry required")
        if self.entity.shape[1] != self.relation.shape[1]:
            raise ValueError("entity and relation dims differ")
        if not (np.isfinite(self.entity).all() and np.isfinite(self.relation).all()):
            raise ValueError("embedding table contains non-finite values")

    @property
    def dim(self) -> int:
        return self.entity.shape[1]

    def aligned(self, kg: KnowledgeGraph) -> "EmbeddingTable":
        """Reorder rows to ``kg``'s id order (tables are matched by name)."""
        if self.entity_names == kg.entities and self.relation_names == kg.relations:
            return self
        e_ix = {n: i for i, n in enumerate(self.entity_names)}
        r_ix = {n: i for i, n in enumerate(self.relation_names)}
        missing = [n for n in kg.entities if n not in e_ix] + [n for n in kg.relations if n not in r_ix]
        if missing:
            raise KeyError(f"table lacks {len(missing)} vocabulary entries, e.g. {missing[:3]}")
        return EmbeddingTable(
            list(kg.entities),
            list(kg.relations),
            self.entity[[e_ix[n] for n in kg.entities]],
            self.relation[[r_ix[n] for n in kg.relations]],
        )


def transe_energy(table: EmbeddingTable, trip: Triplet | tuple[int, int, int]) -> float:
    """||v_h + v_r - v_t||_2; lower means more plausible."""
    h, r, t = trip
    for i, n in ((h, len(table.entity)), (t, len(table.entity))):
        if not 0 <= i < n:
            raise KeyError(f"unknown entity id {i}")
    if not 0 <= r < len(table.relation):
        raise KeyError(f"unknown relation id {r}")
    return float(np.linalg.norm(table.entity[h] + table.relation[r] - table.entity[t]))


def _energies(ent: np.ndarray, rel: np.ndarray, h, r, t) -> tuple[np.ndarray, np.ndarray]:
    diff = ent[h] + rel[r] - ent[t]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff)), diff


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(n == 0, 1.0, n)


def pretrain_embeddings(
    kg: KnowledgeGraph,
    dim: int = 100,
    epochs: int = 100,
    margin: float = 1.0,
    lr: float = 0.01,
    rng: np.random.Generator | None = None,
    batch_size: int = 128,
) -> EmbeddingTable:
    """Margin-ranking TransE with one head-or-tail corruption per positive.

    Entity vectors are renormalized to unit length after every SGD step.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    if kg.num_edges == 0:
        raise TrainingError("cannot pretrain on an empty graph")
    rng = np.random.default_rng(0) if rng is None else rng
    bound = 6.0 / np.sqrt(dim)
    ent = _normalize_rows(rng.uniform(-bound, bound, size=(kg.num_entities, dim)))
    rel = _normalize_rows(rng.uniform(-bound, bound, size=(kg.num_relations, dim)))
    H, R, T = kg.heads, kg.rels, kg.tails
    m = kg.num_edges
    for epoch in range(epochs):
        order = rng.permutation(m)
        total = 0.0
        for lo in range(0, m, batch_size):
            idx = order[lo : lo + batch_size]
            h, r, t = H[idx], R[idx], T[idx]
            corrupt = rng.integers(0, kg.num_entities, size=len(idx))
            swap_head = rng.random(len(idx)) < 0.5
            nh = np.where(swap_head, corrupt, h)
            nt = np.where(swap_head, t, corrupt)
            dp, diff_p = _energies(ent, rel, h, r, t)
            dn, diff_n = _energies(ent, rel, nh, r, nt)
            viol = margin + dp - dn > 0
            total += float(np.sum((margin + dp - dn)[viol]))
            if not viol.any():
                continue
            gp = diff_p[viol] / np.maximum(dp[viol], 1e-12)[:, None]
            gn = diff_n[viol] / np.maximum(dn[viol], 1e-12)[:, None]
            g_ent = np.zeros_like(ent)
            g_rel = np.zeros_like(rel)
            np.add.at(g_ent, h[viol], gp)
            np.add.at(g_ent, t[viol], -gp)
            np.add.at(g_rel, r[viol], gp - gn)
            np.add.at(g_ent, nh[viol], -gn)
            np.add.at(g_ent, nt[viol], gn)
            ent -= lr * g_ent
            rel -= lr * g_rel
            ent = _normalize_rows(ent)
        log.debug("transe epoch %d loss %.4f", epoch, total)
    return EmbeddingTable(list(kg.entities), list(kg.relations), ent, rel)


def _write_block(fh, names: list[str], vecs: np.ndarray) -> None:
    for i in sorted(range(len(names)), key=lambda i: names[i]):
        raw = names[i].encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(np.ascontiguousarray(vecs[i], dtype="<f8").tobytes())


def save_table(table: EmbeddingTable, path: str | Path, meta: dict | None = None) -> None:
    """Header (magic, version, dim, counts) then name-sorted entity and
    relation records: u32 name length, UTF-8 name, ``dim`` float64 LE.

    An optional trailer (u32 length, sorted-key JSON) carries ``meta``.
    """
    with open(path, "wb") as fh:
        fh.write(TABLE_MAGIC)
        fh.write(struct.pack("<IIII", TABLE_VERSION, table.dim, len(table.entity_names), len(table.relation_names)))
        _write_block(fh, table.entity_names, table.entity)
        _write_block(fh, table.relation_names, table.relation)
        if meta is not None:
            raw = json.dumps(meta, sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def load_table(path: str | Path) -> EmbeddingTable:
    return _read_table(path)[0]


def read_table_meta(path: str | Path) -> dict:
    """The metadata trailer written by :func:`save_table`, or ``{}``."""
    return _read_table(path)[1]


def _read_table(path: str | Path) -> tuple[EmbeddingTable, dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != TABLE_MAGIC:
        raise ValueError(f"{path}: not an embedding table")
    version, dim, n_ent, n_rel = struct.unpack_from("<IIII", buf, 8)
    if version != TABLE_VERSION:
        raise ValueError(f"{path}: unsupported table version {version}")
    off = 24

    def block(count):
        nonlocal off
        names, vecs = [], np.zeros((count, dim))
        for i in range(count):
            (ln,) = struct.unpack_from("<I", buf, off)
            off += 4
            names.append(buf[off : off + ln].decode("utf-8"))
            off += ln
            vecs[i] = np.frombuffer(buf, dtype="<f8", count=dim, offset=off)
            off += 8 * dim
        return names, vecs

    en, ev = block(n_ent)
    rn, rv = block(n_rel)
    meta = {}
    if off < len(buf):
        (ln,) = struct.unpack_from("<I", buf, off)
        meta = json.loads(buf[off + 4 : off + 4 + ln].decode("utf-8"))
    return EmbeddingTable(en, rn, ev, rv), meta
