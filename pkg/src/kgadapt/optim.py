"""AdamW, the warmup/decay learning-rate schedule, and checkpoint files."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"KGACKPT\x00"
CHECKPOINT_VERSION = 1


class OptimizerStateError(RuntimeError):
    pass


@dataclass
class Schedule:
    """Linear warmup from 0 to ``peak_lr`` then linear decay to 0."""

    warmup_steps: int
    total_steps: int
    peak_lr: float

    def __post_init__(self):
        if not 0 < self.warmup_steps < self.total_steps:
            raise ValueError(
                f"need 0 < warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}"
            )


def lr_at(schedule: Schedule, step: int) -> float:
    if step < 0 or step > schedule.total_steps:
        log.warning("step %d outside [0, %d]; clamped", step, schedule.total_steps)
        step = min(max(step, 0), schedule.total_steps)
    if step <= schedule.warmup_steps:
        return schedule.peak_lr * step / schedule.warmup_steps
    remaining = schedule.total_steps - step
    return schedule.peak_lr * remaining / (schedule.total_steps - schedule.warmup_steps)


@dataclass
class AdamWState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Sequence[Tensor], state: AdamWState, lr: float | None = None) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Parameters with no gradient raise; a zero gradient must be explicit.
    The caller zeroes gradients afterwards.
    """
    lr = state.lr if lr is None else lr
    b1, b2 = state.betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p in params:
        if p.grad is None:
            raise OptimizerStateError(f"parameter {p.name!r} has no gradient")
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data *= 1.0 - lr * state.weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def save_checkpoint(
    path: str | Path,
    params: Mapping[str, np.ndarray],
    state: AdamWState | None = None,
    meta: Mapping | None = None,
) -> None:
    """Write a byte-stable checkpoint.

    Layout: magic, u32 version, u32 header length, sorted-key JSON header,
    then little-endian float64 blobs for each parameter (header order),
    followed by the Adam first and second moments when ``state`` is given.
    """
    names = sorted(params)
    header = {
        "version": CHECKPOINT_VERSION,
        "params": [[n, list(np.shape(params[n]))] for n in names],
        "optimizer": None,
        "meta": dict(meta or {}),
    }
    blobs = [np.ascontiguousarray(params[n], dtype="<f8").tobytes() for n in names]
    if state is not None:
        header["optimizer"] = {
            "lr": state.lr,
            "betas": list(state.betas),
            "eps": state.eps,
            "weight_decay": state.weight_decay,
            "step": state.step,
            "moments": sorted(state.m),
        }
        for n in sorted(state.m):
            blobs.append(np.ascontiguousarray(state.m[n], dtype="<f8").tobytes())
            blobs.append(np.ascontiguousarray(state.v[n], dtype="<f8").tobytes())
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], AdamWState | None, dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    header = json.loads(buf[off : off + hlen].decode("utf-8"))
    off += hlen

    def take(shape):
        nonlocal off
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(shape)
        off += 8 * n
        return arr

    params = {name: take(tuple(shape)) for name, shape in header["params"]}
    state = None
    opt = header["optimizer"]
    if opt is not None:
        state = AdamWState(
            lr=opt["lr"],
            betas=tuple(opt["betas"]),
            eps=opt["eps"],
            weight_decay=opt["weight_decay"],
            step=opt["step"],
        )
        for n in opt["moments"]:
            shape = params[n].shape
            state.m[n] = take(shape)
            state.v[n] = take(shape)
    return params, state, header["meta"]
