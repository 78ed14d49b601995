"""Seeded Rayleigh channel generation and a JSON-lines dump format."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .model import ChannelRealization, SystemConfig

__all__ = [
    "FadingSpec",
    "generate_realization",
    "realization_to_record",
    "realization_from_record",
    "dump_realizations",
    "load_realizations",
    "channel_checksum",
]


@dataclass(frozen=True)
class FadingSpec:
    """Large-scale fading of the composite UT-RIS-BS link.

    ``pathloss_db`` is the composite loss. Under ``"equal-split"`` it is
    divided evenly between ``G`` and every ``H_k`` so that the product of the
    per-entry variances equals ``10**(pathloss_db / 10)``.
    """

    pathloss_db: float = -120.0
    split_rule: str = "equal-split"

    def __post_init__(self):
        if self.pathloss_db > 0:
            raise ValueError("pathloss_db must be <= 0")
        if self.split_rule != "equal-split":
            raise ValueError(f"unknown split rule {self.split_rule!r}")

    @property
    def variances(self) -> tuple[float, float]:
        v = 10.0 ** (self.pathloss_db / 20.0)
        return v, v


def _cn(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def generate_realization(config: SystemConfig, fading: FadingSpec = FadingSpec(),
                         seed: int = 0) -> ChannelRealization:
    """Draw ``G`` and ``H_1..H_K`` with i.i.d. CN(0, v) entries.

    The generator is numpy's PCG64 seeded with ``seed``; ``G`` is drawn
    first, then the user channels in order (real parts then imaginary parts
    for each matrix).
    """
    rng = np.random.default_rng(seed)
    vG, vH = fading.variances
    G = _cn(rng, (config.N, config.M), vG)
    H = tuple(_cn(rng, (config.M, nk), vH) for nk in config.Nk)
    return ChannelRealization(G=G, H=H, seed=int(seed))


def _pack(a: np.ndarray) -> dict:
    flat = np.asarray(a, dtype=complex).ravel(order="C")
    return {"shape": list(a.shape),
            "data": [[float(z.real), float(z.imag)] for z in flat]}


def _unpack(d: dict) -> np.ndarray:
    data = np.array(d["data"], dtype=float).reshape(-1, 2)
    return (data[:, 0] + 1j * data[:, 1]).reshape(d["shape"])


def realization_to_record(ch: ChannelRealization) -> dict:
    return {"seed": ch.seed, "G": _pack(ch.G), "H": [_pack(h) for h in ch.H]}


def realization_from_record(rec: dict) -> ChannelRealization:
    return ChannelRealization(G=_unpack(rec["G"]), H=tuple(_unpack(h) for h in rec["H"]),
                              seed=int(rec["seed"]))


def dump_realizations(realizations: Iterable[ChannelRealization], path) -> None:
    """Write one JSON record per line; floats use shortest round-trip repr."""
    path = Path(path)
    with path.open("w") as fh:
        for ch in realizations:
            fh.write(json.dumps(realization_to_record(ch)))
            fh.write("\n")


def load_realizations(path) -> Iterator[ChannelRealization]:
    with Path(path).open() as fh:
        for line in fh:
            if line.strip():
                yield realization_from_record(json.loads(line))


def channel_checksum(ch: ChannelRealization) -> str:
    h = hashlib.sha256()
    for a in (ch.G, *ch.H):
        h.update(np.ascontiguousarray(a, dtype=complex).tobytes())
    return h.hexdigest()
