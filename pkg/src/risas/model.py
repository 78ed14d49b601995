"""System model, sum-rate metric and WMMSE objective.

Everything in here is a pure function of its inputs. The solvers in
:mod:`risas.pdd`, :mod:`risas.so` and :mod:`risas.benchmarks` are all
checked against these evaluations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

__all__ = [
    "CONTINUOUS",
    "ChannelRealization",
    "DesignState",
    "SystemConfig",
    "WmmseState",
    "DegeneratePhaseWarning",
    "effective_channel",
    "herm",
    "mse_matrix",
    "nearest_phase",
    "phase_set",
    "selection_delta",
    "sum_rate",
    "sum_rate_direct",
    "design_rate",
    "wmmse_objective",
]

#: Sentinel for infinite phase resolution.
CONTINUOUS = math.inf

MAX_QBITS = 16


class DegeneratePhaseWarning(RuntimeWarning):
    """Raised (as a warning) when a phase is requested for a zero value."""


def herm(x: np.ndarray) -> np.ndarray:
    return x.conj().T


def _is_continuous(q_bits) -> bool:
    return q_bits is None or (isinstance(q_bits, float) and math.isinf(q_bits))


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions and budgets of one experiment.

    Powers are linear (mW). ``q_bits`` is an int, or :data:`CONTINUOUS`
    for unquantized phases.
    """

    N: int
    T: int
    M: int
    K: int
    Nk: tuple[int, ...]
    Lk: tuple[int, ...]
    pk: tuple[float, ...]
    sigma2: float
    q_bits: float = 4

    def __post_init__(self):
        object.__setattr__(self, "Nk", tuple(int(n) for n in self.Nk))
        object.__setattr__(self, "Lk", tuple(int(n) for n in self.Lk))
        object.__setattr__(self, "pk", tuple(float(p) for p in self.pk))
        if min(self.N, self.T, self.M, self.K) < 1:
            raise ValueError("all dimensions must be positive")
        if not self.T < self.N:
            raise ValueError(f"need T < N, got T={self.T}, N={self.N}")
        if not (len(self.Nk) == len(self.Lk) == len(self.pk) == self.K):
            raise ValueError("Nk, Lk and pk must have K entries")
        if any(n < 1 for n in self.Nk) or any(l < 1 for l in self.Lk):
            raise ValueError("per-user antenna and stream counts must be positive")
        if any(l > n for l, n in zip(self.Lk, self.Nk)):
            raise ValueError("need L_k <= N_k for every user")
        if any(not p > 0 for p in self.pk) or not self.sigma2 > 0:
            raise ValueError("powers must be positive")
        if not self.continuous:
            q = self.q_bits
            if int(q) != q or not 1 <= q <= MAX_QBITS:
                raise ValueError(f"q_bits must be an integer in [1, {MAX_QBITS}] or CONTINUOUS")
            object.__setattr__(self, "q_bits", int(q))

    @property
    def continuous(self) -> bool:
        return _is_continuous(self.q_bits)

    @property
    def L(self) -> int:
        return sum(self.Lk)

    @property
    def stream_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.Lk)])

    @classmethod
    def uniform(cls, N, T, M, K, Nk=3, Lk=3, p=1.0, sigma2=1e-12, q_bits=4):
        """Config with identical users, as in the standard simulation setup."""
        return cls(N=N, T=T, M=M, K=K, Nk=(Nk,) * K, Lk=(Lk,) * K,
                   pk=(p,) * K, sigma2=sigma2, q_bits=q_bits)

    def replace(self, **changes) -> "SystemConfig":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class ChannelRealization:
    """RIS-to-BS channel ``G`` (N x M) and UT-to-RIS channels ``H[k]`` (M x N_k)."""

    G: np.ndarray
    H: tuple[np.ndarray, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "H", tuple(self.H))

    def check(self, config: SystemConfig) -> None:
        if self.G.shape != (config.N, config.M):
            raise ValueError(f"G has shape {self.G.shape}, expected {(config.N, config.M)}")
        if len(self.H) != config.K:
            raise ValueError(f"expected {config.K} user channels, got {len(self.H)}")
        for k, (Hk, nk) in enumerate(zip(self.H, config.Nk)):
            if Hk.shape != (config.M, nk):
                raise ValueError(f"H[{k}] has shape {Hk.shape}, expected {(config.M, nk)}")
        if not (np.all(np.isfinite(self.G)) and all(np.all(np.isfinite(h)) for h in self.H)):
            raise ValueError("channel entries must be finite")


@dataclass
class DesignState:
    """Selection vector ``s``, RIS phases ``phi`` and precoders ``P``."""

    s: np.ndarray
    phi: np.ndarray
    P: list[np.ndarray]

    def check(self, config: SystemConfig, atol: float = 1e-12) -> None:
        """Raise ``ValueError`` unless the design satisfies C1, C2 and C3."""
        s = np.asarray(self.s)
        if s.shape != (config.N,) or not np.all((s == 0) | (s == 1)):
            raise ValueError("s must be a binary vector of length N")
        if int(s.sum()) != config.T:
            raise ValueError(f"s selects {int(s.sum())} antennas, expected {config.T}")
        if np.max(np.abs(np.abs(self.phi) - 1.0)) > atol:
            raise ValueError("phases must have unit modulus")
        if not config.continuous:
            levels = phase_set(config.q_bits)
            dist = np.min(np.abs(self.phi[:, None] - levels[None, :]), axis=1)
            if np.max(dist) > atol:
                raise ValueError("phases must belong to the quantized set")
        for k, (Pk, pk) in enumerate(zip(self.P, config.pk)):
            if Pk.shape != (config.Nk[k], config.Lk[k]):
                raise ValueError(f"P[{k}] has shape {Pk.shape}")
            if np.vdot(Pk, Pk).real > pk * (1 + 1e-9):
                raise ValueError(f"P[{k}] violates its power budget")

    def covariances(self) -> list[np.ndarray]:
        return [Pk @ herm(Pk) for Pk in self.P]


@dataclass
class WmmseState:
    """Weight ``W``, hypothetical receiver ``U`` and MSE matrix ``E``."""

    W: np.ndarray
    U: np.ndarray
    E: np.ndarray | None = None


def phase_set(q_bits: int) -> np.ndarray:
    """The ``2**q_bits`` uniformly spaced unit-modulus phases, starting at 1."""
    if isinstance(q_bits, bool) or int(q_bits) != q_bits or not 1 <= q_bits <= MAX_QBITS:
        raise ValueError(f"q_bits must be an integer in [1, {MAX_QBITS}], got {q_bits!r}")
    n = 2 ** int(q_bits)
    levels = np.exp(2j * np.pi * np.arange(n) / n)
    # exact values on the axes keep membership tests clean
    levels.real[np.abs(levels.real) < 1e-15] = 0.0
    levels.imag[np.abs(levels.imag) < 1e-15] = 0.0
    return levels


def nearest_phase(z, q_bits) -> np.ndarray | complex:
    """Map ``z`` (scalar or array) to the closest element of the phase set.

    Closeness is ``Re{v * conj(z)}``; ties go to the lowest set index. For
    ``CONTINUOUS`` the result is ``exp(1j * angle(z))``. A zero input yields
    1 together with a :class:`DegeneratePhaseWarning`.
    """
    z_arr = np.asarray(z, dtype=complex)
    zero = z_arr == 0
    if np.any(zero):
        warnings.warn("phase of zero requested, using 1", DegeneratePhaseWarning, stacklevel=2)
    if _is_continuous(q_bits):
        out = np.where(zero, 1.0 + 0j, np.exp(1j * np.angle(z_arr)))
    else:
        levels = phase_set(q_bits)
        n = levels.size
        # candidate indices: floor/ceil of the angle on the grid
        t = np.mod(np.angle(z_arr) * n / (2 * np.pi), n)
        lo = np.floor(t).astype(int) % n
        hi = (lo + 1) % n
        score_lo = (levels[lo] * z_arr.conj()).real
        score_hi = (levels[hi] * z_arr.conj()).real
        # prefer the smaller index on (near) ties
        tie = np.abs(score_lo - score_hi) <= 1e-12 * np.maximum(np.abs(z_arr), 1e-300)
        pick_hi = (score_hi > score_lo) & ~tie
        pick_hi |= tie & (hi < lo)
        idx = np.where(pick_hi, hi, lo)
        out = np.where(zero, levels[0], levels[idx])
    if np.ndim(z) == 0:
        return complex(out)
    return out


def selection_delta(s) -> np.ndarray:
    return np.diag(np.asarray(s, dtype=float))


def effective_channel(G, phi, H: Sequence[np.ndarray], P: Sequence[np.ndarray]) -> np.ndarray:
    """Stack ``G diag(phi) H_k P_k`` column-wise over users."""
    G = np.atleast_2d(G)
    phi = np.atleast_1d(phi)
    if len(H) != len(P):
        raise ValueError("H and P must have the same number of users")
    if G.shape[1] != phi.shape[0]:
        raise ValueError("G and phi dimensions disagree")
    GPhi = G * phi[None, :]
    blocks = []
    for Hk, Pk in zip(H, P):
        Hk, Pk = np.atleast_2d(Hk), np.atleast_2d(Pk)
        if Hk.shape[0] != phi.shape[0] or Hk.shape[1] != Pk.shape[0]:
            raise ValueError("channel/precoder dimensions disagree")
        blocks.append(GPhi @ (Hk @ Pk))
    return np.concatenate(blocks, axis=1)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("inputs must be finite")


def logdet_gram(A: np.ndarray, sigma2: float) -> float:
    """Natural-log ``det(I + A^H A / sigma2)`` via Cholesky.

    By Sylvester's identity this equals ``ln det(I + A A^H / sigma2)``.
    """
    gram = herm(A) @ A / sigma2
    gram = 0.5 * (gram + herm(gram))
    gram[np.diag_indices_from(gram)] += 1.0
    c = np.linalg.cholesky(gram)
    return 2.0 * float(np.sum(np.log(np.abs(np.diag(c)))))


def sum_rate(s, Hbar, sigma2: float) -> float:
    """``log2 det(I + diag(s) Hbar Hbar^H diag(s) / sigma2)`` in bit/s/Hz."""
    s = np.asarray(s, dtype=float)
    Hbar = np.atleast_2d(np.asarray(Hbar, dtype=complex))
    _check_finite(s, Hbar)
    if not sigma2 > 0 or not np.isfinite(sigma2):
        raise ValueError("sigma2 must be positive and finite")
    if Hbar.shape[0] != s.shape[0]:
        raise ValueError("s and Hbar dimensions disagree")
    return logdet_gram(s[:, None] * Hbar, sigma2) / math.log(2)


def sum_rate_direct(rows, G, phi, H, Qcov, sigma2: float) -> float:
    """Sum rate with an explicit T x N row-selection matrix and covariances.

    Literal evaluation of ``log2 det(I_T + sum_k S G Phi H_k Q_k H_k^H Phi^H G^H S^H / sigma2)``.
    """
    rows = [int(r) for r in rows]
    G = np.atleast_2d(G)
    if len(set(rows)) != len(rows):
        raise ValueError("selected antenna indices must be distinct")
    if any(r < 0 or r >= G.shape[0] for r in rows):
        raise ValueError("antenna index out of range")
    S = np.zeros((len(rows), G.shape[0]))
    S[np.arange(len(rows)), rows] = 1.0
    Phi = np.diag(np.atleast_1d(phi))
    acc = np.eye(len(rows), dtype=complex)
    for Hk, Qk in zip(H, Qcov):
        F = S @ G @ Phi @ np.atleast_2d(Hk)
        acc = acc + F @ np.atleast_2d(Qk) @ herm(F) / sigma2
    sign, logdet = np.linalg.slogdet(acc)
    return float(logdet) / math.log(2)


def design_rate(design: DesignState, channels: ChannelRealization, sigma2: float) -> float:
    """Sum rate of a design on a channel realization."""
    Hbar = effective_channel(channels.G, design.phi, channels.H, design.P)
    return sum_rate(design.s, Hbar, sigma2)


def mse_matrix(U, s, Hbar, sigma2: float) -> np.ndarray:
    """MSE matrix of the linear receiver ``U`` on the channel ``diag(s) Hbar``."""
    A = np.asarray(s, dtype=float)[:, None] * Hbar
    if U.shape != A.shape:
        raise ValueError("receiver and channel dimensions disagree")
    R = herm(U) @ A
    R[np.diag_indices_from(R)] -= 1.0
    E = R @ herm(R) + sigma2 * (herm(U) @ U)
    return 0.5 * (E + herm(E))


def wmmse_objective(W, E) -> float:
    """``tr(W E) - ln det(W)`` for Hermitian positive definite ``W``."""
    try:
        c = sla.cholesky(0.5 * (W + herm(W)), lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("weight matrix is not positive definite") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(c).real)))
    return float(np.real(np.sum(W * E.T))) - logdet
