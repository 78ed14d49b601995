"""Low-complexity sequential design: phases, then antennas, then precoders.

1. RIS phases maximize the effective channel gain ``phi^H Hhat phi`` by
   element-wise coordinate ascent over the quantized phase set.
2. Antennas are picked greedily on ``log det(I + X_SS / sigma2)``.
3. Precoders come from iterative water-filling on the selected channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .model import (
    ChannelRealization,
    DesignState,
    SystemConfig,
    herm,
    nearest_phase,
    phase_set,
)

__all__ = [
    "SoOptions",
    "WaterfillResult",
    "ewbcd_phases",
    "gain_matrix",
    "greedy_order",
    "greedy_selection",
    "iterative_waterfilling",
    "mac_sum_rate",
    "random_phases",
    "selected_channels",
    "so_solve",
    "water_fill",
]


@dataclass(frozen=True)
class SoOptions:
    ewbcd_sweeps: int = 20
    ewbcd_tol: float = 1e-6
    iwf_max_rounds: int = 100
    iwf_tol: float = 1e-12
    wf_tol: float = 1e-10

    def __post_init__(self):
        if min(self.ewbcd_tol, self.iwf_tol, self.wf_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.ewbcd_sweeps < 1 or self.iwf_max_rounds < 1:
            raise ValueError("iteration limits must be positive")


def gain_matrix(G, H, p, Nk=None, cov=None) -> np.ndarray:
    """``(G^H G) o Htilde^T`` with ``Htilde = sum_k H_k Q_k H_k^H``.

    ``Q_k`` defaults to ``p_k / N_k * I``; pass ``cov`` to use other
    covariances. The result is Hermitian positive semidefinite.
    """
    if cov is None:
        Nk = [h.shape[1] for h in H] if Nk is None else Nk
        Ht = sum((pk / nk) * (Hk @ herm(Hk)) for Hk, pk, nk in zip(H, p, Nk))
    else:
        Ht = sum(Hk @ Qk @ herm(Hk) for Hk, Qk in zip(H, cov))
    Hhat = (herm(G) @ G) * Ht.T
    return 0.5 * (Hhat + herm(Hhat))


def _phase_gain(phi, Hhat) -> float:
    return float(np.real(np.vdot(phi, Hhat @ phi)))


def ewbcd_phases(Hhat: np.ndarray, q_bits, phi_init, opts: SoOptions = SoOptions()
                 ) -> np.ndarray:
    """Coordinate ascent on ``phi^H Hhat phi`` over the phase set.

    Sweeps ``m = 0..M-1`` in order; each step sets ``phi_m`` to the phase
    closest to its coupling ``sum_{m' != m} Hhat[m, m'] phi[m']``, which is
    the exact coordinate maximizer. A zero coupling leaves ``phi_m`` as is.
    """
    phi = np.array(phi_init, dtype=complex)
    M = phi.size
    diag = np.diag(Hhat).copy()
    obj = _phase_gain(phi, Hhat)
    for _ in range(opts.ewbcd_sweeps):
        prev = obj
        changed = False
        for m in range(M):
            c = Hhat[m] @ phi - diag[m] * phi[m]
            if c == 0:
                continue
            new = nearest_phase(c, q_bits)
            # keep the incumbent when it is already a maximizer
            if np.real(np.conj(new) * c) <= np.real(np.conj(phi[m]) * c) + 1e-15 * abs(c):
                continue
            phi[m] = new
            changed = True
        obj = _phase_gain(phi, Hhat)
        if not changed or obj - prev <= opts.ewbcd_tol * max(abs(prev), 1e-300):
            break
    return phi


def greedy_order(X: np.ndarray, sigma2: float, T: int) -> list[int]:
    """Antenna indices in the order the greedy search adds them.

    Each round picks the antenna with the largest log-det gain, computed as
    the Schur complement of the current Cholesky factor (ties go to the
    lowest index).
    """
    N = X.shape[0]
    if not 1 <= T <= N:
        raise ValueError("need 1 <= T <= N")
    A = X / sigma2
    A = 0.5 * (A + herm(A))
    chosen: list[int] = []
    Lfac = np.zeros((0, 0), dtype=complex)
    remaining = list(range(N))
    for _ in range(T):
        best, best_gain, best_col = None, -np.inf, None
        for n in remaining:
            b = A[chosen, n] if chosen else np.zeros(0, dtype=complex)
            y = sla.solve_triangular(Lfac, b, lower=True) if chosen else b
            schur = 1.0 + A[n, n].real - np.vdot(y, y).real
            gain = math.log(max(schur, 1e-300))
            if best is None or gain > best_gain + 1e-12 * max(1.0, abs(best_gain)):
                best, best_gain, best_col = n, gain, (y, schur)
        y, schur = best_col
        k = len(chosen)
        newL = np.zeros((k + 1, k + 1), dtype=complex)
        newL[:k, :k] = Lfac
        newL[k, :k] = y.conj()
        newL[k, k] = math.sqrt(schur)
        Lfac = newL
        chosen.append(best)
        remaining.remove(best)
    return chosen


def greedy_selection(X: np.ndarray, sigma2: float, T: int) -> np.ndarray:
    """Binary selection vector with ``T`` ones chosen by greedy log-det search."""
    s = np.zeros(X.shape[0])
    s[greedy_order(X, sigma2, T)] = 1.0
    return s


@dataclass
class WaterfillResult:
    powers: np.ndarray
    level: float


def water_fill(gains, p: float, tol: float = 1e-10) -> WaterfillResult:
    """Maximize ``sum log(1 + g_i x_i)`` subject to ``sum x_i = p``, ``x >= 0``.

    The water level is bracketed by bisection; the final level is then
    solved exactly on the active set so the budget is met to rounding.
    """
    g = np.asarray(gains, dtype=float)
    pos = g > 0
    if not np.any(pos):
        return WaterfillResult(np.zeros_like(g), math.inf)
    inv = np.full(g.shape, np.inf)
    inv[pos] = 1.0 / g[pos]
    lo, hi = float(inv[pos].min()), float(inv[pos].min() + p)

    def used(level):
        return np.sum(np.clip(level - inv, 0.0, None))

    while hi - lo > tol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        if used(mid) > p:
            hi = mid
        else:
            lo = mid
    active = inv < 0.5 * (lo + hi)
    level = (p + inv[active].sum()) / active.sum()
    powers = np.where(active, level - inv, 0.0)
    # the exact level can shift the boundary by rounding only
    powers = np.clip(powers, 0.0, None)
    powers *= p / powers.sum()
    return WaterfillResult(powers, float(level))


def mac_sum_rate(Geff, cov) -> float:
    """``log2 det(I + sum_k G_k Q_k G_k^H)`` for whitened channels ``G_k``."""
    T = Geff[0].shape[0]
    A = np.eye(T, dtype=complex)
    for Gk, Qk in zip(Geff, cov):
        A += Gk @ Qk @ herm(Gk)
    A = 0.5 * (A + herm(A))
    return 2.0 * float(np.sum(np.log(np.diag(np.linalg.cholesky(A)).real))) / math.log(2)


def _single_user(Gk, Z, pk, Lk, tol):
    """Best covariance for one user against the noise-plus-interference ``Z``."""
    Zc = sla.cho_factor(Z, lower=True)
    A = herm(Gk) @ sla.cho_solve(Zc, Gk)
    A = 0.5 * (A + herm(A))
    ev, V = np.linalg.eigh(A)
    order = np.argsort(ev)[::-1][:Lk]
    ev, V = np.clip(ev[order], 0.0, None), V[:, order]
    wf = water_fill(ev, pk, tol)
    Pk = V * np.sqrt(wf.powers)[None, :]
    return Pk, ev, wf


def iterative_waterfilling(Geff, p, Lk=None, opts: SoOptions = SoOptions(),
                           return_trace: bool = False):
    """Cyclic single-user water-filling for the multiple-access sum rate.

    ``Geff[k]`` is user ``k``'s channel already restricted to the selected
    antennas and scaled by ``1/sigma``. Each user keeps at most ``Lk[k]``
    eigenmodes; unused columns of ``P_k`` are zero.
    """
    K = len(Geff)
    Lk = [g.shape[1] for g in Geff] if Lk is None else list(Lk)
    T = Geff[0].shape[0]
    P = [np.zeros((g.shape[1], l), dtype=complex) for g, l in zip(Geff, Lk)]
    cov = [np.zeros((g.shape[1], g.shape[1]), dtype=complex) for g in Geff]
    trace = [mac_sum_rate(Geff, cov)]
    total = np.eye(T, dtype=complex)
    for _ in range(opts.iwf_max_rounds):
        prev = trace[-1]
        for k in range(K):
            Gk = Geff[k]
            Z = total - Gk @ cov[k] @ herm(Gk)
            Z = 0.5 * (Z + herm(Z))
            P[k], _, _ = _single_user(Gk, Z, p[k], Lk[k], opts.wf_tol)
            cov[k] = P[k] @ herm(P[k])
            total = Z + Gk @ cov[k] @ herm(Gk)
            trace.append(mac_sum_rate(Geff, cov))
        if abs(trace[-1] - prev) <= opts.iwf_tol * max(abs(prev), 1.0):
            break
    if return_trace:
        return P, trace
    return P


def selected_channels(channels: ChannelRealization, s, phi, sigma2: float):
    """``sigma^{-1} S G Phi H_k`` on the selected rows, one per user."""
    rows = np.flatnonzero(np.asarray(s) > 0.5)
    GPhi = channels.G[rows] * np.asarray(phi)[None, :] / math.sqrt(sigma2)
    return [GPhi @ Hk for Hk in channels.H]


def random_phases(rng: np.random.Generator, M: int, q_bits) -> np.ndarray:
    if q_bits is None or (isinstance(q_bits, float) and math.isinf(q_bits)):
        return np.exp(2j * np.pi * rng.random(M))
    return rng.choice(phase_set(q_bits), size=M)


def so_solve(channels: ChannelRealization, config: SystemConfig,
             opts: SoOptions = SoOptions(), seed: int = 0) -> DesignState:
    """Phases, then greedy selection, then iterative water-filling."""
    channels.check(config)
    rng = np.random.default_rng([int(seed), 3])
    Hhat = gain_matrix(channels.G, channels.H, config.pk, config.Nk)
    phi = ewbcd_phases(Hhat, config.q_bits, random_phases(rng, config.M, config.q_bits), opts)
    Ht = sum((pk / nk) * (Hk @ herm(Hk))
             for Hk, pk, nk in zip(channels.H, config.pk, config.Nk))
    GPhi = channels.G * phi[None, :]
    X = GPhi @ Ht @ herm(GPhi)
    s = greedy_selection(X, config.sigma2, config.T)
    Geff = selected_channels(channels, s, phi, config.sigma2)
    P = iterative_waterfilling(Geff, config.pk, config.Lk, opts)
    return DesignState(s=s, phi=phi, P=P)
