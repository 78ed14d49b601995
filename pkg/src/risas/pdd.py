"""Joint antenna selection, RIS phase and precoder design by penalty dual decomposition.

The problem is relaxed through the WMMSE reformulation and the auxiliary
copies ``sbar`` (of the selection vector) and ``v`` (of the phases). The
inner loop runs block coordinate descent on the augmented Lagrangian

    tr(W E) - ln det W + penalty

over seven blocks, each of which is an exact marginal minimizer. The outer
loop either moves the duals or shrinks the penalty parameter depending on
how much the equality constraints are still violated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .errors import IllConditionedError, InternalConsistencyError, NumericalFailure
from .model import (
    ChannelRealization,
    DesignState,
    SystemConfig,
    WmmseState,
    effective_channel,
    herm,
    mse_matrix,
    nearest_phase,
    phase_set,
    sum_rate,
    wmmse_objective,
)

__all__ = [
    "DualVariables",
    "PddDiagnostics",
    "PddOptions",
    "PddState",
    "augmented_objective",
    "constraint_violation",
    "dual_update",
    "init_state",
    "inner_bcd",
    "pdd_solve",
    "penalty_term",
    "precoder_power",
    "solve_power_constrained",
    "update_phase",
    "update_precoder",
    "update_receiver",
    "update_sbar",
    "update_selection",
    "update_v",
    "update_weight",
]

log = logging.getLogger(__name__)


@dataclass
class DualVariables:
    xi: float
    mu: np.ndarray
    lam: np.ndarray
    tau: np.ndarray

    @classmethod
    def zeros(cls, N: int, M: int) -> "DualVariables":
        return cls(0.0, np.zeros(N), np.zeros(N), np.zeros(M, dtype=complex))

    def copy(self) -> "DualVariables":
        return DualVariables(float(self.xi), self.mu.copy(), self.lam.copy(), self.tau.copy())


@dataclass
class PddState:
    """Primal and dual iterates of the PDD method.

    ``eta`` is the violation threshold of the outer loop; ``phi`` is the
    relaxed (unconstrained) phase vector and ``v`` its quantized copy.
    """

    wmmse: WmmseState
    s: np.ndarray
    sbar: np.ndarray
    phi: np.ndarray
    v: np.ndarray
    P: list[np.ndarray]
    duals: DualVariables
    rho: float = 1.0
    eta: float = 1.0
    chi: float = 0.8
    outer_iter: int = 0

    def __post_init__(self):
        if not self.rho > 0 or not self.eta > 0 or not 0 < self.chi < 1:
            raise ValueError("need rho > 0, eta > 0 and 0 < chi < 1")

    def copy(self) -> "PddState":
        return PddState(
            wmmse=WmmseState(self.wmmse.W.copy(), self.wmmse.U.copy(),
                             None if self.wmmse.E is None else self.wmmse.E.copy()),
            s=self.s.copy(), sbar=self.sbar.copy(), phi=self.phi.copy(), v=self.v.copy(),
            P=[p.copy() for p in self.P], duals=self.duals.copy(), rho=self.rho,
            eta=self.eta, chi=self.chi, outer_iter=self.outer_iter)


@dataclass(frozen=True)
class PddOptions:
    """Loop controls of :func:`pdd_solve`.

    The defaults shrink the penalty parameter slowly (``chi = 0.8``) and
    lower the violation threshold to ``0.9 h``. The published schedule,
    ``chi = 0.1`` with ``eta = chi * h``, is
    ``PddOptions(chi=0.1, eta_scale=None)``; on small instances it drives
    ``rho`` down before the selection settles and often stalls above the
    ``1e-4`` violation target.
    """

    inner_tol: float = 1e-9
    inner_max_iter: int = 300
    outer_tol: float = 1e-4
    outer_max_iter: int = 100
    rho0: float = 1.0
    eta0: float = 1.0
    chi: float = 0.8
    # threshold update eta <- eta_scale * h; None means eta_scale = chi
    eta_scale: float | None = 0.9
    # relative power accuracy of the multiplier search; a loose value lets the
    # precoder block raise the objective by about lam * p * bisect_tol
    bisect_tol: float = 1e-15
    # WMMSE sweeps over (W, U, P) after rounding; 1 is a single precoder update
    final_precoder_sweeps: int = 1

    def __post_init__(self):
        if min(self.inner_tol, self.outer_tol, self.rho0, self.eta0, self.bisect_tol) <= 0:
            raise ValueError("tolerances and initial parameters must be positive")
        if not 0 < self.chi < 1:
            raise ValueError("chi must lie in (0, 1)")
        if self.eta_scale is not None and not 0 < self.eta_scale < 1:
            raise ValueError("eta_scale must lie in (0, 1)")
        if self.inner_max_iter < 1 or self.outer_max_iter < 1 or self.final_precoder_sweeps < 1:
            raise ValueError("iteration limits must be positive")


@dataclass
class PddDiagnostics:
    """Per-outer-iteration records and per-inner-loop objective traces."""

    outer: list[dict] = field(default_factory=list)
    inner_traces: list[list[float]] = field(default_factory=list)
    converged: bool = False
    final_rate: float = float("nan")

    @property
    def n_outer(self) -> int:
        return len(self.outer)

    def records(self) -> list[dict]:
        return [dict(r) for r in self.outer]


# --------------------------------------------------------------------------
# objective pieces


def penalty_term(state: PddState, T: int) -> float:
    rho, d = state.rho, state.duals
    s, sbar = state.s, state.sbar
    acc = (s.sum() - T + rho * d.xi) ** 2
    acc += np.sum((s - sbar + rho * d.mu) ** 2)
    acc += np.sum((s * (1 - sbar) + rho * d.lam) ** 2)
    acc += np.sum(np.abs(state.phi - state.v + rho * d.tau) ** 2)
    return float(acc) / (2 * rho)


def _hbar(state: PddState, channels: ChannelRealization) -> np.ndarray:
    return effective_channel(channels.G, state.phi, channels.H, state.P)


def augmented_objective(state: PddState, channels: ChannelRealization,
                        config: SystemConfig) -> float:
    """WMMSE objective plus penalty at the current iterate."""
    E = mse_matrix(state.wmmse.U, state.s, _hbar(state, channels), config.sigma2)
    return wmmse_objective(state.wmmse.W, E) + penalty_term(state, config.T)


def constraint_violation(state: PddState, T: int) -> float:
    s, sbar = state.s, state.sbar
    terms = [abs(s.sum() - T)]
    terms.extend(np.abs(state.phi - state.v))
    terms.extend(np.abs(sbar - s))
    terms.extend(np.abs(s * (1 - sbar)))
    return float(max(terms))


def dual_update(state: PddState, T: int) -> DualVariables:
    """One multiplier step, consistent with the signs inside :func:`penalty_term`."""
    rho, d, s, sbar = state.rho, state.duals, state.s, state.sbar
    return DualVariables(
        xi=float(d.xi + (s.sum() - T) / rho),
        mu=d.mu + (s - sbar) / rho,
        lam=d.lam + s * (1 - sbar) / rho,
        tau=d.tau + (state.phi - state.v) / rho,
    )


# --------------------------------------------------------------------------
# block updates


def update_weight(E: np.ndarray) -> np.ndarray:
    E = 0.5 * (E + herm(E))
    ev = np.linalg.eigvalsh(E)
    if ev[0] < 1e-14 * max(ev[-1], 0.0) or ev[0] <= 0:
        raise IllConditionedError(f"MSE matrix is numerically singular (eigenvalues {ev[0]:.3e}..{ev[-1]:.3e})")
    W = np.linalg.inv(E)
    return 0.5 * (W + herm(W))


def update_receiver(s, Hbar: np.ndarray, sigma2: float) -> np.ndarray:
    A = np.asarray(s, dtype=float)[:, None] * Hbar
    R = A @ herm(A)
    R = 0.5 * (R + herm(R))
    R[np.diag_indices_from(R)] += sigma2
    return sla.solve(R, A, assume_a="pos")


def update_sbar(s, rho: float, mu, lam) -> np.ndarray:
    """Closed-form minimizer of the penalty over ``sbar``, entry by entry."""
    s = np.asarray(s, dtype=float)
    a = 1.0 + s ** 2
    b = s + rho * np.asarray(mu) + s ** 2 + s * rho * np.asarray(lam)
    return b / a


def _selection_system(U, W, Hbar, sbar, duals: DualVariables, rho: float, T: int):
    N = Hbar.shape[0]
    A = U @ W @ herm(U)
    B = Hbar @ herm(Hbar)
    Q = np.real(A * B.T)
    Q = 0.5 * (Q + Q.T)
    Q += (np.ones((N, N)) + np.eye(N) + np.diag((1 - sbar) ** 2)) / (2 * rho)
    q = np.sum((U @ W) * Hbar.conj(), axis=1)
    c = (rho * duals.xi - T) * np.ones(N) + (rho * duals.mu - sbar) + rho * (1 - sbar) * duals.lam
    g = 2 * q.real - c / rho
    return Q, g


def update_selection(U, W, Hbar, sbar, duals: DualVariables, rho: float, T: int) -> np.ndarray:
    """Unconstrained minimizer ``s = Q^{-1} g / 2`` of the selection subproblem."""
    Q, g = _selection_system(U, W, Hbar, np.asarray(sbar, dtype=float), duals, rho, T)
    try:
        cf = sla.cho_factor(Q, lower=True)
    except np.linalg.LinAlgError as exc:
        raise InternalConsistencyError("selection matrix is not positive definite") from exc
    return 0.5 * sla.cho_solve(cf, g)


def _phase_system(U, W, G, s, H, P, v, tau, rho):
    Kmat = np.concatenate([Hk @ Pk for Hk, Pk in zip(H, P)], axis=1)
    GD = herm(np.asarray(s, dtype=float)[:, None] * G)  # G^H Delta
    GDU = GD @ U
    B1 = GDU @ W @ herm(GDU)
    B2 = Kmat @ herm(Kmat)
    B = B1 * B2.T
    B = 0.5 * (B + herm(B))
    B[np.diag_indices_from(B)] += 1.0 / (2 * rho)
    b = np.sum((GDU @ W) * Kmat.conj(), axis=1) + (v - rho * tau) / (2 * rho)
    return B, b


def update_phase(U, W, G, s, H, P, v, tau, rho: float) -> np.ndarray:
    """Unconstrained minimizer ``phi = B^{-1} b``; unit modulus is enforced through ``v``."""
    B, b = _phase_system(U, W, G, s, H, P, v, tau, rho)
    try:
        cf = sla.cho_factor(B, lower=True)
    except np.linalg.LinAlgError as exc:
        raise InternalConsistencyError("phase matrix is not positive definite") from exc
    return sla.cho_solve(cf, b)


def update_v(phi, tau, rho: float, q_bits) -> np.ndarray:
    return np.asarray(nearest_phase(np.asarray(phi) + rho * np.asarray(tau), q_bits))


def precoder_power(eigs: np.ndarray, weights: np.ndarray, lam: float) -> float:
    """``sum_i weights_i / (eigs_i + lam)^2``, the transmit power at multiplier ``lam``."""
    return float(np.sum(weights / (eigs + lam) ** 2))


def solve_power_constrained(C: np.ndarray, D: np.ndarray, p: float,
                            bisect_tol: float = 1e-15) -> tuple[np.ndarray, float]:
    """Minimize ``tr(P^H C P) - 2 Re tr(P^H D)`` subject to ``tr(P P^H) <= p``.

    Returns the minimizer ``(C + lam I)^{-1} D`` and the multiplier ``lam``.
    """
    if not np.any(D):
        return np.zeros_like(D, dtype=complex), 0.0
    C = 0.5 * (C + herm(C))
    eigs, V = np.linalg.eigh(C)
    eigs = np.clip(eigs, 0.0, None)
    Dt = herm(V) @ D
    weights = np.sum(np.abs(Dt) ** 2, axis=1)
    scale = max(eigs[-1], 0.0)
    null = eigs <= 1e-12 * scale if scale > 0 else np.ones_like(eigs, dtype=bool)
    wscale = weights.max()
    active_null = null & (weights > 1e-24 * wscale)

    if not np.any(active_null):
        # pseudo-inverse solution at lam = 0
        inv = np.where(null, 0.0, 1.0 / np.where(null, 1.0, eigs))
        if np.sum(weights * inv ** 2) <= p:
            return V @ (inv[:, None] * Dt), 0.0

    def power(lam):
        with np.errstate(divide="ignore"):
            return precoder_power(eigs, weights, lam)

    lo, hi = 0.0, 1.0
    for _ in range(200):
        if power(hi) < p:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NumericalFailure("could not bracket the power multiplier")
    for _ in range(2000):
        if abs(power(hi) - p) < bisect_tol * p:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if power(mid) > p:
            lo = mid
        else:
            hi = mid
    lam = hi
    return V @ (Dt / (eigs + lam)[:, None]), lam


def update_precoder(k: int, G, phi, s, Hk, U, W, pk: float, streams: slice,
                    bisect_tol: float = 1e-15) -> tuple[np.ndarray, float]:
    """Power-constrained minimizer for user ``k``'s precoder.

    ``streams`` selects user ``k``'s rows of ``W``. Returns ``(P_k, lam)``.
    """
    s = np.asarray(s, dtype=float)
    O = herm(Hk) @ (np.conj(phi)[:, None] * (herm(G) @ (s[:, None] * U)))
    C = O @ W @ herm(O)
    D = O @ herm(W[streams, :])
    return solve_power_constrained(C, D, pk, bisect_tol)


def _streams(config: SystemConfig) -> list[slice]:
    off = config.stream_offsets
    return [slice(int(off[k]), int(off[k + 1])) for k in range(config.K)]


# --------------------------------------------------------------------------
# loops


def _refresh_wmmse(state: PddState, channels, config) -> None:
    """Receiver then weights, both at their closed forms."""
    Hbar = _hbar(state, channels)
    U = update_receiver(state.s, Hbar, config.sigma2)
    E = mse_matrix(U, state.s, Hbar, config.sigma2)
    state.wmmse = WmmseState(W=update_weight(E), U=U, E=E)


def bcd_sweep(state: PddState, channels: ChannelRealization, config: SystemConfig,
              opts: PddOptions) -> None:
    """One pass W -> U -> sbar -> s -> phi -> v -> P, in place."""
    sigma2, T = config.sigma2, config.T
    Hbar = _hbar(state, channels)
    E = mse_matrix(state.wmmse.U, state.s, Hbar, sigma2)
    W = update_weight(E)
    U = update_receiver(state.s, Hbar, sigma2)
    state.wmmse = WmmseState(W=W, U=U, E=None)

    d = state.duals
    state.sbar = update_sbar(state.s, state.rho, d.mu, d.lam)
    state.s = update_selection(U, W, Hbar, state.sbar, d, state.rho, T)
    state.phi = update_phase(U, W, channels.G, state.s, channels.H, state.P, state.v,
                             d.tau, state.rho)
    state.v = update_v(state.phi, d.tau, state.rho, config.q_bits)
    P = list(state.P)
    for k, sl in enumerate(_streams(config)):
        P[k], _ = update_precoder(k, channels.G, state.phi, state.s, channels.H[k], U, W,
                                  config.pk[k], sl, opts.bisect_tol)
    state.P = P


def inner_bcd(state: PddState, channels: ChannelRealization, config: SystemConfig,
              opts: PddOptions = PddOptions()) -> tuple[PddState, list[float]]:
    """Run BCD sweeps on the augmented Lagrangian until the decrease stalls.

    The returned trace starts with the objective at entry and has one value
    per sweep after that.
    """
    state = state.copy()
    prev = augmented_objective(state, channels, config)
    trace = [prev]
    for _ in range(opts.inner_max_iter):
        bcd_sweep(state, channels, config, opts)
        cur = augmented_objective(state, channels, config)
        trace.append(cur)
        if prev - cur <= opts.inner_tol * max(abs(prev), 1.0):
            break
        prev = cur
    return state, trace


def init_state(channels: ChannelRealization, config: SystemConfig,
               opts: PddOptions = PddOptions(), seed: int = 0) -> PddState:
    """Start from a uniform selection, random phases and random full-power precoders."""
    rng = np.random.default_rng([int(seed), 1])
    N, M, T = config.N, config.M, config.T
    s = np.full(N, T / N)
    if config.continuous:
        phi = np.exp(2j * np.pi * rng.random(M))
    else:
        phi = rng.choice(phase_set(config.q_bits), size=M)
    P = []
    for nk, lk, pk in zip(config.Nk, config.Lk, config.pk):
        X = rng.standard_normal((nk, lk)) + 1j * rng.standard_normal((nk, lk))
        P.append(X * np.sqrt(pk / np.vdot(X, X).real))
    state = PddState(
        wmmse=WmmseState(W=np.eye(config.L, dtype=complex),
                         U=np.zeros((N, config.L), dtype=complex)),
        s=s, sbar=s.copy(), phi=phi.copy(), v=phi.copy(), P=P,
        duals=DualVariables.zeros(N, M), rho=opts.rho0, eta=opts.eta0, chi=opts.chi)
    _refresh_wmmse(state, channels, config)
    return state


def round_selection(s: np.ndarray, T: int) -> np.ndarray:
    """Indicator of the ``T`` largest entries, ties to the lowest index."""
    order = np.argsort(-np.asarray(s, dtype=float), kind="stable")
    out = np.zeros(len(s))
    out[order[:T]] = 1.0
    return out


def _rounded_rate(state: PddState, channels, config) -> float:
    s = round_selection(state.s, config.T)
    Hbar = effective_channel(channels.G, state.v, channels.H, state.P)
    return sum_rate(s, Hbar, config.sigma2)


def finalize(state: PddState, channels: ChannelRealization, config: SystemConfig,
             opts: PddOptions = PddOptions()) -> DesignState:
    """Round to a feasible design and re-optimize the precoders for it."""
    st = state.copy()
    st.s = round_selection(st.s, config.T)
    st.phi = st.v.copy()
    for _ in range(opts.final_precoder_sweeps):
        _refresh_wmmse(st, channels, config)
        U, W = st.wmmse.U, st.wmmse.W
        st.P = [update_precoder(k, channels.G, st.phi, st.s, channels.H[k], U, W,
                                config.pk[k], sl, opts.bisect_tol)[0]
                for k, sl in enumerate(_streams(config))]
    return DesignState(s=st.s, phi=st.phi, P=st.P)


def pdd_solve(channels: ChannelRealization, config: SystemConfig,
              opts: PddOptions = PddOptions(), seed: int = 0
              ) -> tuple[DesignState, PddDiagnostics]:
    """Run the full double loop and return a feasible design plus diagnostics."""
    channels.check(config)
    state = init_state(channels, config, opts, seed)
    diag = PddDiagnostics()
    for t in range(opts.outer_max_iter):
        state, trace = inner_bcd(state, channels, config, opts)
        diag.inner_traces.append(trace)
        h = constraint_violation(state, config.T)
        rho_used, eta_used = state.rho, state.eta
        if h < state.eta:
            state.duals = dual_update(state, config.T)
        else:
            state.rho *= state.chi
        eta_scale = state.chi if opts.eta_scale is None else opts.eta_scale
        state.eta = eta_scale * h if h > 0 else state.eta * eta_scale
        state.outer_iter = t + 1
        diag.outer.append({
            "outer_iter": t + 1,
            "h": h,
            "rho": rho_used,
            "eta": eta_used,
            "sum_rate": sum_rate(state.s, _hbar(state, channels), config.sigma2),
            "sum_rate_rounded": _rounded_rate(state, channels, config),
        })
        if h < opts.outer_tol:
            diag.converged = True
            break
    if not diag.converged:
        log.warning("PDD stopped after %d outer iterations without reaching h < %g",
                    opts.outer_max_iter, opts.outer_tol)
    design = finalize(state, channels, config, opts)
    Hbar = effective_channel(channels.G, design.phi, channels.H, design.P)
    diag.final_rate = sum_rate(design.s, Hbar, config.sigma2)
    return design, diag
