"""Reference schemes: the random design and alternating optimization (AO)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ChannelRealization, DesignState, SystemConfig, design_rate, herm, sum_rate_direct
from .so import (
    SoOptions,
    ewbcd_phases,
    gain_matrix,
    greedy_selection,
    iterative_waterfilling,
    random_phases,
    selected_channels,
)

__all__ = ["AoOptions", "ao_solve", "random_design", "random_design_rate"]


@dataclass(frozen=True)
class AoOptions:
    max_rounds: int = 30
    tol: float = 1e-6
    so: SoOptions = field(default_factory=SoOptions)

    def __post_init__(self):
        if self.max_rounds < 1 or not self.tol > 0:
            raise ValueError("max_rounds and tol must be positive")


def random_design(channels: ChannelRealization, config: SystemConfig, seed: int = 0) -> DesignState:
    """Random antenna subset and phases; each user sends ``p_k / N_k`` per antenna."""
    rng = np.random.default_rng([int(seed), 2])
    s = np.zeros(config.N)
    s[rng.choice(config.N, size=config.T, replace=False)] = 1.0
    phi = random_phases(rng, config.M, config.q_bits)
    P = [np.sqrt(pk / nk) * np.eye(nk, lk, dtype=complex)
         for nk, lk, pk in zip(config.Nk, config.Lk, config.pk)]
    return DesignState(s=s, phi=phi, P=P)


def random_design_rate(design: DesignState, channels: ChannelRealization,
                       config: SystemConfig) -> float:
    """Rate of a random design with covariances ``Q_k = p_k / N_k * I``."""
    rows = np.flatnonzero(design.s > 0.5)
    cov = [(pk / nk) * np.eye(nk) for nk, pk in zip(config.Nk, config.pk)]
    return sum_rate_direct(rows, channels.G, design.phi, channels.H, cov, config.sigma2)


def ao_solve(channels: ChannelRealization, config: SystemConfig,
             opts: AoOptions = AoOptions(), seed: int = 0
             ) -> tuple[DesignState, list[float]]:
    """Alternate phase design, greedy selection and water-filling.

    Starts from :func:`random_design`. Each round runs EWBCD on the SO gain
    objective warm-started from the current phases, reselects antennas
    greedily for the current phases and covariances, then water-fills on the
    new selection. Stops when the true sum rate changes by less than
    ``opts.tol`` (relative) between rounds. Returns the last design and the
    per-round sum rates.
    """
    channels.check(config)
    start = random_design(channels, config, seed)
    phi = start.phi
    cov = [(pk / nk) * np.eye(nk, dtype=complex) for nk, pk in zip(config.Nk, config.pk)]
    Hhat = gain_matrix(channels.G, channels.H, config.pk, config.Nk)
    design = start
    trace: list[float] = []
    for _ in range(opts.max_rounds):
        phi = ewbcd_phases(Hhat, config.q_bits, phi, opts.so)
        Ht = sum(Hk @ Qk @ herm(Hk) for Hk, Qk in zip(channels.H, cov))
        GPhi = channels.G * phi[None, :]
        s = greedy_selection(GPhi @ Ht @ herm(GPhi), config.sigma2, config.T)
        P = iterative_waterfilling(selected_channels(channels, s, phi, config.sigma2),
                                   config.pk, config.Lk, opts.so)
        cov = [Pk @ herm(Pk) for Pk in P]
        design = DesignState(s=s, phi=phi.copy(), P=P)
        trace.append(design_rate(design, channels, config.sigma2))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= opts.tol * max(abs(trace[-2]), 1.0):
            break
    return design, trace
