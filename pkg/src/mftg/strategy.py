"""Feedback laws built from a Riccati solution, and the conditional-mean
ODE they induce along a regime path."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matrix_core as mc


class IllPosedSolutionError(ValueError):
    """The Riccati solution escaped in finite time; no law can be built."""


@dataclass(frozen=True)
class RegimePath:
    """Right-continuous piecewise-constant path: ``states[k]`` holds on
    ``[times[k], times[k+1])`` and the last state holds up to ``horizon``."""

    times: np.ndarray
    states: np.ndarray
    horizon: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=np.int64)
        if times.shape != states.shape or times.size == 0 or times[0] != 0.0:
            raise ValueError("regime path needs matching times/states starting at t=0")
        if np.any(np.diff(times) <= 0):
            raise ValueError("regime switching times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @classmethod
    def constant(cls, state, horizon):
        return cls(np.zeros(1), np.array([state]), float(horizon))

    def at(self, t):
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        return self.states[idx]

    def on_grid(self, grid):
        """Regime at each grid point (left-endpoint sampling)."""
        return self.at(grid)


@dataclass(frozen=True)
class FeedbackLaw:
    """Gain schedules ``K`` (deviation) and ``Kbar`` (mean), each of shape
    ``(n, S, K+1, d, d)`` on ``grid``. Player ``i`` plays

        U_i = -K_i (X - Xbar) - Kbar_i Xbar,    Ubar_i = -Kbar_i Xbar.
    """

    grid: np.ndarray
    K: np.ndarray
    Kbar: np.ndarray
    variant: str = ""

    def __post_init__(self):
        for name in ("grid", "K", "Kbar"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.K.shape != self.Kbar.shape or self.K.shape[2] != self.grid.size:
            raise ValueError("gain tables do not match the grid")
        if not (np.all(np.isfinite(self.K)) and np.all(np.isfinite(self.Kbar))):
            raise ValueError("gains must be finite")

    @property
    def num_players(self):
        return self.K.shape[0]

    def _interp(self, table, times):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        grid = self.grid
        if grid.size == 1:
            return np.repeat(table[:, :, :1], times.size, axis=2)
        idx = np.clip(np.searchsorted(grid, times, side="right") - 1, 0, grid.size - 2)
        w = ((times - grid[idx]) / (grid[idx + 1] - grid[idx]))[None, None, :, None, None]
        w = np.clip(w, 0.0, 1.0)
        return (1.0 - w) * table[:, :, idx] + w * table[:, :, idx + 1]

    def on_grid(self, times):
        """Linearly interpolated ``(K, Kbar)`` at ``times``."""
        return self._interp(self.K, times), self._interp(self.Kbar, times)

    def gains(self, t, s):
        """``(K, Kbar)`` of every player at time ``t`` in regime ``s``."""
        K, Kb = self.on_grid([t])
        return K[:, s, 0], Kb[:, s, 0]

    def control(self, t, s, X, Xbar):
        """Per-player ``(U_i, Ubar_i)`` lists at a single state."""
        K, Kb = self.gains(t, s)
        dev = np.asarray(X) - np.asarray(Xbar)
        out = []
        for i in range(self.num_players):
            ubar = -Kb[i] @ Xbar
            out.append((-K[i] @ dev + ubar, ubar))
        return out

    def scaled(self, player, k_factor=1.0, kbar_factor=1.0):
        """Copy with player ``player``'s gains multiplied by the factors."""
        K, Kb = np.array(self.K), np.array(self.Kbar)
        K[player] *= k_factor
        Kb[player] *= kbar_factor
        return FeedbackLaw(self.grid, K, Kb, self.variant)

    def shifted(self, player, dK=None, dKbar=None):
        """Copy with constant additive perturbations of one player's gains."""
        K, Kb = np.array(self.K), np.array(self.Kbar)
        if dK is not None:
            K[player] += np.asarray(dK)
        if dKbar is not None:
            Kb[player] += np.asarray(dKbar)
        return FeedbackLaw(self.grid, K, Kb, self.variant)


def synthesize(spec, sol):
    """Equilibrium gains ``K = R^{-1} B2^T P`` and
    ``Kbar = (R + Rbar)^{-1} (B2 + B2bar)^T Pbar`` for every player.

    Team variants share one ``P``; each player still uses its own channel.
    """
    if not sol.wellposed:
        raise IllPosedSolutionError(f"solution blows up at t={sol.blowup_time}")
    n, S = spec.num_players, spec.num_regimes
    shape = (n, S) + sol.P.shape[2:]
    K, Kb = np.empty(shape), np.empty(shape)
    shared = sol.num_players == 1 and n > 1
    for i, p in enumerate(spec.players):
        src = 0 if shared else i
        for s in range(S):
            Rinv = mc.inverse(p.R[s])
            RRinv = mc.inverse(p.R[s] + p.Rbar[s])
            K[i, s] = Rinv @ p.B2[s].T @ sol.P[src, s]
            Kb[i, s] = RRinv @ (p.B2[s] + p.B2bar[s]).T @ sol.Pbar[src, s]
    return FeedbackLaw(sol.grid, K, Kb, sol.variant)


def _mean_drift(spec, Kbar_t, s):
    """Closed-loop drift matrix of the conditional mean in regime ``s``."""
    A = spec.B1[s] + spec.B1bar[s]
    for i, p in enumerate(spec.players):
        A = A - (p.B2[s] + p.B2bar[s]) @ Kbar_t[i, s]
    return A


def mean_transfer(spec, law, grid):
    """One-step RK4 transfer matrices of the conditional-mean ODE.

    Returns ``Phi`` of shape ``(S, K, d, d)`` with
    ``Xbar(t_{k+1}) = Phi[s, k] Xbar(t_k)`` when the regime is ``s`` on the
    step. Gains are interpolated at both endpoints and the midpoint.
    """
    grid = np.asarray(grid, dtype=float)
    S, d = spec.num_regimes, spec.dim
    steps = grid.size - 1
    Phi = np.empty((S, steps, d, d))
    if steps == 0:
        return Phi
    h = np.diff(grid)
    mids = 0.5 * (grid[:-1] + grid[1:])
    _, Kb_nodes = law.on_grid(grid)
    _, Kb_mids = law.on_grid(mids)
    eye = np.eye(d)
    for s in range(S):
        A_nodes = np.stack([_mean_drift(spec, Kb_nodes[:, :, k], s) for k in range(steps + 1)])
        A_mids = np.stack([_mean_drift(spec, Kb_mids[:, :, k], s) for k in range(steps)])
        hk = h[:, None, None]
        k1 = A_nodes[:-1]
        k2 = A_mids @ (eye + 0.5 * hk * k1)
        k3 = A_mids @ (eye + 0.5 * hk * k2)
        k4 = A_nodes[1:] @ (eye + hk * k3)
        Phi[s] = eye + (hk / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return Phi


def propagate_mean(spec, law, regime_path, steps, Xbar0=None):
    """Conditional mean on a uniform ``steps`` grid along ``regime_path``.

    Returns ``(grid, Xbar)`` with ``Xbar`` of shape ``(steps+1, d, d)``.
    The regime on each step is the one at its left endpoint.
    """
    grid = np.linspace(0.0, spec.horizon, int(steps) + 1)
    Phi = mean_transfer(spec, law, grid)
    regimes = regime_path.on_grid(grid)
    out = np.empty((grid.size, spec.dim, spec.dim))
    out[0] = spec.X0 if Xbar0 is None else Xbar0
    for k in range(grid.size - 1):
        out[k + 1] = Phi[regimes[k], k] @ out[k]
    return grid, out
