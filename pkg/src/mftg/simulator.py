"""Monte Carlo of the controlled jump-diffusion with regime switching.

Paths are processed in fixed-size blocks. Every block draws from its own
Philox streams keyed by ``(master_seed, block, purpose)``, so results do not
depend on the number of threads or on how blocks are scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._accel import configure_threads, use_numba
from .strategy import RegimePath, mean_transfer

BLOCK_SIZE = 2048
CHUNK_STEPS = 250
_REGIMES, _BROWNIAN, _JUMPS = 0, 1, 2


@dataclass(frozen=True)
class SimulationConfig:
    num_paths: int
    steps: int
    master_seed: int = 42
    antithetic: bool = False
    brownian: str | None = None  # "iid" or "trace_normalized"; None uses the game setting
    record_paths: int = 0
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        if self.num_paths < 1 or self.steps < 1:
            raise ValueError("num_paths and steps must be >= 1")
        if self.block_size < 2:
            raise ValueError("block_size must be >= 2")
        if self.antithetic and (self.num_paths % 2 or self.block_size % 2):
            raise ValueError("antithetic sampling needs an even path count and block size")
        if self.brownian not in (None, "iid", "trace_normalized"):
            raise ValueError(f"unknown Brownian convention {self.brownian!r}")


@dataclass(frozen=True)
class SimulationBatch:
    """Per-path outputs of one run.

    ``costs``, ``control_costs`` and ``completed_square`` have shape
    ``(num_paths, n)``. ``completed_square`` is None unless reference gains
    were supplied. Recorded paths (the first ``record_paths`` paths) are in
    ``X``, ``Xbar`` (``(m, K+1, d, d)``) and ``U`` (``(m, K, n, d, d)``).
    """

    grid: np.ndarray
    costs: np.ndarray
    control_costs: np.ndarray
    completed_square: np.ndarray | None
    X_T: np.ndarray
    Xbar_T: np.ndarray
    regimes: np.ndarray | None
    X: np.ndarray | None
    Xbar: np.ndarray | None
    U: np.ndarray | None
    pairs: np.ndarray | None
    valid: bool
    invalid_paths: int

    @property
    def num_paths(self):
        return self.costs.shape[0]

    @property
    def team_cost(self):
        return self.costs.sum(axis=1)


def _rng(master_seed, block, purpose):
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(block), int(purpose)])
    return np.random.Generator(np.random.Philox(ss))


def sample_regime_grid(generator, s0, grid, num_paths, rng):
    """Regime of each path at each grid point, shape ``(num_paths, K+1)``.

    Holding times are exponential with the exit rate of the current regime;
    the next regime is drawn proportionally to the off-diagonal rates. A
    switch at time ``tau`` affects the grid points ``t_k >= tau``.
    """
    rates = np.asarray(generator.rates, dtype=float)
    S = rates.shape[0]
    K = grid.size - 1
    out = np.zeros((num_paths, K + 1), dtype=np.int64)
    out[:, 0] = s0
    if S == 1 or K == 0:
        out[:] = s0
        return out
    T = grid[-1]
    off = rates - np.diag(np.diag(rates))
    exit_rate = off.sum(axis=1)
    cum = np.cumsum(off, axis=1) / np.where(exit_rate > 0, exit_rate, 1.0)[:, None]
    h = T / K
    state = np.full(num_paths, s0, dtype=np.int64)
    t = np.zeros(num_paths)
    alive = exit_rate[state] > 0
    while np.any(alive):
        idx = np.nonzero(alive)[0]
        t[idx] += rng.exponential(size=idx.size) / exit_rate[state[idx]]
        hit = t[idx] <= T
        idx = idx[hit]
        alive[:] = False
        if idx.size == 0:
            break
        u = rng.random(idx.size)
        new = (u[:, None] >= cum[state[idx]]).sum(axis=1)
        new = np.minimum(new, S - 1)
        k = np.ceil(t[idx] / h).astype(np.int64)
        k = np.clip(k, 1, K)
        np.add.at(out, (idx, k), new - state[idx])
        state[idx] = new
        alive[idx] = exit_rate[new] > 0
    out[:, 1:] = out[:, 0:1] + np.cumsum(out[:, 1:], axis=1)
    return out


def sample_regime_path(generator, s0, horizon, seed):
    """One continuous-time regime path on ``[0, horizon]``."""
    rng = seed if isinstance(seed, np.random.Generator) else _rng(seed, 0, _REGIMES)
    rates = np.asarray(generator.rates, dtype=float)
    times, states = [0.0], [int(s0)]
    t, s = 0.0, int(s0)
    while True:
        row = rates[s].copy()
        row[s] = 0.0
        rate = row.sum()
        if rate <= 0:
            break
        t += rng.exponential() / rate
        if t > horizon:
            break
        s = int(rng.choice(row.size, p=row / rate))
        times.append(t)
        states.append(s)
    return RegimePath(np.array(times), np.array(states), float(horizon))


def _player_tables(spec):
    n, S, d = spec.num_players, spec.num_regimes, spec.dim
    names = ("B2", "B2bar", "Q", "Qbar", "R", "Rbar", "QT", "QTbar")
    return {nm: np.ascontiguousarray(np.stack([getattr(p, nm) for p in spec.players]).reshape(n, S, d, d))
            for nm in names}


def simulate(spec, law, cfg, reference=None, backend=None):
    """Euler-Maruyama paths under ``law``; ``reference`` (another law,
    usually the equilibrium) switches on the completed-square accumulator.

    The conditional mean follows the closed-loop mean ODE (one RK4 step
    per grid step) along each path's regime trajectory; the deviation
    ``X - Xbar`` takes the Euler-Maruyama step.
    """
    if law.num_players != spec.num_players:
        raise ValueError("law and spec disagree on the number of players")
    backend = backend or ("numba" if use_numba() else "numpy")
    if backend == "numba":
        configure_threads()
    n, S, d = spec.num_players, spec.num_regimes, spec.dim
    K = int(cfg.steps)
    grid = np.linspace(0.0, spec.horizon, K + 1)
    dt = spec.horizon / K
    brownian = cfg.brownian or spec.noise_covariance
    scale = math.sqrt(dt if brownian == "iid" else dt / d)

    Kd, Km = (np.ascontiguousarray(a) for a in law.on_grid(grid))
    if reference is not None:
        Krd, Krm = (np.ascontiguousarray(a) for a in reference.on_grid(grid))
    else:
        Krd = Krm = np.zeros((0, 1, 1, d, d))
    Phi = np.ascontiguousarray(mean_transfer(spec, law, grid))
    tab = _player_tables(spec)
    A, S0 = (np.ascontiguousarray(a) for a in (spec.B1, spec.S0))
    QQ = tab["Q"] + tab["Qbar"]
    RR = tab["R"] + tab["Rbar"]
    atoms = [a for a in spec.jumps if a.intensity > 0]
    nu = np.array([a.intensity for a in atoms], dtype=float)
    M = np.ascontiguousarray(np.stack([a.amplitude for a in atoms])) if atoms else np.zeros((0, S, d, d))
    natoms = nu.size

    P = cfg.num_paths
    costs = np.zeros((P, n))
    ctrl = np.zeros((P, n))
    cs = np.zeros((P, n)) if reference is not None else None
    X_T = np.empty((P, d, d))
    Xb_T = np.empty((P, d, d))
    nrec = min(int(cfg.record_paths), P, cfg.block_size)
    rec_X = np.zeros((nrec, K + 1, d, d))
    rec_Xb = np.zeros((nrec, K + 1, d, d))
    rec_U = np.zeros((nrec, K, n, d, d))
    rec_regs = None
    pairs = [] if cfg.antithetic else None

    for b, start in enumerate(range(0, P, cfg.block_size)):
        stop = min(start + cfg.block_size, P)
        m = stop - start
        half = m // 2 if cfg.antithetic else m
        rng_reg, rng_bm, rng_jump = (_rng(cfg.master_seed, b, purpose) for purpose in (_REGIMES, _BROWNIAN, _JUMPS))
        regs = sample_regime_grid(spec.generator, spec.initial_regime, grid, half, rng_reg)
        if cfg.antithetic:
            regs = np.concatenate([regs, regs])
            pairs.append(np.stack([np.arange(start, start + half), np.arange(start + half, stop)], axis=1))
        regs = np.ascontiguousarray(regs)
        X = np.ascontiguousarray(np.broadcast_to(spec.X0, (m, d, d)))
        Xb = X.copy()
        bc, bctrl = np.zeros((m, n)), np.zeros((m, n))
        bcs = np.zeros((m, n)) if reference is not None else np.zeros((m, 0))
        brec = nrec if b == 0 else 0
        views = (rec_X[:brec], rec_Xb[:brec], rec_U[:brec])
        for k0 in range(0, K, CHUNK_STEPS):
            nk = min(CHUNK_STEPS, K - k0)
            dW = rng_bm.standard_normal((nk, half, d, d)) * scale
            if cfg.antithetic:
                dW = np.concatenate([dW, -dW], axis=1)
            if natoms:
                dN = rng_jump.poisson(nu * dt, size=(nk, half, natoms)).astype(float)
                if cfg.antithetic:
                    dN = np.concatenate([dN, dN], axis=1)
            else:
                dN = np.zeros((nk, m, 0))
            X, Xb = _kernels.simulate_chunk(
                k0, nk, X, Xb, regs, Phi, Kd, Km, Krd, Krm, A, tab["B2"], S0,
                M, nu, tab["Q"], QQ, tab["R"], RR, np.ascontiguousarray(dW),
                np.ascontiguousarray(dN), dt, bc, bctrl, bcs, *views, backend=backend,
            )
        sK = regs[:, K]
        dev = X - Xb
        for j in range(n):
            QT, QTT = tab["QT"][j, sK], tab["QT"][j, sK] + tab["QTbar"][j, sK]
            bc[:, j] += np.sum((QT @ dev) * dev, axis=(1, 2)) + np.sum((QTT @ Xb) * Xb, axis=(1, 2))
        if brec:
            rec_X[:, K] = X[:brec]
            rec_Xb[:, K] = Xb[:brec]
            rec_regs = regs[:brec].copy()
        costs[start:stop] = bc
        ctrl[start:stop] = bctrl
        if cs is not None:
            cs[start:stop] = bcs
        X_T[start:stop] = X
        Xb_T[start:stop] = Xb

    finite = np.all(np.isfinite(costs), axis=1) & np.all(np.isfinite(X_T), axis=(1, 2))
    bad = int(P - finite.sum())
    return SimulationBatch(
        grid=grid,
        costs=costs,
        control_costs=ctrl,
        completed_square=cs,
        X_T=X_T,
        Xbar_T=Xb_T,
        regimes=rec_regs,
        X=rec_X if nrec else None,
        Xbar=rec_Xb if nrec else None,
        U=rec_U if nrec else None,
        pairs=np.concatenate(pairs) if cfg.antithetic else None,
        valid=bad == 0,
        invalid_paths=bad,
    )


# --------------------------------------------------------------------------
# Estimators


@dataclass(frozen=True)
class CostEstimate:
    risk_neutral_mean: float
    risk_neutral_stderr: float
    risk_sensitive_value: float
    risk_sensitive_stderr: float
    lam: float
    ess: float
    warnings: tuple = ()


def _units(x, pairs):
    """Independent sampling units: antithetic pairs are averaged."""
    x = np.asarray(x, dtype=float)
    if pairs is None:
        return x
    return 0.5 * (x[pairs[:, 0]] + x[pairs[:, 1]])


def mean_stderr(x, pairs=None):
    u = _units(x, pairs)
    if u.size < 2:
        return float(u.mean()), float("nan")
    return float(u.mean()), float(u.std(ddof=1) / math.sqrt(u.size))


def risk_sensitive_estimate(L, lam, pairs=None):
    """``(1/lam) log mean exp(lam L)`` with a delta-method standard error.

    Returns ``(value, stderr, ess)``. The exponentials are shifted by their
    maximum before summation.
    """
    L = np.asarray(L, dtype=float)
    if lam == 0.0:
        mean, se = mean_stderr(L, pairs)
        return mean, se, float(L.size)
    z = lam * L
    shift = float(np.max(z))
    w = np.exp(z - shift)
    wu = _units(w, pairs)
    m = float(wu.mean())
    se_m = float(wu.std(ddof=1) / math.sqrt(wu.size)) if wu.size > 1 else float("nan")
    value = (math.log(m) + shift) / lam
    ess = float(w.sum() ** 2 / np.sum(w * w))
    return value, se_m / (abs(lam) * m), ess


def estimate_costs(batch, lambdas=None, costs=None):
    """Risk-neutral and risk-sensitive estimates per column of ``costs``
    (default: the per-player realized costs of ``batch``)."""
    if not batch.valid:
        raise ValueError(f"batch has {batch.invalid_paths} non-finite paths")
    C = batch.costs if costs is None else np.asarray(costs, dtype=float).reshape(batch.num_paths, -1)
    lambdas = np.zeros(C.shape[1]) if lambdas is None else np.broadcast_to(np.asarray(lambdas, float), (C.shape[1],))
    out = []
    for j in range(C.shape[1]):
        mean, se = mean_stderr(C[:, j], batch.pairs)
        rs, rs_se, ess = risk_sensitive_estimate(C[:, j], float(lambdas[j]), batch.pairs)
        warnings = ()
        if ess < 100:
            warnings = (f"effective sample size {ess:.1f} below 100; risk-sensitive value unreliable",)
        out.append(CostEstimate(mean, se, rs, rs_se, float(lambdas[j]), ess, warnings))
    return out
