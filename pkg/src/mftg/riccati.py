"""Backward integration of the coupled matrix Riccati systems.

Every solution concept reduces to the same template, integrated in reversed
time ``tau = T - t`` from the terminal weights:

    dY/dtau = Qrun + Y A + A^T Y + sum_{s'} q_{ss'} (Y(s') - Y(s))
              - Y Cown Y - sum_{j != i} (Y_j Cj Y + Y Cj Y_j)

with one block for the deviation coefficient ``P`` (drift ``B1``) and one
for the mean coefficient ``Pbar`` (drift ``B1 + B1bar``). The variants only
differ in which channel matrices enter ``Cown`` and ``Cj``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import game_model as gm
from . import matrix_core as mc

BLOWUP_NORM = 1e8
DEFAULT_STEPS = 2000


@dataclass(frozen=True)
class RiccatiSolution:
    """Gridded solution, forward time ``grid[0] = 0 < ... < grid[-1] = T``.

    ``P`` and ``Pbar`` have shape ``(n, S, K+1, d, d)`` and ``delta`` has
    shape ``(n, S, K+1)``, where ``n`` is 1 for team variants. After a
    blow-up, entries earlier than ``blowup_time`` are NaN.
    """

    grid: np.ndarray
    P: np.ndarray
    Pbar: np.ndarray
    delta: np.ndarray
    variant: str
    wellposed: bool = True
    blowup_time: float | None = None
    channel_positive: bool = True
    warnings: tuple = ()
    max_asymmetry: float = 0.0
    diffusion_weight: float = 1.0
    backend: str = field(default="", compare=False)

    @property
    def steps(self):
        return len(self.grid) - 1

    @property
    def num_players(self):
        return self.P.shape[0]

    def at_start(self, player=0, regime=0):
        """``(P, Pbar, delta)`` at ``t = 0``."""
        return self.P[player, regime, 0], self.Pbar[player, regime, 0], float(self.delta[player, regime, 0])


def is_team_variant(variant):
    return not variant.endswith("nash")


def default_diffusion_weight(spec):
    """Weight of ``<P S0, S0>`` in the offset equation.

    With i.i.d. unit-variance entries in the d x d Brownian increment the
    Ito correction of ``<P X, X>`` is ``d * <P S0, S0>``; with the
    trace-normalized convention (entry variance ``1/d``) it is exactly
    ``<P S0, S0>``.
    """
    return float(spec.dim) if spec.noise_covariance == "iid" else 1.0


def _noise_matrix(spec, s, weight):
    S0 = spec.S0[s]
    out = weight * (S0 @ S0.T)
    for atom in spec.jumps:
        M = atom.amplitude[s]
        out = out + atom.intensity * (M @ M.T)
    return out


def pack(spec, variant, diffusion_weight=None):
    """Coefficient arrays of the packed system for ``variant``.

    Returns a dict with ``Y0, D0, A, Qrun, Cown, Ccross, gen, noise``.
    """
    if variant not in gm.VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if diffusion_weight is None:
        diffusion_weight = default_diffusion_weight(spec)
    S, d = spec.num_regimes, spec.dim
    risk = variant.startswith("rs_")
    team = is_team_variant(variant)
    N = 1 if team else spec.num_players

    A = np.stack([spec.B1, spec.B1 + spec.B1bar])
    SS = np.einsum("sab,scb->sac", spec.S0, spec.S0)
    Y0 = np.zeros((2, N, S, d, d))
    Qrun = np.zeros((2, N, S, d, d))
    Cown = np.zeros((2, N, S, d, d))
    Ccross = np.zeros((2, N, S, d, d))

    if team:
        Q0, Q0bar, QT0, QT0bar = spec.team_weights()
        Y0[0, 0], Y0[1, 0] = QT0, QT0 + QT0bar
        Qrun[0, 0], Qrun[1, 0] = Q0, Q0 + Q0bar
        for s in range(S):
            dev, mean = gm.team_channels(spec, s)
            if risk:
                dev = dev - 2.0 * spec.team_lambda * SS[s]
            Cown[0, 0, s], Cown[1, 0, s] = dev, mean
    else:
        for i, p in enumerate(spec.players):
            Y0[0, i], Y0[1, i] = p.QT, p.QT + p.QTbar
            Qrun[0, i], Qrun[1, i] = p.Q, p.Q + p.Qbar
            for s in range(S):
                dev = gm.channel_matrix(p.B2[s], p.R[s])
                mean = gm.channel_matrix(p.B2[s] + p.B2bar[s], p.R[s] + p.Rbar[s])
                Ccross[0, i, s], Ccross[1, i, s] = dev, mean
                if risk:
                    dev = dev - 2.0 * p.lam * SS[s]
                Cown[0, i, s], Cown[1, i, s] = dev, mean

    noise = np.stack([_noise_matrix(spec, s, diffusion_weight) for s in range(S)])
    return {
        "Y0": Y0,
        "D0": np.zeros((N, S)),
        "A": A,
        "Qrun": Qrun,
        "Cown": Cown,
        "Ccross": Ccross,
        "gen": np.array(spec.generator.rates),
        "noise": noise,
        "diffusion_weight": float(diffusion_weight),
    }


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def solve(spec, variant, steps=DEFAULT_STEPS, diffusion_weight=None, backend=None):
    """Integrate the Riccati system of ``variant`` on a uniform grid.

    Raises :class:`mftg.game_model.ValidationError` when a blocking
    hypothesis fails. Indefinite net channels are recorded in
    ``channel_positive`` and ``warnings``; finite-time escape is recorded
    in ``wellposed`` and ``blowup_time``.
    """
    steps = int(steps)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    report = gm.validate(spec, variant)
    if report.blocking:
        raise gm.ValidationError(report)
    soft = [v for v in report.violations if not v.blocking]
    packed = pack(spec, variant, diffusion_weight)
    T = spec.horizon
    if T == 0.0:
        steps = 0
    grid = np.linspace(0.0, T, steps + 1)
    h = T / steps if steps else 0.0

    if steps:
        hist_Y, hist_D, done, max_asym, blown = _kernels.riccati_rk4(
            packed["Y0"], packed["D0"], packed["A"], packed["Qrun"], packed["Cown"],
            packed["Ccross"], packed["gen"], packed["noise"], h, steps, BLOWUP_NORM, backend=backend,
        )
    else:
        hist_Y, hist_D, done, max_asym, blown = packed["Y0"][None], packed["D0"][None], 0, 0.0, False

    blowup_time = None
    if blown:
        # rows 0..done-1 are valid; the state first exceeded the bound at tau = done*h
        hist_Y[done:] = np.nan
        hist_D[done:] = np.nan
        blowup_time = float(T - done * h)

    # (K+1, G, N, S, d, d) reversed time -> (N, S, K+1, d, d) forward time
    Y = np.moveaxis(hist_Y[::-1], 0, 3)
    P = np.ascontiguousarray(Y[0])
    Pbar = np.ascontiguousarray(Y[1])
    delta = np.ascontiguousarray(np.moveaxis(hist_D[::-1], 0, 2))
    # the terminal row is the exact terminal data
    P[:, :, -1] = packed["Y0"][0]
    Pbar[:, :, -1] = packed["Y0"][1]
    delta[:, :, -1] = 0.0
    _freeze(grid, P, Pbar, delta)

    warnings = list(report.warnings) + [v.message for v in soft]
    if blown:
        warnings.append(f"solution escapes the norm bound {BLOWUP_NORM:g} near t={blowup_time:.6g}")
    return RiccatiSolution(
        grid=grid,
        P=P,
        Pbar=Pbar,
        delta=delta,
        variant=variant,
        wellposed=not blown,
        blowup_time=blowup_time,
        channel_positive=not soft,
        warnings=tuple(warnings),
        max_asymmetry=float(max_asym),
        diffusion_weight=packed["diffusion_weight"],
        backend=backend or ("numba" if _kernels.use_numba() else "numpy"),
    )


def solve_rn_nash(spec, steps=DEFAULT_STEPS, **kw):
    return solve(spec, "rn_nash", steps, **kw)


def solve_rn_coop(spec, steps=DEFAULT_STEPS, **kw):
    return solve(spec, "rn_coop", steps, **kw)


def solve_rn_adversarial(spec, steps=DEFAULT_STEPS, **kw):
    return solve(spec, "rn_adversarial", steps, **kw)


def solve_rs_nash(spec, steps=DEFAULT_STEPS, **kw):
    return solve(spec, "rs_nash", steps, **kw)


def solve_rs_coop(spec, steps=DEFAULT_STEPS, **kw):
    return solve(spec, "rs_coop", steps, **kw)


def solve_rs_adversarial(spec, steps=DEFAULT_STEPS, **kw):
    return solve(spec, "rs_adversarial", steps, **kw)


SOLVERS = {
    "rn_nash": solve_rn_nash,
    "rn_coop": solve_rn_coop,
    "rn_adversarial": solve_rn_adversarial,
    "rs_nash": solve_rs_nash,
    "rs_coop": solve_rs_coop,
    "rs_adversarial": solve_rs_adversarial,
}


def lambda_bar(spec, player=None, rtol=1e-12):
    """Largest risk index keeping ``C - 2 lam S0 S0^T`` positive definite.

    ``C`` is the control channel of ``player``, or the summed channel of all
    players when ``player`` is None (full cooperation). Found by bisection on
    the positive-definiteness predicate; with several regimes the smallest
    bound over regimes is returned. Returns ``inf`` when the noise vanishes
    and ``-inf`` when no real index makes the channel positive definite.
    """
    bounds = []
    for s in range(spec.num_regimes):
        if player is None:
            C, _ = gm.team_channels(spec, s)
        else:
            p = spec.players[player]
            C = gm.channel_matrix(p.B2[s], p.R[s])
        SS = spec.S0[s] @ spec.S0[s].T
        bounds.append(_bisect_bound(C, SS, rtol))
    return float(min(bounds))


def _bisect_bound(C, SS, rtol):
    if not np.any(SS):
        return np.inf

    def ok(lam):
        return mc.is_positive_definite(C - 2.0 * lam * SS)

    if ok(0.0):
        lo, hi = 0.0, 1.0
        while ok(hi):
            lo, hi = hi, 2.0 * hi
            if hi > 1e300:
                return np.inf
    else:
        lo, hi = -1.0, 0.0
        while not ok(lo):
            lo, hi = 2.0 * lo, lo
            if lo < -1e300:
                return -np.inf
    while hi - lo > rtol * max(abs(lo), abs(hi), 1e-300):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
