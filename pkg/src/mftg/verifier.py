"""Numerical checks of the equilibrium theory: ODE defects, value formulas
against Monte Carlo, deviation inequalities, the completed-square identity,
and the risk-sensitive / robust correspondences."""
from __future__ import annotations

import dataclasses
import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson

from . import game_model as gm
from . import matrix_core as mc
from . import riccati
from . import simulator as sm
from . import strategy as st

SIGMA = 3.0


@dataclass
class VerificationReport:
    check_name: str
    inputs_digest: str
    theoretical: object
    empirical: object
    stderr: object
    passed: bool
    runtime_ms: float = 0.0
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "check_name": self.check_name,
            "inputs_digest": self.inputs_digest,
            "theoretical": _jsonable(self.theoretical),
            "empirical": _jsonable(self.empirical),
            "stderr": _jsonable(self.stderr),
            "pass": bool(self.passed),
            "runtime_ms": float(self.runtime_ms),
            "details": _jsonable(self.details),
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


class _Timer:
    end = None

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.end = time.perf_counter()

    @property
    def ms(self):
        return 1e3 * ((self.end or time.perf_counter()) - self.start)


# --------------------------------------------------------------------------
# ODE defect of a gridded solution


def _channel(B2, R):
    return B2 @ np.linalg.solve(R, B2.T)


def _rates_coupling(gen, Y, s):
    out = np.zeros_like(Y[s])
    for s2 in range(len(Y)):
        if s2 != s:
            out = out + gen[s, s2] * (Y[s2] - Y[s])
    return out


def _terms(spec, variant):
    """Per-block coefficients written out player by player.

    Returns ``(Qrun, QT, own, cross, A)`` where the first four are lists
    over blocks (0: deviation, 1: mean) of ``[player][regime]`` matrices.
    """
    team = riccati.is_team_variant(variant)
    risk = variant.startswith("rs_")
    S = spec.num_regimes
    A = [[spec.B1[s] for s in range(S)], [spec.B1[s] + spec.B1bar[s] for s in range(S)]]
    players = spec.players
    dev_ch = [[_channel(p.B2[s], p.R[s]) for s in range(S)] for p in players]
    mean_ch = [[_channel(p.B2[s] + p.B2bar[s], p.R[s] + p.Rbar[s]) for s in range(S)] for p in players]
    SS = [spec.S0[s] @ spec.S0[s].T for s in range(S)]
    if team:
        lam = sum(p.lam for p in players)
        Qd = [[sum(p.Q[s] for p in players) for s in range(S)]]
        Qm = [[sum(p.Q[s] + p.Qbar[s] for p in players) for s in range(S)]]
        Td = [[sum(p.QT[s] for p in players) for s in range(S)]]
        Tm = [[sum(p.QT[s] + p.QTbar[s] for p in players) for s in range(S)]]
        own_d = [[sum(c[s] for c in dev_ch) - (2.0 * lam * SS[s] if risk else 0.0) for s in range(S)]]
        own_m = [[sum(c[s] for c in mean_ch) for s in range(S)]]
        cross_d = cross_m = None
    else:
        Qd = [[p.Q[s] for s in range(S)] for p in players]
        Qm = [[p.Q[s] + p.Qbar[s] for s in range(S)] for p in players]
        Td = [[p.QT[s] for s in range(S)] for p in players]
        Tm = [[p.QT[s] + p.QTbar[s] for s in range(S)] for p in players]
        own_d = [[dev_ch[i][s] - (2.0 * p.lam * SS[s] if risk else 0.0) for s in range(S)]
                 for i, p in enumerate(players)]
        own_m = mean_ch
        cross_d, cross_m = dev_ch, mean_ch
    return (Qd, Qm), (Td, Tm), (own_d, own_m), (cross_d, cross_m), A


def riccati_rhs(spec, variant, P, Pbar, delta, weight=1.0):
    """Time derivative ``d/dt`` of ``(P, Pbar, delta)`` at one instant.

    ``P`` and ``Pbar`` are ``(n, S, d, d)``, ``delta`` is ``(n, S)``.
    Written directly from the equations, independent of the packed solver.
    """
    Qrun, _, own, cross, A = _terms(spec, variant)
    gen = np.asarray(spec.generator.rates)
    S = spec.num_regimes
    out = []
    for g, Y in enumerate((P, Pbar)):
        dY = np.zeros_like(Y)
        for i in range(Y.shape[0]):
            for s in range(S):
                Yi = Y[i, s]
                rhs = Qrun[g][i][s] + Yi @ A[g][s] + A[g][s].T @ Yi + _rates_coupling(gen, Y[i], s)
                rhs = rhs - Yi @ own[g][i][s] @ Yi
                if cross[g] is not None:
                    for j in range(Y.shape[0]):
                        if j != i:
                            rhs = rhs - Y[j, s] @ cross[g][j][s] @ Yi - Yi @ cross[g][j][s] @ Y[j, s]
                dY[i, s] = -rhs
        out.append(dY)
    dD = np.zeros_like(delta)
    for i in range(delta.shape[0]):
        for s in range(S):
            S0 = spec.S0[s]
            src = weight * np.trace(S0.T @ P[i, s] @ S0)
            for atom in spec.jumps:
                M = atom.amplitude[s]
                src += atom.intensity * np.trace(M.T @ P[i, s] @ M)
            coupling = sum(gen[s, s2] * (delta[i, s2] - delta[i, s]) for s2 in range(S) if s2 != s)
            dD[i, s] = -(src + coupling)
    return out[0], out[1], dD


def residual_components(spec, sol, P=None, Pbar=None, delta=None):
    """Max Frobenius defect at the interval midpoints, per unknown.

    The solution is interpolated by cubic Hermite polynomials built from
    the node values and the node derivatives; the defect compares the
    derivative of the interpolant with the right-hand side at the midpoint.
    """
    P = sol.P if P is None else P
    Pbar = sol.Pbar if Pbar is None else Pbar
    delta = sol.delta if delta is None else delta
    grid = sol.grid
    K = grid.size - 1
    if K == 0:
        return {"P": 0.0, "Pbar": 0.0, "delta": 0.0}
    if not np.all(np.isfinite(P)):
        return {"P": float("inf"), "Pbar": float("inf"), "delta": float("inf")}
    w = sol.diffusion_weight
    f = lambda k: riccati_rhs(spec, sol.variant, P[:, :, k], Pbar[:, :, k], delta[:, :, k], w)  # noqa: E731
    worst = {"P": 0.0, "Pbar": 0.0, "delta": 0.0}
    F_next = f(0)
    for k in range(K):
        F_k, F_next = F_next, f(k + 1)
        h = grid[k + 1] - grid[k]
        values = (P, Pbar, delta)
        mids, dmids = [], []
        for y, fk, fn in zip(values, F_k, F_next):
            y0, y1 = y[:, :, k], y[:, :, k + 1]
            mids.append(0.5 * (y0 + y1) + h / 8.0 * (fk - fn))
            dmids.append(1.5 / h * (y1 - y0) - 0.25 * (fk + fn))
        Fm = riccati_rhs(spec, sol.variant, *mids, w)
        for name, dm, fm in zip(("P", "Pbar", "delta"), dmids, Fm):
            err = dm - fm
            if err.ndim > 2:
                val = float(np.max(np.sqrt(np.sum(err * err, axis=(-2, -1)))))
            else:
                val = float(np.max(np.abs(err)))
            worst[name] = max(worst[name], val)
    return worst


def riccati_residual(spec, sol):
    """Largest midpoint defect over players, regimes and unknowns."""
    return float(max(residual_components(spec, sol).values()))


# --------------------------------------------------------------------------
# Value formula versus Monte Carlo


def _evaluated_players(spec, variant):
    """Cost columns compared by the checks, with their risk indices.

    Nash variants compare each player's own cost; team variants compare
    the summed cost with the team index.
    """
    risk = variant.startswith("rs_")
    if riccati.is_team_variant(variant):
        return [("team", None, spec.team_lambda if risk else 0.0)]
    return [(f"player {i}", i, p.lam if risk else 0.0) for i, p in enumerate(spec.players)]


def _cost_column(batch, idx):
    return batch.team_cost if idx is None else batch.costs[:, idx]


def _matching_solution(spec, sol, cfg):
    weight = riccati.default_diffusion_weight(spec.replace(noise_covariance=cfg.brownian or spec.noise_covariance))
    if sol.diffusion_weight == weight:
        return sol
    return riccati.solve(spec, sol.variant, sol.steps, diffusion_weight=weight)


def theoretical_values(spec, sol):
    """Equilibrium value per compared column at ``t = 0``."""
    s0 = spec.initial_regime
    X0 = spec.X0
    out = []
    for _, idx, _ in _evaluated_players(spec, sol.variant):
        k = 0 if idx is None else idx
        # the deterministic initial state has no deviation from its mean
        out.append(mc.frobenius_inner(sol.Pbar[k, s0, 0] @ X0, X0) + float(sol.delta[k, s0, 0]))
    return out


def cost_formula_check(spec, sol, law, cfg, backend=None):
    """Compare the value formula with the Monte Carlo cost of ``law``."""
    with _Timer() as tm:
        sol = _matching_solution(spec, sol, cfg)
        batch = sm.simulate(spec, law, cfg, backend=backend)
        if not batch.valid:
            raise ValueError(f"simulation produced {batch.invalid_paths} non-finite paths")
        theo, emp, err, names = [], [], [], []
        warnings = []
        for (name, idx, lam), th in zip(_evaluated_players(spec, sol.variant), theoretical_values(spec, sol)):
            value, se, ess = sm.risk_sensitive_estimate(_cost_column(batch, idx), lam, batch.pairs)
            if lam != 0.0 and ess < 100:
                warnings.append(f"{name}: effective sample size {ess:.1f}")
            theo.append(th)
            emp.append(value)
            err.append(se)
            names.append(name)
        ok = all(abs(t - e) <= SIGMA * s for t, e, s in zip(theo, emp, err))
    return VerificationReport(
        "cost_formula", spec.digest(), theo, emp, err, ok, tm.ms,
        {"columns": names, "variant": sol.variant, "paths": cfg.num_paths, "steps": cfg.steps, "warnings": warnings},
    )


# --------------------------------------------------------------------------
# Deviation tests


def _influence(L, lam):
    """Per-path influence function of the (risk-sensitive) mean estimator."""
    L = np.asarray(L, dtype=float)
    if lam == 0.0:
        return float(L.mean()), L - L.mean()
    z = lam * L
    w = np.exp(z - z.max())
    m = w.mean()
    return (math.log(m) + z.max()) / lam, (w / m - 1.0) / lam


def _paired(L_new, L_ref, lam, pairs):
    v1, psi1 = _influence(L_new, lam)
    v0, psi0 = _influence(L_ref, lam)
    _, se = sm.mean_stderr(psi1 - psi0, pairs)
    return v1 - v0, se


def _deviating_role(spec, variant, player):
    if variant.endswith("adversarial") and spec.players[player].team == "attacker":
        return "attacker"
    return "defender"


def deviation_test(spec, sol, law, player, factors=(0.8, 1.2), cfg=None, backend=None):
    """Scale one player's gains and compare paired costs with equilibrium.

    Defenders and Nash players must not gain: perturbed minus equilibrium
    cost ``>= -3`` paired stderr. Attackers must not gain either, which for
    the maximizing side reads ``<= +3`` paired stderr.
    """
    with _Timer() as tm:
        cfg = cfg or sm.SimulationConfig(10_000, 200)
        cols = _evaluated_players(spec, sol.variant)
        if riccati.is_team_variant(sol.variant):
            _, idx, lam = cols[0]
        else:
            _, idx, lam = cols[player]
        role = _deviating_role(spec, sol.variant, player)
        base = sm.simulate(spec, law, cfg, backend=backend)
        L0 = _cost_column(base, idx)
        diffs, errs, oks = [], [], []
        for f in factors:
            pert = sm.simulate(spec, law.scaled(player, f, f), cfg, backend=backend)
            diff, se = _paired(_cost_column(pert, idx), L0, lam, base.pairs)
            ok = diff >= -SIGMA * se if role == "defender" else diff <= SIGMA * se
            if f == 1.0:
                ok = diff == 0.0
            diffs.append(diff)
            errs.append(se)
            oks.append(bool(ok))
    return VerificationReport(
        "deviation", spec.digest(), [0.0] * len(factors), diffs, errs, all(oks), tm.ms,
        {"player": player, "role": role, "factors": list(factors), "per_factor_pass": oks, "variant": sol.variant},
    )


def deviation_penalty_identity(spec, sol, law, player, perturbed_law, cfg, backend=None,
                               discretization_tol=0.0):
    """Excess cost of a deviation against the accumulated completed square.

    The perturbed run carries the equilibrium gains as reference, so each
    path accumulates the squared distance of the played controls from the
    equilibrium feedback. Both runs share their random numbers.

    The identity is exact in continuous time only; the time grid leaves an
    O(dt) gap. When the paired difference has (almost) no variance, e.g.
    for a deviation of the mean gain alone, that gap must be budgeted
    explicitly through ``discretization_tol``.
    """
    with _Timer() as tm:
        team = riccati.is_team_variant(sol.variant)
        eq = sm.simulate(spec, law, cfg, backend=backend)
        pert = sm.simulate(spec, perturbed_law, cfg, reference=law, backend=backend)
        if team:
            excess = pert.team_cost - eq.team_cost
            square = pert.completed_square.sum(axis=1)
        else:
            excess = pert.costs[:, player] - eq.costs[:, player]
            square = pert.completed_square[:, player]
        gap, se = sm.mean_stderr(excess - square, eq.pairs)
        sq_mean, sq_se = sm.mean_stderr(square, eq.pairs)
        ex_mean, ex_se = sm.mean_stderr(excess, eq.pairs)
        within_stderr = abs(gap) <= SIGMA * se
        ok = abs(gap) <= SIGMA * se + discretization_tol
    return VerificationReport(
        "deviation_penalty_identity", spec.digest(), sq_mean, ex_mean, se, bool(ok), tm.ms,
        {"player": player, "gap": gap, "square_stderr": sq_se, "excess_stderr": ex_se,
         "within_stderr": bool(within_stderr), "discretization_tol": discretization_tol},
    )


# --------------------------------------------------------------------------
# Risk-sensitive problems and their robust companions


@dataclass(frozen=True)
class RobustCompanion:
    """A risk-sensitive instance and the adversarial risk-neutral game in
    which each risk-sensitive player faces a fictitious attacker."""

    base: gm.GameSpec
    companion: gm.GameSpec
    rtilde: tuple
    base_variant: str

    @property
    def lambdas(self):
        return tuple(p.lam for p in self.base.players)


def specific_design(lam, mu, D):
    """Noise ``sqrt(mu) D`` and attacker weight ``gamma^2 I`` with
    ``gamma sqrt(2 lam mu) = 1``; the attacker channel is then ``D``.

    Returns ``(S0, gamma, rtilde)`` where ``rtilde`` is the positive
    definite matrix ``-R`` of the attacker.
    """
    if lam <= 0 or mu <= 0:
        raise ValueError("design needs positive risk index and noise scale")
    D = mc.as_square(D, "D")
    gamma = 1.0 / math.sqrt(2.0 * lam * mu)
    return math.sqrt(mu) * D, gamma, gamma**2 * np.eye(D.shape[0])


def attacker_channel(lam, S0, rtilde):
    return math.sqrt(2.0 * lam) * S0 @ mc.sqrt_spd(rtilde)


def build_robust_companion(spec, rtilde=None, mean_field_type=True):
    """Companion game with one attacker per risk-sensitive player.

    ``rtilde`` gives, per player, the positive definite matrix ``-R`` of its
    attacker (identity by default). With ``mean_field_type`` the attacker
    only drives the deviation ``X - Xbar``: its mean channel is cancelled.
    """
    report = gm.validate(spec, "rs_coop")
    if any(v.code in ("single_regime", "no_jump") for v in report.violations):
        raise ValueError("robust companion needs a single regime and no jumps")
    if any(p.lam <= 0 for p in spec.players):
        raise ValueError("robust companion needs every risk index to be positive")
    d = spec.dim
    if rtilde is None:
        rtilde = [np.eye(d)] * spec.num_players
    elif isinstance(rtilde, np.ndarray) and rtilde.ndim == 2 or np.isscalar(rtilde):
        rtilde = [rtilde] * spec.num_players
    rtilde = tuple(mc.as_square(r, "rtilde") for r in rtilde)
    if len(rtilde) != spec.num_players:
        raise ValueError("one adversary weight per player is required")
    defenders = [dataclasses.replace(p, lam=0.0) for p in spec.players]
    attackers = []
    for p, G in zip(spec.players, rtilde):
        if not mc.is_positive_definite(G):
            raise mc.NotPositiveDefiniteError("adversary weight -R must be positive definite")
        B2 = attacker_channel(p.lam, spec.S0[0], G)
        attackers.append(gm.PlayerCoefficients(
            B2=B2, B2bar=-B2 if mean_field_type else None, R=-G, team="attacker",
        ))
    companion = spec.replace(players=tuple(defenders + attackers))
    base_variant = "rs_adversarial" if any(p.team == "attacker" for p in spec.players) else "rs_coop"
    return RobustCompanion(spec, companion, rtilde, base_variant)


def _sup_distance(A, B):
    return float(np.max(np.sqrt(np.sum((A - B) ** 2, axis=(-2, -1)))))


def rs_robust_equivalence_test(comp, steps=riccati.DEFAULT_STEPS, tol=1e-9, backend=None):
    """Solve both problems and compare their coefficient grids."""
    with _Timer() as tm:
        rs = riccati.solve(comp.base, comp.base_variant, steps, backend=backend)
        ad = riccati.solve(comp.companion, "rn_adversarial", steps, backend=backend)
        dP = _sup_distance(rs.P[0], ad.P[0])
        dPbar = _sup_distance(rs.Pbar[0], ad.Pbar[0])
        dDelta = float(np.max(np.abs(rs.delta[0] - ad.delta[0])))
        ok = dP <= tol and dPbar <= 1e-12 and rs.wellposed and ad.wellposed
    return VerificationReport(
        "rs_robust_equivalence", comp.base.digest(), 0.0, dP, tol, bool(ok), tm.ms,
        {"P_distance": dP, "Pbar_distance": dPbar, "delta_distance": dDelta, "steps": steps,
         "base_variant": comp.base_variant},
    )


def _without_mean_field(spec):
    zero_players = []
    for p in spec.players:
        zero_players.append(dataclasses.replace(p, B2bar=None, Qbar=None, Rbar=None, QTbar=None))
    return spec.replace(players=tuple(zero_players), B1bar=None)


def _state_feedback_law(spec, P):
    """Law in which every player feeds back the whole state through ``P``."""
    n, S = spec.num_players, spec.num_regimes
    K = np.empty((n, S) + P.shape[2:])
    for i, p in enumerate(spec.players):
        for s in range(S):
            K[i, s] = mc.inverse(p.R[s]) @ p.B2[s].T @ P[0, s]
    return K


def mean_trajectory_relation_test(comp, kind="mean_field_type", steps=riccati.DEFAULT_STEPS, tol=1e-6):
    """Mean state of the risk-sensitive problem versus its robust companion.

    ``mean_field_type``: the attacker cannot move the mean, so both mean
    paths must coincide. ``mean_field_free`` (scalar only): without mean
    terms the attacker drives the whole state and the means differ by the
    factor ``exp(2 lam int s0^2 p)``.
    """
    with _Timer() as tm:
        path = st.RegimePath.constant(comp.base.initial_regime, comp.base.horizon)
        if kind == "mean_field_type":
            rs = riccati.solve(comp.base, comp.base_variant, steps)
            ad = riccati.solve(comp.companion, "rn_adversarial", steps)
            _, m_rs = st.propagate_mean(comp.base, st.synthesize(comp.base, rs), path, steps)
            _, m_ad = st.propagate_mean(comp.companion, st.synthesize(comp.companion, ad), path, steps)
            diff = float(np.max(np.abs(m_rs - m_ad)))
            return VerificationReport(
                "mean_trajectory_relation", comp.base.digest(), 0.0, diff, 0.0, diff == 0.0, tm.ms,
                {"kind": kind, "max_abs_difference": diff},
            )
        if kind != "mean_field_free":
            raise ValueError(f"unknown relation kind {kind!r}")
        if comp.base.dim != 1:
            raise NotImplementedError("the mean-field-free relation is implemented for scalar states only")
        base = _without_mean_field(comp.base)
        robust = build_robust_companion(base, comp.rtilde, mean_field_type=False)
        rs = riccati.solve(base, robust.base_variant, steps)
        ad = riccati.solve(robust.companion, "rn_adversarial", steps)
        grid = rs.grid
        K_rs = _state_feedback_law(base, rs.P)
        K_ad = _state_feedback_law(robust.companion, ad.P)
        m_rs = st.propagate_mean(base, st.FeedbackLaw(grid, K_rs, K_rs), path, steps)[1][:, 0, 0]
        m_ad = st.propagate_mean(robust.companion, st.FeedbackLaw(grid, K_ad, K_ad), path, steps)[1][:, 0, 0]
        ratio = m_ad / m_rs
        s0 = float(base.S0[0, 0, 0])
        lam = base.team_lambda
        integrand = 2.0 * lam * s0**2 * rs.P[0, 0, :, 0, 0]
        expected = np.exp(cumulative_simpson(integrand, x=grid, initial=0.0))
        err = float(np.max(np.abs(ratio - expected)))
    return VerificationReport(
        "mean_trajectory_relation", comp.base.digest(), float(expected[-1]), float(ratio[-1]), tol, err <= tol, tm.ms,
        {"kind": kind, "max_abs_error": err, "ratio_at_T": float(ratio[-1])},
    )


# --------------------------------------------------------------------------
# Shared risk


def shared_risk_test(specs, slack=1e-10):
    """Cooperative risk bound against the sum of individual bounds."""
    with _Timer() as tm:
        coop, parts, oks = [], [], []
        for spec in specs:
            c = riccati.lambda_bar(spec)
            s = sum(riccati.lambda_bar(spec, i) for i in range(spec.num_players))
            coop.append(c)
            parts.append(s)
            oks.append(bool(c >= s - slack))
        digest = _digest_many(specs)
    return VerificationReport(
        "shared_risk", digest, parts, coop, 0.0, all(oks), tm.ms, {"instances": len(specs), "per_instance": oks},
    )


def _digest_many(specs):
    h = hashlib.sha256()
    for spec in specs:
        h.update(spec.digest().encode())
    return h.hexdigest()


def check_adversarial_wellposed(spec, lam=0.0):
    """Smallest eigenvalues of the net deviation and mean channels."""
    out = []
    for s in range(spec.num_regimes):
        dev, mean = gm.team_channels(spec, s)
        dev = dev - 2.0 * lam * spec.S0[s] @ spec.S0[s].T
        out.append({
            "regime": s,
            "deviation_min_eig": float(np.min(np.linalg.eigvalsh(mc.symmetrize(dev)))),
            "mean_min_eig": float(np.min(np.linalg.eigvalsh(mc.symmetrize(mean)))),
            "positive": mc.is_positive_definite(dev) and mc.is_positive_definite(mean),
        })
    return out
