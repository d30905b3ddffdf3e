"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run on its own with ``python3 tests/test_acceptance.py`` or as part of the
full pytest run; the lines are repeated in the terminal summary.
"""
import math
import sys
import time

import numpy as np
import pytest

from mftg import _accel, cli, riccati
from mftg import game_model as gm
from mftg import simulator as sm
from mftg import strategy as st
from mftg import verifier as vf

import oracles
from acceptance_log import record
from builders import P, random_instance, scalar, scalar_adversarial, two_identical_regimes


@pytest.fixture
def single_thread():
    if not _accel.HAVE_NUMBA:
        yield
        return
    import numba

    before = numba.get_num_threads()
    numba.set_num_threads(1)
    yield
    numba.set_num_threads(before)


def test_criterion_01_closed_form_riccati():
    spec = scalar()
    riccati.solve_rn_nash(spec, 10)  # compile outside the timed region
    t0 = time.perf_counter()
    sol = riccati.solve_rn_nash(spec, 2000)
    elapsed = time.perf_counter() - t0
    p_err = abs(sol.P[0, 0, 0, 0, 0] - oracles.scalar_riccati(1.0, 1.0, 1.0, 0.0))
    d_err = abs(sol.delta[0, 0, 0] - oracles.scalar_offset(1.0, 1.0, 1.0, 1.0))
    # at 2000 steps the error is at rounding level, so the order is read
    # off coarse grids where the truncation error dominates
    errs = [abs(riccati.solve_rn_nash(spec, k).P[0, 0, 0, 0, 0] - 0.5) for k in (20, 40, 80)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = p_err < 1e-8 and d_err < 1e-8 and min(ratios) >= 15 and elapsed < 1.0
    record(1, "closed-form Riccati", ok,
           f"|p-0.5|={p_err:.1e} |delta-ln2|={d_err:.1e} halving ratios={ratios[0]:.1f},{ratios[1]:.1f} t={elapsed:.3f}s")
    assert ok


def test_criterion_02_cost_formula_monte_carlo(single_thread):
    spec = scalar()
    sol = riccati.solve_rn_nash(spec, 2000)
    law = st.synthesize(spec, sol)
    sm.simulate(spec, law, sm.SimulationConfig(16, 10))  # compile
    t0 = time.perf_counter()
    rep = vf.cost_formula_check(spec, sol, law, sm.SimulationConfig(100_000, 1000, 42))
    elapsed = time.perf_counter() - t0
    theo, emp, se = rep.theoretical[0], rep.empirical[0], rep.stderr[0]
    ok = rep.passed and abs(theo - (0.5 + math.log(2))) < 1e-8 and elapsed < 30.0
    record(2, "cost formula vs Monte Carlo", ok,
           f"theory={theo:.5f} mc={emp:.5f}+-{se:.5f} z={(emp - theo) / se:+.2f} t={elapsed:.1f}s")
    assert ok


def test_criterion_03_riccati_residual():
    worst = {}
    corrupted = math.inf
    for variant in gm.VARIANTS:
        spec = random_instance(101, variant)
        sol = riccati.solve(spec, variant, 2000)
        worst[variant] = vf.riccati_residual(spec, sol)
        bad = np.array(sol.P)
        bad[:, :, 1:-1] += 0.1 * np.eye(spec.dim)
        corrupted = min(corrupted, max(vf.residual_components(spec, sol, P=bad).values()))
    ok = max(worst.values()) < 1e-6 and corrupted > 1e-2
    record(3, "Riccati residual", ok, f"max defect={max(worst.values()):.1e} corrupted={corrupted:.2f}")
    assert ok


def test_criterion_04_deviations():
    cfg = sm.SimulationConfig(10_000, 200, 7)
    parts = []
    for name, spec, variant, players in (("nash", scalar(), "rn_nash", [0]),
                                         ("saddle", scalar_adversarial(), "rn_adversarial", [0, 1])):
        sol = riccati.solve(spec, variant, 2000)
        law = st.synthesize(spec, sol)
        for i in players:
            rep = vf.deviation_test(spec, sol, law, i, (0.8, 1.2), cfg)
            z = [e / s for e, s in zip(rep.empirical, rep.stderr)]
            parts.append((f"{name}/{rep.details['role']}", rep.passed, z))
    ok = all(p for _, p, _ in parts)
    record(4, "Nash/saddle deviations", ok,
           " ".join(f"{n}: z={z[0]:+.1f},{z[1]:+.1f}" for n, _, z in parts))
    assert ok


def test_criterion_05_completed_square():
    spec = scalar()
    sol = riccati.solve_rn_nash(spec, 2000)
    law = st.synthesize(spec, sol)
    rep = vf.deviation_penalty_identity(spec, sol, law, 0, law.scaled(0, 1.5, 1.5), sm.SimulationConfig(100_000, 400, 5))
    ok = rep.details["within_stderr"]
    record(5, "completed-square identity", ok,
           f"excess={rep.empirical:.5f} square={rep.theoretical:.5f} gap={rep.details['gap']:.1e} se={rep.stderr:.1e}")
    assert ok


def _diagonal_instance():
    rng = np.random.default_rng(3)
    base = gm.GameSpec(dim=2, horizon=1.0, S0=np.diag(rng.uniform(0.5, 1.5, 2)), X0=np.eye(2),
                       players=(P(B2=np.diag(rng.uniform(0.5, 1.5, 2)), R=np.diag(rng.uniform(0.5, 1.5, 2)),
                                  Q=np.eye(2), QT=np.eye(2)),))
    lam = 0.5 * riccati.lambda_bar(base, 0)
    p = base.players[0]
    return base.replace(players=(P(B2=p.B2, R=p.R, Q=p.Q, QT=p.QT, lam=lam),))


def test_criterion_06_rs_robust():
    scalar_comp = vf.build_robust_companion(scalar(lam=0.25), 2.0)
    diag_comp = vf.build_robust_companion(_diagonal_instance(), np.diag([1.0, 2.0]))
    eq = [vf.rs_robust_equivalence_test(c, 2000) for c in (scalar_comp, diag_comp)]
    mft = [vf.mean_trajectory_relation_test(c, "mean_field_type", 2000) for c in (scalar_comp, diag_comp)]
    mff = vf.mean_trajectory_relation_test(scalar_comp, "mean_field_free", 2000)
    ratio = mff.details["ratio_at_T"]
    dist = max(r.empirical for r in eq)
    ok = (all(r.passed for r in eq) and dist < 1e-9 and all(r.empirical == 0.0 for r in mft)
          and abs(ratio - 1.5) <= 1e-6)
    record(6, "RS <-> robust equivalence", ok,
           f"P dist={dist:.1e} mean diff={max(r.empirical for r in mft):.1e} ratio={ratio:.10f}")
    assert ok


def test_criterion_07_lambda_bar_shared_risk():
    cases = [(1.0, 1.0, 1.0), (2.0, 1.0, 1.0), (1.0, 2.0, 0.5), (0.7, 1.3, 1.9)]
    errs = [abs(riccati.lambda_bar(scalar(b2=b, r=r, s0=s), 0) - b * b / (2 * r * s * s)) for b, r, s in cases]
    rng = np.random.default_rng(2024)
    specs = []
    for k in range(100):
        d, n = int(rng.integers(1, 4)), int(rng.integers(2, 4))
        diagonal = k % 2 == 0
        players = []
        for _ in range(n):
            if diagonal:
                players.append(P(B2=np.diag(rng.uniform(0.2, 2, d)), R=np.diag(rng.uniform(0.2, 2, d))))
            else:
                A = rng.normal(size=(d, d))
                players.append(P(B2=rng.normal(size=(d, d)) + 2 * np.eye(d), R=A @ A.T + 0.2 * np.eye(d)))
        S0 = np.diag(rng.uniform(0.2, 2, d)) if diagonal else rng.normal(size=(d, d)) + 2 * np.eye(d)
        specs.append(gm.GameSpec(dim=d, horizon=1.0, S0=S0, players=tuple(players)))
    rep = vf.shared_risk_test(specs)
    margin = min(c - s for c, s in zip(rep.empirical, rep.theoretical))
    ok = max(errs) < 1e-8 and rep.passed and len(specs) == 100
    record(7, "lambda-bar and shared risk", ok, f"scalar err={max(errs):.1e} min coop margin={margin:.2e} over 100")
    assert ok


def test_criterion_08_rs_to_rn_limit():
    rn = riccati.solve_rn_nash(scalar(q=1.0), 2000).P
    dist = [np.abs(riccati.solve_rs_nash(scalar(q=1.0, lam=lam), 2000).P - rn).max() for lam in (1e-2, 1e-3)]
    ratio = dist[0] / dist[1]
    ok = 8 <= ratio <= 12
    record(8, "RS -> RN limit", ok, f"dist={dist[0]:.2e},{dist[1]:.2e} ratio={ratio:.2f}")
    assert ok


def test_criterion_09_regime_switching():
    worst = 0.0
    for variant in ("rn_nash", "rn_coop", "rn_adversarial"):
        one = random_instance(55, variant)
        one = one.replace(generator=gm.RegimeGenerator.single(), initial_regime=0,
                          players=tuple(_first_regime(p) for p in one.players),
                          B1=one.B1[0], B1bar=one.B1bar[0], S0=one.S0[0],
                          jumps=tuple(gm.JumpAtom(a.intensity, a.amplitude[0]) for a in one.jumps))
        two = two_identical_regimes(one, 1.3)
        a, b = riccati.solve(one, variant, 2000), riccati.solve(two, variant, 2000)
        for s in range(2):
            for x, y in ((a.P, b.P), (a.Pbar, b.Pbar), (a.delta, b.delta)):
                worst = max(worst, float(np.abs(y[:, s] - x[:, 0]).max()))
    grid = np.linspace(0.0, 1.0, 201)
    regs = sm.sample_regime_grid(gm.RegimeGenerator.symmetric(2, 1.0), 0, grid, 100_000, sm._rng(42, 0, 0))
    occ, se = sm.mean_stderr(regs[:, -1] == 0)
    target = oracles.ctmc_occupancy(gm.RegimeGenerator.symmetric(2, 1.0).rates, 0, 1.0)[0]
    z = (occ - target) / se
    ok = worst <= 1e-10 and abs(z) <= 3
    record(9, "regime switching sanity", ok, f"identical-regime diff={worst:.1e} occupancy={occ:.4f} vs {target:.4f} z={z:+.2f}")
    assert ok


def _first_regime(p):
    return gm.PlayerCoefficients(**{k: getattr(p, k)[0] for k in gm.PLAYER_TABLES}, lam=p.lam, team=p.team)


def test_criterion_10_determinism(tmp_path):
    import json

    spec_path = tmp_path / "game.json"
    spec_path.write_text(json.dumps(random_instance(77, "rn_nash").to_dict()))
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        cli.run(["simulate", str(spec_path), "--steps", "200", "--paths", "5000", "--dump-paths", "5",
                 "--seed", "42", "--out", str(out)])
        outputs.append({n: (out / n).read_bytes() for n in ("riccati.csv", "means.csv", "paths.csv")})
    ok = outputs[0] == outputs[1] and all(outputs[0].values())
    record(10, "determinism", ok, f"{len(outputs[0])} CSV files byte-identical")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
