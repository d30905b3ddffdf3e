"""Game instances: coefficients of the controlled state equation and of the
quadratic costs, plus hypothesis checks for each solution concept.

Coefficient tables are stored per regime as arrays of shape ``(S, d, d)``.
Coefficients are constant in time within a regime.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import matrix_core as mc

VARIANTS = ("rn_nash", "rn_coop", "rn_adversarial", "rs_nash", "rs_coop", "rs_adversarial")
TEAMS = ("defender", "attacker")
NOISE_COVARIANCES = ("iid", "trace_normalized")
PLAYER_TABLES = ("B2", "B2bar", "Q", "Qbar", "R", "Rbar", "QT", "QTbar")


class SpecFormatError(ValueError):
    """Malformed game document (bad keys, shapes or values)."""


class ValidationError(ValueError):
    """Raised by solvers when blocking hypotheses of a solution concept fail."""

    def __init__(self, report):
        super().__init__("; ".join(v.message for v in report.blocking))
        self.report = report


def _readonly(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def _table(value, num_regimes, dim, name):
    """Broadcast a matrix, or a per-regime list of matrices, to ``(S, d, d)``."""
    if value is None:
        return _readonly(np.zeros((num_regimes, dim, dim)))
    arr = np.array(value, dtype=float)
    if arr.ndim == 0 and dim == 1:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1 and dim == 1:
        arr = arr.reshape(-1, 1, 1)
    if arr.ndim == 2 or (arr.ndim == 3 and arr.shape[0] == 1):
        arr = np.broadcast_to(arr.reshape(arr.shape[-2:]), (num_regimes,) + arr.shape[-2:])
    if arr.shape != (num_regimes, dim, dim):
        raise SpecFormatError(
            f"{name}: expected a {dim}x{dim} matrix or {num_regimes} of them, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise SpecFormatError(f"{name}: non-finite entries")
    return _readonly(arr)


@dataclass(frozen=True)
class RegimeGenerator:
    """Transition-rate matrix of the regime chain (rows sum to zero)."""

    rates: np.ndarray

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float)
        if rates.ndim == 0:
            rates = rates.reshape(1, 1)
        if rates.ndim != 2 or rates.shape[0] != rates.shape[1] or rates.shape[0] < 1:
            raise SpecFormatError(f"regime rates must be a square matrix, got shape {rates.shape}")
        object.__setattr__(self, "rates", _readonly(rates))

    @classmethod
    def single(cls):
        return cls(np.zeros((1, 1)))

    @classmethod
    def symmetric(cls, num_regimes, rate):
        q = np.full((num_regimes, num_regimes), float(rate))
        np.fill_diagonal(q, -rate * (num_regimes - 1))
        return cls(q)

    @property
    def num_regimes(self):
        return self.rates.shape[0]

    def exit_rate(self, s):
        return float(np.sum(self.rates[s]) - self.rates[s, s])

    def problems(self):
        """Return (errors, warnings) about generator well-formedness."""
        errors, warnings = [], []
        q = self.rates
        off = q[~np.eye(q.shape[0], dtype=bool)]
        if np.any(off < 0):
            errors.append("regime generator has negative off-diagonal rates")
        elif q.shape[0] > 1 and np.any(off == 0):
            warnings.append("regime generator has zero off-diagonal rates (degenerate chain)")
        if np.any(np.abs(q.sum(axis=1)) > 1e-9 * max(1.0, np.max(np.abs(q)))):
            errors.append("regime generator rows must sum to zero")
        return errors, warnings


@dataclass(frozen=True)
class JumpAtom:
    """One atom of the discretized jump measure: a Poisson clock of rate
    ``intensity`` whose arrivals add ``amplitude[s]`` to the state."""

    intensity: float
    amplitude: np.ndarray

    def __post_init__(self):
        intensity = float(self.intensity)
        if not np.isfinite(intensity) or intensity < 0:
            raise SpecFormatError(f"jump intensity must be finite and >= 0, got {self.intensity}")
        object.__setattr__(self, "intensity", intensity)
        object.__setattr__(self, "amplitude", np.array(self.amplitude, dtype=float))


@dataclass(frozen=True)
class PlayerCoefficients:
    """Control channel, cost weights, risk index and team of one player.

    Tables may be given as a single matrix (shared by all regimes) or one
    matrix per regime; :class:`GameSpec` normalizes them to ``(S, d, d)``.
    Omitted tables are zero.
    """

    B2: np.ndarray
    R: np.ndarray
    Q: np.ndarray = None
    QT: np.ndarray = None
    B2bar: np.ndarray = None
    Qbar: np.ndarray = None
    Rbar: np.ndarray = None
    QTbar: np.ndarray = None
    lam: float = 0.0
    team: str = "defender"

    def normalized(self, num_regimes, dim, index=0):
        if self.team not in TEAMS:
            raise SpecFormatError(f"player {index}: team must be one of {TEAMS}, got {self.team!r}")
        lam = float(self.lam)
        if not np.isfinite(lam):
            raise SpecFormatError(f"player {index}: lambda must be finite")
        tables = {
            name: _table(getattr(self, name), num_regimes, dim, f"player {index} {name}")
            for name in PLAYER_TABLES
        }
        return dataclasses.replace(self, lam=lam, **tables)


@dataclass(frozen=True)
class GameSpec:
    dim: int
    horizon: float
    players: tuple
    generator: RegimeGenerator = field(default_factory=RegimeGenerator.single)
    B1: np.ndarray = None
    B1bar: np.ndarray = None
    S0: np.ndarray = None
    jumps: tuple = ()
    X0: np.ndarray = None
    initial_regime: int = 0
    noise_covariance: str = "iid"

    def __post_init__(self):
        d = int(self.dim)
        if d < 1:
            raise SpecFormatError("dim must be >= 1")
        T = float(self.horizon)
        if not np.isfinite(T) or T < 0:
            raise SpecFormatError("horizon must be finite and non-negative")
        gen = self.generator
        if not isinstance(gen, RegimeGenerator):
            gen = RegimeGenerator(gen)
        S = gen.num_regimes
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("dim", d)
        set_("horizon", T)
        set_("generator", gen)
        for name in ("B1", "B1bar", "S0"):
            set_(name, _table(getattr(self, name), S, d, name))
        if not self.players:
            raise SpecFormatError("at least one player is required")
        set_("players", tuple(p.normalized(S, d, i) for i, p in enumerate(self.players)))
        jumps = []
        for k, atom in enumerate(self.jumps):
            jumps.append(JumpAtom(atom.intensity, _table(atom.amplitude, S, d, f"jump {k} amplitude")))
        set_("jumps", tuple(jumps))
        x0 = np.eye(d) if self.X0 is None else np.array(self.X0, dtype=float)
        if x0.ndim == 0:
            x0 = x0.reshape(1, 1)
        if x0.shape != (d, d) or not np.all(np.isfinite(x0)):
            raise SpecFormatError(f"X0 must be a finite {d}x{d} matrix")
        set_("X0", _readonly(x0))
        s0 = int(self.initial_regime)
        if not 0 <= s0 < S:
            raise SpecFormatError(f"initial regime {s0} outside 0..{S - 1}")
        set_("initial_regime", s0)
        if self.noise_covariance not in NOISE_COVARIANCES:
            raise SpecFormatError(f"noise covariance must be one of {NOISE_COVARIANCES}")

    @property
    def num_players(self):
        return len(self.players)

    @property
    def num_regimes(self):
        return self.generator.num_regimes

    @property
    def team_lambda(self):
        """Risk index of the whole team: the sum of the players' indices."""
        return float(sum(p.lam for p in self.players))

    def team_weights(self):
        """Summed cost weights ``(Q0, Q0bar, QT0, QT0bar)``, each ``(S, d, d)``."""
        out = []
        for name in ("Q", "Qbar", "QT", "QTbar"):
            acc = np.zeros((self.num_regimes, self.dim, self.dim))
            for p in self.players:
                acc = acc + getattr(p, name)
            out.append(acc)
        return tuple(out)

    def has_jumps(self):
        return any(a.intensity > 0 and np.any(a.amplitude != 0) for a in self.jumps)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        def m(a):
            return np.asarray(a).tolist()

        return {
            "dim": self.dim,
            "horizon": self.horizon,
            "regimes": {"count": self.num_regimes, "rates": m(self.generator.rates)},
            "drift": {"B1": m(self.B1), "B1bar": m(self.B1bar)},
            "noise": {"S0": m(self.S0), "covariance": self.noise_covariance},
            "jumps": [{"intensity": a.intensity, "amplitude": m(a.amplitude)} for a in self.jumps],
            "players": [
                {**{name: m(getattr(p, name)) for name in PLAYER_TABLES}, "lambda": p.lam, "team": p.team}
                for p in self.players
            ],
            "initial": {"X0": m(self.X0), "regime": self.initial_regime},
        }

    def digest(self):
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


# --------------------------------------------------------------------------
# JSON documents

_TOP_KEYS = {"dim", "horizon", "regimes", "drift", "noise", "jumps", "players", "initial", "time_dependence"}
_SUB_KEYS = {
    "regimes": {"count", "rates"},
    "drift": {"B1", "B1bar"},
    "noise": {"S0", "covariance"},
    "initial": {"X0", "regime"},
}
_PLAYER_KEYS = set(PLAYER_TABLES) | {"lambda", "team"}
_JUMP_KEYS = {"intensity", "amplitude"}


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise SpecFormatError(f"{where}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise SpecFormatError(f"{where}: unknown keys {sorted(extra)}")


def spec_from_dict(doc):
    _reject_unknown(doc, _TOP_KEYS, "document")
    for key in ("dim", "horizon", "players", "initial"):
        if key not in doc:
            raise SpecFormatError(f"document: missing required key {key!r}")
    if doc.get("time_dependence") not in (None, False):
        raise SpecFormatError("time-dependent coefficient tables are not supported")
    for key, allowed in _SUB_KEYS.items():
        if key in doc:
            _reject_unknown(doc[key], allowed, key)
    dim = doc["dim"]
    if not isinstance(dim, int) or isinstance(dim, bool):
        raise SpecFormatError("dim must be an integer")

    regimes = doc.get("regimes", {})
    count = regimes.get("count", 1)
    rates = regimes.get("rates", np.zeros((count, count)).tolist())
    generator = RegimeGenerator(rates)
    if generator.num_regimes != count:
        raise SpecFormatError(f"regimes.count={count} but rates is {generator.num_regimes}x{generator.num_regimes}")

    players = []
    for i, p in enumerate(doc["players"]):
        _reject_unknown(p, _PLAYER_KEYS, f"players[{i}]")
        for key in ("B2", "R"):
            if key not in p:
                raise SpecFormatError(f"players[{i}]: missing required key {key!r}")
        players.append(
            PlayerCoefficients(
                **{name: p.get(name) for name in PLAYER_TABLES},
                lam=p.get("lambda", 0.0),
                team=p.get("team", "defender"),
            )
        )
    jumps = []
    for k, j in enumerate(doc.get("jumps", [])):
        _reject_unknown(j, _JUMP_KEYS, f"jumps[{k}]")
        jumps.append(JumpAtom(j["intensity"], j["amplitude"]))

    drift = doc.get("drift", {})
    noise = doc.get("noise", {})
    initial = doc["initial"]
    if "X0" not in initial:
        raise SpecFormatError("initial: missing required key 'X0'")
    x0 = np.array(initial["X0"], dtype=float)
    if x0.ndim == 0:
        x0 = x0.reshape(1, 1)
    return GameSpec(
        dim=dim,
        horizon=doc["horizon"],
        players=tuple(players),
        generator=generator,
        B1=drift.get("B1"),
        B1bar=drift.get("B1bar"),
        S0=noise.get("S0"),
        jumps=tuple(jumps),
        X0=x0,
        initial_regime=initial.get("regime", 0),
        noise_covariance=noise.get("covariance", "iid"),
    )


def loads_spec(text):
    """Parse a JSON game document. ``json.JSONDecodeError`` propagates."""
    return spec_from_dict(json.loads(text))


def load_spec(path):
    with open(path, encoding="utf-8") as fh:
        return loads_spec(fh.read())


# --------------------------------------------------------------------------
# Hypothesis checks


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    blocking: bool = True


@dataclass(frozen=True)
class ValidationReport:
    mode: str
    violations: tuple = ()
    warnings: tuple = ()

    @property
    def ok(self):
        return not self.violations

    @property
    def blocking(self):
        return tuple(v for v in self.violations if v.blocking)

    def to_dict(self):
        return {
            "mode": self.mode,
            "ok": self.ok,
            "violations": [dataclasses.asdict(v) for v in self.violations],
            "warnings": list(self.warnings),
        }


def _is_symmetric(a, tol=1e-10):
    return bool(np.max(np.abs(a - a.T), initial=0.0) <= tol * max(1.0, float(np.max(np.abs(a)))))


def channel_matrix(B2, R):
    """``B2 R^{-1} B2^T`` for one regime."""
    return B2 @ mc.inverse(R) @ B2.T


def team_channels(spec, s):
    """Summed deviation and mean channels over all players in regime ``s``."""
    dev = np.zeros((spec.dim, spec.dim))
    mean = np.zeros((spec.dim, spec.dim))
    for p in spec.players:
        dev = dev + channel_matrix(p.B2[s], p.R[s])
        mean = mean + channel_matrix(p.B2[s] + p.B2bar[s], p.R[s] + p.Rbar[s])
    return dev, mean


def validate(spec, mode):
    """Check ``spec`` against the hypotheses of solution concept ``mode``.

    Violations are returned, never raised. Blocking violations make the
    Riccati system ill-defined; non-blocking ones are well-posedness
    conditions whose failure the solvers record instead of refusing.
    """
    if mode not in VARIANTS:
        raise ValueError(f"unknown mode {mode!r}; expected one of {VARIANTS}")
    violations, warnings = [], []

    def bad(code, message, blocking=True):
        violations.append(Violation(code, message, blocking))

    errors, gen_warnings = spec.generator.problems()
    for e in errors:
        bad("generator", e)
    warnings.extend(gen_warnings)

    risk_sensitive = mode.startswith("rs_")
    adversarial = mode.endswith("adversarial")
    team = not mode.endswith("nash")
    S = spec.num_regimes

    if risk_sensitive:
        if S != 1:
            bad("single_regime", "risk-sensitive requires single regime")
        if spec.has_jumps():
            bad("no_jump", "risk-sensitive requires no jumps")
    elif any(p.lam != 0 for p in spec.players):
        warnings.append("nonzero lambda ignored by risk-neutral mode")

    for i, p in enumerate(spec.players):
        for s in range(S):
            for name in ("Q", "Qbar", "R", "Rbar", "QT", "QTbar"):
                if not _is_symmetric(getattr(p, name)[s]):
                    bad("symmetry", f"player {i} regime {s}: {name} is not symmetric")
            R, RR = p.R[s], p.R[s] + p.Rbar[s]
            attacker = adversarial and p.team == "attacker"
            if attacker:
                if not (mc.is_positive_definite(-R) and mc.is_positive_definite(-RR)):
                    bad("attacker_weights", f"player {i} regime {s}: attacker needs -R and -(R+Rbar) positive definite")
            elif not (mc.is_positive_definite(R) and mc.is_positive_definite(RR)):
                bad("control_weights", f"player {i} regime {s}: R and R+Rbar must be positive definite")
            if not team:
                _check_state_weights(p.Q[s], p.Q[s] + p.Qbar[s], f"player {i} regime {s}", bad, warnings)
    if team:
        Q0, Q0bar, _, _ = spec.team_weights()
        for s in range(S):
            _check_state_weights(Q0[s], Q0[s] + Q0bar[s], f"team regime {s}", bad, warnings)
    if adversarial and not any(p.team == "attacker" for p in spec.players):
        warnings.append("adversarial mode without attackers")
    if any(v.code in ("control_weights", "attacker_weights", "generator") for v in violations):
        return ValidationReport(mode, tuple(violations), tuple(warnings))

    # well-posedness conditions on the net channels (non-blocking)
    for s in range(S):
        SS = spec.S0[s] @ spec.S0[s].T
        if team:
            dev, mean = team_channels(spec, s)
            if risk_sensitive:
                dev = dev - 2.0 * spec.team_lambda * SS
            if adversarial or risk_sensitive:
                if not mc.is_positive_definite(dev):
                    bad("net_channel", f"regime {s}: net deviation channel is not positive definite", False)
                if adversarial and not mc.is_positive_definite(mean):
                    bad("net_mean_channel", f"regime {s}: net mean channel is not positive definite", False)
        elif risk_sensitive:
            for i, p in enumerate(spec.players):
                own = channel_matrix(p.B2[s], p.R[s]) - 2.0 * p.lam * SS
                if not mc.is_positive_definite(own):
                    bad("risk_channel", f"player {i}: lambda exceeds the positivity bound of its channel", False)
    return ValidationReport(mode, tuple(violations), tuple(warnings))


def _check_state_weights(Q, QQ, where, bad, warnings):
    if not (mc.is_positive_semidefinite(Q) and mc.is_positive_semidefinite(QQ)):
        bad("state_weights", f"{where}: Q and Q+Qbar must be positive semidefinite")
    elif not (mc.is_positive_definite(Q) and mc.is_positive_definite(QQ)):
        warnings.append(f"{where}: Q or Q+Qbar only semidefinite")


def aggregate_cooperative(spec):
    """Single-team version of ``spec``: player 0 carries the summed state
    weights, every other player keeps only its control channel and control
    weights. The team cost is then the sum of the per-player costs."""
    Q0, Q0bar, QT0, QT0bar = spec.team_weights()
    zero = np.zeros_like(Q0)
    players = []
    for i, p in enumerate(spec.players):
        if i == 0:
            players.append(dataclasses.replace(p, Q=Q0, Qbar=Q0bar, QT=QT0, QTbar=QT0bar, lam=spec.team_lambda))
        else:
            players.append(dataclasses.replace(p, Q=zero, Qbar=zero, QT=zero, QTbar=zero, lam=0.0))
    return spec.replace(players=tuple(players))
