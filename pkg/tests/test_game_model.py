import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as hs

from mftg import game_model as gm

from builders import P, random_instance, scalar, scalar_adversarial

SCALAR_DOC = {
    "dim": 1,
    "horizon": 1.0,
    "noise": {"S0": [[1.0]]},
    "players": [{"B2": [[1.0]], "R": [[1.0]], "QT": [[1.0]]}],
    "initial": {"X0": [[1.0]], "regime": 0},
}


class TestConstruction:
    def test_tables_broadcast_per_regime(self):
        spec = gm.GameSpec(dim=2, horizon=1.0, players=(P(B2=np.eye(2), R=np.eye(2)),),
                           generator=gm.RegimeGenerator.symmetric(3, 1.0))
        assert spec.players[0].B2.shape == (3, 2, 2)
        assert spec.B1.shape == (3, 2, 2)
        assert not np.any(spec.players[0].Q)

    def test_tables_are_read_only(self):
        spec = scalar()
        with pytest.raises(ValueError):
            spec.players[0].R[0, 0, 0] = 5.0

    def test_wrong_shape(self):
        with pytest.raises(gm.SpecFormatError):
            gm.GameSpec(dim=2, horizon=1.0, players=(P(B2=np.eye(3), R=np.eye(2)),))

    def test_bad_horizon_and_regime(self):
        with pytest.raises(gm.SpecFormatError):
            scalar(T=-1.0)
        with pytest.raises(gm.SpecFormatError):
            gm.GameSpec(dim=1, horizon=1.0, players=(P(B2=1.0, R=1.0),), initial_regime=2)

    def test_digest_stable_and_sensitive(self):
        assert scalar().digest() == scalar().digest()
        assert scalar().digest() != scalar(qT=2.0).digest()

    def test_team_lambda_is_sum(self):
        spec = gm.GameSpec(dim=1, horizon=1.0, players=(P(B2=1.0, R=1.0, lam=0.2), P(B2=1.0, R=1.0, lam=0.3)))
        assert spec.team_lambda == pytest.approx(0.5)


class TestJson:
    def test_round_trip(self):
        spec = gm.spec_from_dict(SCALAR_DOC)
        again = gm.spec_from_dict(spec.to_dict())
        assert again.digest() == spec.digest()

    def test_random_instance_round_trip(self):
        spec = random_instance(4, "rn_nash")
        again = gm.loads_spec(json.dumps(spec.to_dict()))
        assert again.digest() == spec.digest()

    def test_unknown_keys_rejected(self):
        with pytest.raises(gm.SpecFormatError):
            gm.spec_from_dict({**SCALAR_DOC, "extra": 1})
        doc = json.loads(json.dumps(SCALAR_DOC))
        doc["players"][0]["gain"] = 1
        with pytest.raises(gm.SpecFormatError):
            gm.spec_from_dict(doc)

    def test_missing_required(self):
        doc = dict(SCALAR_DOC)
        del doc["initial"]
        with pytest.raises(gm.SpecFormatError):
            gm.spec_from_dict(doc)

    def test_time_dependence_reserved(self):
        gm.spec_from_dict({**SCALAR_DOC, "time_dependence": None})
        with pytest.raises(gm.SpecFormatError):
            gm.spec_from_dict({**SCALAR_DOC, "time_dependence": {"grid": [0, 1]}})

    def test_malformed_json_propagates(self):
        with pytest.raises(json.JSONDecodeError):
            gm.loads_spec('{"dim": 1,, }')

    def test_regime_count_must_match(self):
        with pytest.raises(gm.SpecFormatError):
            gm.spec_from_dict({**SCALAR_DOC, "regimes": {"count": 2, "rates": [[0.0]]}})


class TestValidate:
    def test_clean_rs_instance(self):
        spec = gm.GameSpec(dim=1, horizon=1.0, players=(P(B2=1.0, R=1.0, Q=1.0, QT=1.0),), S0=1.0)
        report = gm.validate(spec, "rs_nash")
        assert report.ok and not report.warnings

    def test_rs_single_regime(self):
        spec = scalar().replace(generator=gm.RegimeGenerator.symmetric(2, 1.0))
        messages = [v.message for v in gm.validate(spec, "rs_nash").violations]
        assert "risk-sensitive requires single regime" in messages

    def test_rs_no_jumps(self):
        spec = scalar(jumps=[gm.JumpAtom(1.0, 0.5)])
        assert "no_jump" in [v.code for v in gm.validate(spec, "rs_coop").blocking]

    def test_adversarial_net_channel(self):
        # 1/1 - 1/0.5 < 0
        report = gm.validate(scalar_adversarial(r_att=-0.5), "rn_adversarial")
        codes = [v.code for v in report.violations]
        assert "net_channel" in codes
        assert not report.blocking

    def test_attacker_needs_negative_weight(self):
        report = gm.validate(scalar_adversarial(r_att=2.0), "rn_adversarial")
        assert "attacker_weights" in [v.code for v in report.blocking]

    def test_defender_needs_positive_weight(self):
        report = gm.validate(scalar(r=-1.0), "rn_nash")
        assert "control_weights" in [v.code for v in report.blocking]

    def test_generator_rows(self):
        spec = scalar().replace(generator=gm.RegimeGenerator([[-1.0, 2.0], [1.0, -1.0]]))
        assert "generator" in [v.code for v in gm.validate(spec, "rn_nash").blocking]

    def test_semidefinite_q_warns(self):
        report = gm.validate(scalar(q=0.0), "rn_nash")
        assert report.ok
        assert any("semidefinite" in w for w in report.warnings)

    def test_asymmetric_cost_blocks(self):
        spec = gm.GameSpec(dim=2, horizon=1.0, players=(P(B2=np.eye(2), R=np.eye(2), Q=[[1.0, 0.5], [0.0, 1.0]]),))
        assert "symmetry" in [v.code for v in gm.validate(spec, "rn_nash").blocking]

    def test_risk_channel_for_large_lambda(self):
        report = gm.validate(scalar(lam=0.6), "rs_nash")
        assert "risk_channel" in [v.code for v in report.violations]

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            gm.validate(scalar(), "mixed")

    @pytest.mark.parametrize("variant", gm.VARIANTS)
    def test_idempotent(self, variant):
        spec = random_instance(1, variant)
        before = spec.digest()
        assert gm.validate(spec, variant) == gm.validate(spec, variant)
        assert spec.digest() == before


class TestAggregate:
    def test_two_identities(self):
        spec = gm.GameSpec(dim=2, horizon=1.0, players=(
            P(B2=np.eye(2), R=np.eye(2), Q=np.eye(2)), P(B2=np.eye(2), R=np.eye(2), Q=np.eye(2))))
        agg = gm.aggregate_cooperative(spec)
        np.testing.assert_array_equal(agg.players[0].Q[0], 2 * np.eye(2))
        assert not np.any(agg.players[1].Q)
        np.testing.assert_array_equal(agg.players[1].B2, spec.players[1].B2)

    def test_single_player_unchanged(self):
        spec = scalar(q=1.0)
        assert gm.aggregate_cooperative(spec).digest() == spec.digest()

    def test_arithmetic_sum(self):
        spec = gm.GameSpec(dim=1, horizon=1.0, players=tuple(P(B2=1.0, R=1.0, Q=q) for q in (1.0, 2.0, 3.0)))
        assert gm.aggregate_cooperative(spec).players[0].Q[0, 0, 0] == 6.0

    @given(hs.permutations(range(4)), hs.lists(hs.floats(0, 5), min_size=4, max_size=4))
    def test_permutation_invariant(self, perm, qs):
        players = [P(B2=1.0, R=1.0, Q=q, Qbar=0.5 * q) for q in qs]
        a = gm.aggregate_cooperative(gm.GameSpec(dim=1, horizon=1.0, players=tuple(players)))
        b = gm.aggregate_cooperative(gm.GameSpec(dim=1, horizon=1.0, players=tuple(players[i] for i in perm)))
        for name in ("Q", "Qbar"):
            assert getattr(a.players[0], name)[0, 0, 0] == pytest.approx(getattr(b.players[0], name)[0, 0, 0])
