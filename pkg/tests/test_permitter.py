import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import linear_chain
from oracles import DIFFICULTY_GRID, SIGMA_BAND
from poolsim.chain import GENESIS, Block, MessageState, Vote
from poolsim.errors import MalformedRequest
from poolsim.experiments import prop1_trial_draws
from poolsim.permitter import (
    CRITERIA, DENIED, POS, POW, PROP1, QUORUM, SPECIFIC, DifficultyState, PermitRequest, PermitterKernel,
    Prop1Params, difficulty_schedule, difficulty_update, extension_block, lottery_winner, prop1_draws, respond,
)
from poolsim.quorum import QuorumParams
from poolsim.resources import constant_pool

G = MessageState.with_genesis()


def pow_kernel(p=0.01, seed=b"k", **kw):
    return PermitterKernel(POW, seed, difficulty=DifficultyState(p_initial=p, epoch_length_blocks=10 ** 9, **kw))


def pow_req(key, t, state=G):
    return PermitRequest(key, state, t, Block(state.best_leaf, key, t))


class TestPow:
    def test_no_balance(self):
        assert respond(pow_kernel(1.0), pow_req("a", 0), 0, constant_pool({"a": 0})).kind == DENIED

    def test_certain_grant(self):
        perm = respond(pow_kernel(0.5), pow_req("a", 3), 3, constant_pool({"a": 2}))
        assert perm.kind == SPECIFIC and perm.message_id == Block(GENESIS.id, "a", 3).id

    def test_second_request_same_slot_denied(self):
        k, pool = pow_kernel(1.0), constant_pool({"a": 1})
        assert respond(k, pow_req("a", 3), 3, pool).granted
        assert respond(k, pow_req("a", 3), 3, pool).kind == DENIED
        assert respond(k, pow_req("a", 4), 4, pool).granted

    def test_slot_claim_ignored_but_timestamp_checked(self):
        pool = constant_pool({"a": 1})
        b = Block(GENESIS.id, "a", 3)
        assert respond(pow_kernel(1.0), PermitRequest("a", G, 99, b), 3, pool).granted
        assert not respond(pow_kernel(1.0), PermitRequest("a", G, 3, b), 4, pool).granted

    def test_invalid_extension_denied(self):
        s, blocks = linear_chain(2)
        stale = Block(blocks[1].id, "a", 5)  # parent is not the leaf
        assert respond(pow_kernel(1.0), PermitRequest("a", s, 5, stale), 5, constant_pool({"a": 1})).kind == DENIED

    def test_malformed_state(self):
        with pytest.raises(MalformedRequest):
            respond(pow_kernel(), PermitRequest("a", MessageState.empty(), 0, b""), 0, constant_pool({"a": 1}))

    def test_grant_rate_binomial(self):
        k, pool = pow_kernel(0.01), constant_pool({"a": 2})
        n, p = 10 ** 5, 0.02
        grants = sum(respond(k, pow_req("a", t), t, pool).granted for t in range(n))
        assert abs(grants - n * p) <= SIGMA_BAND * math.sqrt(n * p * (1 - p))


class TestDifficulty:
    @pytest.mark.parametrize("mult,ratio", sorted(DIFFICULTY_GRID.items()))
    def test_grid(self, mult, ratio):
        d = DifficultyState(p_initial=1e-6, epoch_length_blocks=2016, target_seconds_per_block=600)
        assert difficulty_update(1e-6, mult * 2016 * 600, d) / 1e-6 == pytest.approx(ratio, rel=1e-12)

    def test_examples(self):
        d = DifficultyState()
        p = 1e-9
        assert difficulty_update(p, 2016 * 600, d) == p
        assert difficulty_update(p, 2016 * 60, d) == p / 4
        assert difficulty_update(p, 2 * 2016 * 600, d) == 2 * p

    def _params(self):
        return DifficultyState(p_initial=1e-3, epoch_length_blocks=4, target_seconds_per_block=600)

    def test_schedule_short_chain(self):
        s, _ = linear_chain(3, step=5)
        assert difficulty_schedule(s, self._params()) == 1e-3

    def test_schedule_identity_epoch(self):
        s, _ = linear_chain(4, step=600)
        assert difficulty_schedule(s, self._params()) == pytest.approx(1e-3)

    def test_schedule_fast_epoch_halves(self):
        s, _ = linear_chain(4, step=300)
        assert difficulty_schedule(s, self._params()) == pytest.approx(5e-4)

    def test_schedule_two_epochs_folds(self):
        s, _ = linear_chain(8, step=300)
        # epoch 2 also took half the target: p halves twice
        assert difficulty_schedule(s, self._params()) == pytest.approx(2.5e-4)

    def test_schedule_follows_longest_chain(self):
        s, blocks = linear_chain(4, step=300)
        fork = [GENESIS]
        for i in range(1, 6):
            fork.append(Block(fork[-1].id, "f", i * 600))
        for b in fork[1:]:
            s = s.insert(b)
        assert difficulty_schedule(s, self._params()) == pytest.approx(1e-3)

    @given(st.floats(1e-12, 1.0), st.floats(1.0, 1e9))
    def test_clamped(self, p, T):
        q = difficulty_update(p, T, DifficultyState())
        assert p / 4 * (1 - 1e-12) <= q <= 4 * p * (1 + 1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            DifficultyState(p_initial=0)
        with pytest.raises(ValueError):
            difficulty_update(0, 1, DifficultyState())


def pos_kernel(seed=b"pos", window=120):
    return PermitterKernel(POS, seed, window_slots=window)


class TestPos:
    def test_single_staker(self):
        k, pool = pos_kernel(), constant_pool({"a": 1})
        for t in range(1, 121):
            perm = respond(k, PermitRequest("a", G, t, b""), t, pool)
            assert perm.kind == CRITERIA and perm.chain_ref == GENESIS.id and perm.slot == t

    def test_zero_stake(self):
        pool = constant_pool({"a": 1, "b": 0})
        assert all(respond(pos_kernel(), PermitRequest("b", G, t, b""), t, pool).kind == DENIED for t in range(1, 50))

    def test_window(self):
        k, pool = pos_kernel(window=10), constant_pool({"a": 1})
        assert respond(k, PermitRequest("a", G, 10, b""), 10, pool).granted
        assert not respond(k, PermitRequest("a", G, 11, b""), 11, pool).granted
        assert not respond(k, PermitRequest("a", G, 0, b""), 0, pool).granted

    def test_past_claim_denied_future_granted(self):
        k, pool = pos_kernel(), constant_pool({"a": 1})
        assert not respond(k, PermitRequest("a", G, 3, b""), 5, pool).granted
        assert respond(k, PermitRequest("a", G, 7, b""), 5, pool).slot == 7

    def test_exactly_one_winner(self):
        pool = constant_pool({"a": 3, "b": 1, "c": 2, "d": 0})
        k = pos_kernel()
        s, blocks = linear_chain(3)
        for state in (G, s):
            t_c = state.get(state.best_leaf).timestamp
            for t in range(t_c + 1, t_c + k.window_slots + 1):
                winners = [key for key in "abcd"
                           if respond(k, PermitRequest(key, state, t, b""), t, pool).granted]
                assert len(winners) == 1 and winners[0] != "d"

    def test_lottery_depends_on_chain(self):
        k = pos_kernel()
        stakes = {"a": 1.0, "b": 1.0}
        s, blocks = linear_chain(1)
        picks_g = [lottery_winner(k, GENESIS.id, t, stakes) for t in range(200)]
        picks_b = [lottery_winner(k, blocks[1].id, t, stakes) for t in range(200)]
        assert picks_g != picks_b


def prop1_kernel(lam=0.1, ext_no=10, x=None, seed=b"p1"):
    x = x or {"a": 4, "z": 0}
    return PermitterKernel(PROP1, seed, prop1=Prop1Params.build(lam, ext_no, x))


class TestProp1:
    def test_no_balance(self):
        k = prop1_kernel(lam=1.0)
        pool = constant_pool({"a": 0})
        assert not respond(k, PermitRequest("a", G, 0, extension_block(GENESIS.id, "a", 0, 0)), 0, pool).granted

    def test_zero_power_never_granted(self):
        k = prop1_kernel(lam=1.0)
        pool = constant_pool({"z": 1})
        for t in range(20):
            assert not respond(k, PermitRequest("z", G, t, extension_block(GENESIS.id, "z", t, 0)), t, pool).granted

    def test_single_request_is_one_bernoulli(self):
        k = prop1_kernel(lam=0.1)
        pool = constant_pool({"a": 2})
        for t in range(200):
            u = prop1_draws(k, t, "a", GENESIS.id)[0]
            perm = respond(k, PermitRequest("a", G, t, extension_block(GENESIS.id, "a", t, 0)), t, pool)
            assert perm.granted == (u < 0.2)

    def test_duplicate_request_is_malformed(self):
        k, pool = prop1_kernel(), constant_pool({"a": 1})
        req = PermitRequest("a", G, 0, extension_block(GENESIS.id, "a", 0, 1))
        respond(k, req, 0, pool)
        with pytest.raises(MalformedRequest):
            respond(k, req, 0, pool)
        respond(k, req, 1, pool)  # a new timeslot resets

    def test_budget(self):
        k, pool = prop1_kernel(lam=1.0, x={"a": 2}), constant_pool({"a": 1})
        got = [respond(k, PermitRequest("a", G, 0, extension_block(GENESIS.id, "a", 0, j)), 0, pool)
               for j in range(4)]
        assert [p.granted for p in got] == [True, True, False, False]
        assert got[2].reason == "request budget exhausted"

    def test_non_extension_denied(self):
        k, pool = prop1_kernel(lam=1.0), constant_pool({"a": 1})
        assert not respond(k, PermitRequest("a", G, 0, Block(GENESIS.id, "a", 0, b"other")), 0, pool).granted
        assert not respond(k, PermitRequest("a", G, 0, extension_block(GENESIS.id, "a", 0, 10)), 0, pool).granted

    def test_trial_draws_match_reference(self):
        k = prop1_kernel()
        fast = prop1_trial_draws(k, "a", GENESIS.id, 50, 4, start=7)
        for i in range(50):
            assert list(fast[i]) == prop1_draws(k, 7 + i, "a", GENESIS.id)[:4]

    def test_independence_within_slot(self):
        k = prop1_kernel(lam=0.3)
        n = 10 ** 5
        hits = prop1_trial_draws(k, "a", GENESIS.id, n, 4) < 0.3
        c = np.corrcoef(hits.T.astype(float))
        # sampling sd of a correlation under independence is ~ 1/sqrt(n)
        off = c[np.triu_indices(4, 1)]
        assert np.all(np.abs(off) < SIGMA_BAND / math.sqrt(n))

    def test_params_validation(self):
        with pytest.raises(ValueError):
            Prop1Params(0.1, 10, 2, (("a", 3),))
        assert Prop1Params.build(0.1, 3, {"a": 8}).requests_allowed("a") == 3


def quorum_kernel():
    return PermitterKernel(QUORUM, b"q", quorum=QuorumParams.from_weights({"a": 1, "b": 1, "c": 1}))


def test_quorum_vote_scope_and_voter():
    k, pool = quorum_kernel(), constant_pool({"a": 1, "b": 1, "c": 1})
    v = Vote("a", GENESIS.id, 0)
    ok = respond(k, PermitRequest("a", G, 0, v), 0, pool)
    assert ok.kind == SPECIFIC and ok.scope == "vote"
    bad = respond(k, PermitRequest("b", G, 0, v), 0, pool)
    assert bad.kind == DENIED and bad.scope == "vote"


def test_quorum_single_leader_per_round():
    k, pool = quorum_kernel(), constant_pool({"a": 1, "b": 1, "c": 1})
    for t in range(0, 200, 4):
        leaders = [x for x in "abc" if respond(k, PermitRequest(x, G, t, b""), t, pool).kind == CRITERIA]
        assert len(leaders) == 1


KINDS = {
    "pow": lambda: pow_kernel(1.0),
    "pos": pos_kernel,
    "prop1": lambda: prop1_kernel(lam=1.0, x={"a": 10}),
    "quorum": quorum_kernel,
}


@given(st.sampled_from(sorted(KINDS)), st.integers(0, 300), st.integers(0, 300), st.integers(0, 9),
       st.booleans())
def test_no_balance_no_voice(kind, t, claim, j, vote):
    k = KINDS[kind]()
    pool = constant_pool({"a": 0.0, "b": 1.0})
    data = {
        "pow": Block(GENESIS.id, "a", t),
        "pos": b"",
        "prop1": extension_block(GENESIS.id, "a", t, j),
        "quorum": Vote("a", GENESIS.id, t // 4) if vote else b"",
    }[kind]
    assert respond(k, PermitRequest("a", G, claim, data), t, pool).kind == DENIED


def test_determinism_contract_across_worlds():
    """Same key inputs give identical answers whatever else the kernel has seen."""
    s, _ = linear_chain(3)

    def key_a_answers(others: bool, pool):
        k = pow_kernel(0.3, seed=b"shared")
        out = []
        for t in range(400):
            if others:
                for other in ("b", "c"):
                    respond(k, pow_req(other, t, s), t, pool)
            out.append(respond(k, pow_req("a", t, s), t, pool))
        return out

    lone = key_a_answers(False, constant_pool({"a": 1}))
    crowded = key_a_answers(True, constant_pool({"a": 1, "b": 7, "c": 0.5}))
    assert lone == crowded
    assert any(p.granted for p in lone) and not all(p.granted for p in lone)


def test_determinism_contract_history_matters():
    pool = constant_pool({"a": 1})
    k1, k2 = pow_kernel(0.3, seed=b"h"), pow_kernel(0.3, seed=b"h")
    for t in range(100):
        respond(k1, pow_req("a", t), t, pool)  # k2 never saw these
    a = [respond(k1, pow_req("a", t), t, pool).granted for t in range(100, 400)]
    b = [respond(k2, pow_req("a", t), t, pool).granted for t in range(100, 400)]
    assert a != b
