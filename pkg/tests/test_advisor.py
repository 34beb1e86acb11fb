import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from llmq_vrp import env as E
from llmq_vrp.advisor import (PHYSICAL, SEMANTIC, SYNTAX, MemoryPool, PhysicalError, SemanticError,
                              TrajectorySyntaxError, advise, build_prompt, filter_candidates,
                              parse_reply, physical_check, pool_update, safe_advise,
                              semantic_check)
from llmq_vrp.backends import MockBackend
from llmq_vrp.errors import BackendUnavailable
from llmq_vrp.instance import with_breaks

from conftest import pyth, reachable_states, seeded


class Garbage:
    calls = 0

    def complete(self, prompt):
        self.calls += 1
        return "I would rather not."


class Down:
    def complete(self, prompt):
        raise BackendUnavailable("no route to host")


# -- prompt ----------------------------------------------------------------

def test_prompt_omits_empty_sections(fixture4):
    text = build_prompt(E.reset(fixture4), fixture4)
    assert "## Memory pool" not in text
    assert "## Errors" not in text
    assert "## Broken roads" not in text


def test_prompt_byte_stable(fixture4):
    pool = MemoryPool().update([1, 2, 0, 3, 0], -300.0)
    a = build_prompt(E.reset(fixture4), fixture4, pool, ["x"])
    assert a == build_prompt(E.reset(fixture4), fixture4, pool, ["x"])
    assert "return -300: [1, 2, 0, 3, 0]" in a


def test_prompt_lists_each_pending_customer_once(fixture4):
    s = E.EnvState(1, 6.0, (False, True, True), 3.0)
    text = build_prompt(s, fixture4)
    line = next(ln for ln in text.splitlines() if ln.startswith("pending:"))
    assert line.split()[1:] == ["2", "3"]


def test_prompt_drops_irrelevant_breaks():
    inst = pyth(breaks=[(1, 2, 4.5), (2, 3, 9.0)], windows={2: (0.0, 30.0)})
    text = build_prompt(E.reset(inst), inst)
    assert "## Broken roads" in text and "1 2 4.5\n2 3 9\n" in text
    assert "2 4 0 5 0 30" in text and "0 0 0 0 0 open" in text
    # only customer 1 left: every broken road touches a served node
    late = E.EnvState(3, 9.0, (True, False, False), 5.0)
    assert "## Broken roads" not in build_prompt(late, inst)


# -- parsing ---------------------------------------------------------------

def test_parse_three():
    assert parse_reply("[[1,3,2],[2,1,3],[3,2,1]]") == [[1, 3, 2], [2, 1, 3], [3, 2, 1]]


def test_parse_embedded_in_reasoning():
    assert parse_reply("Let me think.\nAnswer: [[1, 0, 2], [2]] done") == [[1, 0, 2], [2]]


def test_parse_arrow_text():
    with pytest.raises(TrajectorySyntaxError):
        parse_reply("route: 1→3→2")


def test_parse_bad_token_named():
    with pytest.raises(TrajectorySyntaxError) as ei:
        parse_reply("[[1, 2.5, 3]]")
    assert "'2.5'" in str(ei.value)


# -- semantic --------------------------------------------------------------

def test_semantic(fixture4):
    s = E.EnvState(0, 10.0, (False, True, True), 6.0, 2)
    with pytest.raises(SemanticError):
        semantic_check([1, 2], s, fixture4)
    semantic_check([3, 2], s, fixture4)
    semantic_check([2, 0, 3], s, fixture4)
    with pytest.raises(SemanticError):
        semantic_check([4], s, fixture4)
    with pytest.raises(SemanticError):
        semantic_check([2, 2], s, fixture4)
    with pytest.raises(SemanticError):
        semantic_check([], s, fixture4)


# -- physical --------------------------------------------------------------

def test_physical_capacity():
    inst = pyth(demands=(6, 5, 1))
    with pytest.raises(PhysicalError) as ei:
        physical_check([1, 2, 0, 3], E.reset(inst), inst)
    assert ei.value.kind == "CapacityExceeded" and ei.value.leg == 1


def test_physical_broken_edge(fixture3):
    inst = with_breaks(fixture3, [(1, 2, 7.5)])  # arrival at 2 via 1 is t = 8
    with pytest.raises(PhysicalError) as ei:
        physical_check([1, 2], E.reset(inst), inst)
    assert ei.value.kind == "BrokenEdgeUsed" and ei.value.leg == 1
    assert "t=8" in str(ei.value)


def test_physical_window():
    inst = pyth(2, windows={2: (0.0, 7.0)})
    with pytest.raises(PhysicalError) as ei:
        physical_check([1, 2], E.reset(inst), inst)
    assert ei.value.kind == "WindowMissed"


def test_physical_feasible_singleton(fixture4):
    physical_check([1], E.reset(fixture4), fixture4)


# -- advise ----------------------------------------------------------------

def test_mock_accepts_in_first_round(fixture4):
    cs = advise(E.reset(fixture4), fixture4, MockBackend(0))
    assert cs.rounds == 1
    assert cs.accepted


def test_garbage_backend_exhausts_rounds(fixture4):
    be = Garbage()
    cs = advise(E.reset(fixture4), fixture4, be, max_rounds=3)
    assert cs.accepted == [] and cs.action_set == set()
    assert be.calls == 3 and cs.rounds == 3


def test_errors_fed_back_verbatim(fixture4):
    cs = advise(E.reset(fixture4), fixture4, Garbage(), max_rounds=2)
    first = filter_candidates("I would rather not.", E.reset(fixture4), fixture4)[0].message
    assert first in cs.prompts[1]
    assert first not in cs.prompts[0]


def test_safe_advise_outage(fixture4):
    assert safe_advise(E.reset(fixture4), fixture4, Down()) is None
    with pytest.raises(BackendUnavailable):
        advise(E.reset(fixture4), fixture4, Down())


@pytest.mark.parametrize("fault, layer", [
    ("syntax", SYNTAX), ("hallucinate", SEMANTIC), ("infeasible", PHYSICAL)])
def test_fault_modes_rejected_at_their_layer(fault, layer):
    inst = seeded(6, 2)
    rng = np.random.default_rng(0)
    for s in reachable_states(inst, rng, 20):
        cs = advise(s, inst, MockBackend(1, fault=fault), max_rounds=2)
        assert cs.verdicts and not cs.accepted
        assert {v.layer for v in cs.verdicts} == {layer}


def test_filter_order_recorded():
    inst = pyth()
    s = E.reset(inst)
    vs = filter_candidates("[[9], [1, 2, 0, 3], [1, 1]]", s, inst)
    assert [v.layers_run for v in vs] == [(SYNTAX, SEMANTIC), (SYNTAX, SEMANTIC, PHYSICAL),
                                         (SYNTAX, SEMANTIC)]
    assert [v.layer for v in vs] == [SEMANTIC, None, SEMANTIC]
    assert filter_candidates("nope", s, inst)[0].layers_run == (SYNTAX,)


@given(st.integers(0, 60), st.integers(0, 1000), st.integers(0, 5))
@settings(max_examples=30, deadline=None)
def test_accepted_candidates_replay_clean(iseed, sseed, mseed):
    inst = seeded(6, iseed % 12 + 1, tightness=0.4)
    s = reachable_states(inst, np.random.default_rng(sseed), 1)[0]
    cs = advise(s, inst, MockBackend(mseed))
    for traj in cs.accepted:
        cur = s
        params = E.RewardParams(mask_breaks=False)
        for a in traj:
            o = E.step(cur, a, inst, params)
            assert not o.info.violated
            cur = o.next
            if o.done:
                break


def test_advise_deterministic():
    inst = seeded(6, 2)
    s = E.reset(inst)
    a = advise(s, inst, MockBackend(4))
    b = advise(s, inst, MockBackend(4))
    assert a.raw_replies == b.raw_replies and a.accepted == b.accepted


# -- memory pool -----------------------------------------------------------

def test_pool_keeps_best():
    pool = MemoryPool(2)
    for traj, ret in (([1], 5.0), ([2], 9.0), ([3], 7.0)):
        pool_update(pool, traj, ret)
    assert pool.returns == [9.0, 7.0]


def test_pool_duplicate_keeps_higher():
    pool = MemoryPool(3)
    pool.update([1, 2], 3.0).update([1, 2], 8.0).update([1, 2], 1.0)
    assert len(pool) == 1 and pool.returns == [8.0]


def test_pool_empty_is_noop():
    pool = MemoryPool(3)
    assert len(pool_update(pool, [], 100.0)) == 0
