import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from llmq_vrp import instance as I
from llmq_vrp.errors import (DepotDemandNonzero, DuplicateNodeId, InfeasibleAugmentation,
                             MalformedLine, MissingSection, ParseError, SchemaVersionMismatch)

from conftest import PYTH_VRP, pyth


def test_parse_pythagorean_fixture():
    inst = I.parse_vrp(PYTH_VRP)
    assert inst.n_nodes == 4
    assert inst.capacity == 10
    assert inst.max_routes == 2  # from "-k2" in the name
    assert inst.dist[0, 1] == 3.0
    assert inst.dist[0, 2] == 4.0
    assert inst.dist[1, 2] == 5.0
    assert inst.demands.tolist() == [0, 4, 5, 1]
    assert inst.breaks == ()
    assert all(math.isinf(n.window[1]) for n in inst.nodes)


def test_missing_demand_section():
    text = PYTH_VRP.replace("DEMAND_SECTION\n1 0\n2 4\n3 5\n4 1\n", "")
    with pytest.raises(MissingSection):
        I.parse_vrp(text)


def test_depot_renumbered_to_zero():
    text = PYTH_VRP.replace("DEPOT_SECTION\n1", "DEPOT_SECTION\n3").replace(
        "1 0\n2 4\n3 5", "1 5\n2 4\n3 0")
    inst = I.parse_vrp(text)
    assert (inst.nodes[0].x, inst.nodes[0].y) == (4.0, 0.0)
    assert inst.nodes[0].demand == 0


@pytest.mark.parametrize("mutate, err", [
    (lambda t: t.replace("2 0 3", "2 0 x"), MalformedLine),
    (lambda t: t.replace("3 4 0\n", "2 4 0\n"), DuplicateNodeId),
    (lambda t: t.replace("DEMAND_SECTION\n1 0", "DEMAND_SECTION\n1 2"), DepotDemandNonzero),
])
def test_parse_errors(mutate, err):
    with pytest.raises(err):
        I.parse_vrp(mutate(PYTH_VRP))


def test_malformed_line_carries_line_number():
    with pytest.raises(MalformedLine) as ei:
        I.parse_vrp(PYTH_VRP.replace("2 0 3", "2 0 x"))
    assert ei.value.line == 9


def test_route_count_fallbacks():
    text = PYTH_VRP.replace("pyth-k2", "pyth").replace("four node fixture", "trucks: 3")
    assert I.parse_vrp(text).max_routes == 3
    text = PYTH_VRP.replace("pyth-k2", "pyth")
    assert I.parse_vrp(text).max_routes == 1  # ceil(10 / 10)


A_N32 = os.environ.get("LLMQ_A_N32_K5")


@pytest.mark.skipif(not A_N32 or not os.path.exists(A_N32 or ""),
                    reason="set LLMQ_A_N32_K5 to the Augerat A-n32-k5.vrp file")
def test_real_augerat_file():
    inst = I.read_vrp(A_N32)
    assert inst.n_nodes == 32
    assert inst.capacity == 100
    assert inst.max_routes == 5
    assert inst.nodes[0].demand == 0


@given(st.integers(2, 9), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_distance_symmetric_and_euclidean(n, seed):
    inst = I.synthetic_instance(n, seed)
    d = inst.dist
    assert np.array_equal(d, d.T)
    xy = inst.coords
    ref = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
    assert np.max(np.abs(d - ref)) <= 1e-9


def test_augment_zero_breaks():
    inst = I.augment(I.synthetic_instance(6, 3), I.AugmentConfig(break_fraction=0.0, seed=3))
    assert inst.breaks == ()
    assert all(inst.edge(i, j).break_time is None for (i, j) in inst.edges)


def test_augment_deterministic_bytes():
    base = I.synthetic_instance(6, 11)
    cfg = I.AugmentConfig(0.3, 0.2, 11)
    assert I.serialize(I.augment(base, cfg)) == I.serialize(I.augment(base, cfg))


def test_augment_break_count_six_customers():
    inst = I.augment(I.synthetic_instance(6, 7), I.AugmentConfig(0.3, 0.2, 7))
    n = inst.n_nodes
    assert len(inst.breaks) == math.ceil(0.2 * n * (n - 1) / 2) == 5
    assert all(i != 0 and j != 0 for i, j, _ in inst.breaks)


@given(st.integers(1, 7), st.integers(0, 500), st.floats(0.1, 1.0), st.floats(0.0, 0.4))
@settings(max_examples=40, deadline=None)
def test_augmented_instances_pass_screen(n, seed, tight, frac):
    try:
        inst = I.augment(I.synthetic_instance(n, seed), I.AugmentConfig(tight, frac, seed))
    except InfeasibleAugmentation:
        return
    assert I.passes_screen(inst)
    for i in inst.customers:
        direct = inst.dist[0, i]
        assert direct <= inst.window_close[i]  # single-customer route reaches the window
    reach = I.earliest_arrivals(inst)
    assert np.all(reach[1:] <= inst.window_close[1:])


def test_augment_window_width():
    inst = I.augment(I.synthetic_instance(5, 2), I.AugmentConfig(0.25, 0.0, 2))
    w = inst.window_close[1:] - inst.window_open[1:]
    # windows clipped at zero are narrower; the rest have the full width
    assert np.all(w <= 0.25 * inst.horizon + 1e-9)
    assert np.isclose(w.max(), 0.25 * inst.horizon)


def test_round_trip_fixture():
    inst = pyth()
    assert I.deserialize(I.serialize(inst)) == inst


def test_round_trip_augmented():
    inst = I.augment(I.synthetic_instance(6, 1), I.AugmentConfig(0.3, 0.2, 1))
    text = I.serialize(inst)
    back = I.deserialize(text)
    assert back == inst
    assert I.serialize(back) == text


def test_open_window_token():
    text = I.serialize(pyth())
    assert '"open"' in text


def test_tampered_field_name():
    text = I.serialize(pyth()).replace('"demand"', '"demnad"', 1)
    with pytest.raises(ParseError) as ei:
        I.deserialize(text)
    assert "nodes[0]" in str(ei.value.position)


def test_version_mismatch():
    text = I.serialize(pyth()).replace('"format_version": 1', '"format_version": 2')
    with pytest.raises(SchemaVersionMismatch):
        I.deserialize(text)


def test_breaks_canonical_order():
    a = pyth(breaks=[(2, 1, 4.0), (3, 1, 2.0)])
    assert a.breaks == ((1, 2, 4.0), (1, 3, 2.0))
    assert a.break_times[2, 1] == 4.0
    assert a.edge(1, 3).break_time == 2.0
    assert not pyth(breaks=[(1, 2, 0.0)]).edge(2, 1).passable


def test_save_load(tmp_path):
    inst = pyth()
    I.save(inst, tmp_path / "x.json")
    assert I.load(tmp_path / "x.json") == inst
