import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prada import presets
from prada.link import (
    LinkTableError,
    SettingTable,
    active_mask,
    dump_fer_table,
    first_frame_throughput,
    first_frame_throughputs,
    load_fer_table,
    state_fer_from_curve,
)


def test_reference_table_loads(ref_fer):
    E = ref_fer.fer
    assert E.shape == (5, 7)
    assert E[0, 3] == 0.9193
    assert E[1, 4] == 0.0411
    assert E[4, 1] == 0.3662


@pytest.mark.parametrize("value", ["0", "1"])
def test_extreme_tables_load(ref_settings, value):
    text = "s1,s2,s3,s4,s5\n" + "\n".join([",".join([value] * 5)] * 7)
    assert np.all(load_fer_table(text, ref_settings, 7).fer == float(value))


def test_wrong_row_count(ref_settings):
    rows = presets.fer_csv().strip().splitlines()[:-1]
    with pytest.raises(LinkTableError, match="6 state rows, channel has 7"):
        load_fer_table("\n".join(rows), ref_settings, 7)


def test_bad_cell_is_located(ref_settings):
    text = presets.fer_csv().replace("0.0411", "oops")
    with pytest.raises(LinkTableError, match=r"row 5, column 2"):
        load_fer_table(text, ref_settings, 7)


def test_out_of_range_value(ref_settings):
    text = presets.fer_csv().replace("0.0411", "1.2")
    with pytest.raises(LinkTableError, match="out of"):
        load_fer_table(text, ref_settings, 7)


def test_monotonicity_violation(ref_settings):
    text = presets.fer_csv().replace("0.3662", "0.9")  # s5 worse than s4 in w2
    with pytest.raises(LinkTableError, match="increases"):
        load_fer_table(text, ref_settings, 7)
    with pytest.warns(UserWarning):
        load_fer_table(text, ref_settings, 7, strict_monotone=False)


def test_rates_must_not_increase():
    with pytest.raises(LinkTableError):
        SettingTable.from_records([
            {"label": "a", "frame_symbols": 1, "data_bits_per_frame": 10},
            {"label": "b", "frame_symbols": 1, "data_bits_per_frame": 20},
        ])


def test_dump_round_trip(ref_settings, ref_fer):
    again = load_fer_table(dump_fer_table(ref_fer, ref_settings), ref_settings, 7)
    np.testing.assert_array_equal(again.fer, ref_fer.fer)


def test_first_frame_throughput_values(ref_settings, ref_fer):
    assert first_frame_throughput(2, 2, ref_settings, ref_fer) == pytest.approx(2485.21, abs=0.01)
    assert first_frame_throughput(0, 0, ref_settings, ref_fer) == 0.0
    assert first_frame_throughput(0, 6, ref_settings, ref_fer) == pytest.approx(5461 * (1 - 0.0045))
    np.testing.assert_allclose(
        first_frame_throughputs(ref_settings, ref_fer)[:, 2], [0.0, 251.0848, 2485.21, 2001.1008, 1010.8928]
    )
    with pytest.raises(IndexError):
        first_frame_throughput(5, 0, ref_settings, ref_fer)


def test_active_mask():
    assert active_mask(4, [1, 3]).tolist() == [False, True, False, True]
    with pytest.raises(LinkTableError):
        active_mask(4, [5])


def test_constant_curve(ref_channel):
    for i in range(1, 8):
        assert state_fer_from_curve(lambda g: 0.37, i, ref_channel) == pytest.approx(0.37, rel=1e-9)


@pytest.mark.parametrize("state", [1, 3, 6])
def test_step_curve_matches_closed_form(ref_channel, state):
    lo, hi = ref_channel.partition.boundaries[state - 1 : state + 1]
    g0 = ref_channel.avg_snr
    mid = 0.5 * (lo + hi)
    curve = lambda g: 1.0 if g < mid else 0.0  # noqa: E731
    expected = (math.exp(-lo / g0) - math.exp(-mid / g0)) / (math.exp(-lo / g0) - math.exp(-hi / g0))
    assert state_fer_from_curve(curve, state, ref_channel) == pytest.approx(expected, rel=1e-6)


def test_step_curve_on_open_interval(ref_channel):
    lo = ref_channel.partition.boundaries[6]
    g0 = ref_channel.avg_snr
    cut = lo + g0
    expected = 1.0 - math.exp(-1.0)
    got = state_fer_from_curve(lambda g: 1.0 if g < cut else 0.0, 7, ref_channel)
    assert got == pytest.approx(expected, rel=1e-6)


def test_decreasing_curve_gives_decreasing_states(ref_channel):
    vals = [state_fer_from_curve(lambda g: math.exp(-g), i, ref_channel) for i in range(1, 8)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


@given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_sorted_tables_always_load(values):
    col = sorted(values, reverse=True)
    s = SettingTable.from_records(
        {"label": str(r), "frame_symbols": 1, "data_bits_per_frame": 3 - r} for r in range(3)
    )
    text = "a,b,c\n" + ",".join(repr(v) for v in col) + "\n"
    assert load_fer_table(text, s, 1).fer[:, 0].tolist() == col
