from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_patient
from warfarin_xrl.errors import ConfigError, DomainError
from warfarin_xrl.mdp import Observation
from warfarin_xrl.protocols import (BUILTIN_PROTOCOLS, ProtocolRow, ProtocolTable, body_surface_area, builtin_protocol,
                                    iwpc_initial_dose, lenzini_adjust, load_table, parse_table, table_decide)


def test_iwpc_reference_patient_hand_calculation():
    # age 60 y (6 decades), 68 in = 172.72 cm, 180 lb = 81.6466266 kg, *1/*1, G/G, White
    x = 5.6044 - 0.2614 * 6 + 0.0087 * 172.72 + 0.0128 * 81.6466266
    d = iwpc_initial_dose(make_patient())
    assert d.dose == pytest.approx(x * x / 7.0, abs=1e-9)
    assert d.duration == 4


def test_iwpc_variant_patient_hand_calculation():
    p = make_patient(age=75.0, cyp2c9="*1/*3", vkorc1="A/A", race="Asian", amiodarone=True)
    x = 5.6044 - 0.2614 * 7 + 0.0087 * 172.72 + 0.0128 * 81.6466266 - 1.6974 - 0.9357 - 0.1092 - 0.5503
    assert iwpc_initial_dose(p).dose == pytest.approx(x * x / 7.0, abs=1e-9)


def test_iwpc_vkorc1_direction_and_determinism():
    gg = iwpc_initial_dose(make_patient())
    aa = iwpc_initial_dose(make_patient(vkorc1="A/A"))
    assert aa.dose < gg.dose
    assert iwpc_initial_dose(make_patient()) == gg


def test_lenzini_reference_hand_calculation():
    p = make_patient(cyp2c9="*1/*2", vkorc1="G/A")
    inr, prev = 1.8, 5.0
    bsa = math.sqrt(172.72 * 81.6466266 / 3600.0)
    x = (3.10894 - 0.00767 * 60 - 0.51611 * math.log(inr) - 0.23032 * 1 - 0.14745 * 1
         + 0.24597 * bsa + 0.26729 * 2.5 + (0.0169 + 0.02018 + 0.01065) * prev)
    d = lenzini_adjust(Observation(inr, 1.0, prev, 4), p)
    assert d.dose == pytest.approx(math.exp(x) / 7.0, abs=1e-9)
    assert d.duration == 7
    assert body_surface_area(p) == pytest.approx(bsa)


def test_lenzini_higher_inr_not_higher_dose():
    p = make_patient()
    lo = lenzini_adjust(Observation(1.5, 1.0, 5.0, 4), p)
    hi = lenzini_adjust(Observation(3.5, 1.0, 5.0, 4), p)
    assert hi.dose <= lo.dose
    assert lenzini_adjust(Observation(1.5, 1.0, 5.0, 4), p) == lo


def obs(inr, dose=5.0):
    return Observation(inr, 1.0, dose, 7)


def test_aurora_in_range_no_change():
    d = table_decide(load_table("aurora"), obs(2.5))
    assert d.dose == 5.0 and d.percent_change == 0.0 and d.duration == 7


def test_boundary_inclusive_upper():
    table = load_table("aurora")
    assert table.lookup(2.0).high == 2.0
    assert table.lookup(3.0).high == 3.0
    assert table.lookup(np.nextafter(3.0, 4.0)).low == 3.0


def test_explainable_table_examples():
    table = load_table("explainable")
    assert table_decide(table, obs(2.0)).dose == pytest.approx(8.0)
    assert table_decide(table, obs(2.5)).percent_change == 0.0
    assert table_decide(table, obs(3.5)).percent_change == -0.5
    assert table.cutoffs == [2.27, 2.94]


def test_builtin_cutpoints_and_caps():
    aurora = load_table("aurora")
    assert aurora.cutoffs == [1.6, 1.8, 2.0, 3.0, 3.4, 5.0]
    assert max(abs(r.percent_change) for r in aurora.rows) <= 0.10
    inter = load_table("intermountain")
    assert max(abs(r.percent_change) for r in inter.rows) <= 0.15


def test_one_time_actions():
    aurora = load_table("aurora")
    low = table_decide(aurora, obs(1.2, 5.0))
    assert low.first_day_dose == pytest.approx(11.0) and low.dose == pytest.approx(5.5)
    high = table_decide(aurora, obs(6.0, 5.0))
    assert high.first_day_dose == 0.0 and high.dose == pytest.approx(4.5)


@pytest.mark.parametrize("rows", [
    [ProtocolRow(0, 2, 0.1), ProtocolRow(1.9, math.inf, 0.0)],   # overlap
    [ProtocolRow(0, 2, 0.1), ProtocolRow(2.1, math.inf, 0.0)],   # gap
    [ProtocolRow(0, 2, 0.1), ProtocolRow(2, 5, 0.0)],            # not to infinity
    [ProtocolRow(0.5, math.inf, 0.0)],                           # not from zero
    [],
])
def test_partition_validation(rows):
    with pytest.raises(DomainError):
        ProtocolTable(rows)


def test_table_csv_round_trip(tmp_path):
    table = load_table("intermountain")
    path = tmp_path / "t.csv"
    table.to_csv(path, ["provenance"])
    assert load_table(path) == table


def test_bad_header():
    with pytest.raises(ConfigError):
        parse_table("lo,hi,pct\n0,inf,0,none\n")


def test_markdown_layout():
    md = load_table("explainable").to_markdown()
    assert "INR ≤ 2.27" in md and "2.94 < INR" in md and "+60%" in md and "-50%" in md


@settings(max_examples=200, deadline=None)
@given(inr=st.floats(0.05, 20.0), dose=st.floats(0.0, 15.0),
       name=st.sampled_from(["aurora", "intermountain", "explainable"]))
def test_table_outputs_respect_dose_range(inr, dose, name):
    d = table_decide(load_table(name), obs(inr, dose))
    assert 0.0 <= d.dose <= 15.0
    if d.first_day_dose is not None:
        assert 0.0 <= d.first_day_dose <= 15.0


@settings(max_examples=100, deadline=None)
@given(inr=st.floats(0.3, 10.0), dose=st.floats(0.0, 15.0), idx=st.integers(0, 3))
def test_batch_matches_scalar_decisions(inr, dose, idx):
    p = make_patient()
    policy = builtin_protocol(BUILTIN_PROTOCOLS[idx])
    o = obs(inr, dose)
    for day in (5, 12):
        single = policy.decide(o, p, day)
        b_dose, b_first, _, _ = policy.decide_batch(o.as_array()[None, :], [p], day)
        assert b_dose[0] == pytest.approx(single.dose, abs=1e-12)
        if single.first_day_dose is None:
            assert np.isnan(b_first[0])
        else:
            assert b_first[0] == pytest.approx(single.first_day_dose)


def test_unknown_protocol():
    with pytest.raises(ConfigError):
        builtin_protocol("nope")
