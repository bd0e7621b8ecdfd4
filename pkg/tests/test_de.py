import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irsa.capture import ChannelModel, capture_prob
from irsa.de import (
    DeConfig,
    MonotonicityError,
    SeriesTruncationError,
    ThresholdSearch,
    _PlrOracle,
    de_fixed_point,
    decoding_threshold,
    f_b,
    f_s,
    f_s_reference,
    plr_from_p,
    zero_load_plr,
)
from irsa.degree import DegreeDistribution, EdgeDistribution, known_distribution, to_edge_perspective

from oracles import collision_threshold

CH = ChannelModel.from_db(20, 3)
X2 = DegreeDistribution({2: 1.0})


def test_fb_endpoints():
    lam = to_edge_perspective(known_distribution("L1"))
    assert f_b(1.0, lam) == pytest.approx(1.0, abs=1e-15)
    assert f_b(0.0, lam) == 0.0
    assert f_b(0.5, EdgeDistribution({2: 1.0})) == 0.5


def test_fb_increasing():
    lam = to_edge_perspective(known_distribution("L2"))
    vals = [f_b(p, lam) for p in np.linspace(0, 1, 101)]
    assert np.all(np.diff(vals) > 0)


def test_fs_at_zero():
    floor = 1 - math.exp(-CH.threshold_linear / CH.avg_snr_linear)
    for a in [0.0, 0.5, 3.0, 8.0]:
        assert f_s(0.0, a, CH) == pytest.approx(floor, abs=1e-15)
        assert f_s(0.0, a, CH) == pytest.approx(1 - capture_prob(1, CH), abs=1e-15)


def test_fs_empty_system():
    floor = 1 - math.exp(-CH.threshold_linear / CH.avg_snr_linear)
    for q in np.linspace(0, 1, 11):
        assert f_s(q, 0.0, CH) == pytest.approx(floor, abs=1e-15)


def test_fs_against_double_sum():
    offered = 1.8 / 0.25
    assert f_s(1.0, offered, CH) == pytest.approx(f_s_reference(1.0, offered, CH), abs=1e-9)


def test_reference_edge_cases():
    floor = 1 - math.exp(-CH.threshold_linear / CH.avg_snr_linear)
    assert f_s_reference(0.0, 4.0, CH) == pytest.approx(floor, abs=1e-12)
    assert f_s_reference(0.7, 0.0, CH) == pytest.approx(floor, abs=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 8.0), st.floats(0.0, 40.0), st.floats(0.0, 10.0))
@settings(max_examples=40, deadline=None)
def test_fs_identity_random_channels(q, a, snr_db, thr_db):
    ch = ChannelModel.from_db(snr_db, thr_db)
    assert f_s(q, a, ch) == pytest.approx(f_s_reference(q, a, ch), abs=1e-9)


@pytest.mark.parametrize("snr_db,thr_db", [(20, 3), (10, 0), (30, 6), (0, 0)])
def test_fs_nondecreasing(snr_db, thr_db):
    ch = ChannelModel.from_db(snr_db, thr_db)
    for a in [0.5, 2.0, 5.0, 8.0, 16.0]:
        v = [f_s(q, a, ch) for q in np.linspace(0, 1, 401)]
        assert np.all(np.diff(v) >= -1e-14)


def test_fs_truncation_is_reported():
    with pytest.raises(SeriesTruncationError):
        f_s(0.9, 6.0, CH, DeConfig(series_max_terms=2))


def test_input_ranges():
    with pytest.raises(ValueError):
        f_s(1.2, 1.0, CH)
    with pytest.raises(ValueError):
        f_s(0.5, -1.0, CH)
    with pytest.raises(ValueError):
        f_b(-0.1, EdgeDistribution({2: 1.0}))
    with pytest.raises(ValueError):
        de_fixed_point(X2, -1.0, CH)


def test_zero_load():
    res = de_fixed_point(X2, 0.0, CH)
    e = 1 - capture_prob(1, CH)
    assert res.p_inf == pytest.approx(e, abs=1e-14)
    assert res.plr == pytest.approx(e ** 2, abs=1e-14)
    assert res.plr == pytest.approx(3.90e-4, rel=2e-3)
    assert res.converged


@pytest.mark.parametrize("name", ["L1", "L2", "L3", "L4", "L5"])
def test_zero_load_plr_formula(name):
    d = known_distribution(name)
    assert de_fixed_point(d, 0.0, CH).plr == pytest.approx(zero_load_plr(d, CH), abs=1e-10)
    assert de_fixed_point(d, 1e-9, CH).plr == pytest.approx(zero_load_plr(d, CH), abs=1e-10)


def test_l1_around_threshold():
    d = known_distribution("L1")
    assert de_fixed_point(d, 1.80, CH).plr < 1e-2
    assert de_fixed_point(d, 1.95, CH).plr >= 1e-2


def test_sequence_nonincreasing():
    d = known_distribution("L1")
    lam = to_edge_perspective(d)
    for load in [0.5, 1.5, 1.86, 1.9, 2.5]:
        a = load * d.avg_degree()
        p = f_s(1.0, a, CH)
        seq = [p]
        for _ in range(3000):
            p = f_s(f_b(p, lam), a, CH)
            seq.append(p)
        seq = np.array(seq)
        assert np.all(np.diff(seq) <= 1e-14)
        assert np.all((seq >= 0) & (seq <= 1))
        res = de_fixed_point(d, load, CH)
        if res.converged:
            assert res.p_inf == pytest.approx(seq[-1], abs=1e-9)
            assert plr_from_p(d, res.p_inf) == pytest.approx(res.plr)


def test_nonconvergence_is_flagged():
    res = de_fixed_point(known_distribution("L1"), 1.86, CH, DeConfig(max_iterations=3))
    assert not res.converged
    assert res.iterations_used == 3


def test_threshold_x2_collision_like():
    ch = ChannelModel.from_db(150, 80)
    g = decoding_threshold(X2, ch, 1e-2, search=ThresholdSearch(resolution=1e-5))
    ref = collision_threshold({2: 1.0}, 1e-2)
    assert g == pytest.approx(ref, abs=1e-3)
    # regular degree 2 has no waterfall: p_inf = 0.1 at the threshold
    assert ref == pytest.approx(-math.log(0.9) / 0.2, abs=1e-4)


def test_threshold_infeasible_channel(caplog):
    ch = ChannelModel.from_db(3, 3)
    with caplog.at_level(logging.WARNING):
        assert decoding_threshold(known_distribution("L1"), ch, 1e-2) == 0.0
    assert "threshold is 0" in caplog.text


def test_threshold_monotonicity_violation(monkeypatch):
    monkeypatch.setattr(_PlrOracle, "meets", lambda self, g: g < 1.0 or 2.0 < g < 2.2)
    with pytest.raises(MonotonicityError):
        decoding_threshold(X2, CH, 1e-2)


def test_threshold_saturated_scan():
    g = decoding_threshold(X2, CH, 0.5, search=ThresholdSearch(g_hi=0.2))
    assert g == 0.2


@pytest.mark.parametrize("name", ["L1", "L4"])
def test_threshold_insensitive_to_numerics(name):
    d = known_distribution(name)
    search = ThresholdSearch(resolution=1e-3)
    base = decoding_threshold(d, CH, 1e-2, DeConfig(), search)
    more = decoding_threshold(d, CH, 1e-2, DeConfig(max_iterations=20_000, series_term_tol=5e-16), search)
    assert abs(base - more) <= search.resolution


def test_threshold_resolution():
    d = known_distribution("L3")
    fine = decoding_threshold(d, CH, search=ThresholdSearch(resolution=1e-5))
    coarse = decoding_threshold(d, CH, search=ThresholdSearch(resolution=1e-2))
    assert fine - 1e-2 <= coarse <= fine + 1e-5
    assert de_fixed_point(d, fine, CH).plr < 1e-2
    assert de_fixed_point(d, fine + 2e-5, CH).plr >= 1e-2
