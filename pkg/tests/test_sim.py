import io
import logging
import math

import numpy as np
import pytest
from scipy import stats

from irsa.capture import ChannelModel, capture_prob
from irsa.de import zero_load_plr
from irsa.degree import DegreeDistribution, binomial_slot_dist, known_distribution
from irsa.sim import (
    CSV_COLUMNS,
    FrameRealization,
    SimConfig,
    Termination,
    decode_frame,
    frame_rng,
    generate_frame,
    load_sweep,
    run_simulation,
    write_sweep_csv,
)

from oracles import all_orders, brute_force_closure, python_decoder

CH = ChannelModel.from_db(20, 3)
B = CH.threshold_linear
log = logging.getLogger(__name__)


def _users(frame):
    return [list(zip(s.tolist(), x.tolist())) for s, x in frame.users]


def test_generate_single_user():
    f = generate_frame(10, 1, DegreeDistribution({2: 1.0}), CH, np.random.default_rng(0))
    assert f.n_users == 1
    assert f.slots.size == 2 and len(set(f.slots.tolist())) == 2
    f.validate()


def test_generate_rejects_oversized_degree():
    with pytest.raises(ValueError):
        generate_frame(10, 3, known_distribution("L1"), CH, np.random.default_rng(0))


def test_generate_all_slots_degree():
    # degree equal to the frame size forces every slot
    f = generate_frame(5, 3, DegreeDistribution({5: 1.0}), CH, np.random.default_rng(1))
    for s, _ in f.users:
        assert sorted(s.tolist()) == [0, 1, 2, 3, 4]


def test_generate_mean_replicas():
    d = known_distribution("L1")
    counts = np.array([generate_frame(200, 200, d, CH, frame_rng(3, i)).slots.size for i in range(400)])
    var = 200 * (sum(k * k * p for k, p in d.probs.items()) - d.avg_degree() ** 2)
    se = math.sqrt(var / counts.size)
    assert abs(counts.mean() - 200 * d.avg_degree()) < 4 * se
    assert counts.mean() == pytest.approx(800, rel=0.03)


def test_generate_snr_distribution():
    f = generate_frame(200, 400, known_distribution("L2"), CH, np.random.default_rng(5))
    assert stats.kstest(f.snr, stats.expon(scale=CH.avg_snr_linear).cdf).pvalue > 0.01


def test_generate_slot_degree_chi2():
    d = known_distribution("L3")
    n, m, frames = 100, 150, 300
    hist = np.zeros(m + 1)
    for i in range(frames):
        deg = generate_frame(n, m, d, CH, frame_rng(11, i)).slot_degrees()
        hist += np.bincount(deg, minlength=m + 1)[: m + 1]
    pc = binomial_slot_dist(m, n, d)
    expected = np.array([pc.pmf(c) for c in range(m + 1)]) * n * frames
    # pool the tail so every bin expects at least 5
    keep = np.flatnonzero(expected >= 5)
    last = keep.max()
    obs = np.append(hist[: last], hist[last:].sum())
    exp = np.append(expected[: last], expected[last:].sum())
    obs, exp = obs[exp > 0], exp[exp > 0]
    assert stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue > 0.01


def test_floyd_uniformity():
    d = DegreeDistribution({3: 1.0})
    pairs = np.zeros((6, 6))
    for i in range(3000):
        s = generate_frame(6, 1, d, CH, frame_rng(2, i)).slots
        for a in s:
            for b in s:
                if a != b:
                    pairs[a, b] += 1
    off = pairs[~np.eye(6, dtype=bool)]
    # each ordered pair of distinct slots is equally likely
    assert stats.chisquare(off).pvalue > 0.01


def test_decode_single_user():
    f = FrameRealization.from_users(4, [([0, 2], [B * 1.5, B * 2.0])])
    r = decode_frame(f, CH)
    assert r.decoded.tolist() == [True]
    assert r.iterations == 1
    assert r.termination is Termination.SUCCESS


def test_decode_stopping_set():
    # two users sharing both slots; no SINR can reach b >= 1 with equal SNRs
    f = FrameRealization.from_users(2, [([0, 1], [50.0, 50.0]), ([0, 1], [50.0, 50.0])])
    r = decode_frame(f, CH)
    assert r.n_decoded == 0
    assert r.termination is Termination.STALLED


def test_decode_capture_within_slot():
    # strong replica captured first, then the weak one alone
    f = FrameRealization.from_users(1, [([0], [1000.0]), ([0], [10.0])])
    r = decode_frame(f, CH)
    assert r.n_decoded == 2 and r.iterations == 1
    assert r.first_pass_degree.tolist() == [2] and r.first_pass_decoded.tolist() == [2]


@pytest.mark.parametrize("weak_snr,decoded", [(B * 1.01, True), (B * 0.99, False)])
def test_perfect_ic_consistency(weak_snr, decoded):
    # user 0 is alone in slot 1; its cancellation leaves user 1 alone in slot 0
    # where it is decoded iff its SNR reaches b, exactly as an original singleton
    f = FrameRealization.from_users(2, [([0, 1], [1.0, 500.0]), ([0], [weak_snr])])
    r = decode_frame(f, CH)
    assert bool(r.decoded[1]) is decoded
    single = FrameRealization.from_users(1, [([0], [weak_snr])])
    assert bool(decode_frame(single, CH).decoded[0]) is decoded


def test_max_iters_termination():
    # slot 0 is blocked until user 0 is cancelled via slot 1, which the
    # ascending scan reaches only after slot 0
    users = [([0, 1], [50.0, 50.0]), ([0], [50.0])]
    f = FrameRealization.from_users(2, users)
    full = decode_frame(f, CH, max_iters=20)
    assert full.termination is Termination.SUCCESS
    assert full.iterations == 2 and full.n_decoded == 2
    cut = decode_frame(f, CH, max_iters=1)
    assert cut.termination is Termination.MAX_ITERS
    assert cut.decoded.tolist() == [True, False]


def test_empty_frame():
    f = FrameRealization.from_users(3, [])
    r = decode_frame(f, CH)
    assert r.termination is Termination.SUCCESS and r.n_decoded == 0


def test_deterministic():
    f = generate_frame(50, 70, known_distribution("L2"), CH, np.random.default_rng(9))
    a, b = decode_frame(f, CH), decode_frame(f, CH)
    np.testing.assert_array_equal(a.decoded, b.decoded)
    assert a.iterations == b.iterations


def test_first_pass_rates_match_capture_probs():
    ch = ChannelModel.from_db(10, 0)
    d = DegreeDistribution({2: 1.0})
    deg_all, dec_all = [], []
    for i in range(3000):
        f = generate_frame(60, 45, d, ch, frame_rng(21, i))
        r = decode_frame(f, ch)
        deg_all.append(r.first_pass_degree)
        dec_all.append(r.first_pass_decoded)
    deg = np.concatenate(deg_all)
    dec = np.concatenate(dec_all)
    for r_ in (1, 2, 3):
        k = dec[deg == r_]
        est = k.mean() / r_
        se = k.std(ddof=1) / math.sqrt(k.size) / r_
        assert abs(est - capture_prob(r_, ch)) < 3 * se, (r_, est, capture_prob(r_, ch), se)


def _random_small_frame(rng, ch):
    n = int(rng.integers(1, 9))
    m = int(rng.integers(1, 9))
    users = []
    for _ in range(m):
        d = int(rng.integers(1, min(3, n) + 1))
        s = rng.choice(n, d, replace=False)
        users.append((s.tolist(), rng.exponential(ch.avg_snr_linear, d).tolist()))
    return n, users


def test_agrees_with_brute_force():
    ch = ChannelModel.from_db(10, 3)
    rng = np.random.default_rng(1234)
    sensitive = 0
    for _ in range(1000):
        n, users = _random_small_frame(rng, ch)
        frame = FrameRealization.from_users(n, users)
        got = frozenset(np.flatnonzero(decode_frame(frame, ch, 20).decoded).tolist())
        finals = brute_force_closure([list(zip(s, x)) for s, x in users], n, ch.threshold_linear)
        if len(finals) > 1:
            sensitive += 1
            log.warning("order-sensitive frame: %s", users)
        assert got in finals
    assert sensitive == 0


def test_slot_order_invariance_small():
    ch = ChannelModel.from_db(10, 3)
    rng = np.random.default_rng(77)
    for _ in range(150):
        n, users = _random_small_frame(rng, ch)
        if n > 5:
            continue
        frame = FrameRealization.from_users(n, users)
        kernel = set(np.flatnonzero(decode_frame(frame, ch, 50).decoded).tolist())
        reps = [list(zip(s, x)) for s, x in users]
        for order in all_orders(n):
            dec, _ = python_decoder(reps, n, ch.threshold_linear, 50, order)
            assert dec == kernel


def test_matches_python_decoder_with_iteration_cap():
    ch = ChannelModel.from_db(15, 3)
    for i in range(200):
        f = generate_frame(30, 40, known_distribution("L3"), ch, frame_rng(5, i))
        for cap in (1, 2, 20):
            r = decode_frame(f, ch, cap)
            dec, iters = python_decoder(_users(f), 30, ch.threshold_linear, cap)
            assert set(np.flatnonzero(r.decoded).tolist()) == dec
            assert r.iterations == iters


def test_single_snr_increase_can_hurt():
    # b=2: A is captured over B; raising B makes both fall below threshold
    ch = ChannelModel(100.0, 2.0)
    before = FrameRealization.from_users(1, [([0], [100.0]), ([0], [1.0])])
    after = FrameRealization.from_users(1, [([0], [100.0]), ([0], [60.0])])
    assert decode_frame(before, ch).n_decoded == 1
    assert decode_frame(after, ch).n_decoded == 0


def test_monotone_in_threshold_and_common_gain():
    rng = np.random.default_rng(99)
    ch = ChannelModel.from_db(10, 3)
    lower = ChannelModel.from_db(10, 1.5)
    for _ in range(500):
        n, users = _random_small_frame(rng, ch)
        f = FrameRealization.from_users(n, users)
        base = set(np.flatnonzero(decode_frame(f, ch, 50).decoded).tolist())
        easier = set(np.flatnonzero(decode_frame(f, lower, 50).decoded).tolist())
        boosted = FrameRealization(f.n_slots, f.user_ptr, f.slots, f.snr * 1.7)
        louder = set(np.flatnonzero(decode_frame(boosted, ch, 50).decoded).tolist())
        assert base <= easier
        assert base <= louder


def test_frame_validation():
    with pytest.raises(ValueError):
        FrameRealization.from_users(3, [([0, 0], [1.0, 2.0])])
    with pytest.raises(ValueError):
        FrameRealization.from_users(3, [([0, 5], [1.0, 2.0])])
    with pytest.raises(ValueError):
        FrameRealization.from_users(3, [([0], [-1.0])])
    with pytest.raises(ValueError):
        FrameRealization.from_users(3, [([], [])])


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(n_slots=10, channel=CH)
    with pytest.raises(ValueError):
        SimConfig(n_slots=10, channel=CH, load=1.0, n_users=3)
    assert SimConfig(n_slots=200, channel=CH, load=1.35).users_per_frame == 270
    assert SimConfig(n_slots=10, channel=CH, load=1.0).max_sic_iterations == 20


def test_stats_identity_and_reproducibility():
    d = known_distribution("L2")
    cfg = SimConfig(n_slots=100, channel=CH, load=1.4, n_frames=300, seed=5)
    a = run_simulation(cfg, d)
    b = run_simulation(cfg, d)
    assert a.throughput == b.throughput and a.plr == b.plr
    np.testing.assert_array_equal(a.decoded_per_frame, b.decoded_per_frame)
    assert a.throughput == pytest.approx(a.load * (1 - a.plr), abs=1e-12)
    assert a.throughput == a.decoded_per_frame.sum() / (100 * 300)
    assert 0 < a.throughput_stderr < 0.05 and a.plr_stderr > 0


def test_worker_count_does_not_change_results():
    d = known_distribution("L3")
    cfg = SimConfig(n_slots=50, channel=CH, load=1.3, n_frames=60, seed=8)
    one = run_simulation(cfg, d)
    two = run_simulation(SimConfig(n_slots=50, channel=CH, load=1.3, n_frames=60, seed=8, workers=2), d)
    np.testing.assert_array_equal(one.decoded_per_frame, two.decoded_per_frame)
    np.testing.assert_array_equal(one.iterations_per_frame, two.iterations_per_frame)


def test_zero_load_sweep():
    d = DegreeDistribution({2: 1.0})
    cfg = SimConfig(n_slots=200, channel=CH, load=0.0, n_frames=40_000, seed=2)
    (s,) = load_sweep(cfg, d, [0.0])
    assert s.throughput == 0.0
    floor = zero_load_plr(d, CH)
    assert abs(s.plr - floor) < 3.5 * math.sqrt(floor / s.probe_offered)


def test_sweep_rows_and_csv():
    d = known_distribution("L3")
    cfg = SimConfig(n_slots=40, channel=CH, load=1.0, n_frames=50, seed=1)
    rows = load_sweep(cfg, d, [0.5, 1.0, 1.5])
    assert [r.load for r in rows] == [0.5, 1.0, 1.5]
    for r in rows:
        assert r.throughput == pytest.approx(r.load * (1 - r.plr), abs=1e-9)
    buf = io.StringIO()
    write_sweep_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == CSV_COLUMNS
    assert len(lines) == 4
