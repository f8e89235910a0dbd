import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from sklearn.exceptions import NotFittedError

from optimpact.calendar import MS_PER_DAY
from optimpact.exceptions import DomainError, UndefinedError
from optimpact.metaorder import (Metaorder, MetaorderSet, MetaorderStitcher, attach_sensitivities,
                                 daily_market_sensitivity, filter_min_length, fills_to_frame,
                                 frame_to_fills, market_sensitivity_by_day, normalise_fills,
                                 participation_rate, sensitivity_time, stitch_frame,
                                 stitch_metaorders, strike_dispersion)

from conftest import EXPIRY, T_OPEN, make_fills, make_history


def make_metaorder(times, S, strikes=100.0, forwards=100.0, mid="m"):
    n = len(times)
    b = lambda v: np.broadcast_to(np.asarray(v, float), n).copy()
    return Metaorder(mid, "A", "U", 0, "atmf_vol", np.asarray(times, np.int64), b(S), b(strikes),
                     b(forwards), np.ones(n), np.ones(n), np.ones(n, np.int64),
                     np.full(n, EXPIRY, np.int64), np.ones(n, bool),
                     sign=int(np.sign(np.sum(S)) or 1))


def brute_force_groups(frame):
    """Scan each (agent, underlying, day) stream in time order and split on sign flips.

    Zero-sensitivity fills join the open run; leading zeros join the first
    run; a stream of zeros is one run.
    """
    order = sorted(range(len(frame)), key=lambda i: (
        frame["agent_id"].iat[i], frame["underlying_id"].iat[i],
        frame["timestamp"].iat[i] // MS_PER_DAY, frame["timestamp"].iat[i], i))
    groups, current, key, sign = [], None, None, 0
    for i in order:
        k = (frame["agent_id"].iat[i], frame["underlying_id"].iat[i],
             frame["timestamp"].iat[i] // MS_PER_DAY)
        s = int(np.sign(frame["S"].iat[i]))
        if k != key:
            current, key, sign = [i], k, s
            groups.append(current)
            continue
        if s == 0 or sign == 0 or s == sign:
            current.append(i)
            sign = sign or s
        else:
            current = [i]
            groups.append(current)
            sign = s
    return sorted(groups)


def random_day(rng, n_fills, n_agents=30, zero_frac=0.02, flip_p=0.15):
    agents = rng.integers(0, n_agents, n_fills)
    und = rng.choice(["U1", "U2"], n_fills)
    t = T_OPEN + np.sort(rng.integers(0, MS_PER_DAY - 1, n_fills))
    # persistent signs per stream so runs have realistic lengths
    S = np.empty(n_fills)
    state = {}
    for i in range(n_fills):
        key = (agents[i], und[i])
        s = state.get(key, rng.choice([-1.0, 1.0]))
        if rng.random() < flip_p:
            s = -s
        state[key] = s
        S[i] = 0.0 if rng.random() < zero_frac else s * rng.exponential(1.0)
    df = make_fills(t, [f"A{a:02d}" for a in agents], np.sign(S).astype(int) + (S == 0))
    df["underlying_id"] = und
    df["S"] = S
    df["forward"] = 100.0
    return df


def stitched_groups(frame):
    st_ = MetaorderStitcher("atmf_vol").fit(frame)
    fills = st_.metaorders_.fills
    return sorted(fills.groupby("metaorder_id", sort=False)["row"].apply(list).tolist())


class TestStitching:
    def test_sign_flip_splits(self):
        hist = make_history([T_OPEN])
        fills = make_fills(T_OPEN + np.arange(1, 6) * 1000, ["A"] * 5, [1, 1, 1, -1, -1])
        mos = stitch_metaorders(fills, hist, "atmf_vol")
        assert [m.n for m in mos] == [3, 2]
        assert [m.sign for m in mos] == [1, -1]

    def test_agents_partition(self):
        hist = make_history([T_OPEN])
        fills = make_fills(T_OPEN + np.arange(1, 7) * 1000, ["A", "B"] * 3, [1] * 6)
        mos = stitch_metaorders(fills, hist, "atmf_vol")
        assert sorted((m.agent_id, m.n) for m in mos) == [("A", 3), ("B", 3)]

    def test_day_boundary(self):
        hist = make_history([T_OPEN])
        fills = make_fills([T_OPEN + 1000, T_OPEN + 2000, T_OPEN + MS_PER_DAY + 1000],
                           ["A"] * 3, [1, 1, 1])
        mos = stitch_metaorders(fills, hist, "atmf_vol")
        assert [m.n for m in mos] == [2, 1]
        assert mos[0].day != mos[1].day

    def test_flip_closes_permanently(self):
        hist = make_history([T_OPEN])
        fills = make_fills(T_OPEN + np.arange(1, 6) * 1000, ["A"] * 5, [1, -1, 1, 1, -1])
        assert [m.n for m in stitch_metaorders(fills, hist, "atmf_vol")] == [1, 1, 2, 1]

    def test_zero_sensitivity_attaches(self):
        # skew sensitivity vanishes at K = F; those fills keep the open run alive
        hist = make_history([T_OPEN], forward=100.0)
        fills = make_fills(T_OPEN + np.arange(1, 6) * 1000, ["A"] * 5, [1, 1, 1, 1, 1],
                           strikes=[110.0, 100.0, 110.0, 100.0, 90.0])
        mos = stitch_metaorders(fills, hist, "atmf_skew")
        assert [m.n for m in mos] == [4, 1]
        assert mos[0].sensitivities[1] == 0.0
        assert mos[0].V == pytest.approx(mos[0].sensitivities[[0, 2]].sum())

    def test_mixed_strikes_share_metaorder(self):
        hist = make_history([T_OPEN])
        fills = make_fills(T_OPEN + np.arange(1, 4) * 1000, ["A"] * 3, [1, 1, 1],
                           strikes=[95.0, 100.0, 105.0])
        assert [m.n for m in stitch_metaorders(fills, hist, "atmf_vol")] == [3]

    def test_unpriceable_quarantined(self):
        hist = make_history([T_OPEN + 5000])
        fills = make_fills(T_OPEN + np.arange(1, 8) * 1000, ["A"] * 7, [1] * 7)
        fills.loc[6, "expiry"] = T_OPEN  # already expired
        st_ = MetaorderStitcher("atmf_vol").fit(fills, history=hist)
        reasons = st_.quarantined_["reason"].tolist()
        assert reasons.count("no_slice") == 4 and reasons.count("expired") == 1
        assert len(st_.metaorders_.fills) + len(st_.quarantined_) == len(fills)

    def test_single_timestamp_duration(self):
        hist = make_history([T_OPEN])
        fills = make_fills([T_OPEN + 10] * 3, ["A"] * 3, [1, 1, 1])
        (m,) = stitch_metaorders(fills, hist, "atmf_vol")
        assert m.duration_ms == 1 and m.duration == 0.001

    def test_gap_splitter(self):
        hist = make_history([T_OPEN])
        fills = make_fills(T_OPEN + np.array([1, 2, 3, 100, 101]) * 1000, ["A"] * 5, [1] * 5)
        assert [m.n for m in stitch_metaorders(fills, hist, "atmf_vol")] == [5]
        assert [m.n for m in stitch_metaorders(fills, hist, "atmf_vol", max_gap_s=30)] == [3, 2]

    def test_sklearn_interface(self):
        st_ = MetaorderStitcher(parameter="atmf_skew", max_gap_s=5.0)
        assert st_.get_params()["max_gap_s"] == 5.0
        with pytest.raises(NotFittedError):
            st_.transform(None)
        with pytest.raises(DomainError):
            MetaorderStitcher().fit(make_fills([T_OPEN], ["A"], [1]))

    def test_fill_records_round_trip(self):
        fills = make_fills(T_OPEN + np.arange(3), ["A", "B", "A"], [1, -1, 1], strikes=[90, 100, 110])
        back = fills_to_frame(frame_to_fills(fills_to_frame(frame_to_fills(fills))))
        pd.testing.assert_frame_equal(back, fills_to_frame(frame_to_fills(fills)))

    def test_deterministic(self):
        df = random_day(np.random.default_rng(4), 2000)
        df = normalise_fills(df)
        a = stitch_frame(df, "atmf_vol")[0]
        b = stitch_frame(df.sample(frac=1.0, random_state=1), "atmf_vol")[0]
        pd.testing.assert_frame_equal(a, b)


class TestBruteForceOracle:
    @pytest.mark.parametrize("seed", range(5))
    def test_ten_thousand_fills(self, seed):
        df = random_day(np.random.default_rng(seed), 10_000)
        assert stitched_groups(df) == brute_force_groups(df)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 300), st.floats(0.0, 0.3))
    def test_small_days(self, seed, n, zero_frac):
        df = random_day(np.random.default_rng(seed), n, n_agents=4, zero_frac=zero_frac, flip_p=0.4)
        assert stitched_groups(df) == brute_force_groups(df)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 400))
    def test_partition_and_sign_homogeneity(self, seed, n):
        df = random_day(np.random.default_rng(seed), n, n_agents=5, zero_frac=0.1)
        ms = MetaorderStitcher("atmf_vol").fit(df).metaorders_
        rows = ms.fills["row"].to_numpy()
        assert sorted(rows.tolist()) == list(range(n))
        S = ms.fills["S"].to_numpy()
        eps = np.repeat(ms.summary["sign"].to_numpy(), ms.summary["n"].to_numpy().astype(int))
        assert np.all(eps * S >= 0)
        # per stream, concatenated metaorders reproduce the time order of the input
        for _, part in ms.fills.groupby(["agent_id", "underlying_id", "day"]):
            t = part["timestamp"].to_numpy()
            assert np.all(np.diff(t) >= 0)
        # conservation of absolute sensitivity
        assert np.abs(S).sum() == pytest.approx(daily_market_sensitivity(df["S"]), rel=1e-12)


class TestFilters:
    def _set(self, lengths):
        mos = [make_metaorder(np.arange(n), np.ones(n), mid=f"m{i}") for i, n in enumerate(lengths)]
        return mos, MetaorderSet.from_metaorders(mos)

    def test_threshold(self):
        mos, ms = self._set([3, 5, 7])
        assert [m.n for m in filter_min_length(mos, 5)] == [5, 7]
        assert filter_min_length(ms, 5).summary["n"].tolist() == [5, 7]

    def test_identity(self):
        mos, ms = self._set([1, 2, 3])
        assert filter_min_length(mos, 1) == mos
        assert len(filter_min_length(ms, 1)) == 3

    @pytest.mark.parametrize("bad", [0, -1, 2.5])
    def test_bad_threshold(self, bad):
        mos, _ = self._set([3])
        with pytest.raises(DomainError):
            filter_min_length(mos, bad)

    def test_synthetic_recount(self, synth_day):
        from optimpact.volsurface import SliceHistory, calibrate_quotes

        hist = SliceHistory(calibrate_quotes(synth_day.quotes))
        aggr = synth_day.trades[synth_day.trades["aggressive"]]
        ms = MetaorderStitcher("atmf_vol").fit(aggr, history=hist).metaorders_
        truth = synth_day.metaorders["n"].to_numpy()
        for n_star in (1, 5, 10, 15):
            assert len(ms.filter_min_length(n_star)) == int((truth >= n_star).sum())

    def test_nesting(self):
        _, ms = self._set([2, 4, 6, 8, 10, 12, 16])
        sizes = [len(ms.filter_min_length(n)) for n in (1, 5, 10, 15)]
        assert sizes == sorted(sizes, reverse=True)
        assert set(ms.filter_min_length(15).ids) <= set(ms.filter_min_length(5).ids)


class TestAggregates:
    def test_market_sensitivity_absolute(self):
        assert daily_market_sensitivity([-3.0]) == 3.0
        assert daily_market_sensitivity([2.0, -2.0]) == 4.0

    def test_empty_day_warns(self):
        with pytest.warns(RuntimeWarning):
            assert daily_market_sensitivity([]) == 0.0

    def test_synthetic_day_matches_simulator(self, synth_day):
        from optimpact.volsurface import SliceHistory, calibrate_quotes

        hist = SliceHistory(calibrate_quotes(synth_day.quotes))
        priced, quarantined = attach_sensitivities(synth_day.trades, hist, "atmf_vol")
        assert len(quarantined) == 0
        by_day = market_sensitivity_by_day(priced)
        assert by_day.iloc[0] == pytest.approx(synth_day.summary["V_day"], rel=1e-9)

    def test_participation(self):
        m = make_metaorder([0, 1], [2.0, 3.0])
        assert participation_rate(m, 50.0) == pytest.approx(0.1)
        assert participation_rate(m, 5.0) == 1.0
        with pytest.raises(UndefinedError):
            participation_rate(m, 0.0)

    def test_synthetic_participation(self, synth_day):
        from optimpact.volsurface import SliceHistory, calibrate_quotes

        hist = SliceHistory(calibrate_quotes(synth_day.quotes))
        priced, _ = attach_sensitivities(synth_day.trades, hist, "atmf_vol")
        V = market_sensitivity_by_day(priced).iloc[0]
        ms = MetaorderStitcher("atmf_vol").fit(priced[priced["aggressive"]]).metaorders_
        est = ms.summary.set_index("metaorder_id")["abs_V"] / V
        truth = synth_day.metaorders.set_index("metaorder_id")["rate"]
        np.testing.assert_allclose(est.loc[truth.index], truth, rtol=1e-9)


class TestDispersion:
    def test_concentrated(self):
        assert strike_dispersion(make_metaorder([0, 1, 2], [1.0, 2.0, 3.0])) == 0.0

    def test_two_point(self):
        m = make_metaorder([0, 1], [1.0, 1.0], strikes=[90.0, 110.0])
        assert strike_dispersion(m) == pytest.approx(0.1 * math.sqrt(2), rel=1e-12)

    def test_weight_scale_invariance(self):
        m = make_metaorder([0, 1, 2], [1.0, 2.0, 0.5], strikes=[90.0, 105.0, 120.0])
        m10 = make_metaorder([0, 1, 2], [10.0, 20.0, 5.0], strikes=[90.0, 105.0, 120.0])
        assert strike_dispersion(m10) == pytest.approx(strike_dispersion(m), rel=1e-12)

    def test_zero_weight(self):
        with pytest.raises(UndefinedError):
            strike_dispersion(make_metaorder([0, 1], [0.0, 0.0], strikes=[90.0, 110.0]))

    def test_vectorised_matches_scalar(self):
        df = random_day(np.random.default_rng(2), 3000, zero_frac=0.0)
        df["strike"] = np.random.default_rng(3).uniform(80, 120, len(df))
        ms = MetaorderStitcher("atmf_vol").fit(df).metaorders_
        multi = ms.summary["n"].to_numpy() >= 2
        scalar = [strike_dispersion(ms.get(i)) for i in np.flatnonzero(multi)]
        np.testing.assert_allclose(ms.summary["dispersion"].to_numpy()[multi], scalar, rtol=1e-10)


class TestSensitivityTime:
    m = make_metaorder([0, 1000, 2000, 3000, 4000], np.ones(5))

    def test_partial_sum(self):
        assert sensitivity_time(self.m, 1500) == pytest.approx(0.4)

    def test_end_of_execution(self):
        assert sensitivity_time(self.m, 4000) == 1.0

    def test_window_end(self):
        assert sensitivity_time(self.m, 8000) == 2.0
        assert sensitivity_time(self.m, 6000) == 1.5

    @pytest.mark.parametrize("t", [-1, 8001])
    def test_outside(self, t):
        with pytest.raises(DomainError):
            sensitivity_time(self.m, t)
