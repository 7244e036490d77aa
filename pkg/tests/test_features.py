import numpy as np
import pytest

from lobclone.exchange import Side
from lobclone.features import (CORE_SIX, DegenerateFeatureError, FEATURE_NAMES,
                               MarketSnapshot, NormalizationSpec, SnapshotDataset,
                               SnapshotRecorder, TradePriceTracker, imbalance,
                               microprice, p_star_estimate)
from lobclone.traders import MarketView


def view(**kw):
    base = dict(time=0.0, time_frac=0.0, best_bid=None, best_bid_qty=0,
                best_ask=None, best_ask_qty=0, bid_total_qty=0,
                ask_total_qty=0, last_trade_price=None, last_trade_time=None)
    base.update(kw)
    return MarketView(**base)


class TestMicroprice:
    def test_symmetric_quantities_equal_midprice(self):
        assert microprice(90, 1, 110, 1) == pytest.approx(100.0)

    def test_depth_weighted(self):
        assert microprice(90, 3, 110, 1) == pytest.approx(105.0)

    def test_empty_side_is_zero(self):
        assert microprice(None, 0, 110, 1) == 0.0
        assert microprice(90, 1, None, 0) == 0.0

    def test_bounded_by_best_quotes(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            bb = int(rng.integers(1, 200))
            ba = bb + int(rng.integers(1, 100))
            qb, qa = int(rng.integers(1, 20)), int(rng.integers(1, 20))
            m = microprice(bb, qb, ba, qa)
            assert bb <= m <= ba


class TestImbalance:
    def test_balanced(self):
        assert imbalance(10, 10) == 0.0

    def test_bid_heavy(self):
        assert imbalance(15, 5) == pytest.approx(0.5)

    def test_all_asks(self):
        assert imbalance(0, 7) == -1.0

    def test_empty_book_zero(self):
        assert imbalance(0, 0) == 0.0


class TestPStar:
    def test_fixed_point(self):
        for rho in (0.5, 0.9, 0.99):
            assert p_star_estimate([100, 100, 100], rho) == pytest.approx(100.0)

    def test_weighted_two_trades(self):
        # oldest 90, newest 110: (110 + 0.9*90) / (1 + 0.9)
        assert p_star_estimate([90, 110], 0.9) == pytest.approx(191.0 / 1.9)

    def test_no_trades_zero(self):
        assert p_star_estimate([], 0.9) == 0.0

    def test_tracker_matches_batch(self):
        rng = np.random.default_rng(1)
        prices = rng.integers(50, 150, size=40).tolist()
        tracker = TradePriceTracker(0.9)
        for i, p in enumerate(prices):
            tracker.update(float(p), float(i))
        assert tracker.p_star() == pytest.approx(p_star_estimate(prices, 0.9))

    def test_tracker_alpha_matches_direct_formula(self):
        tracker = TradePriceTracker(0.9)
        prices = [90.0, 110.0, 100.0, 95.0]
        for i, p in enumerate(prices):
            tracker.update(p, float(i))
        ref = tracker.p_star()
        direct = 100.0 * np.sqrt(np.mean((np.array(prices) - ref) ** 2)) / ref
        assert tracker.alpha() == pytest.approx(direct)


class TestCapture:
    def test_first_trade_walkthrough(self):
        rec = SnapshotRecorder()
        pre = view(time=5.0, best_bid=95, best_bid_qty=1, best_ask=100,
                   best_ask_qty=2, bid_total_qty=3, ask_total_qty=4)
        rec.on_trade(pre, trade_price=100, aggressor=Side.BID,
                     captured_tag="ZIP", captured_limit=98, time=5.0)
        snap = rec.rows[0]
        assert snap.time == 5.0
        assert snap.hit_or_lift == 1.0          # bid lifted the best ask
        assert snap.customer_limit == 98.0
        assert snap.spread == 5.0
        assert snap.midprice == 97.5
        assert snap.microprice == pytest.approx(microprice(95, 1, 100, 2))
        assert snap.best_bid == 95.0 and snap.best_ask == 100.0
        assert snap.dt_since_last_trade == 0.0  # no prior trade: undefined -> 0
        assert snap.imbalance == pytest.approx(imbalance(3, 4))
        assert snap.total_quantity == 7.0
        assert snap.p_star == 0.0 and snap.alpha == 0.0
        assert snap.trade_price == 100.0

    def test_pre_trade_book_state_used(self):
        # only the consumed ask rests pre-trade; post-trade emptiness irrelevant
        rec = SnapshotRecorder()
        pre = view(time=2.0, best_ask=100, best_ask_qty=1, ask_total_qty=1)
        rec.on_trade(pre, trade_price=100, aggressor=Side.BID,
                     captured_tag="GVWY", captured_limit=100, time=2.0)
        snap = rec.rows[0]
        assert snap.best_ask == 100.0
        assert snap.best_bid == 0.0 and snap.spread == 0.0 and snap.midprice == 0.0

    def test_second_trade_uses_prior_trade_stats(self):
        rec = SnapshotRecorder()
        pre1 = view(time=1.0, best_bid=99, best_bid_qty=1, best_ask=101,
                    best_ask_qty=1, bid_total_qty=1, ask_total_qty=1)
        rec.on_trade(pre1, 101, Side.BID, "ZIC", 105, time=1.0)
        pre2 = view(time=4.0, best_bid=98, best_bid_qty=1, best_ask=102,
                    best_ask_qty=1, bid_total_qty=1, ask_total_qty=1)
        rec.on_trade(pre2, 98, Side.ASK, "ZIC", 95, time=4.0)
        snap = rec.rows[1]
        assert snap.hit_or_lift == 0.0          # ask hit the best bid
        assert snap.dt_since_last_trade == pytest.approx(3.0)
        assert snap.p_star == pytest.approx(101.0)

    def test_filter_keeps_only_matching_tag(self):
        rec = SnapshotRecorder(filter_tag="ZIP")
        pre = view(time=1.0, best_bid=99, best_bid_qty=1, best_ask=101,
                   best_ask_qty=1, bid_total_qty=1, ask_total_qty=1)
        rec.on_trade(pre, 101, Side.BID, "ZIC", 105, time=1.0)
        rec.on_trade(pre, 101, Side.BID, "ZIP", 105, time=2.0)
        assert len(rec.rows) == 1
        # filtered-out trades still advance the running statistics
        assert rec.tracker.n == 2


class TestNormalization:
    def make_dataset(self, n=50, seed=0):
        rng = np.random.default_rng(seed)
        rows = rng.uniform(0, 100, size=(n, 14))
        return SnapshotDataset(rows=rows)

    def test_simple_column(self):
        rows = np.zeros((3, 14))
        rows[:, 0] = [0.0, 50.0, 100.0]
        rows[:, 1] = [0.0, 0.5, 1.0]
        rows[:, 2:] = np.random.default_rng(0).uniform(1, 2, size=(3, 12))
        ds = SnapshotDataset(rows=rows)
        spec = NormalizationSpec.fit(ds)
        normed = spec.apply(ds.features)
        assert normed[:, 0] == pytest.approx([0.0, 0.5, 1.0])

    def test_round_trip_error_tiny(self):
        ds = self.make_dataset(n=10_000)
        spec = NormalizationSpec.fit(ds)
        x = ds.features
        err = np.abs(spec.invert(spec.apply(x)) - x).max()
        assert err < 1e-9

    def test_inference_clipping(self):
        ds = self.make_dataset()
        spec = NormalizationSpec.fit(ds)
        above = ds.features[:1].copy()
        above[0, 3] = 1e6
        assert spec.apply(above, clip=True)[0, 3] == 1.0

    def test_constant_feature_rejected_by_name(self):
        rows = np.random.default_rng(0).uniform(0, 1, size=(20, 14))
        rows[:, 4] = 7.0  # f5 constant
        with pytest.raises(DegenerateFeatureError, match="f5"):
            NormalizationSpec.fit(SnapshotDataset(rows=rows))

    def test_constant_feature_outside_mask_allowed(self):
        rows = np.random.default_rng(0).uniform(0, 1, size=(20, 14))
        rows[:, 0] = 7.0  # f1 constant but masked out
        spec = NormalizationSpec.fit(SnapshotDataset(rows=rows), mask=CORE_SIX)
        assert spec.mask == CORE_SIX

    def test_target_round_trip(self):
        ds = self.make_dataset()
        spec = NormalizationSpec.fit(ds)
        y = ds.targets
        assert np.abs(spec.invert_target(spec.apply_target(y)) - y).max() < 1e-9

    def test_json_sidecar_round_trip(self, tmp_path):
        ds = self.make_dataset()
        spec = NormalizationSpec.fit(ds, mask=CORE_SIX)
        path = tmp_path / "norm.json"
        spec.save(path)
        back = NormalizationSpec.load(path)
        assert back == spec
        assert back.to_json() == spec.to_json()


class TestDatasetCSV:
    def test_bit_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        rows = rng.uniform(-1000, 1000, size=(200, 14))
        rows[0, 0] = 0.1 + 0.2  # classic repr stress value
        ds = SnapshotDataset(rows=rows)
        path = tmp_path / "data.csv"
        ds.save_csv(path)
        back = SnapshotDataset.load_csv(path)
        assert back.rows.shape == ds.rows.shape
        assert (back.rows == ds.rows).all()
        # saving again produces identical bytes
        path2 = tmp_path / "data2.csv"
        back.save_csv(path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_header_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError):
            SnapshotDataset.load_csv(path)


def test_session_snapshots_zero_fill_on_thin_books():
    """Sessions where one side is empty early must produce zero-filled
    features, never NaNs or missing values."""
    from lobclone.session import SessionConfig, run_session
    res = run_session(SessionConfig(population=[("GVWY", 40, 40)], seed=1))
    rows = res.snapshots.rows
    assert np.isfinite(rows).all()


def test_core_six_mask_is_fixed():
    assert CORE_SIX == ("f2", "f3", "f4", "f5", "f6", "f7")
    assert len(FEATURE_NAMES) == 13
