import numpy as np
import pytest

from lobclone.clone_agent import CloneTrader
from lobclone.exchange import Side
from lobclone.features import (CORE_SIX, FEATURE_NAMES, NormalizationSpec,
                               SnapshotDataset)
from lobclone.network import ModelBundle, init_params, save_model
from lobclone.traders import CustomerOrder, MarketEvent, MarketView

FLOOR, CEIL = 1, 500


def make_bundle(mask=FEATURE_NAMES, seed=0, target_bounds=(50.0, 150.0)):
    rng = np.random.default_rng(seed)
    rows = rng.uniform(1, 200, size=(40, 14))
    rows[:, 13] = rng.uniform(*target_bounds, size=40)
    norm = NormalizationSpec.fit(SnapshotDataset(rows=rows), mask=mask)
    params = init_params(len(mask), seed=seed)
    return ModelBundle(params=params, normalization=norm)


def agent(side=Side.BID, limit=100, bundle=None, seed=0):
    t = CloneTrader(0, side, FLOOR, CEIL, np.random.default_rng(seed),
                    model=bundle or make_bundle())
    t.assign_customer_order(CustomerOrder(side=side, limit_price=limit, issue_time=0.0))
    return t


def view(**kw):
    base = dict(time=1.0, time_frac=0.01, best_bid=None, best_bid_qty=0,
                best_ask=None, best_ask_qty=0, bid_total_qty=0,
                ask_total_qty=0, last_trade_price=None, last_trade_time=None)
    base.update(kw)
    return MarketView(**base)


class TestInference:
    def test_limit_clip_for_buyer(self):
        bundle = make_bundle()
        # force a high prediction via the output bias: normalized 1.0 -> 150
        bundle.params = {k: np.zeros_like(v) for k, v in bundle.params.items()}
        bundle.params["b3"][:] = 1.5
        t = agent(Side.BID, limit=100, bundle=bundle)
        q = t.get_quote(view(best_bid=90, best_bid_qty=1, best_ask=110, best_ask_qty=1))
        assert q.price == 100

    def test_quotes_on_empty_book(self):
        t = agent(Side.BID, limit=100)
        q = t.get_quote(view())
        assert q is not None
        assert FLOOR <= q.price <= 100

    def test_deterministic_inference(self):
        v = view(best_bid=95, best_bid_qty=2, best_ask=105, best_ask_qty=1,
                 bid_total_qty=4, ask_total_qty=3)
        a = agent(Side.ASK, limit=60)
        b = agent(Side.ASK, limit=60)
        assert a.get_quote(v).price == b.get_quote(v).price

    def test_six_feature_model_quotes(self):
        t = agent(Side.BID, limit=100, bundle=make_bundle(mask=CORE_SIX))
        q = t.get_quote(view(best_bid=90, best_bid_qty=1, best_ask=95, best_ask_qty=2))
        assert q is not None and FLOOR <= q.price <= 100

    def test_tracker_follows_trades(self):
        t = agent(Side.BID, limit=100)
        t.respond(MarketEvent(kind="TRADE", time=2.0, side=Side.BID, price=100,
                              trade_price=99, best_bid=None, best_bid_qty=0,
                              best_ask=None, best_ask_qty=0))
        assert t.tracker.n == 1 and t.tracker.p_star() == pytest.approx(99.0)

    def test_rounding_ties_favor_trader(self):
        bundle = make_bundle()
        bundle.params = {k: np.zeros_like(v) for k, v in bundle.params.items()}
        bundle.params["b3"][:] = 0.5
        # exact binary bounds so the denormalized prediction is exactly 128.5
        bundle.normalization.bounds["target"] = (0.0, 257.0)
        buyer = agent(Side.BID, limit=200, bundle=bundle)
        seller = agent(Side.ASK, limit=1, bundle=bundle)
        assert buyer.get_quote(view()).price == 128
        assert seller.get_quote(view()).price == 129


class TestProperty:
    def test_never_violates_limit_or_bounds(self):
        rng = np.random.default_rng(42)
        for mask in (FEATURE_NAMES, CORE_SIX):
            for side in (Side.BID, Side.ASK):
                t = CloneTrader(0, side, FLOOR, CEIL, np.random.default_rng(0),
                                model=make_bundle(mask=mask, seed=7))
                for i in range(2500):
                    limit = int(rng.integers(FLOOR, CEIL + 1))
                    t.customer_order = CustomerOrder(side=side, limit_price=limit,
                                                     issue_time=0.0)
                    bb = int(rng.integers(FLOOR, CEIL)) if rng.random() < 0.8 else None
                    ba = int(rng.integers(FLOOR, CEIL)) if rng.random() < 0.8 else None
                    if bb is not None and ba is not None and bb > ba:
                        bb, ba = ba, bb
                    v = view(time=float(i), time_frac=rng.random(),
                             best_bid=bb, best_bid_qty=int(rng.integers(0, 5)),
                             best_ask=ba, best_ask_qty=int(rng.integers(0, 5)),
                             bid_total_qty=int(rng.integers(0, 20)),
                             ask_total_qty=int(rng.integers(0, 20)))
                    q = t.get_quote(v)
                    assert q is not None
                    assert FLOOR <= q.price <= CEIL
                    if side is Side.BID:
                        assert q.price <= limit
                    else:
                        assert q.price >= limit
                    if rng.random() < 0.2:
                        tp = int(rng.integers(FLOOR, CEIL + 1))
                        t.respond(MarketEvent(kind="TRADE", time=float(i),
                                              side=Side.BID, price=tp, trade_price=tp,
                                              best_bid=bb, best_bid_qty=1,
                                              best_ask=ba, best_ask_qty=1))


class TestSessionIntegration:
    def test_dtr_population_runs(self, tmp_path):
        from lobclone.session import SessionConfig, run_session
        path = tmp_path / "model.json"
        save_model(path, make_bundle())
        cfg = SessionConfig(population=[("DTR", 20, 20), ("ZIC", 20, 20)],
                            duration=30.0, seed=9, model_path=str(path))
        res = run_session(cfg)
        assert "DTR" in res.appt
        assert all(t.balance >= 0 for t in res.traders)

    def test_missing_model_rejected(self):
        from lobclone.session import ConfigError, SessionConfig, run_session
        cfg = SessionConfig(population=[("DTR", 20, 20), ("ZIC", 20, 20)], seed=1)
        with pytest.raises(ConfigError):
            run_session(cfg)
