"""Snapshot capture and feature engineering for the cloning pipeline.

At every trade the recorder captures 13 market features plus the trade
price as the learning target.  Feature indices:

  f1  time of the trade (seconds since session start)
  f2  side flag: 1 if the trade lifted the best ask, 0 if it hit the best bid
  f3  customer limit price of the trader whose quote set the trade price
  f4  bid-ask spread            f5  midprice          f6  microprice
  f7  best bid                  f8  best ask
  f9  time since previous trade f10 book imbalance    f11 total resting quantity
  f12 decayed-average trade price (equilibrium estimate)
  f13 RMS deviation of past trade prices from f12, as a percentage of f12

Book-derived features use the state immediately before the trade consumed
liquidity.  Any quantity undefined at capture time is stored as zero.
Min-max normalization maps each feature (and the target) to [0, 1] over a
training corpus; out-of-range live inputs are clipped after mapping.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .exchange import Side
from .traders import MarketView

FEATURE_NAMES = tuple("f%d" % i for i in range(1, 14))
CORE_SIX = ("f2", "f3", "f4", "f5", "f6", "f7")
TARGET_NAME = "target"
DEFAULT_PSTAR_DECAY = 0.9


class DegenerateFeatureError(ValueError):
    """A feature column is constant and cannot be min-max normalized."""


def microprice(best_bid: Optional[int], bid_qty: int,
               best_ask: Optional[int], ask_qty: int) -> float:
    """Depth-weighted price between the best quotes; 0 when either side is empty."""
    if best_bid is None or best_ask is None or bid_qty <= 0 or ask_qty <= 0:
        return 0.0
    return (best_bid * ask_qty + best_ask * bid_qty) / (bid_qty + ask_qty)


def imbalance(bid_total_qty: int, ask_total_qty: int) -> float:
    """(Qb - Qa) / (Qb + Qa) over total book quantities; 0 for an empty book."""
    total = bid_total_qty + ask_total_qty
    if total <= 0:
        return 0.0
    return (bid_total_qty - ask_total_qty) / total


def p_star_estimate(trade_prices: Sequence[float], decay: float = DEFAULT_PSTAR_DECAY) -> float:
    """Decayed weighted average of trade prices, most recent weighted 1.

    Weight decay**k for the k-th most recent trade, normalized by the sum
    of weights.  Returns 0 when no trades have occurred.
    """
    num = 0.0
    den = 0.0
    for price in trade_prices:  # oldest first
        num = price + decay * num
        den = 1.0 + decay * den
    return num / den if den > 0.0 else 0.0


class TradePriceTracker:
    """Incremental per-session trade statistics shared by capture and inference."""

    __slots__ = ("decay", "_num", "_den", "_sum", "_sum_sq", "n", "last_time")

    def __init__(self, decay: float = DEFAULT_PSTAR_DECAY):
        self.decay = decay
        self._num = 0.0
        self._den = 0.0
        self._sum = 0.0
        self._sum_sq = 0.0
        self.n = 0
        self.last_time: Optional[float] = None

    def update(self, price: float, time: float) -> None:
        self._num = price + self.decay * self._num
        self._den = 1.0 + self.decay * self._den
        self._sum += price
        self._sum_sq += price * price
        self.n += 1
        self.last_time = time

    def p_star(self) -> float:
        return self._num / self._den if self.n else 0.0

    def alpha(self) -> float:
        """RMS deviation of past prices from the current estimate, in percent."""
        ref = self.p_star()
        if self.n == 0 or ref <= 0.0:
            return 0.0
        ms = self._sum_sq / self.n - 2.0 * ref * (self._sum / self.n) + ref * ref
        return 100.0 * math.sqrt(max(ms, 0.0)) / ref

    def dt_since_last(self, time: float) -> float:
        return time - self.last_time if self.last_time is not None else 0.0


@dataclass(frozen=True)
class MarketSnapshot:
    """One captured row: 13 features plus the target price."""

    time: float
    hit_or_lift: float
    customer_limit: float
    spread: float
    midprice: float
    microprice: float
    best_bid: float
    best_ask: float
    dt_since_last_trade: float
    imbalance: float
    total_quantity: float
    p_star: float
    alpha: float
    trade_price: float

    def as_row(self) -> tuple:
        return (self.time, self.hit_or_lift, self.customer_limit, self.spread,
                self.midprice, self.microprice, self.best_bid, self.best_ask,
                self.dt_since_last_trade, self.imbalance, self.total_quantity,
                self.p_star, self.alpha, self.trade_price)


def live_features(view: MarketView, own_side: Side, own_limit: int,
                  tracker: TradePriceTracker) -> np.ndarray:
    """Build the 13 live features a quoting trader sees, zero-filling gaps.

    f2 flags the side of the quote being produced: 1 for an ask, 0 for a
    bid, matching the capture-time convention that the trade price belongs
    to the resting quote the trade consumed.
    """
    bb, ba = view.best_bid, view.best_ask
    both = bb is not None and ba is not None
    return np.array([
        view.time,
        1.0 if own_side is Side.ASK else 0.0,
        float(own_limit),
        float(ba - bb) if both else 0.0,
        (bb + ba) / 2.0 if both else 0.0,
        microprice(bb, view.best_bid_qty, ba, view.best_ask_qty),
        float(bb) if bb is not None else 0.0,
        float(ba) if ba is not None else 0.0,
        tracker.dt_since_last(view.time),
        imbalance(view.bid_total_qty, view.ask_total_qty),
        float(view.bid_total_qty + view.ask_total_qty),
        tracker.p_star(),
        tracker.alpha(),
    ])


class SnapshotRecorder:
    """Collects snapshots during a session.

    In "trade" mode one row is captured per executed trade, using the book
    state just before the trade and the limit price of the resting trader
    whose quote set the trade price.  In "quote" mode one row is captured
    per submitted quote with the quote price as the target.  An optional
    strategy-tag filter keeps only rows whose captured trader matches.
    """

    def __init__(self, mode: str = "trade", filter_tag: Optional[str] = None,
                 decay: float = DEFAULT_PSTAR_DECAY):
        if mode not in ("trade", "quote"):
            raise ValueError("capture mode must be 'trade' or 'quote'")
        self.mode = mode
        self.filter_tag = filter_tag
        self.tracker = TradePriceTracker(decay)
        self.rows: list[MarketSnapshot] = []

    def on_trade(self, pre_view: MarketView, trade_price: int, aggressor: Side,
                 captured_tag: str, captured_limit: int, time: float) -> None:
        if self.mode == "trade" and (self.filter_tag is None or captured_tag == self.filter_tag):
            bb, ba = pre_view.best_bid, pre_view.best_ask
            both = bb is not None and ba is not None
            self.rows.append(MarketSnapshot(
                time=time,
                hit_or_lift=1.0 if aggressor is Side.BID else 0.0,
                customer_limit=float(captured_limit),
                spread=float(ba - bb) if both else 0.0,
                midprice=(bb + ba) / 2.0 if both else 0.0,
                microprice=microprice(bb, pre_view.best_bid_qty, ba, pre_view.best_ask_qty),
                best_bid=float(bb) if bb is not None else 0.0,
                best_ask=float(ba) if ba is not None else 0.0,
                dt_since_last_trade=self.tracker.dt_since_last(time),
                imbalance=imbalance(pre_view.bid_total_qty, pre_view.ask_total_qty),
                total_quantity=float(pre_view.bid_total_qty + pre_view.ask_total_qty),
                p_star=self.tracker.p_star(),
                alpha=self.tracker.alpha(),
                trade_price=float(trade_price),
            ))
        self.tracker.update(float(trade_price), time)

    def on_quote(self, view: MarketView, quote_price: int, quote_side: Side,
                 tag: str, limit: int) -> None:
        if self.mode != "quote" or (self.filter_tag is not None and tag != self.filter_tag):
            return
        feats = live_features(view, quote_side, limit, self.tracker)
        self.rows.append(MarketSnapshot(*feats, float(quote_price)))

    def record_trade_only(self, trade_price: int, time: float) -> None:
        """Quote-mode bookkeeping: trades still feed the running statistics."""
        self.tracker.update(float(trade_price), time)


@dataclass
class SnapshotDataset:
    """Ordered snapshot rows with provenance of the sessions they came from."""

    rows: np.ndarray  # shape (n, 14): f1..f13, target
    provenance: list = field(default_factory=list)  # (config_id, seed, n_rows)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64).reshape(-1, 14)

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def features(self) -> np.ndarray:
        return self.rows[:, :13]

    @property
    def targets(self) -> np.ndarray:
        return self.rows[:, 13]

    @classmethod
    def from_snapshots(cls, snaps: Iterable[MarketSnapshot], provenance=None) -> "SnapshotDataset":
        data = np.array([s.as_row() for s in snaps], dtype=np.float64).reshape(-1, 14)
        return cls(rows=data, provenance=list(provenance or []))

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(list(FEATURE_NAMES) + [TARGET_NAME])
            for row in self.rows:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def load_csv(cls, path) -> "SnapshotDataset":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if header != list(FEATURE_NAMES) + [TARGET_NAME]:
                raise ValueError("unexpected dataset header: %r" % (header,))
            data = [[float(v) for v in row] for row in reader]
        return cls(rows=np.array(data, dtype=np.float64).reshape(-1, 14))


@dataclass
class NormalizationSpec:
    """Per-feature min/max plus the active-feature mask.

    ``bounds`` covers every feature and the target; ``mask`` names the
    features actually fed to the model (all 13, or a reduction such as
    CORE_SIX).
    """

    bounds: dict  # name -> (min, max)
    mask: tuple

    @classmethod
    def fit(cls, dataset: SnapshotDataset, mask: Sequence[str] = FEATURE_NAMES) -> "NormalizationSpec":
        mask = tuple(mask)
        unknown = set(mask) - set(FEATURE_NAMES)
        if unknown:
            raise ValueError("unknown features in mask: %s" % sorted(unknown))
        if len(dataset) < 2:
            raise ValueError("need at least 2 rows to fit normalization")
        bounds = {}
        names = list(FEATURE_NAMES) + [TARGET_NAME]
        degenerate = []
        for j, name in enumerate(names):
            col = dataset.rows[:, j]
            lo, hi = float(col.min()), float(col.max())
            bounds[name] = (lo, hi)
            if name in mask and lo == hi:
                degenerate.append(name)
        if degenerate:
            raise DegenerateFeatureError(
                "constant feature(s) cannot be normalized: %s" % ", ".join(degenerate))
        return cls(bounds=bounds, mask=mask)

    def _mask_indices(self) -> list:
        return [FEATURE_NAMES.index(name) for name in self.mask]

    def apply(self, features: np.ndarray, clip: bool = False) -> np.ndarray:
        """Map raw feature rows into [0,1]^d over the active mask."""
        features = np.atleast_2d(features)
        idx = self._mask_indices()
        out = np.empty((features.shape[0], len(idx)), dtype=np.float64)
        for k, j in enumerate(idx):
            lo, hi = self.bounds[FEATURE_NAMES[j]]
            out[:, k] = (features[:, j] - lo) / (hi - lo)
        if clip:
            np.clip(out, 0.0, 1.0, out=out)
        return out

    def invert(self, normalized: np.ndarray) -> np.ndarray:
        normalized = np.atleast_2d(normalized)
        idx = self._mask_indices()
        out = np.empty_like(normalized)
        for k, j in enumerate(idx):
            lo, hi = self.bounds[FEATURE_NAMES[j]]
            out[:, k] = normalized[:, k] * (hi - lo) + lo
        return out

    def apply_target(self, targets: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds[TARGET_NAME]
        span = (hi - lo) or 1.0
        return (np.asarray(targets, dtype=np.float64) - lo) / span

    def invert_target(self, values: np.ndarray):
        lo, hi = self.bounds[TARGET_NAME]
        span = (hi - lo) or 1.0
        return np.asarray(values, dtype=np.float64) * span + lo

    # -- persistence: flat {feature: {min,max}, mask: [...]} sidecar ----

    def to_json(self) -> str:
        doc = {name: {"min": lo, "max": hi} for name, (lo, hi) in self.bounds.items()}
        doc["mask"] = list(self.mask)
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NormalizationSpec":
        doc = json.loads(text)
        mask = tuple(doc.pop("mask"))
        bounds = {name: (v["min"], v["max"]) for name, v in doc.items()}
        return cls(bounds=bounds, mask=mask)

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path) -> "NormalizationSpec":
        with open(path) as f:
            return cls.from_json(f.read())
