"""Live trading agent that quotes from a trained network (strategy "DTR").

The agent rebuilds the training-time feature vector from the live market
view (same definitions, same zero-fill rule), normalizes it with the spec
stored in the model file, runs the network, denormalizes the prediction to
ticks, and quotes it clipped to the customer limit and price bounds.  The
customer-limit feature is always the agent's own limit; live books never
reveal other traders' limits.
"""

from __future__ import annotations

import math
from collections import deque
from typing import Optional

import numpy as np

from .exchange import Side
from .features import FEATURE_NAMES, TradePriceTracker, live_features
from .network import ModelBundle, forward
from .traders import MarketEvent, MarketView, Trader


class CloneTrader(Trader):
    """Wraps a frozen ModelBundle behind the common trader interface."""

    tag = "DTR"

    def __init__(self, trader_id, side, price_floor, price_ceiling, rng,
                 params=None, model: Optional[ModelBundle] = None):
        super().__init__(trader_id, side, price_floor, price_ceiling, rng, params)
        if model is None:
            raise ValueError("CloneTrader requires a loaded ModelBundle")
        self.model = model
        self.tracker = TradePriceTracker()
        self._mask_idx = np.array([FEATURE_NAMES.index(name) for name in model.mask])
        lows, highs = [], []
        for name in model.mask:
            lo, hi = model.normalization.bounds[name]
            lows.append(lo)
            highs.append(hi)
        self._lo = np.array(lows)
        self._span = np.array(highs) - np.array(lows)
        self._window = deque(maxlen=model.sequence_length)

    def propose_price(self, view: MarketView) -> int:
        feats = live_features(view, self.side, self.customer_order.limit_price,
                              self.tracker)
        x = (feats[self._mask_idx] - self._lo) / self._span
        np.clip(x, 0.0, 1.0, out=x)
        if self.model.sequence_length > 1:
            self._window.append(x)
            seq = np.stack(self._window)[None, :, :]
        else:
            seq = x[None, None, :]
        pred, _ = forward(self.model.params, seq)
        price = float(self.model.normalization.invert_target(pred)[0])
        return self._round_to_tick(price)

    def _round_to_tick(self, price: float) -> int:
        # nearest tick; exact halves round toward the trader's advantage
        lower = math.floor(price)
        frac = price - lower
        if frac > 0.5:
            return lower + 1
        if frac < 0.5:
            return lower
        return lower if self.side is Side.BID else lower + 1

    def respond(self, event: MarketEvent) -> None:
        if event.kind == "TRADE":
            self.tracker.update(float(event.trade_price), event.time)
