"""The seven baseline trading strategies behind one common trader interface.

Every trader works at most one customer order at a time and must quote
within that order's limit price: buyers never bid above it, sellers never
ask below it.  The session engine polls traders for quotes (``get_quote``),
feeds every market event back to them (``respond``) and settles executed
trades (``book_trade``).

Strategies:

* ZIC   -- uniform random price between the limit and the relevant bound.
* GVWY  -- quotes the limit itself, giving all potential profit away.
* SHVR  -- improves the current best price on its own side by one penny.
* SNPR  -- lurks until the spread tightens or the session is nearly over,
           then crosses the book.
* ZIP   -- adaptive profit margin driven by a Widrow-Hoff rule with
           momentum toward a jittered target price.
* AA    -- aggressiveness-parameterised pricing around a decaying weighted
           average of trade prices, with volatility-dependent curvature.
* GDX   -- belief function over recent quote/trade outcomes, maximising
           expected surplus with a dynamic-programming lookahead.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, asdict, field
from typing import Optional

import numpy as np

from .exchange import Order, Side

STRATEGY_TAGS = ("ZIC", "ZIP", "AA", "GDX", "SNPR", "GVWY", "SHVR", "DTR")


@dataclass(frozen=True)
class CustomerOrder:
    """An assignment from an exogenous customer: trade one unit within limit_price."""

    side: Side
    limit_price: int
    issue_time: float


@dataclass(slots=True)
class MarketView:
    """Read-only market state handed to a trader when it is polled."""

    time: float
    time_frac: float  # fraction of the session elapsed, in [0, 1]
    best_bid: Optional[int]
    best_bid_qty: int
    best_ask: Optional[int]
    best_ask_qty: int
    bid_total_qty: int
    ask_total_qty: int
    last_trade_price: Optional[int]
    last_trade_time: Optional[float]


@dataclass(slots=True)
class MarketEvent:
    """One market event broadcast to all traders after the book changed.

    kind is "QUOTE" (an order rested), "TRADE" or "CANCEL".  For trades,
    ``side``/``price`` describe the aggressing order and ``trade_price``
    the resting order's price the trade executed at.  Best prices are the
    post-event book state.
    """

    kind: str
    time: float
    side: Optional[Side]
    price: Optional[int]
    trade_price: Optional[int]
    best_bid: Optional[int]
    best_bid_qty: int
    best_ask: Optional[int]
    best_ask_qty: int


@dataclass
class StrategyParams:
    """Numeric defaults for all strategies; JSON-serialisable in one record."""

    # ZIP: per-trader draws at init, jittered target perturbations
    zip_beta_range: tuple = (0.1, 0.5)
    zip_momentum_range: tuple = (0.0, 0.1)
    zip_margin_init_range: tuple = (0.05, 0.35)
    zip_abs_jitter: float = 5.0   # ticks
    zip_rel_jitter: float = 0.05
    zip_margin_max: float = 4.0
    # AA
    aa_rho: float = 0.9
    aa_vol_window: int = 5
    aa_beta_r: float = 0.4
    aa_delta_r: float = 0.05
    aa_theta_min: float = 1.0
    aa_theta_max: float = 4.0
    aa_alpha_ref: float = 15.0    # volatility (percent) mapped onto theta range
    # GDX
    gdx_window: int = 30
    gdx_horizon: int = 10
    gdx_gamma: float = 0.9
    # SNPR
    snpr_spread_threshold: int = 2
    snpr_late_frac: float = 0.8

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StrategyParams":
        data = json.loads(text)
        for key in ("zip_beta_range", "zip_momentum_range", "zip_margin_init_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


class Trader:
    """Base trader: customer-order bookkeeping and profit accounting."""

    tag = "???"

    def __init__(self, trader_id: int, side: Side, price_floor: int, price_ceiling: int,
                 rng: np.random.Generator, params: Optional[StrategyParams] = None):
        self.trader_id = trader_id
        self.side = side
        self.price_floor = price_floor
        self.price_ceiling = price_ceiling
        self.rng = rng
        self.params = params or StrategyParams()
        self.customer_order: Optional[CustomerOrder] = None
        self.balance = 0
        self.trade_count = 0

    # -- customer orders ------------------------------------------------

    def assign_customer_order(self, order: CustomerOrder) -> None:
        if order.side is not self.side:
            raise ValueError("customer order side %s does not match trader side %s"
                             % (order.side, self.side))
        self.customer_order = order

    @property
    def limit_price(self) -> Optional[int]:
        return self.customer_order.limit_price if self.customer_order else None

    # -- quoting ----------------------------------------------------------

    def get_quote(self, view: MarketView) -> Optional[Order]:
        """Return the order to submit this poll, or None to stay quiet."""
        if self.customer_order is None:
            return None
        raw = self.propose_price(view)
        if raw is None:
            return None
        price = self._clip(raw)
        return Order(trader_id=self.trader_id, side=self.side, price=price,
                     quantity=1, time=view.time)

    def propose_price(self, view: MarketView) -> Optional[int]:
        raise NotImplementedError

    def _clip(self, price: int) -> int:
        limit = self.customer_order.limit_price
        if self.side is Side.BID:
            price = min(price, limit)
        else:
            price = max(price, limit)
        return min(max(price, self.price_floor), self.price_ceiling)

    # -- learning / accounting ---------------------------------------------

    def respond(self, event: MarketEvent) -> None:
        """React to a market event.  Baseline strategies with no learning ignore it."""

    def book_trade(self, price: int, time: float) -> int:
        """Settle an executed trade against the current customer order."""
        order = self.customer_order
        assert order is not None, "trade booked with no customer order"
        if self.side is Side.BID:
            profit = order.limit_price - price
        else:
            profit = price - order.limit_price
        assert profit >= 0, "limit-violating trade: limit=%s price=%s" % (order.limit_price, price)
        self.balance += profit
        self.trade_count += 1
        self.customer_order = None
        return profit


class TraderZIC(Trader):
    """Zero-Intelligence Constrained: random price bounded by the limit."""

    tag = "ZIC"

    def propose_price(self, view):
        limit = self.customer_order.limit_price
        if self.side is Side.BID:
            return int(self.rng.integers(self.price_floor, limit + 1))
        return int(self.rng.integers(limit, self.price_ceiling + 1))


class TraderGVWY(Trader):
    """Giveaway: quotes the customer limit, forgoing any margin."""

    tag = "GVWY"

    def propose_price(self, view):
        return self.customer_order.limit_price


class TraderSHVR(Trader):
    """Shaver: beats the best price on its own side by one penny."""

    tag = "SHVR"

    def propose_price(self, view):
        if self.side is Side.BID:
            if view.best_bid is not None:
                return view.best_bid + 1  # capped at limit by _clip
            return self.price_floor
        if view.best_ask is not None:
            return view.best_ask - 1
        return self.price_ceiling


class TraderSNPR(Trader):
    """Sniper: lurks, then crosses once the spread narrows or time runs short."""

    tag = "SNPR"

    def propose_price(self, view):
        p = self.params
        spread_ok = (view.best_bid is not None and view.best_ask is not None
                     and view.best_ask - view.best_bid <= p.snpr_spread_threshold)
        late = view.time_frac >= p.snpr_late_frac
        if not (spread_ok or late):
            return None
        if self.side is Side.BID:
            return view.best_ask if view.best_ask is not None else self.customer_order.limit_price
        return view.best_bid if view.best_bid is not None else self.customer_order.limit_price


class TraderZIP(Trader):
    """Zero-Intelligence Plus: adaptive profit margin (Widrow-Hoff + momentum).

    The margin is kept signed internally: negative for buyers, positive for
    sellers, so the quote price is always limit * (1 + margin).
    """

    tag = "ZIP"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        p = self.params
        self.beta = float(self.rng.uniform(*p.zip_beta_range))
        self.momntm = float(self.rng.uniform(*p.zip_momentum_range))
        margin0 = float(self.rng.uniform(*p.zip_margin_init_range))
        self.margin = -margin0 if self.side is Side.BID else margin0
        self.prev_change = 0.0
        self.limit: Optional[int] = None      # last known customer limit
        self.price: Optional[float] = None    # current intended quote price
        self.active = False
        self._prev_best_bid: Optional[int] = None
        self._prev_best_ask: Optional[int] = None

    def _own_price(self) -> int:
        raw = self.limit * (1.0 + self.margin)
        return math.floor(raw) if self.side is Side.BID else math.ceil(raw)

    def propose_price(self, view):
        self.active = True
        self.limit = self.customer_order.limit_price
        self.price = self._own_price()
        return self.price

    def _target_up(self, price: float) -> float:
        p = self.params
        return round(price * (1.0 + p.zip_rel_jitter * self.rng.random())
                     + p.zip_abs_jitter * self.rng.random())

    def _target_down(self, price: float) -> float:
        p = self.params
        return round(price * (1.0 - p.zip_rel_jitter * self.rng.random())
                     - p.zip_abs_jitter * self.rng.random())

    def _alter_margin(self, target: float) -> None:
        change = ((1.0 - self.momntm) * self.beta * (target - self.price)
                  + self.momntm * self.prev_change)
        self.prev_change = change
        new_margin = (self.price + change) / self.limit - 1.0
        if self.side is Side.BID:
            if new_margin < 0.0:
                self.margin = max(new_margin, -1.0)
        else:
            if new_margin > 0.0:
                self.margin = min(new_margin, self.params.zip_margin_max)
        self.price = self._own_price()

    def respond(self, event: MarketEvent) -> None:
        if self.customer_order is None:
            self.active = False
        if self.limit is None or not self.active:
            # no order to work: freeze the margin (an idle trader adapting to
            # every trade ratchets away from the market and stalls the flow)
            self._remember_bests(event)
            return

        deal = event.kind == "TRADE"
        bid_hit = deal and event.side is Side.ASK
        ask_lifted = deal and event.side is Side.BID
        bid_improved = (event.best_bid is not None and self._prev_best_bid is not None
                        and event.best_bid > self._prev_best_bid)
        ask_improved = (event.best_ask is not None and self._prev_best_ask is not None
                        and event.best_ask < self._prev_best_ask)

        if self.side is Side.ASK:
            if deal:
                tp = event.trade_price
                if self.price <= tp:
                    self._alter_margin(self._target_up(tp))
                elif ask_lifted and self.active and self.price > tp:
                    self._alter_margin(self._target_down(tp))
            elif ask_improved and self.price > event.best_ask:
                if event.best_bid is not None:
                    self._alter_margin(self._target_up(event.best_bid))
                else:
                    self._alter_margin(float(self.price_ceiling))
        else:
            if deal:
                tp = event.trade_price
                if self.price >= tp:
                    self._alter_margin(self._target_down(tp))
                elif bid_hit and self.active and self.price < tp:
                    self._alter_margin(self._target_up(tp))
            elif bid_improved and self.price < event.best_bid:
                if event.best_ask is not None:
                    self._alter_margin(self._target_down(event.best_ask))
                else:
                    self._alter_margin(float(self.price_floor))

        self._remember_bests(event)

    def _remember_bests(self, event: MarketEvent) -> None:
        self._prev_best_bid = event.best_bid
        self._prev_best_ask = event.best_ask


def _lam(u: float, theta: float) -> float:
    """Convex ramp on [0,1]: 0 at u=0, 1 at u=1, curvature set by theta."""
    return (math.exp(u * theta) - 1.0) / (math.exp(theta) - 1.0)


class TraderAA(Trader):
    """Adaptive-Aggressive: prices around a decaying average of trade prices.

    Aggressiveness r in [-1, 1] interpolates the target between the passive
    bound and the customer limit; r adapts toward the level that would have
    won the last trade, and curvature follows recent price volatility.
    """

    tag = "AA"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        p = self.params
        self.r = 0.0
        self.theta = p.aa_theta_max
        self._eq_num = 0.0   # decayed sum of trade prices
        self._eq_den = 0.0   # decayed weight
        self._recent = deque(maxlen=p.aa_vol_window)
        self._prev_best_bid: Optional[int] = None
        self._prev_best_ask: Optional[int] = None

    @property
    def eq_estimate(self) -> Optional[float]:
        if self._eq_den == 0.0:
            return None
        return self._eq_num / self._eq_den

    def _tau(self, r: float) -> float:
        """Target price as a function of aggressiveness, for the current limit."""
        L = float(self.customer_order.limit_price)
        lo, hi = float(self.price_floor), float(self.price_ceiling)
        eq = self.eq_estimate
        th = self.theta
        if self.side is Side.BID:
            if eq is None:
                return lo + (L - lo) * _lam((r + 1.0) / 2.0, th)
            if L > eq:
                if r >= 0:
                    return eq + (L - eq) * _lam(r, th)
                return eq - (eq - lo) * _lam(-r, th)
            if r >= 0:
                return L
            return L - (L - lo) * _lam(-r, th)
        else:
            if eq is None:
                return hi - (hi - L) * _lam((r + 1.0) / 2.0, th)
            if L < eq:
                if r >= 0:
                    return eq - (eq - L) * _lam(r, th)
                return eq + (hi - eq) * _lam(-r, th)
            if r >= 0:
                return L
            return L + (hi - L) * _lam(-r, th)

    def _r_for_price(self, price: float) -> float:
        """Invert _tau by bisection (tau is monotone in r)."""
        lo, hi = -1.0, 1.0
        increasing = self.side is Side.BID  # buyers: higher r -> higher price
        for _ in range(24):
            mid = 0.5 * (lo + hi)
            value = self._tau(mid)
            if (value < price) == increasing:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def propose_price(self, view):
        tau = self._tau(self.r)
        return math.floor(tau) if self.side is Side.BID else math.ceil(tau)

    def _nudge(self, target_r: float) -> None:
        target_r = min(1.0, max(-1.0, target_r))
        self.r += self.params.aa_beta_r * (target_r - self.r)

    def respond(self, event: MarketEvent) -> None:
        p = self.params
        if event.kind == "TRADE":
            q = float(event.trade_price)
            self._eq_num = q + p.aa_rho * self._eq_num
            self._eq_den = 1.0 + p.aa_rho * self._eq_den
            self._recent.append(q)
            self._update_theta()
            if self.customer_order is not None:
                r_shout = self._r_for_price(q)
                won = (self._tau(self.r) >= q) if self.side is Side.BID else (self._tau(self.r) <= q)
                if won:
                    target = (1.0 - p.aa_delta_r) * r_shout - p.aa_delta_r
                else:
                    target = (1.0 + p.aa_delta_r) * r_shout + p.aa_delta_r
                self._nudge(target)
        elif event.kind == "QUOTE" and self.customer_order is not None:
            # competition on our own side pushes aggressiveness up
            if (self.side is Side.BID and event.best_bid is not None
                    and self._prev_best_bid is not None
                    and event.best_bid > self._prev_best_bid
                    and self._tau(self.r) < event.best_bid):
                target = self._r_for_price(float(event.best_bid))
                self._nudge((1.0 + p.aa_delta_r) * target + p.aa_delta_r)
            elif (self.side is Side.ASK and event.best_ask is not None
                    and self._prev_best_ask is not None
                    and event.best_ask < self._prev_best_ask
                    and self._tau(self.r) > event.best_ask):
                target = self._r_for_price(float(event.best_ask))
                self._nudge((1.0 + p.aa_delta_r) * target + p.aa_delta_r)
        self._prev_best_bid = event.best_bid
        self._prev_best_ask = event.best_ask

    def _update_theta(self) -> None:
        p = self.params
        eq = self.eq_estimate
        if eq is None or eq <= 0 or not self._recent:
            return
        ms = sum((q - eq) ** 2 for q in self._recent) / len(self._recent)
        alpha = 100.0 * math.sqrt(ms) / eq
        frac = min(1.0, alpha / p.aa_alpha_ref)
        self.theta = p.aa_theta_max - (p.aa_theta_max - p.aa_theta_min) * frac


class TraderGDX(Trader):
    """GDX-style trader: belief-weighted surplus maximisation with lookahead.

    Beliefs are acceptance frequencies over a sliding window of recent
    quote/trade outcomes, linearly interpolated across prices (with a weak
    uniform prior so an empty window still yields workable quotes).  The
    quote maximises a dynamic program over a fixed horizon of future
    trading opportunities discounted by gamma.
    """

    tag = "GDX"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.window = deque(maxlen=self.params.gdx_window)
        self._cache_dirty = True
        self._acc_own: np.ndarray = np.empty(0)      # accepted quotes on own side
        self._rej_own: np.ndarray = np.empty(0)      # not-yet-accepted quotes on own side
        self._opp: np.ndarray = np.empty(0)          # all quotes on opposite side

    def respond(self, event: MarketEvent) -> None:
        if event.kind == "QUOTE":
            self.window.append((event.side, event.price, False))
            self._cache_dirty = True
        elif event.kind == "TRADE":
            resting_side = event.side.opposite()
            self.window.append((event.side, event.price, True))
            self.window.append((resting_side, event.trade_price, True))
            self._cache_dirty = True

    def _rebuild(self) -> None:
        acc_own, rej_own, opp = [], [], []
        for side, price, accepted in self.window:
            if side is self.side:
                (acc_own if accepted else rej_own).append(price)
            else:
                opp.append(price)
        self._acc_own = np.sort(np.asarray(acc_own, dtype=float))
        self._rej_own = np.sort(np.asarray(rej_own, dtype=float))
        self._opp = np.sort(np.asarray(opp, dtype=float))
        self._cache_dirty = False

    def _counts(self, prices: np.ndarray) -> tuple:
        if self._cache_dirty:
            self._rebuild()
        if self.side is Side.BID:
            # accepted bids at or below the price, plus asks at or below it
            # (willing sellers), against not-yet-accepted bids at or above it
            favourable = (np.searchsorted(self._acc_own, prices, "right")
                          + np.searchsorted(self._opp, prices, "right"))
            against = len(self._rej_own) - np.searchsorted(self._rej_own, prices, "left")
        else:
            favourable = ((len(self._acc_own) - np.searchsorted(self._acc_own, prices, "left"))
                          + (len(self._opp) - np.searchsorted(self._opp, prices, "left")))
            against = np.searchsorted(self._rej_own, prices, "right")
        return favourable, against

    def belief(self, prices: np.ndarray) -> np.ndarray:
        """Acceptance frequency ratio at each candidate price (0 when unobserved)."""
        favourable, against = self._counts(prices)
        total = favourable + against
        return np.divide(favourable, total, out=np.zeros(len(prices)), where=total > 0)

    def _pricing_belief(self, prices: np.ndarray) -> np.ndarray:
        """Belief with a weak uniform prior so an empty window still prices."""
        favourable, against = self._counts(prices)
        lo, hi = float(self.price_floor), float(self.price_ceiling)
        if self.side is Side.BID:
            prior = (prices - lo) / (hi - lo)
        else:
            prior = (hi - prices) / (hi - lo)
        return (favourable + prior) / (favourable + against + 1.0)

    def propose_price(self, view):
        p = self.params
        limit = self.customer_order.limit_price
        if self.side is Side.BID:
            # ascending grid: ties resolve to the lowest (most conservative) bid
            grid = np.arange(self.price_floor, limit + 1, dtype=float)
            surplus = limit - grid
        else:
            # descending grid: ties resolve to the highest ask
            grid = np.arange(self.price_ceiling, limit - 1, -1, dtype=float)
            surplus = grid - limit
        f = self._pricing_belief(grid)
        value = 0.0
        ev = f * surplus
        for _ in range(p.gdx_horizon):
            ev = f * surplus + (1.0 - f) * p.gdx_gamma * value
            value = float(ev.max())
        return int(grid[int(np.argmax(ev))])


STRATEGIES = {
    "ZIC": TraderZIC,
    "ZIP": TraderZIP,
    "AA": TraderAA,
    "GDX": TraderGDX,
    "SNPR": TraderSNPR,
    "GVWY": TraderGVWY,
    "SHVR": TraderSHVR,
}


def make_trader(tag: str, trader_id: int, side: Side, price_floor: int,
                price_ceiling: int, rng: np.random.Generator,
                params: Optional[StrategyParams] = None, **extra) -> Trader:
    """Instantiate a trader by strategy tag ("DTR" is wired in clone_agent)."""
    if tag == "DTR":
        from .clone_agent import CloneTrader
        return CloneTrader(trader_id, side, price_floor, price_ceiling, rng,
                           params=params, **extra)
    try:
        cls = STRATEGIES[tag]
    except KeyError:
        raise ValueError("unknown strategy tag %r" % (tag,)) from None
    return cls(trader_id, side, price_floor, price_ceiling, rng, params=params)
