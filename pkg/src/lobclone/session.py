"""Market sessions: schedules, the polling loop, and session metrics.

A session assigns customer orders (limit prices drawn from supply/demand
schedules) to a fixed population of traders, advances a simulated clock in
steps of 1/n seconds (n traders, so each trader is polled about once per
simulated second), polls one randomly chosen trader per step, routes its
quote to the exchange, and broadcasts every resulting market event to the
adaptive traders.  Everything is deterministic given the config seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .exchange import LimitOrderBook, Side
from .traders import (CustomerOrder, MarketEvent, MarketView, StrategyParams,
                      Trader, STRATEGY_TAGS, make_trader)
from .features import SnapshotRecorder, SnapshotDataset


class ScheduleShape(Enum):
    LINEAR = "LINEAR"
    STEP = "STEP"
    RANDOM_OFFSET = "RANDOM_OFFSET"


class ReplenishMode(Enum):
    DRIP_FIXED = "DRIP_FIXED"
    DRIP_JITTER = "DRIP_JITTER"
    PERIODIC = "PERIODIC"


@dataclass
class ScheduleSpec:
    """Limit-price schedule for one side of the market."""

    price_low: int
    price_high: int
    shape: ScheduleShape = ScheduleShape.LINEAR
    replenish_interval: float = 150.0
    mode: ReplenishMode = ReplenishMode.DRIP_JITTER

    def __post_init__(self):
        if isinstance(self.shape, str):
            self.shape = ScheduleShape(self.shape)
        if isinstance(self.mode, str):
            self.mode = ReplenishMode(self.mode)
        if self.price_low > self.price_high:
            raise ValueError("schedule range inverted: %s > %s"
                             % (self.price_low, self.price_high))
        if self.replenish_interval <= 0:
            raise ValueError("replenish_interval must be positive")


class ConfigError(ValueError):
    """SessionConfig failed validation before the session started."""


@dataclass
class SessionConfig:
    """Complete description of one market session."""

    duration: float = 180.0
    population: list = field(default_factory=lambda: [("ZIC", 40, 40)])
    supply: ScheduleSpec = field(default_factory=lambda: ScheduleSpec(60, 150))
    demand: ScheduleSpec = field(default_factory=lambda: ScheduleSpec(50, 140))
    seed: int = 0
    price_floor: int = 1
    price_ceiling: int = 500
    paired_limits: bool = False      # balanced-group mode: matched limit sequences
    capture: bool = True
    capture_mode: str = "trade"
    capture_filter: Optional[str] = None
    strategy_params: StrategyParams = field(default_factory=StrategyParams)
    model_path: Optional[str] = None  # model file for DTR traders

    def validate(self) -> None:
        if not self.population:
            raise ConfigError("empty population")
        for tag, n_buyers, n_sellers in self.population:
            if tag not in STRATEGY_TAGS:
                raise ConfigError("unknown strategy tag %r" % (tag,))
            if n_buyers < 0 or n_sellers < 0:
                raise ConfigError("negative trader count for %s" % tag)
        if self.paired_limits:
            if len(self.population) != 2:
                raise ConfigError("paired limits require exactly two strategies")
            (_, b0, s0), (_, b1, s1) = self.population
            if b0 != b1 or s0 != s1:
                raise ConfigError("paired limits require equal counts per side")
        if any(tag == "DTR" for tag, _, _ in self.population) and not self.model_path:
            raise ConfigError("population includes DTR but no model_path given")
        if self.duration < 0:
            raise ConfigError("negative duration")

    def to_json(self) -> str:
        doc = asdict(self)
        doc["supply"]["shape"] = self.supply.shape.value
        doc["supply"]["mode"] = self.supply.mode.value
        doc["demand"]["shape"] = self.demand.shape.value
        doc["demand"]["mode"] = self.demand.mode.value
        doc["population"] = [list(entry) for entry in self.population]
        doc["strategy_params"] = json.loads(self.strategy_params.to_json())
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SessionConfig":
        doc = json.loads(text)
        doc["supply"] = ScheduleSpec(**doc["supply"])
        doc["demand"] = ScheduleSpec(**doc["demand"])
        doc["population"] = [tuple(entry) for entry in doc["population"]]
        doc["strategy_params"] = StrategyParams.from_json(json.dumps(doc["strategy_params"]))
        return cls(**doc)


def build_schedule(spec: ScheduleSpec, n_traders: int, rng: np.random.Generator) -> list:
    """Generate n limit prices within the schedule's range."""
    if n_traders < 1:
        raise ValueError("n_traders must be >= 1")
    lo, hi = spec.price_low, spec.price_high
    base = np.linspace(lo, hi, n_traders)
    if spec.shape is ScheduleShape.LINEAR:
        prices = base
    elif spec.shape is ScheduleShape.STEP:
        half = (n_traders + 1) // 2
        prices = np.array([lo] * half + [hi] * (n_traders - half), dtype=float)
    else:  # RANDOM_OFFSET: jittered linear
        jitter = (hi - lo) / (4.0 * n_traders)
        prices = base + rng.uniform(-jitter, jitter, size=n_traders)
        prices = np.clip(prices, lo, hi)
    return [int(p) for p in np.rint(prices)]


def theoretical_equilibrium(supply_prices: Sequence[int],
                            demand_prices: Sequence[int]) -> tuple:
    """Intersection of the sorted step curves.

    Returns (P0, Q0, max_surplus).  P0 is None when no unit can trade;
    midpoint ties round half-up (toward the demand side).
    """
    if not supply_prices or not demand_prices:
        raise ValueError("both schedules must be non-empty")
    supply = sorted(supply_prices)
    demand = sorted(demand_prices, reverse=True)
    q0 = 0
    surplus = 0
    for s, d in zip(supply, demand):
        if d >= s:
            q0 += 1
            surplus += d - s
        else:
            break
    if q0 == 0:
        return (None, 0, 0)
    lower = supply[q0 - 1]
    upper = demand[q0 - 1]
    if q0 < len(demand):
        lower = max(lower, demand[q0])
    if q0 < len(supply):
        upper = min(upper, supply[q0])
    mid = (lower + upper) / 2.0
    p0 = int(np.floor(mid + 0.5))
    return (p0, q0, surplus)


def smith_alpha(trade_prices: Sequence[float], p0: float) -> Optional[float]:
    """100 * RMS deviation of trade prices from p0, divided by p0."""
    if p0 <= 0:
        raise ValueError("p0 must be positive")
    prices = np.asarray(trade_prices, dtype=float)
    if prices.size == 0:
        return None
    return float(100.0 * np.sqrt(np.mean((prices - p0) ** 2)) / p0)


def allocative_efficiency(total_profit: float, max_surplus: float) -> float:
    """Realized profit as a percentage of the maximum possible surplus."""
    if max_surplus < 0:
        raise ValueError("max_surplus must be >= 0")
    if max_surplus == 0:
        return 0.0
    return 100.0 * total_profit / max_surplus


def smith_alpha_series(trade_prices: Sequence[float], p0: float) -> list:
    """Cumulative Smith's alpha recomputed after each successive trade."""
    if p0 <= 0:
        raise ValueError("p0 must be positive")
    out = []
    sum_sq = 0.0
    for k, price in enumerate(trade_prices, start=1):
        sum_sq += (price - p0) ** 2
        out.append(100.0 * np.sqrt(sum_sq / k) / p0)
    return out


@dataclass
class TraderSummary:
    trader_id: int
    tag: str
    side: str
    balance: int
    trade_count: int


@dataclass
class SessionResult:
    """Everything measured in one session."""

    seed: int
    traders: list                      # TraderSummary, in trader-id order
    appt: dict                         # tag -> average profit per trader
    tape: list                         # TapeEvent list
    n_trades: int
    p0: Optional[int]
    q0: int
    max_surplus: int
    efficiency: float
    alpha_series: list                 # cumulative Smith's alpha after each trade
    trade_times: list
    snapshots: Optional[SnapshotDataset]

    @property
    def mean_alpha(self) -> Optional[float]:
        if not self.alpha_series:
            return None
        return float(np.mean(self.alpha_series))

    def total_profit(self) -> int:
        return sum(t.balance for t in self.traders)

    def strategy_trade_counts(self) -> dict:
        counts = {}
        for t in self.traders:
            counts[t.tag] = counts.get(t.tag, 0) + t.trade_count
        return counts

    def summary_rows(self, config_id: str) -> list:
        """CSV rows: config_id, seed, strategy, appt, efficiency, n_trades, mean_alpha."""
        counts = self.strategy_trade_counts()
        alpha = self.mean_alpha
        rows = []
        for tag in sorted(self.appt):
            rows.append([config_id, self.seed, tag,
                         repr(float(self.appt[tag])),
                         repr(float(self.efficiency)),
                         counts.get(tag, 0),
                         "" if alpha is None else repr(float(alpha))])
        return rows


class _LimitFeed:
    """Per-trader sequence of limit prices drawn from one side's schedule.

    Paired traders share a feed, so the k-th customer order of each pair
    member carries the same limit price.
    """

    __slots__ = ("prices", "rng", "drawn")

    def __init__(self, prices: list, rng: np.random.Generator, first: int):
        self.prices = prices
        self.rng = rng
        self.drawn = [first]

    def price(self, k: int) -> int:
        while len(self.drawn) <= k:
            self.drawn.append(self.prices[int(self.rng.integers(len(self.prices)))])
        return self.drawn[k]


def run_session(config: SessionConfig) -> SessionResult:
    """Run one complete market session; fully deterministic given config."""
    config.validate()

    seq = np.random.SeedSequence(config.seed)
    poll_ss, limit_ss, trader_ss = seq.spawn(3)
    poll_rng = np.random.default_rng(poll_ss)
    limit_rng = np.random.default_rng(limit_ss)

    # -- population ----------------------------------------------------
    traders: list[Trader] = []
    model_bundle = None
    if any(tag == "DTR" for tag, _, _ in config.population):
        from .network import load_model
        model_bundle = load_model(config.model_path)
    trader_seeds = trader_ss.spawn(sum(nb + ns for _, nb, ns in config.population))
    extra = {}
    for tag, n_buyers, n_sellers in config.population:
        for side, count in ((Side.BID, n_buyers), (Side.ASK, n_sellers)):
            for _ in range(count):
                rng = np.random.default_rng(trader_seeds[len(traders)])
                if tag == "DTR":
                    extra = {"model": model_bundle}
                else:
                    extra = {}
                traders.append(make_trader(tag, len(traders), side,
                                           config.price_floor, config.price_ceiling,
                                           rng, params=config.strategy_params, **extra))
    n = len(traders)
    buyers = [t for t in traders if t.side is Side.BID]
    sellers = [t for t in traders if t.side is Side.ASK]
    if n == 0:
        raise ConfigError("no traders")

    # -- limit-price feeds ----------------------------------------------
    def build_feeds(group: list, spec: ScheduleSpec) -> dict:
        feeds = {}
        if not group:
            return feeds
        if config.paired_limits:
            # group lists strategy A's traders then strategy B's; pair k-th of each
            half = len(group) // 2
            prices = build_schedule(spec, half, limit_rng)
            perm = limit_rng.permutation(half)
            for k in range(half):
                feed = _LimitFeed(prices, limit_rng, prices[perm[k]])
                feeds[group[k].trader_id] = feed
                feeds[group[half + k].trader_id] = feed
        else:
            prices = build_schedule(spec, len(group), limit_rng)
            perm = limit_rng.permutation(len(group))
            for k, trader in enumerate(group):
                feeds[trader.trader_id] = _LimitFeed(prices, limit_rng, prices[perm[k]])
        return feeds

    feeds = {}
    feeds.update(build_feeds(buyers, config.demand))
    feeds.update(build_feeds(sellers, config.supply))

    # -- customer-order state --------------------------------------------
    book = LimitOrderBook(config.price_floor, config.price_ceiling,
                          known_traders=range(n))
    issue_at: list = [None] * n      # next issue time per trader; None = nothing pending
    order_counter = [0] * n          # how many customer orders issued so far
    # surplus accounting: one [side, limit, counted] entry per issued order;
    # an order withdrawn unconsumed (periodic reissue) stops counting toward
    # the maximum-surplus denominator
    issued_units: list = []
    live_unit: list = [None] * n     # trader_id -> index into issued_units
    spec_for = {t.trader_id: (config.demand if t.side is Side.BID else config.supply)
                for t in traders}
    periodic_next = {Side.BID: 0.0, Side.ASK: 0.0}

    # initial drip staggers arrivals across one replenish interval so
    # liquidity flows in continuously instead of one opening burst; clamp
    # to the duration so short sessions still see every trader's order
    for group, spec in ((buyers, config.demand), (sellers, config.supply)):
        if spec.mode is ReplenishMode.PERIODIC or not group:
            continue
        horizon = min(spec.replenish_interval, config.duration) if config.duration > 0 \
            else spec.replenish_interval
        tstep = horizon / len(group)
        times = []
        for k in range(len(group)):
            jitter = tstep * limit_rng.random() if spec.mode is ReplenishMode.DRIP_JITTER else 0.0
            times.append(k * tstep + jitter)
        perm = limit_rng.permutation(len(group))
        for k, trader in enumerate(group):
            issue_at[trader.trader_id] = times[perm[k]]

    recorder = None
    if config.capture:
        recorder = SnapshotRecorder(mode=config.capture_mode,
                                    filter_tag=config.capture_filter)

    adaptive = [t for t in traders if type(t).respond is not Trader.respond]
    trade_prices: list = []
    trade_times: list = []

    def issue_order(trader: Trader, t: float) -> None:
        tid = trader.trader_id
        if trader.customer_order is not None and live_unit[tid] is not None:
            issued_units[live_unit[tid]][2] = False  # withdrawn unconsumed
        k = order_counter[tid]
        order_counter[tid] += 1
        limit = feeds[tid].price(k)
        trader.assign_customer_order(CustomerOrder(side=trader.side,
                                                   limit_price=limit, issue_time=t))
        live_unit[tid] = len(issued_units)
        issued_units.append([trader.side, limit, True])
        issue_at[tid] = None

    def schedule_replenish(trader: Trader, t: float) -> None:
        spec = spec_for[trader.trader_id]
        if spec.mode is ReplenishMode.DRIP_FIXED:
            issue_at[trader.trader_id] = t + spec.replenish_interval
        elif spec.mode is ReplenishMode.DRIP_JITTER:
            issue_at[trader.trader_id] = t + spec.replenish_interval * (0.5 + limit_rng.random())
        # PERIODIC reissues globally; nothing per-trader to schedule

    def broadcast(event: MarketEvent) -> None:
        for tr in adaptive:
            tr.respond(event)

    def make_view(t: float) -> MarketView:
        return MarketView(
            time=t,
            time_frac=t / config.duration if config.duration > 0 else 1.0,
            best_bid=book.bids.best, best_bid_qty=book.bids.best_qty(),
            best_ask=book.asks.best, best_ask_qty=book.asks.best_qty(),
            bid_total_qty=book.bids.total_qty, ask_total_qty=book.asks.total_qty,
            last_trade_price=trade_prices[-1] if trade_prices else None,
            last_trade_time=trade_times[-1] if trade_times else None)

    def make_event(kind: str, t: float, side, price, trade_price) -> MarketEvent:
        return MarketEvent(
            kind=kind, time=t, side=side, price=price, trade_price=trade_price,
            best_bid=book.bids.best, best_bid_qty=book.bids.best_qty(),
            best_ask=book.asks.best, best_ask_qty=book.asks.best_qty())

    dt = 1.0 / n
    steps = int(round(config.duration * n))
    for step in range(steps):
        t = step * dt

        # periodic reissue waves replace unconsumed orders
        for side, group in ((Side.BID, buyers), (Side.ASK, sellers)):
            spec = config.demand if side is Side.BID else config.supply
            if spec.mode is ReplenishMode.PERIODIC and group and t >= periodic_next[side]:
                periodic_next[side] += spec.replenish_interval
                for trader in group:
                    if trader.customer_order is not None:
                        ev = book.cancel_order(trader.trader_id, t)
                        if ev is not None:
                            broadcast(make_event("CANCEL", t, None, None, None))
                    issue_order(trader, t)

        # drip issuance in trader-id order
        for tid in range(n):
            due = issue_at[tid]
            if due is not None and due <= t:
                issue_order(traders[tid], t)

        # poll one randomly chosen trader
        trader = traders[int(poll_rng.integers(n))]
        view = make_view(t)
        quote = trader.get_quote(view)
        if quote is None:
            continue
        events = book.submit_order(quote)
        if not events:
            broadcast(make_event("QUOTE", t, quote.side, quote.price, None))
            if recorder is not None and config.capture_mode == "quote":
                recorder.on_quote(view, quote.price, quote.side, trader.tag,
                                  trader.customer_order.limit_price)
            continue

        for ev in events:
            resting_id = ev.seller_id if ev.buyer_id == trader.trader_id else ev.buyer_id
            resting = traders[resting_id]
            if recorder is not None:
                if config.capture_mode == "trade":
                    recorder.on_trade(view, ev.price, quote.side,
                                      resting.tag, resting.customer_order.limit_price, t)
                else:
                    recorder.record_trade_only(ev.price, t)
            resting.book_trade(ev.price, t)
            trader.book_trade(ev.price, t)
            schedule_replenish(resting, t)
            schedule_replenish(trader, t)
            trade_prices.append(ev.price)
            trade_times.append(t)
            broadcast(make_event("TRADE", t, quote.side, quote.price, ev.price))
        if quote.quantity > 0:  # unfilled remainder rested on the book
            broadcast(make_event("QUOTE", t, quote.side, quote.price, None))

    # -- metrics ---------------------------------------------------------
    demand_units = [limit for side, limit, counted in issued_units
                    if counted and side is Side.BID]
    supply_units = [limit for side, limit, counted in issued_units
                    if counted and side is Side.ASK]
    if demand_units and supply_units:
        p0, q0, max_surplus = theoretical_equilibrium(supply_units, demand_units)
    else:
        p0, q0, max_surplus = (None, 0, 0)

    summaries = [TraderSummary(t.trader_id, t.tag, t.side.value, t.balance, t.trade_count)
                 for t in traders]
    appt = {}
    for tag in sorted({t.tag for t in traders}):
        members = [t for t in traders if t.tag == tag]
        appt[tag] = sum(t.balance for t in members) / len(members)

    total = sum(t.balance for t in traders)
    efficiency = allocative_efficiency(total, max_surplus)
    alpha_series = smith_alpha_series(trade_prices, p0) if p0 else []

    snapshots = None
    if recorder is not None:
        snapshots = SnapshotDataset.from_snapshots(
            recorder.rows, provenance=[("session", config.seed, len(recorder.rows))])

    return SessionResult(seed=config.seed, traders=summaries, appt=appt,
                         tape=list(book.tape), n_trades=len(trade_prices),
                         p0=p0, q0=q0, max_surplus=max_surplus,
                         efficiency=efficiency, alpha_series=alpha_series,
                         trade_times=trade_times, snapshots=snapshots)
