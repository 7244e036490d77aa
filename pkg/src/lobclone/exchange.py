"""Single-asset limit-order-book exchange running a continuous double auction.

Orders are integer-priced limit orders matched with price-time priority.
Each trader may hold at most one resting order; submitting a new order
implicitly replaces any previous one.  Trades execute at the resting
order's price.  Every fill and cancellation is appended to a time-ordered
tape, and the full book depth can be published as a Level-2 view.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional


class Side(Enum):
    BID = "BID"
    ASK = "ASK"

    def opposite(self) -> "Side":
        return Side.ASK if self is Side.BID else Side.BID


class ValidationError(ValueError):
    """Order rejected before touching the book."""


@dataclass(eq=False)
class Order:
    """A limit order; ``order_id`` is assigned by the book at submission."""

    trader_id: int
    side: Side
    price: int
    quantity: int = 1
    time: float = 0.0
    order_id: int = -1

    def __str__(self) -> str:
        return "[#%d t%d %s %d x%d @%.3f]" % (
            self.order_id, self.trader_id, self.side.value,
            self.price, self.quantity, self.time)


@dataclass(frozen=True)
class TapeEvent:
    """One tape entry: a TRADE or a CANCEL.

    TRADE carries price/buyer_id/seller_id; CANCEL carries the cancelled
    order_id.  Unused fields are None.
    """

    kind: str
    time: float
    quantity: int
    price: Optional[int] = None
    buyer_id: Optional[int] = None
    seller_id: Optional[int] = None
    order_id: Optional[int] = None


@dataclass(frozen=True)
class Level2View:
    """Full-depth snapshot of the book published to traders."""

    time: float
    bid_levels: tuple  # ((price, total qty), ...) best first
    ask_levels: tuple
    best_bid: Optional[int]
    best_ask: Optional[int]


class _HalfBook:
    """One side of the book: price -> FIFO queue of resting orders."""

    __slots__ = ("side", "queues", "level_qty", "best", "total_qty", "n_orders")

    def __init__(self, side: Side):
        self.side = side
        self.queues: dict[int, deque] = {}
        self.level_qty: dict[int, int] = {}
        self.best: Optional[int] = None
        self.total_qty = 0
        self.n_orders = 0

    def _better(self, a: int, b: int) -> bool:
        return a > b if self.side is Side.BID else a < b

    def add(self, order: Order) -> None:
        q = self.queues.get(order.price)
        if q is None:
            self.queues[order.price] = deque((order,))
            self.level_qty[order.price] = order.quantity
            if self.best is None or self._better(order.price, self.best):
                self.best = order.price
        else:
            q.append(order)
            self.level_qty[order.price] += order.quantity
        self.total_qty += order.quantity
        self.n_orders += 1

    def remove(self, order: Order) -> None:
        q = self.queues[order.price]
        q.remove(order)
        self.level_qty[order.price] -= order.quantity
        self.total_qty -= order.quantity
        self.n_orders -= 1
        if not q:
            del self.queues[order.price]
            del self.level_qty[order.price]
            if order.price == self.best:
                self._refresh_best()

    def peek_best(self) -> Optional[Order]:
        if self.best is None:
            return None
        return self.queues[self.best][0]

    def pop_quantity_at_best(self, qty: int) -> None:
        """Consume qty from the front order at the best price."""
        front = self.queues[self.best][0]
        front.quantity -= qty
        self.level_qty[self.best] -= qty
        self.total_qty -= qty
        if front.quantity == 0:
            self.queues[self.best].popleft()
            self.n_orders -= 1
            if not self.queues[self.best]:
                del self.queues[self.best]
                del self.level_qty[self.best]
                self._refresh_best()

    def _refresh_best(self) -> None:
        if not self.queues:
            self.best = None
        elif self.side is Side.BID:
            self.best = max(self.queues)
        else:
            self.best = min(self.queues)

    def best_qty(self) -> int:
        return self.level_qty[self.best] if self.best is not None else 0

    def levels(self) -> tuple:
        prices = sorted(self.queues, reverse=(self.side is Side.BID))
        return tuple((p, self.level_qty[p]) for p in prices)

    def orders_snapshot(self) -> list:
        out = []
        for p in sorted(self.queues):
            out.extend((o.order_id, o.trader_id, o.price, o.quantity) for o in self.queues[p])
        return out


class LimitOrderBook:
    """Matching engine plus tape for a single asset.

    Deterministic given the submitted event sequence.  If ``known_traders``
    is provided, orders from any other trader id are rejected.
    """

    def __init__(self, price_floor: int = 1, price_ceiling: int = 500,
                 known_traders: Optional[Iterable[int]] = None):
        if price_floor < 1 or price_ceiling <= price_floor:
            raise ValidationError("bad price bounds [%s, %s]" % (price_floor, price_ceiling))
        self.price_floor = price_floor
        self.price_ceiling = price_ceiling
        self.known_traders = set(known_traders) if known_traders is not None else None
        self.bids = _HalfBook(Side.BID)
        self.asks = _HalfBook(Side.ASK)
        self.tape: list[TapeEvent] = []
        self.resting: dict[int, Order] = {}  # trader_id -> live order
        self.next_order_id = 0
        self.last_time = 0.0

    # -- validation ---------------------------------------------------

    def _validate(self, order: Order) -> None:
        if not isinstance(order.price, int) or isinstance(order.price, bool):
            raise ValidationError("price must be an integer tick, got %r" % (order.price,))
        if order.price < self.price_floor or order.price > self.price_ceiling:
            raise ValidationError("price %d outside [%d, %d]"
                                  % (order.price, self.price_floor, self.price_ceiling))
        if order.quantity < 1:
            raise ValidationError("quantity must be >= 1, got %r" % (order.quantity,))
        if order.time < self.last_time:
            raise ValidationError("time went backwards: %r < %r" % (order.time, self.last_time))
        if self.known_traders is not None and order.trader_id not in self.known_traders:
            raise ValidationError("unknown trader_id %r" % (order.trader_id,))

    # -- operations ---------------------------------------------------

    def submit_order(self, order: Order) -> list[TapeEvent]:
        """Match an incoming order, resting any unfilled remainder.

        Any prior resting order from the same trader is replaced first
        (without a tape event).  Returns the trade events produced.
        """
        self._validate(order)
        self.last_time = order.time
        prior = self.resting.pop(order.trader_id, None)
        if prior is not None:
            self._half(prior.side).remove(prior)

        order.order_id = self.next_order_id
        self.next_order_id += 1

        own = self._half(order.side)
        opp = self._half(order.side.opposite())
        events = []
        while order.quantity > 0:
            best = opp.peek_best()
            if best is None or not self._crosses(order, best.price):
                break
            qty = min(order.quantity, best.quantity)
            buyer, seller = ((order.trader_id, best.trader_id)
                             if order.side is Side.BID
                             else (best.trader_id, order.trader_id))
            events.append(TapeEvent(kind="TRADE", time=order.time, quantity=qty,
                                    price=best.price, buyer_id=buyer, seller_id=seller))
            order.quantity -= qty
            if best.quantity == qty:
                del self.resting[best.trader_id]
            opp.pop_quantity_at_best(qty)
        if order.quantity > 0:
            own.add(order)
            self.resting[order.trader_id] = order
        self.tape.extend(events)
        return events

    def cancel_order(self, trader_id: int, time: float) -> Optional[TapeEvent]:
        """Remove the trader's resting order, if any.  Idempotent."""
        if time < self.last_time:
            raise ValidationError("time went backwards: %r < %r" % (time, self.last_time))
        self.last_time = time
        order = self.resting.pop(trader_id, None)
        if order is None:
            return None
        self._half(order.side).remove(order)
        event = TapeEvent(kind="CANCEL", time=time, quantity=order.quantity,
                          order_id=order.order_id)
        self.tape.append(event)
        return event

    def publish_level2(self, time: float) -> Level2View:
        return Level2View(time=time,
                          bid_levels=self.bids.levels(),
                          ask_levels=self.asks.levels(),
                          best_bid=self.bids.best,
                          best_ask=self.asks.best)

    # -- helpers ------------------------------------------------------

    def _half(self, side: Side) -> _HalfBook:
        return self.bids if side is Side.BID else self.asks

    def _crosses(self, order: Order, opp_price: int) -> bool:
        if order.side is Side.BID:
            return order.price >= opp_price
        return order.price <= opp_price

    @property
    def best_bid(self) -> Optional[int]:
        return self.bids.best

    @property
    def best_ask(self) -> Optional[int]:
        return self.asks.best

    def book_state(self) -> tuple:
        """Canonical (bids, asks) order listing, for equality checks."""
        return (self.bids.orders_snapshot(), self.asks.orders_snapshot())


def export_tape_csv(tape: Iterable[TapeEvent], path) -> None:
    """Write the tape with columns kind,time,price,quantity,buyer_id,seller_id,order_id."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["kind", "time", "price", "quantity",
                         "buyer_id", "seller_id", "order_id"])
        for ev in tape:
            writer.writerow([
                ev.kind,
                "%.6f" % ev.time,
                "" if ev.price is None else ev.price,
                ev.quantity,
                "" if ev.buyer_id is None else ev.buyer_id,
                "" if ev.seller_id is None else ev.seller_id,
                "" if ev.order_id is None else ev.order_id,
            ])
