"""Two-part exchange protocol, acceptance rules and commodity marketability."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, NamedTuple, Sequence

from .errors import (
    DoubleCompletionError,
    GoodsUnavailableError,
    MediumRejectedError,
    NotOpenError,
    UnknownClassError,
    UnknownGoodError,
    WrongBearerError,
)
from .instruments import InstrumentClass, InstrumentKind, Ledger


class Medium(Enum):
    BARTER = "Barter"
    MONEY = "Money"
    IOU = "IOU"
    INVOICE = "Invoice"


class ContractState(Enum):
    OPEN = "Open"
    COMPLETED = "Completed"


@dataclass
class ExchangeContract:
    contract_id: int
    first_provider: int
    first_receiver: int
    good: int
    quantity: float
    medium: Medium
    open_tick: int
    class_id: int | None = None
    units: int = 0
    redeemed: int = 0
    state: ContractState = ContractState.OPEN
    close_tick: int | None = None

    @property
    def remaining(self) -> int:
        return self.units - self.redeemed


# -- credibility ----------------------------------------------------------------

class CredibilityBook:
    """Redemption track record per issuer; score is a beta(1,1)-smoothed honour rate."""

    def __init__(self) -> None:
        self.honored: dict[int, int] = {}
        self.defaulted: dict[int, int] = {}

    def record(self, issuer: int, honored: bool) -> None:
        book = self.honored if honored else self.defaulted
        book[issuer] = book.get(issuer, 0) + 1

    def score(self, issuer: int) -> float:
        h = self.honored.get(issuer, 0)
        d = self.defaulted.get(issuer, 0)
        return (h + 1) / (h + d + 2)

    def __getitem__(self, issuer: int) -> float:
        return self.score(issuer)


# -- marketability --------------------------------------------------------------

class TradeOutcome(NamedTuple):
    good: str
    accepted: bool  # False covers both an explicit refusal and a tick of inactivity


@dataclass
class MarketabilityTable:
    scores: dict[str, float]
    rate: float = 0.05
    baseline: float = 0.1
    history: list[tuple[str, bool, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        for g, s in self.scores.items():
            self.scores[g] = min(1.0, max(0.0, s))

    @classmethod
    def uniform(cls, goods: Sequence[str], rate: float = 0.05, baseline: float = 0.1) -> "MarketabilityTable":
        return cls({g: baseline for g in goods}, rate=rate, baseline=baseline)

    def __getitem__(self, good: str) -> float:
        return self.scores[good]

    def get(self, good: str, default: float = 0.0) -> float:
        return self.scores.get(good, default)

    def most_marketable(self) -> str:
        return max(self.scores, key=lambda g: (self.scores[g], g))


def marketability_update(table: MarketabilityTable, outcome: TradeOutcome) -> MarketabilityTable:
    """Move ``outcome.good``'s score toward 1 on acceptance, toward the baseline otherwise."""
    if outcome.good not in table.scores:
        raise UnknownGoodError(outcome.good)
    s = table.scores[outcome.good]
    target = 1.0 if outcome.accepted else table.baseline
    s += table.rate * (target - s)
    s = min(1.0, max(0.0, s))
    table.scores[outcome.good] = s
    table.history.append((outcome.good, outcome.accepted, s))
    return table


# -- acceptance -------------------------------------------------------------------

@dataclass(frozen=True)
class RegimeContext:
    """Everything an acceptance decision may look at besides the agent and the class."""

    regime: str = "Psi"
    legal_tender: bool = False
    tax_currency: bool = False
    psi_requested: frozenset[str] = frozenset()
    psi_delivered: frozenset[str] = frozenset()
    society: frozenset[int] | None = None
    marketability: Mapping[str, float] = field(default_factory=dict)
    credibility: Mapping[int, float] | CredibilityBook = field(default_factory=dict)
    invoice_parties: Mapping[InstrumentClass, frozenset[int]] = field(default_factory=dict)


class Acceptance(NamedTuple):
    accepted: bool
    reason: str

    def __bool__(self) -> bool:
        return self.accepted


def _credibility(ctx: RegimeContext, issuer: int) -> float:
    cred = ctx.credibility
    if isinstance(cred, CredibilityBook):
        return cred.score(issuer)
    return cred.get(issuer, 0.5)


def accept_decision(agent, cls: InstrumentClass | None, ctx: RegimeContext) -> Acceptance:
    """Would ``agent`` take units of ``cls`` as payment under ``ctx``?

    Pure: reads only the agent's id and acceptance threshold, the class and
    the context.
    """
    if cls is None:
        raise UnknownClassError(cls)
    kind = cls.kind
    if cls.issuer is not None and cls.issuer == agent.id:
        return Acceptance(True, "OwnIssue")
    if kind is InstrumentKind.PSI:
        if ctx.society is not None and agent.id not in ctx.society:
            return Acceptance(False, "NotMember")
        if cls.backing not in ctx.psi_requested:
            return Acceptance(False, "NotRequested")
        if cls.backing not in ctx.psi_delivered:
            return Acceptance(False, "NotDelivered")
        return Acceptance(True, "ContractObligation")
    if kind in (InstrumentKind.FIAT_NOTE, InstrumentKind.FIAT_CREDIT):
        if ctx.regime == "Fiat" and ctx.legal_tender:
            return Acceptance(True, "LegalTender")
        if cls.issuer is not None and _credibility(ctx, cls.issuer) >= agent.acceptance_threshold:
            return Acceptance(True, "Credible")
        return Acceptance(False, "NotLegalTender")
    if kind is InstrumentKind.IOU:
        if _credibility(ctx, cls.issuer) >= agent.acceptance_threshold:
            return Acceptance(True, "Credible")
        return Acceptance(False, "LowCredibility")
    if kind is InstrumentKind.COMMODITY_MONEY:
        if ctx.marketability.get(cls.backing, 0.0) >= agent.acceptance_threshold:
            return Acceptance(True, "Marketable")
        return Acceptance(False, "NotMarketable")
    # bilateral invoices bind only the receiver of the invoiced good
    if agent.id in ctx.invoice_parties.get(cls, frozenset()):
        return Acceptance(True, "ContractObligation")
    return Acceptance(False, "NotCurrency")


def accepts_good_as_money(agent, good: str, ctx: RegimeContext) -> Acceptance:
    """Commodity-money acceptance for a good offered in kind rather than as ledger units."""
    return accept_decision(agent, InstrumentClass(InstrumentKind.COMMODITY_MONEY, None, good), ctx)


# -- the exchange desk ------------------------------------------------------------

class ExchangeDesk:
    """Settles exchanges between agents against a ledger and an inventory table.

    ``inventory[agent][good]`` must be mutable and hold float quantities;
    ``agents[i]`` supplies ``id`` and ``acceptance_threshold``.
    """

    def __init__(self, ledger: Ledger, inventory, agents: Sequence, goods: Sequence[str],
                 credibility: CredibilityBook | None = None):
        self.ledger = ledger
        self.inventory = inventory
        self.agents = agents
        self.goods = list(goods)
        self.credibility = credibility if credibility is not None else CredibilityBook()
        self.contracts: list[ExchangeContract] = []
        self._open: dict[int, deque[ExchangeContract]] = {}
        self.completed_spot = 0
        self._iou_classes: dict[int, InstrumentClass] = {}

    def _move_goods(self, src: int, dst: int, good: int, qty: float) -> None:
        if qty <= 0:
            return
        have = self.inventory[src][good]
        if have < qty - 1e-12:
            raise GoodsUnavailableError(f"agent {src} holds {have:.4g} of good {good}, needs {qty:.4g}")
        self.inventory[src][good] = max(0.0, have - qty)
        self.inventory[dst][good] += qty

    def _new_contract(self, **kw) -> ExchangeContract:
        c = ExchangeContract(contract_id=len(self.contracts), **kw)
        self.contracts.append(c)
        return c

    def open_contracts(self, class_id: int | None = None) -> list[ExchangeContract]:
        if class_id is None:
            return [c for q in self._open.values() for c in q]
        return list(self._open.get(class_id, ()))

    def iou_class(self, issuer: int) -> InstrumentClass:
        cls = self._iou_classes.get(issuer)
        if cls is None:
            cls = self._iou_classes[issuer] = InstrumentClass(InstrumentKind.IOU, issuer, f"iou:{issuer}")
        return cls

    def invoice_class(self, issuer: int) -> InstrumentClass:
        return InstrumentClass(InstrumentKind.INVOICE, issuer, f"invoice:{issuer}")

    def settle_first_half(
        self,
        provider: int,
        receiver: int,
        good: int,
        qty: float,
        medium: Medium,
        *,
        ctx: RegimeContext,
        tick: int = 0,
        units: int = 0,
        counter_good: int | None = None,
        counter_qty: float = 0.0,
        payment_class: int | None = None,
    ) -> ExchangeContract:
        """Deliver ``qty`` of ``good`` from provider to receiver and record the contract.

        Barter needs ``counter_good``/``counter_qty``; a money settlement takes
        either a commodity counter-delivery or ``payment_class`` + ``units``.
        IOU and invoice settlements leave the contract open with ``units``
        claim units outstanding.
        """
        if self.inventory[provider][good] < qty - 1e-12:
            raise GoodsUnavailableError(f"provider {provider} lacks good {good}")
        if medium is Medium.BARTER or (medium is Medium.MONEY and payment_class is None):
            if counter_good is None or self.inventory[receiver][counter_good] < counter_qty - 1e-12:
                raise GoodsUnavailableError(f"receiver {receiver} lacks the counter-delivery")
            if medium is Medium.MONEY:
                ok = accepts_good_as_money(self.agents[provider], self.goods[counter_good], ctx)
                if not ok:
                    raise MediumRejectedError(ok.reason)
            self._move_goods(provider, receiver, good, qty)
            self._move_goods(receiver, provider, counter_good, counter_qty)
            self.completed_spot += 1
            return self._new_contract(
                first_provider=provider, first_receiver=receiver, good=good, quantity=qty,
                medium=medium, open_tick=tick, state=ContractState.COMPLETED, close_tick=tick,
            )
        if units <= 0:
            from .errors import ZeroAmountError
            raise ZeroAmountError("claim settlement needs a positive unit count")
        if medium is Medium.MONEY:
            cls = self.ledger.get_class(payment_class)
            ok = accept_decision(self.agents[provider], cls, ctx)
            if not ok:
                raise MediumRejectedError(ok.reason)
            self._move_goods(provider, receiver, good, qty)
            self.ledger.transfer(receiver, provider, payment_class, units)
            self.completed_spot += 1
            return self._new_contract(
                first_provider=provider, first_receiver=receiver, good=good, quantity=qty,
                medium=medium, open_tick=tick, class_id=payment_class, units=units,
                redeemed=units, state=ContractState.COMPLETED, close_tick=tick,
            )
        if medium is Medium.IOU:
            cls = self.iou_class(receiver)
            ok = accept_decision(self.agents[provider], cls, ctx)
            if not ok:
                raise MediumRejectedError(ok.reason)
            self._move_goods(provider, receiver, good, qty)
            cid = self.ledger.define_class(cls)
            held = self.ledger.balance(receiver, cid)
            reuse = min(held, units)
            if reuse:
                self.ledger.transfer(receiver, provider, cid, reuse)
            if units - reuse:
                self.ledger.issue(cls, provider, units - reuse)
        else:
            # the receiver is bound by the contract to accept the provider's invoice
            cls = self.invoice_class(provider)
            self._move_goods(provider, receiver, good, qty)
            cid = self.ledger.issue(cls, receiver, units)
        contract = self._new_contract(
            first_provider=provider, first_receiver=receiver, good=good, quantity=qty,
            medium=medium, open_tick=tick, class_id=cid, units=units,
        )
        self._open.setdefault(cid, deque()).append(contract)
        return contract

    def complete_exchange(self, contract: ExchangeContract, bearer: int, redemption_good: int,
                          redemption_qty: float, *, tick: int = 0) -> ExchangeContract:
        """Honour an open contract: counter-deliver goods and destroy its claim units.

        For an IOU the issuer delivers to the bearer; for an invoice the bearer
        (the original receiver) delivers to the issuer.
        """
        if contract.state is ContractState.COMPLETED:
            if contract.medium in (Medium.BARTER, Medium.MONEY):
                raise NotOpenError(contract.contract_id)
            raise DoubleCompletionError(contract.contract_id)
        cid = contract.class_id
        cls = self.ledger.get_class(cid)
        remaining = contract.remaining
        if bearer == cls.issuer or self.ledger.balance(bearer, cid) < remaining:
            raise WrongBearerError(f"agent {bearer} does not bear contract {contract.contract_id}")
        if contract.medium is Medium.IOU:
            self._move_goods(cls.issuer, bearer, redemption_good, redemption_qty)
        else:
            self._move_goods(bearer, cls.issuer, redemption_good, redemption_qty)
        self.ledger.redeem_destroy(bearer, cid, remaining, presented_to=cls.issuer)
        if contract.medium is Medium.IOU:
            self.credibility.record(cls.issuer, True)
        q = self._open.get(cid)
        if q is not None and contract in q:
            q.remove(contract)
        contract.redeemed = contract.units
        contract.state = ContractState.COMPLETED
        contract.close_tick = tick
        return contract

    def attribute_redemption(self, class_id: int, units: int, tick: int) -> list[ExchangeContract]:
        """Apply ``units`` already destroyed on the ledger to open contracts, oldest first."""
        closed = []
        q = self._open.get(class_id)
        while units > 0 and q:
            c = q[0]
            take = min(units, c.remaining)
            c.redeemed += take
            units -= take
            if c.remaining == 0:
                c.state = ContractState.COMPLETED
                c.close_tick = tick
                q.popleft()
                closed.append(c)
        return closed

    def open_units(self, class_id: int) -> int:
        return sum(c.remaining for c in self._open.get(class_id, ()))
