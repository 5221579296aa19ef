"""Institutional rule sets: fiat with fractional reserves and taxation, and the PSI system."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

from .agents import Action, decide_action
from .errors import (
    AlreadyDeliveredError,
    DuplicateSpecError,
    InsufficientBalanceError,
    NoServiceDemandError,
    NotRequestedError,
    ReserveLimitExceededError,
    UnknownBorrowerError,
    VoteFailedError,
)
from .instruments import InstrumentClass, InstrumentKind, Ledger, LedgerEvent

log = logging.getLogger(__name__)


# -- fiat ---------------------------------------------------------------------

@dataclass
class Loan:
    borrower: int
    principal: int
    rate: float
    start_tick: int
    term: int | None = None  # None: interest-only, principal never falls due
    remaining: int = -1
    interest_carry: float = 0.0
    principal_carry: float = 0.0
    arrears: int = 0

    def __post_init__(self) -> None:
        if self.remaining < 0:
            self.remaining = self.principal


@dataclass
class FiatRegime:
    bank: int
    central_bank: int
    government: int
    policy_rate: float = 0.001
    reserve_ratio_max: float = 10.0
    tax_rate: float = 0.0
    legal_tender: bool = True
    access_order: list[int] = field(default_factory=list)
    loans: list[Loan] = field(default_factory=list)
    tax_carry: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.tax_rate < 1.0:
            raise ValueError(f"tax rate must lie in [0, 1), got {self.tax_rate}")
        if self.reserve_ratio_max < 1.0:
            raise ValueError(f"reserve ratio must be at least 1, got {self.reserve_ratio_max}")
        if self.policy_rate < 0:
            raise ValueError("policy rate must be non-negative")

    def note_class(self) -> InstrumentClass:
        return InstrumentClass(InstrumentKind.FIAT_NOTE, self.central_bank, "fiat-note")

    def credit_class(self) -> InstrumentClass:
        return InstrumentClass(InstrumentKind.FIAT_CREDIT, self.bank, "fiat-credit")


def fiat_reserves(regime: FiatRegime, ledger: Ledger) -> int:
    cid = ledger.find_class(regime.note_class())
    return 0 if cid is None else ledger.balance(regime.bank, cid)


def fiat_credit_outstanding(regime: FiatRegime, ledger: Ledger) -> int:
    cid = ledger.find_class(regime.credit_class())
    return 0 if cid is None else ledger.outstanding(cid)


def fiat_headroom(regime: FiatRegime, ledger: Ledger) -> int:
    return math.floor(fiat_reserves(regime, ledger) * regime.reserve_ratio_max) - fiat_credit_outstanding(regime, ledger)


def fiat_supply_reserves(regime: FiatRegime, ledger: Ledger, amount: int) -> None:
    """Central bank creates ``amount`` notes straight into the bank's reserves."""
    if amount > 0:
        ledger.issue(regime.note_class(), regime.bank, amount)


def fiat_expand_credit(regime: FiatRegime, ledger: Ledger, borrower: int, amount: int, *,
                       tick: int = 0, term: int | None = None) -> tuple[Loan, int]:
    """Lend ``amount`` freshly created credit units to ``borrower``.

    The bank's credit outstanding after the loan may not exceed its note
    reserves times the reserve-ratio cap.
    """
    if not ledger.has_agent(borrower) or borrower in (regime.bank, regime.central_bank):
        raise UnknownBorrowerError(borrower)
    if amount > fiat_headroom(regime, ledger):
        raise ReserveLimitExceededError(
            f"credit {fiat_credit_outstanding(regime, ledger)} + {amount} exceeds "
            f"{fiat_reserves(regime, ledger)} x {regime.reserve_ratio_max}"
        )
    cls = regime.credit_class()
    assert cls.kind is InstrumentKind.FIAT_CREDIT  # lending never touches PSI units
    cid = ledger.issue(cls, borrower, amount)
    loan = Loan(borrower, amount, regime.policy_rate, tick, term)
    regime.loans.append(loan)
    return loan, cid


def fiat_inject(regime: FiatRegime, ledger: Ledger, total: int, *, tick: int, term: int | None,
                width: int) -> list[tuple[int, int]]:
    """Distribute ``total`` new credit across the first ``width`` agents of the access order.

    Shares fall linearly with rank so earlier access receives more. Reserves
    are topped up by the central bank whenever the ratio cap would bind.
    """
    ranked = regime.access_order[:max(1, width)]
    if total <= 0 or not ranked:
        return []
    n = len(ranked)
    weights = [n - i for i in range(n)]
    wsum = sum(weights)
    shares = [total * w // wsum for w in weights]
    shares[0] += total - sum(shares)
    need = fiat_credit_outstanding(regime, ledger) + total
    gap = math.ceil(need / regime.reserve_ratio_max) - fiat_reserves(regime, ledger)
    fiat_supply_reserves(regime, ledger, gap)
    out = []
    for agent, amt in zip(ranked, shares):
        if amt > 0:
            fiat_expand_credit(regime, ledger, agent, amt, tick=tick, term=term)
            out.append((agent, amt))
    return out


def fiat_pay_from(ledger: Ledger, payer: int, payee: int, amount: int, class_ids: Sequence[int]) -> int:
    """Move up to ``amount`` units from ``payer`` to ``payee`` across ``class_ids``; returns units moved."""
    moved = 0
    for cid in class_ids:
        if moved >= amount:
            break
        have = ledger.balance(payer, cid)
        take = min(have, amount - moved)
        if take > 0:
            ledger.transfer(payer, payee, cid, take)
            moved += take
    return moved


def fiat_service_loans(regime: FiatRegime, ledger: Ledger, tick: int) -> tuple[int, int]:
    """Collect one tick of interest and scheduled principal on every live loan.

    Interest goes to the bank; principal paid in credit units is destroyed at
    the bank, principal paid in notes joins its reserves. Returns
    ``(interest_paid, principal_paid)``.
    """
    credit = ledger.find_class(regime.credit_class())
    note = ledger.find_class(regime.note_class())
    classes = [c for c in (credit, note) if c is not None]
    interest_paid = principal_paid = 0
    live = []
    for loan in regime.loans:
        loan.interest_carry += loan.rate * loan.remaining
        due = int(loan.interest_carry) + loan.arrears
        if due:
            got = fiat_pay_from(ledger, loan.borrower, regime.bank, due, classes)
            interest_paid += got
            loan.interest_carry -= int(loan.interest_carry)
            loan.arrears = due - got
        if loan.term:
            loan.principal_carry += loan.principal / loan.term
            want = min(int(loan.principal_carry), loan.remaining)
            if want:
                paid = 0
                if credit is not None:
                    take = min(ledger.balance(loan.borrower, credit), want)
                    if take:
                        ledger.redeem_destroy(loan.borrower, credit, take, presented_to=regime.bank)
                        paid += take
                if paid < want and note is not None:
                    paid += fiat_pay_from(ledger, loan.borrower, regime.bank, want - paid, [note])
                loan.principal_carry -= paid
                loan.remaining -= paid
                principal_paid += paid
        if loan.remaining > 0:
            live.append(loan)
    regime.loans = live
    return interest_paid, principal_paid


def fiat_collect_taxes(trade_value: float, regime: FiatRegime, *, ledger: Ledger | None = None,
                       payer: int | None = None, class_id: int | None = None,
                       convert: Callable[[int, float], int | None] | None = None) -> float:
    """Tax on one trade, in value units.

    With only ``trade_value`` and ``regime`` this is the pure arithmetic. Given a
    ledger and payer, whole units move to the government and fractions carry
    over per payer. ``class_id=None`` marks a trade not settled in fiat: the
    ``convert`` callback must first sell goods worth the tax for fiat at posted
    prices and return the fiat class it was paid in.
    """
    tax = regime.tax_rate * trade_value
    if ledger is None or payer is None or tax <= 0:
        return tax
    if class_id is None:
        if convert is None:
            return tax
        class_id = convert(payer, tax)
        if class_id is None:
            return tax
    carry = regime.tax_carry.get(payer, 0.0) + tax
    units = int(carry)
    if units:
        units = min(units, ledger.balance(payer, class_id))
        if units:
            ledger.transfer(payer, regime.government, class_id, units)
    regime.tax_carry[payer] = carry - units
    return tax


# -- PSI ----------------------------------------------------------------------

class ProjectStatus(Enum):
    REQUESTED = "Requested"
    DELIVERED = "Delivered"


@dataclass
class ProjectEntry:
    spec: str
    agreed_value: int
    yes: int
    no: int
    provider: int | None = None
    status: ProjectStatus = ProjectStatus.REQUESTED
    class_id: int | None = None
    requested_tick: int = 0
    delivered_tick: int | None = None

    def __post_init__(self) -> None:
        if self.agreed_value <= 0:
            raise ValueError("agreed value must be positive")


@dataclass
class PsiRegime:
    government: int
    vote_threshold: float = 0.5
    service_demand_rate: float = 0.02
    service_price: int = 2
    delegate_collection: bool = False
    registry: dict[str, ProjectEntry] = field(default_factory=dict)
    pending_demand: set[int] = field(default_factory=set)

    def __post_init__(self) -> None:
        if not 0.0 <= self.vote_threshold <= 1.0:
            raise ValueError("vote threshold must lie in [0, 1]")
        if not 0.0 <= self.service_demand_rate <= 1.0:
            raise ValueError("service demand rate must lie in [0, 1]")

    def requested(self) -> frozenset[str]:
        return frozenset(self.registry)

    def delivered(self) -> frozenset[str]:
        return frozenset(s for s, e in self.registry.items() if e.status is ProjectStatus.DELIVERED)

    def psi_class_ids(self) -> list[int]:
        return [e.class_id for e in self.registry.values() if e.class_id is not None]


def psi_class(provider: int, spec: str) -> InstrumentClass:
    return InstrumentClass(InstrumentKind.PSI, provider, spec)


def project_vote(agent, agreed_value: float, society_size: int, benefit: float, satiation: float) -> bool:
    """One ballot: the agent's valuation of its share of the project against its cost share.

    ``satiation`` in [0, 1] scales the benefit down as public provision
    approaches what the society wants.
    """
    share = agreed_value / max(1, society_size)
    interest = agent.public_valuation * benefit * satiation * share
    return decide_action(agent, [Action("approve", interest, share)]) is not None


def psi_request_project(regime: PsiRegime, society: Sequence[int], spec: str, agreed_value: int,
                        votes: Sequence[bool] | Mapping[int, bool], *, provider: int | None = None,
                        tick: int = 0) -> ProjectEntry:
    if spec in regime.registry:
        raise DuplicateSpecError(spec)
    ballots = list(votes.values()) if isinstance(votes, Mapping) else list(votes)
    yes = sum(1 for v in ballots if v)
    if yes < regime.vote_threshold * len(society) or yes == 0:
        raise VoteFailedError(f"{spec}: {yes} of {len(society)} in favour")
    entry = ProjectEntry(spec, int(agreed_value), yes, len(ballots) - yes, provider, requested_tick=tick)
    regime.registry[spec] = entry
    return entry


def psi_deliver_project(regime: PsiRegime, ledger: Ledger, provider: int, spec: str, *, tick: int = 0) -> int:
    """Confirm delivery of ``spec`` by ``provider`` and only then issue its PSI units."""
    entry = regime.registry.get(spec)
    if entry is None or (entry.provider is not None and entry.provider != provider):
        raise NotRequestedError(spec)
    if entry.status is ProjectStatus.DELIVERED:
        raise AlreadyDeliveredError(spec)
    cls = psi_class(provider, spec)
    entry.status = ProjectStatus.DELIVERED
    entry.provider = provider
    entry.delivered_tick = tick
    ledger.open_psi_gate(cls)
    cid = ledger.issue(cls, provider, entry.agreed_value)
    entry.class_id = cid
    if regime.delegate_collection:
        ledger.add_delegate(cid, regime.government)
    log.debug("delivered %s by %d: %d PSI units", spec, provider, entry.agreed_value)
    return cid


def psi_pay_suppliers(ledger: Ledger, provider: int, class_id: int, suppliers: Sequence[int],
                      amount: int) -> dict[int, int]:
    """Provider spends ``amount`` PSI units across ``suppliers`` in equal shares.

    The remainder of the integer split goes one unit each to the first
    suppliers in the given order. Returns the units paid per supplier.
    """
    others = [a for a in suppliers if a != provider]
    if not others or amount <= 0:
        return {}
    base, extra = divmod(amount, len(others))
    paid = {}
    for k, a in enumerate(others):
        units = base + (1 if k < extra else 0)
        if units:
            ledger.transfer(provider, a, class_id, units)
            paid[a] = units
    return paid


def psi_collector(regime: PsiRegime, ledger: Ledger, class_id: int) -> int:
    return regime.government if regime.delegate_collection else ledger.get_class(class_id).issuer


def psi_pay_government_service(regime: PsiRegime, ledger: Ledger, agent: int, class_id: int,
                               amount: int, *, keep_demand: bool = False) -> LedgerEvent:
    """Pay for a demanded public service by returning PSI units for destruction."""
    if agent not in regime.pending_demand:
        raise NoServiceDemandError(agent)
    have = ledger.balance(agent, class_id)
    if have < amount:
        raise InsufficientBalanceError(f"agent {agent} holds {have} PSI of class {class_id}, needs {amount}")
    ev = ledger.redeem_destroy(agent, class_id, amount, presented_to=psi_collector(regime, ledger, class_id))
    if not keep_demand:
        regime.pending_demand.discard(agent)
    return ev


def psi_settle_demand(regime: PsiRegime, ledger: Ledger, agent: int, class_ids: list[int] | None = None) -> int:
    """Pay the service price out of the agent's PSI holdings, oldest project first.

    Nothing is paid unless the agent's total PSI covers the full price; the
    demand then stays pending. Returns the units destroyed. ``class_ids`` may
    pass in a current ``regime.psi_class_ids()`` when settling many agents.
    """
    if agent not in regime.pending_demand:
        raise NoServiceDemandError(agent)
    price = regime.service_price
    held = ledger.holdings(agent)
    if class_ids is None:
        class_ids = regime.psi_class_ids()
    classes = [c for c in class_ids if held.get(c, 0) > 0]
    if sum(held[c] for c in classes) < price:
        return 0
    paid = 0
    for cid in classes:
        take = min(held.get(cid, 0), price - paid)
        if take:
            psi_pay_government_service(regime, ledger, agent, cid, take, keep_demand=True)
            paid += take
        if paid == price:
            break
    regime.pending_demand.discard(agent)
    return paid
