"""Actor state, subjective valuation, the action rule and spending preference."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import UnknownGoodError
from .instruments import InstrumentClass, InstrumentKind


class Role(Enum):
    HOUSEHOLD = "Household"
    FIRM = "Firm"
    BANK = "Bank"
    CENTRAL_BANK = "CentralBank"
    GOVERNMENT = "Government"
    PUBLIC_PROVIDER = "PublicProvider"

    @property
    def produces(self) -> bool:
        return self in (Role.HOUSEHOLD, Role.FIRM)

    @property
    def institutional(self) -> bool:
        return self in (Role.BANK, Role.CENTRAL_BANK, Role.GOVERNMENT)


@dataclass
class Agent:
    id: int
    role: Role
    specialty: int  # index into the goods catalog, -1 for agents that produce nothing
    noise: np.ndarray  # per-good multiplicative valuation factor
    time_preference: float = 1.0
    acceptance_threshold: float = 0.5
    public_valuation: float = 1.0
    inventory: dict[int, float] = field(default_factory=dict)
    liabilities: list[Any] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not 0.0 < self.time_preference <= 1.0:
            raise ValueError(f"time preference must lie in (0, 1], got {self.time_preference}")
        if not 0.0 <= self.acceptance_threshold <= 1.0:
            raise ValueError(f"acceptance threshold must lie in [0, 1], got {self.acceptance_threshold}")
        if any(q < 0 for q in self.inventory.values()):
            raise ValueError("inventory quantities must be non-negative")


class ObjectiveValues:
    """Latent exchange-ratio values of each good, in numeraire units.

    Only metrics and the noise composition in :func:`subjective_value` read
    this table; decision code sees valuations, never the table itself.
    """

    def __init__(self, base: Sequence[float], schedule: Mapping[int, Sequence[float]] | None = None):
        base = np.asarray(base, dtype=float)
        if np.any(base <= 0):
            raise ValueError("objective values must be strictly positive")
        self._base = base
        self._schedule = {int(t): np.asarray(v, dtype=float) for t, v in (schedule or {}).items()}
        for v in self._schedule.values():
            if v.shape != base.shape or np.any(v <= 0):
                raise ValueError("scheduled objective values must match the catalog and be positive")
        self._ticks = sorted(self._schedule)

    def __len__(self) -> int:
        return len(self._base)

    def at(self, tick: int) -> np.ndarray:
        """Values in force at ``tick`` (the latest scheduled change at or before it)."""
        current = self._base
        for t in self._ticks:
            if t > tick:
                break
            current = self._schedule[t]
        return current


def draw_noise(rng: np.random.Generator, n_agents: int, n_goods: int, sigma: float) -> np.ndarray:
    """Per-agent, per-good lognormal valuation factors with median 1."""
    if sigma == 0:
        return np.ones((n_agents, n_goods))
    return rng.lognormal(mean=0.0, sigma=sigma, size=(n_agents, n_goods))


def subjective_value(agent: Agent, bundle: Mapping[int, float], tick: int, objective: ObjectiveValues) -> float:
    """Sum of quantity x objective value x the agent's noise factor over ``bundle``."""
    obj = objective.at(tick)
    total = 0.0
    for good, qty in bundle.items():
        if not 0 <= good < len(obj):
            raise UnknownGoodError(good)
        total += qty * obj[good] * agent.noise[good]
    return float(total)


def valuation_vector(agent: Agent, tick: int, objective: ObjectiveValues) -> list[float]:
    """Unit subjective value of every good; the only valuation decision code consumes."""
    return [subjective_value(agent, {g: 1.0}, tick, objective) for g in range(len(objective))]


def equity(agent: Agent, objective: ObjectiveValues, tick: int, holdings_value: float = 0.0,
           liability_cost: float | None = None) -> float:
    """Subjective value of inventory plus instrument holdings, minus liabilities.

    ``holdings_value`` is the agent's instrument holdings already valued at
    posted prices. ``liability_cost`` defaults to the sum of ``agent.liabilities``
    when those are plain numbers.
    """
    assets = subjective_value(agent, agent.inventory, tick, objective) + holdings_value
    if liability_cost is None:
        liability_cost = float(sum(x for x in agent.liabilities if isinstance(x, (int, float))))
    return assets - liability_cost


@dataclass(frozen=True)
class Action:
    name: str
    interest: float  # projected equity gain
    cost: float  # subjective cost of the state change
    payload: Any = None

    @property
    def margin(self) -> float:
        return self.interest - self.cost


def decide_action(agent: Agent | None, candidates: Iterable[Action]) -> Action | None:
    """Pick the candidate with the largest margin among those whose interest strictly exceeds cost."""
    best = None
    for a in candidates:
        if a.interest > a.cost and (best is None or a.margin > best.margin):
            best = a
    return best


def spending_rank(kind: InstrumentKind, fiat_taxed: bool) -> int:
    if kind in (InstrumentKind.PSI, InstrumentKind.INVOICE):
        return 0
    if kind in (InstrumentKind.FIAT_NOTE, InstrumentKind.FIAT_CREDIT) and fiat_taxed:
        return 1
    if kind is InstrumentKind.IOU:
        return 2
    return 3


def spending_order(agent: Agent | None, options: Sequence[InstrumentClass], ctx) -> list[InstrumentClass]:
    """Order payment options: invoices first, then IOUs, then money.

    Under a fiat regime that collects taxes, the tax currency moves ahead of
    every other non-invoice class. The sort is stable, so equally ranked
    options keep their input order.
    """
    fiat_taxed = getattr(ctx, "regime", None) == "Fiat" and getattr(ctx, "tax_currency", False)
    return sorted(options, key=lambda c: spending_rank(c.kind, fiat_taxed))
