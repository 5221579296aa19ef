"""The world state and its deterministic tick pipeline.

Each call to :func:`step` advances one tick through seven phases: production,
regime events, pairwise meetings, consumption, price update, marketability
update and the metrics snapshot. All randomness comes from one numpy
generator seeded by the scenario, drawn in a fixed order.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from itertools import chain
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import metrics as mx
from .agents import Agent, ObjectiveValues, Role, draw_noise, spending_rank, valuation_vector
from .errors import InvalidConfigError, SimulationError, VoteFailedError
from .exchange import (
    CredibilityBook,
    MarketabilityTable,
    Medium,
    RegimeContext,
    TradeOutcome,
    marketability_update,
)
from .exchange import ExchangeDesk
from .instruments import GROUPS, InstrumentKind, Ledger
from .regimes import (
    FiatRegime,
    ProjectStatus,
    PsiRegime,
    fiat_collect_taxes,
    fiat_credit_outstanding,
    fiat_inject,
    fiat_service_loans,
    project_vote,
    psi_deliver_project,
    psi_pay_suppliers,
    psi_request_project,
    psi_settle_demand,
)
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)

EPS = 1e-9
_PSI = InstrumentKind.PSI
_IOU = InstrumentKind.IOU
_FIAT = (InstrumentKind.FIAT_NOTE, InstrumentKind.FIAT_CREDIT)
_COMMODITY = InstrumentKind.COMMODITY_MONEY

MAIN_GROUP = {"Psi": "psi", "Fiat": "fiat", "BarterOnly": "commodity"}
PRICE_GROUPS = {"Psi": ("psi", "iou"), "Fiat": ("fiat", "iou"), "BarterOnly": ("commodity",)}

BOOM_BASELINE = 400
BOOM_K = 1.0
BOOM_WINDOW = 200
BOOM_MIN_RUN = 5


@dataclass
class Good:
    name: str
    durable: bool
    production_cost: float
    base_utility: float
    salability: float


@dataclass
class TickFlows:
    produced: np.ndarray
    consumed: np.ndarray
    expired: np.ndarray
    used: np.ndarray


@dataclass
class World:
    cfg: ScenarioConfig
    rng: np.random.Generator
    goods: list[Good]
    objective: ObjectiveValues
    agents: list[Agent]
    ledger: Ledger
    desk: ExchangeDesk
    marketability: MarketabilityTable
    prices: dict[str, list[float]]
    fiat: FiatRegime | None = None
    psi: PsiRegime | None = None
    tick: int = 0
    propensity: float = 0.0
    perceived_ratio: float = 1.0
    m_ref: float = 0.0
    s_ref: float = 0.0
    rows: list[tuple] = field(default_factory=list)
    columns: list[str] = field(default_factory=list)
    frame: mx.MetricsFrame | None = None
    flows: TickFlows | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    # -- derived lookups filled by build_world ----------------------------------
    def __post_init__(self) -> None:
        self.n = len(self.agents)
        self.n_goods = len(self.goods)
        self.regime = self.cfg.regime
        self.spec = [a.specialty for a in self.agents]
        self.roles = [a.role for a in self.agents]
        self.thr = [a.acceptance_threshold for a in self.agents]
        self.val: list[list[float]] = [valuation_vector(a, 0, self.objective) for a in self.agents]
        self.reserve = [
            [g.production_cost * float(a.noise[j]) for j, g in enumerate(self.goods)] for a in self.agents
        ]
        self.inv: list[list[float]] = [[0.0] * self.n_goods for _ in self.agents]
        self.producers = [a.id for a in self.agents if a.role.produces]
        self.producer_idx = np.asarray(self.producers, dtype=np.int64)
        self.providers = [a.id for a in self.agents if a.role is Role.PUBLIC_PROVIDER]
        self.members = sorted(self.producers + self.providers)
        self.active = [a.id for a in self.agents if a.role is not Role.CENTRAL_BANK]
        self.durable = np.array([g.durable for g in self.goods], dtype=bool)
        self.credibility = self.desk.credibility
        self.cred = [0.5] * self.n
        self.iou_cid: dict[int, int] = {}
        self.ckind: list[InstrumentKind] = []
        self.cissuer: list[int] = []
        self.crank: list[int] = []
        self.cgroup: list[str] = []
        self.cbacking: list[str] = []
        self.cgroup_idx: list[int] = []
        self.cden: list[int] = []
        self.fiat_taxed = self.regime == "Fiat" and self.cfg.fiat.tax_rate > 0
        self.legal_tender = self.regime == "Fiat" and self.cfg.fiat.legal_tender
        self.input_value: dict[int, float] = {}
        self.stats = {g: ([0.0] * self.n_goods, [0.0] * self.n_goods) for g in self.prices}
        self.outcomes: list[TradeOutcome] = []
        self.trades = 0
        self.used = [0.0] * self.n_goods
        self.prev_psi: np.ndarray | None = None
        self.base_prices = {g: list(p) for g, p in self.prices.items()}
        counts = np.zeros(self.n_goods)
        for i in self.producers:
            if self.spec[i] >= 0:
                counts[self.spec[i]] += 1
        self.basket = counts if counts.sum() > 0 else np.ones(self.n_goods)
        self._ctx: RegimeContext | None = None
        self._project_seq = 0
        self._next_provider = 0

    # -- class caches ------------------------------------------------------------
    def sync_classes(self) -> None:
        classes = self.ledger.classes
        for cid in range(len(self.ckind), len(classes)):
            cls = classes[cid]
            self.ckind.append(cls.kind)
            self.cissuer.append(-1 if cls.issuer is None else cls.issuer)
            self.crank.append(spending_rank(cls.kind, self.fiat_taxed))
            self.cgroup.append(cls.kind.group)
            self.cbacking.append(cls.backing)
            self.cgroup_idx.append(GROUPS.index(cls.kind.group))
            self.cden.append(cls.denomination)
            if cls.kind is _IOU:
                self.iou_cid[cls.issuer] = cid

    def inventory_row(self, agent: int) -> list[float]:
        return list(self.inv[agent])

    def context(self) -> RegimeContext:
        """Regime context for the slow, fully general acceptance path."""
        if self._ctx is None:
            self._ctx = RegimeContext(
                regime=self.regime,
                legal_tender=self.legal_tender,
                tax_currency=self.fiat_taxed,
                psi_requested=self.psi.requested() if self.psi else frozenset(),
                psi_delivered=self.psi.delivered() if self.psi else frozenset(),
                society=None,
                marketability=self.marketability.scores,
                credibility=self.credibility,
            )
        return self._ctx

    def record_credibility(self, issuer: int, honored: bool) -> None:
        self.credibility.record(issuer, honored)
        self.cred[issuer] = self.credibility.score(issuer)

    def accepts(self, agent: int, cid: int) -> bool:
        """Fast equivalent of ``accept_decision`` for classes already on the ledger."""
        kind = self.ckind[cid]
        issuer = self.cissuer[cid]
        if issuer == agent:
            return True
        if kind is _PSI:
            # PSI units exist only for requested and delivered services
            return True
        if kind is _IOU:
            return self.cred[issuer] >= self.thr[agent]
        if kind in _FIAT:
            return self.legal_tender or self.cred[issuer] >= self.thr[agent]
        if kind is _COMMODITY:
            return self.marketability.get(self.cbacking[cid]) >= self.thr[agent]
        return False


def _inventory_array(world: World) -> np.ndarray:
    """Agent-by-good inventory as a fresh float array."""
    n, k = world.n, world.n_goods
    return np.fromiter(chain.from_iterable(world.inv), dtype=float, count=n * k).reshape(n, k)


# -- construction --------------------------------------------------------------------

def _initial_prices(cfg: ScenarioConfig) -> list[float]:
    if cfg.trade.initial_prices is not None:
        return list(cfg.trade.initial_prices)
    return [(g.production_cost + g.base_utility) / 2 for g in cfg.goods]


def build_world(cfg: ScenarioConfig) -> World:
    """Create the initial world (tick 0) for a validated configuration."""
    rng = np.random.default_rng(cfg.seed)
    goods = [Good(g.name, g.durable, g.production_cost, g.base_utility, g.salability) for g in cfg.goods]
    n_goods = len(goods)
    objective = ObjectiveValues([g.base_utility for g in goods])

    roles: list[Role] = []
    n_firms = int(round(cfg.agents.count * cfg.agents.firm_share))
    roles += [Role.HOUSEHOLD] * (cfg.agents.count - n_firms) + [Role.FIRM] * n_firms
    if cfg.regime == "Psi":
        roles += [Role.PUBLIC_PROVIDER] * cfg.agents.providers
        if cfg.psi.delegate_collection:
            roles.append(Role.GOVERNMENT)
    elif cfg.regime == "Fiat":
        roles += [Role.GOVERNMENT, Role.BANK, Role.CENTRAL_BANK]
    n = len(roles)

    noise = draw_noise(rng, n, n_goods, cfg.noise_sigma)
    spread = cfg.agents.public_valuation_spread
    pv = rng.uniform(1 - spread, 1 + spread, size=n) if spread > 0 else np.ones(n)
    thr = np.full(n, cfg.agents.acceptance_threshold)
    if cfg.agents.threshold_spread > 0 and n:
        ts = cfg.agents.threshold_spread
        thr = np.clip(rng.uniform(thr - ts, thr + ts), 0.0, 1.0)
    agents = []
    for i, role in enumerate(roles):
        agents.append(Agent(
            id=i,
            role=role,
            specialty=(i % n_goods) if role.produces else -1,
            noise=noise[i],
            acceptance_threshold=float(thr[i]),
            public_valuation=float(pv[i]),
        ))
    ledger = Ledger(range(n), [g.name for g in goods])
    credibility = CredibilityBook()
    market = MarketabilityTable({g.name: g.salability for g in goods}, rate=cfg.marketability.rate,
                                baseline=cfg.marketability.baseline)
    p0 = _initial_prices(cfg)
    prices = {grp: list(p0) for grp in PRICE_GROUPS[cfg.regime]}
    desk = ExchangeDesk(ledger, None, agents, [g.name for g in goods], credibility)

    fiat = psi = None
    if cfg.regime == "Fiat":
        gov = roles.index(Role.GOVERNMENT)
        fiat = FiatRegime(
            bank=roles.index(Role.BANK), central_bank=roles.index(Role.CENTRAL_BANK), government=gov,
            policy_rate=cfg.fiat.policy_rate, reserve_ratio_max=cfg.fiat.reserve_ratio_max,
            tax_rate=cfg.fiat.tax_rate, legal_tender=cfg.fiat.legal_tender,
        )
    elif cfg.regime == "Psi":
        gov = roles.index(Role.GOVERNMENT) if Role.GOVERNMENT in roles else -1
        psi = PsiRegime(
            government=gov, vote_threshold=cfg.psi.vote_threshold,
            service_demand_rate=cfg.psi.service_demand_rate, service_price=cfg.psi.service_price,
            delegate_collection=cfg.psi.delegate_collection,
        )

    world = World(cfg=cfg, rng=rng, goods=goods, objective=objective, agents=agents, ledger=ledger,
                  desk=desk, marketability=market, prices=prices, fiat=fiat, psi=psi)

    # durable endowment of each producer's own specialty
    endow = cfg.production.endowment
    if endow is None:
        endow = cfg.production.rate / cfg.thresholds.propensity_base
    for i in world.producers:
        g = world.spec[i]
        if goods[g].durable:
            world.inv[i][g] = float(endow)
    desk.inventory = world.inv

    if fiat is not None:
        households = list(world.producers)
        if cfg.fiat.access_shuffle:
            households = [households[i] for i in rng.permutation(len(households))]
        fiat.access_order = households
        if cfg.fiat.initial_money:
            for i in world.producers:
                ledger.issue(fiat.note_class(), i, cfg.fiat.initial_money)
        if cfg.fiat.initial_reserves:
            ledger.issue(fiat.note_class(), fiat.bank, cfg.fiat.initial_reserves)
    if psi is not None:
        _found_projects(world)
    world.sync_classes()

    world.m_ref = _money_stock(world)
    world.s_ref = real_savings(world)
    world.propensity = cfg.thresholds.propensity_base
    world.columns = _metric_columns(world)
    _snapshot(world, _inventory_array(world), 0.0)
    return world


def _project_value(world: World) -> int:
    cfg = world.cfg.psi
    if cfg.project_value:
        return cfg.project_value
    return max(1, int(round(0.05 * cfg.target_per_capita * max(1, len(world.producers)))))


def _found_projects(world: World) -> None:
    cfg = world.cfg.psi
    if not world.providers:
        return
    values = list(cfg.initial_projects)
    if not values and world.producers:
        total = 0.5 * cfg.target_per_capita * len(world.producers)
        each = max(1, int(round(total / len(world.providers))))
        values = [each] * len(world.providers)
    for k, value in enumerate(values):
        provider = world.providers[k % len(world.providers)]
        spec = f"founding-{k}"
        # founding services are taken as requested unanimously and already delivered
        psi_request_project(world.psi, world.members, spec, value, [True] * len(world.members), provider=provider)
        cid = psi_deliver_project(world.psi, world.ledger, provider, spec, tick=0)
        if cfg.founding_payout and world.producers:
            psi_pay_suppliers(world.ledger, provider, cid, world.producers, value)


# -- savings and propensity -------------------------------------------------------------

def real_savings(world: World, inv: np.ndarray | None = None) -> float:
    """Value of durable goods held anywhere, at objective values."""
    if inv is None:
        inv = _inventory_array(world)
    if inv.size == 0:
        return 0.0
    obj = world.objective.at(world.tick)
    return float(inv[:, world.durable].sum(axis=0) @ obj[world.durable])


def perceived_savings(agent: int, world: World) -> float:
    """Currency holdings of one agent taken at par, the way a holder counts them."""
    ledger = world.ledger
    return float(sum(ledger.group_value(agent, g) for g in GROUPS))


def _money_stock(world: World) -> float:
    ledger = world.ledger
    total = sum(ledger.group_outstanding.values())
    if world.fiat is not None:
        for a in (world.fiat.bank, world.fiat.central_bank):
            total -= sum(ledger.group_value(a, g) for g in GROUPS)
    return float(total)


def propensity_from_ratio(ratio: float, base: float, slope: float, cap: float = 0.95) -> float:
    """Base propensity scaled linearly by the perceived-to-real savings ratio, clamped into (0, 1)."""
    c = base * (1.0 + slope * (ratio - 1.0))
    return min(cap, max(1e-6, c))


def savings_ratio(m: float, m_ref: float, s: float, s_ref: float) -> float:
    if m <= 0 or m_ref <= 0 or s <= 0 or s_ref <= 0:
        return 1.0
    return (m / m_ref) / (s / s_ref)


def consumption_propensity(agent: int | None, world: World) -> float:
    """Current propensity to consume durables; every agent reads the same economy-wide signal."""
    th = world.cfg.thresholds
    m = _money_stock(world)
    s = real_savings(world)
    return propensity_from_ratio(savings_ratio(m, world.m_ref, s, world.s_ref), th.propensity_base,
                                 th.propensity_slope, th.propensity_max)


# -- the stepper ----------------------------------------------------------------------

def step(world: World) -> World:
    """Advance ``world`` by one tick in place and return it."""
    world.tick += 1
    world.ledger.tick = world.tick
    world._ctx = None
    world.trades = 0
    world.outcomes = []
    world.used = [0.0] * world.n_goods
    for d, s in world.stats.values():
        for j in range(world.n_goods):
            d[j] = 0.0
            s[j] = 0.0
    ev_start = len(world.ledger.events)

    produced = _produce(world)
    _regime_events(world)
    _meetings(world)
    inv, consumed, expired, consumption = _consume(world)
    _update_prices(world)
    _update_marketability(world)
    world.flows = TickFlows(produced, consumed, expired, np.asarray(world.used))
    _snapshot(world, inv, consumption, ev_start)
    return world


def _produce(world: World) -> np.ndarray:
    cfg = world.cfg.production
    produced = np.zeros(world.n_goods)
    prods = world.producers
    if not prods or cfg.rate == 0:
        return produced
    if cfg.mode == "poisson":
        drawn = world.rng.poisson(cfg.rate, size=len(prods))
    else:
        drawn = np.full(len(prods), float(cfg.rate))
    inv, spec = world.inv, world.spec
    goods = [spec[i] for i in prods]
    for i, g, q in zip(prods, goods, drawn.tolist()):
        if q:
            inv[i][g] += q
    return np.bincount(goods, weights=drawn, minlength=world.n_goods).astype(float)


# -- phase 2 ----------------------------------------------------------------------------

def _regime_events(world: World) -> None:
    for ev in world.cfg.events:
        if ev.tick == world.tick:
            if ev.type == "reshuffle":
                _reshuffle(world)
            elif ev.type == "credit_shock" and world.fiat is not None:
                _cantillon_snapshot(world)
                total = int(round(ev.fraction * _money_stock(world)))
                fiat_inject(world.fiat, world.ledger, total, tick=world.tick, term=ev.term,
                            width=world.cfg.fiat.access_width)
    if world.fiat is not None:
        _fiat_events(world)
    elif world.psi is not None:
        _psi_events(world)
    world.sync_classes()


def _reshuffle(world: World) -> None:
    prods = world.producers
    perm = world.rng.permutation(len(prods))
    old = [world.spec[i] for i in prods]
    for k, i in enumerate(prods):
        world.spec[i] = old[perm[k]]
        world.agents[i].specialty = world.spec[i]
    log.info("tick %d: specialties reshuffled", world.tick)


def _cantillon_snapshot(world: World) -> None:
    if "cantillon_start" not in world.extra:
        world.extra["cantillon_start"] = (world.tick, _affordability(world))


def _affordability(world: World) -> np.ndarray:
    """Basket units each access-ranked agent could buy with its money plus durable stock."""
    order = world.fiat.access_order
    p = np.asarray(world.prices["fiat"])
    inv = _inventory_array(world)
    basket_cost = float(p @ world.basket) / max(1.0, float(world.basket.sum()))
    wealth = []
    for a in order:
        money = world.ledger.group_value(a, "fiat")
        goods = float(inv[a, world.durable] @ p[world.durable])
        wealth.append(money + goods)
    return np.asarray(wealth) / basket_cost


def _fiat_events(world: World) -> None:
    fiat, cfg = world.fiat, world.cfg.fiat
    if fiat.loans:
        fiat_service_loans(fiat, world.ledger, world.tick)
    if world.tick == cfg.expansion_start:
        _cantillon_snapshot(world)
    if (cfg.expansion_rate > 0 and world.tick >= cfg.expansion_start
            and (world.tick - cfg.expansion_start) % cfg.expansion_interval == 0):
        total = int(round(cfg.expansion_rate * _money_stock(world)))
        fiat_inject(fiat, world.ledger, total, tick=world.tick, term=cfg.loan_term, width=cfg.access_width)


def _psi_events(world: World) -> None:
    psi, cfg, ledger = world.psi, world.cfg.psi, world.ledger
    if psi.service_demand_rate > 0 and world.members:
        draws = world.rng.random(len(world.members))
        psi.pending_demand.update(np.asarray(world.members)[draws < psi.service_demand_rate].tolist())
        held = ledger.group_values("psi")
        price = psi.service_price
        ids = psi.psi_class_ids()
        for i in sorted(i for i in psi.pending_demand if held.get(i, 0) >= price):
            psi_settle_demand(psi, ledger, i, ids)

    if not world.providers:
        return
    pending = [e for e in psi.registry.values() if e.status is ProjectStatus.REQUESTED]
    busy = {e.provider for e in pending}
    idle = [p for p in world.providers if p not in busy]
    if cfg.new_projects and idle and world.tick % cfg.vote_interval == 0 and world.producers:
        _hold_vote(world, idle)
        pending = [e for e in psi.registry.values() if e.status is ProjectStatus.REQUESTED]
    for entry in pending:
        need = cfg.input_fraction * entry.agreed_value
        if cfg.provider_funding == "none":
            ready = world.tick - entry.requested_tick >= cfg.build_ticks
        else:
            ready = world.input_value.get(entry.provider, 0.0) >= need
        if ready:
            if cfg.provider_funding == "iou":
                world.input_value[entry.provider] = 0.0
            psi_deliver_project(psi, ledger, entry.provider, entry.spec, tick=world.tick)


def _hold_vote(world: World, idle: list[int]) -> None:
    psi, cfg = world.psi, world.cfg.psi
    voters = world.producers
    value = _project_value(world)
    target = cfg.target_per_capita * len(voters)
    satiation = max(0.0, 1.0 - world.ledger.group_outstanding["psi"] / target)
    votes = [project_vote(world.agents[i], value, len(voters), cfg.project_benefit, satiation) for i in voters]
    spec = f"project-{world._project_seq}"
    provider = idle[world._next_provider % len(idle)]
    try:
        psi_request_project(psi, voters, spec, value, votes, provider=provider, tick=world.tick)
    except VoteFailedError:
        return
    world._project_seq += 1
    world._next_provider += 1
    log.debug("tick %d: %s requested from provider %d", world.tick, spec, provider)


# -- phase 3 ----------------------------------------------------------------------------

def _pairs(world: World) -> list[tuple[int, int]]:
    active = world.active
    n = len(active)
    if n < 2:
        return []
    if world.cfg.matching.mode == "rotate":
        off = (world.tick - 1) % n
        order = active[off:] + active[:off]
    else:
        order = [active[i] for i in world.rng.permutation(n).tolist()]
    return [(order[k], order[k + 1]) for k in range(0, n - 1, 2)]


def _meetings(world: World) -> None:
    _Trader(world).run(_pairs(world))
    world.sync_classes()


class _Trader:
    """One tick's meeting logic with the world's hot lookups bound locally."""

    def __init__(self, world: World):
        w = world
        self.w = w
        cfg = w.cfg
        self.ledger = w.ledger
        self.phi = cfg.trade.budget_fraction
        self.phi_provider = cfg.psi.provider_budget_fraction
        self.lot = cfg.trade.lot
        self.tc = 1.0 + cfg.trade.transaction_cost
        self.iou_issue = cfg.trade.iou_issue
        self.iou_limit = cfg.trade.iou_limit
        self.barter = cfg.trade.barter or w.regime == "BarterOnly"
        self.barter_only = w.regime == "BarterOnly"
        self.barter_prices = w.prices[MAIN_GROUP[w.regime]]
        self.bank = w.fiat.bank if w.fiat else -1
        self.gov_fiat = w.fiat.government if w.fiat else -1
        self.gov_spends = cfg.fiat.government_spends
        self.provider_ids = frozenset(w.providers)
        self.taxed = w.fiat is not None and w.fiat.tax_rate > 0
        # hot lookups; the class lists grow in place as sync_classes runs
        self.by_agent = self.ledger.balance_rows()
        self.group_value = {g: self.ledger.group_values(g) for g in GROUPS}
        self.iou_cid = w.iou_cid
        self.crank, self.ckind, self.cgroup, self.cissuer = w.crank, w.ckind, w.cgroup, w.cissuer
        self.psi_need: dict[int, float] = {}
        if w.psi is not None and cfg.psi.provider_funding == "iou":
            for e in w.psi.registry.values():
                if e.status is ProjectStatus.REQUESTED:
                    need = cfg.psi.input_fraction * e.agreed_value - w.input_value.get(e.provider, 0.0)
                    if need > 0:
                        self.psi_need[e.provider] = need

    def run(self, pairs: list[tuple[int, int]]) -> None:
        """Both meeting directions for every pair; the posted-price trade is inlined."""
        w = self.w
        ledger = self.ledger
        spec, inv, val, reserve, prices, stats = w.spec, w.inv, w.val, w.reserve, w.prices, w.stats
        accepts = w.accepts
        by_agent, group_value = self.by_agent, self.group_value
        crank, ckind, cgroup, cissuer = self.crank, self.ckind, self.cgroup, self.cissuer
        provider_ids, psi_need, iou_cid = self.provider_ids, self.psi_need, self.iou_cid
        phi, phi_provider, lot, tc = self.phi, self.phi_provider, self.lot, self.tc
        gov_fiat, gov_spends, bank = self.gov_fiat, self.gov_spends, self.bank
        iou_issue, barter, taxed = self.iou_issue, self.barter, self.taxed
        roles = w.roles
        move = ledger.move
        for x, y in pairs:
            if spec[x] == spec[y] >= 0:
                continue  # two producers of the same good have nothing to trade
            for b, s in ((x, y), (y, x)):
                if b in provider_ids and self._buyback(b, s):
                    continue
                g = spec[s]
                if g < 0 or g == spec[b]:
                    continue
                if b == gov_fiat and not gov_spends:
                    continue
                inv_s = inv[s]
                stock = inv_s[g]
                if stock <= EPS:
                    continue
                offer = stock if stock < lot else lot
                wallet = by_agent[b]
                if wallet and iou_cid:
                    own_iou = iou_cid.get(s)
                    if own_iou is not None and own_iou in wallet:
                        self._redeem(b, s, g, offer, own_iou, wallet[own_iou])
                        continue
                if b in psi_need:
                    self._buy_inputs(b, s, g, offer, wallet)
                    continue
                # cheapest acceptable class by spending rank, wallet order breaking ties
                cid = -1
                if wallet:
                    n_known = len(ckind)
                    best = 99
                    for c in wallet:
                        r = crank[c] if c < n_known else 99
                        if r >= best:
                            continue
                        if ckind[c] is _PSI or accepts(s, c):
                            cid, best = c, r
                            if r == 0:
                                break
                if cid < 0:
                    if iou_issue and roles[b].produces:
                        self._issue_iou(b, s, g, offer, for_inputs=False)
                    elif barter:
                        self._barter(b, s, g, offer)
                    continue
                group = cgroup[cid]
                p = prices[group][g]
                held = wallet[cid]
                gv = group_value[group].get(b, 0)
                budget = int((phi_provider if b in provider_ids else phi) * gv)
                if budget < 1:
                    budget = 1
                if b == bank:
                    spare = gv - math.ceil(fiat_credit_outstanding(w.fiat, ledger) / w.fiat.reserve_ratio_max)
                    budget = min(budget, spare)
                    if budget < 1:
                        continue
                if budget > held:
                    budget = held
                want = budget / p
                buyer_ok = val[b][g] > p * tc
                seller_ok = p > reserve[s][g]
                d, sup = stats[group]
                if buyer_ok:
                    d[g] += want
                if seller_ok:
                    sup[g] += offer
                if not (buyer_ok and seller_ok):
                    continue
                pay = budget if want <= offer else int(offer * p)
                if pay < 1:
                    continue
                q = pay / p
                inv_s[g] = stock - q if stock - q > 0 else 0.0
                inv[b][g] += q
                if cissuer[cid] == s:
                    ledger.redeem_destroy(b, cid, pay, presented_to=s)
                    w.desk.attribute_redemption(cid, pay, w.tick)
                else:
                    move(b, s, cid, pay)
                w.trades += 1
                if taxed:
                    if group == "fiat":
                        fiat_collect_taxes(pay, w.fiat, ledger=ledger, payer=s, class_id=cid)
                    else:
                        fiat_collect_taxes(pay, w.fiat, ledger=ledger, payer=s, class_id=None,
                                           convert=self._convert)

    # -- special paths ---------------------------------------------------------------

    def _buyback(self, b: int, s: int) -> bool:
        """A provider buys its own IOUs back from ``s`` with PSI units."""
        w = self.w
        cid = w.iou_cid.get(b)
        if cid is None:
            return False
        held = self.ledger.balance(s, cid)
        psi_total = self.ledger.group_value(b, "psi")
        units = min(held, psi_total)
        if units < 1:
            return False
        wallet = self.ledger.holdings(b)
        left = units
        for c in sorted(wallet, key=w.crank.__getitem__):
            if w.ckind[c] is not _PSI:
                continue
            take = min(wallet.get(c, 0), left)
            if take:
                self.ledger.transfer(b, s, c, take)
                left -= take
            if not left:
                break
        self.ledger.redeem_destroy(s, cid, units, presented_to=b)
        w.desk.attribute_redemption(cid, units, w.tick)
        w.record_credibility(b, True)
        w.trades += 1
        return True

    def _redeem(self, b: int, s: int, g: int, offer: float, cid: int, held: int) -> None:
        """Bearer ``b`` presents ``s``'s IOUs to ``s`` for goods, completing earlier exchanges."""
        w = self.w
        p = w.prices["iou"][g]
        if not w.val[b][g] > p * self.tc:
            return
        units = min(held, int(offer * p))
        if units < 1:
            w.record_credibility(s, False)
            return
        q = units / p
        w.inv[s][g] = max(0.0, w.inv[s][g] - q)
        w.inv[b][g] += q
        self.ledger.redeem_destroy(b, cid, units, presented_to=s)
        w.desk.attribute_redemption(cid, units, w.tick)
        w.record_credibility(s, True)
        w.trades += 1

    def _buy_inputs(self, b: int, s: int, g: int, offer: float, wallet: dict[int, int]) -> None:
        """A provider with a requested project acquires delivery inputs."""
        w = self.w
        need = self.psi_need[b]
        cid = -1
        for c in sorted(wallet, key=w.crank.__getitem__):
            if w.ckind[c] is _PSI and w.accepts(s, c):
                cid = c
                break
        if cid < 0:
            self._issue_iou(b, s, g, offer, for_inputs=True)
            return
        p = w.prices["psi"][g]
        seller_ok = p > w.reserve[s][g]
        d, sup = w.stats["psi"]
        pay = min(wallet[cid], math.ceil(need), int(offer * p))
        d[g] += need / p
        if seller_ok:
            sup[g] += offer
        if not seller_ok or pay < 1:
            return
        q = pay / p
        w.inv[s][g] = max(0.0, w.inv[s][g] - q)
        w.used[g] += q
        self.ledger.transfer(b, s, cid, pay)
        self._add_inputs(b, pay)
        w.trades += 1

    def _add_inputs(self, provider: int, value: float) -> None:
        w = self.w
        w.input_value[provider] = w.input_value.get(provider, 0.0) + value
        self.psi_need[provider] -= value
        if self.psi_need[provider] <= 0:
            del self.psi_need[provider]

    def _issue_iou(self, b: int, s: int, g: int, offer: float, *, for_inputs: bool) -> None:
        w = self.w
        if not w.cred[b] >= w.thr[s]:
            return
        if "iou" not in w.prices:
            return
        p = w.prices["iou"][g]
        own = w.iou_cid.get(b)
        out = self.ledger.outstanding(own) if own is not None else 0
        if for_inputs:
            room = math.ceil(self.psi_need[b])
        else:
            room = self.iou_limit - out
        pay = min(room, int(offer * p))
        buyer_ok = for_inputs or w.val[b][g] > p * self.tc
        seller_ok = p > w.reserve[s][g]
        d, sup = w.stats["iou"]
        if buyer_ok:
            d[g] += max(pay, 0) / p
        if seller_ok:
            sup[g] += offer
        if not (buyer_ok and seller_ok) or pay < 1:
            return
        q = pay / p
        w.desk.settle_first_half(s, b, g, q, Medium.IOU, ctx=w.context(), tick=w.tick, units=pay)
        w.sync_classes()
        w.trades += 1
        if for_inputs:
            w.inv[b][g] = max(0.0, w.inv[b][g] - q)
            w.used[g] += q
            self._add_inputs(b, pay)
        if w.fiat is not None and w.fiat.tax_rate > 0:
            fiat_collect_taxes(pay, w.fiat, ledger=self.ledger, payer=s, class_id=None, convert=self._convert)

    def _barter(self, b: int, s: int, g: int, offer: float) -> None:
        w = self.w
        inv, val, reserve = w.inv, w.val, w.reserve
        inv_b = inv[b]
        own = w.spec[b]
        if self.barter_only:
            best, h = -1.0, -1
            scores = w.marketability.scores
            for j, good in enumerate(w.goods):
                if j != g and inv_b[j] > EPS and scores[good.name] > best:
                    best, h = scores[good.name], j
        else:
            h = own
            if h < 0 or h == g or inv_b[h] <= EPS:
                return
        if h < 0:
            return
        pb = self.barter_prices
        x = pb[g] / pb[h]  # units of h per unit of g
        cost_b = reserve[b][h] if h == own else val[b][h]
        buyer_ok = val[b][g] > x * cost_b * self.tc
        reserve_s = reserve[s][g]
        direct = val[s][h] * x > reserve_s
        seller_ok = direct
        if self.barter_only:
            if not direct and pb[g] > reserve_s:
                # a willing seller offered a good it does not want itself: a test of h as a medium
                name = w.goods[h].name
                seller_ok = w.marketability.get(name) >= w.thr[s] or w.rng.random() < w.goods[h].salability
                w.outcomes.append(TradeOutcome(name, seller_ok))
            d, sup = w.stats["commodity"]
            if buyer_ok:
                d[g] += offer
            if seller_ok:
                sup[g] += offer
        if not (buyer_ok and seller_ok):
            return
        qg = inv_b[h] / x
        if offer < qg:
            qg = offer
        if qg <= EPS:
            return
        qh = qg * x
        inv_s = inv[s]
        left = inv_s[g] - qg
        inv_s[g] = left if left > 0 else 0.0
        inv_b[g] += qg
        left = inv_b[h] - qh
        inv_b[h] = left if left > 0 else 0.0
        inv_s[h] += qh
        w.trades += 1
        if self.taxed:
            fiat_collect_taxes(qg * pb[g], w.fiat, ledger=self.ledger, payer=s, class_id=None, convert=self._convert)

    def _convert(self, payer: int, value: float) -> int | None:
        """Sell goods worth ``value`` to the government for notes so a tax can be paid in fiat."""
        w = self.w
        fiat = w.fiat
        gov = fiat.government
        g = w.spec[payer]
        if g < 0:
            return None
        p = w.prices["fiat"][g]
        units = math.ceil(value)
        q = units / p
        if w.inv[payer][g] < q:
            return None
        wallet = self.ledger.holdings(gov)
        cid = next((c for c in wallet if w.ckind[c] in _FIAT and wallet[c] >= units), None)
        if cid is None:
            return None
        w.inv[payer][g] -= q
        w.inv[gov][g] += q
        self.ledger.transfer(gov, payer, cid, units)
        return cid


# -- phases 4 to 6 ------------------------------------------------------------------------

def _consume(world: World):
    th = world.cfg.thresholds
    inv = _inventory_array(world)
    m = _money_stock(world)
    s = real_savings(world, inv)
    ratio = savings_ratio(m, world.m_ref, s, world.s_ref)
    c = propensity_from_ratio(ratio, th.propensity_base, th.propensity_slope, th.propensity_max)
    world.propensity = c
    world.perceived_ratio = ratio
    dur = world.durable
    consumed = np.zeros(world.n_goods)
    expired = np.zeros(world.n_goods)
    if inv.size:
        eaten_d = inv[:, dur] * c
        inv[:, dur] -= eaten_d
        consumed[dur] = eaten_d.sum(axis=0)
        per = inv[:, ~dur]
        eaten_p = per * th.perishable_consumption
        consumed[~dur] = eaten_p.sum(axis=0)
        expired[~dur] = (per - eaten_p).sum(axis=0)
        inv[:, ~dur] = 0.0
    obj = world.objective.at(world.tick)
    consumption = float(consumed @ obj)
    a = th.reference_rate
    world.m_ref = m if world.m_ref <= 0 else world.m_ref + a * (m - world.m_ref)
    world.s_ref = s if world.s_ref <= 0 else world.s_ref + a * (s - world.s_ref)
    world.inv = inv.tolist()
    world.desk.inventory = world.inv
    return inv, consumed, expired, consumption


def _update_prices(world: World) -> None:
    eta = world.cfg.trade.price_step
    floor = world.cfg.trade.price_floor
    for group, (d, s) in world.stats.items():
        p = world.prices[group]
        for j in range(world.n_goods):
            dj, sj = d[j], s[j]
            top = dj if dj > sj else sj
            if top > 0:
                p[j] = max(floor, p[j] * (1.0 + eta * (dj - sj) / top))
        if group == "commodity":
            # barter fixes only relative prices; hold the basket cost at its base level
            scale = float(np.dot(world.base_prices[group], world.basket)) / float(np.dot(p, world.basket))
            p[:] = [max(floor, x * scale) for x in p]


def _update_marketability(world: World) -> None:
    table = world.marketability
    seen = set()
    for outcome in world.outcomes:
        marketability_update(table, outcome)
        seen.add(outcome.good)
    if world.regime == "BarterOnly":
        for good in world.goods:
            if good.name not in seen:
                marketability_update(table, TradeOutcome(good.name, False))


# -- phase 7 ------------------------------------------------------------------------------

def _metric_columns(world: World) -> list[str]:
    cols = ["tick", "trades", "consumption", "real_savings", "propensity", "perceived_ratio", "gini",
            "money_stock"]
    for g in world.prices:
        cols += [f"price_index_{g}", f"velocity_{g}", f"outstanding_{g}"]
    cols += ["psi_shift", "events"]
    return cols


def _dense(values: dict[int, int], n: int) -> np.ndarray:
    out = np.zeros(n)
    if values:
        out[np.fromiter(values.keys(), dtype=np.int64, count=len(values))] = np.fromiter(
            values.values(), dtype=float, count=len(values))
    return out


def _snapshot(world: World, inv: np.ndarray, consumption: float, ev_start: int | None = None) -> None:
    ledger = world.ledger
    main = MAIN_GROUP[world.regime]
    prices_main = np.asarray(world.prices[main])
    prods = world.producers
    psi_h = _dense(ledger.group_values("psi"), world.n)
    if prods:
        money = psi_h.copy()
        for g in GROUPS:
            if g != "psi" and ledger.group_values(g):
                money += _dense(ledger.group_values(g), world.n)
        idx = world.producer_idx
        wealth = money[idx]
        inv_p = inv[idx] if inv.size else np.zeros((len(prods), world.n_goods))
        wealth += inv_p[:, world.durable] @ prices_main[world.durable]
        try:
            gini = mx.gini(wealth)
        except SimulationError:
            gini = 0.0
    else:
        gini = 0.0

    shift = 0.0
    if world.prev_psi is not None and world.regime == "Psi":
        shift = mx.distribution_shift(world.prev_psi, psi_h)
    world.prev_psi = psi_h

    flow = {g: 0.0 for g in world.prices}
    if ev_start is not None and len(ledger.events) > ev_start:
        cols = ledger.events.columns()
        kind = cols["kind"][ev_start:]
        cls = cols["class_id"][ev_start:]
        amt = cols["amount"][ev_start:]
        mask = kind == 1
        if mask.any():
            group_of = np.asarray(world.cgroup_idx)
            den = np.asarray(world.cden, dtype=float)
            gidx = group_of[cls[mask]]
            vals = amt[mask] * den[cls[mask]]
            for g in flow:
                flow[g] = float(vals[gidx == GROUPS.index(g)].sum())

    row = [world.tick, world.trades, consumption, real_savings(world, inv), world.propensity,
           world.perceived_ratio, gini, _money_stock(world)]
    pindex = {}
    vel = {}
    outstanding = {}
    for g, p in world.prices.items():
        pi = mx.price_index(p, world.base_prices[g], world.basket)
        o = ledger.group_outstanding[g]
        v = flow[g] / o if o > 0 else 0.0
        pindex[g], vel[g], outstanding[g] = pi, v, o
        row += [pi, v, o]
    row += [shift, len(ledger.events) - (ev_start or 0)]
    world.rows.append(tuple(row))
    world.frame = mx.MetricsFrame(
        tick=world.tick, gini=gini, price_index=pindex, velocity=vel, real_savings=row[3],
        perceived_ratio=world.perceived_ratio, holdings=mx.normalize(psi_h), consumption=consumption,
        outstanding=outstanding,
    )


# -- running scenarios -------------------------------------------------------------------

@dataclass
class RunResult:
    world: World
    summary: dict[str, Any]

    @property
    def rows(self) -> list[tuple]:
        return self.world.rows

    @property
    def columns(self) -> list[str]:
        return self.world.columns

    def series(self, name: str) -> np.ndarray:
        k = self.world.columns.index(name)
        return np.array([r[k] for r in self.world.rows], dtype=float)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        write_metrics_csv(self.world, buf)
        return buf.getvalue()

    def events_csv(self) -> str:
        buf = io.StringIO()
        self.world.ledger.events.write_csv(buf)
        return buf.getvalue()


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def write_metrics_csv(world: World, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(world.columns)
    for row in world.rows:
        w.writerow([_fmt(v) for v in row])


def stability_stats(shifts: np.ndarray, burn_in: int = 500, eps: float = 0.05) -> dict[str, float]:
    tail = shifts[burn_in + 1:] if shifts.size > burn_in + 1 else np.zeros(0)
    return {"burn_in": burn_in, "mean_shift_after_burn_in": float(tail.mean()) if tail.size else 0.0,
            "stable": bool(tail.size and tail.mean() < eps)}


def restabilization_tick(shifts: np.ndarray, event_tick: int, eps: float = 0.05, window: int = 20) -> int | None:
    """First tick after ``event_tick`` at which the trailing mean shift is below ``eps``."""
    for t in range(event_tick + window, len(shifts)):
        if shifts[t - window + 1:t + 1].mean() < eps:
            return t
    return None


def cantillon_slope(world: World) -> float | None:
    start = world.extra.get("cantillon_start")
    if world.fiat is None or start is None:
        return None
    _, before = start
    after = _affordability(world)
    ranks = np.arange(len(after))
    try:
        return mx.cantillon_gradient(ranks, after - before)
    except SimulationError:
        return None


def summarize(world: World) -> dict[str, Any]:
    res = RunResult(world, {})
    ticks = len(world.rows)
    summary: dict[str, Any] = {
        "regime": world.regime,
        "seed": world.cfg.seed,
        "agents": world.n,
        "horizon": world.cfg.horizon,
        "frames": ticks,
        "events": len(world.ledger.events),
        "final": {c: v for c, v in zip(world.columns, world.rows[-1])} if world.rows else {},
    }
    gini_series = res.series("gini")
    summary["gini_slope"] = mx.trend_slope(gini_series) if ticks >= 2 else 0.0
    consumption = res.series("consumption")[1:]
    episodes = []
    if consumption.size > BOOM_BASELINE:
        episodes = [ep._asdict() for ep in mx.detect_boom_bust(
            consumption, BOOM_BASELINE, BOOM_K, window=BOOM_WINDOW, min_run=BOOM_MIN_RUN)]
        for ep in episodes:
            for k in ep:
                ep[k] += 1  # series index 0 is tick 1
    summary["boom_bust_episodes"] = episodes
    summary["cantillon_slope"] = cantillon_slope(world)
    velocity = {}
    for g in world.prices:
        flows = res.series(f"velocity_{g}") * res.series(f"outstanding_{g}")
        out = res.series(f"outstanding_{g}")
        velocity[g] = float(flows.sum() / out.mean()) if out.mean() > 0 else 0.0
    summary["velocity"] = velocity
    if world.regime == "Psi":
        shifts = res.series("psi_shift")
        summary["psi_stability"] = stability_stats(shifts)
        pi = res.series("price_index_psi")
        third = pi[-(len(pi) // 3):] if len(pi) >= 3 else pi
        drift = np.diff(third) / third[:-1] if third.size > 1 else np.zeros(0)
        summary["psi_price_drift"] = float(drift.mean()) if drift.size else 0.0
        summary["projects"] = {
            s: {"value": e.agreed_value, "status": e.status.value, "provider": e.provider}
            for s, e in world.psi.registry.items()
        }
    summary["conservation_violations"] = len(world.ledger.check_conservation())
    return summary


def run_scenario(cfg: ScenarioConfig, out_dir: str | os.PathLike | None = None, *,
                 progress_every: int = 0) -> RunResult:
    """Build a world, step it through the horizon and optionally persist the outputs."""
    if not isinstance(cfg, ScenarioConfig):
        raise InvalidConfigError("run_scenario needs a validated ScenarioConfig")
    world = build_world(cfg)
    for _ in range(cfg.horizon):
        step(world)
        if progress_every and world.tick % progress_every == 0:
            log.info("tick %d/%d", world.tick, cfg.horizon)
    summary = summarize(world)
    result = RunResult(world, summary)
    target = out_dir if out_dir is not None else cfg.output_dir
    if target is not None:
        write_outputs(result, target)
    return result


def write_outputs(result: RunResult, out_dir) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "events": os.path.join(out_dir, "events.csv"),
        "metrics": os.path.join(out_dir, "metrics.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
    }
    result.world.ledger.events.to_csv(paths["events"])
    with open(paths["metrics"], "w", encoding="utf-8", newline="") as fh:
        write_metrics_csv(result.world, fh)
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump(_jsonable(result.summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
