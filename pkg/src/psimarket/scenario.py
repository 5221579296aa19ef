"""Scenario configuration: strict JSON schema, defaults and validation."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

from .errors import MissingFieldError, RangeViolationError, ScenarioSyntaxError, UnknownKeyError

REGIMES = ("Fiat", "Psi", "BarterOnly")


@dataclass
class GoodSpec:
    name: str
    durable: bool = True
    production_cost: float = 1.0
    base_utility: float = 3.0
    salability: float = 0.1


def default_goods() -> list[GoodSpec]:
    return [
        GoodSpec("grain", durable=False, production_cost=1.0, base_utility=3.0, salability=0.2),
        GoodSpec("cloth", durable=True, production_cost=1.2, base_utility=3.4, salability=0.3),
        GoodSpec("tools", durable=True, production_cost=1.5, base_utility=4.0, salability=0.2),
        GoodSpec("salt", durable=True, production_cost=0.8, base_utility=2.6, salability=0.6),
    ]


@dataclass
class AgentsSpec:
    count: int = 0
    firm_share: float = 0.0
    providers: int = 0  # public providers; under the PSI regime defaults to one per 50 producers, at least 2
    acceptance_threshold: float = 0.5
    threshold_spread: float = 0.0  # thresholds drawn uniformly within +- spread, clipped to [0, 1]
    public_valuation_spread: float = 0.5  # public valuation drawn uniformly in 1 +/- spread


@dataclass
class ProductionSpec:
    mode: str = "poisson"  # or "deterministic"
    rate: float = 1.0
    endowment: float | None = None  # durable units of the specialty at start; None = steady state


@dataclass
class MatchingSpec:
    mode: str = "random"  # or "rotate"


@dataclass
class TradeSpec:
    budget_fraction: float = 0.03
    lot: float = 1.0
    price_step: float = 0.1
    price_floor: float = 0.01
    transaction_cost: float = 0.0
    initial_prices: list[float] | None = None
    barter: bool = True
    iou_issue: bool = False
    iou_limit: int = 30


@dataclass
class ThresholdsSpec:
    propensity_base: float = 0.05
    propensity_slope: float = 0.8
    propensity_max: float = 0.95
    reference_rate: float = 0.01
    perishable_consumption: float = 0.9


@dataclass
class MarketabilitySpec:
    rate: float = 0.05
    baseline: float = 0.1


@dataclass
class FiatSpec:
    policy_rate: float = 0.0005
    reserve_ratio_max: float = 10.0
    tax_rate: float = 0.05
    legal_tender: bool = True
    initial_money: int = 100
    initial_reserves: int = 0
    expansion_rate: float = 0.0
    expansion_interval: int = 10
    expansion_start: int = 100
    loan_term: int | None = None  # None: interest-only
    access_width: int = 10
    access_shuffle: bool = True
    government_spends: bool = True


@dataclass
class PsiSpec:
    vote_threshold: float = 0.5
    service_demand_rate: float = 0.02
    service_price: int = 2
    initial_projects: list[int] = field(default_factory=list)
    founding_payout: bool = True  # founding PSI goes straight to the producers who supplied the inputs
    new_projects: bool = True
    project_value: int = 0  # 0: sized from the population
    project_benefit: float = 2.0
    target_per_capita: float = 100.0
    vote_interval: int = 25
    provider_funding: str = "iou"  # or "none"
    input_fraction: float = 0.5
    build_ticks: int = 5
    delegate_collection: bool = False
    provider_budget_fraction: float = 0.1


@dataclass
class EventSpec:
    tick: int
    type: str  # "reshuffle" or "credit_shock"
    fraction: float = 0.0
    term: int | None = None


@dataclass
class ScenarioConfig:
    regime: str
    agents: AgentsSpec
    horizon: int
    seed: int
    noise_sigma: float = 0.25
    goods: list[GoodSpec] = field(default_factory=default_goods)
    production: ProductionSpec = field(default_factory=ProductionSpec)
    matching: MatchingSpec = field(default_factory=MatchingSpec)
    trade: TradeSpec = field(default_factory=TradeSpec)
    thresholds: ThresholdsSpec = field(default_factory=ThresholdsSpec)
    marketability: MarketabilitySpec = field(default_factory=MarketabilitySpec)
    fiat: FiatSpec = field(default_factory=FiatSpec)
    psi: PsiSpec = field(default_factory=PsiSpec)
    events: list[EventSpec] = field(default_factory=list)
    output_dir: str | None = None


_SECTIONS = {
    "production": ProductionSpec,
    "matching": MatchingSpec,
    "trade": TradeSpec,
    "thresholds": ThresholdsSpec,
    "marketability": MarketabilitySpec,
    "fiat": FiatSpec,
    "psi": PsiSpec,
}

# key path -> (low, high, low inclusive, high inclusive)
_RANGES = {
    "horizon": (0, None, True, True),
    "noise_sigma": (0, None, True, True),
    "agents.count": (0, None, True, True),
    "agents.firm_share": (0, 1, True, True),
    "agents.providers": (0, None, True, True),
    "agents.acceptance_threshold": (0, 1, True, True),
    "agents.threshold_spread": (0, 1, True, True),
    "agents.public_valuation_spread": (0, 1, True, False),
    "production.rate": (0, None, True, True),
    "production.endowment": (0, None, True, True),
    "trade.budget_fraction": (0, 1, False, True),
    "trade.lot": (0, None, False, True),
    "trade.price_step": (0, 1, True, False),
    "trade.price_floor": (0, None, False, True),
    "trade.transaction_cost": (0, None, True, True),
    "trade.iou_limit": (0, None, True, True),
    "thresholds.propensity_base": (0, 1, False, False),
    "thresholds.propensity_slope": (0, None, True, True),
    "thresholds.propensity_max": (0, 1, False, False),
    "thresholds.reference_rate": (0, 1, False, True),
    "thresholds.perishable_consumption": (0, 1, True, True),
    "marketability.rate": (0, 1, False, True),
    "marketability.baseline": (0, 1, True, True),
    "fiat.policy_rate": (0, 1, True, False),
    "fiat.reserve_ratio_max": (1, None, True, True),
    "fiat.tax_rate": (0, 1, True, False),
    "fiat.initial_money": (0, None, True, True),
    "fiat.initial_reserves": (0, None, True, True),
    "fiat.expansion_rate": (0, 1, True, True),
    "fiat.expansion_interval": (1, None, True, True),
    "fiat.expansion_start": (1, None, True, True),
    "fiat.loan_term": (1, None, True, True),
    "fiat.access_width": (1, None, True, True),
    "psi.vote_threshold": (0, 1, True, True),
    "psi.service_demand_rate": (0, 1, True, True),
    "psi.service_price": (1, None, True, True),
    "psi.project_value": (0, None, True, True),
    "psi.project_benefit": (0, None, True, True),
    "psi.target_per_capita": (0, None, False, True),
    "psi.vote_interval": (1, None, True, True),
    "psi.input_fraction": (0, 1, True, True),
    "psi.build_ticks": (0, None, True, True),
    "psi.provider_budget_fraction": (0, 1, False, True),
}

_CHOICES = {
    "production.mode": ("poisson", "deterministic"),
    "matching.mode": ("random", "rotate"),
    "psi.provider_funding": ("iou", "none"),
}


def _check_keys(data: dict, cls, path: str) -> None:
    allowed = {f.name for f in fields(cls)}
    for key in data:
        if key not in allowed:
            full = f"{path}.{key}" if path else key
            raise UnknownKeyError(f"unknown key '{full}'", key=full)


def _require_object(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise RangeViolationError(f"'{path}' must be an object", key=path)
    return value


def _coerce(value: Any, default: Any, path: str) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise RangeViolationError(f"'{path}' must be true or false", key=path)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or (isinstance(value, float) and not value.is_integer()):
            raise RangeViolationError(f"'{path}' must be an integer", key=path)
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise RangeViolationError(f"'{path}' must be a number", key=path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise RangeViolationError(f"'{path}' must be a string", key=path)
    return value


def _build_section(cls, data: dict, path: str):
    data = _require_object(data, path)
    _check_keys(data, cls, path)
    obj = cls()
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        key = f"{path}.{f.name}"
        if f.name in ("endowment", "loan_term", "initial_prices"):
            if value is None:
                kwargs[f.name] = None
                continue
            if f.name == "initial_prices":
                if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
                    raise RangeViolationError(f"'{key}' must be a list of numbers", key=key)
                if any(v <= 0 for v in value):
                    raise RangeViolationError(f"'{key}' must be positive", key=key)
                kwargs[f.name] = [float(v) for v in value]
                continue
            default = 1 if f.name == "loan_term" else 1.0
            kwargs[f.name] = _coerce(value, default, key)
            continue
        if f.name == "initial_projects":
            if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in value):
                raise RangeViolationError(f"'{key}' must be a list of positive integers", key=key)
            kwargs[f.name] = list(value)
            continue
        default = getattr(obj, f.name)
        kwargs[f.name] = _coerce(value, default, key)
    return cls(**kwargs)


def _check_range(cfg: ScenarioConfig) -> None:
    for path, (lo, hi, lo_inc, hi_inc) in _RANGES.items():
        target = cfg
        for part in path.split("."):
            target = getattr(target, part)
        if target is None:
            continue
        if lo is not None and (target < lo or (target == lo and not lo_inc)):
            raise RangeViolationError(f"'{path}' = {target} is below the allowed range", key=path)
        if hi is not None and (target > hi or (target == hi and not hi_inc)):
            raise RangeViolationError(f"'{path}' = {target} is above the allowed range", key=path)
    for path, options in _CHOICES.items():
        section, name = path.split(".")
        value = getattr(getattr(cfg, section), name)
        if value not in options:
            raise RangeViolationError(f"'{path}' must be one of {', '.join(options)}", key=path)
    if not 0 <= cfg.seed < 2 ** 64:
        raise RangeViolationError("'seed' must be a 64-bit unsigned integer", key="seed")
    if not cfg.goods:
        raise RangeViolationError("'goods' must list at least one good", key="goods")
    names = [g.name for g in cfg.goods]
    if len(set(names)) != len(names):
        raise RangeViolationError("good names must be unique", key="goods")
    for i, g in enumerate(cfg.goods):
        if g.production_cost <= 0 or g.base_utility <= 0:
            raise RangeViolationError(f"'goods[{i}]' cost and utility must be positive", key=f"goods[{i}]")
        if not 0 <= g.salability <= 1:
            raise RangeViolationError(f"'goods[{i}].salability' must lie in [0, 1]", key=f"goods[{i}].salability")
    prices = cfg.trade.initial_prices
    if prices is not None and len(prices) != len(cfg.goods):
        raise RangeViolationError("'trade.initial_prices' needs one price per good", key="trade.initial_prices")
    for i, ev in enumerate(cfg.events):
        if ev.type not in ("reshuffle", "credit_shock"):
            raise RangeViolationError(f"'events[{i}].type' must be reshuffle or credit_shock", key=f"events[{i}].type")
        if ev.tick < 1:
            raise RangeViolationError(f"'events[{i}].tick' must be at least 1", key=f"events[{i}].tick")
        if not 0 <= ev.fraction <= 10:
            raise RangeViolationError(f"'events[{i}].fraction' out of range", key=f"events[{i}].fraction")
        if ev.term is not None and ev.term < 1:
            raise RangeViolationError(f"'events[{i}].term' must be at least 1", key=f"events[{i}].term")


def config_from_dict(data: Any) -> ScenarioConfig:
    data = _require_object(data, "scenario")
    _check_keys(data, ScenarioConfig, "")
    for req in ("regime", "agents", "horizon", "seed"):
        if req not in data:
            raise MissingFieldError(f"missing required field '{req}'", key=req)
    regime = data["regime"]
    if regime not in REGIMES:
        raise RangeViolationError(f"'regime' must be one of {', '.join(REGIMES)}", key="regime")
    agents = data["agents"]
    if isinstance(agents, bool):
        raise RangeViolationError("'agents' must be a count or an object", key="agents")
    if isinstance(agents, int):
        agents_spec = AgentsSpec(count=agents)
    else:
        agents_spec = _build_section(AgentsSpec, agents, "agents")
    if regime == "Psi" and (not isinstance(agents, dict) or "providers" not in agents):
        agents_spec.providers = max(2, agents_spec.count // 50)
    kwargs: dict[str, Any] = {
        "regime": regime,
        "agents": agents_spec,
        "horizon": _coerce(data["horizon"], 0, "horizon"),
        "seed": _coerce(data["seed"], 0, "seed"),
    }
    if "noise_sigma" in data:
        kwargs["noise_sigma"] = _coerce(data["noise_sigma"], 0.0, "noise_sigma")
    if "goods" in data:
        if not isinstance(data["goods"], list):
            raise RangeViolationError("'goods' must be a list", key="goods")
        goods = []
        for i, g in enumerate(data["goods"]):
            g = _require_object(g, f"goods[{i}]")
            _check_keys(g, GoodSpec, f"goods[{i}]")
            if "name" not in g:
                raise MissingFieldError(f"missing required field 'goods[{i}].name'", key=f"goods[{i}].name")
            spec = GoodSpec(name=_coerce(g["name"], "", f"goods[{i}].name"))
            for key in ("durable", "production_cost", "base_utility", "salability"):
                if key in g:
                    setattr(spec, key, _coerce(g[key], getattr(spec, key), f"goods[{i}].{key}"))
            goods.append(spec)
        kwargs["goods"] = goods
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build_section(cls, data[name], name)
    if "events" in data:
        if not isinstance(data["events"], list):
            raise RangeViolationError("'events' must be a list", key="events")
        events = []
        for i, ev in enumerate(data["events"]):
            ev = _require_object(ev, f"events[{i}]")
            _check_keys(ev, EventSpec, f"events[{i}]")
            for req in ("tick", "type"):
                if req not in ev:
                    raise MissingFieldError(f"missing required field 'events[{i}].{req}'", key=f"events[{i}].{req}")
            events.append(EventSpec(
                tick=_coerce(ev["tick"], 0, f"events[{i}].tick"),
                type=_coerce(ev["type"], "", f"events[{i}].type"),
                fraction=_coerce(ev.get("fraction", 0.0), 0.0, f"events[{i}].fraction"),
                term=None if ev.get("term") is None else _coerce(ev["term"], 0, f"events[{i}].term"),
            ))
        kwargs["events"] = sorted(events, key=lambda e: e.tick)
    if "output_dir" in data and data["output_dir"] is not None:
        kwargs["output_dir"] = _coerce(data["output_dir"], "", "output_dir")
    cfg = ScenarioConfig(**kwargs)
    _check_range(cfg)
    return cfg


def parse_scenario(text: str | bytes) -> ScenarioConfig:
    """Parse UTF-8 JSON scenario text into a fully defaulted, validated config."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ScenarioSyntaxError(f"scenario is not UTF-8: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioSyntaxError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(data)


def load_scenario(path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        return parse_scenario(fh.read())


def config_to_dict(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    if d["output_dir"] is None:
        del d["output_dir"]
    return d


def serialize_scenario(cfg: ScenarioConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)


def with_overrides(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    """Deep copy of ``cfg`` with top-level fields replaced."""
    new = copy.deepcopy(cfg)
    for k, v in changes.items():
        if not hasattr(new, k):
            raise AttributeError(k)
        setattr(new, k, v)
    return new


__all__ = [
    "AgentsSpec", "EventSpec", "FiatSpec", "GoodSpec", "MarketabilitySpec", "MatchingSpec",
    "ProductionSpec", "PsiSpec", "ScenarioConfig", "ThresholdsSpec", "TradeSpec",
    "config_from_dict", "config_to_dict", "default_goods", "load_scenario", "parse_scenario",
    "serialize_scenario", "with_overrides",
]
