"""Claim instruments and the conservation-checked ledger that tracks them.

Every unit of every instrument class is created by ``issue``, moved by
``transfer`` and terminated by ``redeem_destroy``.  Balances are integer
counts; for each class the sum of balances over all agents always equals
``issued - destroyed``.
"""
from __future__ import annotations

import csv
import hashlib
import io
from array import array
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .errors import (
    AlreadyExhaustedError,
    InsufficientBalanceError,
    InvalidInstrumentError,
    SelfTransferError,
    UngatedPsiIssueError,
    UnknownClassError,
    UnknownAgentError,
    UnknownIssuerError,
    WrongIssuerError,
    ZeroAmountError,
)


class InstrumentKind(Enum):
    COMMODITY_MONEY = "CommodityMoney"
    IOU = "IOU"
    INVOICE = "Invoice"
    PSI = "PSI"
    FIAT_NOTE = "FiatNote"
    FIAT_CREDIT = "FiatCredit"

    @property
    def group(self) -> str:
        return _GROUPS[self]


_GROUPS = {
    InstrumentKind.COMMODITY_MONEY: "commodity",
    InstrumentKind.IOU: "iou",
    InstrumentKind.INVOICE: "invoice",
    InstrumentKind.PSI: "psi",
    InstrumentKind.FIAT_NOTE: "fiat",
    InstrumentKind.FIAT_CREDIT: "fiat",
}

_NEEDS_ISSUER = {
    InstrumentKind.IOU,
    InstrumentKind.INVOICE,
    InstrumentKind.PSI,
    InstrumentKind.FIAT_CREDIT,
}

GROUPS = ("psi", "invoice", "iou", "fiat", "commodity")


@dataclass(frozen=True)
class InstrumentClass:
    kind: InstrumentKind
    issuer: int | None
    backing: str
    denomination: int = 1

    def __post_init__(self) -> None:
        if self.denomination <= 0:
            raise InvalidInstrumentError("denomination must be positive")
        if self.kind in _NEEDS_ISSUER and self.issuer is None:
            raise InvalidInstrumentError(f"{self.kind.value} requires an issuer")
        if self.kind is InstrumentKind.COMMODITY_MONEY and self.issuer is not None:
            raise InvalidInstrumentError("commodity money has no issuer")
        # classes key every ledger lookup; hash the fields once
        object.__setattr__(self, "_hash", hash((self.kind.value, self.issuer, self.backing, self.denomination)))

    def __hash__(self) -> int:
        return self._hash

    @property
    def group(self) -> str:
        return self.kind.group


@dataclass
class InstrumentBatch:
    cls: InstrumentClass
    issue_tick: int
    issued: int = 0
    destroyed: int = 0

    @property
    def outstanding(self) -> int:
        return self.issued - self.destroyed


class EventKind(Enum):
    ISSUE = 0
    TRANSFER = 1
    DESTROY = 2


_KIND_NAMES = {0: "issue", 1: "transfer", 2: "destroy"}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}

NO_AGENT = -1


def _blank(agents: list[int]) -> list:
    return ["" if v == NO_AGENT else v for v in agents]


class LedgerEvent(NamedTuple):
    tick: int
    kind: str
    class_id: int
    src: int  # NO_AGENT for issuance
    dst: int  # recipient, or the issuer a destroyed unit was presented to
    amount: int


class EventLog:
    """Append-only ledger event log, stored as one flat int64 array of six-field rows."""

    __slots__ = ("_data",)
    WIDTH = 6
    FIELDS = ("tick", "kind", "class_id", "src", "dst", "amount")

    def __init__(self) -> None:
        self._data = array("q")

    def append(self, tick: int, kind: int, class_id: int, src: int, dst: int, amount: int) -> None:
        self._data.extend((tick, kind, class_id, src, dst, amount))

    def __len__(self) -> int:
        return len(self._data) // 6

    def __getitem__(self, i: int) -> LedgerEvent:
        n = len(self)
        if i < 0:
            i += n
        if not 0 <= i < n:
            raise IndexError(i)
        t, k, c, s, d, a = self._data[6 * i:6 * i + 6]
        return LedgerEvent(t, _KIND_NAMES[k], c, s, d, a)

    def __iter__(self) -> Iterator[LedgerEvent]:
        data = self._data
        for i in range(0, len(data), 6):
            t, k, c, s, d, a = data[i:i + 6]
            yield LedgerEvent(t, _KIND_NAMES[k], c, s, d, a)

    def columns(self) -> dict[str, np.ndarray]:
        """Read-only column views keyed by field name."""
        rows = np.frombuffer(self._data, dtype=np.int64).reshape(-1, 6) if self._data else np.zeros((0, 6), np.int64)
        return {name: rows[:, j] for j, name in enumerate(self.FIELDS)}

    def write_csv(self, stream: io.TextIOBase) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["tick", "event-kind", "class-id", "from", "to", "amount"])
        data = self._data.tolist()
        tick, kind, cid, src, dst, amount = (data[j::6] for j in range(6))
        w.writerows(zip(tick, map(_KIND_NAMES.__getitem__, kind), cid, _blank(src), _blank(dst), amount))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            self.write_csv(fh)

    def digest(self) -> str:
        return hashlib.sha256(self._data.tobytes()).hexdigest()

    @classmethod
    def read_csv(cls, path) -> "EventLog":
        log = cls()
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                log.append(
                    int(row["tick"]), _KIND_CODES[row["event-kind"]], int(row["class-id"]),
                    int(row["from"]) if row["from"] else NO_AGENT,
                    int(row["to"]) if row["to"] else NO_AGENT,
                    int(row["amount"]),
                )
        return log


class Ledger:
    """Tracks instrument classes, per-agent balances and the event log.

    ``goods`` is the catalog that commodity-money classes must reference.
    ``tick`` is stamped on every event and is advanced by the world stepper.
    """

    def __init__(self, agents: Iterable[int] = (), goods: Iterable[str] = ()):
        self.tick = 0
        self.goods = frozenset(goods)
        self.events = EventLog()
        self.classes: list[InstrumentClass] = []
        self.batches: list[InstrumentBatch] = []
        self._class_ids: dict[InstrumentClass, int] = {}
        self._agents: set[int] = set()
        self._by_agent: dict[int, dict[int, int]] = {}
        self._by_class: list[dict[int, int]] = []
        self._meta: list[tuple[str, int]] = []  # (group, denomination) per class id
        self._group_value: dict[str, dict[int, int]] = {g: {} for g in GROUPS}
        self.group_outstanding: dict[str, int] = {g: 0 for g in GROUPS}
        self._delegates: dict[int, set[int]] = {}
        self._psi_gates: set[InstrumentClass] = set()
        for a in agents:
            self.register_agent(a)

    # -- registry --------------------------------------------------------

    def register_agent(self, agent_id: int) -> None:
        self._agents.add(agent_id)
        self._by_agent.setdefault(agent_id, {})

    def has_agent(self, agent_id: int) -> bool:
        return agent_id in self._agents

    def class_id(self, cls: InstrumentClass) -> int:
        try:
            return self._class_ids[cls]
        except KeyError:
            raise UnknownClassError(cls) from None

    def find_class(self, cls: InstrumentClass) -> int | None:
        return self._class_ids.get(cls)

    def define_class(self, cls: InstrumentClass) -> int:
        """Register ``cls`` (idempotent) and return its class id."""
        cid = self._class_ids.get(cls)
        if cid is not None:
            return cid
        if cls.issuer is not None and cls.issuer not in self._agents:
            raise UnknownIssuerError(cls.issuer)
        if cls.kind is InstrumentKind.COMMODITY_MONEY and cls.backing not in self.goods:
            raise InvalidInstrumentError(f"commodity money must reference a catalog good, got {cls.backing!r}")
        cid = len(self.classes)
        self.classes.append(cls)
        self.batches.append(InstrumentBatch(cls, issue_tick=self.tick))
        self._by_class.append({})
        self._meta.append((cls.kind.group, cls.denomination))
        self._class_ids[cls] = cid
        return cid

    def get_class(self, class_id: int) -> InstrumentClass:
        if not 0 <= class_id < len(self.classes):
            raise UnknownClassError(class_id)
        return self.classes[class_id]

    def add_delegate(self, class_id: int, agent_id: int) -> None:
        """Allow ``agent_id`` to accept redemptions on behalf of the class issuer."""
        self.get_class(class_id)
        self._delegates.setdefault(class_id, set()).add(agent_id)

    def open_psi_gate(self, cls: InstrumentClass) -> None:
        """Authorise one PSI issuance for ``cls``; called once delivery is confirmed."""
        if cls.kind is not InstrumentKind.PSI:
            raise InvalidInstrumentError("only PSI classes are gated")
        self._psi_gates.add(cls)

    # -- balance plumbing --------------------------------------------------

    def _credit(self, agent: int, cid: int, amount: int, group: str, value: int) -> None:
        row = self._by_agent[agent]
        row[cid] = row.get(cid, 0) + amount
        col = self._by_class[cid]
        col[agent] = col.get(agent, 0) + amount
        gv = self._group_value[group]
        gv[agent] = gv.get(agent, 0) + value

    def _debit(self, agent: int, cid: int, amount: int, group: str, value: int) -> None:
        row = self._by_agent[agent]
        left = row[cid] - amount
        col = self._by_class[cid]
        if left:
            row[cid] = left
            col[agent] = left
        else:
            del row[cid]
            del col[agent]
        gv = self._group_value[group]
        gv[agent] -= value

    # -- operations --------------------------------------------------------

    def issue(self, cls: InstrumentClass, recipient: int, amount: int) -> int:
        """Create ``amount`` new units of ``cls`` in ``recipient``'s balance."""
        if amount <= 0:
            raise ZeroAmountError("issuance amount must be positive")
        if cls.issuer is not None and cls.issuer not in self._agents:
            raise UnknownIssuerError(cls.issuer)
        if recipient not in self._agents:
            raise UnknownAgentError(recipient)
        if cls.kind is InstrumentKind.PSI:
            if cls not in self._psi_gates:
                raise UngatedPsiIssueError(cls.backing)
            self._psi_gates.discard(cls)
        cid = self.define_class(cls)
        self.batches[cid].issued += amount
        self.group_outstanding[cls.kind.group] += amount * cls.denomination
        self._credit(recipient, cid, amount, cls.kind.group, amount * cls.denomination)
        self.events.append(self.tick, 0, cid, NO_AGENT, recipient, amount)
        return cid

    def transfer(self, src: int, dst: int, class_id: int, amount: int) -> LedgerEvent:
        if amount <= 0:
            raise ZeroAmountError("transfer amount must be positive")
        if src == dst:
            raise SelfTransferError(src)
        if not 0 <= class_id < len(self._meta):
            raise UnknownClassError(class_id)
        if dst not in self._by_agent:
            raise UnknownAgentError(dst)
        self.move(src, dst, class_id, amount)
        return LedgerEvent(self.tick, "transfer", class_id, src, dst, amount)

    def move(self, src: int, dst: int, class_id: int, amount: int) -> None:
        """Transfer for callers that already hold a positive amount, a known class and two distinct agents.

        Overdrafts are still refused; nothing else is re-checked and no event object is built.
        """
        row = self._by_agent.get(src)
        have = row.get(class_id, 0) if row is not None else 0
        if have < amount:
            raise InsufficientBalanceError(f"agent {src} holds {have} of class {class_id}, needs {amount}")
        group, den = self._meta[class_id]
        value = amount * den
        col = self._by_class[class_id]
        left = have - amount
        if left:
            row[class_id] = left
            col[src] = left
        else:
            del row[class_id]
            del col[src]
        gv = self._group_value[group]
        gv[src] -= value
        drow = self._by_agent[dst]
        drow[class_id] = drow.get(class_id, 0) + amount
        col[dst] = col.get(dst, 0) + amount
        gv[dst] = gv.get(dst, 0) + value
        self.events._data.extend((self.tick, 1, class_id, src, dst, amount))

    def redeem_destroy(self, bearer: int, class_id: int, amount: int, presented_to: int | None = None) -> LedgerEvent:
        """Terminate ``amount`` units held by ``bearer`` by presenting them to the issuer.

        ``presented_to`` defaults to the class issuer; only the issuer or one of
        its registered delegates may terminate units.
        """
        cls = self.get_class(class_id)
        if amount <= 0:
            raise ZeroAmountError("redemption amount must be positive")
        batch = self.batches[class_id]
        if batch.outstanding == 0:
            raise AlreadyExhaustedError(class_id)
        if presented_to is None:
            presented_to = cls.issuer
        if presented_to != cls.issuer and presented_to not in self._delegates.get(class_id, ()):
            raise WrongIssuerError(f"class {class_id} cannot be redeemed at agent {presented_to}")
        have = self._by_agent.get(bearer, {}).get(class_id, 0)
        if have < amount:
            raise InsufficientBalanceError(f"agent {bearer} holds {have} of class {class_id}, needs {amount}")
        self._debit(bearer, class_id, amount, cls.kind.group, amount * cls.denomination)
        batch.destroyed += amount
        self.group_outstanding[cls.kind.group] -= amount * cls.denomination
        dst = NO_AGENT if presented_to is None else presented_to
        self.events.append(self.tick, 2, class_id, bearer, dst, amount)
        return LedgerEvent(self.tick, "destroy", class_id, bearer, dst, amount)

    # -- queries -----------------------------------------------------------

    def outstanding(self, class_id: int) -> int:
        self.get_class(class_id)
        return self.batches[class_id].outstanding

    def balance(self, agent: int, class_id: int) -> int:
        return self._by_agent.get(agent, {}).get(class_id, 0)

    def holdings(self, agent: int) -> dict[int, int]:
        """Read-only view of ``{class_id: units}`` for one agent."""
        return self._by_agent.get(agent, {})

    def balance_rows(self) -> dict[int, dict[int, int]]:
        """Read-only view of every agent's ``{class_id: units}`` row, keyed by agent."""
        return self._by_agent

    def holders(self, class_id: int) -> dict[int, int]:
        """Read-only view of ``{agent: units}`` for one class."""
        return self._by_class[class_id]

    def group_value(self, agent: int, group: str) -> int:
        return self._group_value[group].get(agent, 0)

    def group_values(self, group: str) -> dict[int, int]:
        return self._group_value[group]

    def agents(self) -> list[int]:
        return sorted(self._agents)

    def check_conservation(self) -> list[str]:
        """Return a description of every conservation violation (empty when sound)."""
        problems = []
        for cid, batch in enumerate(self.batches):
            total = sum(self._by_class[cid].values())
            if batch.destroyed > batch.issued or batch.destroyed < 0:
                problems.append(f"class {cid}: destroyed {batch.destroyed} > issued {batch.issued}")
            if total != batch.outstanding:
                problems.append(f"class {cid}: balances {total} != outstanding {batch.outstanding}")
            if any(v < 0 for v in self._by_class[cid].values()):
                problems.append(f"class {cid}: negative balance")
        return problems


def replay(events: Iterable[LedgerEvent], n_classes: int | None = None) -> tuple[dict[tuple[int, int], int], list[int], list[int]]:
    """Rebuild balances from an event log without trusting the live ledger.

    Returns ``(balances, issued, destroyed)``.  Raises ``InsufficientBalanceError``
    if any event spends units the holder does not have, which is how a
    resurrected (already destroyed) unit would show up.
    """
    balances: dict[tuple[int, int], int] = {}
    issued: dict[int, int] = {}
    destroyed: dict[int, int] = {}
    for ev in events:
        if ev.kind == "issue":
            key = (ev.dst, ev.class_id)
            balances[key] = balances.get(key, 0) + ev.amount
            issued[ev.class_id] = issued.get(ev.class_id, 0) + ev.amount
            continue
        key = (ev.src, ev.class_id)
        have = balances.get(key, 0)
        if have < ev.amount:
            raise InsufficientBalanceError(f"replay: agent {ev.src} spends {ev.amount} of class {ev.class_id} holding {have}")
        if have == ev.amount:
            del balances[key]
        else:
            balances[key] = have - ev.amount
        if ev.kind == "transfer":
            dkey = (ev.dst, ev.class_id)
            balances[dkey] = balances.get(dkey, 0) + ev.amount
        else:
            destroyed[ev.class_id] = destroyed.get(ev.class_id, 0) + ev.amount
    n = n_classes if n_classes is not None else max([*issued, *destroyed, -1]) + 1
    return (
        balances,
        [issued.get(c, 0) for c in range(n)],
        [destroyed.get(c, 0) for c in range(n)],
    )
