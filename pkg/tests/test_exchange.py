import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psimarket.agents import Agent, Role
from psimarket.errors import (
    DoubleCompletionError,
    MediumRejectedError,
    UnknownClassError,
    UnknownGoodError,
    WrongBearerError,
)
from psimarket.exchange import (
    ContractState,
    CredibilityBook,
    ExchangeDesk,
    MarketabilityTable,
    Medium,
    RegimeContext,
    TradeOutcome,
    accept_decision,
    marketability_update,
)
from psimarket.instruments import InstrumentClass, InstrumentKind, Ledger

GOODS = ["grain", "cloth"]


def _agents(n=3, threshold=0.5):
    return [Agent(i, Role.HOUSEHOLD, i % 2, np.ones(2), acceptance_threshold=threshold) for i in range(n)]


def _desk(threshold=0.5, cred=None):
    ledger = Ledger(range(3), GOODS)
    inv = [[5.0, 5.0] for _ in range(3)]
    desk = ExchangeDesk(ledger, inv, _agents(threshold=threshold), GOODS, cred)
    return desk, ledger, inv


def test_barter_completes_at_creation():
    desk, ledger, inv = _desk()
    c = desk.settle_first_half(0, 1, 0, 2.0, Medium.BARTER, ctx=RegimeContext(), counter_good=1, counter_qty=1.5)
    assert c.state is ContractState.COMPLETED
    assert len(ledger.classes) == 0
    assert inv[0] == [3.0, 6.5] and inv[1] == [7.0, 3.5]


def test_iou_first_half_opens_contract():
    desk, ledger, inv = _desk()
    c = desk.settle_first_half(0, 1, 0, 1.0, Medium.IOU, ctx=RegimeContext(), units=10)
    assert c.state is ContractState.OPEN
    assert ledger.balance(0, c.class_id) == 10
    assert ledger.get_class(c.class_id).issuer == 1


def test_low_credibility_iou_rejected():
    book = CredibilityBook()
    for honored in (True, False, False, False, False, False, False, False):
        book.record(1, honored)
    assert book.score(1) == pytest.approx(0.2)
    desk, ledger, inv = _desk(cred=book)
    ctx = RegimeContext(credibility=book)
    with pytest.raises(MediumRejectedError):
        desk.settle_first_half(0, 1, 0, 1.0, Medium.IOU, ctx=ctx, units=10)
    assert inv[0][0] == 5.0


def test_complete_exchange_destroys_claims():
    desk, ledger, inv = _desk()
    c = desk.settle_first_half(0, 1, 0, 1.0, Medium.IOU, ctx=RegimeContext(), units=10)
    desk.complete_exchange(c, 0, 1, 2.0, tick=4)
    assert c.state is ContractState.COMPLETED
    assert ledger.outstanding(c.class_id) == 0
    assert inv[0][1] == 7.0
    with pytest.raises(DoubleCompletionError):
        desk.complete_exchange(c, 0, 1, 2.0)


def test_complete_by_non_bearer_rejected():
    desk, ledger, inv = _desk()
    c = desk.settle_first_half(0, 1, 0, 1.0, Medium.IOU, ctx=RegimeContext(), units=10)
    with pytest.raises(WrongBearerError):
        desk.complete_exchange(c, 2, 1, 2.0)


def test_redemption_attribution_fifo():
    desk, ledger, inv = _desk()
    a = desk.settle_first_half(0, 1, 0, 1.0, Medium.IOU, ctx=RegimeContext(), units=4)
    b = desk.settle_first_half(0, 1, 0, 1.0, Medium.IOU, ctx=RegimeContext(), units=6)
    ledger.redeem_destroy(0, a.class_id, 5)
    closed = desk.attribute_redemption(a.class_id, 5, 1)
    assert closed == [a]
    assert b.remaining == 5
    assert desk.open_units(a.class_id) == ledger.outstanding(a.class_id)


def _psi_ctx(**kw):
    base = dict(regime="Psi", psi_requested=frozenset({"road"}), psi_delivered=frozenset({"road"}),
                society=frozenset({0, 1, 2}))
    base.update(kw)
    return RegimeContext(**base)


def test_accept_requested_psi():
    agent = _agents()[1]
    got = accept_decision(agent, InstrumentClass(InstrumentKind.PSI, 0, "road"), _psi_ctx())
    assert got.accepted and got.reason == "ContractObligation"


def test_reject_unrequested_psi():
    agent = _agents()[1]
    got = accept_decision(agent, InstrumentClass(InstrumentKind.PSI, 0, "fountain"), _psi_ctx())
    assert not got.accepted and got.reason == "NotRequested"


def test_reject_psi_outside_society():
    agent = Agent(7, Role.HOUSEHOLD, 0, np.ones(2))
    got = accept_decision(agent, InstrumentClass(InstrumentKind.PSI, 0, "road"), _psi_ctx())
    assert got.reason == "NotMember"


def test_iou_below_threshold():
    agent = _agents()[0]
    got = accept_decision(agent, InstrumentClass(InstrumentKind.IOU, 1, "iou:1"), RegimeContext(credibility={1: 0.2}))
    assert not got.accepted and got.reason == "LowCredibility"


def test_fiat_legal_tender_and_commodity():
    agent = _agents()[0]
    note = InstrumentClass(InstrumentKind.FIAT_NOTE, None, "note")
    assert accept_decision(agent, note, RegimeContext(regime="Fiat", legal_tender=True)).reason == "LegalTender"
    assert not accept_decision(agent, note, RegimeContext(regime="Psi"))
    salt = InstrumentClass(InstrumentKind.COMMODITY_MONEY, None, "salt")
    assert accept_decision(agent, salt, RegimeContext(marketability={"salt": 0.7}))
    assert not accept_decision(agent, salt, RegimeContext(marketability={"salt": 0.2}))


def test_unknown_class():
    with pytest.raises(UnknownClassError):
        accept_decision(_agents()[0], None, RegimeContext())


@given(st.integers(1, 60))
def test_consecutive_acceptances_never_lower_score(k):
    table = MarketabilityTable({"salt": 0.3, "grain": 0.3})
    prev = table["salt"]
    for _ in range(k):
        marketability_update(table, TradeOutcome("salt", True))
        assert prev <= table["salt"] <= 1.0
        prev = table["salt"]


def test_inactivity_decays_to_baseline_closed_form():
    table = MarketabilityTable({"salt": 0.9}, rate=0.05, baseline=0.1)
    w = 40
    for _ in range(w):
        marketability_update(table, TradeOutcome("salt", False))
    assert table["salt"] == pytest.approx(0.1 + 0.8 * 0.95 ** w)


def test_update_unknown_good():
    with pytest.raises(UnknownGoodError):
        marketability_update(MarketabilityTable({"salt": 0.5}), TradeOutcome("silk", True))
