import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psimarket.errors import (
    AlreadyExhaustedError,
    InsufficientBalanceError,
    InvalidInstrumentError,
    SelfTransferError,
    UngatedPsiIssueError,
    UnknownAgentError,
    WrongIssuerError,
    ZeroAmountError,
)
from psimarket.instruments import EventLog, InstrumentClass, InstrumentKind, Ledger, replay

ROAD = InstrumentClass(InstrumentKind.PSI, 0, "road")
GOLD_IOU = InstrumentClass(InstrumentKind.IOU, 1, "gold")


def _road_ledger(units=100):
    ledger = Ledger(range(4), ["grain"])
    ledger.open_psi_gate(ROAD)
    cid = ledger.issue(ROAD, 0, units)
    return ledger, cid


def test_issue_credits_contractor():
    ledger, cid = _road_ledger()
    assert ledger.balance(0, cid) == 100
    assert ledger.outstanding(cid) == 100


def test_issue_zero_rejected():
    ledger = Ledger(range(3))
    with pytest.raises(ZeroAmountError):
        ledger.issue(GOLD_IOU, 0, 0)


def test_psi_issue_needs_open_gate():
    ledger = Ledger(range(2))
    with pytest.raises(UngatedPsiIssueError):
        ledger.issue(ROAD, 0, 10)
    ledger.open_psi_gate(ROAD)
    ledger.issue(ROAD, 0, 10)
    # the gate admits one issuance only
    with pytest.raises(UngatedPsiIssueError):
        ledger.issue(ROAD, 0, 10)


def test_overdraft_rejected():
    ledger, cid = _road_ledger(30)
    with pytest.raises(InsufficientBalanceError):
        ledger.transfer(0, 1, cid, 50)


def test_transfer_whole_issue_keeps_sum():
    ledger, cid = _road_ledger()
    ledger.transfer(0, 2, cid, 100)
    assert ledger.balance(2, cid) == 100
    assert sum(ledger.holders(cid).values()) == 100


def test_transfer_zero_and_self_rejected():
    ledger, cid = _road_ledger()
    with pytest.raises(ZeroAmountError):
        ledger.transfer(0, 1, cid, 0)
    with pytest.raises(SelfTransferError):
        ledger.transfer(0, 0, cid, 1)
    with pytest.raises(UnknownAgentError):
        ledger.transfer(0, 99, cid, 1)


def test_redeem_reduces_outstanding():
    ledger, cid = _road_ledger()
    ledger.transfer(0, 1, cid, 100)
    ledger.redeem_destroy(1, cid, 40)
    assert ledger.outstanding(cid) == 60


def test_redeem_at_non_issuer_rejected():
    ledger, cid = _road_ledger()
    ledger.transfer(0, 1, cid, 10)
    with pytest.raises(WrongIssuerError):
        ledger.redeem_destroy(1, cid, 5, presented_to=2)


def test_two_step_redeem_overdraws():
    ledger, cid = _road_ledger()
    ledger.transfer(0, 1, cid, 100)
    ledger.redeem_destroy(1, cid, 40)
    with pytest.raises(InsufficientBalanceError):
        ledger.redeem_destroy(1, cid, 70)


def test_outstanding_after_full_destruction():
    ledger, cid = _road_ledger(10)
    ledger.transfer(0, 1, cid, 10)
    ledger.redeem_destroy(1, cid, 10)
    assert ledger.outstanding(cid) == 0
    with pytest.raises(AlreadyExhaustedError):
        ledger.redeem_destroy(1, cid, 1)


def test_delegate_may_collect():
    ledger, cid = _road_ledger()
    ledger.transfer(0, 1, cid, 10)
    ledger.add_delegate(cid, 3)
    ledger.redeem_destroy(1, cid, 4, presented_to=3)
    assert ledger.outstanding(cid) == 96


def test_class_invariants():
    with pytest.raises(InvalidInstrumentError):
        InstrumentClass(InstrumentKind.IOU, None, "x")
    with pytest.raises(InvalidInstrumentError):
        InstrumentClass(InstrumentKind.COMMODITY_MONEY, 3, "grain")
    with pytest.raises(InvalidInstrumentError):
        Ledger(range(2), ["grain"]).define_class(InstrumentClass(InstrumentKind.COMMODITY_MONEY, None, "silk"))


def test_event_log_roundtrip(tmp_path):
    ledger, cid = _road_ledger()
    ledger.tick = 3
    ledger.transfer(0, 1, cid, 7)
    ledger.redeem_destroy(1, cid, 2)
    path = tmp_path / "events.csv"
    ledger.events.to_csv(path)
    back = EventLog.read_csv(path)
    assert list(back) == list(ledger.events)
    assert back.digest() == ledger.events.digest()
    assert ledger.events[-1].kind == "destroy"


ops = st.lists(
    st.tuples(st.sampled_from(["issue", "transfer", "destroy"]), st.integers(0, 4), st.integers(0, 4),
              st.integers(0, 2), st.integers(1, 20)),
    max_size=120,
)


@settings(max_examples=150, deadline=None)
@given(ops)
def test_conservation_under_random_ops(seq):
    classes = [GOLD_IOU, InstrumentClass(InstrumentKind.IOU, 2, "salt"),
               InstrumentClass(InstrumentKind.FIAT_NOTE, None, "note")]
    ledger = Ledger(range(5))
    for op, a, b, k, amt in seq:
        cls = classes[k]
        cid = ledger.find_class(cls)
        try:
            if op == "issue":
                ledger.issue(cls, a, amt)
            elif cid is not None and op == "transfer":
                ledger.transfer(a, b, cid, amt)
            elif cid is not None:
                ledger.redeem_destroy(a, cid, amt, presented_to=cls.issuer)
        except (InsufficientBalanceError, SelfTransferError, AlreadyExhaustedError, WrongIssuerError):
            pass
        assert ledger.check_conservation() == []
    # rebuilding from the log alone agrees with the live ledger
    balances, issued, destroyed = replay(ledger.events)
    for (agent, cid), units in balances.items():
        assert ledger.balance(agent, cid) == units
    for cid, batch in enumerate(ledger.batches):
        assert (issued[cid], destroyed[cid]) == (batch.issued, batch.destroyed)


def test_move_matches_transfer_and_refuses_overdraft():
    a, b = Ledger(range(3)), Ledger(range(3))
    for led in (a, b):
        cid = led.issue(GOLD_IOU, 1, 10)
    a.transfer(1, 2, cid, 4)
    b.move(1, 2, cid, 4)
    assert a.events.digest() == b.events.digest()
    assert b.holders(cid) == {1: 6, 2: 4} and b.group_value(2, "iou") == 4
    with pytest.raises(InsufficientBalanceError):
        b.move(2, 0, cid, 5)
    assert b.holders(cid) == {1: 6, 2: 4} and len(b.events) == 2
