import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psimarket.agents import (
    Action,
    Agent,
    ObjectiveValues,
    Role,
    decide_action,
    equity,
    spending_order,
    subjective_value,
    valuation_vector,
)
from psimarket.errors import UnknownGoodError
from psimarket.exchange import RegimeContext
from psimarket.instruments import InstrumentClass, InstrumentKind

PSI = InstrumentClass(InstrumentKind.PSI, 0, "road")
IOU = InstrumentClass(InstrumentKind.IOU, 1, "iou:1")
NOTE = InstrumentClass(InstrumentKind.FIAT_NOTE, None, "note")
SALT = InstrumentClass(InstrumentKind.COMMODITY_MONEY, None, "salt")


def _agent(noise=(1.0, 1.0), **kw):
    return Agent(0, Role.HOUSEHOLD, 0, np.asarray(noise, dtype=float), **kw)


def test_zero_noise_matches_objective():
    obj = ObjectiveValues([3.0, 2.0])
    assert subjective_value(_agent(), {0: 2, 1: 1}, 0, obj) == 8.0


def test_empty_bundle_worth_nothing():
    assert subjective_value(_agent(), {}, 0, ObjectiveValues([3.0, 2.0])) == 0.0


def test_noise_product_sum():
    assert subjective_value(_agent((1.5, 1.0)), {0: 2}, 0, ObjectiveValues([3.0, 2.0])) == pytest.approx(9.0)


def test_unknown_good():
    with pytest.raises(UnknownGoodError):
        subjective_value(_agent(), {5: 1}, 0, ObjectiveValues([3.0, 2.0]))


def test_schedule_changes_values():
    obj = ObjectiveValues([1.0, 1.0], {10: [2.0, 1.0]})
    assert valuation_vector(_agent(), 9, obj) == [1.0, 1.0]
    assert valuation_vector(_agent(), 10, obj) == [2.0, 1.0]


def test_equity_cases():
    obj = ObjectiveValues([1.0, 1.0])
    a = _agent(inventory={0: 10.0}, liabilities=[4.0])
    assert equity(a, obj, 0) == 6.0
    assert equity(_agent(inventory={0: 10.0}), obj, 0) == 10.0
    assert equity(_agent(inventory={0: 1.0}, liabilities=[4.0]), obj, 0) == -3.0


def test_agent_invariants():
    with pytest.raises(ValueError):
        _agent(time_preference=0.0)
    with pytest.raises(ValueError):
        _agent(inventory={0: -1.0})


@pytest.mark.parametrize("interest,cost,acts", [(5, 3, True), (2, 3, False), (3, 3, False)])
def test_decide_action_strict(interest, cost, acts):
    got = decide_action(None, [Action("trade", interest, cost)])
    assert (got is not None) == acts


def test_decide_action_largest_margin():
    got = decide_action(None, [Action("a", 5, 4), Action("b", 9, 4), Action("c", 7, 4)])
    assert got.name == "b"


def test_spending_order_examples():
    psi_ctx = RegimeContext(regime="Psi")
    assert spending_order(None, [IOU, PSI], psi_ctx) == [PSI, IOU]
    assert spending_order(None, [IOU], psi_ctx) == [IOU]
    fiat_ctx = RegimeContext(regime="Fiat", legal_tender=True, tax_currency=True)
    assert spending_order(None, [IOU, NOTE], fiat_ctx) == [NOTE, IOU]


@given(st.lists(st.sampled_from([PSI, IOU, NOTE, SALT,
                                 InstrumentClass(InstrumentKind.INVOICE, 2, "inv:2")]), min_size=1, max_size=12))
def test_invoices_always_spent_first(wallet):
    for ctx in (RegimeContext(regime="Psi"), RegimeContext(regime="Fiat", tax_currency=True)):
        order = spending_order(None, wallet, ctx)
        kinds = [c.kind in (InstrumentKind.PSI, InstrumentKind.INVOICE) for c in order]
        # every invoice class precedes every non-invoice class
        assert kinds == sorted(kinds, reverse=True)
