import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psimarket import metrics as mx
from psimarket.errors import (
    AllZeroError,
    MismatchedAgentsError,
    MissingBaseError,
    SeriesTooShortError,
    ZeroOutstandingError,
)
from psimarket.instruments import InstrumentClass, InstrumentKind, Ledger


def test_gini_examples():
    assert mx.gini([1, 1, 1, 1]) == 0.0
    assert mx.gini([0, 0, 0, 100]) == pytest.approx(0.75)
    assert mx.gini([7]) == 0.0
    with pytest.raises(AllZeroError):
        mx.gini([0, 0])


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=50).filter(lambda v: sum(v) > 0))
def test_gini_matches_pairwise_definition(values):
    x = np.asarray(values)
    pairwise = np.abs(x[:, None] - x[None, :]).sum() / (2 * len(x) ** 2 * x.mean())
    assert mx.gini(values) == pytest.approx(min(1.0, pairwise), abs=1e-9)


def test_cantillon_gradient_examples():
    ranks = np.arange(10)
    assert mx.cantillon_gradient(ranks, -ranks) == pytest.approx(-1.0)
    assert mx.cantillon_gradient(ranks, np.full(10, 3.0)) == pytest.approx(0.0)


def test_price_index_examples():
    assert mx.price_index([3, 5], [3, 5], [1, 2]) == 1.0
    assert mx.price_index([6, 10], [3, 5], [1, 2]) == 2.0
    assert mx.price_index([4, 5], [3, 5], [1, 2]) == pytest.approx(14 / 13)
    with pytest.raises(MissingBaseError):
        mx.price_index([1], None, [1])


def test_velocity_examples():
    assert mx.velocity(200, 100) == 2.0
    assert mx.velocity(0, 100) == 0.0
    with pytest.raises(ZeroOutstandingError):
        mx.velocity(10, 0)


def test_velocity_from_event_log():
    ledger = Ledger(range(3))
    cid = ledger.issue(InstrumentClass(InstrumentKind.IOU, 0, "x"), 1, 100)
    ledger.tick = 1
    ledger.transfer(1, 2, cid, 120 - 20)
    ledger.transfer(2, 1, cid, 100)
    got = mx.velocity_from_log(ledger.events, [cid], 1, 2, [100])
    assert got == 2.0
    assert mx.velocity_from_log(ledger.events, [cid], 5, 9, [100]) == 0.0


def test_distribution_shift_examples():
    assert mx.distribution_shift([1, 2, 3], [2, 4, 6]) == 0.0
    assert mx.distribution_shift([5, 0], [0, 9]) == pytest.approx(2.0)
    with pytest.raises(MismatchedAgentsError):
        mx.distribution_shift([1, 2], [1, 2, 3])
    with pytest.raises(MismatchedAgentsError):
        mx.distribution_shift({0: 1, 1: 2}, {0: 1, 2: 2})


def test_boom_bust_flat_and_noise():
    assert mx.detect_boom_bust(np.ones(600), 400) == []
    rng = np.random.default_rng(3)
    base = rng.normal(10, 1, 400)
    sd = base.std()
    quiet = np.concatenate([base, 10 + rng.uniform(-0.5, 0.5, 400) * sd])
    assert mx.detect_boom_bust(quiet, 400, 1.0) == []


def test_boom_bust_step_up_then_down():
    rng = np.random.default_rng(4)
    base = rng.normal(10, 1, 400)
    series = np.concatenate([base, np.full(20, 14.0), np.full(20, 6.0), rng.normal(10, 0.2, 100)])
    eps = mx.detect_boom_bust(series, 400, 1.0)
    assert len(eps) == 1
    assert eps[0].start == 400 and eps[0].trough >= 420


def test_boom_bust_too_short():
    with pytest.raises(SeriesTooShortError):
        mx.detect_boom_bust(np.ones(100), 400)


def test_sign_tally():
    assert mx.sign_tally([1.0, -2.0, 0.0, 3.0]) == {"positive": 2, "negative": 1, "zero": 1}
