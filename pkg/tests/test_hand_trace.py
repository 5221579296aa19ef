"""Three households, one public provider, two ticks, traced by hand.

Setup: goods A, B (durable) and C (perishable), cost 1, utility 3, all
posted PSI prices 2.0, no valuation noise, one unit of output per tick,
rotate matching, budget fraction 0.5 for everyone, lot 1, every member demands one unit
of public service per tick at price 1, one founding project worth 30 PSI.

Tick 1
  service: 3 pays 1 (holds 30); 0, 1, 2 hold nothing and stay pending
  pairs (0,1) (2,3)
    0<-1  barter 1 A for 1 B at ratio 2/2
    1<-0  seller 0 has no A left
    2<-3  provider sells nothing
    3<-2  budget min(29, 14) = 14, want 7 > lot 1, pays floor(1 * 2) = 2 PSI for 1 C
  consumption: refs not yet set for savings, so propensity = 0.05
  price C: 2 * (1 + 0.1 * (7 - 1) / 7)
Tick 2
  service: 2 pays 1 (holds 2), 3 pays 1 (holds 28)
  pairs (1,2) (3,0)
    1<-2  barter B for C at ratio pC/pB, limited by 1 B held
    2<-1  seller 1 has no B left
    3<-0  budget min(26, 13) = 13, want 6.5, pays 2 PSI for 1 A
    0<-3  provider sells nothing
  price A: 2 * (1 + 0.1 * (6.5 - 1) / 6.5)
"""
import json

import pytest

from psimarket.dynamics import build_world, step
from psimarket.scenario import parse_scenario

FIXTURE = {
    "regime": "Psi",
    "agents": {"count": 3, "providers": 1},
    "horizon": 2,
    "seed": 7,
    "noise_sigma": 0.0,
    "goods": [
        {"name": "A", "durable": True, "production_cost": 1.0, "base_utility": 3.0},
        {"name": "B", "durable": True, "production_cost": 1.0, "base_utility": 3.0},
        {"name": "C", "durable": False, "production_cost": 1.0, "base_utility": 3.0},
    ],
    "production": {"mode": "deterministic", "rate": 1.0, "endowment": 0.0},
    "matching": {"mode": "rotate"},
    "trade": {"budget_fraction": 0.5, "lot": 1.0, "initial_prices": [2.0, 2.0, 2.0]},
    "psi": {
        "service_demand_rate": 1.0,
        "service_price": 1,
        "initial_projects": [30],
        "new_projects": False,
        "provider_funding": "none",
        "provider_budget_fraction": 0.5,
        "founding_payout": False,
    },
}

# (tick, kind, class, from, to, amount); -1 marks "no agent"
EXPECTED_EVENTS = [
    (0, "issue", 0, -1, 3, 30),
    (1, "destroy", 0, 3, 3, 1),
    (1, "transfer", 0, 3, 2, 2),
    (2, "destroy", 0, 2, 3, 1),
    (2, "destroy", 0, 3, 3, 1),
    (2, "transfer", 0, 3, 0, 2),
]

B0, K, ALPHA = 0.05, 0.8, 0.01
P_C1 = 2.0 * (1 + 0.1 * 6 / 7)
P_A2 = 2.0 * (1 + 0.1 * 5.5 / 6.5)
# tick 2 propensity: M = 27 held, M_ref = 30 + 0.01 * (29 - 30), S = 3 * (0.95 + 0.95 + 1 + 1), S_ref = 6
R2 = (27 / (30 + ALPHA * (29 - 30))) / ((3 * 3.9) / 6.0)
C2 = B0 * (1 + K * (R2 - 1))
X2 = P_C1 / 2.0  # B per C in the tick-2 barter
Q2 = 1.0 / X2  # C received for the single B held

EXPECTED_INVENTORY = [
    [0.0, 0.95 * (1 - C2), 0.0],
    [0.95 * (1 - C2), 0.0, 0.0],
    [0.0, 1.0 * (1 - C2), 0.0],
    [1.0 * (1 - C2), 0.0, 0.0],
]


def _world():
    cfg = parse_scenario(json.dumps(FIXTURE))
    return build_world(cfg)


def test_hand_trace_event_log_matches():
    world = _world()
    step(world)
    step(world)
    got = [(e.tick, e.kind, e.class_id, e.src, e.dst, e.amount) for e in world.ledger.events]
    assert got == EXPECTED_EVENTS


def test_hand_trace_state_after_two_ticks():
    world = _world()
    step(world)
    assert world.propensity == pytest.approx(B0)
    step(world)
    assert world.tick == 2
    assert world.propensity == pytest.approx(C2, rel=1e-12)
    psi = world.prices["psi"]
    assert psi[0] == pytest.approx(P_A2, rel=1e-12)
    assert psi[1] == pytest.approx(2.0)
    assert psi[2] == pytest.approx(P_C1, rel=1e-12)
    for agent, row in enumerate(EXPECTED_INVENTORY):
        assert world.inventory_row(agent) == pytest.approx(row, abs=1e-12), agent
    # the tick-2 barter used up 1's single B and left 2 with the unsold C fraction, both perishable
    assert Q2 < 1.0
    assert world.ledger.balance(3, 0) == 24
    assert world.ledger.balance(2, 0) == 1
    assert world.ledger.balance(0, 0) == 2
    assert world.psi.pending_demand == {0, 1}
