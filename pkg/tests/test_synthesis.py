import statistics
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invguard.checker import BLOCKED, GuardState, check_tx
from invguard.extraction import CallObs, ObservationSet
from invguard.manifest import APPLIED, CONTRACT, INSUFFICIENT, NOT_APPLICABLE, VIOLATED
from invguard.synthesis import (
    bound_params, bound_points, infer_bounds, infer_hypothesis, infer_lastupdate, infer_roles, lastupdate_instance,
    zscore_filter,
)
from invguard.trace import norm_addr

A, B = norm_addr(0xA), norm_addr(0xB)
DEP, WD = "0xb6b55f25", "0x2e1a7d4d"


def _call(sel, caller=A, **kw):
    return CallObs(sel, None, caller, kw.pop("gas", 100), 50, 1, False, 0, **kw)


def _tx(calls, origin=A, block=1, n=0):
    return ObservationSet(f"0x{n:064x}", block, block * 12, origin, calls, 1)


# -- hypothesis templates ----------------------------------------------------

def test_eoa_applied_when_callers_are_origins():
    train = [_tx([_call(DEP)], n=k) for k in range(3)]
    (inst,) = infer_hypothesis("EOA", train)
    assert (inst.location, inst.status) == (DEP, APPLIED)


def test_eoa_violated_by_contract_caller():
    train = [_tx([_call(DEP)]), _tx([_call(DEP, caller=B)], n=1)]
    (inst,) = infer_hypothesis("EOA", train)
    assert inst.status == VIOLATED


def test_eoa_unseen_selector_insufficient():
    out = infer_hypothesis("EOA", [_tx([_call(DEP)])], selectors=[WD])
    assert {(i.location, i.status) for i in out} == {(DEP, APPLIED), (WD, INSUFFICIENT)}


def test_ob_violated_by_enter_then_exit_in_one_block():
    # direct predicate: same origin, same block, enter before exit
    train = [_tx([_call(DEP)], block=5), _tx([_call(DEP), _call(WD)], block=9, n=1)]
    (inst,) = infer_hypothesis("OB", train, {DEP}, {WD})
    assert inst.status == VIOLATED
    (ok,) = infer_hypothesis("OB", train[:1] + [_tx([_call(WD)], block=10, n=2)], {DEP}, {WD})
    assert ok.status == APPLIED


def test_ob_across_transactions_in_one_block():
    train = [_tx([_call(DEP)], block=9), _tx([_call(WD)], block=9, n=1)]
    assert infer_hypothesis("OB", train, {DEP}, {WD})[0].status == VIOLATED
    # a different origin in the same block is fine
    train[1] = _tx([_call(WD, caller=B)], origin=B, block=9, n=1)
    assert infer_hypothesis("OB", train, {DEP}, {WD})[0].status == APPLIED


def test_sb_ob_need_enter_and_exit():
    assert infer_hypothesis("SB", [_tx([_call(DEP)])], {DEP}, set())[0].status == NOT_APPLICABLE


# -- roles ---------------------------------------------------------------------

def test_roles():
    one = [_tx([_call("0x01", caller=A)])]
    (so,) = infer_roles("SO", one)
    assert so.status == APPLIED and so.params == {"owner": A}
    six = [_tx([_call("0x01", caller=norm_addr(k))], n=k) for k in range(1, 7)]
    assert infer_roles("SM", six)[0].status == VIOLATED
    three = [_tx([_call("0x01")], origin=norm_addr(k), n=k) for k in range(1, 4)]
    (om,) = infer_roles("OM", three)
    assert om.status == APPLIED and len(om.params["managers"]) == 3
    assert infer_roles("SO", [], selectors=["0x01"])[0].status == INSUFFICIENT


# -- bounds ----------------------------------------------------------------------

def test_tiu_max():
    (inst,) = infer_bounds("TIU", {"tok": [5, 7, 12]})
    assert inst.params == {"valueVar": 12}


def test_or_twenty_percent():
    (inst,) = infer_bounds("OR", {"p": [100, 120]})
    assert inst.params == {"priceLowerbound": 80, "priceUpperbound": 144}


def test_dfl_takes_min():
    assert infer_bounds("DFL", {"x": [9, 4, 6]})[0].params == {"valueVar": 4}


def test_single_distinct_value_insufficient():
    assert infer_bounds("GS", {"s": [7, 7, 7]})[0].status == INSUFFICIENT


TORU_POP = [Fraction(1, 100)] * 98 + [Fraction(2, 100), Fraction(9, 10)]


def test_toru_zscore_population():
    # brute force in floating point, independent of the rational implementation
    xs = [float(p) for p in TORU_POP]
    mu, sigma = statistics.fmean(xs), statistics.pstdev(xs)
    assert abs(0.9 - mu) / sigma > 3 and abs(0.02 - mu) / sigma < 3
    (inst,) = infer_bounds("TORU", {"tok": TORU_POP})
    assert inst.params == {"valueVar": Fraction(1, 50)}


@pytest.mark.parametrize("pop", [
    [Fraction(k, 100) for k in range(1, 21)],
    [Fraction(1, 100)] * 50 + [Fraction(3, 100)] * 50,
    [Fraction(1, 10), Fraction(2, 10), Fraction(1, 2)],
    [Fraction(1, 100)] * 40 + [Fraction(1, 2)],
])
def test_zscore_idempotent(pop):
    once = zscore_filter(pop)
    assert zscore_filter(once) == once


@pytest.mark.xfail(strict=True, reason="a second pass over the documented TORU population also drops 0.02 (z about 9.9)")
def test_zscore_idempotent_on_documented_population():
    once = zscore_filter(TORU_POP)
    assert zscore_filter(once) == once


def test_od_consecutive_deviation():
    calls = [_call(DEP, oracles=[("p", v)]) for v in (100, 110, 88)]
    pts = bound_points("OD", [_tx(calls)])
    assert bound_params("OD", pts["p"]) == (APPLIED, {"priceDeviation": Fraction(1, 5)})


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 10**9), min_size=2, max_size=30), st.integers(0, 10**9))
def test_bounds_monotone(points, extra):
    for t, key, grows in (("TIU", "valueVar", True), ("GS", "gasUpperbound", True), ("DFL", "valueVar", False)):
        s1, p1 = bound_params(t, points)
        s2, p2 = bound_params(t, points + [extra])
        if s1 != APPLIED:
            continue
        assert s2 == APPLIED
        assert (p2[key] >= p1[key]) if grows else (p2[key] <= p1[key])


# -- last update -------------------------------------------------------------------

def test_lastupdate_examples():
    assert lastupdate_instance("s", [100, 105, 112]).params == {"nbBlocks": 5}
    assert lastupdate_instance("s", [100, 100]).status == VIOLATED
    assert lastupdate_instance("s", [100]).status == INSUFFICIENT


def test_infer_lastupdate_per_selector():
    train = [_tx([_call("0x01")], block=b, n=b) for b in (100, 105, 112)]
    train.append(_tx([_call("0x02")], block=120, n=120))
    got = {i.location: i for i in infer_lastupdate(train)}
    assert got["0x01"].params == {"nbBlocks": 5} and got["0x02"].status == INSUFFICIENT


# -- self-consistency on fixture corpora ---------------------------------------------

def _replay_violations(run):
    state, bad = GuardState(), []
    for obs in run.train:
        v, state = check_tx(obs, run.manifest, state)
        bad += [k for k, r in v.results.items() if r == BLOCKED]
    return bad


@pytest.mark.parametrize("name", ["harvest_run", "eth_vault_run"])
def test_self_consistency(name, request):
    run = request.getfixturevalue(name)
    assert run.manifest.applied()
    assert _replay_violations(run) == []


def test_harvest_manifest_shape(harvest_run):
    m = harvest_run.manifest
    assert m.get("EOA", DEP).status == APPLIED
    assert m.get("OB", CONTRACT).status == APPLIED
    assert m.get("TSU", "totalSupply").params["totalSupplyUpperbound"] <= 160_000_000 * 10**6
    assert m.get("GS", DEP).params == {"gasUpperbound": 400_000}


def test_eth_vault_manifest_shape(eth_vault_run):
    m = eth_vault_run.manifest
    statuses = {(i.template, i.location): i.status for i in m.instances}
    # a contract wallet deposits, so EOA cannot hold there; three admins set the fee
    assert statuses[("EOA", "0xd0e30db0")] == VIOLATED
    om = [i for i in m.for_template("OM") if i.status == APPLIED]
    assert any(len(i.params["managers"]) == 3 for i in om)
    assert all(i.status == NOT_APPLICABLE for i in m.for_template("OR"))


def test_outlier_filtering_blocks_its_own_training_point():
    # documented trade-off: a point dropped by the z filter violates the bound learned without it
    calls = [_call(DEP, flows={"tok": {"in": 1, "out": 0}}) for _ in range(40)]
    calls.append(_call(DEP, flows={"tok": {"in": 50, "out": 0}}))
    train = [_tx([c], n=k) for k, c in enumerate(calls)]
    for o in train:
        o.pre_balances = {"tok": 100}
    train[0].calls[0].flows["tok"]["in"] = 2
    (inst,) = infer_bounds("TIRU", bound_points("TIRU", train))
    assert inst.params == {"valueVar": Fraction(1, 50)}
    blocked = [o for o in train if check_tx(o, _manifest(inst))[0].blocked]
    assert blocked == [train[-1]]


def _manifest(inst):
    from invguard.manifest import Manifest
    return Manifest("0x" + "00" * 20, [inst])
