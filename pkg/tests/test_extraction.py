from collections import Counter

import pytest

from invguard.abi import AbiCatalog
from invguard.config import AnalysisConfig
from invguard.extraction import (
    BalanceLedger, CallObs, ObservationSet, analyze_transaction, classify_enter_exit, data_location, extract,
)
from invguard.scenarios import SEL, USDC, VAULT, _calldata, _dispatch
from invguard.synthetic import World, execute
from invguard.trace import TxMetadata, norm_addr

T = norm_addr(0x7A57)
H = norm_addr(0x4E1F)
EOA = norm_addr(0xE0A)


def _reentrant_world():
    """T.a() calls H, which calls back into T.b()."""
    w = World()

    def target(f):
        sel = _dispatch(f)
        if sel == SEL["deposit"]:
            f.call_words(H, SEL["attack"], [])
        f.stop()

    def helper(f):
        f.call_words(T, SEL["withdraw"], [1])
        f.stop()

    w.deploy(T, target)
    w.deploy(H, helper)
    return w


def _analyse(w, data, to=T, origin=EOA):
    meta = TxMetadata("0x" + "ab" * 32, 10, 100, origin, to, 0, 500_000, 0, data)
    cfg = AnalysisConfig.from_dict({"target": T, "tokens": []})
    an = analyze_transaction(execute(w, meta), meta, T, AbiCatalog(), None, ())
    return extract(an, cfg), an


def test_direct_call_is_eoa_consistent():
    obs, _ = _analyse(_reentrant_world(), _calldata(SEL["withdraw"], 1))
    (call,) = obs.calls
    assert call.caller == obs.origin == EOA
    assert obs.reentry == 1


def test_nested_target_node_gives_reentry_two():
    obs, _ = _analyse(_reentrant_world(), _calldata(SEL["deposit"], 0))
    assert [c.selector for c in obs.calls] == [SEL["deposit"], SEL["withdraw"]]
    assert [c.caller for c in obs.calls] == [EOA, H]
    assert obs.reentry == 2


def test_exploit_observations(harvest, harvest_run):
    i = harvest.notes["exploitIndex"]
    an, obs = harvest_run.analyses[i], harvest_run.obs[i]
    assert an.tree.gas_entry == 9_895_111
    assert Counter(c.func for c in obs.calls) == {"deposit": 3, "withdraw": 3}
    assert all(c.caller != obs.origin for c in obs.calls)
    out = obs.flow_totals[USDC]["out"]
    assert all(o.flow_totals.get(USDC, {}).get("out", 0) < out for o in harvest_run.obs[:i])
    per_call = max(c.flows[USDC]["out"] for c in obs.calls)
    assert all(c.flows.get(USDC, {}).get("out", 0) < per_call for o in harvest_run.obs[:i] for c in o.calls)


def test_oracle_and_storage_observed(harvest_run):
    deposits = [c for o in harvest_run.obs for c in o.calls if c.func == "deposit"]
    assert all(c.oracles and c.oracles[0][0] == "pricePerShare" for c in deposits)
    assert all("totalSupply" in c.storage for c in deposits)


def test_ledger_conservation(harvest, harvest_run):
    # brute force: sum every decoded USDC transfer touching the vault
    bal = harvest.config["tokens"][0]["initialBalance"]
    for an in harvest_run.analyses:
        for t in an.transfers:
            if t["token"] != USDC:
                continue
            bal += t["amount"] if t["to"] == VAULT else -t["amount"] if t["from"] == VAULT else 0
    assert harvest_run.ledger.balances[USDC] == bal
    assert not harvest_run.ledger.unreliable


def test_root_caller_matches_origin_iff_direct(harvest, harvest_run):
    for (meta, _), o in zip(harvest.txs, harvest_run.obs):
        if o.calls:
            assert (o.calls[0].caller == meta.origin) == (meta.to == VAULT)


def test_pre_balance_is_ledger_before_tx(harvest_run):
    obs = harvest_run.obs
    for a, b in zip(obs, obs[1:]):
        f = a.flow_totals.get(USDC, {"in": 0, "out": 0})
        assert b.pre_balances[USDC] == a.pre_balances[USDC] + f["in"] - f["out"]


def test_ledger_going_negative_marks_unreliable():
    led = BalanceLedger(T, {USDC: 5})
    led.apply([{"token": USDC, "from": T, "to": EOA, "amount": 9}])
    assert led.balances[USDC] == 0 and USDC in led.unreliable


def test_missing_section_is_not_applicable(harvest, harvest_run):
    cfg = AnalysisConfig.from_dict({"target": VAULT})
    obs = extract(harvest_run.analyses[0], cfg)
    assert obs.not_applicable == {"flow", "oracle", "storage"}
    assert all(not c.flows and not c.oracles and not c.storage for c in obs.calls)


def test_extraction_is_pure(harvest, harvest_run):
    i = harvest.notes["exploitIndex"]
    a = extract(harvest_run.analyses[i], harvest_run.cfg).to_dict()
    b = extract(harvest_run.analyses[i], harvest_run.cfg).to_dict()
    assert a == b
    assert ObservationSet.from_dict(a).to_dict() == a


def _obs(sel, flows):
    c = CallObs(sel, None, EOA, 1, 1, 1, False, 0, flows=flows)
    return ObservationSet("0x01", 1, 1, EOA, [c], 1)


def test_classify_enter_exit():
    obs = [
        _obs("0x01", {USDC: {"in": 5, "out": 0}}),
        _obs("0x02", {USDC: {"in": 0, "out": 5}}),
        _obs("0x03", {USDC: {"in": 1, "out": 1}}),
        _obs("0x04", {}),
    ]
    enter, exit_ = classify_enter_exit(None, obs)
    assert enter == {"0x01", "0x03"} and exit_ == {"0x02", "0x03"}
    enter, exit_ = classify_enter_exit(None, obs, {"exit": ["0x04"]})
    assert enter == {"0x01", "0x03"} and exit_ == {"0x04"}


def test_harvest_enter_exit(harvest_run):
    assert harvest_run.enter == {SEL["deposit"]}
    assert harvest_run.exit == {SEL["withdraw"]}


@pytest.mark.parametrize("label,want", [
    ({"op": "SLOAD", "mapping": True, "pattern": "balanceOf[*]", "path": "balanceOf[0x1]", "arg": 7},
     ("MU", "balanceOf[*]")),
    ({"op": "SLOAD", "mapping": False, "pattern": None, "path": "totalSupply", "arg": 2}, ("DF", "SLOAD:totalSupply")),
    ({"op": "CALLVALUE", "arg": None}, ("CVU", "CALLVALUE@0xaa")),
    ({"op": "CALLDATALOAD", "arg": 4}, ("DF", "CALLDATALOAD@0xaa:4")),
    ({"op": "RETURNDATACOPY", "arg": None}, ("DF", "RETURNDATACOPY@0xaa")),
])
def test_data_location(label, want):
    assert data_location(label, "0xaa") == want


def test_eth_vault_ether_flows(eth_vault_run):
    flows = [c.flows.get("ether") for o in eth_vault_run.obs for c in o.calls if c.flows]
    assert any(f["in"] for f in flows) and any(f["out"] for f in flows)
