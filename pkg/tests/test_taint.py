import random

import pytest

from invguard.abi import TRANSFER
from invguard.errors import TrackerDesync
from invguard.storage import StorageLayout, collect_preimages
from invguard.synthetic import Frame, World, execute
from invguard.taint import TaintTrackers, labels_of, run_taint, step
from invguard.trace import StructLogEntry, TxMetadata, norm_addr
from invguard.tree import build_invocation_tree, segment_for_target

from taint_oracle import TARGET, agrees, random_program, run_program

T = norm_addr(0x7A57)
TOKEN = norm_addr(0x70CE)
A = norm_addr(0xA11CE)


def _run(code, value=0, data=b"\x00" * 36):
    w = World()
    w.deploy(T, code)
    w.deploy(TOKEN, lambda f: f.push(1).ret_word())
    w.balances[T] = 10**20
    meta = TxMetadata("0x" + "22" * 32, 1, 1, norm_addr(0xE0A), T, value, 1_000_000, 0, data)
    entries = execute(w, meta)
    return meta, entries


def _walk(entries, upto=None):
    tr = TaintTrackers()
    for i, e in enumerate(entries[:upto]):
        step(e, tr, frame=0, index=i)
    return tr


def test_callvalue_add_taints_result():
    _, entries = _run(lambda f: f.op("CALLVALUE").push(0).op("ADD").stop(), value=5)
    tr = _walk(entries, 3)
    (label,) = labels_of(tr.stack[-1])
    assert label.source_op == "CALLVALUE" and label.source_kind == "callData"


def test_sload_untainted_is_fresh_source():
    _, entries = _run(lambda f: f.push(9).op("SLOAD").stop())
    tr = _walk(entries, 2)
    (label,) = labels_of(tr.stack[-1])
    assert label.source_kind == "storage"


def test_mstore_mload_round_trip():
    _, entries = _run(lambda f: f.op("CALLER").push(0).op("MSTORE").push(0).op("MLOAD").stop())
    tr = _walk(entries, 5)
    assert {lb.source_op for lb in labels_of(tr.stack[-1])} == {"CALLER"}


def test_mstore8_taints_one_byte():
    _, entries = _run(lambda f: f.op("CALLER").push(3).op("MSTORE8").stop())
    tr = _walk(entries, 3)
    assert set(tr.memory) == {3}
    assert list(tr.memory[3].values()) == [0xFF]


def test_odd_calldatacopy_is_byte_exact():
    _, entries = _run(lambda f: f.push(3).push(1).push(5).op("CALLDATACOPY").stop())
    tr = _walk(entries, 4)
    assert sorted(tr.memory) == [5, 6, 7]


def test_sstore_sload_round_trip():
    _, entries = _run(lambda f: f.op("CALLER").push(1).op("SSTORE").push(1).op("SLOAD").stop())
    tr = _walk(entries, 5)
    assert {lb.source_op for lb in labels_of(tr.stack[-1])} == {"CALLER"}


def test_shift_drops_bits_positionally():
    # sources taint the whole word, so a right shift by 160 leaves the low 96 bits
    _, entries = _run(lambda f: f.op("CALLER").push(160).op("SHR").stop())
    tr = _walk(entries, 3)
    assert list(tr.stack[-1].values()) == [(1 << 96) - 1]


def test_tracker_desync():
    e = StructLogEntry(0, "ADD", 100, 3, (1, 2))
    with pytest.raises(TrackerDesync):
        step(e, TaintTrackers())


def _hits(code, value=0, layout=None, data=b"\x00" * 36):
    meta, entries = _run(code, value, data)
    root = build_invocation_tree(entries, meta)
    seg = segment_for_target(root, T, entries)
    return run_taint(seg, None, layout, collect_preimages(entries), {TOKEN})


def test_no_sinks():
    assert _hits(lambda f: f.push(1).push(2).op("ADD").stop()) == []


def test_mapping_value_reaches_erc20_transfer():
    lay = StorageLayout.from_json({"dialect": "solidity", "variables": [
        {"name": "balanceOf", "slot": 5, "offset": 0, "type": "mapping(address => uint256)"}]})

    def code(f: Frame):
        f.push(int(A, 16)).mapping_slot_from_stack(5).op("SLOAD")
        f.call_words(TOKEN, TRANSFER, [int(A, 16), None])
        f.stop()

    (hit,) = _hits(code, layout=lay)
    assert hit.sink_kind == "erc20Transfer" and hit.token == TOKEN
    paths = {lb.resolved.path for lb in hit.labels if lb.resolved is not None}
    assert f"balanceOf[{A}]" in paths


def test_calldata_value_reaches_ether_transfer():
    def code(f: Frame):
        f.push(4).op("CALLDATALOAD")
        f.push(0).op("SWAP1").push(0).op("SWAP1").push(0).op("SWAP1").push(0).op("SWAP1")
        f.push(int(A, 16)).push(50_000)
        f._call_op("CALL")
        f.stop()

    data = b"\x00" * 4 + (5).to_bytes(32, "big")
    hits = [h for h in _hits(code, data=data) if h.sink_kind == "etherTransfer"]
    (hit,) = hits
    assert hit.amount == 5 and {lb.source_kind for lb in hit.labels} == {"callData"}


def test_callvalue_is_ether_transfer_from_sink():
    hits = _hits(lambda f: f.op("CALLVALUE").op("POP").stop(), value=7)
    assert [(h.sink_kind, h.amount) for h in hits] == [("etherTransferFrom", 7)]


def test_transfer_from_requires_target_recipient():
    from invguard.abi import TRANSFER_FROM

    def code(f: Frame):
        f.call_words(TOKEN, TRANSFER_FROM, [int(A, 16), int(T, 16), 10])
        f.call_words(TOKEN, TRANSFER_FROM, [int(T, 16), int(A, 16), 10])
        f.stop()

    hits = _hits(code)
    assert [h.sink_kind for h in hits] == ["erc20TransferFrom"]


def test_run_taint_deterministic():
    prog = random_program(random.Random(4))
    meta, entries = run_program(prog, 4)
    root = build_invocation_tree(entries, meta)
    a = run_taint(segment_for_target(root, TARGET, entries))
    b = run_taint(segment_for_target(root, TARGET, entries))
    assert a == b


@pytest.mark.parametrize("seed", range(0, 2000, 20))
def test_matches_bitwise_oracle(seed):
    assert agrees(seed)
