import json

import pytest

from invguard.abi import AbiCatalog, FunctionSig, encode
from invguard.errors import MalformedTrace
from invguard.scenarios import random_call_tree
from invguard.synthetic import Frame, World, execute
from invguard.trace import TxMetadata, dump_struct_logs, norm_addr, parse_struct_logs
from invguard.tree import build_invocation_tree, decode_function_call, segment_for_target

A, B, C = norm_addr(0xA), norm_addr(0xB), norm_addr(0xC)
ORIGIN = norm_addr(0xE0A)


def _meta(to=A, data=b""):
    return TxMetadata("0x" + "11" * 32, 10, 1000, ORIGIN, to, 0, 100_000, 0, data)


def _rec(op, gas, stack=(), depth=1, pc=0):
    return {"pc": pc, "op": op, "gas": gas, "gasCost": 3, "stack": [hex(s) for s in stack], "depth": depth}


def test_parse_three_records():
    raw = json.dumps([_rec("PUSH1", 100), _rec("PUSH1", 97, [1]), _rec("ADD", 94, [1, 2])])
    entries = parse_struct_logs(raw)
    assert [e.op for e in entries] == ["PUSH1", "PUSH1", "ADD"]
    assert all(a.gas >= b.gas for a, b in zip(entries, entries[1:]))
    assert entries[2].stack == (1, 2)


def test_parse_empty_stream():
    assert parse_struct_logs("[]") == []
    assert parse_struct_logs(b"") == []


def test_parse_newline_delimited_and_memory_words():
    lines = "\n".join(json.dumps({**_rec("MLOAD", 50, [0]), "memory": ["00" * 31 + "07"]}) for _ in range(2))
    entries = parse_struct_logs(lines)
    assert len(entries) == 2 and entries[0].memory[-1] == 7


def test_parse_rejects_wide_word():
    raw = json.dumps([_rec("PUSH1", 100, [1 << 256])])
    with pytest.raises(MalformedTrace):
        parse_struct_logs(raw)


def test_parse_rejects_unknown_opcode():
    with pytest.raises(MalformedTrace):
        parse_struct_logs(json.dumps([_rec("FROB", 1)]))


def test_dump_round_trip():
    meta, entries, _ = random_call_tree(3)
    assert parse_struct_logs(json.dumps(dump_struct_logs(entries))) == entries


def test_single_frame_tree():
    entries = parse_struct_logs(json.dumps([_rec("PUSH1", 100), _rec("POP", 97, [1]), _rec("STOP", 95)]))
    root = build_invocation_tree(entries, _meta())
    assert root.children == []
    assert (root.gas_entry, root.gas_exit) == (100, 95)
    assert root.caller == ORIGIN and root.addr == A and root.call_kind == "root"


def _world(codes):
    w = World()
    for addr, code in codes.items():
        w.deploy(addr, code)
    return w


def test_single_call_child():
    def a(f: Frame):
        f.call(B, b"")
        f.stop()

    w = _world({A: a, B: lambda f: f.stop()})
    root = build_invocation_tree(execute(w, _meta()), _meta())
    (child,) = root.children
    assert child.addr == B and child.caller == root.addr and child.call_kind == "call"


def test_delegatecall_context():
    # A delegatecalls B, which CALLs C: C sees A as its caller
    def a(f: Frame):
        f.call(B, b"", kind="DELEGATECALL")
        f.stop()

    def b(f: Frame):
        f.call(C, b"")
        f.stop()

    w = _world({A: a, B: b, C: lambda f: f.stop()})
    root = build_invocation_tree(execute(w, _meta()), _meta())
    (d,) = root.children
    (g,) = d.children
    assert (d.addr, d.code_addr, d.call_kind) == (A, B, "delegatecall")
    assert g.caller == A and g.addr == C


def test_out_of_gas_child_is_reverted_with_zero_exit():
    def a(f: Frame):
        f.call(B, b"", gas=10_000)
        f.stop()

    w = _world({A: a, B: lambda f: f.run_out_of_gas()})
    root = build_invocation_tree(execute(w, _meta()), _meta())
    (child,) = root.children
    assert child.reverted and child.gas_exit == 0


def test_revert_marks_child():
    def a(f: Frame):
        f.call(B, b"")
        f.stop()

    w = _world({A: a, B: lambda f: f.revert(b"x")})
    (child,) = build_invocation_tree(execute(w, _meta()), _meta()).children
    assert child.reverted


def test_precompile_is_leaf():
    def a(f: Frame):
        f.call(norm_addr(2), b"abc")
        f.stop()

    w = _world({A: a})
    (child,) = build_invocation_tree(execute(w, _meta()), _meta()).children
    assert child.children == [] and child.func is None and not child.entered


def test_depth_jump_is_malformed():
    raw = json.dumps([_rec("PUSH1", 100, depth=1), _rec("PUSH1", 90, depth=3)])
    with pytest.raises(MalformedTrace):
        build_invocation_tree(parse_struct_logs(raw), _meta())


def test_truncated_trace_is_malformed():
    def a(f: Frame):
        f.call(B, b"")
        f.stop()

    w = _world({A: a, B: lambda f: f.push(1).push(2).op("ADD").stop()})
    entries = execute(w, _meta())
    cut = next(i for i, e in enumerate(entries) if e.op == "ADD")
    with pytest.raises(MalformedTrace):
        build_invocation_tree(entries[:cut], _meta())


def test_segment_examples():
    w = _world({A: lambda f: f.stop()})
    root = build_invocation_tree(execute(w, _meta()), _meta())
    assert segment_for_target(root, C).nodes == []
    assert segment_for_target(root, A).nodes == [root]


def test_segment_includes_proxy_delegate_frame():
    def proxy(f: Frame):
        f.call(B, b"", kind="DELEGATECALL")
        f.stop()

    w = _world({A: proxy, B: lambda f: f.stop()})
    root = build_invocation_tree(execute(w, _meta()), _meta())
    seg = segment_for_target(root, A)
    assert [n.code_addr for n in seg.nodes] == [A, B]


def test_segment_matches_brute_force_scan():
    for seed in range(20):
        meta, entries, _ = random_call_tree(seed)
        root = build_invocation_tree(entries, meta)
        for addr in {n.addr for n in root.walk()}:
            assert segment_for_target(root, addr).nodes == [n for n in root.walk() if n.addr == addr]


def test_decode_function_call_examples():
    cat = AbiCatalog()
    cat.add(B, FunctionSig.parse("transfer(address,uint256)", ("bool",)))
    data = bytes.fromhex("a9059cbb") + encode(["address", "uint256"], [A, 5])

    def a(f: Frame):
        f.call(B, data)
        f.call(B, b"")
        f.call(B, bytes.fromhex("deadbeef"))
        f.call(B, bytes.fromhex("a9059cbb") + b"\x00" * 10)
        f.stop()

    w = _world({A: a, B: lambda f: f.stop()})
    root = build_invocation_tree(execute(w, _meta()), _meta())
    nodes = [decode_function_call(n, cat) for n in root.children]
    assert nodes[0].func == "transfer" and nodes[0].args == [A, 5]
    assert nodes[1].func is None
    assert nodes[2].undecoded and nodes[2].func is None
    assert nodes[3].abi_mismatch and nodes[3].args is None


def test_tree_is_deterministic():
    meta, entries, _ = random_call_tree(11)
    a = build_invocation_tree(parse_struct_logs(json.dumps(dump_struct_logs(entries))), meta)
    b = build_invocation_tree(parse_struct_logs(json.dumps(dump_struct_logs(entries))), meta)
    assert a.to_dict() == b.to_dict()


def test_tree_without_depth_field_matches():
    meta, entries, _ = random_call_tree(5)
    stripped = [e.__class__(e.pc, e.op, e.gas, e.gas_cost, e.stack, e.memory, None) for e in entries]
    assert build_invocation_tree(stripped, meta).to_dict() == build_invocation_tree(entries, meta).to_dict()
