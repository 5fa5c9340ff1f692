import pytest
from Crypto.Hash import keccak

from invguard.scenarios import TOKEN_LAYOUT, mapping_fixture
from invguard.storage import (
    PreimageDictionary, StorageLayout, collect_preimages, record_sha3, resolve_slot, slot_of_path,
)
from invguard.tree import build_invocation_tree

A = "0x" + "aa" * 20
B = "0x" + "bb" * 20


def k256(data: bytes) -> int:
    return int.from_bytes(keccak.new(digest_bits=256, data=data).digest(), "big")


def w(x: int) -> bytes:
    return x.to_bytes(32, "big")


def layout(dialect="solidity"):
    return StorageLayout.from_json({"dialect": dialect, "variables": [
        {"name": "totalSupply", "slot": 3, "offset": 0, "type": "uint256"},
        {"name": "balanceOf", "slot": 5, "offset": 0, "type": "mapping(address => uint256)"},
        {"name": "allowance", "slot": 6, "offset": 0, "type": "mapping(address => mapping(address => uint256))"},
    ]})


def test_record_sha3_width_filter():
    d = PreimageDictionary()
    data = w(1) + w(2)
    record_sha3(data, k256(data), d)
    assert len(d) == 1
    record_sha3(w(1), k256(w(1)), d)
    assert len(d) == 1
    record_sha3(data, k256(data), d)
    assert len(d) == 1
    assert d.verify()


def test_resolve_direct():
    r = resolve_slot(3, layout(), PreimageDictionary())
    assert r.path == "totalSupply" and r.keys == ()


def test_resolve_one_level():
    a = int(A, 16)
    h = k256(w(a) + w(5))
    d = PreimageDictionary()
    record_sha3(w(a) + w(5), h, d)
    r = resolve_slot(h, layout(), d)
    assert r.path == f"balanceOf[{A}]" and r.value_type == "uint256" and r.pattern == "balanceOf[*]"


def test_resolve_two_levels():
    a, b = int(A, 16), int(B, 16)
    h1 = k256(w(a) + w(6))
    h2 = k256(w(b) + w(h1))
    d = PreimageDictionary()
    record_sha3(w(a) + w(6), h1, d)
    record_sha3(w(b) + w(h1), h2, d)
    r = resolve_slot(h2, layout(), d)
    assert r.path == f"allowance[{A}][{B}]"


def test_dialect_duality():
    a = int(A, 16)
    sol = PreimageDictionary()
    record_sha3(w(a) + w(5), k256(w(a) + w(5)), sol)
    vy = PreimageDictionary()
    record_sha3(w(5) + w(a), k256(w(5) + w(a)), vy)
    assert resolve_slot(k256(w(a) + w(5)), layout("solidity"), sol).keys == (A,)
    assert resolve_slot(k256(w(5) + w(a)), layout("vyper"), vy).keys == (A,)
    # the wrong dialect reads the key as a slot and fails
    assert resolve_slot(k256(w(5) + w(a)), layout("solidity"), vy) is None


def test_unresolved_and_cycle_safe():
    d = PreimageDictionary()
    assert resolve_slot(12345, layout(), d) is None
    # a self-referential entry cannot loop
    d._map[777] = (1, 777)
    assert resolve_slot(777, layout(), d) is None


def _chain(var_slot: int, keys, dialect: str) -> int:
    slot = var_slot
    for k in keys:
        kw = w(int(k, 16) if isinstance(k, str) else int(k))
        slot = k256(kw + w(slot) if dialect == "solidity" else w(slot) + kw)
    return slot


@pytest.mark.parametrize("dialect", ["solidity", "vyper"])
def test_mapping_fixture_soundness(dialect):
    metas, traces, lay, token = mapping_fixture(dialect)
    seen = set()
    for meta, entries in zip(metas, traces):
        pre = collect_preimages(entries)
        for e in entries:
            if e.op not in ("SLOAD", "SSTORE"):
                continue
            res = resolve_slot(e.arg(0), lay, pre)
            assert res is not None
            var = lay.by_name(res.base)
            assert _chain(var.slot, res.keys, dialect) == e.arg(0)
            seen.add(len(res.keys))
    assert seen >= {1, 2}


def test_slot_of_path_inverts_resolution():
    lay = StorageLayout.from_json(TOKEN_LAYOUT)
    assert slot_of_path(lay, "allowance", [A, B]) == _chain(1, [A, B], "solidity")
