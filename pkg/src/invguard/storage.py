"""Storage layouts and slot-key type inference through a keccak preimage dictionary."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .hashing import keccak256, keccak_int
from .trace import StructLogEntry, norm_addr, read_memory, to_int, word_bytes

SOLIDITY = "solidity"
VYPER = "vyper"

_MAPPING = re.compile(r"^mapping\s*\((.*)\)$", re.S)


def parse_storage_type(t: str):
    """Parse "mapping(address => mapping(address => uint256))", "uint8[]", "struct S", ..."""
    t = t.strip()
    m = _MAPPING.match(t)
    if m:
        body = m.group(1)
        depth = 0
        for i in range(len(body) - 1):
            ch = body[i]
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            elif depth == 0 and body[i:i + 2] == "=>":
                return ("mapping", parse_storage_type(body[:i]), parse_storage_type(body[i + 2:]))
        raise ValueError(f"bad mapping type {t!r}")
    if t.endswith("]"):
        inner, _, n = t[:-1].rpartition("[")
        return ("array", parse_storage_type(inner), int(n) if n.strip() else None)
    if t.startswith("struct "):
        return ("struct", t[7:].strip())
    return ("elem", t)


def type_str(pt) -> str:
    kind = pt[0]
    if kind == "mapping":
        return f"mapping({type_str(pt[1])} => {type_str(pt[2])})"
    if kind == "array":
        return f"{type_str(pt[1])}[{'' if pt[2] is None else pt[2]}]"
    if kind == "struct":
        return f"struct {pt[1]}"
    return pt[1]


def elem_size(name: str) -> int:
    """Byte width of an elementary value type when packed in a slot."""
    if name == "address":
        return 20
    if name == "bool":
        return 1
    for prefix in ("uint", "int"):
        if name.startswith(prefix) and name[len(prefix):].isdigit():
            return int(name[len(prefix):]) // 8
    if name.startswith("bytes") and name[5:].isdigit():
        return int(name[5:])
    return 32


def typed_key(key_type, word: int) -> Any:
    if key_type[0] != "elem":
        return word
    name = key_type[1]
    if name == "address":
        return norm_addr(word & ((1 << 160) - 1))
    if name == "bool":
        return bool(word)
    if name.startswith("int"):
        bits = int(name[3:] or 256)
        w = word & ((1 << bits) - 1)
        return w - (1 << bits) if w >> (bits - 1) else w
    if name.startswith("bytes"):
        return "0x" + word_bytes(word).hex()
    return word


def key_word(key: Any) -> int:
    """Inverse of typed_key: the 32-byte word a typed key was hashed as."""
    if isinstance(key, bool):
        return int(key)
    if isinstance(key, int):
        return key % (1 << 256)
    return to_int(key)


@dataclass(frozen=True)
class StorageVariable:
    name: str
    slot: int
    offset: int
    type: str

    @property
    def parsed(self):
        return parse_storage_type(self.type)

    @property
    def width(self) -> int:
        pt = self.parsed
        return elem_size(pt[1]) if pt[0] == "elem" else 32

    def extract(self, word: int) -> int:
        """Value of this variable inside a full slot word."""
        width = self.width
        if width >= 32:
            return word
        return (word >> (8 * self.offset)) & ((1 << (8 * width)) - 1)


@dataclass
class StorageLayout:
    variables: list[StorageVariable] = field(default_factory=list)
    dialect: str = SOLIDITY

    def __post_init__(self):
        self._by_slot: dict[int, list[StorageVariable]] = {}
        for v in self.variables:
            self._by_slot.setdefault(v.slot, []).append(v)
        for vs in self._by_slot.values():
            vs.sort(key=lambda v: v.offset)
            for a, b in zip(vs, vs[1:]):
                if a.offset + a.width > b.offset:
                    raise ValueError(f"storage variables {a.name} and {b.name} overlap")

    def at_slot(self, slot: int) -> list[StorageVariable]:
        return self._by_slot.get(slot, [])

    def by_name(self, name: str) -> StorageVariable | None:
        for v in self.variables:
            if v.name == name:
                return v
        return None

    @classmethod
    def from_json(cls, data: dict) -> "StorageLayout":
        """Accept a hand-written descriptor or compiler `storageLayout` output."""
        if "storage" in data:
            return cls._from_compiler(data)
        return cls(
            [
                StorageVariable(v["name"], to_int(v["slot"]), int(v.get("offset", 0)), v["type"])
                for v in data.get("variables", [])
            ],
            data.get("dialect", SOLIDITY),
        )

    @classmethod
    def _from_compiler(cls, data: dict) -> "StorageLayout":
        types = data.get("types") or {}

        def render(tid: str) -> str:
            info = types.get(tid, {})
            enc = info.get("encoding", "inplace")
            if enc == "mapping":
                return f"mapping({render(info['key'])} => {render(info['value'])})"
            if enc == "dynamic_array":
                return f"{render(info['base'])}[]"
            label = info.get("label", tid)
            if label.startswith(("contract ", "interface ")):
                return "address"
            if label.startswith("enum "):
                return "uint8"
            return label

        return cls(
            [
                StorageVariable(item["label"], to_int(item["slot"]), int(item.get("offset", 0)), render(item["type"]))
                for item in data["storage"]
            ],
            data.get("dialect", SOLIDITY),
        )

    def to_json(self) -> dict:
        return {
            "dialect": self.dialect,
            "variables": [
                {"name": v.name, "slot": v.slot, "offset": v.offset, "type": v.type} for v in self.variables
            ],
        }

    @classmethod
    def load(cls, path: str | Path) -> "StorageLayout":
        return cls.from_json(json.loads(Path(path).read_text()))


class PreimageDictionary:
    """keccak output -> the two 32-byte words that were hashed."""

    def __init__(self):
        self._map: dict[int, tuple[int, int]] = {}

    def __len__(self) -> int:
        return len(self._map)

    def __contains__(self, h: int) -> bool:
        return h in self._map

    def get(self, h: int) -> tuple[int, int] | None:
        return self._map.get(h)

    def items(self):
        return self._map.items()

    def add(self, data: bytes, output: int) -> None:
        if len(data) == 64:
            self._map[output] = (int.from_bytes(data[:32], "big"), int.from_bytes(data[32:], "big"))

    def verify(self) -> bool:
        return all(
            keccak_int(word_bytes(a) + word_bytes(b)) == h for h, (a, b) in self._map.items()
        )


def record_sha3(data: bytes, output: int, pre: PreimageDictionary) -> PreimageDictionary:
    """Record a SHA3 step; only 64-byte inputs (mapping key + slot) are kept."""
    pre.add(data, output)
    return pre


def collect_preimages(entries: Iterable[StructLogEntry], pre: PreimageDictionary | None = None) -> PreimageDictionary:
    """Walk every SHA3 in the trace, whichever frame it runs in."""
    pre = pre if pre is not None else PreimageDictionary()
    entries = list(entries)
    for i, e in enumerate(entries):
        if e.op != "SHA3":
            continue
        off, length = e.arg(0), e.arg(1)
        if length != 64:
            continue
        data = read_memory(e.memory, off, length)
        if i + 1 < len(entries) and entries[i + 1].stack:
            out = entries[i + 1].stack[-1]
        else:
            out = keccak_int(data)
        record_sha3(data, out, pre)
    return pre


@dataclass(frozen=True)
class SlotResolution:
    base: str
    keys: tuple[Any, ...]
    value_type: str
    raw: int
    candidates: tuple[str, ...] = ()

    @property
    def path(self) -> str:
        return self.base + "".join(f"[{k}]" for k in self.keys)

    @property
    def pattern(self) -> str:
        """Path with concrete mapping keys generalised away: balanceOf[*]."""
        return self.base + "[*]" * len(self.keys)

    @property
    def is_mapping_value(self) -> bool:
        return bool(self.keys)


def _mapping_levels(pt) -> tuple[list, tuple]:
    keys = []
    while pt[0] == "mapping":
        keys.append(pt[1])
        pt = pt[2]
    return keys, pt


def resolve_slot(
    slot_key: int,
    layout: StorageLayout,
    pre: PreimageDictionary,
    byte_range: tuple[int, int] | None = None,
) -> SlotResolution | None:
    """Map a raw storage key to a typed variable path, or None when unresolvable."""
    direct = layout.at_slot(slot_key)
    if direct:
        var = direct[0]
        if byte_range is not None:
            lo, hi = byte_range
            for v in direct:
                if v.offset <= lo and hi <= v.offset + v.width:
                    var = v
                    break
        return SlotResolution(
            var.name, (), var.type, slot_key,
            tuple(v.name for v in direct) if len(direct) > 1 else (),
        )
    chain: list[int] = []
    cur = slot_key
    seen = set()
    # each step consumes one dictionary entry, so the walk is bounded by its size
    for _ in range(len(pre) + 1):
        pair = pre.get(cur)
        if pair is None or cur in seen:
            return None
        seen.add(cur)
        w1, w2 = pair
        key, base = (w1, w2) if layout.dialect == SOLIDITY else (w2, w1)
        chain.append(key)
        cur = base
        for var in layout.at_slot(cur):
            levels, value = _mapping_levels(var.parsed)
            if len(levels) != len(chain):
                continue
            keys = tuple(typed_key(kt, k) for kt, k in zip(levels, reversed(chain)))
            return SlotResolution(var.name, keys, type_str(value), slot_key)
        if layout.at_slot(cur):
            return None
    return None


def slot_of_path(layout: StorageLayout, base: str, keys: Iterable[Any]) -> int:
    """Forward keccak chain for base[k1][k2]...; inverse of resolve_slot."""
    var = layout.by_name(base)
    if var is None:
        raise KeyError(base)
    slot = var.slot
    for k in keys:
        kw, sw = word_bytes(key_word(k)), word_bytes(slot)
        slot = int.from_bytes(keccak256(kw + sw if layout.dialect == SOLIDITY else sw + kw), "big")
    return slot
