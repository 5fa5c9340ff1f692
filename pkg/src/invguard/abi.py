"""Function ABI catalog and a small head/tail ABI codec.

Only what trace decoding needs: elementary types, bytes/string, fixed and
dynamic arrays, and tuples.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import AbiMismatch
from .hashing import selector_of
from .trace import norm_addr

_ARRAY = re.compile(r"^(.*)\[(\d*)\]$")

TRANSFER = "0xa9059cbb"       # transfer(address,uint256)
TRANSFER_FROM = "0x23b872dd"  # transferFrom(address,address,uint256)


def _split_tuple(body: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in body:
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
            continue
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        cur.append(ch)
    if cur:
        parts.append("".join(cur))
    return parts


def parse_type(t: str):
    t = t.strip()
    m = _ARRAY.match(t)
    if m:
        inner, n = m.groups()
        return ("array", parse_type(inner), int(n) if n else None)
    if t.startswith("(") and t.endswith(")"):
        return ("tuple", [parse_type(p) for p in _split_tuple(t[1:-1])])
    if t in ("uint", "int"):
        t += "256"
    return ("elem", t)


def _dynamic(pt) -> bool:
    kind = pt[0]
    if kind == "elem":
        return pt[1] in ("bytes", "string")
    if kind == "array":
        return pt[2] is None or _dynamic(pt[1])
    return any(_dynamic(c) for c in pt[1])


def _head_size(pt) -> int:
    if _dynamic(pt):
        return 32
    if pt[0] == "array":
        return pt[2] * _head_size(pt[1])
    if pt[0] == "tuple":
        return sum(_head_size(c) for c in pt[1])
    return 32


def _word(data: bytes, pos: int) -> int:
    if pos < 0 or pos + 32 > len(data):
        raise AbiMismatch(f"read past end of data at {pos} (len {len(data)})")
    return int.from_bytes(data[pos:pos + 32], "big")


def _decode_elem(name: str, w: int, data: bytes, pos: int) -> Any:
    if name == "address":
        return norm_addr(w & ((1 << 160) - 1))
    if name == "bool":
        return bool(w)
    if name.startswith("uint"):
        return w
    if name.startswith("int"):
        bits = int(name[3:] or 256)
        w &= (1 << bits) - 1
        return w - (1 << bits) if w >> (bits - 1) else w
    if name.startswith("bytes") and name != "bytes":
        n = int(name[5:])
        return data[pos:pos + n]
    if name == "function":
        return data[pos:pos + 24]
    raise AbiMismatch(f"unsupported ABI type {name!r}")


def _decode(pt, data: bytes, base: int, pos: int) -> Any:
    """Decode type `pt` whose head is at `pos`; offsets are relative to `base`."""
    if _dynamic(pt):
        start = base + _word(data, pos)
        return _decode_body(pt, data, start)
    return _decode_body(pt, data, pos)


def _decode_body(pt, data: bytes, start: int) -> Any:
    kind = pt[0]
    if kind == "elem":
        name = pt[1]
        if name in ("bytes", "string"):
            n = _word(data, start)
            if start + 32 + n > len(data):
                raise AbiMismatch("dynamic bytes run past end of data")
            raw = data[start + 32:start + 32 + n]
            return raw.decode("utf-8", "replace") if name == "string" else raw
        return _decode_elem(name, _word(data, start), data, start)
    if kind == "array":
        inner, n = pt[1], pt[2]
        if n is None:
            n = _word(data, start)
            start += 32
            if n > len(data):
                raise AbiMismatch("array length exceeds data")
        step = _head_size(inner)
        return [_decode(inner, data, start, start + k * step) for k in range(n)]
    out, pos = [], start
    for c in pt[1]:
        out.append(_decode(c, data, start, pos))
        pos += _head_size(c)
    return tuple(out)


def decode(types: list[str] | tuple[str, ...], data: bytes) -> list[Any]:
    """Decode an ABI-encoded argument tuple."""
    pts = [parse_type(t) for t in types]
    if sum(_head_size(p) for p in pts) > len(data):
        raise AbiMismatch(f"data of {len(data)} bytes shorter than argument heads")
    return list(_decode_body(("tuple", pts), data, 0))


def _encode(pt, value) -> tuple[bytes, bool]:
    kind = pt[0]
    if kind == "elem":
        name = pt[1]
        if name in ("bytes", "string"):
            raw = value.encode() if isinstance(value, str) else bytes(value)
            pad = (-len(raw)) % 32
            return len(raw).to_bytes(32, "big") + raw + b"\x00" * pad, True
        if name == "address":
            return int(norm_addr(value), 16).to_bytes(32, "big"), False
        if name == "bool":
            return int(bool(value)).to_bytes(32, "big"), False
        if name.startswith("uint"):
            return int(value).to_bytes(32, "big"), False
        if name.startswith("int"):
            return (int(value) % (1 << 256)).to_bytes(32, "big"), False
        if name.startswith("bytes"):
            return bytes(value).ljust(32, b"\x00"), False
        raise ValueError(f"unsupported ABI type {name!r}")
    if kind == "array":
        body = _encode_seq([pt[1]] * len(value), list(value))
        if pt[2] is None:
            return len(value).to_bytes(32, "big") + body, True
        return body, _dynamic(pt)
    return _encode_seq(pt[1], list(value)), _dynamic(pt)


def _encode_seq(pts: list, values: list) -> bytes:
    heads, tails = [], []
    head_len = sum(_head_size(p) for p in pts)
    for p, v in zip(pts, values):
        enc, dyn = _encode(p, v)
        if _dynamic(p):
            heads.append((head_len + sum(len(t) for t in tails)).to_bytes(32, "big"))
            tails.append(enc)
        else:
            heads.append(enc)
    return b"".join(heads) + b"".join(tails)


def encode(types: list[str] | tuple[str, ...], values: list[Any]) -> bytes:
    return _encode_seq([parse_type(t) for t in types], list(values))


def _canonical_param(p: dict) -> str:
    t = p["type"]
    if t.startswith("tuple"):
        inner = ",".join(_canonical_param(c) for c in p.get("components", []))
        return f"({inner}){t[5:]}"
    return t


@dataclass(frozen=True)
class FunctionSig:
    name: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...] = ()
    mutability: str = "nonpayable"

    @property
    def signature(self) -> str:
        return f"{self.name}({','.join(self.inputs)})"

    @property
    def selector(self) -> str:
        return selector_of(self.signature)

    @property
    def read_only(self) -> bool:
        return self.mutability in ("view", "pure")

    @classmethod
    def parse(cls, text: str, outputs: tuple[str, ...] = (), mutability: str = "nonpayable") -> "FunctionSig":
        """Build from a "name(type,...)" signature string."""
        name, _, rest = text.partition("(")
        body = rest[:-1]
        inputs = tuple(_split_tuple(body)) if body else ()
        return cls(name.strip(), inputs, tuple(outputs), mutability)


@dataclass
class AbiCatalog:
    """Per-address selector tables."""

    contracts: dict[str, dict[str, FunctionSig]] = field(default_factory=dict)

    def add(self, address: str, sig: FunctionSig) -> None:
        self.contracts.setdefault(norm_addr(address), {})[sig.selector] = sig

    def add_abi(self, address: str, abi: list[dict]) -> None:
        """Load a JSON ABI; a declared "selector" must match the keccak of the signature."""
        for item in abi:
            if item.get("type", "function") != "function":
                continue
            sig = FunctionSig(
                item["name"],
                tuple(_canonical_param(p) for p in item.get("inputs", [])),
                tuple(_canonical_param(p) for p in item.get("outputs", [])),
                item.get("stateMutability", "nonpayable"),
            )
            declared = item.get("selector")
            if declared is not None and declared.lower() != sig.selector:
                raise AbiMismatch(
                    f"declared selector {declared} != {sig.selector} for {sig.signature}"
                )
            self.add(address, sig)

    def lookup(self, address: str | None, selector: str) -> FunctionSig | None:
        if address is None:
            return None
        return self.contracts.get(address, {}).get(selector)

    def selectors(self, address: str) -> dict[str, FunctionSig]:
        return dict(self.contracts.get(address, {}))

    def to_json(self) -> dict:
        return {
            addr: [
                {
                    "type": "function",
                    "name": s.name,
                    "inputs": [{"type": t} for t in s.inputs],
                    "outputs": [{"type": t} for t in s.outputs],
                    "stateMutability": s.mutability,
                    "selector": sel,
                }
                for sel, s in sorted(sigs.items())
            ]
            for addr, sigs in sorted(self.contracts.items())
        }

    @classmethod
    def from_json(cls, data: dict) -> "AbiCatalog":
        cat = cls()
        for addr, abi in data.items():
            cat.add_abi(addr, abi)
        return cat

    @classmethod
    def from_dir(cls, path: str | Path) -> "AbiCatalog":
        """One <address>.json ABI file per contract."""
        cat = cls()
        path = Path(path)
        if path.is_dir():
            for f in sorted(path.glob("*.json")):
                cat.add_abi(f.stem, json.loads(f.read_text()))
        return cat
