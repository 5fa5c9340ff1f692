"""Trace data model and structLogs parsing."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import MalformedTrace
from .opcodes import canonical

WORD_MASK = (1 << 256) - 1
MAX_STACK = 1024


def to_int(value: Any) -> int:
    """Parse a hex ("0x..") or decimal string / int into an int."""
    if isinstance(value, bool):
        raise ValueError("boolean is not a number")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        s = value.strip()
        if s.lower().startswith("0x"):
            return int(s[2:] or "0", 16)
        return int(s, 10)
    raise ValueError(f"not a number: {value!r}")


def norm_addr(value: Any) -> str:
    """Canonical 20-byte address: lowercase 0x-prefixed 40 hex digits."""
    if isinstance(value, (bytes, bytearray)):
        value = int.from_bytes(value, "big")
    n = to_int(value) if not isinstance(value, int) else value
    if n < 0 or n >> 160:
        raise ValueError(f"address out of range: {value!r}")
    return "0x" + format(n, "040x")


def addr_of_word(word: int) -> str:
    return "0x" + format(word & ((1 << 160) - 1), "040x")


def word_bytes(word: int) -> bytes:
    return (word & WORD_MASK).to_bytes(32, "big")


def read_memory(memory: bytes, offset: int, length: int) -> bytes:
    """Read `length` bytes at `offset`, zero-padding past the end of the snapshot."""
    if length == 0:
        return b""
    chunk = memory[offset:offset + length]
    return chunk + b"\x00" * (length - len(chunk))


@dataclass(slots=True)
class StructLogEntry:
    pc: int
    op: str
    gas: int
    gas_cost: int
    stack: tuple[int, ...]
    memory: bytes = b""
    depth: int | None = None

    def arg(self, n: int) -> int:
        """n-th stack item from the top (0 = top)."""
        return self.stack[-1 - n]


@dataclass(slots=True)
class TxMetadata:
    tx_hash: str
    block_number: int
    block_timestamp: int
    origin: str
    to: str
    value: int = 0
    gas: int = 0
    tx_index: int | None = None
    input: bytes = b""

    @classmethod
    def from_record(cls, rec: dict) -> "TxMetadata":
        try:
            tx_index = rec.get("transactionIndex", rec.get("txIndex"))
            return cls(
                tx_hash=str(rec.get("txHash", rec.get("hash"))).lower(),
                block_number=to_int(rec["blockNumber"]),
                block_timestamp=to_int(rec.get("blockTimestamp", rec.get("timestamp", 0))),
                origin=norm_addr(rec["from"]),
                to=norm_addr(rec["to"]),
                value=to_int(rec.get("value", 0)),
                gas=to_int(rec.get("gas", 0)),
                tx_index=None if tx_index is None else to_int(tx_index),
                input=_hexbytes(rec.get("input", rec.get("data", ""))),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedTrace(f"bad transaction metadata: {exc}") from exc

    def to_record(self) -> dict:
        rec = {
            "txHash": self.tx_hash,
            "blockNumber": self.block_number,
            "blockTimestamp": self.block_timestamp,
            "from": self.origin,
            "to": self.to,
            "value": hex(self.value),
            "gas": self.gas,
        }
        if self.tx_index is not None:
            rec["transactionIndex"] = self.tx_index
        if self.input:
            rec["input"] = "0x" + self.input.hex()
        return rec


def _hexbytes(s: str) -> bytes:
    s = s or ""
    return bytes.fromhex(s[2:] if s[:2].lower() == "0x" else s)


def _records(raw: Any) -> Iterable[dict]:
    if isinstance(raw, (bytes, bytearray)):
        raw = raw.decode("utf-8")
    if isinstance(raw, str):
        text = raw.strip()
        if not text:
            return []
        try:
            raw = json.loads(text)
        except json.JSONDecodeError:
            # newline-delimited records
            try:
                return [json.loads(line) for line in text.splitlines() if line.strip()]
            except json.JSONDecodeError as exc:
                raise MalformedTrace(f"unparseable trace record: {exc}") from exc
    if isinstance(raw, dict):
        if "result" in raw and isinstance(raw["result"], dict):
            raw = raw["result"]
        if "structLogs" not in raw:
            raise MalformedTrace("trace object has no structLogs")
        raw = raw["structLogs"]
    if not isinstance(raw, list):
        raise MalformedTrace("trace must be a list of records")
    return raw


def _memory(mem: Any) -> bytes:
    if mem is None:
        return b""
    if isinstance(mem, str):
        parts = [mem]
    else:
        parts = list(mem)
    out = bytearray()
    for part in parts:
        s = part[2:] if part[:2].lower() == "0x" else part
        out += bytes.fromhex(s)
    return bytes(out)


def _entry(rec: dict) -> StructLogEntry:
    if not isinstance(rec, dict):
        raise MalformedTrace(f"trace record is not an object: {rec!r}")
    try:
        op = canonical(str(rec["op"]))
        if op is None:
            raise MalformedTrace(f"unknown opcode {rec['op']!r}")
        stack = []
        for item in rec.get("stack") or ():
            word = to_int(item if not isinstance(item, str) or item[:2].lower() == "0x" else "0x" + item)
            if word < 0 or word > WORD_MASK:
                raise MalformedTrace(f"stack word wider than 256 bits at pc {rec.get('pc')}")
            stack.append(word)
        if len(stack) > MAX_STACK:
            raise MalformedTrace("stack deeper than 1024")
        depth = rec.get("depth")
        return StructLogEntry(
            pc=to_int(rec["pc"]),
            op=op,
            gas=to_int(rec.get("gas", rec.get("gasLeft"))),
            gas_cost=to_int(rec.get("gasCost", 0)),
            stack=tuple(stack),
            memory=_memory(rec.get("memory")),
            depth=None if depth is None else to_int(depth),
        )
    except MalformedTrace:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedTrace(f"unparseable trace record: {exc}") from exc


def parse_struct_logs(raw: Any, meta: TxMetadata | None = None) -> list[StructLogEntry]:
    """Parse a structLogs stream into entries, one per executed opcode.

    `raw` may be bytes/str holding a JSON array, a debug_traceTransaction
    result object, or newline-delimited records; an already-decoded list is
    accepted too. `meta` is carried for symmetry with the tree builder and is
    not needed for parsing itself.
    """
    return [_entry(rec) for rec in _records(raw)]


def dump_struct_logs(entries: Iterable[StructLogEntry]) -> list[dict]:
    """Inverse of parse_struct_logs, in the geth structLogs shape."""
    out = []
    for e in entries:
        rec = {
            "pc": e.pc,
            "op": e.op,
            "gas": e.gas,
            "gasCost": e.gas_cost,
            "stack": [hex(w) for w in e.stack],
            "memory": [e.memory[i:i + 32].hex() for i in range(0, len(e.memory), 32)],
        }
        if e.depth is not None:
            rec["depth"] = e.depth
        out.append(rec)
    return out
