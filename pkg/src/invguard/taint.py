"""Bit-level dynamic taint tracking over a target contract's trace segment.

A word's taint is a mapping ``label -> bitmask``: bit i of the mask is set
when bit i of the word carries that label. Memory keeps the same mapping per
byte (8-bit masks), storage per 32-byte slot.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .abi import TRANSFER, TRANSFER_FROM
from .errors import TrackerDesync
from .opcodes import OPCODES
from .storage import PreimageDictionary, SlotResolution, StorageLayout, resolve_slot
from .trace import StructLogEntry, addr_of_word, read_memory
from .tree import InvocationNode, TraceSegment

FULL = (1 << 256) - 1

Taint = dict  # TaintLabel -> int mask; empty means untainted

SOURCES = {
    "externalAddress": ("BALANCE", "EXTCODESIZE", "EXTCODECOPY", "EXTCODEHASH"),
    "executionContext": ("ORIGIN", "CALLER", "ADDRESS", "CODESIZE", "SELFBALANCE", "PC", "MSIZE", "GAS"),
    "callData": ("CALLVALUE", "CALLDATALOAD", "CALLDATASIZE", "CALLDATACOPY"),
    "returnData": ("RETURNDATASIZE", "RETURNDATACOPY"),
    "block": ("BLOCKHASH", "COINBASE", "TIMESTAMP", "NUMBER", "DIFFICULTY", "GASPRICE", "GASLIMIT", "CHAINID"),
    "storage": ("SLOAD",),
}
SOURCE_KIND = {op: kind for kind, ops in SOURCES.items() for op in ops}

SINK_KINDS = ("etherTransfer", "etherTransferFrom", "erc20Transfer", "erc20TransferFrom")

_R1_OPS = frozenset({
    "ADD", "MUL", "SUB", "DIV", "SDIV", "MOD", "SMOD", "ADDMOD", "MULMOD", "EXP",
    "SIGNEXTEND", "LT", "GT", "SLT", "SGT", "EQ", "ISZERO",
})
# Pushes with no data-dependence the tables treat as interesting.
_CLEAN_PUSH = frozenset({"BASEFEE", "BLOBBASEFEE", "PUSH0"})


@dataclass(frozen=True)
class TaintLabel:
    source_kind: str
    source_op: str
    frame: int
    index: int
    value: int | None = field(default=None, compare=False)
    arg: int | None = field(default=None, compare=False)
    resolved: SlotResolution | None = field(default=None, compare=False)

    @property
    def site(self) -> tuple[int, int]:
        return (self.frame, self.index)


@dataclass
class SinkHit:
    sink_kind: str
    amount: int
    labels: frozenset
    site: tuple[int, int]
    token: str | None = None


@dataclass
class TaintTrackers:
    """Per-frame stack and memory trackers plus the (shared) storage tracker."""

    stack: list = field(default_factory=list)
    memory: dict = field(default_factory=dict)
    storage: dict = field(default_factory=dict)
    transient: dict = field(default_factory=dict)
    ret_labels: frozenset = frozenset()


def labels_of(t: Taint) -> frozenset:
    return frozenset(label for label, m in t.items() if m)


def full(labels: Iterable) -> Taint:
    return {label: FULL for label in labels}


def _any(t: Taint) -> int:
    out = 0
    for m in t.values():
        out |= m
    return out


def _merge(a: Taint, b: Taint) -> Taint:
    out = dict(a)
    for label, m in b.items():
        out[label] = out.get(label, 0) | m
    return out


def _mask(t: Taint, keep: int) -> Taint:
    return {label: m & keep for label, m in t.items() if m & keep}


def _shift(t: Taint, s: int) -> Taint:
    if s >= 0:
        return {label: (m << s) & FULL for label, m in t.items() if (m << s) & FULL}
    return {label: m >> -s for label, m in t.items() if m >> -s}


def mem_read(memory: dict, offset: int, length: int) -> Taint:
    """Word-aligned read of up to 32 bytes; byte j lands in bits (length-1-j)*8.."""
    out: Taint = {}
    for j in range(length):
        byte = memory.get(offset + j)
        if not byte:
            continue
        shift = (length - 1 - j) * 8
        for label, m in byte.items():
            out[label] = out.get(label, 0) | (m << shift)
    return out


def mem_write(memory: dict, offset: int, length: int, t: Taint) -> None:
    for j in range(length):
        shift = (length - 1 - j) * 8
        byte = {label: (m >> shift) & 0xFF for label, m in t.items() if (m >> shift) & 0xFF}
        if byte:
            memory[offset + j] = byte
        else:
            memory.pop(offset + j, None)


def mem_labels(memory: dict, offset: int, length: int) -> frozenset:
    out = set()
    for j in range(offset, offset + length):
        byte = memory.get(j)
        if byte:
            out.update(byte)
    return frozenset(out)


def mem_fill(memory: dict, offset: int, length: int, labels: Iterable) -> None:
    byte = {label: 0xFF for label in labels}
    for j in range(offset, offset + length):
        if byte:
            memory[j] = dict(byte)
        else:
            memory.pop(j, None)


def step(
    entry: StructLogEntry,
    trackers: TaintTrackers,
    pre: PreimageDictionary | None = None,
    layout: StorageLayout | None = None,
    *,
    frame: int = 0,
    index: int = 0,
    result: int | None = None,
    ret_len: int | None = None,
) -> TaintTrackers:
    """Apply one opcode's transfer function in place and return the trackers.

    `result` is the concrete value the opcode pushed (from the next trace
    entry) and is stored on fresh source labels; `ret_len` is the length of
    data an external call actually returned.
    """
    st = trackers.stack
    if len(st) != len(entry.stack):
        raise TrackerDesync(
            f"{entry.op} at pc {entry.pc}: tracker stack {len(st)} != concrete {len(entry.stack)}"
        )
    op = entry.op
    n_in, n_out = OPCODES[op]

    def fresh(arg: int | None = None, resolved: SlotResolution | None = None) -> "TaintLabel":
        return TaintLabel(SOURCE_KIND[op], op, frame, index, result, arg, resolved)

    def pop(k: int) -> list:
        if k == 0:
            return []
        args = st[-k:][::-1]
        del st[-k:]
        return args

    if op.startswith("PUSH") or op in _CLEAN_PUSH:
        st.append({})
    elif op.startswith("DUP"):
        st.append(st[-int(op[3:])])
    elif op.startswith("SWAP"):
        k = int(op[4:])
        st[-1], st[-1 - k] = st[-1 - k], st[-1]
    elif op in _R1_OPS:
        args = pop(n_in)
        st.append(full(set().union(*(labels_of(a) for a in args))))
    elif op == "NOT":
        (a,) = pop(1)
        st.append(dict(a))
    elif op in ("AND", "OR", "XOR"):
        a, b = pop(2)
        va, vb = entry.arg(0), entry.arg(1)
        if op == "XOR":
            st.append(_merge(a, b))
        else:
            any_a, any_b = _any(a), _any(b)
            if op == "AND":
                keep_a, keep_b = vb | any_b, va | any_a
            else:
                keep_a, keep_b = ~(vb & ~any_b) & FULL, ~(va & ~any_a) & FULL
            st.append(_merge(_mask(a, keep_a), _mask(b, keep_b)))
    elif op in ("SHL", "SHR", "SAR"):
        sh_t, val_t = pop(2)
        s = entry.arg(0)
        if sh_t:
            st.append(full(labels_of(sh_t) | labels_of(val_t)))
        elif op == "SHL":
            st.append(_shift(val_t, s) if s < 256 else {})
        else:
            s_eff = min(s, 256)
            out = _shift(val_t, -s_eff)
            if op == "SAR":
                high = FULL ^ (FULL >> s_eff)
                for label, m in val_t.items():
                    if m >> 255:
                        out[label] = out.get(label, 0) | high
            st.append(out)
    elif op == "BYTE":
        i_t, x_t = pop(2)
        i = entry.arg(0)
        if i_t:
            st.append(full(labels_of(i_t) | labels_of(x_t)))
        elif i >= 32:
            st.append({})
        else:
            st.append({label: (m >> ((31 - i) * 8)) & 0xFF for label, m in x_t.items() if (m >> ((31 - i) * 8)) & 0xFF})
    elif op == "SHA3":
        pop(2)
        st.append(full(mem_labels(trackers.memory, entry.arg(0), entry.arg(1))))
    elif op == "POP":
        pop(1)
    elif op == "MLOAD":
        pop(1)
        st.append(mem_read(trackers.memory, entry.arg(0), 32))
    elif op == "MSTORE":
        _, v = pop(2)
        mem_write(trackers.memory, entry.arg(0), 32, v)
    elif op == "MSTORE8":
        _, v = pop(2)
        mem_write(trackers.memory, entry.arg(0), 1, _mask(v, 0xFF))
    elif op == "MCOPY":
        pop(3)
        dst, src, length = entry.arg(0), entry.arg(1), entry.arg(2)
        chunk = [trackers.memory.get(src + j) for j in range(length)]
        for j, byte in enumerate(chunk):
            if byte:
                trackers.memory[dst + j] = dict(byte)
            else:
                trackers.memory.pop(dst + j, None)
    elif op == "SLOAD":
        pop(1)
        key = entry.arg(0)
        stored = trackers.storage.get(key)
        if stored:
            st.append(dict(stored))
        else:
            res = resolve_slot(key, layout, pre) if layout is not None and pre is not None else None
            st.append(full([fresh(key, res)]))
    elif op == "SSTORE":
        _, v = pop(2)
        key = entry.arg(0)
        if v:
            trackers.storage[key] = dict(v)
        else:
            trackers.storage.pop(key, None)
    elif op == "TLOAD":
        pop(1)
        st.append(dict(trackers.transient.get(entry.arg(0), {})))
    elif op == "TSTORE":
        _, v = pop(2)
        trackers.transient[entry.arg(0)] = dict(v)
    elif op == "CALLDATACOPY" or op == "RETURNDATACOPY":
        pop(3)
        dst, length = entry.arg(0), entry.arg(2)
        if length:
            labels = {fresh(entry.arg(1))}
            if op == "RETURNDATACOPY":
                labels |= trackers.ret_labels
            mem_fill(trackers.memory, dst, length, labels)
    elif op == "EXTCODECOPY":
        pop(4)
        dst, length = entry.arg(1), entry.arg(3)
        if length:
            mem_fill(trackers.memory, dst, length, {fresh(entry.arg(0))})
    elif op == "CODECOPY":
        pop(3)
        mem_fill(trackers.memory, entry.arg(0), entry.arg(2), ())
    elif op in SOURCE_KIND:
        args = pop(n_in)
        label = fresh(entry.arg(0) if n_in else None)
        st.append(full({label}.union(*(labels_of(a) for a in args))))
    elif op in ("CALL", "CALLCODE", "DELEGATECALL", "STATICCALL"):
        pop(n_in)
        if op in ("CALL", "CALLCODE"):
            a_off, a_len, r_off, r_len = entry.arg(3), entry.arg(4), entry.arg(5), entry.arg(6)
        else:
            a_off, a_len, r_off, r_len = entry.arg(2), entry.arg(3), entry.arg(4), entry.arg(5)
        trackers.ret_labels = mem_labels(trackers.memory, a_off, a_len)
        written = r_len if ret_len is None else min(r_len, ret_len)
        mem_fill(trackers.memory, r_off, written, trackers.ret_labels)
        st.append({})
    elif op in ("CREATE", "CREATE2"):
        pop(n_in)
        trackers.ret_labels = frozenset()
        st.append({})
    elif n_out == 0:
        # control flow, logs, halts
        pop(n_in)
    else:
        raise TrackerDesync(f"no taint transfer function for {op}")
    return trackers


_COPY_DST = {"CALLDATACOPY": (0, 2), "RETURNDATACOPY": (0, 2), "EXTCODECOPY": (1, 3)}


def _token_sink(entry: StructLogEntry, mem: dict, tokens: set, target: str, frame: int, index: int) -> SinkHit | None:
    to = addr_of_word(entry.arg(1))
    if to not in tokens:
        return None
    a_off, a_len = entry.arg(3), entry.arg(4)
    data = read_memory(entry.memory, a_off, a_len)
    sel = "0x" + data[:4].hex()
    if sel == TRANSFER and len(data) >= 68:
        return SinkHit(
            "erc20Transfer", int.from_bytes(data[36:68], "big"),
            mem_labels(mem, a_off + 36, 32), (frame, index), to,
        )
    if sel == TRANSFER_FROM and len(data) >= 100:
        if addr_of_word(int.from_bytes(data[36:68], "big")) != target:
            return None
        return SinkHit(
            "erc20TransferFrom", int.from_bytes(data[68:100], "big"),
            mem_labels(mem, a_off + 68, 32), (frame, index), to,
        )
    return None


def run_taint(
    segment: TraceSegment,
    catalog=None,
    layout: StorageLayout | None = None,
    pre: PreimageDictionary | None = None,
    tokens: Iterable[str] = (),
) -> list[SinkHit]:
    """Walk every target frame of the segment and report value-transfer sinks.

    Trackers start empty for every transaction; storage taint is shared by
    all frames of the target, stack and memory are per frame.
    """
    tokens = {t.lower() for t in tokens}
    target = segment.target
    entries = segment.entries
    storage: dict = {}
    transient: dict = {}
    frames: dict[int, TaintTrackers] = {}
    children: dict[int, InvocationNode] = {}
    for node in segment.nodes:
        for c in node.children:
            if c.call_site is not None:
                children[c.call_site] = c
    hits: list[SinkHit] = []

    for i, node, e in segment.steps():
        tr = frames.get(node.id)
        if tr is None:
            tr = frames[node.id] = TaintTrackers(storage=storage, transient=transient)
        nxt = entries[i + 1] if i + 1 < len(entries) else None
        result = nxt.stack[-1] if nxt is not None and nxt.stack and OPCODES[e.op][1] else None
        if e.op in _COPY_DST and nxt is not None:
            # copy sources push nothing; their concrete value is the first copied word
            dst_pos, len_pos = _COPY_DST[e.op]
            n = min(e.arg(len_pos), 32)
            result = int.from_bytes(read_memory(nxt.memory, e.arg(dst_pos), n), "big") if n else 0
        child = children.get(i)
        ret_len = None
        if child is not None:
            ret_len = len(child.ret_data) if child.entered else child.ret_len
            result = None

        if e.op in ("CALL", "CALLCODE") and len(tr.stack) == len(e.stack):
            value = e.arg(2)
            if value > 0:
                hits.append(SinkHit("etherTransfer", value, labels_of(tr.stack[-3]), (node.id, i)))
            if e.op == "CALL":
                hit = _token_sink(e, tr.memory, tokens, target, node.id, i)
                if hit is not None:
                    hits.append(hit)

        step(e, tr, pre, layout, frame=node.id, index=i, result=result, ret_len=ret_len)

        if e.op == "CALLVALUE":
            label = next(iter(tr.stack[-1]))
            hits.append(SinkHit("etherTransferFrom", result if result is not None else node.value,
                                frozenset({label}), (node.id, i)))
    return hits
