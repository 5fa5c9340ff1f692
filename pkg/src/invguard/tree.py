"""Invocation-tree reconstruction and target segmentation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator

from . import abi as abimod
from .abi import AbiCatalog
from .errors import AbiMismatch, MalformedTrace
from .opcodes import CALL_OPS, CREATE_OPS, FRAME_OPS, HALT_OPS, PRECOMPILES
from .trace import StructLogEntry, TxMetadata, addr_of_word, read_memory

# Halting ops that end a frame normally; anything else ending a frame is exceptional.
_CLEAN_HALT = frozenset({"STOP", "RETURN", "REVERT", "SELFDESTRUCT"})


@dataclass(eq=False)
class InvocationNode:
    addr: str
    code_addr: str
    caller: str
    call_kind: str
    value: int = 0
    calldata: bytes = b""
    ret_data: bytes = b""
    ins: list[tuple[int, int]] = field(default_factory=list)
    span: tuple[int, int] = (0, 0)
    gas_entry: int = 0
    gas_exit: int = 0
    children: list["InvocationNode"] = field(default_factory=list)
    reverted: bool = False
    entered: bool = True
    call_site: int | None = None
    ret_offset: int = 0
    ret_len: int = 0
    func: str | None = None
    args: list[Any] | None = None
    ret_values: list[Any] | None = None
    undecoded: bool = False
    abi_mismatch: bool = False
    id: int = 0
    parent: "InvocationNode | None" = field(default=None, repr=False)

    @property
    def selector(self) -> str | None:
        if self.call_kind in ("create", "create2") or len(self.calldata) < 4:
            return None
        return "0x" + self.calldata[:4].hex()

    @property
    def gas_used(self) -> int:
        return self.gas_entry - self.gas_exit

    def walk(self) -> Iterator["InvocationNode"]:
        """Pre-order traversal."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def ancestors(self) -> Iterator["InvocationNode"]:
        node = self.parent
        while node is not None:
            yield node
            node = node.parent

    @property
    def effectively_reverted(self) -> bool:
        """True when this frame or any enclosing frame reverted."""
        return self.reverted or any(a.reverted for a in self.ancestors())

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "addr": self.addr,
            "codeAddr": self.code_addr,
            "caller": self.caller,
            "callKind": self.call_kind,
            "value": hex(self.value),
            "calldata": "0x" + self.calldata.hex(),
            "retData": "0x" + self.ret_data.hex(),
            "ins": [list(r) for r in self.ins],
            "span": list(self.span),
            "gasEntry": self.gas_entry,
            "gasExit": self.gas_exit,
            "reverted": self.reverted,
            "entered": self.entered,
            "callSite": self.call_site,
            "retOffset": self.ret_offset,
            "retLen": self.ret_len,
            "children": [c.to_dict() for c in self.children],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InvocationNode":
        node = cls(
            addr=d["addr"],
            code_addr=d["codeAddr"],
            caller=d["caller"],
            call_kind=d["callKind"],
            value=int(d["value"], 16),
            calldata=bytes.fromhex(d["calldata"][2:]),
            ret_data=bytes.fromhex(d["retData"][2:]),
            ins=[tuple(r) for r in d["ins"]],
            span=tuple(d["span"]),
            gas_entry=d["gasEntry"],
            gas_exit=d["gasExit"],
            reverted=d["reverted"],
            entered=d["entered"],
            call_site=d["callSite"],
            ret_offset=d["retOffset"],
            ret_len=d["retLen"],
            id=d["id"],
        )
        node.children = [cls.from_dict(c) for c in d["children"]]
        for c in node.children:
            c.parent = node
        return node


@dataclass
class TraceSegment:
    target: str
    nodes: list[InvocationNode]
    entries: list[StructLogEntry] = field(default_factory=list, repr=False)

    def steps(self) -> Iterator[tuple[int, InvocationNode, StructLogEntry]]:
        """(trace index, owning node, entry) for the segment, in execution order."""
        owned = sorted(
            (start, stop, node) for node in self.nodes for start, stop in node.ins
        )
        for start, stop, node in owned:
            for i in range(start, stop):
                yield i, node, self.entries[i]

    def __len__(self) -> int:
        return len(self.nodes)


def _open_child(parent: InvocationNode, e: StructLogEntry) -> InvocationNode:
    op = e.op
    if op in CREATE_OPS:
        value, off, length = e.arg(0), e.arg(1), e.arg(2)
        return InvocationNode(
            addr="", code_addr="", caller=parent.addr, call_kind=op.lower(),
            value=value, calldata=read_memory(e.memory, off, length),
        )
    target = addr_of_word(e.arg(1))
    if op in ("CALL", "CALLCODE"):
        value, a_off, a_len, r_off, r_len = e.arg(2), e.arg(3), e.arg(4), e.arg(5), e.arg(6)
    else:
        value, a_off, a_len, r_off, r_len = 0, e.arg(2), e.arg(3), e.arg(4), e.arg(5)
    if op == "DELEGATECALL":
        addr, caller = parent.addr, parent.caller
    elif op == "CALLCODE":
        addr, caller = parent.addr, parent.addr
    else:
        addr, caller = target, parent.addr
    return InvocationNode(
        addr=addr, code_addr=target, caller=caller, call_kind=op.lower(),
        value=value, calldata=read_memory(e.memory, a_off, a_len),
        ret_offset=r_off, ret_len=r_len,
    )


def _after_return(child: InvocationNode, nxt: StructLogEntry | None) -> None:
    """Apply what the caller observes once the child is done."""
    if nxt is None or not nxt.stack:
        return
    flag = nxt.stack[-1]
    if child.call_kind in ("create", "create2"):
        if flag == 0:
            child.reverted = True
        else:
            child.addr = child.code_addr = addr_of_word(flag)
    elif flag == 0:
        child.reverted = True


class _Frame:
    __slots__ = ("node", "depth", "run_start")

    def __init__(self, node: InvocationNode, depth: int | None, run_start: int):
        self.node = node
        self.depth = depth
        self.run_start = run_start


def build_invocation_tree(entries: list[StructLogEntry], meta: TxMetadata) -> InvocationNode:
    """Reconstruct the external-call tree of one transaction.

    A child is opened at every call/create opcode; it closes on a halting
    opcode or, when depth is recorded, when depth drops back to the caller.
    """
    root = InvocationNode(
        addr=meta.to, code_addr=meta.to, caller=meta.origin, call_kind="root",
        value=meta.value, calldata=meta.input,
    )
    n = len(entries)
    if n == 0:
        root.gas_entry = root.gas_exit = meta.gas
        _finish(root)
        return root
    root.gas_entry = entries[0].gas
    has_depth = all(e.depth is not None for e in entries)
    stack = [_Frame(root, entries[0].depth if has_depth else None, 0)]

    for i, e in enumerate(entries):
        if not stack:
            raise MalformedTrace(f"entry {i} follows the end of the outermost frame")
        fr = stack[-1]
        nxt = entries[i + 1] if i + 1 < n else None
        if has_depth and nxt is not None and abs(nxt.depth - fr.depth) > 1:
            raise MalformedTrace(f"call depth jumps from {fr.depth} to {nxt.depth} at entry {i + 1}")

        if e.op in FRAME_OPS and not (has_depth and nxt is not None and nxt.depth < fr.depth):
            child = _open_child(fr.node, e)
            child.call_site = i
            child.parent = fr.node
            fr.node.children.append(child)
            if has_depth:
                entered = nxt is not None and nxt.depth == fr.depth + 1
            else:
                entered = nxt is not None and nxt.pc == 0
            if e.op in CALL_OPS and int(child.code_addr, 16) in PRECOMPILES:
                entered = False
            if entered:
                fr.node.ins.append((fr.run_start, i + 1))
                child.gas_entry = nxt.gas
                child.span = (i + 1, i + 1)
                stack.append(_Frame(child, fr.depth + 1 if has_depth else None, i + 1))
                continue
            child.entered = False
            child.span = (i + 1, i + 1)
            if nxt is not None:
                _after_return(child, nxt)
                child.ret_data = read_memory(nxt.memory, child.ret_offset, child.ret_len) if child.ret_len else b""
            continue

        ends = e.op in HALT_OPS
        if has_depth and nxt is not None:
            if nxt.depth < fr.depth:
                ends = True
            elif ends:
                raise MalformedTrace(f"{e.op} at entry {i} does not leave its frame")
            elif nxt.depth > fr.depth:
                raise MalformedTrace(f"depth increases without a call at entry {i}")
        if not ends:
            continue

        node = fr.node
        node.ins.append((fr.run_start, i + 1))
        node.span = (node.span[0] if node is not root else 0, i + 1)
        if e.op in _CLEAN_HALT:
            node.gas_exit = e.gas
            if e.op in ("RETURN", "REVERT"):
                node.ret_data = read_memory(e.memory, e.arg(0), e.arg(1))
            if e.op == "REVERT":
                node.reverted = True
        else:
            node.reverted = True
            node.gas_exit = 0
        stack.pop()
        if stack:
            if nxt is None:
                raise MalformedTrace(f"frame opened at entry {node.call_site} never returns to its caller")
            _after_return(node, nxt)
            stack[-1].run_start = i + 1

    if len(stack) > 1:
        raise MalformedTrace(f"{len(stack) - 1} frame(s) never close")
    if stack:
        # outermost frame ran off the end of the trace without a halting opcode
        last = entries[-1]
        root.ins.append((stack[0].run_start, n))
        root.span = (0, n)
        if last.op == "INVALID" or last.gas < last.gas_cost:
            root.reverted = True
            root.gas_exit = 0
        else:
            root.gas_exit = last.gas
    _finish(root)
    return root


def _finish(root: InvocationNode) -> None:
    for k, node in enumerate(root.walk()):
        node.id = k
        for c in node.children:
            c.parent = node
    if root.span == (0, 0) and root.ins:
        root.span = (root.ins[0][0], root.ins[-1][1])


def segment_for_target(root: InvocationNode, target: str, entries: list[StructLogEntry] | None = None) -> TraceSegment:
    """All frames running with storage context `target`, in pre-order."""
    target = target.lower()
    nodes = [n for n in root.walk() if n.addr == target]
    return TraceSegment(target, nodes, entries if entries is not None else [])


def decode_function_call(node: InvocationNode, catalog: AbiCatalog) -> InvocationNode:
    """Fill func/args/ret_values from the ABI of the code being run.

    Unknown selectors leave the node raw with `undecoded` set; calldata that
    does not fit the declared arguments sets `abi_mismatch` and keeps raw bytes.
    """
    sel = node.selector
    if sel is None:
        node.func = None
        node.undecoded = len(node.calldata) > 0 and node.call_kind not in ("create", "create2")
        return node
    sig = catalog.lookup(node.code_addr, sel) or catalog.lookup(node.addr, sel)
    if sig is None:
        node.undecoded = True
        return node
    node.func = sig.name
    try:
        node.args = abimod.decode(sig.inputs, node.calldata[4:])
    except AbiMismatch:
        node.abi_mismatch = True
        node.args = None
    if node.ret_data and sig.outputs and not node.reverted:
        try:
            node.ret_values = abimod.decode(sig.outputs, node.ret_data)
        except AbiMismatch:
            node.ret_values = None
    return node
