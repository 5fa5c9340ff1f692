"""Per-transaction observation extraction.

Two stages: `analyze_transaction` does the expensive, config-light work
(tree, decoding, taint, storage writes, transfers) and yields a JSON-able
`TxAnalysis` that can be cached; `extract` turns an analysis plus the
analysis config and balance ledger into an `ObservationSet`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from . import abi as abimod
from .abi import TRANSFER, TRANSFER_FROM, AbiCatalog
from .config import ETHER, AnalysisConfig
from .errors import AbiMismatch, ConfigMissing
from .storage import StorageLayout, collect_preimages, resolve_slot
from .taint import SinkHit, run_taint
from .trace import StructLogEntry, TxMetadata
from .tree import InvocationNode, TraceSegment, build_invocation_tree, decode_function_call, segment_for_target


# -- analysis ------------------------------------------------------------------

@dataclass
class Invocation:
    """One logical call into the target (a proxy hop counts once)."""

    node_id: int
    selector: str | None
    func: str | None
    caller: str
    gas_entry: int
    gas_used: int
    nesting: int
    reverted: bool
    call_value: int

    def to_dict(self) -> dict:
        return {
            "nodeId": self.node_id, "selector": self.selector, "func": self.func,
            "caller": self.caller, "gasEntry": self.gas_entry, "gasUsed": self.gas_used,
            "nesting": self.nesting, "reverted": self.reverted, "callValue": self.call_value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Invocation":
        return cls(d["nodeId"], d["selector"], d["func"], d["caller"], d["gasEntry"],
                   d["gasUsed"], d["nesting"], d["reverted"], d["callValue"])


@dataclass
class TxAnalysis:
    meta: TxMetadata
    tree: InvocationNode
    invocations: list[Invocation]
    owner: dict[int, int]                 # node id -> index of its enclosing invocation
    transfers: list[dict]                 # value moved to/from the target
    sstores: list[dict]                   # successful SSTOREs in target frames
    hits: list[dict]                      # taint sink hits with flattened labels
    preimages: int = 0

    def to_dict(self) -> dict:
        return {
            "meta": self.meta.to_record(),
            "tree": self.tree.to_dict(),
            "invocations": [i.to_dict() for i in self.invocations],
            "owner": {str(k): v for k, v in sorted(self.owner.items())},
            "transfers": self.transfers,
            "sstores": self.sstores,
            "hits": self.hits,
            "preimages": self.preimages,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TxAnalysis":
        return cls(
            TxMetadata.from_record(d["meta"]),
            InvocationNode.from_dict(d["tree"]),
            [Invocation.from_dict(i) for i in d["invocations"]],
            {int(k): v for k, v in d["owner"].items()},
            d["transfers"], d["sstores"], d["hits"], d.get("preimages", 0),
        )


def _static(node: InvocationNode) -> bool:
    n: InvocationNode | None = node
    while n is not None:
        if n.call_kind == "staticcall":
            return True
        n = n.parent
    return False


def _read_only(node: InvocationNode, catalog: AbiCatalog) -> bool:
    if _static(node):
        return True
    sel = node.selector
    if sel is None:
        return False
    sig = catalog.lookup(node.code_addr, sel) or catalog.lookup(node.addr, sel)
    if sig is None:
        # proxy: the ABI lives with the implementation reached by delegatecall
        for c in node.children:
            if c.call_kind == "delegatecall" and c.addr == node.addr:
                sig = catalog.lookup(c.code_addr, sel)
                if sig is not None:
                    break
    return sig is not None and sig.read_only


def _func_name(node: InvocationNode, catalog: AbiCatalog) -> str | None:
    if node.func:
        return node.func
    sel = node.selector
    for c in node.children:
        if sel and c.call_kind == "delegatecall" and c.addr == node.addr:
            sig = catalog.lookup(c.code_addr, sel)
            if sig is not None:
                return sig.name
    return None


def logical_invocations(root: InvocationNode, target: str, catalog: AbiCatalog) -> tuple[list[Invocation], dict[int, int]]:
    """State-changing invocations of the target and the node -> invocation map.

    A delegate/callcode frame running in the target's context on behalf of a
    target frame is part of that frame's invocation, not a new one.
    """
    invs: list[Invocation] = []
    owner: dict[int, int] = {}
    depth_of: dict[int, int] = {}
    for node in root.walk():
        parent = node.parent
        inherited = owner.get(parent.id) if parent is not None else None
        hop = parent is not None and node.call_kind in ("delegatecall", "callcode") and parent.addr == target
        if node.addr == target and node.entered and not hop and not _read_only(node, catalog):
            nesting = 1 + (depth_of[inherited] if inherited is not None else 0)
            idx = len(invs)
            invs.append(Invocation(
                node.id, node.selector, _func_name(node, catalog), node.caller,
                node.gas_entry, max(node.gas_used, 0), nesting,
                node.effectively_reverted, node.value,
            ))
            depth_of[idx] = nesting
            owner[node.id] = idx
        elif inherited is not None:
            owner[node.id] = inherited
    return invs, owner


def _erc20_transfer(node: InvocationNode) -> tuple[str, str, int] | None:
    """(from, to, amount) for a successful ERC20 transfer/transferFrom call node."""
    if node.call_kind != "call" or node.effectively_reverted:
        return None
    sel = node.selector
    try:
        if sel == TRANSFER:
            to, amount = abimod.decode(["address", "uint256"], node.calldata[4:68])
            src = node.caller
        elif sel == TRANSFER_FROM:
            src, to, amount = abimod.decode(["address", "address", "uint256"], node.calldata[4:100])
        else:
            return None
    except AbiMismatch:
        return None
    if len(node.ret_data) >= 32 and int.from_bytes(node.ret_data[:32], "big") == 0:
        return None
    return src, to, amount


def collect_transfers(root: InvocationNode, target: str, owner: dict[int, int], meta: TxMetadata) -> list[dict]:
    """Every value movement into or out of the target, in execution order."""
    out = []
    if meta.value and not root.reverted and meta.to != meta.origin:
        if target in (meta.to, meta.origin):
            out.append({"token": ETHER, "from": meta.origin, "to": meta.to, "amount": meta.value, "inv": owner.get(root.id)})
    for node in root.walk():
        if node.parent is None:
            continue
        moves = []
        if node.value and node.call_kind in ("call", "create", "create2") and not node.effectively_reverted:
            moves.append((ETHER, node.parent.addr, node.addr, node.value))
        erc = _erc20_transfer(node)
        if erc is not None:
            moves.append((node.addr, *erc))
        for token, src, dst, amount in moves:
            if src == dst or target not in (src, dst) or amount == 0:
                continue
            out.append({"token": token, "from": src, "to": dst, "amount": amount, "inv": owner.get(node.parent.id)})
    return out


def _label_dict(label) -> dict:
    res = label.resolved
    return {
        "kind": label.source_kind,
        "op": label.source_op,
        "frame": label.frame,
        "index": label.index,
        "value": label.value,
        "arg": label.arg,
        "path": res.path if res else None,
        "pattern": res.pattern if res else None,
        "mapping": bool(res and res.is_mapping_value),
    }


def analyze_transaction(
    entries: list[StructLogEntry],
    meta: TxMetadata,
    target: str,
    catalog: AbiCatalog | None = None,
    layout: StorageLayout | None = None,
    tokens: Iterable[str] = (),
) -> TxAnalysis:
    target = target.lower()
    catalog = catalog or AbiCatalog()
    root = build_invocation_tree(entries, meta)
    for node in root.walk():
        decode_function_call(node, catalog)
    segment = segment_for_target(root, target, entries)
    pre = collect_preimages(entries)
    hits = run_taint(segment, catalog, layout, pre, tokens)
    invs, owner = logical_invocations(root, target, catalog)
    by_id = {n.id: n for n in root.walk()}

    sstores = []
    for i, node, e in segment.steps():
        if e.op != "SSTORE" or node.effectively_reverted:
            continue
        slot, word = e.arg(0), e.arg(1)
        names: dict[str, int] = {}
        if layout is not None:
            direct = layout.at_slot(slot)
            if direct:
                names = {v.name: v.extract(word) for v in direct}
            else:
                res = resolve_slot(slot, layout, pre)
                if res is not None:
                    names = {res.path: word}
        sstores.append({"inv": owner.get(node.id), "index": i, "slot": hex(slot), "word": hex(word), "vars": names})

    hit_dicts = []
    for h in hits:
        node = by_id[h.site[0]]
        if node.effectively_reverted:
            continue
        hit_dicts.append({
            "kind": h.sink_kind, "amount": h.amount, "token": h.token, "index": h.site[1],
            "inv": owner.get(node.id),
            "labels": sorted((_label_dict(lb) for lb in h.labels), key=lambda d: (d["frame"], d["index"])),
        })
    return TxAnalysis(meta, root, invs, owner, collect_transfers(root, target, owner, meta), sstores, hit_dicts, len(pre))


# -- ledger --------------------------------------------------------------------

@dataclass
class BalanceLedger:
    """Running token balances of the target, replayed in corpus order."""

    target: str
    balances: dict[str, int] = field(default_factory=dict)
    unreliable: set = field(default_factory=set)

    @classmethod
    def for_config(cls, cfg: AnalysisConfig) -> "BalanceLedger":
        led = cls(cfg.target)
        for t in cfg.tokens or ():
            led.balances[t.address] = t.initial_balance
        return led

    def apply(self, transfers: Iterable[dict]) -> None:
        for t in transfers:
            token, amount = t["token"], t["amount"]
            bal = self.balances.get(token, 0)
            if t["to"] == self.target:
                bal += amount
            elif t["from"] == self.target:
                bal -= amount
            if bal < 0:
                # history is incomplete for this token; stop trusting ratios
                self.unreliable.add(token)
                bal = 0
            self.balances[token] = bal

    def snapshot(self) -> dict[str, int]:
        return dict(self.balances)


# -- observations --------------------------------------------------------------

@dataclass
class CallObs:
    selector: str | None
    func: str | None
    caller: str
    gas_entry: int
    gas_used: int
    nesting: int
    reverted: bool
    call_value: int
    storage: dict[str, int] = field(default_factory=dict)
    flows: dict[str, dict[str, int]] = field(default_factory=dict)
    oracles: list[tuple[str, int]] = field(default_factory=list)
    data: list[tuple[str, str, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "selector": self.selector, "func": self.func, "caller": self.caller,
            "gasEntry": self.gas_entry, "gasUsed": self.gas_used, "nesting": self.nesting,
            "reverted": self.reverted, "callValue": self.call_value,
            "storage": dict(sorted(self.storage.items())),
            "flows": {k: dict(v) for k, v in sorted(self.flows.items())},
            "oracles": [list(o) for o in self.oracles],
            "data": [list(d) for d in self.data],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CallObs":
        return cls(
            d["selector"], d["func"], d["caller"], d["gasEntry"], d["gasUsed"], d["nesting"],
            d["reverted"], d["callValue"], dict(d["storage"]),
            {k: dict(v) for k, v in d["flows"].items()},
            [tuple(o) for o in d["oracles"]], [tuple(x) for x in d["data"]],
        )


@dataclass
class ObservationSet:
    tx_hash: str
    block_number: int
    timestamp: int
    origin: str
    calls: list[CallObs]
    reentry: int
    final_storage: dict[str, int] = field(default_factory=dict)
    flow_totals: dict[str, dict[str, int]] = field(default_factory=dict)
    pre_balances: dict[str, int] = field(default_factory=dict)
    unreliable: frozenset = frozenset()
    not_applicable: frozenset = frozenset()

    @property
    def touches_target(self) -> bool:
        return bool(self.calls)

    def to_dict(self) -> dict:
        return {
            "txHash": self.tx_hash, "blockNumber": self.block_number, "timestamp": self.timestamp,
            "origin": self.origin, "calls": [c.to_dict() for c in self.calls], "reentry": self.reentry,
            "finalStorage": dict(sorted(self.final_storage.items())),
            "flowTotals": {k: dict(v) for k, v in sorted(self.flow_totals.items())},
            "preBalances": dict(sorted(self.pre_balances.items())),
            "unreliable": sorted(self.unreliable), "notApplicable": sorted(self.not_applicable),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationSet":
        return cls(
            d["txHash"], d["blockNumber"], d["timestamp"], d["origin"],
            [CallObs.from_dict(c) for c in d["calls"]], d["reentry"], dict(d["finalStorage"]),
            {k: dict(v) for k, v in d["flowTotals"].items()}, dict(d["preBalances"]),
            frozenset(d["unreliable"]), frozenset(d["notApplicable"]),
        )


def data_location(label: dict, selector: str | None) -> tuple[str, ...]:
    """(kind, location) for a tainted source; kind DF feeds both DFU and DFL."""
    op = label["op"]
    sel = selector or "fallback"
    if op == "SLOAD":
        if label["mapping"]:
            return ("MU", label["pattern"])
        name = label["path"] if label["path"] is not None else hex(label["arg"] or 0)
        return ("DF", f"SLOAD:{name}")
    if op == "CALLVALUE":
        return ("CVU", f"CALLVALUE@{sel}")
    if op in ("CALLDATALOAD", "CALLDATACOPY"):
        return ("DF", f"{op}@{sel}:{label['arg']}")
    return ("DF", f"{op}@{sel}")


def extract(analysis: TxAnalysis, cfg: AnalysisConfig, ledger: BalanceLedger | None = None) -> ObservationSet:
    """Observation set of one transaction; applies its transfers to `ledger`."""
    meta = analysis.meta
    na = set()

    def section(name: str, category: str):
        try:
            return cfg.section(name)
        except ConfigMissing:
            na.add(category)
            return None

    tokens = section("tokens", "flow")
    oracles = section("oracles", "oracle")
    special = section("specialStorage", "storage")
    roles = {}
    if special is not None:
        for role, key in (("totalSupply", "totalSupplyName"), ("totalBorrow", "totalBorrowName")):
            if special.get(key):
                roles[special[key]] = role

    calls = [
        CallObs(inv.selector, inv.func, inv.caller, inv.gas_entry, inv.gas_used, inv.nesting,
                inv.reverted, inv.call_value)
        for inv in analysis.invocations
    ]
    final_storage: dict[str, int] = {}
    if special is not None:
        for s in analysis.sstores:
            for name, value in s["vars"].items():
                if name in roles:
                    final_storage[name] = value
                    if s["inv"] is not None:
                        calls[s["inv"]].storage[name] = value

    tracked = {ETHER} | {t.address for t in tokens or ()}
    transfers = [t for t in analysis.transfers if t["token"] in tracked] if tokens is not None else []
    flow_totals: dict[str, dict[str, int]] = {}
    for t in transfers:
        direction = "in" if t["to"] == cfg.target else "out"
        tot = flow_totals.setdefault(t["token"], {"in": 0, "out": 0})
        tot[direction] += t["amount"]
        if t["inv"] is not None:
            f = calls[t["inv"]].flows.setdefault(t["token"], {"in": 0, "out": 0})
            f[direction] += t["amount"]

    if oracles:
        want = {(o.address, o.selector): o for o in oracles}
        for node in analysis.tree.walk():
            o = want.get((node.code_addr, node.selector)) or want.get((node.addr, node.selector))
            inv = analysis.owner.get(node.parent.id) if node.parent is not None else None
            if o is None or inv is None or node.effectively_reverted:
                continue
            word = node.ret_data[32 * o.word:32 * o.word + 32]
            if len(word) == 32:
                calls[inv].oracles.append((o.key, int.from_bytes(word, "big")))

    for h in analysis.hits:
        if h["inv"] is None:
            continue
        call = calls[h["inv"]]
        for label in h["labels"]:
            if label["value"] is None:
                continue
            kind, loc = data_location(label, call.selector)
            point = (kind, loc, label["value"])
            if point not in call.data:
                call.data.append(point)

    pre = ledger.snapshot() if ledger is not None else {}
    unreliable = frozenset(ledger.unreliable) if ledger is not None else frozenset()
    if ledger is not None:
        ledger.apply(transfers)
    return ObservationSet(
        meta.tx_hash, meta.block_number, meta.block_timestamp, meta.origin, calls,
        max((c.nesting for c in calls), default=0), final_storage, flow_totals,
        pre, unreliable, frozenset(na),
    )


def extract_from(
    tree: InvocationNode,
    segment: TraceSegment,
    hits: list[SinkHit],
    cfg: AnalysisConfig,
    ledger: BalanceLedger | None = None,
    catalog: AbiCatalog | None = None,
    layout: StorageLayout | None = None,
    meta: TxMetadata | None = None,
) -> ObservationSet:
    """Extract from already-built pieces (tree, target segment, sink hits)."""
    entries = segment.entries
    if meta is None:
        meta = TxMetadata("0x" + "0" * 64, 0, 0, tree.caller, tree.addr, tree.value,
                          tree.gas_entry, None, tree.calldata)
    analysis = analyze_transaction(entries, meta, segment.target, catalog, layout, cfg.token_addresses)
    # the caller's hit list wins over the recomputed one when both exist
    if hits is not None:
        by_id = {n.id: n for n in analysis.tree.walk()}
        analysis.hits = [
            {"kind": h.sink_kind, "amount": h.amount, "token": h.token, "index": h.site[1],
             "inv": analysis.owner.get(h.site[0]),
             "labels": sorted((_label_dict(lb) for lb in h.labels), key=lambda d: (d["frame"], d["index"]))}
            for h in hits if not by_id[h.site[0]].effectively_reverted
        ]
    return extract(analysis, cfg, ledger)


def classify_enter_exit(catalog: AbiCatalog | None, observations: Iterable[ObservationSet],
                        overrides: dict | None = None) -> tuple[frozenset, frozenset]:
    """Enter = selectors that ever took tokens in, exit = ever paid tokens out."""
    enter, exit_ = set(), set()
    for obs in observations:
        for c in obs.calls:
            if c.selector is None or c.reverted:
                continue
            for f in c.flows.values():
                if f.get("in"):
                    enter.add(c.selector)
                if f.get("out"):
                    exit_.add(c.selector)
    if overrides:
        if "enter" in overrides:
            enter = {s.lower() for s in overrides["enter"]}
        if "exit" in overrides:
            exit_ = {s.lower() for s in overrides["exit"]}
    return frozenset(enter), frozenset(exit_)


def ratio(amount: int, balance: int) -> Fraction | None:
    return None if balance <= 0 else Fraction(amount, balance)

