"""Evaluate invariant instances against transactions and aggregate TP/FP."""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator

from .config import TEMPLATES
from .errors import StateCorrupt
from .extraction import CallObs, ObservationSet
from .hashing import keccak_int
from .manifest import APPLIED, INSUFFICIENT, NOT_APPLICABLE, VIOLATED, InvariantInstance, Manifest

PASS = "pass"
BLOCKED = "blocked"
NA = "notApplicable"

EXPLOIT = "exploit"
BENIGN = "benign"

STATEFUL = frozenset({"SB", "OB", "LU", "OD"})


def entry_hash(address: str, block: int) -> int:
    """keccak(address ++ uint256 block), the value an SB/OB guard stores."""
    return keccak_int(bytes.fromhex(address[2:]) + block.to_bytes(32, "big"))


@dataclass
class GuardState:
    """Cross-transaction guard memory, keyed by instance ("LU:0x..", "OB:contract", ...)."""

    slots: dict[str, int] = field(default_factory=dict)

    def copy(self) -> "GuardState":
        return GuardState(dict(self.slots))

    def to_dict(self) -> dict:
        return {k: hex(v) for k, v in sorted(self.slots.items())}

    @classmethod
    def from_dict(cls, d: dict) -> "GuardState":
        return cls({k: int(v, 16) for k, v in d.items()})


def _slot(inst: InvariantInstance) -> str:
    return f"{inst.template}:{inst.location}"


@dataclass
class Verdict:
    tx_hash: str
    label: str
    results: dict[tuple[str, str], str]
    violations: list[tuple[str, str, str]]   # (template, location, detail)
    touches_target: bool = True

    @property
    def blocked(self) -> bool:
        return bool(self.violations)

    @property
    def overall(self) -> str:
        return BLOCKED if self.violations else PASS

    def holds(self, template: str) -> bool:
        """Template-level truth: every applied instance of it passed (N/A counts as holds)."""
        return all(not (t == template and r == BLOCKED) for (t, _), r in self.results.items())

    def to_dict(self) -> dict:
        return {
            "txHash": self.tx_hash, "label": self.label, "overall": self.overall,
            "touchesTarget": self.touches_target,
            "results": [[t, loc, r] for (t, loc), r in sorted(self.results.items(), key=lambda kv: (TEMPLATES.index(kv[0][0]), kv[0][1]))],
            "violations": [list(v) for v in self.violations],
        }


# -- per-instance evaluation ---------------------------------------------------

def _bound_points(inst: InvariantInstance, obs: ObservationSet) -> Iterator[tuple[CallObs, object]]:
    t, loc = inst.template, inst.location
    for c in obs.calls:
        if t in ("GS", "GC", "EOA", "SO", "SM", "OO", "OM"):
            if c.selector == loc:
                yield c, None
        elif t in ("TSU", "TBU"):
            if loc in c.storage:
                yield c, c.storage[loc]
        elif t in ("TIU", "TOU", "TIRU", "TORU"):
            f = c.flows.get(loc)
            amount = f and f["in" if t in ("TIU", "TIRU") else "out"]
            if amount:
                yield c, amount
        elif t == "OR":
            for key, v in c.oracles:
                if key == loc:
                    yield c, v
        elif t in ("MU", "CVU", "DFU", "DFL"):
            kind = "DF" if t in ("DFU", "DFL") else t
            for k, l, v in c.data:
                if k == kind and l == loc:
                    yield c, v


def _check_stateless(inst: InvariantInstance, obs: ObservationSet) -> tuple[str, str]:
    t, p = inst.template, inst.params or {}
    if t == "RE":
        if not obs.calls:
            return NA, ""
        return (BLOCKED, f"nesting {obs.reentry}") if obs.reentry > 1 else (PASS, "")
    if t in ("TIRU", "TORU") and inst.location in obs.unreliable:
        return NA, ""
    seen = False
    for c, v in _bound_points(inst, obs):
        seen = True
        if t == "EOA":
            bad = c.caller != obs.origin
            detail = f"caller {c.caller} != origin {obs.origin}"
        elif t == "SO":
            bad, detail = c.caller != p["owner"], f"sender {c.caller}"
        elif t == "SM":
            bad, detail = c.caller not in p["managers"], f"sender {c.caller}"
        elif t == "OO":
            bad, detail = obs.origin != p["owner"], f"origin {obs.origin}"
        elif t == "OM":
            bad, detail = obs.origin not in p["managers"], f"origin {obs.origin}"
        elif t == "GS":
            bad, detail = c.gas_entry > p["gasUpperbound"], f"gas start {c.gas_entry}"
        elif t == "GC":
            bad, detail = c.gas_used > p["gasUpperbound"], f"gas used {c.gas_used}"
        elif t == "OR":
            bad, detail = not p["priceLowerbound"] <= v <= p["priceUpperbound"], f"price {v}"
        elif t == "TSU":
            bad, detail = v > p["totalSupplyUpperbound"], f"value {v}"
        elif t == "TBU":
            bad, detail = v > p["totalBorrowUpperbound"], f"value {v}"
        elif t in ("TIRU", "TORU"):
            bal = obs.pre_balances.get(inst.location, 0)
            if bal <= 0:
                continue
            r = Fraction(v, bal)
            bad, detail = r > p["valueVar"], f"ratio {r}"
        elif t == "CVU":
            bad, detail = v > p["msgV"], f"value {v}"
        elif t == "DFL":
            bad, detail = v < p["valueVar"], f"value {v}"
        else:  # TIU TOU MU DFU
            bad, detail = v > p["valueVar"], f"value {v}"
        if bad:
            return BLOCKED, detail
    return (PASS, "") if seen else (NA, "")


def _check_stateful(inst: InvariantInstance, obs: ObservationSet, slots: dict, manifest: Manifest) -> tuple[str, str]:
    """Evaluate SB/OB/LU/OD in call order; mutates `slots` (caller decides whether to keep it)."""
    t, loc, key = inst.template, inst.location, _slot(inst)
    touched = False
    for c in obs.calls:
        if t in ("SB", "OB"):
            who = c.caller if t == "SB" else obs.origin
            h = None
            if c.selector in manifest.exit:
                touched = True
                h = entry_hash(who, obs.block_number)
                if slots.get(key) == h:
                    return BLOCKED, f"{c.selector} in the block of a prior enter by {who}"
            if c.selector in manifest.enter:
                touched = True
                if not c.reverted:
                    slots[key] = h if h is not None else entry_hash(who, obs.block_number)
        elif t == "LU":
            if c.selector != loc:
                continue
            touched = True
            last = slots.get(key)
            if last is not None and obs.block_number - last < inst.params["nbBlocks"]:
                return BLOCKED, f"gap {obs.block_number - last} < {inst.params['nbBlocks']}"
            if not c.reverted:
                slots[key] = obs.block_number
        elif t == "OD":
            for k, v in c.oracles:
                if k != loc:
                    continue
                touched = True
                old = slots.get(key)
                if old:
                    dev = Fraction(abs(v - old), old)
                    if dev > inst.params["priceDeviation"]:
                        return BLOCKED, f"deviation {dev}"
                slots[key] = v
    return (PASS, "") if touched else (NA, "")


def check_instance(inst: InvariantInstance, obs: ObservationSet, state: GuardState, manifest: Manifest) -> str:
    outcome, _ = _evaluate(inst, obs, state, manifest)
    return outcome


def _evaluate(inst, obs, state, manifest) -> tuple[str, str]:
    if inst.template in STATEFUL:
        scratch = dict(state.slots)
        outcome, detail = _check_stateful(inst, obs, scratch, manifest)
        if outcome != BLOCKED:
            # a guard that reverts the transaction also reverts its own writes
            key = _slot(inst)
            if key in scratch:
                state.slots[key] = scratch[key]
        return outcome, detail
    return _check_stateless(inst, obs)


def check_tx(
    obs: ObservationSet,
    manifest: Manifest,
    state: GuardState | None = None,
    label: str = BENIGN,
    templates: Iterable[str] | None = None,
) -> tuple[Verdict, GuardState]:
    """Evaluate every applied instance independently against one transaction."""
    state = state.copy() if state is not None else GuardState()
    known = {_slot(i) for i in manifest.applied() if i.template in STATEFUL}
    stray = sorted(set(state.slots) - known)
    if stray:
        raise StateCorrupt(f"guard state has entries for unknown locations: {', '.join(stray)}")
    wanted = set(templates) if templates is not None else None
    results, violations = {}, []
    for inst in manifest.applied(wanted):
        outcome, detail = _evaluate(inst, obs, state, manifest)
        results[inst.key] = outcome
        if outcome == BLOCKED:
            violations.append((inst.template, inst.location, detail))
    return Verdict(obs.tx_hash, label, results, violations, obs.touches_target), state


def check_corpus(observations: Iterable[ObservationSet], manifest: Manifest, exploits: Iterable[str] = (),
                 state: GuardState | None = None) -> list[Verdict]:
    """Sequential pass in corpus order from `state` (fresh by default)."""
    exploits = {h.lower() for h in exploits}
    state = state or GuardState()
    out = []
    for obs in observations:
        v, state = check_tx(obs, manifest, state, EXPLOIT if obs.tx_hash in exploits else BENIGN)
        out.append(v)
    return out


# -- combinations --------------------------------------------------------------

AND, OR = "&", "|"


@dataclass(frozen=True)
class CombinationExpr:
    op: str | None                      # None for a leaf
    name: str | None = None
    children: tuple["CombinationExpr", ...] = ()

    @staticmethod
    def leaf(name: str) -> "CombinationExpr":
        return CombinationExpr(None, name)

    @staticmethod
    def node(op: str, children: Iterable["CombinationExpr"]) -> "CombinationExpr":
        flat = []
        for c in children:
            flat.extend(c.children if c.op == op else (c,))
        # canonical order: leaves first, then compounds, each by rendered text
        flat.sort(key=lambda c: (c.op is not None, str(c)))
        if len(flat) == 1:
            return flat[0]
        return CombinationExpr(op, None, tuple(flat))

    @property
    def leaves(self) -> list[str]:
        if self.op is None:
            return [self.name]
        return [n for c in self.children for n in c.leaves]

    def holds(self, values: dict[str, bool]) -> bool:
        if self.op is None:
            return values.get(self.name, True)
        parts = (c.holds(values) for c in self.children)
        return all(parts) if self.op == AND else any(parts)

    def __str__(self) -> str:
        if self.op is None:
            return self.name
        return f" {self.op} ".join(str(c) if c.op is None else f"({c})" for c in self.children)

    @classmethod
    def parse(cls, text: str) -> "CombinationExpr":
        toks = text.replace("∧", " & ").replace("∨", " | ").replace("(", " ( ").replace(")", " ) ").split()
        pos = 0

        def expr(level: int) -> CombinationExpr:
            nonlocal pos
            op = OR if level == 0 else AND
            parts = [expr(level + 1) if level == 0 else atom()]
            while pos < len(toks) and toks[pos] == op:
                pos += 1
                parts.append(expr(level + 1) if level == 0 else atom())
            return cls.node(op, parts)

        def atom() -> CombinationExpr:
            nonlocal pos
            if pos >= len(toks):
                raise ValueError(f"unexpected end of expression: {text!r}")
            tok = toks[pos]
            pos += 1
            if tok == "(":
                e = expr(0)
                if pos >= len(toks) or toks[pos] != ")":
                    raise ValueError(f"unbalanced parentheses: {text!r}")
                pos += 1
                return e
            if tok in (AND, OR, ")"):
                raise ValueError(f"unexpected {tok!r} in {text!r}")
            return cls.leaf(tok)

        e = expr(0)
        if pos != len(toks):
            raise ValueError(f"trailing tokens in {text!r}")
        return e


def check_combination(expr: CombinationExpr, holds: dict[str, bool]) -> bool:
    """Blocked iff the expression over per-template holds values is false."""
    return not expr.holds(holds)


def _partitions(items: tuple) -> Iterator[list[tuple]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _partitions(rest):
        yield [(first,)] + part
        for i in range(len(part)):
            yield part[:i] + [(first,) + part[i]] + part[i + 1:]


def _exprs(items: tuple, op: str | None) -> list[CombinationExpr]:
    """Distinct expressions over exactly `items`; `op` forces the top operator."""
    if len(items) == 1:
        return [CombinationExpr.leaf(items[0])]
    out = []
    for top in ((AND, OR) if op is None else (op,)):
        inner = OR if top == AND else AND
        for part in _partitions(items):
            if len(part) < 2:
                continue
            for kids in itertools.product(*(_exprs(b, inner) for b in part)):
                out.append(CombinationExpr.node(top, kids))
    return out


def all_combinations(templates: Iterable[str], max_leaves: int = 4) -> list[CombinationExpr]:
    names = sorted(dict.fromkeys(templates))
    seen, out = set(), []
    for k in range(1, min(max_leaves, len(names)) + 1):
        for subset in itertools.combinations(names, k):
            for e in _exprs(subset, None):
                s = str(e)
                if s not in seen:
                    seen.add(s)
                    out.append(e)
    return out


@dataclass(frozen=True)
class ComboScore:
    expr: CombinationExpr
    hacks_blocked: int
    benign_blocked: int
    benign_total: int

    @property
    def fp_rate(self) -> Fraction:
        return Fraction(self.benign_blocked, self.benign_total) if self.benign_total else Fraction(0)

    def to_dict(self) -> dict:
        return {
            "expr": str(self.expr), "leaves": len(self.expr.leaves), "hacksBlocked": self.hacks_blocked,
            "benignBlocked": self.benign_blocked, "benignTotal": self.benign_total,
            "fpPercent": pct(self.fp_rate),
        }


def _rank_key(s: ComboScore):
    return (-s.hacks_blocked, s.fp_rate, str(s.expr))


def enumerate_combinations(
    templates: Iterable[str],
    test_results: Iterable[tuple[str, dict[str, bool]]],
    fp_limit: Fraction = Fraction(1, 100),
    max_leaves: int = 4,
) -> tuple[list[ComboScore], list[ComboScore]]:
    """Score every ≤4-leaf AND/OR expression; return (metric-1, metric-2) rankings.

    `test_results` holds one (label, per-template holds) pair per test
    transaction that reaches the target.
    """
    rows = list(test_results)
    scores = []
    for e in all_combinations(templates, max_leaves):
        hacks = benign = total = 0
        for label, holds in rows:
            blocked = check_combination(e, holds)
            if label == EXPLOIT:
                hacks += blocked
            else:
                total += 1
                benign += blocked
        scores.append(ComboScore(e, hacks, benign, total))
    metric1 = sorted(scores, key=_rank_key)
    metric2 = [s for s in metric1 if s.fp_rate < fp_limit]
    return metric1, metric2


def combination_inputs(verdicts: Iterable[Verdict], templates: Iterable[str]) -> list[tuple[str, dict[str, bool]]]:
    templates = list(templates)
    return [(v.label, {t: v.holds(t) for t in templates}) for v in verdicts if v.touches_target]


# -- report --------------------------------------------------------------------

def pct(fr: Fraction) -> str:
    """Percentage with at most two decimals and at least one: 0.0, 0.5, 3.99."""
    s = f"{float(fr * 100):.2f}".rstrip("0")
    return s + "0" if s.endswith(".") else s


@dataclass
class ReportRow:
    template: str
    status: str
    cell: str
    applied: int
    exploits_blocked: int
    exploits_total: int
    benign_blocked: int
    benign_total: int

    @property
    def tp(self) -> bool:
        return self.exploits_blocked > 0

    def to_dict(self) -> dict:
        return {
            "template": self.template, "status": self.status, "cell": self.cell, "tp": self.tp,
            "appliedInstances": self.applied, "exploitsBlocked": self.exploits_blocked,
            "exploitsTotal": self.exploits_total, "benignBlocked": self.benign_blocked,
            "benignTotal": self.benign_total,
        }


def aggregate_report(verdicts: list[Verdict], manifest: Manifest, templates: Iterable[str] | None = None) -> list[ReportRow]:
    """One Table-4 style row per template."""
    templates = [t for t in TEMPLATES if templates is None or t in set(templates)]
    touched = [v for v in verdicts if v.touches_target]
    exploits = [v for v in touched if v.label == EXPLOIT]
    benign = [v for v in touched if v.label != EXPLOIT]
    rows = []
    for t in templates:
        insts = manifest.for_template(t)
        applied = [i for i in insts if i.status == APPLIED]
        if applied:
            eb = sum(not v.holds(t) for v in exploits)
            bb = sum(not v.holds(t) for v in benign)
            cell = pct(Fraction(bb, len(benign)) if benign else Fraction(0))
            rows.append(ReportRow(t, APPLIED, cell, len(applied), eb, len(exploits), bb, len(benign)))
            continue
        statuses = {i.status for i in insts}
        if VIOLATED in statuses:
            status, cell = VIOLATED, "✗"
        elif INSUFFICIENT in statuses:
            status, cell = INSUFFICIENT, "∅"
        else:
            status, cell = NOT_APPLICABLE, "-"
        rows.append(ReportRow(t, status, cell, 0, 0, len(exploits), 0, len(benign)))
    return rows


def report_csv(rows: list[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["template", "cell", "tp", "status", "applied_instances", "exploits_blocked",
                "exploits_total", "benign_blocked", "benign_total"])
    for r in rows:
        w.writerow([r.template, r.cell, "TP" if r.tp else "", r.status, r.applied, r.exploits_blocked,
                    r.exploits_total, r.benign_blocked, r.benign_total])
    return buf.getvalue()


def report_json(rows: list[ReportRow]) -> str:
    return json.dumps([r.to_dict() for r in rows], indent=2, ensure_ascii=False) + "\n"
