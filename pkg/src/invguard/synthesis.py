"""Invariant inference from training observations.

Four heuristics: hypothesis testing (EOA, SB, OB, RE), role-set inference
(SO, SM, OO, OM), bound deduction (gas, oracle, storage, flow, data-flow
templates) and the hybrid block-gap rule for LU.
"""
from __future__ import annotations

from collections import defaultdict
from fractions import Fraction
from typing import Iterable, Sequence

from .checker import BLOCKED, GuardState, check_tx
from .config import CATEGORY, AnalysisConfig
from .extraction import ObservationSet
from .manifest import (
    APPLIED, CONTRACT, INSUFFICIENT, NOT_APPLICABLE, VIOLATED, InvariantInstance, Manifest,
)

OWNER_LIMIT = 1
MANAGER_LIMIT = 5
Z_LIMIT = 3
OR_LOW, OR_HIGH = Fraction(4, 5), Fraction(6, 5)

BOUND_PARAM = {
    "GS": "gasUpperbound", "GC": "gasUpperbound", "TSU": "totalSupplyUpperbound",
    "TBU": "totalBorrowUpperbound", "TIU": "valueVar", "TOU": "valueVar", "TIRU": "valueVar",
    "TORU": "valueVar", "MU": "valueVar", "CVU": "msgV", "DFU": "valueVar", "DFL": "valueVar",
}


# -- bound arithmetic ----------------------------------------------------------

def zscore_filter(points: Sequence) -> list:
    """Drop points with |z| > 3 under the population mean and standard deviation.

    Exact: |x - mean| > 3 sigma  <=>  (x - mean)^2 > 9 var, all in rationals.
    """
    pts = [Fraction(p) for p in points]
    n = len(pts)
    if n < 2:
        return list(points)
    mean = sum(pts) / n
    var = sum((p - mean) ** 2 for p in pts) / n
    if var == 0:
        return list(points)
    limit = Z_LIMIT * Z_LIMIT * var
    return [orig for orig, p in zip(points, pts) if (p - mean) ** 2 <= limit]


def bound_params(template: str, points: Sequence) -> tuple[str, dict | None]:
    """(status, params) for one location's point set."""
    if len(set(points)) < 2:
        return INSUFFICIENT, None
    if template == "OR":
        return APPLIED, {"priceLowerbound": OR_LOW * min(points), "priceUpperbound": OR_HIGH * max(points)}
    if template == "OD":
        return APPLIED, {"priceDeviation": max(points)}
    if template in ("TIRU", "TORU"):
        points = zscore_filter(points)
        return APPLIED, {"valueVar": max(points)}
    if template == "DFL":
        return APPLIED, {"valueVar": min(points)}
    return APPLIED, {BOUND_PARAM[template]: max(points)}


def infer_bounds(template: str, points_by_location: dict[str, Sequence]) -> list[InvariantInstance]:
    out = []
    for loc in sorted(points_by_location):
        status, params = bound_params(template, points_by_location[loc])
        out.append(InvariantInstance(template, loc, status, params))
    return out


# -- collectors ----------------------------------------------------------------

def _calls(train: Iterable[ObservationSet]):
    for obs in train:
        for c in obs.calls:
            yield obs, c


def bound_points(template: str, train: list[ObservationSet], unreliable: set = frozenset()) -> dict[str, list]:
    pts: dict[str, list] = defaultdict(list)
    if template == "OD":
        last: dict[str, int] = {}
        for _, c in _calls(train):
            for key, v in c.oracles:
                old = last.get(key)
                if old:
                    pts[key].append(Fraction(abs(v - old), old))
                else:
                    pts.setdefault(key, [])
                last[key] = v
        return dict(pts)
    for obs, c in _calls(train):
        if template == "GS":
            if c.selector is not None:
                pts[c.selector].append(c.gas_entry)
        elif template == "GC":
            if c.selector is not None:
                pts[c.selector].append(c.gas_used)
        elif template == "OR":
            for key, v in c.oracles:
                pts[key].append(v)
        elif template in ("TIU", "TOU", "TIRU", "TORU"):
            direction = "in" if template in ("TIU", "TIRU") else "out"
            for token, f in c.flows.items():
                amount = f.get(direction, 0)
                if not amount:
                    continue
                if template in ("TIU", "TOU"):
                    pts[token].append(amount)
                elif token not in unreliable and token not in obs.unreliable:
                    bal = obs.pre_balances.get(token, 0)
                    if bal > 0:
                        pts[token].append(Fraction(amount, bal))
        elif template in ("MU", "CVU", "DFU", "DFL"):
            kind = "DF" if template in ("DFU", "DFL") else template
            for k, loc, v in c.data:
                if k == kind:
                    pts[loc].append(v)
    return dict(pts)


def storage_points(train: list[ObservationSet], name: str) -> list[int]:
    return [c.storage[name] for _, c in _calls(train) if name in c.storage]


# -- heuristics ----------------------------------------------------------------

def _replay(inst: InvariantInstance, train: list[ObservationSet], enter, exit_) -> bool:
    """True when the candidate instance never blocks a training transaction."""
    probe = Manifest("", [inst], frozenset(enter), frozenset(exit_))
    state = GuardState()
    for obs in train:
        verdict, state = check_tx(obs, probe, state)
        if verdict.results.get(inst.key) == BLOCKED:
            return False
    return True


def infer_hypothesis(template: str, train: list[ObservationSet], enter=frozenset(), exit_=frozenset(),
                     selectors: Iterable[str] = ()) -> list[InvariantInstance]:
    """EOA per selector; SB, OB, RE contract-wide. Applied iff no training violation."""
    if template == "EOA":
        seen = {c.selector for _, c in _calls(train) if c.selector is not None}
        out = []
        for sel in sorted(seen | set(selectors)):
            if sel not in seen:
                out.append(InvariantInstance("EOA", sel, INSUFFICIENT))
                continue
            ok = _replay(InvariantInstance("EOA", sel, APPLIED), train, enter, exit_)
            out.append(InvariantInstance("EOA", sel, APPLIED if ok else VIOLATED))
        return out
    if template in ("SB", "OB"):
        if not enter or not exit_:
            return [InvariantInstance(template, CONTRACT, NOT_APPLICABLE)]
    elif template == "RE":
        if not any(obs.calls for obs in train):
            return [InvariantInstance(template, CONTRACT, INSUFFICIENT)]
    else:
        raise ValueError(f"{template} is not a hypothesis template")
    ok = _replay(InvariantInstance(template, CONTRACT, APPLIED), train, enter, exit_)
    return [InvariantInstance(template, CONTRACT, APPLIED if ok else VIOLATED)]


def role_instance(template: str, location: str, members: set) -> InvariantInstance:
    n = len(members)
    if n == 0:
        return InvariantInstance(template, location, INSUFFICIENT)
    if template in ("SO", "OO"):
        if n > OWNER_LIMIT:
            return InvariantInstance(template, location, VIOLATED)
        return InvariantInstance(template, location, APPLIED, {"owner": next(iter(members))})
    if n > MANAGER_LIMIT:
        return InvariantInstance(template, location, VIOLATED)
    if n == 1:
        # a single address is the owner template's job
        return InvariantInstance(template, location, NOT_APPLICABLE)
    return InvariantInstance(template, location, APPLIED, {"managers": sorted(members)})


def infer_roles(template: str, train: list[ObservationSet], selectors: Iterable[str] = ()) -> list[InvariantInstance]:
    sets: dict[str, set] = {s: set() for s in selectors}
    for obs, c in _calls(train):
        if c.selector is None:
            continue
        who = c.caller if template in ("SO", "SM") else obs.origin
        sets.setdefault(c.selector, set()).add(who)
    return [role_instance(template, sel, sets[sel]) for sel in sorted(sets)]


def lastupdate_instance(location: str, blocks: Sequence[int]) -> InvariantInstance:
    if len(blocks) < 2:
        return InvariantInstance("LU", location, INSUFFICIENT)
    gaps = [b - a for a, b in zip(blocks, blocks[1:])]
    if min(gaps) <= 0:
        return InvariantInstance("LU", location, VIOLATED)
    return InvariantInstance("LU", location, APPLIED, {"nbBlocks": min(gaps)})


def infer_lastupdate(train: list[ObservationSet], selectors: Iterable[str] = ()) -> list[InvariantInstance]:
    blocks: dict[str, list[int]] = {s: [] for s in selectors}
    for obs, c in _calls(train):
        if c.selector is not None:
            blocks.setdefault(c.selector, []).append(obs.block_number)
    return [lastupdate_instance(sel, blocks[sel]) for sel in sorted(blocks)]


# -- driver --------------------------------------------------------------------

def synthesize(
    train: list[ObservationSet],
    cfg: AnalysisConfig,
    enter=frozenset(),
    exit_=frozenset(),
    selectors: Iterable[str] = (),
    unreliable: Iterable[str] = (),
) -> Manifest:
    """One instance per (template, location) for every enabled template."""
    train = list(train)
    selectors = sorted(set(selectors))
    unreliable = set(unreliable)
    na_categories = set()
    for obs in train:
        na_categories |= obs.not_applicable
    special = cfg.special_storage or {}
    instances: list[InvariantInstance] = []
    for t in cfg.templates:
        cat = CATEGORY[t]
        if cat in na_categories or (cat == "oracle" and not cfg.oracles) or (cat == "flow" and cfg.tokens is None):
            instances.append(InvariantInstance(t, CONTRACT, NOT_APPLICABLE))
            continue
        if t in ("EOA", "SB", "OB", "RE"):
            instances += infer_hypothesis(t, train, enter, exit_, selectors)
        elif t in ("SO", "SM", "OO", "OM"):
            instances += infer_roles(t, train, selectors)
        elif t == "LU":
            instances += infer_lastupdate(train, selectors)
        elif t in ("TSU", "TBU"):
            name = special.get("totalSupplyName" if t == "TSU" else "totalBorrowName")
            if not name:
                instances.append(InvariantInstance(t, CONTRACT, NOT_APPLICABLE))
                continue
            instances += infer_bounds(t, {name: storage_points(train, name)})
        else:
            pts = bound_points(t, train, unreliable)
            if t in ("GS", "GC"):
                for s in selectors:
                    pts.setdefault(s, [])
            dropped = []
            if t in ("TIRU", "TORU"):
                # ratios against a balance history we cannot trust are not emitted
                flowed = bound_points("TIU" if t == "TIRU" else "TOU", train)
                dropped = [InvariantInstance(t, tok, NOT_APPLICABLE) for tok in sorted(flowed) if tok not in pts]
            if not pts and not dropped:
                instances.append(InvariantInstance(t, CONTRACT, NOT_APPLICABLE))
                continue
            instances += infer_bounds(t, pts) + dropped
    return Manifest(cfg.target, instances, frozenset(enter), frozenset(exit_), len(train))

