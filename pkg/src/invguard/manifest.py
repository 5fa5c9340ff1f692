"""Invariant instances and the manifest file that carries them."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

from .config import TEMPLATES

APPLIED = "applied"
NOT_APPLICABLE = "notApplicable"
VIOLATED = "violatedInTraining"
INSUFFICIENT = "insufficientData"
STATUSES = (APPLIED, NOT_APPLICABLE, VIOLATED, INSUFFICIENT)

CONTRACT = "contract"
SCHEMA = "invguard.manifest/1"

# templates whose Table-2 row has no parameter
PARAMETERLESS = frozenset({"EOA", "SB", "OB", "RE"})

_RATIO = re.compile(r"^-?\d+/\d+$")


def enc(x: Any) -> Any:
    """JSON form of a parameter value: exact ratios become "p/q" strings."""
    if isinstance(x, Fraction):
        return x.numerator if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    if isinstance(x, (list, tuple)):
        return [enc(v) for v in x]
    return x


def dec(x: Any) -> Any:
    if isinstance(x, str) and _RATIO.match(x):
        return Fraction(x)
    if isinstance(x, list):
        return [dec(v) for v in x]
    return x


@dataclass(frozen=True)
class InvariantInstance:
    template: str
    location: str
    status: str
    params: dict | None = None

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template}")
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status}")
        want = self.status == APPLIED and self.template not in PARAMETERLESS
        if want != bool(self.params):
            raise ValueError(f"{self.template}@{self.location}: params must be present iff applied with a parameter")
        if self.template in ("SM", "OM") and self.params:
            if not 2 <= len(self.params["managers"]) <= 5:
                raise ValueError("manager set size must lie in [2,5]")

    @property
    def key(self) -> tuple[str, str]:
        return (self.template, self.location)

    @property
    def applied(self) -> bool:
        return self.status == APPLIED

    def to_dict(self) -> dict:
        d = {"template": self.template, "location": self.location, "status": self.status}
        if self.params:
            d["params"] = {k: enc(v) for k, v in sorted(self.params.items())}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InvariantInstance":
        params = d.get("params")
        return cls(d["template"], d["location"], d["status"],
                   {k: dec(v) for k, v in params.items()} if params else None)


def sort_key(inst: InvariantInstance) -> tuple:
    return (TEMPLATES.index(inst.template), inst.location)


@dataclass
class Manifest:
    target: str
    instances: list[InvariantInstance]
    enter: frozenset = frozenset()
    exit: frozenset = frozenset()
    train_size: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.instances = sorted(self.instances, key=sort_key)
        self._by_key = {i.key: i for i in self.instances}

    def get(self, template: str, location: str) -> InvariantInstance | None:
        return self._by_key.get((template, location))

    def applied(self, templates=None) -> list[InvariantInstance]:
        return [i for i in self.instances if i.applied and (templates is None or i.template in templates)]

    def for_template(self, template: str) -> list[InvariantInstance]:
        return [i for i in self.instances if i.template == template]

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "target": self.target,
            "trainSize": self.train_size,
            "enter": sorted(self.enter),
            "exit": sorted(self.exit),
            "meta": self.meta,
            "instances": [i.to_dict() for i in self.instances],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        return cls(
            d["target"], [InvariantInstance.from_dict(i) for i in d["instances"]],
            frozenset(d.get("enter", ())), frozenset(d.get("exit", ())), d.get("trainSize", 0),
            d.get("meta", {}),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Manifest":
        return cls.from_dict(json.loads(text))
