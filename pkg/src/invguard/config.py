"""Analysis configuration (JSON file, overridable from the command line)."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Any

from .errors import ConfigError, ConfigMissing
from .trace import norm_addr, to_int

TEMPLATES = (
    "EOA", "SO", "SM", "OO", "OM", "SB", "OB", "LU", "GS", "GC", "RE", "OR", "OD",
    "TSU", "TBU", "TIU", "TOU", "TIRU", "TORU", "MU", "CVU", "DFU", "DFL",
)
COMBINATION_DEFAULT = ("EOA", "GC", "OB", "DFU")

CATEGORY = {
    "EOA": "access", "SO": "access", "SM": "access", "OO": "access", "OM": "access",
    "SB": "timelock", "OB": "timelock", "LU": "timelock",
    "GS": "gas", "GC": "gas",
    "RE": "reentry",
    "OR": "oracle", "OD": "oracle",
    "TSU": "storage", "TBU": "storage",
    "TIU": "flow", "TOU": "flow", "TIRU": "flow", "TORU": "flow",
    "MU": "dataflow", "CVU": "dataflow", "DFU": "dataflow", "DFL": "dataflow",
}

ETHER = "ether"
ADDRESS = re.compile(r"0x[0-9a-fA-F]{40}")


@dataclass(frozen=True)
class TokenSpec:
    address: str
    symbol: str = ""
    initial_balance: int = 0


@dataclass(frozen=True)
class OracleSpec:
    address: str
    selector: str
    word: int = 0
    name: str = ""

    @property
    def key(self) -> str:
        return self.name or f"{self.address}:{self.selector}"


@dataclass
class AnalysisConfig:
    target: str
    fixtures: str | None = None
    provider: dict | None = None
    train_fraction: Fraction = Fraction(7, 10)
    tokens: list[TokenSpec] | None = None
    oracles: list[OracleSpec] | None = None
    special_storage: dict | None = None
    enter_exit_overrides: dict | None = None
    templates: tuple[str, ...] = TEMPLATES
    combination_templates: tuple[str, ...] = COMBINATION_DEFAULT
    exploits: tuple[str, ...] = ()
    cache_dir: str | None = None
    parallelism: int = 1
    batch_size: int = 50

    def __post_init__(self):
        if isinstance(self.target, str) and not ADDRESS.fullmatch(self.target):
            raise ConfigError(f"target is not a 20-byte address: {self.target!r}")
        try:
            self.target = norm_addr(self.target)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"target is not a 20-byte address: {self.target!r}") from exc
        self.train_fraction = _fraction(self.train_fraction)
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"trainFraction must lie in (0,1), got {self.train_fraction}")
        bad = [t for t in (*self.templates, *self.combination_templates) if t not in CATEGORY]
        if bad:
            raise ConfigError(f"unknown template id(s): {', '.join(bad)}")
        self.templates = tuple(t for t in TEMPLATES if t in set(self.templates))
        self.combination_templates = tuple(dict.fromkeys(self.combination_templates))
        self.exploits = tuple(sorted({h.lower() for h in self.exploits}))
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    # -- sections ---------------------------------------------------------
    def section(self, name: str) -> Any:
        """Return a config section, raising ConfigMissing when it is absent."""
        value = {
            "tokens": self.tokens,
            "oracles": self.oracles,
            "specialStorage": self.special_storage,
        }[name]
        if value is None:
            raise ConfigMissing(f"configuration section {name!r} is missing")
        return value

    @property
    def token_addresses(self) -> tuple[str, ...]:
        return tuple(t.address for t in self.tokens or ())

    # -- (de)serialisation --------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "AnalysisConfig":
        if "target" not in d:
            raise ConfigError("config has no target address")
        kw: dict[str, Any] = {"target": d["target"]}
        if d.get("fixtures") is not None:
            fx = Path(d["fixtures"])
            kw["fixtures"] = str(fx if fx.is_absolute() or base is None else base / fx)
        if d.get("provider") is not None:
            kw["provider"] = dict(d["provider"])
        if "trainFraction" in d:
            kw["train_fraction"] = d["trainFraction"]
        if d.get("tokens") is not None:
            kw["tokens"] = [
                TokenSpec(norm_addr(t["address"]), t.get("symbol", ""), to_int(t.get("initialBalance", 0)))
                for t in d["tokens"]
            ]
        if d.get("oracles") is not None:
            kw["oracles"] = [
                OracleSpec(norm_addr(o["address"]), o["selector"].lower(), int(o.get("word", 0)), o.get("name", ""))
                for o in d["oracles"]
            ]
        for key, attr in (("specialStorage", "special_storage"), ("enterExitOverrides", "enter_exit_overrides")):
            if d.get(key) is not None:
                kw[attr] = dict(d[key])
        if "templates" in d:
            kw["templates"] = tuple(d["templates"])
        if "combinationTemplates" in d:
            kw["combination_templates"] = tuple(d["combinationTemplates"])
        if "exploits" in d:
            kw["exploits"] = tuple(d["exploits"])
        if d.get("cacheDir") is not None:
            kw["cache_dir"] = d["cacheDir"]
        for key, attr in (("parallelism", "parallelism"), ("batchSize", "batch_size")):
            if key in d:
                kw[attr] = int(d[key])
        try:
            return cls(**kw)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "AnalysisConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data, path.parent)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "target": self.target,
            "trainFraction": f"{self.train_fraction.numerator}/{self.train_fraction.denominator}",
            "templates": list(self.templates),
            "combinationTemplates": list(self.combination_templates),
            "exploits": list(self.exploits),
            "parallelism": self.parallelism,
            "batchSize": self.batch_size,
        }
        if self.fixtures is not None:
            d["fixtures"] = self.fixtures
        if self.provider is not None:
            d["provider"] = self.provider
        if self.tokens is not None:
            d["tokens"] = [
                {"address": t.address, "symbol": t.symbol, "initialBalance": t.initial_balance} for t in self.tokens
            ]
        if self.oracles is not None:
            d["oracles"] = [
                {"address": o.address, "selector": o.selector, "word": o.word, "name": o.name} for o in self.oracles
            ]
        if self.special_storage is not None:
            d["specialStorage"] = self.special_storage
        if self.enter_exit_overrides is not None:
            d["enterExitOverrides"] = self.enter_exit_overrides
        if self.cache_dir is not None:
            d["cacheDir"] = self.cache_dir
        return d

    def replace(self, **changes) -> "AnalysisConfig":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return AnalysisConfig(**kw)


def _fraction(x) -> Fraction:
    # go through str so 0.7 means 7/10, not the nearest binary float
    if isinstance(x, Fraction):
        return x
    try:
        return Fraction(str(x))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a ratio: {x!r}") from exc
