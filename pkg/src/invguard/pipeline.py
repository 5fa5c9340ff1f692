"""Batch pipeline behind the command line: parse, infer, check, combine, report.

Every stage reads and writes files under the cache directory; outputs are
written atomically and carry no timestamps, so identical inputs give
byte-identical files.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .abi import AbiCatalog
from .checker import (
    Verdict, aggregate_report, check_corpus, combination_inputs, enumerate_combinations, report_csv, report_json,
)
from .config import AnalysisConfig
from .errors import (
    AbiMismatch, ConfigError, CorruptCache, EmptyCorpus, MalformedTrace, TrackerDesync,
)
from .extraction import BalanceLedger, ObservationSet, TxAnalysis, analyze_transaction, classify_enter_exit, extract
from .hashing import keccak256
from .manifest import Manifest
from .storage import StorageLayout
from .store import CorpusIndex, FixtureSource, LiveSource, atomic_write, load_corpus, split_corpus
from .synthesis import synthesize

log = logging.getLogger(__name__)

ANALYSIS_VERSION = 1
SKIPPABLE = (MalformedTrace, AbiMismatch, TrackerDesync)


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False) + "\n"


@dataclass
class ParseResult:
    parsed: list[str] = field(default_factory=list)      # analysed in this run
    cached: list[str] = field(default_factory=list)      # already up to date
    skipped: list[dict] = field(default_factory=list)    # {"txHash", "error"}

    @property
    def work(self) -> int:
        return len(self.parsed)


class Pipeline:
    """One target, one config, one cache directory."""

    def __init__(self, cfg: AnalysisConfig, source=None):
        self.cfg = cfg
        self.cache = Path(cfg.cache_dir or ".invguard-cache")
        self.source = source if source is not None else open_source(cfg)
        self.catalog = self._catalog()
        self.layout = self._layout()

    # -- descriptors -------------------------------------------------------
    def _catalog(self) -> AbiCatalog:
        if hasattr(self.source, "catalog"):
            return self.source.catalog()
        d = (self.cfg.provider or {}).get("descriptors")
        return AbiCatalog.from_dir(Path(d) / "abi") if d else AbiCatalog()

    def _layout(self) -> StorageLayout | None:
        if hasattr(self.source, "layout"):
            return self.source.layout(self.cfg.target)
        d = (self.cfg.provider or {}).get("descriptors")
        p = Path(d) / "layout" / f"{self.cfg.target}.json" if d else None
        return StorageLayout.load(p) if p is not None and p.is_file() else None

    def fingerprint(self) -> str:
        """Hash of everything an analysis depends on besides the trace itself."""
        basis = {
            "version": ANALYSIS_VERSION,
            "target": self.cfg.target,
            "tokens": list(self.cfg.token_addresses),
            "abi": self.catalog.to_json(),
            "layout": self.layout.to_json() if self.layout else None,
        }
        return "0x" + keccak256(json.dumps(basis, sort_keys=True).encode()).hex()

    # -- paths -------------------------------------------------------------
    @property
    def analysis_dir(self) -> Path:
        return self.cache / "analysis"

    def _analysis_file(self, tx_hash: str) -> Path:
        return self.analysis_dir / f"{tx_hash}.json"

    @property
    def index_file(self) -> Path:
        return self.cache / "corpus.json"

    @property
    def skip_file(self) -> Path:
        return self.cache / "skipped.json"

    @property
    def manifest_file(self) -> Path:
        return self.cache / "manifest.json"

    # -- parse -------------------------------------------------------------
    def corpus(self) -> CorpusIndex:
        index = load_corpus(self.source, self.cfg.target)
        if len(index) == 0:
            raise EmptyCorpus(f"no transactions for {self.cfg.target}")
        return index

    def _cached(self, tx_hash: str, fp: str) -> bool:
        p = self._analysis_file(tx_hash)
        if not p.is_file():
            return False
        try:
            return json.loads(p.read_text()).get("fingerprint") == fp
        except json.JSONDecodeError:
            return False

    def _analyze_one(self, index: CorpusIndex, meta, locator: str, fp: str) -> dict | None:
        try:
            entries = index.load_trace(locator)
            an = analyze_transaction(entries, meta, self.cfg.target, self.catalog, self.layout,
                                     self.cfg.token_addresses)
        except SKIPPABLE as exc:
            log.warning("skipping %s: %s", meta.tx_hash, exc)
            return {"txHash": meta.tx_hash, "error": f"{type(exc).__name__}: {exc}"}
        atomic_write(self._analysis_file(meta.tx_hash),
                     json.dumps({"fingerprint": fp, "analysis": an.to_dict()}, sort_keys=True))
        return None

    def parse(self) -> ParseResult:
        """Analyse every transaction not already cached under the current fingerprint."""
        index = self.corpus()
        fp = self.fingerprint()
        prior = self._skips(fp)
        res, todo = ParseResult(), []
        for meta, loc in index:
            if meta.tx_hash in prior or self._cached(meta.tx_hash, fp):
                res.cached.append(meta.tx_hash)
            else:
                todo.append((meta, loc))
        with ThreadPoolExecutor(max_workers=self.cfg.parallelism) as pool:
            outcomes = list(pool.map(lambda item: self._analyze_one(index, item[0], item[1], fp), todo))
        for (meta, _), bad in zip(todo, outcomes):
            if bad is None:
                res.parsed.append(meta.tx_hash)
            else:
                prior[meta.tx_hash] = bad["error"]
        res.skipped = [{"txHash": m.tx_hash, "error": prior[m.tx_hash]} for m in index.metas if m.tx_hash in prior]
        atomic_write(self.skip_file, _dump({"fingerprint": fp, "skipped": res.skipped}))
        atomic_write(self.index_file, _dump({
            "target": self.cfg.target, "fingerprint": fp,
            "transactions": [m.to_record() for m in index.metas],
        }))
        return res

    def _skips(self, fp: str | None = None) -> dict[str, str]:
        """Skip report entries; with `fp`, only those recorded under that fingerprint."""
        if not self.skip_file.is_file():
            return {}
        try:
            doc = json.loads(self.skip_file.read_text())
        except json.JSONDecodeError as exc:
            raise CorruptCache(f"{self.skip_file}: {exc}") from exc
        if fp is not None and doc.get("fingerprint") != fp:
            return {}
        return {r["txHash"]: r["error"] for r in doc.get("skipped", [])}

    # -- observations ------------------------------------------------------
    def load_analysis(self, tx_hash: str) -> TxAnalysis | None:
        p = self._analysis_file(tx_hash)
        if not p.is_file():
            return None
        try:
            return TxAnalysis.from_dict(json.loads(p.read_text())["analysis"])
        except (json.JSONDecodeError, KeyError) as exc:
            raise CorruptCache(f"{p}: {exc}") from exc

    def observations(self) -> tuple[list[ObservationSet], list[ObservationSet], BalanceLedger]:
        """(train, test) observation sets, with the balance ledger replayed over the whole corpus."""
        if not self.index_file.is_file():
            self.parse()
        index = self.corpus()
        train_idx, test_idx = split_corpus(index, self.cfg.train_fraction)
        ledger = BalanceLedger.for_config(self.cfg)
        skipped = self._skips()
        out: dict[str, ObservationSet] = {}
        for meta in index.metas:
            if meta.tx_hash in skipped:
                continue
            an = self.load_analysis(meta.tx_hash)
            if an is None:
                raise CorruptCache(f"no cached analysis for {meta.tx_hash}; run parse first")
            out[meta.tx_hash] = extract(an, self.cfg, ledger)
        train = [out[m.tx_hash] for m in train_idx.metas if m.tx_hash in out]
        test = [out[m.tx_hash] for m in test_idx.metas if m.tx_hash in out]
        return train, test, ledger

    # -- infer -------------------------------------------------------------
    def infer(self, out: str | Path | None = None) -> Manifest:
        train, _, ledger = self.observations()
        enter, exit_ = classify_enter_exit(self.catalog, train, self.cfg.enter_exit_overrides)
        selectors = self.catalog.selectors(self.cfg.target).keys()
        manifest = synthesize(train, self.cfg, enter, exit_, selectors, ledger.unreliable)
        manifest.meta = {
            "trainFraction": f"{self.cfg.train_fraction.numerator}/{self.cfg.train_fraction.denominator}",
            "templates": list(self.cfg.templates),
        }
        atomic_write(Path(out) if out else self.manifest_file, manifest.dumps())
        return manifest

    def load_manifest(self, path: str | Path | None = None) -> Manifest:
        p = Path(path) if path else self.manifest_file
        if not p.is_file():
            raise CorruptCache(f"no manifest at {p}; run infer first")
        try:
            m = Manifest.loads(p.read_text())
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise CorruptCache(f"unreadable manifest {p}: {exc}") from exc
        if m.target != self.cfg.target:
            raise ConfigError(f"manifest is for {m.target}, config targets {self.cfg.target}")
        return m

    # -- check / combine / report -------------------------------------------
    def verdicts(self, manifest: Manifest) -> list[Verdict]:
        _, test, _ = self.observations()
        if not test:
            raise EmptyCorpus("test split is empty")
        return check_corpus(test, manifest, self.cfg.exploits)

    def check(self, manifest: Manifest, out_dir: str | Path | None = None) -> list[Verdict]:
        vs = self.verdicts(manifest)
        atomic_write(Path(out_dir or self.cache) / "verdicts.json", _dump([v.to_dict() for v in vs]))
        return vs

    def combine(self, manifest: Manifest, out_dir: str | Path | None = None) -> dict:
        vs = self.verdicts(manifest)
        templates = self.cfg.combination_templates
        m1, m2 = enumerate_combinations(templates, combination_inputs(vs, templates))
        doc = {
            "templates": list(templates),
            "metric1": [s.to_dict() for s in m1],
            "metric2": [s.to_dict() for s in m2],
        }
        atomic_write(Path(out_dir or self.cache) / "combinations.json", _dump(doc))
        return doc

    def report(self, manifest: Manifest, out_dir: str | Path | None = None) -> list:
        vs = self.verdicts(manifest)
        rows = aggregate_report(vs, manifest, self.cfg.templates)
        d = Path(out_dir or self.cache)
        atomic_write(d / "report.csv", report_csv(rows))
        atomic_write(d / "report.json", report_json(rows))
        return rows


def open_source(cfg: AnalysisConfig):
    if cfg.fixtures:
        return FixtureSource(cfg.fixtures)
    p = cfg.provider or {}
    if not p.get("endpoint") and not p.get("transport"):
        raise ConfigError("config names neither a fixture directory nor a provider endpoint")
    return LiveSource(p.get("txHashes", []), Path(cfg.cache_dir or ".invguard-cache"),
                      transport=p.get("transport"), endpoint=p.get("endpoint"),
                      batch_size=cfg.batch_size, max_in_flight=cfg.parallelism, headers=p.get("headers"))


# thin functional wrappers

def cmd_parse(cfg: AnalysisConfig) -> ParseResult:
    return Pipeline(cfg).parse()


def cmd_infer(cfg: AnalysisConfig, out=None) -> Manifest:
    return Pipeline(cfg).infer(out)


def cmd_check(cfg: AnalysisConfig, manifest=None, out=None) -> list[Verdict]:
    pl = Pipeline(cfg)
    return pl.check(pl.load_manifest(manifest), out)


def cmd_combine(cfg: AnalysisConfig, manifest=None, out=None) -> dict:
    pl = Pipeline(cfg)
    return pl.combine(pl.load_manifest(manifest), out)


def cmd_report(cfg: AnalysisConfig, manifest=None, out=None) -> list:
    pl = Pipeline(cfg)
    return pl.report(pl.load_manifest(manifest), out)

