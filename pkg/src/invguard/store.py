"""Trace corpus access: fixture directories, live JSON-RPC with a disk cache, splitting."""
from __future__ import annotations

import json
import math
import os
import tempfile
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

from .abi import AbiCatalog
from .errors import CorruptCache, EmptyCorpus, MalformedTrace, ProviderUnavailable
from .storage import StorageLayout
from .trace import StructLogEntry, TxMetadata, dump_struct_logs, norm_addr, parse_struct_logs

INDEX_FILE = "index.json"


def atomic_write(path: str | Path, text: str) -> None:
    """Write-temp-then-rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class CorpusIndex:
    target: str
    transactions: list[tuple[TxMetadata, str]]
    source: Any = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        seen = set()
        for meta, _ in self.transactions:
            if meta.tx_hash in seen:
                raise CorruptCache(f"duplicate transaction {meta.tx_hash}")
            seen.add(meta.tx_hash)
        keys = [_order_key(m) for m, _ in self.transactions]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            raise MalformedTrace("corpus index is not strictly ordered by (block, tx index)")

    def __len__(self) -> int:
        return len(self.transactions)

    def __iter__(self):
        return iter(self.transactions)

    @property
    def metas(self) -> list[TxMetadata]:
        return [m for m, _ in self.transactions]

    def load_trace(self, locator: str) -> list[StructLogEntry]:
        if self.source is None:
            raise ProviderUnavailable("corpus index has no attached source")
        return self.source.load_trace(locator)

    def subset(self, items: list[tuple[TxMetadata, str]]) -> "CorpusIndex":
        return CorpusIndex(self.target, items, self.source)


def _order_key(meta: TxMetadata) -> tuple[int, int]:
    return (meta.block_number, -1 if meta.tx_index is None else meta.tx_index)


def _sort(metas: list[tuple[TxMetadata, str]]) -> list[tuple[TxMetadata, str]]:
    seen: dict[str, TxMetadata] = {}
    for m, _ in metas:
        if m.tx_hash in seen:
            raise CorruptCache(f"two records carry txHash {m.tx_hash}")
        seen[m.tx_hash] = m
    by_block: dict[int, list[TxMetadata]] = {}
    for m, _ in metas:
        by_block.setdefault(m.block_number, []).append(m)
    for block, ms in by_block.items():
        if len(ms) > 1 and any(m.tx_index is None for m in ms):
            raise MalformedTrace(f"block {block} holds several transactions but lacks a transaction index")
    return sorted(metas, key=lambda item: _order_key(item[0]))


# -- fixture mode ----------------------------------------------------------------

class FixtureSource:
    """Offline corpus directory.

    Layout: index.json ({"target", "transactions": [TxMetadata + "trace"]}),
    one structLogs file per transaction, abi/<address>.json and
    layout/<address>.json descriptors.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if not (self.path / INDEX_FILE).is_file():
            raise ProviderUnavailable(f"no {INDEX_FILE} in fixture directory {self.path}")

    def index(self) -> dict:
        try:
            return json.loads((self.path / INDEX_FILE).read_text())
        except json.JSONDecodeError as exc:
            raise CorruptCache(f"unreadable {INDEX_FILE}: {exc}") from exc

    def list(self) -> list[tuple[TxMetadata, str]]:
        return [(TxMetadata.from_record(rec), rec["trace"]) for rec in self.index().get("transactions", [])]

    def load_trace(self, locator: str) -> list[StructLogEntry]:
        p = self.path / locator
        try:
            raw = p.read_bytes()
        except OSError as exc:
            raise MalformedTrace(f"cannot read trace {locator}: {exc}") from exc
        return parse_struct_logs(raw)

    def catalog(self) -> AbiCatalog:
        return AbiCatalog.from_dir(self.path / "abi")

    def layout(self, address: str) -> StorageLayout | None:
        p = self.path / "layout" / f"{norm_addr(address)}.json"
        return StorageLayout.load(p) if p.is_file() else None


# -- live mode -------------------------------------------------------------------

Transport = Callable[[list[dict]], list[dict]]


def http_transport(endpoint: str, headers: dict | None = None, timeout: float = 60.0) -> Transport:
    def send(batch: list[dict]) -> list[dict]:
        req = urllib.request.Request(
            endpoint, data=json.dumps(batch).encode(),
            headers={"Content-Type": "application/json", **(headers or {})},
        )
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                return json.loads(resp.read())
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise ProviderUnavailable(f"{endpoint}: {exc}") from exc
    return send


class LiveSource:
    """Archive-node JSON-RPC with batched requests and a txHash-keyed disk cache."""

    def __init__(self, tx_hashes: list[str], cache_dir: str | Path, transport: Transport | None = None,
                 endpoint: str | None = None, batch_size: int = 50, max_in_flight: int = 4,
                 headers: dict | None = None):
        if transport is None:
            if endpoint is None:
                raise ProviderUnavailable("live source needs an endpoint or a transport")
            transport = http_transport(endpoint, headers)
        self.tx_hashes = [h.lower() for h in tx_hashes]
        self.cache = Path(cache_dir) / "traces"
        self.transport = transport
        self.batch_size = max(1, batch_size)
        self.max_in_flight = max(1, max_in_flight)
        self.requests = 0
        self._lock = threading.Lock()

    def _cache_file(self, tx_hash: str) -> Path:
        return self.cache / f"{tx_hash}.json"

    def _read_cached(self, tx_hash: str) -> dict | None:
        p = self._cache_file(tx_hash)
        if not p.is_file():
            return None
        try:
            rec = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise CorruptCache(f"{p}: {exc}") from exc
        if str(rec.get("txHash", "")).lower() != tx_hash:
            raise CorruptCache(f"{p} holds {rec.get('txHash')}, expected {tx_hash}")
        return rec

    def _call(self, batch: list[dict]) -> dict[int, Any]:
        with self._lock:
            self.requests += 1
        replies = self.transport(batch)
        out = {}
        for r in replies:
            if r.get("error"):
                raise ProviderUnavailable(f"rpc error: {r['error']}")
            out[r["id"]] = r.get("result")
        return out

    def _fetch(self, hashes: list[str]) -> None:
        reqs = []
        for k, h in enumerate(hashes):
            reqs.append({"jsonrpc": "2.0", "id": 2 * k, "method": "eth_getTransactionByHash", "params": [h]})
            reqs.append({"jsonrpc": "2.0", "id": 2 * k + 1, "method": "debug_traceTransaction",
                         "params": [h, {"enableMemory": True, "disableStorage": True}]})
        res = self._call(reqs)
        blocks = sorted({res[2 * k]["blockNumber"] for k in range(len(hashes)) if res.get(2 * k)})
        stamps = self._call([
            {"jsonrpc": "2.0", "id": i, "method": "eth_getBlockByNumber", "params": [b, False]}
            for i, b in enumerate(blocks)
        ]) if blocks else {}
        ts = {b: stamps[i]["timestamp"] for i, b in enumerate(blocks)}
        for k, h in enumerate(hashes):
            tx, trace = res.get(2 * k), res.get(2 * k + 1)
            if tx is None or trace is None:
                raise ProviderUnavailable(f"provider returned no data for {h}")
            meta = {
                "txHash": h, "blockNumber": tx["blockNumber"], "blockTimestamp": ts[tx["blockNumber"]],
                "from": tx["from"], "to": tx["to"], "value": tx.get("value", "0x0"), "gas": tx.get("gas", "0x0"),
                "transactionIndex": tx["transactionIndex"], "input": tx.get("input", "0x"),
            }
            atomic_write(self._cache_file(h), json.dumps(
                {"txHash": h, "meta": meta, "structLogs": trace.get("structLogs", [])}, sort_keys=True))

    def list(self) -> list[tuple[TxMetadata, str]]:
        missing = [h for h in self.tx_hashes if self._read_cached(h) is None]
        batches = [missing[i:i + self.batch_size] for i in range(0, len(missing), self.batch_size)]
        if batches:
            with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
                list(pool.map(self._fetch, batches))
        out = []
        for h in self.tx_hashes:
            rec = self._read_cached(h)
            out.append((TxMetadata.from_record(rec["meta"]), h))
        return out

    def load_trace(self, locator: str) -> list[StructLogEntry]:
        rec = self._read_cached(locator)
        if rec is None:
            raise CorruptCache(f"trace {locator} is not cached")
        return parse_struct_logs(rec["structLogs"])


def load_corpus(source, target: str) -> CorpusIndex:
    """Ordered corpus index from a fixture directory (path) or a source object."""
    if isinstance(source, (str, Path)):
        source = FixtureSource(source)
    items = _sort(source.list())
    return CorpusIndex(norm_addr(target), items, source)


def split_corpus(index: CorpusIndex, train_fraction) -> tuple[CorpusIndex, CorpusIndex]:
    """Chronological prefix of ceil(fraction * N) for training, the rest for testing."""
    if len(index) == 0:
        raise EmptyCorpus("cannot split an empty corpus")
    frac = train_fraction if isinstance(train_fraction, Fraction) else Fraction(str(train_fraction))
    if not 0 < frac < 1:
        raise ValueError(f"train fraction must lie in (0,1), got {train_fraction}")
    k = math.ceil(frac * len(index))
    items = index.transactions
    return index.subset(items[:k]), index.subset(items[k:])


def write_fixture(path: str | Path, target: str, txs: list[tuple[TxMetadata, list[StructLogEntry]]],
                  abis: dict[str, list[dict]] | None = None, layouts: dict[str, dict] | None = None,
                  config: dict | None = None) -> Path:
    """Materialise a fixture directory that FixtureSource can read back."""
    path = Path(path)
    records = []
    for meta, entries in txs:
        rel = f"traces/{meta.tx_hash}.json"
        atomic_write(path / rel, json.dumps({"structLogs": dump_struct_logs(entries)}, separators=(",", ":")))
        records.append({**meta.to_record(), "trace": rel})
    atomic_write(path / INDEX_FILE, json.dumps({"target": norm_addr(target), "transactions": records}, indent=1))
    for addr, abi in (abis or {}).items():
        atomic_write(path / "abi" / f"{norm_addr(addr)}.json", json.dumps(abi, indent=1))
    for addr, lay in (layouts or {}).items():
        atomic_write(path / "layout" / f"{norm_addr(addr)}.json", json.dumps(lay, indent=1))
    if config is not None:
        atomic_write(path / "config.json", json.dumps(config, indent=1, sort_keys=True))
    return path
