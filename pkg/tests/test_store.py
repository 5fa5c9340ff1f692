import json
from fractions import Fraction

import pytest

from invguard.errors import CorruptCache, EmptyCorpus, MalformedTrace, ProviderUnavailable
from invguard.scenarios import random_call_tree
from invguard.store import CorpusIndex, FixtureSource, LiveSource, load_corpus, split_corpus, write_fixture
from invguard.trace import TxMetadata, dump_struct_logs, norm_addr

T = norm_addr(0xC0DE00)


def _corpus(n, blocks=None, same_index=False):
    txs = []
    for k in range(n):
        meta, entries, _ = random_call_tree(k)
        meta.tx_hash = "0x" + f"{k + 1:064x}"
        meta.block_number = blocks[k] if blocks else 100 - k   # written out of order on purpose
        meta.tx_index = None if same_index else k
        txs.append((meta, entries))
    return txs


def test_fixture_corpus_is_ordered(tmp_path):
    write_fixture(tmp_path, T, _corpus(3))
    idx = load_corpus(tmp_path, T)
    assert len(idx) == 3
    assert [m.block_number for m in idx.metas] == [98, 99, 100]
    assert idx.load_trace(idx.transactions[0][1])


def test_duplicate_tx_hash_is_corrupt(tmp_path):
    txs = _corpus(2)
    txs[1][0].tx_hash = txs[0][0].tx_hash
    write_fixture(tmp_path, T, txs)
    with pytest.raises(CorruptCache):
        load_corpus(tmp_path, T)


def test_missing_index_in_shared_block_is_rejected(tmp_path):
    write_fixture(tmp_path, T, _corpus(2, blocks=[5, 5], same_index=True))
    with pytest.raises(MalformedTrace):
        load_corpus(tmp_path, T)


def test_index_order_is_strict():
    m1 = TxMetadata("0x" + "01" * 32, 5, 0, T, T, tx_index=0)
    m2 = TxMetadata("0x" + "02" * 32, 5, 0, T, T, tx_index=0)
    with pytest.raises(MalformedTrace):
        CorpusIndex(T, [(m1, "a"), (m2, "b")])


def test_no_index_file_means_provider_unavailable(tmp_path):
    with pytest.raises(ProviderUnavailable):
        FixtureSource(tmp_path)


def _index(n):
    return CorpusIndex(T, [(TxMetadata("0x" + f"{k:064x}", k, 0, T, T, tx_index=0), str(k)) for k in range(n)])


@pytest.mark.parametrize("n,frac,k", [(10, 0.7, 7), (1, 0.7, 1), (3, 0.5, 2), (10, Fraction(1, 3), 4)])
def test_split_examples(n, frac, k):
    train, test = split_corpus(_index(n), frac)
    assert len(train) == k and len(test) == n - k
    assert train.metas + test.metas == _index(n).metas
    if len(test):
        assert max(m.block_number for m in train.metas) <= min(m.block_number for m in test.metas)


def test_split_empty():
    with pytest.raises(EmptyCorpus):
        split_corpus(_index(0), 0.7)


class FakeNode:
    """In-memory archive node speaking the batched JSON-RPC subset the live source uses."""

    def __init__(self, txs):
        self.txs = {m.tx_hash: (m, e) for m, e in txs}
        self.calls = 0

    def __call__(self, batch):
        self.calls += 1
        out = []
        for req in batch:
            method, params = req["method"], req["params"]
            if method == "eth_getTransactionByHash":
                m, _ = self.txs[params[0]]
                res = {"blockNumber": hex(m.block_number), "from": m.origin, "to": m.to, "value": hex(m.value),
                       "gas": hex(m.gas), "transactionIndex": hex(m.tx_index), "input": "0x" + m.input.hex()}
            elif method == "debug_traceTransaction":
                res = {"structLogs": dump_struct_logs(self.txs[params[0]][1])}
            elif method == "eth_getBlockByNumber":
                res = {"timestamp": hex(1_000 + int(params[0], 16))}
            else:
                raise AssertionError(method)
            out.append({"jsonrpc": "2.0", "id": req["id"], "result": res})
        return out


def test_live_source_caches(tmp_path):
    txs = _corpus(5)
    node = FakeNode(txs)
    hashes = [m.tx_hash for m, _ in txs]
    src = LiveSource(hashes, tmp_path, transport=node, batch_size=2)
    idx = load_corpus(src, T)
    assert len(idx) == 5 and src.requests == 6       # 3 batches x (tx+trace, blocks)
    again = LiveSource(hashes, tmp_path, transport=node, batch_size=2)
    idx2 = load_corpus(again, T)
    assert again.requests == 0
    assert idx2.metas == idx.metas
    assert idx2.load_trace(hashes[0]) == txs[0][1]


def test_live_cache_hash_mismatch(tmp_path):
    txs = _corpus(1)
    h = txs[0][0].tx_hash
    src = LiveSource([h], tmp_path, transport=FakeNode(txs))
    src.list()
    p = tmp_path / "traces" / f"{h}.json"
    rec = json.loads(p.read_text())
    rec["txHash"] = "0x" + "ff" * 32
    p.write_text(json.dumps(rec))
    with pytest.raises(CorruptCache):
        LiveSource([h], tmp_path, transport=FakeNode(txs)).list()


def test_live_source_needs_endpoint(tmp_path):
    with pytest.raises(ProviderUnavailable):
        LiveSource([], tmp_path)


def test_fixture_round_trip(tmp_path):
    txs = _corpus(4)
    write_fixture(tmp_path, T, txs)
    idx = load_corpus(tmp_path, T)
    by_hash = {m.tx_hash: (m, e) for m, e in txs}
    for meta, loc in idx:
        m, e = by_hash[meta.tx_hash]
        assert meta == m and idx.load_trace(loc) == e
