import math

import pytest

from invguard.abi import AbiCatalog
from invguard.config import AnalysisConfig
from invguard.extraction import BalanceLedger, analyze_transaction, classify_enter_exit, extract
from invguard.scenarios import eth_vault_corpus, harvest_corpus
from invguard.storage import StorageLayout
from invguard.synthesis import synthesize


class Analysed:
    """A scenario corpus pushed through analysis, extraction and synthesis in memory."""

    def __init__(self, corpus, train_fraction=None):
        self.corpus = corpus
        cfg = dict(corpus.config)
        if train_fraction is not None:
            cfg["trainFraction"] = train_fraction
        self.cfg = AnalysisConfig.from_dict(cfg)
        self.catalog = AbiCatalog()
        for a, abi in corpus.abis.items():
            self.catalog.add_abi(a, abi)
        lay = corpus.layouts.get(corpus.target)
        self.layout = StorageLayout.from_json(lay) if lay else None
        self.ledger = BalanceLedger.for_config(self.cfg)
        self.analyses = [
            analyze_transaction(entries, meta, corpus.target, self.catalog, self.layout, self.cfg.token_addresses)
            for meta, entries in corpus.txs
        ]
        self.obs = [extract(an, self.cfg, self.ledger) for an in self.analyses]
        k = math.ceil(self.cfg.train_fraction * len(self.obs))
        self.train, self.test = self.obs[:k], self.obs[k:]
        self.enter, self.exit = classify_enter_exit(self.catalog, self.train, self.cfg.enter_exit_overrides)
        self.manifest = synthesize(self.train, self.cfg, self.enter, self.exit,
                                   self.catalog.selectors(corpus.target).keys(), self.ledger.unreliable)


@pytest.fixture(scope="session")
def harvest():
    return harvest_corpus()


@pytest.fixture(scope="session")
def harvest_run(harvest):
    return Analysed(harvest)


@pytest.fixture(scope="session")
def harvest_dir(harvest, tmp_path_factory):
    return harvest.write(tmp_path_factory.mktemp("harvest"))


@pytest.fixture(scope="session")
def eth_vault_run():
    return Analysed(eth_vault_corpus())


# -- acceptance reporting ----------------------------------------------------------

ACCEPTANCE: list[tuple[str, bool, float, str]] = []


@pytest.fixture
def criterion(request):
    """Times one acceptance criterion and records a pass/fail line for the summary."""
    import time

    class Rec:
        detail = ""

    rec = Rec()
    t0 = time.perf_counter()
    yield rec
    elapsed = time.perf_counter() - t0
    failed = getattr(request.node, "rep_call", None)
    ok = failed is not None and failed.passed
    ACCEPTANCE.append((request.node.name, ok, elapsed, rec.detail))
    print(f"{'PASS' if ok else 'FAIL'}  {request.node.name}  ({elapsed:.2f}s) {rec.detail}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, elapsed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name:<34} {elapsed:6.2f}s  {detail}")
