"""
Mining guards for a yield vault
===============================

A synthetic vault history with one price-manipulation attack. We train on
everything before the attack, then see which guards would have stopped it.
"""
from fractions import Fraction
import math

from invguard import AbiCatalog, AnalysisConfig, BalanceLedger, StorageLayout
from invguard.checker import aggregate_report, check_corpus
from invguard.extraction import analyze_transaction, classify_enter_exit, extract
from invguard.scenarios import harvest_corpus
from invguard.synthesis import synthesize

corpus = harvest_corpus()
cut = corpus.notes["exploitIndex"]
print(f"{len(corpus.txs)} transactions, attack at position {cut}")

# descriptors: ABIs for decoding, the vault's storage layout for naming slots
catalog = AbiCatalog()
for address, abi in corpus.abis.items():
    catalog.add_abi(address, abi)
layout = StorageLayout.from_json(corpus.layouts[corpus.target])
cfg = AnalysisConfig.from_dict({**corpus.config, "trainFraction": Fraction(cut, len(corpus.txs))})

# trace -> analysis -> observations, with the token ledger replayed in order
ledger = BalanceLedger.for_config(cfg)
obs = []
for meta, entries in corpus.txs:
    an = analyze_transaction(entries, meta, corpus.target, catalog, layout, cfg.token_addresses)
    obs.append(extract(an, cfg, ledger))

k = math.ceil(cfg.train_fraction * len(obs))
train, test = obs[:k], obs[k:]

# the attack, seen from the vault
attack = obs[cut]
for c in attack.calls:
    print(f"  {c.func:9} caller={c.caller[:10]}..  gas={c.gas_entry:>9,}  supply={c.storage['totalSupply'] / 1e12:7.2f}M")

enter, exit_ = classify_enter_exit(catalog, train)
manifest = synthesize(train, cfg, enter, exit_, catalog.selectors(corpus.target).keys(), ledger.unreliable)
print(f"\n{len(manifest.applied())} applied instances out of {len(manifest.instances)}")
tsu = manifest.get("TSU", "totalSupply")
print("total supply bound:", tsu.params["totalSupplyUpperbound"] / 1e12, "M")

# replay the test split from a fresh guard state
verdicts = check_corpus(test, manifest, cfg.exploits)
print("\ntemplate  cell  blocks attack")
for row in aggregate_report(verdicts, manifest):
    print(f"  {row.template:6} {row.cell:>6}  {'yes' if row.tp else ''}")
