"""
Combining guards
================

Three test transactions: one attack that only breaks EOA, one honest
transaction that trips DFU, one clean. Conjunctions block more, so they
also block more honest users.
"""
from invguard.checker import CombinationExpr, check_combination, enumerate_combinations
from invguard.scenarios import combination_rows

rows = combination_rows()
for label, holds in rows:
    print(f"{label:8}", " ".join(f"{t}={'ok' if v else 'X'}" for t, v in holds.items()))

# AND blocks when any part fails, OR only when every part fails
for text in ("EOA", "EOA & DFU", "EOA | DFU", "EOA & (OB | DFU)"):
    e = CombinationExpr.parse(text)
    print(f"{text:18}", ["blocked" if check_combination(e, h) else "pass" for _, h in rows])

m1, m2 = enumerate_combinations(["EOA", "GC", "OB", "DFU"], rows)
print(f"\n{len(m1)} expressions with up to four leaves")
print("most hacks, then lowest FP:", m1[0].expr, m1[0].to_dict()["fpPercent"] + "%")
print("best under 1% FP:          ", m2[0].expr)
