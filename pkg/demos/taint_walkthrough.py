"""
Following attacker-controlled bits
==================================

A tiny contract reads an amount from calldata, masks it and pays that much
ether out. The taint engine tracks which source bits reach the payment.
"""
from invguard.synthetic import World, execute
from invguard.taint import TaintTrackers, run_taint, step
from invguard.trace import TxMetadata, norm_addr
from invguard.tree import build_invocation_tree, segment_for_target

target, payee, user = norm_addr(0x7A57), norm_addr(0xB0B), norm_addr(0xE0A)


def contract(f):
    # amount = calldata[4:36] & 0xffff
    f.push(4).op("CALLDATALOAD").push(0xFFFF).op("AND")
    # CALL(gas, payee, amount, 0, 0, 0, 0) with the amount moved into place
    f.push(0).op("SWAP1").push(0).op("SWAP1").push(0).op("SWAP1").push(0).op("SWAP1")
    f.push(int(payee, 16)).push(50_000)
    f._call_op("CALL")
    f.stop()


world = World()
world.deploy(target, contract)
world.balances[target] = 10**18
data = bytes(4) + (0x12345).to_bytes(32, "big")
meta = TxMetadata("0x" + "01" * 32, 1, 1, user, target, 0, 200_000, 0, data)
entries = execute(world, meta)

# step by step: the AND keeps only the low 16 tainted bits
tr = TaintTrackers()
for i, e in enumerate(entries[:4]):
    step(e, tr, frame=0, index=i)
print("after AND:", {lb.source_op: hex(mask) for lb, mask in tr.stack[-1].items()})

root = build_invocation_tree(entries, meta)
for hit in run_taint(segment_for_target(root, target, entries)):
    sources = sorted({lb.source_op for lb in hit.labels})
    print(hit.sink_kind, "amount", hex(hit.amount), "tainted by", sources)
