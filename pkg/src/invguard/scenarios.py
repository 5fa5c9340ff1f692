"""Scripted contracts and corpora for fixtures, tests and demos.

The flagship corpus mirrors the 2020 vault price-manipulation incident: a
proxied share vault priced by a manipulable pool, benign users depositing
and withdrawing in separate blocks, and one attack transaction that runs
three deposit/withdraw rounds through its own contract.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

from .abi import TRANSFER, TRANSFER_FROM
from .hashing import keccak256, selector_of
from .storage import StorageLayout, slot_of_path
from .synthetic import Frame, World, execute
from .trace import StructLogEntry, TxMetadata, norm_addr

UNIT = 10**6            # stable-coin decimals
WAD = 10**18
M = 10**6 * UNIT        # one million tokens

USDC = norm_addr("0x" + "a0b86991c6218b36c1d19d4a2e9eb0ce3606eb48")
VAULT = norm_addr("0x" + "f0358e8c3cd5fa238a29301d0bea3d63a17bedbe")
VAULT_IMPL = norm_addr("0x" + "9b3be0cc5dd26fd0254088d03d8206792715588b")
POOL = norm_addr("0x" + "45f783cce6b7ff23b2ab2d70e416cdb7d6055f51")
LENDER = norm_addr("0x" + "b4e16d0168e52d35cacd2c6185b44281ec28c9dc")
GOVERNANCE = norm_addr("0x" + "f00dd244228f51547f0563e60bca65a30fbf5f7f")
ATTACKER = norm_addr("0x" + "f224ab004461540778a914ea397c589b677e27bb")
ATTACK_CONTRACT = norm_addr("0x" + "c6028a9fa486f52efd2b95b949ac630d287ce0af")

SEL = {
    "transfer": TRANSFER,
    "transferFrom": TRANSFER_FROM,
    "approve": selector_of("approve(address,uint256)"),
    "balanceOf": selector_of("balanceOf(address)"),
    "totalSupply": selector_of("totalSupply()"),
    "deposit": selector_of("deposit(uint256)"),
    "withdraw": selector_of("withdraw(uint256)"),
    "doHardWork": selector_of("doHardWork()"),
    "getPricePerFullShare": selector_of("getPricePerFullShare()"),
    "exchange": selector_of("exchange(uint256)"),
    "flashLoan": selector_of("flashLoan(uint256)"),
    "attack": selector_of("attack()"),
}

TOKEN_LAYOUT = {
    "dialect": "solidity",
    "variables": [
        {"name": "balanceOf", "slot": 0, "offset": 0, "type": "mapping(address => uint256)"},
        {"name": "allowance", "slot": 1, "offset": 0, "type": "mapping(address => mapping(address => uint256))"},
        {"name": "totalSupply", "slot": 2, "offset": 0, "type": "uint256"},
    ],
}

VAULT_LAYOUT = {
    "dialect": "solidity",
    "variables": [
        {"name": "balanceOf", "slot": 0, "offset": 0, "type": "mapping(address => uint256)"},
        {"name": "allowance", "slot": 1, "offset": 0, "type": "mapping(address => mapping(address => uint256))"},
        {"name": "totalSupply", "slot": 2, "offset": 0, "type": "uint256"},
        {"name": "underlying", "slot": 3, "offset": 0, "type": "address"},
        {"name": "paused", "slot": 3, "offset": 20, "type": "bool"},
        {"name": "lastHardWork", "slot": 4, "offset": 0, "type": "uint256"},
    ],
}


def _fn(name, inputs, outputs=(), mutability="nonpayable"):
    return {
        "type": "function", "name": name, "stateMutability": mutability,
        "inputs": [{"name": f"a{i}", "type": t} for i, t in enumerate(inputs)],
        "outputs": [{"name": "", "type": t} for t in outputs],
    }


ERC20_ABI = [
    _fn("transfer", ["address", "uint256"], ["bool"]),
    _fn("transferFrom", ["address", "address", "uint256"], ["bool"]),
    _fn("approve", ["address", "uint256"], ["bool"]),
    _fn("balanceOf", ["address"], ["uint256"], "view"),
    _fn("totalSupply", [], ["uint256"], "view"),
]
VAULT_ABI = ERC20_ABI + [
    _fn("deposit", ["uint256"]),
    _fn("withdraw", ["uint256"]),
    _fn("doHardWork", []),
]
POOL_ABI = [
    _fn("getPricePerFullShare", [], ["uint256"], "view"),
    _fn("exchange", ["uint256"]),
]


# -- contract scripts ------------------------------------------------------------

def _dispatch(f: Frame) -> str:
    """Emit the selector extraction every compiled contract starts with."""
    f.push(0).op("CALLDATALOAD").push(224).op("SHR").op("JUMPDEST").op("POP")
    return "0x" + f.calldata[:4].hex()


def _nonpayable(f: Frame) -> None:
    f.op("CALLVALUE").op("ISZERO").push(0x10).op("JUMPI")


def erc20(vyper: bool = False):
    bal_slot, allow_slot = 0, 1

    def code(f: Frame) -> None:
        sel = _dispatch(f)
        if sel == SEL["balanceOf"]:
            f.push(4).op("CALLDATALOAD")
            _slot(f, bal_slot, vyper)
            f.op("SLOAD")
            return f.ret_word()
        if sel == SEL["totalSupply"]:
            f.sload(2)
            return f.ret_word()
        _nonpayable(f)
        if sel == SEL["approve"]:
            # allowance[msg.sender][spender] = amount
            f.push(36).op("CALLDATALOAD")
            f.op("CALLER")
            _slot(f, allow_slot, vyper)
            f.push(4).op("CALLDATALOAD").op("SWAP1")
            f.hash_pair(vyper)
            f.op("SSTORE")
            f.push(1)
            return f.ret_word()
        if sel == SEL["transfer"]:
            f.push(36).op("CALLDATALOAD")
            f.op("CALLER")
            _debit(f, bal_slot, vyper)
            f.push(4).op("CALLDATALOAD")
            _credit(f, bal_slot, vyper)
            f.op("POP").push(1)
            return f.ret_word()
        if sel == SEL["transferFrom"]:
            f.push(68).op("CALLDATALOAD")
            # allowance[from][msg.sender] >= amount
            f.push(4).op("CALLDATALOAD")
            _slot(f, allow_slot, vyper)
            f.op("CALLER").op("SWAP1")
            f.hash_pair(vyper)
            f.op("SLOAD")
            if f.stack[-1] < f.stack[-2]:
                return f.revert(b"allowance")
            f.op("POP")
            f.push(4).op("CALLDATALOAD")
            _debit(f, bal_slot, vyper)
            f.push(36).op("CALLDATALOAD")
            _credit(f, bal_slot, vyper)
            f.op("POP").push(1)
            return f.ret_word()
        f.revert()

    return code


def _slot(f: Frame, slot: int, vyper: bool) -> None:
    """Top of stack is a key; replace it by its mapping slot."""
    f.push(slot)
    f.hash_pair(vyper)


def _debit(f: Frame, slot: int, vyper: bool) -> None:
    """Stack [amount, holder] -> [amount]; balance[holder] -= amount or revert."""
    _slot(f, slot, vyper)
    f.op("DUP1").op("SLOAD")                 # [amt, s, bal]
    if f.stack[-1] < f.stack[-3]:
        f.revert(b"balance")
    f.op("DUP3").op("SWAP1").op("SUB")       # [amt, s, bal-amt]
    f.op("SWAP1").op("SSTORE")


def _credit(f: Frame, slot: int, vyper: bool) -> None:
    """Stack [amount, holder] -> [amount]; balance[holder] += amount."""
    _slot(f, slot, vyper)
    f.op("DUP1").op("SLOAD")
    f.op("DUP3").op("ADD")
    f.op("SWAP1").op("SSTORE")


def price_pool(f: Frame) -> None:
    sel = _dispatch(f)
    if sel == SEL["getPricePerFullShare"]:
        f.sload(0)
        return f.ret_word()
    if sel == SEL["exchange"]:
        f.push(4).op("CALLDATALOAD").push(0).op("SSTORE")
        return f.stop()
    f.revert()


def proxy(impl: str):
    def code(f: Frame) -> None:
        f.op("CALLDATASIZE").push(0).push(0).op("CALLDATACOPY")
        f.push(0).push(0).op("CALLDATASIZE").push(0).push(int(impl, 16)).op("GAS")
        f._call_op("DELEGATECALL")
        ok = f.stack[-1]
        f.push(0x3d).op("JUMPI")
        f.op("RETURNDATASIZE").push(0).push(0).op("RETURNDATACOPY")
        f.op("RETURNDATASIZE").push(0)
        f.op("RETURN" if ok else "REVERT")
    return code


def vault_impl(token: str, pool: str):
    def code(f: Frame) -> None:
        sel = _dispatch(f)
        if sel == SEL["balanceOf"]:
            f.push(4).op("CALLDATALOAD")
            _slot(f, 0, False)
            f.op("SLOAD")
            return f.ret_word()
        if sel == SEL["totalSupply"]:
            f.sload(2)
            return f.ret_word()
        _nonpayable(f)
        if sel == SEL["deposit"]:
            f.push(4).op("CALLDATALOAD")                     # [amt]
            f.op("DUP1").op("ADDRESS").op("CALLER")          # [amt, amt, this, sender]
            if not f.call_words(token, SEL["transferFrom"], [None, None, None], keep_flag=True):
                return f.revert(b"transferFrom")
            f.op("POP")
            f.call_words(pool, SEL["getPricePerFullShare"], [], kind="STATICCALL")
            f.returndata_word()                               # [amt, price]
            f.op("SWAP1").push(WAD).op("MUL").op("DIV")       # [shares]
            f.op("DUP1").op("CALLER")
            _credit(f, 0, False)                              # [shares, shares]
            f.op("POP")
            f.sload(2).op("ADD").push(2).op("SSTORE")         # totalSupply += shares
            return f.stop()
        if sel == SEL["withdraw"]:
            f.push(4).op("CALLDATALOAD")                     # [shares]
            f.op("DUP1").op("CALLER")
            _debit(f, 0, False)                               # [shares, shares]
            f.op("POP")
            f.op("DUP1").sload(2).op("SUB").push(2).op("SSTORE")
            f.call_words(pool, SEL["getPricePerFullShare"], [], kind="STATICCALL")
            f.returndata_word()                               # [shares, price]
            f.op("MUL").push(WAD).op("SWAP1").op("DIV")       # [amount]
            f.op("CALLER")
            if not f.call_words(token, SEL["transfer"], [None, None], keep_flag=True):
                return f.revert(b"transfer")
            f.op("POP")
            return f.stop()
        if sel == SEL["doHardWork"]:
            f.op("NUMBER").push(4).op("SSTORE")
            return f.stop()
        f.revert()

    return code


def lender(token: str):
    def code(f: Frame) -> None:
        sel = _dispatch(f)
        if sel != SEL["flashLoan"]:
            return f.revert()
        f.push(4).op("CALLDATALOAD").op("CALLER")
        f.call_words(token, SEL["transfer"], [None, None])
        f.stop()
    return code


@dataclass
class AttackPlan:
    rounds: int = 3
    deposit: int = 49_980_000 * UNIT
    loan: int = 50_000_000 * UNIT
    low_price: int = 0
    high_price: int = 0
    restore_price: int = 0


def attack_contract(plan: AttackPlan, token: str, vault: str, pool: str, loan_from: str):
    def code(f: Frame) -> None:
        _dispatch(f)
        f.call_words(loan_from, SEL["flashLoan"], [plan.loan])
        f.call_words(token, SEL["approve"], [int(vault, 16), (1 << 256) - 1])
        for _ in range(plan.rounds):
            f.call_words(pool, SEL["exchange"], [plan.low_price])
            f.call_words(vault, SEL["deposit"], [plan.deposit])
            f.call_words(pool, SEL["exchange"], [plan.high_price])
            f.op("ADDRESS")
            f.call_words(vault, SEL["balanceOf"], [None], kind="STATICCALL")
            f.returndata_word()
            f.call_words(vault, SEL["withdraw"], [None])
        f.call_words(pool, SEL["exchange"], [plan.restore_price])
        f.call_words(token, SEL["transfer"], [int(loan_from, 16), plan.loan])
        f.stop()
    return code


# -- corpus ----------------------------------------------------------------------

@dataclass
class Corpus:
    target: str
    txs: list[tuple[TxMetadata, list[StructLogEntry]]]
    exploits: list[str]
    abis: dict[str, list[dict]]
    layouts: dict[str, dict]
    config: dict
    world: World = field(repr=False, default=None)
    notes: dict = field(default_factory=dict)

    def write(self, path: str | Path) -> Path:
        from .store import write_fixture
        return write_fixture(path, self.target, self.txs, self.abis, self.layouts, self.config)


def tx_hash(*parts) -> str:
    return "0x" + keccak256(repr(parts).encode()).hex()


def _word(x: int) -> bytes:
    return x.to_bytes(32, "big")


def _calldata(sel: str, *words: int) -> bytes:
    return bytes.fromhex(sel[2:]) + b"".join(_word(w) for w in words)


def _set_map(world: World, contract: str, layout: StorageLayout, name: str, keys, value: int) -> None:
    world.slot(contract)[slot_of_path(layout, name, keys)] = value


def _get_map(world: World, contract: str, layout: StorageLayout, name: str, keys) -> int:
    return world.slot(contract).get(slot_of_path(layout, name, keys), 0)


def harvest_corpus(seed: int = 7, n_pairs: int = 24, exploit_gas: int = 9_895_111) -> Corpus:
    """Benign deposit/withdraw history around one three-round manipulation attack.

    Total supply starts at 127.58M shares; each attack deposit of 49.98M
    mints about 51.46M shares (supply near 179M) at the manipulated price,
    and each withdrawal pays out about 50.30M.
    """
    rng = random.Random(seed)
    world = World(block_number=11_000_000, timestamp=1_600_000_000)
    tok_layout = StorageLayout.from_json(TOKEN_LAYOUT)
    v_layout = StorageLayout.from_json(VAULT_LAYOUT)
    world.deploy(USDC, erc20())
    world.deploy(POOL, price_pool)
    world.deploy(VAULT, proxy(VAULT_IMPL))
    world.deploy(VAULT_IMPL, vault_impl(USDC, POOL))
    world.deploy(LENDER, lender(USDC))

    base_supply = 127_580_000 * UNIT
    base_price = 98 * WAD // 100
    vault_cash = 72_830_000 * UNIT
    world.slot(VAULT)[2] = base_supply
    world.slot(VAULT)[3] = int(USDC, 16)
    world.slot(POOL)[0] = base_price
    _set_map(world, USDC, tok_layout, "balanceOf", [VAULT], vault_cash)
    _set_map(world, USDC, tok_layout, "balanceOf", [LENDER], 500_000_000 * UNIT)

    users = [norm_addr(0x1000 + 0x1111 * i) for i in range(8)]
    for u in users:
        _set_map(world, USDC, tok_layout, "balanceOf", [u], 20 * M)
        _set_map(world, USDC, tok_layout, "allowance", [u, VAULT], (1 << 256) - 1)

    # benign schedule: (kind, user, amount) with deposits and withdrawals in separate blocks
    gas_cycle = [210_000, 260_000, 320_000, 400_000]
    schedule: list[tuple[str, str, int, int]] = []
    for k in range(n_pairs):
        u = users[k % len(users)]
        if k == 1:
            amount = 7 * M                       # the largest honest position
        elif k < n_pairs * 2 // 3:
            amount = rng.randrange(1, 40) * M // 10
        else:
            amount = rng.randrange(1, 25) * M // 10
        schedule.append(("deposit", u, amount, gas_cycle[k % 4]))
        schedule.append(("withdraw", u, 0, gas_cycle[(k + 1) % 4]))
    # keeper calls sprinkled in
    for k in (3, 11, 19, 27, 35):
        if k < len(schedule):
            schedule.insert(k, ("doHardWork", GOVERNANCE, 0, 500_000))

    split = -(-7 * (len(schedule) + 1) // 10)          # ceil(0.7 * N)
    exploit_at = split + 4
    price_walk = [base_price + d * WAD // 10_000 for d in (-2, -1, 0, 1, 2)]

    txs, exploits = [], []
    block, idx = world.block_number, 0
    plan = AttackPlan(
        low_price=49_980_000 * UNIT * WAD // (51_460_000 * UNIT),
        high_price=50_300_000 * UNIT * WAD // (51_460_000 * UNIT),
        restore_price=base_price,
    )
    notes: dict = {"baseSupply": base_supply, "peakSupply": []}
    events = list(schedule)
    events.insert(exploit_at, ("exploit", ATTACKER, 0, exploit_gas))
    for n, (kind, who, amount, gas) in enumerate(events):
        block += rng.randrange(3, 40)
        world.block_number = block
        world.timestamp = 1_600_000_000 + 13 * (block - 11_000_000)
        idx = rng.randrange(0, 150)
        if kind != "exploit":
            world.slot(POOL)[0] = rng.choice(price_walk)
        if kind == "deposit":
            to, data = VAULT, _calldata(SEL["deposit"], amount)
        elif kind == "withdraw":
            shares = _get_map(world, VAULT, v_layout, "balanceOf", [who])
            to, data = VAULT, _calldata(SEL["withdraw"], shares)
        elif kind == "doHardWork":
            to, data = VAULT, _calldata(SEL["doHardWork"])
        else:
            world.deploy(ATTACK_CONTRACT, attack_contract(plan, USDC, VAULT, POOL, LENDER))
            _set_map(world, USDC, tok_layout, "balanceOf", [ATTACK_CONTRACT], 2 * M)
            to, data = ATTACK_CONTRACT, _calldata(SEL["attack"])
        h = tx_hash("harvest", seed, n, kind, who)
        meta = TxMetadata(h, block, world.timestamp, who, to, 0, gas, idx, data)
        entries = execute(world, meta)
        txs.append((meta, entries))
        if kind == "exploit":
            exploits.append(h)
        notes["peakSupply"].append(world.slot(VAULT).get(2, 0))

    config = {
        "target": VAULT,
        "trainFraction": 0.7,
        "tokens": [{"address": USDC, "symbol": "USDC", "initialBalance": vault_cash}],
        "oracles": [{"address": POOL, "selector": SEL["getPricePerFullShare"], "word": 0, "name": "pricePerShare"}],
        "specialStorage": {"totalSupplyName": "totalSupply"},
        "exploits": exploits,
    }
    abis = {USDC: ERC20_ABI, VAULT: VAULT_ABI, VAULT_IMPL: VAULT_ABI, POOL: POOL_ABI}
    layouts = {USDC: TOKEN_LAYOUT, VAULT: VAULT_LAYOUT}
    notes.update(exploitIndex=exploit_at, trainSize=split, plan=plan)
    return Corpus(VAULT, txs, exploits, abis, layouts, config, world, notes)


# -- small generators used by the property suites ---------------------------------

def random_call_tree(seed: int, max_depth: int = 4, max_frames: int = 50, n_contracts: int = 6):
    """A random multi-frame transaction: (meta, entries, world).

    Contracts do a little arithmetic, touch storage, and call each other with
    every call kind; some frames revert, some run out of gas, some calls hit
    precompiles or code-less accounts.
    """
    rng = random.Random(seed)
    addrs = [norm_addr(0xC0DE00 + k) for k in range(n_contracts)]
    world = World(block_number=1_000 + seed, timestamp=1_700_000_000 + seed)
    budget = {"frames": 1}

    def make(k: int):
        def code(f: Frame) -> None:
            for _ in range(rng.randrange(1, 6)):
                f.push(rng.randrange(1 << 16)).push(rng.randrange(1 << 16)).op(rng.choice(["ADD", "MUL", "XOR", "SUB"]))
                f.op("POP")
            if rng.random() < 0.3 and not f.static:
                f.push(rng.randrange(1 << 64)).push(rng.randrange(8)).op("SSTORE")
            for _ in range(rng.randrange(1 if f.depth == 1 else 0, 4)):
                if f.depth >= max_depth or budget["frames"] >= max_frames:
                    break
                budget["frames"] += 1
                r = rng.random()
                if r < 0.1:
                    to = norm_addr(rng.randrange(1, 10))                 # precompile
                elif r < 0.15:
                    to = norm_addr(0xEEEE00 + rng.randrange(100))        # no code
                else:
                    to = rng.choice(addrs)
                kind = rng.choice(["CALL", "CALL", "STATICCALL", "DELEGATECALL", "CALLCODE"])
                data = bytes(rng.randrange(256) for _ in range(rng.choice([0, 4, 36])))
                gas = rng.choice([None, rng.randrange(30_000, 200_000)])
                f.call(to, data, 0, kind, gas=gas, ret_len=rng.choice([0, 32]))
            r = rng.random()
            if r < 0.1:
                f.revert(b"no")
            elif r < 0.15:
                f.run_out_of_gas()
            elif r < 0.5:
                f.push(rng.randrange(1 << 32))
                f.ret_word()
            else:
                f.stop()
        return code

    for k, a in enumerate(addrs):
        world.deploy(a, make(k))
    meta = TxMetadata(tx_hash("tree", seed), world.block_number, world.timestamp,
                      norm_addr(0xE0A), addrs[0], 0, 3_000_000, 0, b"\x01\x02\x03\x04")
    return meta, execute(world, meta), world


def mapping_fixture(dialect: str = "solidity"):
    """Token approve + transfer under one dialect: (meta, entries, layout, token).

    Touches a one-level mapping (balances of sender and recipient) and a
    two-level mapping (allowance[owner][spender]).
    """
    vyper = dialect == "vyper"
    world = World(block_number=42, timestamp=1_650_000_000)
    token = norm_addr(0x70CE)
    world.deploy(token, erc20(vyper))
    layout = StorageLayout.from_json({**TOKEN_LAYOUT, "dialect": dialect})
    owner, spender = norm_addr(0xA11CE), norm_addr(0xB0B)
    _set_map(world, token, layout, "balanceOf", [owner], 1_000)

    metas, out = [], []
    for n, data in enumerate((_calldata(SEL["approve"], int(spender, 16), 777),
                              _calldata(SEL["transfer"], int(spender, 16), 250))):
        meta = TxMetadata(tx_hash("map", dialect, n), 42 + n, 1_650_000_000 + 13 * n, owner, token, 0, 200_000, 0, data)
        metas.append(meta)
        out.append(execute(world, meta))
    return metas, out, layout, token


def combination_rows() -> list[tuple[str, dict[str, bool]]]:
    """Three test transactions over {EOA, GC, OB, DFU}: (label, holds) rows.

    The exploit violates only EOA, one benign transaction violates only DFU,
    the other violates nothing.
    """
    ok = {"EOA": True, "GC": True, "OB": True, "DFU": True}
    return [
        ("benign", dict(ok)),
        ("exploit", {**ok, "EOA": False}),
        ("benign", {**ok, "DFU": False}),
    ]


ETH_VAULT = norm_addr(0xE7A0)
WALLET = norm_addr(0x3A11E7)

ETH_VAULT_LAYOUT = {
    "dialect": "solidity",
    "variables": [
        {"name": "deposits", "slot": 0, "offset": 0, "type": "mapping(address => uint256)"},
        {"name": "totalDeposits", "slot": 1, "offset": 0, "type": "uint256"},
        {"name": "fee", "slot": 2, "offset": 0, "type": "uint256"},
    ],
}
ETH_VAULT_ABI = [
    _fn("deposit", [], [], "payable"),
    _fn("withdraw", ["uint256"]),
    _fn("setFee", ["uint256"]),
    _fn("deposits", ["address"], ["uint256"], "view"),
]
SEL["setFee"] = selector_of("setFee(uint256)")
SEL["depositEth"] = selector_of("deposit()")
SEL["deposits"] = selector_of("deposits(address)")


def eth_vault(f: Frame) -> None:
    sel = _dispatch(f)
    if sel == SEL["depositEth"]:
        f.op("CALLVALUE").op("DUP1").op("CALLER")
        _credit(f, 0, False)
        f.op("POP")
        f.sload(1).op("ADD").push(1).op("SSTORE")
        return f.stop()
    _nonpayable(f)
    if sel == SEL["withdraw"]:
        f.push(4).op("CALLDATALOAD")
        f.op("DUP1").op("CALLER")
        _debit(f, 0, False)
        f.op("POP")
        f.op("DUP1").sload(1).op("SUB").push(1).op("SSTORE")   # [amt]
        # caller.call{value: amt}("")
        f.push(0).push(0).push(0).push(0)
        f.op("DUP5").op("CALLER").op("GAS")
        f._call_op("CALL")
        f.op("POP")
        return f.stop()
    if sel == SEL["setFee"]:
        f.push(4).op("CALLDATALOAD").push(2).op("SSTORE")
        return f.stop()
    if sel == SEL["deposits"]:
        f.push(4).op("CALLDATALOAD")
        _slot(f, 0, False)
        f.op("SLOAD")
        return f.ret_word()
    f.revert()


def smart_wallet(vault: str):
    """A contract wallet that forwards its call value into the vault and withdraws part of it."""
    def code(f: Frame) -> None:
        f.op("CALLVALUE")
        f.call_words(vault, SEL["depositEth"], [], value=None)
        f.call_words(vault, SEL["withdraw"], [f.value // 2])
        f.stop()
    return code


def eth_vault_corpus(seed: int = 1, n: int = 40) -> Corpus:
    """Ether vault history: EOA and contract-wallet users, three fee admins."""
    rng = random.Random(seed)
    world = World(block_number=15_000_000, timestamp=1_660_000_000)
    world.deploy(ETH_VAULT, eth_vault)
    world.deploy(WALLET, smart_wallet(ETH_VAULT))
    layout = StorageLayout.from_json(ETH_VAULT_LAYOUT)
    users = [norm_addr(0x5000 + 7 * i) for i in range(6)]
    admins = [norm_addr(0xAD00 + i) for i in range(3)]
    for u in users + admins:
        world.balances[u] = 10**24
    txs = []
    block = world.block_number
    for k in range(n):
        block += rng.choice([0, 1, 2, 5, 9]) if k else 0
        world.block_number = block
        world.timestamp = 1_660_000_000 + 12 * (block - 15_000_000)
        r = rng.random()
        value, to = 0, ETH_VAULT
        if r < 0.4:
            who = rng.choice(users)
            value = rng.randrange(1, 50) * 10**17
            data = _calldata(SEL["depositEth"])
        elif r < 0.75:
            who = rng.choice(users)
            bal = _get_map(world, ETH_VAULT, layout, "deposits", [who])
            amount = rng.randrange(0, bal + 1) if bal else 10**17    # an over-withdrawal reverts
            data = _calldata(SEL["withdraw"], amount)
        elif r < 0.9:
            who = rng.choice(users)
            value, to, data = rng.randrange(1, 20) * 10**17, WALLET, b""
        else:
            who = rng.choice(admins)
            data = _calldata(SEL["setFee"], rng.randrange(1, 100))
        meta = TxMetadata(tx_hash("ethvault", seed, k), block, world.timestamp, who, to, value, 300_000 + 1000 * (k % 7), None, data)
        txs.append((meta, execute(world, meta)))
    # number transactions within each block
    seen: dict[int, int] = {}
    fixed = []
    for meta, entries in txs:
        idx = seen.get(meta.block_number, -1) + 1
        seen[meta.block_number] = idx
        meta.tx_index = idx
        fixed.append((meta, entries))
    config = {
        "target": ETH_VAULT,
        "trainFraction": 0.7,
        "tokens": [],
        "specialStorage": {"totalSupplyName": "totalDeposits"},
        "exploits": [],
    }
    return Corpus(ETH_VAULT, fixed, [], {ETH_VAULT: ETH_VAULT_ABI}, {ETH_VAULT: ETH_VAULT_LAYOUT}, config, world)
