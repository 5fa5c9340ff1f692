"""Scripted EVM execution that emits structLogs.

Contracts are Python callables that drive a `Frame` opcode by opcode; the
frame applies concrete EVM semantics to its stack, memory and the shared
`World` storage, and logs a geth-shaped entry before every step. Used to
build fixture corpora and randomized test traces without an archive node.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .hashing import keccak256, keccak_int
from .opcodes import OPCODES, PRECOMPILES
from .trace import StructLogEntry, TxMetadata, addr_of_word, norm_addr, read_memory

MASK = (1 << 256) - 1

GAS_COST = {
    "SLOAD": 2100, "SSTORE": 5000, "SHA3": 36, "BALANCE": 2600, "EXTCODESIZE": 2600,
    "EXTCODEHASH": 2600, "EXTCODECOPY": 2600, "CALL": 2600, "CALLCODE": 2600,
    "DELEGATECALL": 2600, "STATICCALL": 2600, "CREATE": 32000, "CREATE2": 32000,
    "EXP": 10, "JUMP": 8, "JUMPI": 10, "JUMPDEST": 1, "LOG0": 375, "LOG1": 750,
    "LOG2": 1125, "LOG3": 1500, "LOG4": 1875, "BLOCKHASH": 20, "SELFDESTRUCT": 5000,
    "STOP": 0, "RETURN": 0, "REVERT": 0, "INVALID": 0, "POP": 2,
}


def _signed(x: int) -> int:
    return x - (1 << 256) if x >> 255 else x


class Halt(Exception):
    def __init__(self, success: bool, data: bytes = b"", exceptional: bool = False):
        self.success = success
        self.data = data
        self.exceptional = exceptional


@dataclass
class World:
    storage: dict = field(default_factory=dict)
    balances: dict = field(default_factory=dict)
    codes: dict = field(default_factory=dict)
    block_number: int = 1
    timestamp: int = 1_600_000_000
    coinbase: str = "0x" + "c0" * 20
    chain_id: int = 1
    gas_price: int = 10**9
    gas_limit: int = 12_065_986
    base_fee: int = 0
    nonce: int = 0

    def slot(self, addr: str) -> dict:
        return self.storage.setdefault(addr, {})

    def deploy(self, addr: str, code: Callable) -> str:
        addr = norm_addr(addr)
        self.codes[addr] = code
        return addr


class Frame:
    def __init__(self, builder: "TraceBuilder", address: str, code_addr: str, caller: str,
                 value: int, calldata: bytes, gas: int, depth: int, static: bool = False):
        self.b = builder
        self.world = builder.world
        self.address = address
        self.code_addr = code_addr
        self.caller = caller
        self.value = value
        self.calldata = calldata
        self.gas = gas
        self.depth = depth
        self.static = static
        self.stack: list[int] = []
        self.memory = bytearray()
        self.pc = 0
        self.returndata = b""

    # -- recording -------------------------------------------------------
    def _log(self, op: str, cost: int) -> None:
        self.b.entries.append(StructLogEntry(
            pc=self.pc, op=op, gas=self.gas, gas_cost=cost, stack=tuple(self.stack),
            memory=bytes(self.memory), depth=self.depth if self.b.with_depth else None,
        ))

    def _mem(self, offset: int, length: int) -> None:
        if length == 0:
            return
        end = offset + length
        if end > len(self.memory):
            self.memory.extend(b"\x00" * (((end + 31) // 32) * 32 - len(self.memory)))

    def _read(self, offset: int, length: int) -> bytes:
        self._mem(offset, length)
        return bytes(self.memory[offset:offset + length])

    def _write(self, offset: int, data: bytes) -> None:
        self._mem(offset, len(data))
        self.memory[offset:offset + len(data)] = data

    def pop(self) -> int:
        return self.stack.pop()

    # -- execution -------------------------------------------------------
    def push(self, value: int) -> "Frame":
        value &= MASK
        n = max(1, (value.bit_length() + 7) // 8)
        return self.op(f"PUSH{n}", value)

    def op(self, name: str, imm: int | None = None) -> "Frame":
        """Execute one opcode (PUSHn takes its immediate)."""
        cost = GAS_COST.get(name, 3)
        if name in ("CALL", "CALLCODE", "DELEGATECALL", "STATICCALL", "CREATE", "CREATE2"):
            raise ValueError("use call()/create() for frame-creating opcodes")
        n_in, _ = OPCODES[name]
        if len(self.stack) < n_in:
            raise ValueError(f"stack underflow for {name}")
        self._log(name, cost)
        if self.gas < cost:
            raise Halt(False, exceptional=True)
        self.gas -= cost
        self._exec(name, imm)
        self.pc += 1 + (int(name[4:]) if name.startswith("PUSH") and name != "PUSH0" else 0)
        return self

    def _exec(self, op: str, imm: int | None) -> None:
        s = self.stack
        w = self.world
        if op.startswith("PUSH"):
            s.append(0 if op == "PUSH0" else imm & MASK)
        elif op.startswith("DUP"):
            s.append(s[-int(op[3:])])
        elif op.startswith("SWAP"):
            k = int(op[4:])
            s[-1], s[-1 - k] = s[-1 - k], s[-1]
        elif op == "POP":
            s.pop()
        elif op in _BINOPS:
            a, b = s.pop(), s.pop()
            s.append(_BINOPS[op](a, b) & MASK)
        elif op in ("ADDMOD", "MULMOD"):
            a, b, n = s.pop(), s.pop(), s.pop()
            s.append(0 if n == 0 else ((a + b) if op == "ADDMOD" else (a * b)) % n)
        elif op == "ISZERO":
            s.append(int(s.pop() == 0))
        elif op == "NOT":
            s.append(~s.pop() & MASK)
        elif op == "SHA3":
            off, ln = s.pop(), s.pop()
            s.append(keccak_int(self._read(off, ln)))
        elif op == "ADDRESS":
            s.append(int(self.address, 16))
        elif op == "BALANCE":
            s.append(w.balances.get(addr_of_word(s.pop()), 0))
        elif op == "SELFBALANCE":
            s.append(w.balances.get(self.address, 0))
        elif op == "ORIGIN":
            s.append(int(self.b.meta.origin, 16))
        elif op == "CALLER":
            s.append(int(self.caller, 16))
        elif op == "CALLVALUE":
            s.append(self.value)
        elif op == "CALLDATALOAD":
            off = s.pop()
            s.append(int.from_bytes(read_memory(self.calldata, off, 32), "big"))
        elif op == "CALLDATASIZE":
            s.append(len(self.calldata))
        elif op == "CALLDATACOPY":
            dst, off, ln = s.pop(), s.pop(), s.pop()
            self._write(dst, read_memory(self.calldata, off, ln))
        elif op == "CODESIZE":
            s.append(1024)
        elif op == "CODECOPY":
            dst, off, ln = s.pop(), s.pop(), s.pop()
            self._write(dst, b"\x00" * ln)
        elif op == "GASPRICE":
            s.append(w.gas_price)
        elif op == "EXTCODESIZE":
            s.append(1024 if addr_of_word(s.pop()) in w.codes else 0)
        elif op == "EXTCODEHASH":
            s.append(keccak_int(addr_of_word(s.pop()).encode()))
        elif op == "EXTCODECOPY":
            _, dst, off, ln = s.pop(), s.pop(), s.pop(), s.pop()
            self._write(dst, b"\xee" * ln)
        elif op == "RETURNDATASIZE":
            s.append(len(self.returndata))
        elif op == "RETURNDATACOPY":
            dst, off, ln = s.pop(), s.pop(), s.pop()
            self._write(dst, read_memory(self.returndata, off, ln))
        elif op == "BLOCKHASH":
            s.append(keccak_int(s.pop().to_bytes(32, "big")))
        elif op == "COINBASE":
            s.append(int(w.coinbase, 16))
        elif op == "TIMESTAMP":
            s.append(w.timestamp)
        elif op == "NUMBER":
            s.append(w.block_number)
        elif op == "DIFFICULTY":
            s.append(0xABCDEF)
        elif op == "GASLIMIT":
            s.append(w.gas_limit)
        elif op == "CHAINID":
            s.append(w.chain_id)
        elif op == "BASEFEE":
            s.append(w.base_fee)
        elif op == "BLOBBASEFEE":
            s.append(1)
        elif op == "BLOBHASH":
            s.pop()
            s.append(0)
        elif op == "MLOAD":
            s.append(int.from_bytes(self._read(s.pop(), 32), "big"))
        elif op == "MSTORE":
            off, v = s.pop(), s.pop()
            self._write(off, v.to_bytes(32, "big"))
        elif op == "MSTORE8":
            off, v = s.pop(), s.pop()
            self._write(off, bytes([v & 0xFF]))
        elif op == "MCOPY":
            dst, src, ln = s.pop(), s.pop(), s.pop()
            self._write(dst, self._read(src, ln))
        elif op == "SLOAD":
            s.append(w.slot(self.address).get(s.pop(), 0))
        elif op == "SSTORE":
            key, v = s.pop(), s.pop()
            w.slot(self.address)[key] = v
        elif op == "TLOAD":
            s.append(self.b.transient.get((self.address, s.pop()), 0))
        elif op == "TSTORE":
            key, v = s.pop(), s.pop()
            self.b.transient[(self.address, key)] = v
        elif op == "JUMP":
            s.pop()
        elif op == "JUMPI":
            s.pop(), s.pop()
        elif op == "PC":
            s.append(self.pc)
        elif op == "MSIZE":
            s.append(len(self.memory))
        elif op == "GAS":
            s.append(self.gas)
        elif op == "JUMPDEST":
            pass
        elif op.startswith("LOG"):
            for _ in range(2 + int(op[3:])):
                s.pop()
        elif op == "STOP":
            raise Halt(True)
        elif op == "RETURN":
            off, ln = s.pop(), s.pop()
            raise Halt(True, self._read(off, ln))
        elif op == "REVERT":
            off, ln = s.pop(), s.pop()
            raise Halt(False, self._read(off, ln))
        elif op == "INVALID":
            raise Halt(False, exceptional=True)
        elif op == "SELFDESTRUCT":
            s.pop()
            raise Halt(True)
        else:
            raise ValueError(f"opcode {op} not modelled")

    # -- macros ----------------------------------------------------------
    def store_bytes(self, offset: int, data: bytes) -> "Frame":
        """Write `data` into memory with PUSH/MSTORE (final chunk right-padded)."""
        for k in range(0, len(data), 32):
            chunk = data[k:k + 32].ljust(32, b"\x00")
            self.push(int.from_bytes(chunk, "big")).push(offset + k).op("MSTORE")
        return self

    def mapping_slot(self, key: int, slot: int, vyper: bool = False) -> "Frame":
        """Leave keccak(key ++ slot) (or slot ++ key) on the stack."""
        a, b = (slot, key) if vyper else (key, slot)
        self.push(a).push(0).op("MSTORE").push(b).push(32).op("MSTORE")
        return self.push(64).push(0).op("SHA3")

    def mapping_slot_from_stack(self, slot: int) -> "Frame":
        """Top of stack is the key; replace it by keccak(key ++ slot)."""
        self.push(0).op("MSTORE").push(slot).push(32).op("MSTORE")
        return self.push(64).push(0).op("SHA3")

    def hash_pair(self, vyper: bool = False) -> "Frame":
        """Stack [.., key, base] -> keccak of the pair in the dialect's order."""
        if vyper:
            self.push(0).op("MSTORE").push(32).op("MSTORE")
        else:
            self.push(32).op("MSTORE").push(0).op("MSTORE")
        return self.push(64).push(0).op("SHA3")

    def returndata_word(self, index: int = 0) -> "Frame":
        """Copy word `index` of the last call's return data to the stack."""
        dst = self._free()
        self.push(32).push(32 * index).push(dst).op("RETURNDATACOPY")
        return self.push(dst).op("MLOAD")

    def call_words(self, to: str, selector: str, words: list, value: int | None = 0,
                   kind: str = "CALL", ret_len: int = 32, keep_flag: bool = False) -> int:
        """Call with ABI words; a None word is taken from the stack (top first).

        `value=None` takes the call value from the stack as well, after the words.
        """
        to = norm_addr(to)
        off = self._free()
        self.push(int(selector, 16) << 224).push(off).op("MSTORE")
        for i, w in enumerate(words):
            if w is None:
                self.push(off + 4 + 32 * i).op("MSTORE")
        for i, w in enumerate(words):
            if w is not None:
                self.push(w).push(off + 4 + 32 * i).op("MSTORE")
        n = 4 + 32 * len(words)
        ret_off = off + ((n + 31) // 32) * 32
        if value is None:
            # value sits on top now; slide it under the remaining call operands
            self.push(ret_len).op("SWAP1").push(ret_off).op("SWAP1").push(n).op("SWAP1").push(off).op("SWAP1")
        else:
            self.push(ret_len).push(ret_off).push(n).push(off)
            if kind in ("CALL", "CALLCODE"):
                self.push(value)
        self.push(int(to, 16)).push(self.gas)
        ok = self._call_op(kind)
        if not keep_flag:
            self.op("POP")
        return ok

    def sload(self, slot: int) -> "Frame":
        return self.push(slot).op("SLOAD")

    def sstore_top(self, slot: int) -> "Frame":
        """Store the top of stack at `slot`."""
        return self.push(slot).op("SSTORE")

    def ret(self, data: bytes = b"") -> None:
        off = self._free()
        if data:
            self.store_bytes(off, data)
        self.push(len(data)).push(off).op("RETURN")

    def ret_word(self) -> None:
        """Return the top of stack as a single word."""
        off = self._free()
        self.push(off).op("MSTORE").push(32).push(off).op("RETURN")

    def revert(self, data: bytes = b"") -> None:
        off = self._free()
        if data:
            self.store_bytes(off, data)
        self.push(len(data)).push(off).op("REVERT")

    def stop(self) -> None:
        self.op("STOP")

    def run_out_of_gas(self) -> None:
        """Log one step that cannot be paid for, ending the frame exceptionally."""
        self._log("SLOAD", self.gas + 1)
        raise Halt(False, exceptional=True)

    def _free(self) -> int:
        return max(0x80, len(self.memory))

    def call(self, to: str, data: bytes = b"", value: int = 0, kind: str = "CALL",
             gas: int | None = None, ret_len: int = 32, keep_flag: bool = False) -> int:
        """Stage calldata in memory, execute a call opcode, return the success flag."""
        to = norm_addr(to)
        args_off = self._free()
        self.store_bytes(args_off, data)
        ret_off = args_off + ((len(data) + 31) // 32) * 32
        self.push(ret_len).push(ret_off).push(len(data)).push(args_off)
        if kind in ("CALL", "CALLCODE"):
            self.push(value)
        self.push(int(to, 16))
        self.push(gas if gas is not None else self.gas)
        ok = self._call_op(kind)
        if not keep_flag:
            self.op("POP")
        return ok

    def _call_op(self, kind: str) -> int:
        s = self.stack
        cost = GAS_COST[kind]
        self._log(kind, cost)
        if self.gas < cost:
            # the caller cannot pay for the call itself: out of gas at the call site
            raise Halt(False, exceptional=True)
        self.gas -= cost
        req_gas, to_w = s.pop(), s.pop()
        value = s.pop() if kind in ("CALL", "CALLCODE") else 0
        a_off, a_len, r_off, r_len = s.pop(), s.pop(), s.pop(), s.pop()
        to = addr_of_word(to_w)
        data = self._read(a_off, a_len)
        self._mem(r_off, r_len)
        self.pc += 1
        w = self.world
        code = w.codes.get(to)
        forwarded = min(req_gas, self.gas - self.gas // 64)
        if code is None or int(to, 16) in PRECOMPILES:
            ok = w.balances.get(self.address, 0) >= value
            if ok and value:
                w.balances[self.address] -= value
                w.balances[to] = w.balances.get(to, 0) + value
            self.returndata = b""
            s.append(int(ok))
            return int(ok)
        if kind == "DELEGATECALL":
            ctx, caller, cvalue = self.address, self.caller, self.value
        elif kind == "CALLCODE":
            ctx, caller, cvalue = self.address, self.address, value
        else:
            ctx, caller, cvalue = to, self.address, value
        self.gas -= forwarded
        child = Frame(self.b, ctx, to, caller, cvalue, data, forwarded, self.depth + 1,
                      static=self.static or kind == "STATICCALL")
        ok, out, left = self.b._run(child, code, transfer=(self.address, to, value) if kind == "CALL" else None)
        self.gas += left
        self.returndata = out
        if r_len:
            self._write(r_off, out[:r_len])
        s.append(int(ok))
        return int(ok)


def _shl(a, b):
    return (b << a) if a < 256 else 0


def _shr(a, b):
    return (b >> a) if a < 256 else 0


def _sar(a, b):
    return (_signed(b) >> min(a, 256)) & MASK


def _byte(i, x):
    return (x >> (8 * (31 - i))) & 0xFF if i < 32 else 0


def _sdiv(a, b):
    if b == 0:
        return 0
    q = abs(_signed(a)) // abs(_signed(b))
    return -q if (_signed(a) < 0) != (_signed(b) < 0) else q


def _smod(a, b):
    if b == 0:
        return 0
    r = abs(_signed(a)) % abs(_signed(b))
    return -r if _signed(a) < 0 else r


def _signextend(b, x):
    if b >= 31:
        return x
    bits = 8 * (b + 1)
    x &= (1 << bits) - 1
    return x - (1 << bits) if x >> (bits - 1) else x


_BINOPS = {
    "ADD": lambda a, b: a + b,
    "MUL": lambda a, b: a * b,
    "SUB": lambda a, b: a - b,
    "DIV": lambda a, b: a // b if b else 0,
    "SDIV": _sdiv,
    "MOD": lambda a, b: a % b if b else 0,
    "SMOD": _smod,
    "EXP": lambda a, b: pow(a, b, 1 << 256),
    "SIGNEXTEND": _signextend,
    "LT": lambda a, b: int(a < b),
    "GT": lambda a, b: int(a > b),
    "SLT": lambda a, b: int(_signed(a) < _signed(b)),
    "SGT": lambda a, b: int(_signed(a) > _signed(b)),
    "EQ": lambda a, b: int(a == b),
    "AND": lambda a, b: a & b,
    "OR": lambda a, b: a | b,
    "XOR": lambda a, b: a ^ b,
    "BYTE": _byte,
    "SHL": _shl,
    "SHR": _shr,
    "SAR": _sar,
}


class TraceBuilder:
    """Run one transaction through scripted contracts and collect its structLogs."""

    def __init__(self, world: World, meta: TxMetadata, with_depth: bool = True):
        self.world = world
        self.meta = meta
        self.with_depth = with_depth
        self.entries: list[StructLogEntry] = []
        self.transient: dict = {}

    def _run(self, frame: Frame, code: Callable, transfer=None) -> tuple[bool, bytes, int]:
        w = self.world
        snapshot = ({a: dict(s) for a, s in w.storage.items()}, dict(w.balances))
        if transfer is not None and transfer[2]:
            src, dst, value = transfer
            if w.balances.get(src, 0) < value:
                w.storage, w.balances = snapshot
                return False, b"", frame.gas
            w.balances[src] -= value
            w.balances[dst] = w.balances.get(dst, 0) + value
        try:
            code(frame)
            frame.op("STOP")
        except Halt as h:
            if not h.success:
                w.storage, w.balances = snapshot
            return h.success, h.data, 0 if h.exceptional else frame.gas
        raise AssertionError("unreachable")

    def run(self, gas: int | None = None) -> tuple[list[StructLogEntry], bool]:
        meta = self.meta
        code = self.world.codes.get(meta.to)
        if code is None:
            return [], True
        gas = gas if gas is not None else meta.gas
        root = Frame(self, meta.to, meta.to, meta.origin, meta.value, meta.input, gas, 1)
        self.world.balances[meta.origin] = self.world.balances.get(meta.origin, 0) + meta.value
        ok, _, _ = self._run(root, code, transfer=(meta.origin, meta.to, meta.value))
        return self.entries, ok


def execute(world: World, meta: TxMetadata, with_depth: bool = True) -> list[StructLogEntry]:
    """Execute `meta` against `world` (mutating it) and return the trace."""
    entries, _ = TraceBuilder(world, meta, with_depth).run()
    return entries
