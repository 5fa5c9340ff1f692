"""EVM opcode table: mnemonic -> (stack inputs, stack outputs)."""

OPCODES: dict[str, tuple[int, int]] = {
    "STOP": (0, 0),
    "ADD": (2, 1),
    "MUL": (2, 1),
    "SUB": (2, 1),
    "DIV": (2, 1),
    "SDIV": (2, 1),
    "MOD": (2, 1),
    "SMOD": (2, 1),
    "ADDMOD": (3, 1),
    "MULMOD": (3, 1),
    "EXP": (2, 1),
    "SIGNEXTEND": (2, 1),
    "LT": (2, 1),
    "GT": (2, 1),
    "SLT": (2, 1),
    "SGT": (2, 1),
    "EQ": (2, 1),
    "ISZERO": (1, 1),
    "AND": (2, 1),
    "OR": (2, 1),
    "XOR": (2, 1),
    "NOT": (1, 1),
    "BYTE": (2, 1),
    "SHL": (2, 1),
    "SHR": (2, 1),
    "SAR": (2, 1),
    "SHA3": (2, 1),
    "ADDRESS": (0, 1),
    "BALANCE": (1, 1),
    "ORIGIN": (0, 1),
    "CALLER": (0, 1),
    "CALLVALUE": (0, 1),
    "CALLDATALOAD": (1, 1),
    "CALLDATASIZE": (0, 1),
    "CALLDATACOPY": (3, 0),
    "CODESIZE": (0, 1),
    "CODECOPY": (3, 0),
    "GASPRICE": (0, 1),
    "EXTCODESIZE": (1, 1),
    "EXTCODECOPY": (4, 0),
    "RETURNDATASIZE": (0, 1),
    "RETURNDATACOPY": (3, 0),
    "EXTCODEHASH": (1, 1),
    "BLOCKHASH": (1, 1),
    "COINBASE": (0, 1),
    "TIMESTAMP": (0, 1),
    "NUMBER": (0, 1),
    "DIFFICULTY": (0, 1),
    "GASLIMIT": (0, 1),
    "CHAINID": (0, 1),
    "SELFBALANCE": (0, 1),
    "BASEFEE": (0, 1),
    "BLOBHASH": (1, 1),
    "BLOBBASEFEE": (0, 1),
    "POP": (1, 0),
    "MLOAD": (1, 1),
    "MSTORE": (2, 0),
    "MSTORE8": (2, 0),
    "SLOAD": (1, 1),
    "SSTORE": (2, 0),
    "JUMP": (1, 0),
    "JUMPI": (2, 0),
    "PC": (0, 1),
    "MSIZE": (0, 1),
    "GAS": (0, 1),
    "JUMPDEST": (0, 0),
    "TLOAD": (1, 1),
    "TSTORE": (2, 0),
    "MCOPY": (3, 0),
    "PUSH0": (0, 1),
    "LOG0": (2, 0),
    "LOG1": (3, 0),
    "LOG2": (4, 0),
    "LOG3": (5, 0),
    "LOG4": (6, 0),
    "CREATE": (3, 1),
    "CALL": (7, 1),
    "CALLCODE": (7, 1),
    "RETURN": (2, 0),
    "DELEGATECALL": (6, 1),
    "CREATE2": (4, 1),
    "STATICCALL": (6, 1),
    "REVERT": (2, 0),
    "INVALID": (0, 0),
    "SELFDESTRUCT": (1, 0),
}
for _n in range(1, 33):
    OPCODES[f"PUSH{_n}"] = (0, 1)
for _n in range(1, 17):
    OPCODES[f"DUP{_n}"] = (_n, _n + 1)
    OPCODES[f"SWAP{_n}"] = (_n + 1, _n + 1)

# Node clients disagree on a few names.
ALIASES = {
    "KECCAK256": "SHA3",
    "PREVRANDAO": "DIFFICULTY",
    "RANDOM": "DIFFICULTY",
    "SUICIDE": "SELFDESTRUCT",
}

CALL_OPS = frozenset({"CALL", "CALLCODE", "DELEGATECALL", "STATICCALL"})
CREATE_OPS = frozenset({"CREATE", "CREATE2"})
FRAME_OPS = CALL_OPS | CREATE_OPS
HALT_OPS = frozenset({"STOP", "RETURN", "REVERT", "SELFDESTRUCT", "INVALID"})

PRECOMPILES = frozenset(range(1, 10))


def canonical(op: str) -> str | None:
    """Return the canonical mnemonic for `op`, or None when it is not an EVM opcode."""
    name = op.upper()
    name = ALIASES.get(name, name)
    return name if name in OPCODES else None
