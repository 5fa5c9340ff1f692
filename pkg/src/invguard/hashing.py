from Crypto.Hash import keccak as _keccak


def keccak256(data: bytes) -> bytes:
    h = _keccak.new(digest_bits=256)
    h.update(data)
    return h.digest()


def keccak_int(data: bytes) -> int:
    return int.from_bytes(keccak256(data), "big")


def selector_of(signature: str) -> str:
    """4-byte selector of a canonical signature, as 0x-prefixed hex."""
    return "0x" + keccak256(signature.encode()).hex()[:8]
