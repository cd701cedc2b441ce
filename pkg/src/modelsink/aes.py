"""AES-128 in ECB mode plus PKCS#7 padding.

Self-contained implementation so the wire format has no runtime dependency
on a crypto library; the test suite cross-checks every path against an
independent implementation and the published single-block reference vector.

ECB is deterministic per block (identical plaintext blocks yield identical
ciphertext blocks) and carries no authentication. It is kept for protocol
fidelity, not as a security recommendation.
"""

from __future__ import annotations

BLOCK = 16


class PaddingError(ValueError):
    """Padding bytes are not valid PKCS#7 — wrong key or corrupted data."""


def _build_sbox() -> tuple[list[int], list[int]]:
    # multiplicative inverse in GF(2^8) followed by the affine transform
    sbox = [0] * 256
    inv = [0] * 256
    p, q = 1, 1
    while True:
        # p iterates over GF(2^8)* via multiplication by 3; q tracks 1/p
        p = p ^ ((p << 1) & 0xFF) ^ (0x1B if p & 0x80 else 0)
        q ^= q << 1
        q ^= q << 2
        q ^= q << 4
        q &= 0xFF
        if q & 0x80:
            q ^= 0x09
        x = q ^ _rotl8(q, 1) ^ _rotl8(q, 2) ^ _rotl8(q, 3) ^ _rotl8(q, 4) ^ 0x63
        sbox[p] = x
        if p == 1:
            break
    sbox[0] = 0x63
    for i, v in enumerate(sbox):
        inv[v] = i
    return sbox, inv


def _rotl8(x: int, n: int) -> int:
    return ((x << n) | (x >> (8 - n))) & 0xFF


def _gf_mul(a: int, b: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        a = ((a << 1) & 0xFF) ^ (0x1B if a & 0x80 else 0)
        b >>= 1
    return r


_SBOX, _INV_SBOX = _build_sbox()
_MUL2 = [_gf_mul(x, 2) for x in range(256)]
_MUL3 = [_gf_mul(x, 3) for x in range(256)]
_MUL9 = [_gf_mul(x, 9) for x in range(256)]
_MUL11 = [_gf_mul(x, 11) for x in range(256)]
_MUL13 = [_gf_mul(x, 13) for x in range(256)]
_MUL14 = [_gf_mul(x, 14) for x in range(256)]
_RCON = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36]

# state is a flat 16-element list in FIPS column-major order: index = row + 4*col
_SHIFT = [(r + 4 * ((c + r) % 4)) for c in range(4) for r in range(4)]
_INV_SHIFT = [(r + 4 * ((c - r) % 4)) for c in range(4) for r in range(4)]


def _expand_key(key: bytes) -> list[list[int]]:
    words = [list(key[i:i + 4]) for i in range(0, 16, 4)]
    for i in range(4, 44):
        w = list(words[i - 1])
        if i % 4 == 0:
            w = w[1:] + w[:1]
            w = [_SBOX[b] for b in w]
            w[0] ^= _RCON[i // 4 - 1]
        words.append([a ^ b for a, b in zip(words[i - 4], w)])
    round_keys = []
    for r in range(11):
        flat = [0] * 16
        for c in range(4):
            for row in range(4):
                flat[row + 4 * c] = words[4 * r + c][row]
        round_keys.append(flat)
    return round_keys


class Aes128Ecb:
    """ECB over 16-byte blocks; inputs must already be padded to a block multiple."""

    def __init__(self, key: bytes):
        if len(key) != 16:
            raise ValueError("AES-128 key must be exactly 16 bytes")
        self._rk = _expand_key(key)

    def encrypt(self, data: bytes) -> bytes:
        if len(data) % BLOCK:
            raise ValueError("plaintext length must be a multiple of 16")
        out = bytearray(len(data))
        for off in range(0, len(data), BLOCK):
            out[off:off + BLOCK] = self._encrypt_block(data[off:off + BLOCK])
        return bytes(out)

    def decrypt(self, data: bytes) -> bytes:
        if len(data) % BLOCK:
            raise ValueError("ciphertext length must be a multiple of 16")
        out = bytearray(len(data))
        for off in range(0, len(data), BLOCK):
            out[off:off + BLOCK] = self._decrypt_block(data[off:off + BLOCK])
        return bytes(out)

    def _encrypt_block(self, block: bytes) -> bytes:
        sbox, mul2, mul3, shift = _SBOX, _MUL2, _MUL3, _SHIFT
        rk = self._rk
        s = [block[i] ^ rk[0][i] for i in range(16)]
        for rnd in range(1, 10):
            t = [sbox[s[shift[i]]] for i in range(16)]
            k = rk[rnd]
            for c in range(0, 16, 4):
                a0, a1, a2, a3 = t[c], t[c + 1], t[c + 2], t[c + 3]
                s[c] = mul2[a0] ^ mul3[a1] ^ a2 ^ a3 ^ k[c]
                s[c + 1] = a0 ^ mul2[a1] ^ mul3[a2] ^ a3 ^ k[c + 1]
                s[c + 2] = a0 ^ a1 ^ mul2[a2] ^ mul3[a3] ^ k[c + 2]
                s[c + 3] = mul3[a0] ^ a1 ^ a2 ^ mul2[a3] ^ k[c + 3]
        k = rk[10]
        return bytes(sbox[s[shift[i]]] ^ k[i] for i in range(16))

    def _decrypt_block(self, block: bytes) -> bytes:
        inv, m9, m11, m13, m14, inv_shift = _INV_SBOX, _MUL9, _MUL11, _MUL13, _MUL14, _INV_SHIFT
        rk = self._rk
        s = [block[i] ^ rk[10][i] for i in range(16)]
        for rnd in range(9, 0, -1):
            t = [inv[s[inv_shift[i]]] for i in range(16)]
            k = rk[rnd]
            t = [t[i] ^ k[i] for i in range(16)]
            for c in range(0, 16, 4):
                a0, a1, a2, a3 = t[c], t[c + 1], t[c + 2], t[c + 3]
                s[c] = m14[a0] ^ m11[a1] ^ m13[a2] ^ m9[a3]
                s[c + 1] = m9[a0] ^ m14[a1] ^ m11[a2] ^ m13[a3]
                s[c + 2] = m13[a0] ^ m9[a1] ^ m14[a2] ^ m11[a3]
                s[c + 3] = m11[a0] ^ m13[a1] ^ m9[a2] ^ m14[a3]
        k = rk[0]
        return bytes(inv[s[inv_shift[i]]] ^ k[i] for i in range(16))


class NullCipher:
    """Identity cipher: keeps framing and padding behavior testable without encryption."""

    def encrypt(self, data: bytes) -> bytes:
        return data

    def decrypt(self, data: bytes) -> bytes:
        return data


def pkcs7_pad(data: bytes) -> bytes:
    n = BLOCK - (len(data) % BLOCK)
    return data + bytes([n]) * n


def pkcs7_unpad(data: bytes) -> bytes:
    if not data or len(data) % BLOCK:
        raise PaddingError("data length is not a padded block multiple")
    n = data[-1]
    if not 1 <= n <= BLOCK or data[-n:] != bytes([n]) * n:
        raise PaddingError("invalid PKCS#7 padding")
    return data[:-n]
