"""Cryptographic primitives for the encrypted index.

Three building blocks:

* DET: deterministic keyed mapping (HMAC) used for index keys, so equal
  tokens map to equal index positions without revealing the token.
* RND: randomized authenticated encryption (AES-128-CBC with a fresh IV,
  encrypt-then-MAC) used for index values, so equal payloads are
  indistinguishable.
* ORE: an order-revealing scheme with left/right ciphertexts built from
  per-block permuted comparison tables.  Comparing the left half of one
  ciphertext against the right half of another yields <, =, > and nothing
  else, letting the analyser order line numbers it cannot read.

Everything derives from six 128-bit master keys: one for DET, one for RND,
and one per protected flow field (line, depth, order, type).
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import os
import secrets
import struct
from dataclasses import dataclass, field

from cryptography.hazmat.primitives import padding
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import ConfigError, FormatError, IntegrityError
from .fileio import atomic_write

KEY_BYTES = 16
ORE_BLOCK_BITS = 8
ORE_BLOCK_DOMAIN = 1 << ORE_BLOCK_BITS  # 256 values per block
DEFAULT_ORE_WIDTH = 32

MODES = ("plain", "std", "ore")
DET_HASHES = ("sha1", "sha256")

_RND_TAG_BYTES = 16
_RND_IV_BYTES = 16


def _hmac(key: bytes, data: bytes, algo: str = "sha256") -> bytes:
    return hmac_mod.new(key, data, algo).digest()


# --- master keys --------------------------------------------------------------

@dataclass(frozen=True)
class MasterKeys:
    """The six 128-bit secrets everything else is derived from."""

    det: bytes
    rnd: bytes
    ore_line: bytes
    ore_depth: bytes
    ore_order: bytes
    ore_type: bytes

    def as_tuple(self) -> tuple[bytes, ...]:
        return (self.det, self.rnd, self.ore_line, self.ore_depth,
                self.ore_order, self.ore_type)


def generate_master_keys(security_bits: int = 128) -> MasterKeys:
    if security_bits % 8 != 0 or security_bits < 128:
        raise ConfigError(
            "security parameter must be a multiple of 8, at least 128"
        )
    n = security_bits // 8
    return MasterKeys(*(secrets.token_bytes(n) for _ in range(6)))


def derive_token_keys(keys: MasterKeys, token_id: str) -> tuple[bytes, bytes]:
    """Per-token key pair: deterministic key D_t and value key R_t."""
    ident = token_id.encode()
    return _hmac(keys.det, ident), _hmac(keys.rnd, ident)


# --- DET ----------------------------------------------------------------------

def det_encrypt(key: bytes, data: bytes, hash_mode: str = "sha1") -> bytes:
    """Deterministic keyed digest of data (HMAC-SHA1 by default)."""
    if hash_mode not in ("sha1", "sha256"):
        raise ValueError(f"unsupported DET hash mode {hash_mode!r}")
    return _hmac(key, data, hash_mode)


# --- RND ----------------------------------------------------------------------

def _rnd_subkeys(key: bytes) -> tuple[bytes, bytes]:
    return _hmac(key, b"enc")[:16], _hmac(key, b"mac")


def rnd_encrypt(key: bytes, plaintext: bytes) -> bytes:
    """Randomized authenticated encryption: IV || ciphertext || tag."""
    enc_key, mac_key = _rnd_subkeys(key)
    iv = os.urandom(_RND_IV_BYTES)
    padder = padding.PKCS7(128).padder()
    padded = padder.update(plaintext) + padder.finalize()
    enc = Cipher(algorithms.AES(enc_key), modes.CBC(iv)).encryptor()
    ct = enc.update(padded) + enc.finalize()
    tag = _hmac(mac_key, iv + ct)[:_RND_TAG_BYTES]
    return iv + ct + tag


def rnd_decrypt(key: bytes, blob: bytes) -> bytes:
    """Verify and decrypt an RND blob; raises IntegrityError on any damage."""
    if len(blob) < _RND_IV_BYTES + 16 + _RND_TAG_BYTES:
        raise IntegrityError("ciphertext too short")
    enc_key, mac_key = _rnd_subkeys(key)
    iv, ct, tag = (blob[:_RND_IV_BYTES], blob[_RND_IV_BYTES:-_RND_TAG_BYTES],
                   blob[-_RND_TAG_BYTES:])
    expect = _hmac(mac_key, iv + ct)[:_RND_TAG_BYTES]
    if not hmac_mod.compare_digest(tag, expect):
        raise IntegrityError("authentication tag mismatch")
    dec = Cipher(algorithms.AES(enc_key), modes.CBC(iv)).decryptor()
    padded = dec.update(ct) + dec.finalize()
    unpadder = padding.PKCS7(128).unpadder()
    try:
        return unpadder.update(padded) + unpadder.finalize()
    except ValueError as exc:
        raise IntegrityError("bad padding after decryption") from exc


# --- ORE ----------------------------------------------------------------------

@dataclass
class OreKey:
    """Key material for the order-revealing scheme, with a derivation cache.

    The cache maps (block index, prefix) to that block's slot permutation
    and per-slot comparison tags; both are deterministic in the key, so the
    cache only saves recomputation and never changes results.
    """

    prf_key: bytes
    prp_key: bytes
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    _CACHE_CAP = 4096

    def block_setup(
        self, index: int, prefix: bytes
    ) -> tuple[list[int], list[int], list[bytes]]:
        """Permutation (value -> slot), its inverse, and per-slot tags."""
        cache_key = (index, prefix)
        hit = self._cache.get(cache_key)
        if hit is not None:
            return hit
        perm = _derive_permutation(self.prp_key, index, prefix)
        inverse = [0] * ORE_BLOCK_DOMAIN
        for value, slot in enumerate(perm):
            inverse[slot] = value
        tags = _derive_slot_tags(self.prf_key, index, prefix)
        if len(self._cache) >= self._CACHE_CAP:
            self._cache.clear()
        self._cache[cache_key] = (perm, inverse, tags)
        return perm, inverse, tags


def ore_keygen() -> OreKey:
    return OreKey(secrets.token_bytes(KEY_BYTES), secrets.token_bytes(KEY_BYTES))


def derive_ore_key(master: bytes) -> OreKey:
    return OreKey(_hmac(master, b"prf")[:KEY_BYTES],
                  _hmac(master, b"prp")[:KEY_BYTES])


def _derive_permutation(prp_key: bytes, index: int, prefix: bytes) -> list[int]:
    """Keyed pseudorandom permutation of the block domain.

    Fisher-Yates driven by an HMAC counter stream with rejection sampling,
    so the permutation is uniform and identical on every platform.
    """
    seed = _hmac(prp_key, bytes([index]) + prefix)
    perm = list(range(ORE_BLOCK_DOMAIN))
    stream = b""
    counter = 0
    pos = 0
    for j in range(ORE_BLOCK_DOMAIN - 1, 0, -1):
        bound = j + 1
        limit = 256 - (256 % bound)
        while True:
            if pos >= len(stream):
                stream = hashlib.sha256(seed + counter.to_bytes(4, "big")).digest()
                counter += 1
                pos = 0
            byte = stream[pos]
            pos += 1
            if byte < limit:
                k = byte % bound
                break
        perm[j], perm[k] = perm[k], perm[j]
    return perm


def _derive_slot_tags(prf_key: bytes, index: int, prefix: bytes) -> list[bytes]:
    """Comparison tag for every slot of one block position."""
    seed = _hmac(prf_key, bytes([index]) + prefix)
    base = hashlib.sha256()
    base.update(seed)
    tags = []
    for slot in range(ORE_BLOCK_DOMAIN):
        h = base.copy()
        h.update(bytes([slot]))
        tags.append(h.digest()[:16])
    return tags


def _mask(tag: bytes, nonce: bytes) -> int:
    return hashlib.sha256(nonce + tag).digest()[0] % 3


def _check_range(value: int, width: int, signed: bool) -> int:
    if width % ORE_BLOCK_BITS != 0 or width <= 0:
        raise ValueError(f"ORE width must be a positive multiple of {ORE_BLOCK_BITS}")
    if signed:
        value += 1 << (width - 1)
    if not 0 <= value < (1 << width):
        raise ValueError(f"value out of range for {width}-bit ORE")
    return value


def ore_encrypt_left(key: OreKey, value: int, width: int = DEFAULT_ORE_WIDTH,
                     signed: bool = False) -> bytes:
    """Left (query-side) ciphertext: per block a tag and a permuted slot."""
    value = _check_range(value, width, signed)
    n = width // ORE_BLOCK_BITS
    raw = value.to_bytes(n, "big")
    out = bytearray()
    for i in range(n):
        prefix = raw[:i]
        perm, _, tags = key.block_setup(i, prefix)
        slot = perm[raw[i]]
        out += tags[slot]
        out.append(slot)
    return bytes(out)


def ore_encrypt_right(key: OreKey, value: int, width: int = DEFAULT_ORE_WIDTH,
                      signed: bool = False) -> bytes:
    """Right (data-side) ciphertext: nonce plus masked comparison tables."""
    value = _check_range(value, width, signed)
    n = width // ORE_BLOCK_BITS
    raw = value.to_bytes(n, "big")
    nonce = os.urandom(16)
    out = bytearray(nonce)
    base = hashlib.sha256()
    base.update(nonce)
    base_copy = base.copy
    for i in range(n):
        prefix = raw[:i]
        _, inverse, tags = key.block_setup(i, prefix)
        y = raw[i]
        packed = bytearray(ORE_BLOCK_DOMAIN // 4)
        for slot in range(ORE_BLOCK_DOMAIN):
            x = inverse[slot]
            cmp_code = 0 if x == y else (1 if x < y else 2)
            h = base_copy()
            h.update(tags[slot])
            v = (cmp_code + h.digest()[0]) % 3
            packed[slot >> 2] |= v << ((slot & 3) * 2)
        out += packed
    return bytes(out)


def ore_encrypt(key: OreKey, value: int, width: int = DEFAULT_ORE_WIDTH,
                signed: bool = False) -> bytes:
    """Full ciphertext: left part followed by right part."""
    return (ore_encrypt_left(key, value, width, signed)
            + ore_encrypt_right(key, value, width, signed))


def ore_ciphertext_bytes(width: int = DEFAULT_ORE_WIDTH) -> int:
    n = width // ORE_BLOCK_BITS
    return n * 17 + 16 + n * (ORE_BLOCK_DOMAIN // 4)


def ore_compare(a: bytes, b: bytes, width: int = DEFAULT_ORE_WIDTH) -> int:
    """Order of the values inside two full ciphertexts: -1, 0 or 1.

    Uses a's left part against b's right part; blocks compare most
    significant first and the first unequal block decides.
    """
    n = width // ORE_BLOCK_BITS
    left_len = n * 17
    expected = ore_ciphertext_bytes(width)
    if len(a) != expected or len(b) != expected:
        raise ValueError("ORE ciphertext length does not match width")
    left = a[:left_len]
    right = b[left_len:]
    nonce = right[:16]
    for i in range(n):
        tag = left[17 * i:17 * i + 16]
        slot = left[17 * i + 16]
        table = right[16 + 64 * i:16 + 64 * (i + 1)]
        v = (table[slot >> 2] >> ((slot & 3) * 2)) & 3
        result = (v - _mask(tag, nonce)) % 3
        if result == 1:
            return -1
        if result == 2:
            return 1
    return 0


# --- key store ----------------------------------------------------------------

_KEYS_MAGIC = b"CCAKEYS1"
_KEYS_VERSION = 1


@dataclass
class KeyStore:
    """Everything the code owner keeps private after building an index.

    Besides the master keys this carries the file registry, the reverse
    directory from derived token keys back to token names, and the table
    resolving order-revealing ciphertexts to the values they encrypt; the
    last two exist so reports can be opened without touching source again.
    """

    master: MasterKeys
    mode: str
    det_hash: str
    ore_width: int
    files: dict[int, str] = field(default_factory=dict)
    directory: dict[bytes, tuple[int, str]] = field(default_factory=dict)
    ore_values: dict[bytes, int] = field(default_factory=dict)


def serialize_keys(ks: KeyStore) -> bytes:
    out = bytearray()
    out += _KEYS_MAGIC
    out += struct.pack(">BBBB", _KEYS_VERSION, MODES.index(ks.mode),
                       DET_HASHES.index(ks.det_hash), ks.ore_width)
    master = ks.master.as_tuple()
    out += struct.pack(">B", len(master[0]))
    for key in master:
        out += key
    out += struct.pack(">I", len(ks.files))
    for file_id in sorted(ks.files):
        path = ks.files[file_id].encode()
        out += struct.pack(">IH", file_id, len(path))
        out += path
    out += struct.pack(">I", len(ks.directory))
    for d_key in sorted(ks.directory):
        file_id, token = ks.directory[d_key]
        token_b = token.encode()
        out += struct.pack(">H", len(d_key))
        out += d_key
        out += struct.pack(">IH", file_id, len(token_b))
        out += token_b
    out += struct.pack(">I", len(ks.ore_values))
    for digest in sorted(ks.ore_values):
        out += digest
        out += struct.pack(">q", ks.ore_values[digest])
    return bytes(out)


def deserialize_keys(data: bytes) -> KeyStore:
    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"key store: truncated at byte {pos}")
        chunk = data[pos:pos + n]
        pos = pos + n
        return chunk

    pos = 0
    if take(len(_KEYS_MAGIC)) != _KEYS_MAGIC:
        raise FormatError("key store: bad magic, not a key container")
    version, mode_code, hash_code, width = struct.unpack(">BBBB", take(4))
    if version != _KEYS_VERSION:
        raise FormatError(f"key store: unsupported version {version}")
    if mode_code >= len(MODES) or hash_code >= len(DET_HASHES):
        raise FormatError("key store: unknown mode or hash code")
    key_len = take(1)[0]
    master = MasterKeys(*(take(key_len) for _ in range(6)))
    files: dict[int, str] = {}
    (n_files,) = struct.unpack(">I", take(4))
    for _ in range(n_files):
        file_id, path_len = struct.unpack(">IH", take(6))
        files[file_id] = take(path_len).decode()
    directory: dict[bytes, tuple[int, str]] = {}
    (n_dir,) = struct.unpack(">I", take(4))
    for _ in range(n_dir):
        (d_len,) = struct.unpack(">H", take(2))
        d_key = take(d_len)
        file_id, tok_len = struct.unpack(">IH", take(6))
        directory[d_key] = (file_id, take(tok_len).decode())
    ore_values: dict[bytes, int] = {}
    (n_ore,) = struct.unpack(">I", take(4))
    for _ in range(n_ore):
        digest = take(16)
        (value,) = struct.unpack(">q", take(8))
        ore_values[digest] = value
    if pos != len(data):
        raise FormatError("key store: trailing bytes after last table")
    return KeyStore(master, MODES[mode_code], DET_HASHES[hash_code], width,
                    files, directory, ore_values)


def save_keys(path, ks: KeyStore) -> None:
    atomic_write(path, serialize_keys(ks), private=True)


def load_keys(path) -> KeyStore:
    with open(path, "rb") as handle:
        return deserialize_keys(handle.read())
