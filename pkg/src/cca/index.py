"""Encrypted inverted index over dependency pairs.

Every pair list for a left token becomes a run of index entries addressed by
a deterministic per-token counter key, so the analyser can probe entry 1, 2,
3, ... of a token it holds a key for and learn nothing about the rest.  The
value of an entry carries the keys of the right-hand token plus the flow
fields, sealed with randomized encryption so identical edges look unrelated.

Three build modes share one container format:

* ore (default): flow fields are order-revealing ciphertexts.
* std: flow fields are plaintext integers, keys and values encrypted.
* plain: nothing encrypted, for debugging and baseline measurements.
"""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass, field

from .crypto import (
    DEFAULT_ORE_WIDTH,
    DET_HASHES,
    MODES,
    MasterKeys,
    derive_ore_key,
    derive_token_keys,
    det_encrypt,
    ore_ciphertext_bytes,
    ore_encrypt,
    rnd_encrypt,
)
from .dcfg import DCFG
from .errors import FormatError
from .fileio import atomic_write




_MAGIC = b"CCAIDX1\x00"
_VERSION = 1

_TOKEN_KEY_BYTES = 32  # derived D and R are HMAC-SHA256 outputs


@dataclass
class IndexEntry:
    key: bytes
    value: bytes


@dataclass
class EncryptedIndex:
    mode: str
    det_hash: str
    ore_width: int
    entries: list[IndexEntry]
    _table: dict[bytes, bytes] | None = field(default=None, repr=False)

    def lookup(self, key: bytes) -> bytes | None:
        if self._table is None:
            self._table = {e.key: e.value for e in self.entries}
        return self._table.get(key)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class SideTables:
    """Developer-side decryption aids collected while building."""

    directory: dict[bytes, tuple[int, str]]
    ore_values: dict[bytes, int]


def token_identity(file_id: int, token: str) -> str:
    """Index-wide identity of a token: the same name in two files differs."""
    return f"{file_id}:{token}"


def _ore_digest(ct: bytes) -> bytes:
    return hashlib.sha256(ct).digest()[:16]


def build_index(
    per_file: list[tuple[int, DCFG]],
    keys: MasterKeys,
    mode: str = "ore",
    det_hash: str = "sha1",
    ore_width: int = DEFAULT_ORE_WIDTH,
) -> tuple[EncryptedIndex, SideTables]:
    """Turn per-file dependency pairs into one index plus side tables."""
    if mode not in MODES:
        raise ValueError(f"unknown index mode {mode!r}")
    if det_hash not in DET_HASHES:
        raise ValueError(f"unknown DET hash {det_hash!r}")

    tables = SideTables(directory={}, ore_values={})
    entries: list[IndexEntry] = []
    token_keys: dict[str, tuple[bytes, bytes]] = {}
    ore_keys = {
        "line": derive_ore_key(keys.ore_line),
        "depth": derive_ore_key(keys.ore_depth),
        "order": derive_ore_key(keys.ore_order),
        "type": derive_ore_key(keys.ore_type),
    }

    def keys_for(file_id: int, token: str) -> tuple[bytes, bytes]:
        ident = token_identity(file_id, token)
        got = token_keys.get(ident)
        if got is None:
            got = derive_token_keys(keys, ident)
            token_keys[ident] = got
            tables.directory[got[0]] = (file_id, token)
        return got

    def ore_field(which: str, value: int, signed: bool) -> bytes:
        ct = ore_encrypt(ore_keys[which], value, ore_width, signed)
        tables.ore_values[_ore_digest(ct)] = value
        return ct

    for file_id, dcfg in per_file:
        for left, pairs in dcfg.by_left().items():
            left_ident = token_identity(file_id, left)
            d_left, r_left = keys_for(file_id, left)
            for counter, pair in enumerate(pairs, start=1):
                right = pair.right
                d_right, r_right = keys_for(file_id, right.token)
                if mode == "plain":
                    key = f"{left_ident}#{counter}".encode()
                    value = "|".join(
                        (token_identity(file_id, right.token), str(right.line),
                         str(right.depth), str(right.order), str(right.cf_type))
                    ).encode()
                else:
                    key = det_encrypt(d_left, counter.to_bytes(4, "big"), det_hash)
                    if mode == "std":
                        fields = struct.pack(">iiii", right.line, right.depth,
                                             right.order, right.cf_type)
                    else:
                        fields = (
                            ore_field("line", right.line, False)
                            + ore_field("depth", right.depth, False)
                            + ore_field("order", right.order, False)
                            + ore_field("type", right.cf_type, True)
                        )
                    value = rnd_encrypt(r_left, d_right + r_right + fields)
                entries.append(IndexEntry(key, value))

    if mode != "plain":
        random.SystemRandom().shuffle(entries)
    return EncryptedIndex(mode, det_hash, ore_width, entries), tables


def payload_layout(mode: str, ore_width: int) -> tuple[int, int]:
    """(offset of flow fields, bytes per flow field) inside a plaintext payload."""
    if mode == "std":
        return 2 * _TOKEN_KEY_BYTES, 4
    return 2 * _TOKEN_KEY_BYTES, ore_ciphertext_bytes(ore_width)


# --- container ----------------------------------------------------------------

_MODE_CODES = {name: i for i, name in enumerate(MODES)}
_HASH_CODES = {name: i for i, name in enumerate(DET_HASHES)}


def serialize_index(index: EncryptedIndex) -> bytes:
    out = bytearray()
    out += _MAGIC
    out += struct.pack(">BBBB", _VERSION, _MODE_CODES[index.mode],
                       _HASH_CODES[index.det_hash], index.ore_width)
    out += struct.pack(">I", len(index.entries))
    for entry in index.entries:
        out += struct.pack(">H", len(entry.key))
        out += entry.key
        out += struct.pack(">I", len(entry.value))
        out += entry.value
    return bytes(out)


class _Cursor:
    def __init__(self, data: bytes, what: str) -> None:
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.what}: truncated at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def done(self) -> bool:
        return self.pos == len(self.data)


def deserialize_index(data: bytes) -> EncryptedIndex:
    cur = _Cursor(data, "index")
    if cur.take(len(_MAGIC)) != _MAGIC:
        raise FormatError("index: bad magic, not an index container")
    version = cur.u8()
    if version != _VERSION:
        raise FormatError(f"index: unsupported version {version}")
    mode_code, hash_code, width = cur.u8(), cur.u8(), cur.u8()
    if mode_code >= len(MODES) or hash_code >= len(DET_HASHES):
        raise FormatError("index: unknown mode or hash code")
    count = cur.u32()
    entries = []
    for _ in range(count):
        key = cur.take(cur.u16())
        value = cur.take(cur.u32())
        entries.append(IndexEntry(key, value))
    if not cur.done():
        raise FormatError("index: trailing bytes after last entry")
    return EncryptedIndex(MODES[mode_code], DET_HASHES[hash_code], width, entries)


def index_stats(index: EncryptedIndex) -> dict:
    key_lens = {len(e.key) for e in index.entries}
    value_lens = {len(e.value) for e in index.entries}
    return {
        "mode": index.mode,
        "det_hash": index.det_hash,
        "ore_width": index.ore_width,
        "entries": len(index.entries),
        "distinct_keys": len({e.key for e in index.entries}),
        "key_bytes": sorted(key_lens),
        "value_bytes": sorted(value_lens),
        "container_bytes": len(serialize_index(index)),
    }


def save_index(path, index: EncryptedIndex) -> None:
    atomic_write(path, serialize_index(index))


def load_index(path) -> EncryptedIndex:
    with open(path, "rb") as handle:
        return deserialize_index(handle.read())
