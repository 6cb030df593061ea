"""Vulnerability detection over the inverted index.

The analyser holds only a query: per file, the key pair of the task's
sensitive-sink token plus the bare identities of the entry-point and
sanitizer tokens.  Each decrypted index value hands over the keys of the
next token, so detection can walk flows outward from the sinks and nowhere
else.  Detection itself runs in four steps: enumerate candidate paths,
drop impossible orderings, aggregate per sink statement, then resolve
branch alternatives down to the flow that actually reaches the sink.

The same four steps run over plaintext dependency pairs (see the oracle
module) by swapping the reader; field values only need ==, < and >, which
both plain integers and order-revealing ciphertexts provide.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass

import yaml

from .crypto import (
    DET_HASHES,
    MODES,
    KeyStore,
    derive_token_keys,
    det_encrypt,
    ore_ciphertext_bytes,
    ore_compare,
    rnd_decrypt,
)
from .errors import (
    AuthorizationError,
    FormatError,
    IntegrityError,
    KeyMismatchError,
    UsageError,
)
from .fileio import atomic_write
from .index import EncryptedIndex, token_identity

log = logging.getLogger(__name__)

TASKS = ("xss", "sqli")

_TASK_TOKENS = {
    "xss": ("XSS_SENS", "XSS_SAN"),
    "sqli": ("SQLi_SENS", "SQLi_SAN"),
}

_D_BYTES = 32


class OreValue:
    """Order-revealing ciphertext that behaves like a number under ==, <, >."""

    __slots__ = ("ct", "width")

    def __init__(self, ct: bytes) -> None:
        n, rem = divmod(len(ct) - 16, 81)
        if rem != 0 or n <= 0:
            raise FormatError("malformed order-revealing ciphertext")
        self.ct = ct
        self.width = n * 8

    def compare(self, other: "OreValue") -> int:
        return ore_compare(self.ct, other.ct, self.width)

    def __eq__(self, other) -> bool:
        return isinstance(other, OreValue) and self.compare(other) == 0

    def __lt__(self, other) -> bool:
        return self.compare(other) < 0

    def __gt__(self, other) -> bool:
        return self.compare(other) > 0

    def __le__(self, other) -> bool:
        return self.compare(other) <= 0

    def __ge__(self, other) -> bool:
        return self.compare(other) >= 0

    __hash__ = None  # ciphertexts of equal values differ; never hash-group


@dataclass
class Edge:
    """One decoded index entry: the right-hand token and its flow fields."""

    right: object  # (D, R) tuple in encrypted modes, token identity in plain
    line: object
    depth: object
    order: object
    cf_type: object


@dataclass
class PathNode:
    token: object  # opaque identity: D bytes or plain token identity
    line: object
    depth: object
    order: object
    cf_type: object

    def same_scope(self, other: "PathNode") -> bool:
        return (self.depth == other.depth and self.order == other.order
                and self.cf_type == other.cf_type)


def ref_identity(ref) -> object:
    """Stable identity of a token reference, usable in visited sets."""
    return ref[0] if isinstance(ref, tuple) else ref


# --- queries ------------------------------------------------------------------

@dataclass
class FileQuery:
    file_id: int
    sens: object       # token reference of the sensitive-sink token
    input_id: object   # identity of the entry-point token
    san_id: object     # identity of the sanitizer token


@dataclass
class Query:
    task: str
    mode: str
    det_hash: str
    ore_width: int
    files: list[FileQuery]


def read_policy(path) -> dict[str, bool]:
    """Parse an authorisation policy: lines of `allow TASK` / `deny TASK`."""
    decisions: dict[str, bool] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] not in ("allow", "deny"):
                raise UsageError(f"{path}:{lineno}: bad policy line {raw.strip()!r}")
            task = parts[1].lower()
            if task not in TASKS:
                raise UsageError(f"{path}:{lineno}: unknown task {parts[1]!r}")
            # deny wins over allow regardless of order
            if decisions.get(task) is not False:
                decisions[task] = parts[0] == "allow"
    return decisions


def authorise(ks: KeyStore, task: str, policy_path=None) -> Query:
    """Issue the analysis query for one task, gated by the policy.

    Without a policy file the owner is authorising themselves and every
    task is available; with one, a task runs only if explicitly allowed.
    """
    task = task.lower()
    if task not in TASKS:
        raise UsageError(f"unknown task {task!r}; expected one of {TASKS}")
    if policy_path is not None:
        decisions = read_policy(policy_path)
        if not decisions.get(task, False):
            raise AuthorizationError(f"policy denies task {task!r}")
    sens_name, san_name = _TASK_TOKENS[task]
    files = []
    for file_id in sorted(ks.files):
        if ks.mode == "plain":
            files.append(FileQuery(
                file_id,
                sens=token_identity(file_id, sens_name),
                input_id=token_identity(file_id, "INPUT"),
                san_id=token_identity(file_id, san_name),
            ))
        else:
            sens_d, sens_r = derive_token_keys(ks.master,
                                               token_identity(file_id, sens_name))
            input_d, _ = derive_token_keys(ks.master,
                                           token_identity(file_id, "INPUT"))
            san_d, _ = derive_token_keys(ks.master,
                                         token_identity(file_id, san_name))
            files.append(FileQuery(file_id, sens=(sens_d, sens_r),
                                   input_id=input_d, san_id=san_d))
    return Query(task, ks.mode, ks.det_hash, ks.ore_width, files)


_QRY_MAGIC = b"CCAQRY1\x00"
_QRY_VERSION = 1


def serialize_query(query: Query) -> bytes:
    def blob(b: bytes) -> bytes:
        return struct.pack(">H", len(b)) + b

    out = bytearray()
    out += _QRY_MAGIC
    out += struct.pack(">BBBB", _QRY_VERSION, TASKS.index(query.task),
                       MODES.index(query.mode), DET_HASHES.index(query.det_hash))
    out += struct.pack(">B", query.ore_width)
    out += struct.pack(">I", len(query.files))
    for fq in query.files:
        out += struct.pack(">I", fq.file_id)
        if query.mode == "plain":
            out += blob(fq.sens.encode())
            out += blob(b"")
            out += blob(fq.input_id.encode())
            out += blob(fq.san_id.encode())
        else:
            out += blob(fq.sens[0])
            out += blob(fq.sens[1])
            out += blob(fq.input_id)
            out += blob(fq.san_id)
    return bytes(out)


def deserialize_query(data: bytes) -> Query:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"query: truncated at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    def blob() -> bytes:
        (n,) = struct.unpack(">H", take(2))
        return take(n)

    if take(len(_QRY_MAGIC)) != _QRY_MAGIC:
        raise FormatError("query: bad magic, not a query container")
    version, task_code, mode_code, hash_code = struct.unpack(">BBBB", take(4))
    if version != _QRY_VERSION:
        raise FormatError(f"query: unsupported version {version}")
    if task_code >= len(TASKS) or mode_code >= len(MODES) or hash_code >= len(DET_HASHES):
        raise FormatError("query: unknown task, mode or hash code")
    width = take(1)[0]
    (count,) = struct.unpack(">I", take(4))
    mode = MODES[mode_code]
    files = []
    for _ in range(count):
        (file_id,) = struct.unpack(">I", take(4))
        sens_d, sens_r, input_d, san_d = blob(), blob(), blob(), blob()
        if mode == "plain":
            files.append(FileQuery(file_id, sens_d.decode(),
                                   input_d.decode(), san_d.decode()))
        else:
            files.append(FileQuery(file_id, (sens_d, sens_r), input_d, san_d))
    if pos != len(data):
        raise FormatError("query: trailing bytes after last entry")
    return Query(TASKS[task_code], mode, DET_HASHES[hash_code], width, files)


def save_query(path, query: Query) -> None:
    atomic_write(path, serialize_query(query), private=True)


def load_query(path) -> Query:
    with open(path, "rb") as handle:
        return deserialize_query(handle.read())


# --- index readers ------------------------------------------------------------

class IndexReader:
    """Counter-probing reader for the encrypted modes."""

    def __init__(self, index: EncryptedIndex) -> None:
        self.index = index
        self.field_bytes = (4 if index.mode == "std"
                            else ore_ciphertext_bytes(index.ore_width))
        self._cache: dict[bytes, list[Edge]] = {}

    def entries(self, ref) -> list[Edge]:
        d_key, r_key = ref
        cached = self._cache.get(d_key)
        if cached is not None:
            return cached
        edges: list[Edge] = []
        counter = 1
        while True:
            probe = det_encrypt(d_key, counter.to_bytes(4, "big"),
                                self.index.det_hash)
            blob = self.index.lookup(probe)
            if blob is None:
                break
            edges.append(self._decode(rnd_decrypt(r_key, blob)))
            counter += 1
        self._cache[d_key] = edges
        return edges

    def _decode(self, payload: bytes) -> Edge:
        need = 2 * _D_BYTES + 4 * self.field_bytes
        if len(payload) != need:
            raise FormatError("index value has unexpected payload size")
        d_right = payload[:_D_BYTES]
        r_right = payload[_D_BYTES:2 * _D_BYTES]
        rest = payload[2 * _D_BYTES:]
        if self.index.mode == "std":
            line, depth, order, cf_type = struct.unpack(">iiii", rest)
        else:
            fb = self.field_bytes
            line, depth, order, cf_type = (
                OreValue(rest[0:fb]),
                OreValue(rest[fb:2 * fb]),
                OreValue(rest[2 * fb:3 * fb]),
                OreValue(rest[3 * fb:4 * fb]),
            )
        return Edge((d_right, r_right), line, depth, order, cf_type)


class PlainReader:
    """Reader for the unencrypted debugging mode."""

    def __init__(self, index: EncryptedIndex) -> None:
        self.index = index
        self._cache: dict[str, list[Edge]] = {}

    def entries(self, ref: str) -> list[Edge]:
        cached = self._cache.get(ref)
        if cached is not None:
            return cached
        edges: list[Edge] = []
        counter = 1
        while True:
            blob = self.index.lookup(f"{ref}#{counter}".encode())
            if blob is None:
                break
            right, line, depth, order, cf_type = blob.decode().split("|")
            edges.append(Edge(right, int(line), int(depth), int(order),
                              int(cf_type)))
            counter += 1
        self._cache[ref] = edges
        return edges


def make_reader(index: EncryptedIndex):
    return PlainReader(index) if index.mode == "plain" else IndexReader(index)


# --- detection steps ----------------------------------------------------------

def find_paths(reader, fq: FileQuery) -> list[list[PathNode]]:
    """Step 1: every dataflow path backwards from the task's sinks.

    A path follows index entries token by token and stops at a token with
    no entries or one this path already expanded (a dependency cycle).
    """
    paths: list[list[PathNode]] = []
    sens_id = ref_identity(fq.sens)

    def walk(nodes: list[PathNode], ref, visited: frozenset) -> None:
        rid = ref_identity(ref)
        if rid in visited:
            paths.append(nodes)
            return
        edges = reader.entries(ref)
        if not edges:
            paths.append(nodes)
            return
        deeper = visited | {rid}
        for edge in edges:
            node = PathNode(ref_identity(edge.right), edge.line, edge.depth,
                            edge.order, edge.cf_type)
            walk(nodes + [node], edge.right, deeper)

    for edge in reader.entries(fq.sens):
        sink = PathNode(sens_id, edge.line, edge.depth, edge.order, edge.cf_type)
        first = PathNode(ref_identity(edge.right), edge.line, edge.depth,
                         edge.order, edge.cf_type)
        walk([sink, first], edge.right, frozenset((sens_id,)))
    return paths


def remove_invalid_paths(paths: list[list[PathNode]]) -> list[list[PathNode]]:
    """Step 2: drop flows that would run backwards inside one scope.

    A node later in the file than the sink cannot feed it when both sit in
    the same branch scope; across different scopes order stays ambiguous
    (alternation may execute either first), so those paths survive.
    """
    kept = []
    for nodes in paths:
        sink = nodes[0]
        valid = True
        for node in nodes[1:]:
            if node.same_scope(sink) and node.line > sink.line:
                valid = False
                break
        if valid:
            kept.append(nodes)
    return kept


def aggregate_paths(paths: list[list[PathNode]]) -> list[list[list[PathNode]]]:
    """Step 3: group paths by sink statement, ordered by sink line."""
    groups: list[list] = []  # [token, line, [paths]]
    for nodes in paths:
        sink = nodes[0]
        for group in groups:
            if group[0] == sink.token and group[1] == sink.line:
                group[2].append(nodes)
                break
        else:
            groups.append([sink.token, sink.line, [nodes]])
    groups.sort(key=lambda group: group[1])
    return [group[2] for group in groups]


class _FlowClasser:
    """Assigns small ids to (depth, order, type) equality classes."""

    def __init__(self) -> None:
        self.reps: list[PathNode] = []

    def class_of(self, node: PathNode) -> int:
        for i, rep in enumerate(self.reps):
            if node.same_scope(rep):
                return i
        self.reps.append(node)
        return len(self.reps) - 1


def _first_difference(a: list[PathNode], b: list[PathNode]) -> int | None:
    for k in range(min(len(a), len(b))):
        na, nb = a[k], b[k]
        if na.token != nb.token or na.line != nb.line or not na.same_scope(nb):
            return k
    if len(a) != len(b):
        return min(len(a), len(b))
    return None


def resolve_control_flow(
    groups: list[list[list[PathNode]]],
) -> list[list[PathNode]]:
    """Step 4: among alternative flows into one sink, keep the decisive one.

    Paths whose nodes past the sink cover the same branch scopes may be
    sequential rewrites of one flow (reassignments of the variable the
    sink reads), and only the write nearest the sink counts.  Rewrites
    reveal themselves by diverging at nodes on distinct lines; paths that
    diverge on one line are parallel flows of a single statement (several
    call arguments, several value tokens of one expression) and are all
    kept.  Paths covering different scope combinations come from
    different branches and always survive.
    """
    selected: list[list[PathNode]] = []
    for group in groups:
        classer = _FlowClasser()
        buckets: dict[frozenset, list[list[PathNode]]] = {}
        for nodes in group:
            signature = frozenset(classer.class_of(n) for n in nodes[1:])
            buckets.setdefault(signature, []).append(nodes)
        for bucket in buckets.values():
            survivors: list[list[PathNode]] = []
            for cand in bucket:
                sink_line = cand[0].line
                dominated = False
                beaten: set[int] = set()
                for i, surv in enumerate(survivors):
                    k = _first_difference(surv, cand)
                    if k is None:
                        dominated = True
                        break
                    s_line = surv[k].line if k < len(surv) else None
                    c_line = cand[k].line if k < len(cand) else None
                    if (s_line is not None and c_line is not None
                            and s_line == c_line):
                        continue
                    s_ok = s_line is not None and s_line < sink_line
                    c_ok = c_line is not None and c_line < sink_line
                    if c_ok and (not s_ok or c_line > s_line):
                        beaten.add(i)
                    else:
                        dominated = True
                        break
                if dominated:
                    continue
                if beaten:
                    survivors = [s for i, s in enumerate(survivors)
                                 if i not in beaten]
                survivors.append(cand)
            selected.extend(survivors)
    return selected


def check_vulnerability(paths: list[list[PathNode]],
                        fq: FileQuery) -> list[list[PathNode]]:
    """Final filter: flows that start at an entry point and skip sanitizers."""
    findings = []
    for nodes in paths:
        if nodes[-1].token != fq.input_id:
            continue
        if any(node.token == fq.san_id for node in nodes):
            continue
        findings.append(nodes)
    return findings


# --- full run and reports -------------------------------------------------------

def _node_to_dict(node: PathNode) -> dict:
    def fieldval(value):
        if isinstance(value, OreValue):
            return "ore:" + hashlib.sha256(value.ct).digest()[:16].hex()
        return int(value)

    token = node.token.hex() if isinstance(node.token, bytes) else node.token
    return {
        "token": token,
        "line": fieldval(node.line),
        "depth": fieldval(node.depth),
        "order": fieldval(node.order),
        "type": fieldval(node.cf_type),
    }


def analyse(index: EncryptedIndex, query: Query) -> dict:
    """Run the full detection over one index with one query."""
    if query.mode != index.mode:
        raise FormatError(
            f"query was authorised for mode {query.mode!r} but the index "
            f"was built in mode {index.mode!r}"
        )
    if query.mode != "plain" and (query.det_hash != index.det_hash
                                  or query.ore_width != index.ore_width):
        raise FormatError("query and index disagree on scheme parameters")
    reader = make_reader(index)
    report: dict = {"task": query.task, "mode": query.mode, "files": []}
    probed_any = False
    for fq in sorted(query.files, key=lambda f: f.file_id):
        paths = find_paths(reader, fq)
        if paths:
            probed_any = True
        survivors = remove_invalid_paths(paths)
        groups = aggregate_paths(survivors)
        resolved = resolve_control_flow(groups)
        findings = check_vulnerability(resolved, fq)
        entry = {"file": fq.file_id, "findings": []}
        for nodes in findings:
            entry["findings"].append({
                "sink": _node_to_dict(nodes[0]),
                "source": _node_to_dict(nodes[-1]),
                "path": [_node_to_dict(n) for n in nodes],
            })
        report["files"].append(entry)
    if not probed_any and len(index) > 0:
        message = ("no sensitive entries answered any probe; the query keys "
                   "may not match this index")
        log.warning(message)
        report["warnings"] = [message]
    return report


def save_report(path, report: dict) -> None:
    atomic_write(path, yaml.safe_dump(report, sort_keys=False).encode())


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    if not isinstance(data, dict) or "files" not in data:
        raise FormatError(f"{path}: not an analysis report")
    return data


def decrypt_report(report: dict, ks: KeyStore) -> dict:
    """Resolve an analysis report into file paths, token names and lines."""

    def resolve_token(value):
        if ks.mode == "plain":
            return str(value).split(":", 1)[1] if ":" in str(value) else value
        try:
            raw = bytes.fromhex(value)
        except (TypeError, ValueError) as exc:
            raise KeyMismatchError(f"malformed token key {value!r}") from exc
        hit = ks.directory.get(raw)
        if hit is None:
            raise KeyMismatchError(
                "token key not present in this key store; the report was "
                "produced from an index built with different keys"
            )
        return hit[1]

    def resolve_field(value):
        if isinstance(value, str) and value.startswith("ore:"):
            digest = bytes.fromhex(value[4:])
            if digest not in ks.ore_values:
                raise KeyMismatchError(
                    "ciphertext not present in this key store; the report "
                    "was produced from an index built with different keys"
                )
            return ks.ore_values[digest]
        return int(value)

    def resolve_node(node: dict) -> dict:
        return {
            "token": resolve_token(node["token"]),
            "line": resolve_field(node["line"]),
            "depth": resolve_field(node["depth"]),
            "order": resolve_field(node["order"]),
            "type": resolve_field(node["type"]),
        }

    out = {"task": report.get("task"), "mode": report.get("mode"), "files": []}
    for entry in report.get("files", []):
        file_id = entry["file"]
        resolved = {
            "file": ks.files.get(file_id, f"<file {file_id}>"),
            "findings": [],
        }
        for finding in entry.get("findings", []):
            resolved["findings"].append({
                "sink": resolve_node(finding["sink"]),
                "source": resolve_node(finding["source"]),
                "path": [resolve_node(n) for n in finding["path"]],
            })
        out["files"].append(resolved)
    if "warnings" in report:
        out["warnings"] = list(report["warnings"])
    return out
