"""On-disk formats.

* scans: CSV, one row per timepoint, one column per ROI, optional header row
* manifest: JSON listing scans, labels, task vocabulary and partitions
* graphs and checkpoints: a small binary container

Container layout (all integers little-endian)::

    magic      6 bytes   b"TAGATG" (graph) or b"TAGAT1" (checkpoint)
    version    uint32
    hdr_len    uint64
    header     hdr_len bytes of UTF-8 JSON, keys sorted; lists every tensor
               as {name, dtype, shape, offset, nbytes}
    payload    concatenated little-endian tensor bytes
    digest     32-byte SHA-256 of everything above
"""

import csv
import hashlib
import json
import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import CorruptPayload, NonFiniteValue, ParseError, VersionMismatch
from .graph import BrainGraph, ScanTimeSeries, TaskSet

GRAPH_MAGIC = b"TAGATG"
CHECKPOINT_MAGIC = b"TAGAT1"
GRAPH_VERSION = 1
CHECKPOINT_VERSION = 1
MANIFEST_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "i64": np.dtype("<i8")}
_DTYPE_NAMES = {v: k for k, v in _DTYPES.items()}
_PREFIX = struct.Struct("<6sIQ")


def _atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    _atomic_write(path, canonical_json(obj).encode())


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# scans

def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_scan_matrix(path):
    """Parse a numeric T x N CSV; a first row that is entirely non-numeric is a header."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not cells or cells == [""]:
                continue
            if not rows and line_no == 1 and not any(_is_number(c) for c in cells):
                continue
            values = []
            for col, text in enumerate(cells, start=1):
                try:
                    v = float(text)
                except ValueError:
                    raise ParseError(path, line_no, col, text) from None
                if not math.isfinite(v):
                    raise NonFiniteValue(path, line_no, col, text)
                values.append(v)
            if rows and len(values) != len(rows[0]):
                raise ParseError(path, line_no, len(values), f"<{len(values)} columns>")
            rows.append(values)
    if not rows:
        raise ParseError(path, 1, 1, "<empty file>")
    return np.array(rows, dtype=np.float64)


def load_scan_csv(path, subject_id="", task="", gender=0, cog_score=0.0) -> ScanTimeSeries:
    return ScanTimeSeries(subject_id, task, read_scan_matrix(path), gender, cog_score)


def write_scan_csv(path, data):
    data = np.asarray(data, dtype=np.float64)
    lines = [",".join(f"roi_{j}" for j in range(data.shape[1]))]
    lines += [",".join(repr(float(v)) for v in row) for row in data]
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


# manifest

def validate_manifest(m):
    if m.get("version") != MANIFEST_VERSION:
        raise VersionMismatch(f"manifest version {m.get('version')!r}, expected {MANIFEST_VERSION}")
    tasks = m["tasks"]
    if len(set(tasks.values())) != len(tasks):
        raise ValueError("task indices in manifest are not unique")
    for entry in m["scans"]:
        if entry["task_name"] not in tasks:
            raise ValueError(f"scan {entry['path']} has unknown task {entry['task_name']!r}")
        if entry["gender"] not in (0, 1):
            raise ValueError(f"scan {entry['path']} has gender {entry['gender']!r}")
        if not 0.0 <= entry["cog_score"] <= 1.0:
            raise ValueError(f"scan {entry['path']} has cog_score {entry['cog_score']!r}")
    for sid, p in (m.get("partitions") or {}).items():
        if not 1 <= p <= 5:
            raise ValueError(f"subject {sid} has partition {p}, expected 1..5")
    return m


def load_manifest(path):
    return validate_manifest(read_json(path))


def manifest_tasks(m) -> TaskSet:
    return TaskSet(sorted(m["tasks"], key=m["tasks"].get))


def load_manifest_scans(manifest_path):
    m = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    scans = []
    for e in m["scans"]:
        ts = load_scan_csv(base / e["path"], e["subject_id"], e["task_name"], e["gender"],
                           e["cog_score"])
        if ts.N != m["roi_count"]:
            raise ValueError(f"{e['path']}: {ts.N} ROIs, manifest says {m['roi_count']}")
        scans.append(ts)
    return m, scans


# binary container

def write_container(path, magic, version, header: dict, tensors: dict):
    specs, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_NAMES:
            raise TypeError(f"tensor {name}: unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        specs.append({"name": name, "dtype": _DTYPE_NAMES[dt], "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    hdr = json.dumps({**header, "tensors": specs}, sort_keys=True, allow_nan=False).encode()
    body = _PREFIX.pack(magic, version, len(hdr)) + hdr + b"".join(chunks)
    _atomic_write(path, body + hashlib.sha256(body).digest())


def read_container(path, magic, version):
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size + 32:
        raise CorruptPayload(f"{path}: file too short ({len(blob)} bytes)")
    got_magic, got_version, hdr_len = _PREFIX.unpack_from(blob)
    if got_magic != magic:
        raise CorruptPayload(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if got_version != version:
        raise VersionMismatch(f"{path}: format version {got_version}, expected {version}")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptPayload(f"{path}: checksum mismatch (truncated or modified)")
    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + hdr_len])
    except ValueError as exc:
        raise CorruptPayload(f"{path}: unreadable header") from exc
    payload = body[start + hdr_len:]
    tensors = {}
    for spec in header.pop("tensors"):
        raw = payload[spec["offset"]:spec["offset"] + spec["nbytes"]]
        if len(raw) != spec["nbytes"]:
            raise CorruptPayload(f"{path}: tensor {spec['name']} is truncated")
        dt = _DTYPES[spec["dtype"]]
        arr = np.frombuffer(raw, dtype=dt).reshape(spec["shape"])
        tensors[spec["name"]] = arr.astype(dt.newbyteorder("="))
    return header, tensors


# graphs

def save_graph(path, graph: BrainGraph):
    header = {
        "subject_id": graph.subject_id,
        "task": graph.task,
        "gender": int(graph.gender),
        "cog_score": float(graph.cog_score),
        "provenance": graph.provenance,
    }
    tensors = {
        "node_features": graph.node_features,
        "edges": graph.edges.astype(np.int64),
        "weights": graph.weights,
    }
    write_container(path, GRAPH_MAGIC, GRAPH_VERSION, header, tensors)


def load_graph(path) -> BrainGraph:
    h, t = read_container(path, GRAPH_MAGIC, GRAPH_VERSION)
    return BrainGraph(
        node_features=t["node_features"], edges=t["edges"], weights=t["weights"],
        subject_id=h["subject_id"], task=h["task"], gender=h["gender"],
        cog_score=h["cog_score"], provenance=h["provenance"],
    )


GRAPH_INDEX = "index.json"


def save_graph_dir(out_dir, graphs, tasks: TaskSet, partitions=None, extra=None):
    """Write every graph plus an index.json describing the collection."""
    out_dir = Path(out_dir)
    entries = []
    for g in graphs:
        rel = f"{g.subject_id}_{g.task}.tgraph"
        save_graph(out_dir / rel, g)
        entries.append({"subject_id": g.subject_id, "task_name": g.task, "path": rel,
                        "gender": int(g.gender), "cog_score": float(g.cog_score)})
    index = {
        "version": MANIFEST_VERSION,
        "roi_count": graphs[0].n_nodes if graphs else 0,
        "tasks": tasks.to_dict(),
        "scans": entries,
        "partitions": partitions or {},
        **(extra or {}),
    }
    write_json(out_dir / GRAPH_INDEX, index)
    return index


def load_graph_dir(graph_dir):
    """(graphs, TaskSet, partitions) from a directory written by save_graph_dir."""
    graph_dir = Path(graph_dir)
    index = validate_manifest(read_json(graph_dir / GRAPH_INDEX))
    graphs = []
    for e in index["scans"]:
        g = load_graph(graph_dir / e["path"])
        if (g.subject_id, g.task) != (e["subject_id"], e["task_name"]):
            raise CorruptPayload(f"{e['path']}: graph metadata disagrees with index")
        graphs.append(g)
    return graphs, manifest_tasks(index), index.get("partitions") or {}


# checkpoints

def save_checkpoint(path, model, header: dict):
    header = {"model_config": model.config.to_dict(), **header}
    write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header, model.state_dict())


def load_checkpoint(path):
    """(model, header) from a checkpoint file."""
    from .autodiff import Tensor
    from .model import TAGAT, ModelConfig

    header, tensors = read_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    config = ModelConfig.from_dict(header["model_config"])
    params = {k: Tensor(v, requires_grad=True) for k, v in tensors.items()}
    return TAGAT(config, params), header
