"""Versioned binary container for trained models.

Layout (little-endian):

    magic   4 bytes  b"M01M"
    version u16
    meta    u32 length + UTF-8 JSON (kind, array names/shapes, user metadata)
    arrays  float64, concatenated in the order listed in meta["arrays"]
    crc     u32 zlib.crc32 over everything before it

Ensembles are a directory of member files plus ``manifest.json``.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .models import BnnParams, LinearParams, Mlp01Params, MlpParams, VoteEnsemble

MAGIC = b"M01M"
VERSION = 1
SUFFIX = ".m01"

_KINDS = {"linear": LinearParams, "mlp01": Mlp01Params, "mlp": MlpParams, "bnn": BnnParams}


class ModelFileError(Exception):
    """Corrupt, truncated or unsupported model file."""


class ModelKindError(ModelFileError):
    """File holds a different model kind than requested."""


def _arrays(p) -> list[tuple[str, np.ndarray]]:
    if isinstance(p, LinearParams):
        return [("w", p.w), ("w0", np.array(p.w0))]
    if isinstance(p, Mlp01Params):
        return [("W", p.W), ("W0", p.W0), ("w", p.w), ("w0", np.array(p.w0))]
    if isinstance(p, (MlpParams, BnnParams)):
        out = []
        for i, (W, b) in enumerate(zip(p.weights, p.biases)):
            out += [(f"W{i}", W), (f"b{i}", b)]
        return out
    raise TypeError(f"cannot serialize {type(p).__name__}")


def _build(kind, arrays):
    if kind == "linear":
        return LinearParams(arrays["w"], float(arrays["w0"]))
    if kind == "mlp01":
        return Mlp01Params(arrays["W"], arrays["W0"], arrays["w"], float(arrays["w0"]))
    n_layers = len(arrays) // 2
    Ws = [arrays[f"W{i}"] for i in range(n_layers)]
    bs = [arrays[f"b{i}"] for i in range(n_layers)]
    return _KINDS[kind](tuple(Ws), tuple(bs))


def dumps_model(p, metadata: dict | None = None) -> bytes:
    arrays = _arrays(p)
    meta = {
        "kind": p.kind,
        "arrays": [[name, list(a.shape)] for name, a in arrays],
        "metadata": metadata or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    body = [MAGIC, struct.pack("<HI", VERSION, len(meta_bytes)), meta_bytes]
    body += [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays]
    blob = b"".join(body)
    return blob + struct.pack("<I", zlib.crc32(blob))


def loads_model(blob: bytes, kind: str | None = None):
    """Parse a model container; returns (params, metadata)."""
    if len(blob) < 14 or blob[:4] != MAGIC:
        raise ModelFileError("bad magic: not a model container")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc:
        raise ModelFileError("checksum mismatch: file is corrupt")
    version, meta_len = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise ModelFileError(f"unsupported container version {version}")
    off = 10
    try:
        meta = json.loads(blob[off : off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"unreadable metadata: {exc}") from exc
    off += meta_len
    if meta.get("kind") not in _KINDS:
        raise ModelFileError(f"unknown model kind {meta.get('kind')!r}")
    if kind is not None and meta["kind"] != kind:
        raise ModelKindError(f"expected a {kind!r} model, file holds {meta['kind']!r}")
    arrays = {}
    for name, shape in meta["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        if off + 8 * count > len(blob) - 4:
            raise ModelFileError(f"truncated array {name}")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
    if off != len(blob) - 4:
        raise ModelFileError("trailing bytes after arrays")
    return _build(meta["kind"], arrays), meta["metadata"]


def save_model(p, path, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(dumps_model(p, metadata))
    return path


def load_model(path, kind: str | None = None):
    return loads_model(Path(path).read_bytes(), kind)


def save_ensemble(e: VoteEnsemble, directory, metadata: dict | None = None) -> Path:
    """Write members as member_000.m01, ... plus a manifest listing them in order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, m in enumerate(e.members):
        name = f"member_{i:03d}{SUFFIX}"
        save_model(m, directory / name, {**(metadata or {}), "member": i})
        files.append(name)
    manifest = {
        "format": "mlp01-ensemble",
        "version": VERSION,
        "kind": e.kind,
        "size": len(e),
        "members": files,
        "metadata": metadata or {},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_ensemble(directory, kind: str | None = None) -> VoteEnsemble:
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.is_file():
        raise ModelFileError(f"{directory}: no manifest.json")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != "mlp01-ensemble":
        raise ModelFileError(f"{mpath}: not an ensemble manifest")
    if kind is not None and manifest["kind"] != kind:
        raise ModelKindError(f"expected {kind!r} ensemble, found {manifest['kind']!r}")
    members = [load_model(directory / f, manifest["kind"])[0] for f in manifest["members"]]
    if len(members) != manifest["size"]:
        raise ModelFileError(f"{mpath}: size {manifest['size']} but {len(members)} members")
    return VoteEnsemble(tuple(members), {"metadata": manifest["metadata"]})
