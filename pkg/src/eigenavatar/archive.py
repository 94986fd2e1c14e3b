"""Sectioned binary container for an encoded avatar sequence.

File layout (little-endian)::

    magic      8 bytes  b"EIGAVTR1"
    version    u32
    n_sections u32
    then per section:
        name_len u16, name (utf-8), payload_len u64, crc32 u32, payload

Every payload is an array bundle: u32 header length, a compact JSON header
``{"meta": {...}, "arrays": [[name, dtype, shape], ...]}`` and the raw
little-endian array bytes in header order. JSON is written with sorted keys
so equal content always produces equal bytes.

Sections, in order: manifest, body_model, frames, deform, deform_coeffs,
texture, texture_coeffs (optional), regressors.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import subspace
from .deform import DeformModel
from .errors import ArchiveError
from .mesh import BodyModel, Mesh, Skeleton
from .regress import Regressor, RegressorSet, TextureGroup, TextureHead
from .texture import TextureModel

MAGIC = b"EIGAVTR1"
FORMAT_VERSION = 1
TEXTURE_ITEMSIZE = 4
_FILE_HEADER = struct.Struct("<8sII")
_SECTION_HEAD = struct.Struct("<QI")
_ORDER = ("manifest", "body_model", "frames", "deform", "deform_coeffs",
          "texture", "texture_coeffs", "regressors")


@dataclass(eq=False)
class Archive:
    model: BodyModel
    poses: np.ndarray  # (F, J, 3)
    translations: np.ndarray  # (F, 3)
    shape: np.ndarray  # (K,)
    deform: DeformModel
    deform_coeffs: list  # per part (F, L_l)
    texture: TextureModel
    regressors: RegressorSet
    manifest: dict = field(default_factory=dict)
    # {triangle: (frames, coefficients)} or None
    texture_coeffs: dict | None = None

    @property
    def n_frames(self):
        return len(self.poses)


# ---- array bundles ----------------------------------------------------------

def _pack(meta, arrays) -> bytes:
    head, body = [], []
    for name, a in arrays:
        a = np.asarray(a)
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder not in "|<" else a.dtype
        a = np.ascontiguousarray(a, dtype=dt)
        head.append([name, dt.str, list(a.shape)])
        body.append(a.tobytes())
    h = json.dumps({"meta": meta, "arrays": head}, sort_keys=True, separators=(",", ":")).encode()
    return struct.pack("<I", len(h)) + h + b"".join(body)


def _unpack(payload: bytes, section):
    try:
        (n,) = struct.unpack_from("<I", payload)
        doc = json.loads(payload[4:4 + n].decode())
        pos = 4 + n
        arrays = {}
        for name, dt, shape in doc["arrays"]:
            dt = np.dtype(dt)
            count = int(np.prod(shape, dtype=np.int64))
            if pos + count * dt.itemsize > len(payload):
                raise ArchiveError(f"array {name!r} runs past the payload", section)
            arrays[name] = np.frombuffer(payload, dt, count, pos).reshape(shape).copy()
            pos += count * dt.itemsize
        if pos != len(payload):
            raise ArchiveError("trailing bytes after the last array", section)
        return doc["meta"], arrays
    except ArchiveError:
        raise
    except (ValueError, KeyError, TypeError, struct.error, UnicodeDecodeError) as exc:
        raise ArchiveError(f"malformed payload ({exc})", section) from None


def _blob(sub, itemsize):
    return np.frombuffer(subspace.to_bytes(sub, itemsize), np.uint8)


def _from_blob(blob, section):
    try:
        sub, end = subspace.from_bytes(np.asarray(blob, np.uint8).tobytes())
    except Exception as exc:
        raise ArchiveError(f"bad subspace record ({exc})", section) from None
    return sub


def _reg_arrays(prefix, reg: Regressor):
    return [(f"{prefix}.{n}", a) for n, a in zip(("W1", "b1", "W2", "b2"), reg.params())]


def _reg_from(arrays, prefix):
    return Regressor(*(arrays[f"{prefix}.{n}"] for n in ("W1", "b1", "W2", "b2")))


# ---- sections -----------------------------------------------------------------

def _body_section(model: BodyModel):
    rows, cols = np.nonzero(model.weights)
    meta = {"names": list(model.skeleton.names)}
    return _pack(meta, [
        ("vertices", model.template.vertices.astype("<f8")),
        ("triangles", model.template.triangles.astype("<i4")),
        ("parts", model.template.part_of_vertex.astype("<i4")),
        ("parents", model.skeleton.parents.astype("<i4")),
        ("offsets", model.skeleton.offsets.astype("<f8")),
        ("w_rows", rows.astype("<i4")),
        ("w_cols", cols.astype("<i4")),
        ("w_values", model.weights[rows, cols].astype("<f8")),
        ("blendshapes", model.blendshapes.astype("<f8")),
    ])


def _body_from(meta, a) -> BodyModel:
    V = len(a["vertices"])
    sk = Skeleton(a["parents"].astype(np.int64), a["offsets"], tuple(meta["names"]))
    W = np.zeros((V, sk.n_joints))
    W[a["w_rows"], a["w_cols"]] = a["w_values"]
    mesh = Mesh(a["vertices"], a["triangles"].astype(np.int64), a["parts"].astype(np.int64))
    return BodyModel(mesh, sk, W, a["blendshapes"].reshape(-1, V, 3))


def _deform_section(model: DeformModel):
    arrays = []
    for l, (sub, idx) in enumerate(zip(model.subspaces, model.part_vertices)):
        arrays += [(f"{l}.vertices", np.asarray(idx, "<i4")), (f"{l}.subspace", _blob(sub, 8))]
    return _pack({"n_parts": model.n_parts}, arrays)


def _deform_from(meta, a, section) -> DeformModel:
    n = meta["n_parts"]
    subs = tuple(_from_blob(a[f"{l}.subspace"], section) for l in range(n))
    return DeformModel(subs, tuple(a[f"{l}.vertices"].astype(np.int64) for l in range(n)))


def _texture_section(model: TextureModel):
    F, n = model.visibility.shape
    arrays = [("visibility", np.packbits(model.visibility, axis=None)),
              ("fallback", model.fallback.astype("<i4"))]
    for t, sub in enumerate(model.subspaces):
        if sub is not None:
            arrays.append((str(t), _blob(sub, TEXTURE_ITEMSIZE)))
    return _pack({"T": model.T, "frames": F, "triangles": n}, arrays)


def _texture_from(meta, a, section) -> TextureModel:
    F, n = meta["frames"], meta["triangles"]
    vis = np.unpackbits(a["visibility"], count=F * n).reshape(F, n).astype(bool)
    subs = tuple(_from_blob(a[str(t)], section) if str(t) in a else None for t in range(n))
    return TextureModel(subs, meta["T"], vis, a["fallback"].astype(np.int64))


def _regressor_section(regs: RegressorSet):
    arrays, groups = [], []
    for l, reg in enumerate(regs.deform):
        if reg is not None:
            arrays += _reg_arrays(f"d{l}", reg)
    for g, group in enumerate(regs.texture):
        arrays += _reg_arrays(f"t{g}", group.regressor)
        heads = np.array([[h.triangle, h.start, h.stop] for h in group.heads], "<i4").reshape(-1, 3)
        arrays.append((f"t{g}.heads", heads))
        groups.append(int(group.joint))
    meta = {"deform_joints": [int(j) for j in regs.deform_joints],
            "deform_present": [reg is not None for reg in regs.deform],
            "texture_joints": groups}
    return _pack(meta, arrays)


def _regressors_from(meta, a) -> RegressorSet:
    deform = tuple(_reg_from(a, f"d{l}") if present else None
                   for l, present in enumerate(meta["deform_present"]))
    texture = tuple(
        TextureGroup(joint, _reg_from(a, f"t{g}"),
                     tuple(TextureHead(int(t), int(s), int(e)) for t, s, e in a[f"t{g}.heads"]))
        for g, joint in enumerate(meta["texture_joints"])
    )
    return RegressorSet(deform, tuple(meta["deform_joints"]), texture)


def _sections(ar: Archive):
    yield "manifest", _pack(ar.manifest, [])
    yield "body_model", _body_section(ar.model)
    yield "frames", _pack({}, [("poses", np.asarray(ar.poses, "<f8")),
                               ("translations", np.asarray(ar.translations, "<f8")),
                               ("shape", np.asarray(ar.shape, "<f8"))])
    yield "deform", _deform_section(ar.deform)
    yield "deform_coeffs", _pack({}, [(str(l), np.asarray(c, "<f8"))
                                      for l, c in enumerate(ar.deform_coeffs)])
    yield "texture", _texture_section(ar.texture)
    if ar.texture_coeffs is not None:
        arrays = []
        for t in sorted(ar.texture_coeffs):
            frames, coeffs = ar.texture_coeffs[t]
            arrays += [(f"{t}.frames", np.asarray(frames, "<i4")),
                       (f"{t}.coeffs", np.asarray(coeffs, "<f4"))]
        yield "texture_coeffs", _pack({}, arrays)
    yield "regressors", _regressor_section(ar.regressors)


def section_sizes(ar: Archive) -> dict:
    """Payload bytes per section."""
    return {name: len(p) for name, p in _sections(ar)}


def _records(ar: Archive):
    """(section name, bytes) pieces whose concatenation is the file."""
    sections = list(_sections(ar))
    yield "header", _FILE_HEADER.pack(MAGIC, FORMAT_VERSION, len(sections))
    for name, payload in sections:
        key = name.encode()
        yield name, (struct.pack("<H", len(key)) + key
                     + _SECTION_HEAD.pack(len(payload), zlib.crc32(payload)) + payload)


def to_bytes(ar: Archive) -> bytes:
    return b"".join(rec for _, rec in _records(ar))


def read_sections(data: bytes) -> dict:
    """Checked raw payloads by section name."""
    if len(data) < _FILE_HEADER.size:
        raise ArchiveError("file shorter than the archive header")
    magic, version, n = _FILE_HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ArchiveError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ArchiveError(f"unsupported archive version {version} (expected {FORMAT_VERSION})")
    pos, out = _FILE_HEADER.size, {}
    for k in range(n):
        try:
            (ln,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + ln].decode()
            pos += 2 + ln
            size, crc = _SECTION_HEAD.unpack_from(data, pos)
        except (struct.error, UnicodeDecodeError):
            raise ArchiveError(f"truncated section table at entry {k}") from None
        pos += _SECTION_HEAD.size
        payload = data[pos:pos + size]
        if len(payload) != size:
            raise ArchiveError(f"payload truncated ({len(payload)} of {size} bytes)", name)
        if zlib.crc32(payload) != crc:
            raise ArchiveError("checksum mismatch", name)
        out[name] = payload
        pos += size
    if pos != len(data):
        raise ArchiveError("trailing bytes after the last section")
    for name in _ORDER:
        if name not in out and name != "texture_coeffs":
            raise ArchiveError("missing section", name)
    return out


def from_bytes(data: bytes) -> Archive:
    raw = read_sections(data)
    parsed = {name: _unpack(p, name) for name, p in raw.items()}

    def section(name):
        return parsed[name]

    def guarded(name, fn):
        try:
            return fn(*section(name))
        except ArchiveError:
            raise
        except Exception as exc:
            raise ArchiveError(f"inconsistent content ({exc})", name) from None

    model = guarded("body_model", _body_from)
    fr = section("frames")[1]
    deform = guarded("deform", lambda m, a: _deform_from(m, a, "deform"))
    dc = section("deform_coeffs")[1]
    coeffs = [dc[str(l)] for l in range(deform.n_parts)] if all(
        str(l) in dc for l in range(deform.n_parts)) else None
    if coeffs is None:
        raise ArchiveError("coefficient arrays do not match the part count", "deform_coeffs")
    texture = guarded("texture", lambda m, a: _texture_from(m, a, "texture"))
    tcoeffs = None
    if "texture_coeffs" in parsed:
        a = section("texture_coeffs")[1]
        tris = sorted({int(k.split(".")[0]) for k in a})
        tcoeffs = {t: (a[f"{t}.frames"].astype(np.int64), a[f"{t}.coeffs"].astype(float))
                   for t in tris}
    regs = guarded("regressors", _regressors_from)
    return Archive(model, fr["poses"], fr["translations"], fr["shape"], deform, coeffs,
                   texture, regs, section("manifest")[0], tcoeffs)


def save(ar: Archive, path):
    """Atomic write; an I/O failure names the section being written."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    name, total = "header", 0
    try:
        with open(tmp, "wb") as fh:
            for name, rec in _records(ar):
                fh.write(rec)
                total += len(rec)
        os.replace(tmp, path)
    except OSError as exc:
        if tmp.exists():
            tmp.unlink()
        raise ArchiveError(f"cannot write {path}: {exc}", name) from exc
    return total


def load(path) -> Archive:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ArchiveError(f"cannot read {path}: {exc}") from exc
    return from_bytes(data)


def quantize_texture(model: TextureModel) -> TextureModel:
    """The texture model exactly as stored (subspaces rounded to float32)."""
    subs = tuple(None if s is None else subspace.quantized(s, TEXTURE_ITEMSIZE)
                 for s in model.subspaces)
    return TextureModel(subs, model.T, model.visibility, model.fallback)
