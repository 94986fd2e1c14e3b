"""Wavefront OBJ reading/writing with JSON sidecars.

A mesh ``body.obj`` is accompanied by ``body.parts.json``::

    {"schema": "eigenavatar.mesh", "version": 1,
     "n_vertices": V, "part_of_vertex": [...]}

A body model ``model.obj`` (the rest template) is accompanied by
``model.model.json``::

    {"schema": "eigenavatar.body_model", "version": 1,
     "part_of_vertex": [...],
     "skeleton": {"names": [...], "parents": [...], "offsets": [[x, y, z], ...]},
     "weights": {"rows": [...], "cols": [...], "values": [...]},   # sparse (V, J)
     "blendshapes": [[[dx, dy, dz], ...], ...]}                    # (K, V, 3)

Floats are written with 17 significant digits, so a round trip is exact.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import MeshParseError
from .mesh import BodyModel, Mesh, Skeleton

MESH_SCHEMA = "eigenavatar.mesh"
MODEL_SCHEMA = "eigenavatar.body_model"
SCHEMA_VERSION = 1


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def sidecar_path(path, kind="parts"):
    path = Path(path)
    return path.with_name(path.stem + f".{kind}.json")


def write_obj(path, vertices, triangles, uvs=None, uv_triangles=None, header=None, mtllib=None):
    lines = []
    if header:
        lines += [f"# {h}" for h in header]
    if mtllib:
        lines.append(f"mtllib {mtllib}")
    lines += ["v %.17g %.17g %.17g" % tuple(v) for v in vertices]
    if uvs is not None:
        lines += ["vt %.17g %.17g" % tuple(t) for t in uvs]
        if mtllib:
            lines.append("usemtl atlas")
        for f, ft in zip(triangles, uv_triangles):
            lines.append("f " + " ".join(f"{a + 1}/{b + 1}" for a, b in zip(f, ft)))
    else:
        lines += ["f %d %d %d" % tuple(f + 1) for f in triangles]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_obj(path):
    """Return (vertices, triangles) from an OBJ holding triangular faces.

    Faces may use ``v``, ``v/vt``, ``v//vn`` or ``v/vt/vn`` references and
    negative (relative) indices. Other statements are ignored.
    """
    verts, faces, face_lines = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if tok[0] == "v":
                try:
                    verts.append([float(x) for x in tok[1:4]])
                except ValueError as exc:
                    raise MeshParseError(f"bad vertex: {exc}", path, lineno) from None
                if len(tok) < 4:
                    raise MeshParseError("vertex needs 3 coordinates", path, lineno)
            elif tok[0] == "f":
                if len(tok) != 4:
                    raise MeshParseError("only triangular faces are supported", path, lineno)
                idx = []
                for ref in tok[1:]:
                    try:
                        i = int(ref.split("/")[0])
                    except ValueError:
                        raise MeshParseError(f"bad face index {ref!r}", path, lineno) from None
                    if i == 0:
                        raise MeshParseError("face index 0 (OBJ indices are 1-based)", path, lineno)
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                faces.append(idx)
                face_lines.append(lineno)
    verts = np.array(verts, dtype=float).reshape(-1, 3)
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    for f, lineno in zip(faces, face_lines):
        if f.min() < 0 or f.max() >= len(verts):
            raise MeshParseError("face index out of range", path, lineno)
    return verts, faces


def _read_json(path, schema):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema") != schema:
        raise MeshParseError(f"expected schema {schema!r}, got {doc.get('schema')!r}", path)
    if doc.get("version") != SCHEMA_VERSION:
        raise MeshParseError(f"unsupported schema version {doc.get('version')!r}", path)
    return doc


def save_mesh(mesh: Mesh, path):
    write_obj(path, mesh.vertices, mesh.triangles)
    doc = {
        "schema": MESH_SCHEMA,
        "version": SCHEMA_VERSION,
        "n_vertices": mesh.n_vertices,
        "part_of_vertex": mesh.part_of_vertex.tolist(),
    }
    atomic_write_text(sidecar_path(path), json.dumps(doc))


def load_mesh(path) -> Mesh:
    verts, faces = read_obj(path)
    side = sidecar_path(path)
    parts = None
    if side.exists():
        doc = _read_json(side, MESH_SCHEMA)
        parts = np.array(doc["part_of_vertex"], dtype=np.int64)
        if len(parts) != len(verts):
            raise MeshParseError("sidecar part labels do not match vertex count", side)
    return Mesh(verts, faces, parts)


def model_to_dict(model: BodyModel) -> dict:
    rows, cols = np.nonzero(model.weights)
    return {
        "schema": MODEL_SCHEMA,
        "version": SCHEMA_VERSION,
        "part_of_vertex": model.template.part_of_vertex.tolist(),
        "skeleton": {
            "names": list(model.skeleton.names),
            "parents": model.skeleton.parents.tolist(),
            "offsets": model.skeleton.offsets.tolist(),
        },
        "weights": {
            "rows": rows.tolist(),
            "cols": cols.tolist(),
            "values": model.weights[rows, cols].tolist(),
        },
        "blendshapes": model.blendshapes.tolist(),
    }


def model_from_dict(doc: dict, vertices, triangles) -> BodyModel:
    sk = doc["skeleton"]
    skeleton = Skeleton(np.array(sk["parents"]), np.array(sk["offsets"], dtype=float),
                        tuple(sk.get("names", ())))
    V = len(vertices)
    W = np.zeros((V, skeleton.n_joints))
    w = doc["weights"]
    W[np.array(w["rows"], dtype=int), np.array(w["cols"], dtype=int)] = w["values"]
    blend = np.array(doc["blendshapes"], dtype=float).reshape(-1, V, 3)
    parts = np.array(doc["part_of_vertex"], dtype=np.int64)
    return BodyModel(Mesh(vertices, triangles, parts), skeleton, W, blend)


def save_model(model: BodyModel, path):
    write_obj(path, model.template.vertices, model.template.triangles)
    atomic_write_text(sidecar_path(path, "model"), json.dumps(model_to_dict(model)))


def load_model(path) -> BodyModel:
    verts, faces = read_obj(path)
    doc = _read_json(sidecar_path(path, "model"), MODEL_SCHEMA)
    return model_from_dict(doc, verts, faces)


def shipped_model_path() -> Path:
    return Path(__file__).with_name("data") / "standin.obj"


def load_shipped_model() -> BodyModel:
    return load_model(shipped_model_path())


def load_shipped_manifest() -> dict:
    with open(Path(__file__).with_name("data") / "standin.manifest.json") as fh:
        return json.load(fh)
