"""Reconstruction error statistics, error heatmaps and report tables."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .mesh import Mesh
from .raster import Camera, render_vertex_colors
from .subspace import cumulative_contribution

HEATMAP_FRACTION = 0.02  # default upper end of the colour range, x bbox diagonal


def vertex_errors(A, B) -> np.ndarray:
    """Euclidean distance per vertex; leading axes broadcast (frames, ...)."""
    a = A.vertices if isinstance(A, Mesh) else np.asarray(A, dtype=float)
    b = B.vertices if isinstance(B, Mesh) else np.asarray(B, dtype=float)
    if a.shape != b.shape:
        raise ParameterError(f"vertex arrays differ in shape: {a.shape} vs {b.shape}")
    return np.sqrt(np.sum((a - b) ** 2, axis=-1))


def rmse_of(errors, axis=None):
    e = np.asarray(errors, dtype=float)
    return np.sqrt(np.mean(e * e, axis=axis))


def part_rmse(errors, part_of_vertex, n_parts=None) -> np.ndarray:
    """RMSE over each part's vertices; ``errors`` is (V,) or (F, V)."""
    e = np.asarray(errors, dtype=float)
    part_of_vertex = np.asarray(part_of_vertex)
    n = int(part_of_vertex.max()) + 1 if n_parts is None else n_parts
    sq = e.reshape(-1, e.shape[-1]) ** 2
    out = np.array([np.sqrt(sq[:, part_of_vertex == l].mean()) if np.any(part_of_vertex == l)
                    else 0.0 for l in range(n)])
    return out


def heat_colors(values, vmin=0.0, vmax=1.0) -> np.ndarray:
    """Blue (vmin) through cyan, green and yellow to red (vmax); RGB in [0, 1]."""
    if vmax <= vmin:
        raise ParameterError("heatmap range must have vmax > vmin")
    t = np.clip((np.asarray(values, dtype=float) - vmin) / (vmax - vmin), 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4.0 * t - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * t - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * t - 1.0), 0.0, 1.0)
    # the jet ramp starts at dark blue; pin the low end to pure blue
    b = np.where(t < 0.125, 1.0, b)
    return np.stack([r, g, b], axis=-1)


def default_range(mesh: Mesh):
    return 0.0, HEATMAP_FRACTION * mesh.bbox_diagonal()


def error_heatmap(mesh: Mesh, errors, camera: Camera, vrange=None, background=1.0):
    """Render per-vertex errors on ``mesh`` as a pseudo-colour image."""
    lo, hi = default_range(mesh) if vrange is None else vrange
    return render_vertex_colors(mesh, camera, heat_colors(errors, lo, hi), background)


def contribution_table(subspaces, Ls):
    """Rows (index, ratio at each L) from each subspace's stored spectrum."""
    rows = []
    for i, sub in enumerate(subspaces):
        if sub is None:
            continue
        rows.append([i] + [cumulative_contribution(sub.spectrum, L) for L in Ls])
    return rows


@dataclass
class CompressionReport:
    archive_bytes: int
    vertex_bytes: int  # float32 positions of every frame
    texture_bytes: int  # float32 texels of every visible (frame, triangle)
    deform_bytes: int  # deformation subspaces, coefficients and poses

    FORMULA = ("ratio = archive_bytes / (vertex_bytes + texture_bytes); "
               "vertex_bytes = F*V*3*4; texture_bytes = visible(frame, triangle) pairs * 3N * 4; "
               "deform_ratio = deform_bytes / vertex_bytes")

    @property
    def baseline_bytes(self):
        return self.vertex_bytes + self.texture_bytes

    @property
    def ratio(self):
        return self.archive_bytes / self.baseline_bytes

    @property
    def deform_ratio(self):
        return self.deform_bytes / self.vertex_bytes

    def to_dict(self):
        return {"archive_bytes": self.archive_bytes, "vertex_bytes": self.vertex_bytes,
                "texture_bytes": self.texture_bytes, "baseline_bytes": self.baseline_bytes,
                "deform_bytes": self.deform_bytes, "ratio": self.ratio,
                "deform_ratio": self.deform_ratio, "reference_deform_ratio": 0.0252,
                "formula": self.FORMULA}


@dataclass
class EvalReport:
    frames: np.ndarray
    vertex_rmse: np.ndarray  # (n_frames, V) per-vertex error of each frame
    part_rmse: np.ndarray  # (n_parts,)
    frame_rmse: np.ndarray  # (n_frames,)
    contribution: list = field(default_factory=list)
    contribution_L: tuple = ()
    compression: CompressionReport | None = None
    timing: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)  # name -> (frames, columns...) table

    @property
    def rmse(self):
        return float(rmse_of(self.frame_rmse))

    def to_dict(self):
        out = {
            "frames": [int(f) for f in self.frames],
            "rmse": self.rmse,
            "frame_rmse": self.frame_rmse.tolist(),
            "part_rmse": self.part_rmse.tolist(),
            "contribution_L": list(self.contribution_L),
            "contribution": self.contribution,
            "timing": self.timing,
        }
        if self.compression is not None:
            out["compression"] = self.compression.to_dict()
        return out

    def to_text(self) -> str:
        """Tab-separated tables, one block per quantity."""
        lines = ["# summary", f"rmse\t{self.rmse:.9g}"]
        lines += ["", "# frame_rmse", "frame\trmse"]
        lines += [f"{int(f)}\t{e:.9g}" for f, e in zip(self.frames, self.frame_rmse)]
        lines += ["", "# part_rmse", "part\trmse"]
        lines += [f"{l}\t{e:.9g}" for l, e in enumerate(self.part_rmse)]
        if self.contribution:
            lines += ["", "# contribution", "part\t" + "\t".join(f"L={L}" for L in self.contribution_L)]
            lines += ["\t".join([str(r[0])] + [f"{v:.6f}" for v in r[1:]]) for r in self.contribution]
        for name, table in self.traces.items():
            lines += ["", f"# trace {name}", "\t".join(table["columns"])]
            lines += ["\t".join(f"{v:.9g}" for v in row) for row in table["rows"]]
        if self.compression is not None:
            c = self.compression.to_dict()
            lines += ["", "# compression"] + [f"{k}\t{v}" for k, v in c.items()]
        if self.timing:
            lines += ["", "# timing"] + [f"{k}\t{v:.3f}" for k, v in self.timing.items()]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def error_report(reconstructed, truth, part_of_vertex, frames, n_parts=None) -> EvalReport:
    """``reconstructed`` and ``truth`` are (n_frames, V, 3)."""
    E = vertex_errors(reconstructed, truth)
    if E.ndim != 2:
        raise ParameterError("expected (frames, V, 3) vertex stacks")
    return EvalReport(np.asarray(frames), E, part_rmse(E, part_of_vertex, n_parts), rmse_of(E, axis=1))


def coefficient_trace(frames, stored, regressed, components=3):
    """Table of the first coefficients over frames, stored next to regressed."""
    stored = np.asarray(stored, dtype=float)
    regressed = np.asarray(regressed, dtype=float)
    k = min(components, stored.shape[1])
    cols = ["frame"] + [f"c{i}_{kind}" for i in range(k) for kind in ("stored", "regressed")]
    rows = []
    for i, f in enumerate(frames):
        row = [float(f)]
        for j in range(k):
            row += [stored[i, j], regressed[i, j]]
        rows.append(row)
    return {"columns": cols, "rows": rows}
