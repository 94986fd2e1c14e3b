"""PCA subspaces shared by eigen-texture and eigen-deformation.

Eigenvalues are those of the centred scatter matrix P P^T (no 1/F factor).
The top eigenvectors are taken from a thin SVD of the centred D x F sample
matrix, which never forms the D x D scatter matrix.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True, eq=False)
class EigenSubspace:
    mean: np.ndarray  # (D,)
    basis: np.ndarray  # (D, L), orthonormal columns
    eigenvalues: np.ndarray  # (L,), descending
    # full spectrum of the fit, kept for contribution ratios
    spectrum: np.ndarray = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        basis = np.asarray(self.basis, dtype=float).reshape(len(mean), -1)
        lam = np.asarray(self.eigenvalues, dtype=float).reshape(-1)
        if basis.shape[1] != len(lam):
            raise ParameterError("basis columns and eigenvalue count differ")
        spec = lam if self.spectrum is None else np.asarray(self.spectrum, dtype=float)
        for name, a in (("mean", mean), ("basis", basis), ("eigenvalues", lam), ("spectrum", spec)):
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def dim(self):
        return len(self.mean)

    @property
    def n_components(self):
        return self.basis.shape[1]

    def truncated(self, L) -> "EigenSubspace":
        if not 0 <= L <= self.n_components:
            raise ParameterError(f"L={L} outside [0, {self.n_components}]")
        return EigenSubspace(self.mean, self.basis[:, :L], self.eigenvalues[:L], self.spectrum)

    def embed(self, p):
        return embed(self, p)

    def reconstruct(self, c):
        return reconstruct(self, c)


def _fix_signs(U):
    """Make the largest-magnitude entry of each column positive (first one on ties)."""
    if U.size == 0:
        return U
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def fit(samples, L) -> EigenSubspace:
    """Fit an L-dimensional subspace to the columns of ``samples`` (D x F)."""
    P = np.asarray(samples, dtype=float)
    if P.ndim != 2 or P.shape[1] < 1:
        raise ParameterError("samples must be a D x F matrix with F >= 1")
    if not np.all(np.isfinite(P)):
        raise ParameterError("samples must be finite")
    D, F = P.shape
    if not 1 <= L <= min(D, F):
        raise ParameterError(f"L={L} must lie in [1, min(D, F)={min(D, F)}]")
    mean = P.mean(axis=1)
    centred = P - mean[:, None]
    U, s, _ = np.linalg.svd(centred, full_matrices=False)
    lam = s * s
    # singular values of a rank-deficient matrix are only zero up to rounding
    tiny = lam <= (lam[0] if lam.size else 0.0) * 1e-28
    lam = np.where(tiny, 0.0, lam)
    U = _fix_signs(U[:, :L])
    sub = EigenSubspace(mean, U, lam[:L], lam)
    check_subspace(sub)
    return sub


def check_subspace(sub: EigenSubspace, tol=1e-9):
    E = sub.basis
    if E.shape[1] and not np.allclose(E.T @ E, np.eye(E.shape[1]), atol=tol, rtol=0):
        raise AssertionError("subspace basis is not orthonormal")
    lam = sub.eigenvalues
    if np.any(lam < 0) or np.any(np.diff(lam) > 0):
        raise AssertionError("eigenvalues must be non-negative and descending")


def embed(sub: EigenSubspace, p):
    """Coefficients c = E^T (p - mean). ``p`` may be (D,) or (D, n)."""
    p = np.asarray(p, dtype=float)
    if p.shape[0] != sub.dim:
        raise ParameterError(f"sample length {p.shape[0]} != subspace dimension {sub.dim}")
    centred = p - (sub.mean if p.ndim == 1 else sub.mean[:, None])
    return sub.basis.T @ centred


def reconstruct(sub: EigenSubspace, c):
    """p = E c + mean. ``c`` may be (L,) or (L, n)."""
    c = np.asarray(c, dtype=float)
    if c.shape[0] != sub.n_components:
        raise ParameterError(f"coefficient length {c.shape[0]} != L={sub.n_components}")
    out = sub.basis @ c
    return out + (sub.mean if c.ndim == 1 else sub.mean[:, None])


def cumulative_contribution(eigenvalues, L) -> float:
    lam = np.asarray(eigenvalues, dtype=float)
    total = lam.sum()
    if total <= 0:
        return 1.0
    return float(min(1.0, lam[:L].sum() / total))


def contribution_curve(eigenvalues):
    lam = np.asarray(eigenvalues, dtype=float)
    total = lam.sum()
    if total <= 0:
        return np.ones(len(lam))
    return np.minimum(1.0, np.cumsum(lam) / total)


# -- binary section --------------------------------------------------------
# little-endian: u16 version, u8 dtype code (4 or 8 bytes per float),
# u32 D, u32 L, u32 S (spectrum length), mean[D], eigenvalues[L],
# basis[D*L] row-major, spectrum[S]
_HEADER = struct.Struct("<HBIII")
SECTION_VERSION = 1


def to_bytes(sub: EigenSubspace, itemsize=8) -> bytes:
    dt = {4: "<f4", 8: "<f8"}[itemsize]
    head = _HEADER.pack(SECTION_VERSION, itemsize, sub.dim, sub.n_components, len(sub.spectrum))
    body = b"".join(
        np.ascontiguousarray(a, dtype=dt).tobytes()
        for a in (sub.mean, sub.eigenvalues, sub.basis, sub.spectrum)
    )
    return head + body


def from_bytes(buf, offset=0):
    """Parse one subspace; returns (subspace, next offset)."""
    version, itemsize, D, L, S = _HEADER.unpack_from(buf, offset)
    if version != SECTION_VERSION:
        raise ParameterError(f"unsupported subspace section version {version}")
    dt = {4: "<f4", 8: "<f8"}[itemsize]
    pos = offset + _HEADER.size
    arrays = []
    for n in (D, L, D * L, S):
        a = np.frombuffer(buf, dtype=dt, count=n, offset=pos).astype(float)
        arrays.append(a)
        pos += n * itemsize
    mean, lam, basis, spec = arrays
    return EigenSubspace(mean, basis.reshape(D, L), lam, spec), pos


def quantized(sub: EigenSubspace, itemsize) -> EigenSubspace:
    """The subspace exactly as it would be read back from ``itemsize`` storage."""
    if itemsize == 8:
        return sub
    return from_bytes(to_bytes(sub, itemsize))[0]
