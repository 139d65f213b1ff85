"""Multilevel (nested block) Toeplitz Hermitian matrices.

An MLTMatrix is determined by its generator tensor v indexed by lag
triples (a, b, c); the materialized matrix has entry
M[m, m'] = v[coords(m') - coords(m)] under z-fastest flat ordering, so the
top-right corner of each Toeplitz level carries positive lags.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import EigenFailure, InputError, SizeMismatch
from .geometry import FrequencySet, _as_dims, lattice_coords

__all__ = [
    "MLTMatrix",
    "mlt_from_atoms",
    "materialize",
    "project_mlt",
    "project_psd",
    "upper_left_corner",
    "eigh_hermitian",
]


@lru_cache(maxsize=32)
def _lag_tables(dims):
    """Per-dims cache: lag-class index map, class sizes and class lag triples."""
    X, Y, Z = dims
    coords = lattice_coords(dims)
    diff = coords[None, :, :] - coords[:, None, :]  # column minus row
    cls = (
        (diff[..., 0] + X - 1) * (2 * Y - 1) + (diff[..., 1] + Y - 1)
    ) * (2 * Z - 1) + (diff[..., 2] + Z - 1)
    ncls = (2 * X - 1) * (2 * Y - 1) * (2 * Z - 1)
    counts = np.bincount(cls.ravel(), minlength=ncls)
    lags = np.array(
        np.unravel_index(np.arange(ncls), (2 * X - 1, 2 * Y - 1, 2 * Z - 1))
    ).T - np.array([X - 1, Y - 1, Z - 1])
    cls.setflags(write=False)
    counts.setflags(write=False)
    lags.setflags(write=False)
    return cls, counts, ncls, lags


@dataclass(frozen=True)
class MLTMatrix:
    """d-level Toeplitz Hermitian matrix stored by its generator tensor.

    generator has shape (2X-1, 2Y-1, 2Z-1); entry [a + X - 1, b + Y - 1,
    c + Z - 1] holds v_{abc}, with conjugate symmetry
    v_{abc} = conj(v_{-a,-b,-c}).
    """

    dims: tuple[int, int, int]
    generator: np.ndarray

    def __post_init__(self):
        dims = _as_dims(self.dims)
        object.__setattr__(self, "dims", dims)
        g = np.asarray(self.generator, dtype=complex)
        want = tuple(2 * d - 1 for d in dims)
        if g.shape != want:
            raise SizeMismatch(f"generator shape {g.shape}, expected {want}")
        flipped = np.flip(g).conj()
        scale = max(np.abs(g).max(), 1.0)
        if np.abs(g - flipped).max() > 1e-9 * scale:
            raise InputError("generator violates conjugate symmetry")
        # exact symmetrization keeps the materialization Hermitian to the bit
        object.__setattr__(self, "generator", 0.5 * (g + flipped))

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    @property
    def canonical(self) -> bool:
        "Dims ascending (the ordering under which decomposition is unique)."
        X, Y, Z = self.dims
        return X <= Y <= Z

    def lag(self, a: int, b: int, c: int) -> complex:
        X, Y, Z = self.dims
        return complex(self.generator[a + X - 1, b + Y - 1, c + Z - 1])


def mlt_from_atoms(dims, freqs: FrequencySet, powers) -> MLTMatrix:
    """Generator of sum_k p_k r(f_k) r(f_k)^H (closed form over lag triples)."""
    dims = _as_dims(dims)
    p = np.asarray(powers, dtype=float).reshape(-1)
    if p.size != freqs.k:
        raise SizeMismatch("one power per frequency expected")
    if (p <= 0).any():
        raise InputError("powers must be positive")
    triples = freqs.triples(dims)
    _, _, _, lags = _lag_tables(dims)
    phase = np.exp(2j * np.pi * (lags @ triples.T))  # (ncls, K)
    gen = (phase @ p) / float(np.prod(dims))
    return MLTMatrix(dims, gen.reshape(tuple(2 * d - 1 for d in dims)))


def materialize(M: MLTMatrix) -> np.ndarray:
    "Dense Hermitian matrix with the nested block-Toeplitz layout."
    cls, _, _, _ = _lag_tables(M.dims)
    return M.generator.reshape(-1)[cls]


def project_mlt(H: np.ndarray, dims) -> MLTMatrix:
    """Frobenius-orthogonal projection onto the Hermitian d-LT subspace.

    Each generator entry is the mean of the corresponding multilevel
    diagonal of the Hermitian-symmetrized input.
    """
    dims = _as_dims(dims)
    H = np.asarray(H, dtype=complex)
    n = int(np.prod(dims))
    if H.shape != (n, n):
        raise SizeMismatch(f"matrix is {H.shape}, dims {dims} need ({n}, {n})")
    Hh = 0.5 * (H + H.conj().T)
    cls, counts, ncls, _ = _lag_tables(dims)
    flat = cls.ravel()
    sums = np.bincount(flat, weights=Hh.real.ravel(), minlength=ncls) + 1j * np.bincount(
        flat, weights=Hh.imag.ravel(), minlength=ncls
    )
    gen = sums / counts
    return MLTMatrix(dims, gen.reshape(tuple(2 * d - 1 for d in dims)))


def eigh_hermitian(H: np.ndarray):
    "Eigendecomposition of a Hermitian matrix; wraps backend failures."
    try:
        return np.linalg.eigh(0.5 * (H + H.conj().T))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - backend dependent
        raise EigenFailure(str(exc)) from exc


def project_psd(H: np.ndarray, rank_cap: int | None = None) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm; optionally capped at rank_cap.

    Eigenvalues are clipped at zero; with a cap only the rank_cap largest
    survive, which yields the best PSD approximation of that rank.
    """
    lam, E = eigh_hermitian(np.asarray(H, dtype=complex))
    lam = np.maximum(lam, 0.0)
    if rank_cap is not None and rank_cap < lam.size:
        lam[np.argsort(lam)[: lam.size - rank_cap]] = 0.0
    return (E * lam) @ E.conj().T


def upper_left_corner(M: MLTMatrix, w: int) -> np.ndarray:
    "Leading w-by-w principal submatrix of the materialization."
    if not (1 <= w <= M.n):
        raise SizeMismatch(f"corner size {w} outside 1..{M.n}")
    return materialize(M)[:w, :w]
