"""Multilevel Vandermonde decomposition of canonical PSD d-LT matrices.

Factor the matrix, read per-axis shift operators off stacked row blocks,
then align the axes by joint diagonalization with random mixing
coefficients. Frequencies follow the package convention r_n(f) =
exp(-2j*pi*f.n)/sqrt(N), so a shift operator has eigenvalues
exp(-2j*pi*f) and f = mod(-angle/2pi, 1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    InputError,
    NotPSD,
    PairingDegeneracy,
    RankConditionViolated,
    RankDeficientStack,
)
from .geometry import FrequencySet, steering_matrix
from .mlt import MLTMatrix, eigh_hermitian, materialize, upper_left_corner

__all__ = ["Decomposition", "factor_psd", "shift_unitary", "joint_pair", "decompose"]

DEFAULT_RANK_TOL = 1e-8
UNIMODULAR_WARN_TOL = 1e-6
DEFAULT_PAIRING_TOL = 0.3


@dataclass(frozen=True)
class Decomposition:
    """Result of the decomposition: S ~ R(freqs) diag(powers) R(freqs)^H."""

    freqs: FrequencySet
    powers: np.ndarray
    residual: float
    rank_used: int
    amplitude_residual: float | None = None


def _numerical_rank(lam: np.ndarray, rank_tol: float) -> int:
    lmax = float(lam.max(initial=0.0))
    if lmax <= 0.0:
        return 0
    return int(np.sum(lam > rank_tol * lmax))


def factor_psd(
    S: MLTMatrix,
    rank_tol: float = DEFAULT_RANK_TOL,
    rank: int | None = None,
    psd_tol: float | None = None,
):
    """Rank-revealing factor C with materialize(S) ~ C @ C^H.

    Eigen square root instead of a strict Cholesky: the PSD matrices of
    interest are singular, and any factor is equivalent up to a right
    unitary, which the shift-extraction step absorbs. `rank` overrides the
    tolerance-detected column count (top eigenpairs are kept); `psd_tol`
    loosens the PSD gate (defaults to rank_tol), which solver iterates
    need because they are PSD only to within the residual tolerance.
    """
    if psd_tol is None:
        psd_tol = rank_tol
    H = materialize(S)
    lam, E = eigh_hermitian(H)
    scale = float(np.linalg.norm(H))
    if lam.min(initial=0.0) < -psd_tol * max(scale, 1e-300):
        raise NotPSD(f"minimum eigenvalue {lam.min():.3e} below -psd_tol*||S||")
    r = _numerical_rank(lam, rank_tol) if rank is None else int(rank)
    r = min(r, lam.size)
    if r == 0:
        return np.zeros((H.shape[0], 0), dtype=complex)
    order = np.argsort(lam)[::-1][:r]
    return E[:, order] * np.sqrt(np.maximum(lam[order], 0.0))


def shift_unitary(
    C: np.ndarray,
    axis_block_count: int,
    block_rows: int,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> np.ndarray:
    """Least-squares shift operator between staggered row-block stacks of C.

    C is partitioned row-wise into `axis_block_count` blocks of
    `block_rows` rows; U solves stack(blocks 0..q-2) @ U = stack(1..q-1)
    via pseudo-inverse. In exact arithmetic U is unitary with eigenvalues
    exp(-2j*pi*f) for the axis frequencies f.
    """
    q, m = int(axis_block_count), int(block_rows)
    r = C.shape[1]
    if C.shape[0] != q * m:
        raise InputError(f"factor has {C.shape[0]} rows, expected {q}*{m}")
    if q < 2:
        raise InputError("need at least two blocks to form a shift")
    top = C[: (q - 1) * m]
    bottom = C[m:]
    sv = np.linalg.svd(top, compute_uv=False)
    if sv.size < r or (r > 0 and sv[r - 1] <= rank_tol * max(sv[0], 1e-300)):
        raise RankDeficientStack(
            f"stacked blocks have numerical rank < {r}; decomposition "
            "hypotheses violated"
        )
    U = np.linalg.pinv(top, rcond=rank_tol) @ bottom
    if r:
        ev = np.linalg.eigvals(U)
        drift = float(np.abs(np.abs(ev) - 1.0).max())
        if drift > UNIMODULAR_WARN_TOL:
            warnings.warn(
                f"shift eigenvalues deviate from the unit circle by {drift:.2e}",
                RuntimeWarning,
                stacklevel=2,
            )
    return U


def joint_pair(
    U_x: np.ndarray,
    U_y: np.ndarray,
    U_z: np.ndarray,
    rng_seed: int = 0,
    pairing_tol: float = DEFAULT_PAIRING_TOL,
) -> np.ndarray:
    """Pair per-axis shift operators into frequency triples.

    A random complex combination of the three operators is diagonalized;
    its eigenvectors diagonalize each operator individually (they commute
    by construction), and each axis frequency is read off the matching
    diagonal entry. Returns an (r, 3) array of triples.
    """
    ops = [np.atleast_2d(np.asarray(u, dtype=complex)) for u in (U_x, U_y, U_z)]
    r = ops[0].shape[0]
    for u in ops:
        if u.shape != (r, r):
            raise InputError("shift operators must share a common square size")
    if r == 0:
        return np.zeros((0, 3))
    rng = np.random.default_rng(rng_seed)
    mu = rng.normal(size=(3, 2)) @ np.array([1.0, 1.0j])
    mix = mu[0] * ops[0] + mu[1] * ops[1] + mu[2] * ops[2]
    _, evec = np.linalg.eig(mix)
    triples = np.empty((r, 3))
    for axis, u in enumerate(ops):
        D = np.linalg.solve(evec, u @ evec)
        off = D - np.diag(np.diag(D))
        mass = float(np.linalg.norm(D))
        if mass > 0 and float(np.linalg.norm(off)) > pairing_tol * mass:
            raise PairingDegeneracy(
                f"axis {axis}: off-diagonal mass "
                f"{np.linalg.norm(off) / mass:.2e} after joint diagonalization"
            )
        triples[:, axis] = np.mod(-np.angle(np.diag(D)) / (2.0 * np.pi), 1.0)
    return triples


def decompose(
    S: MLTMatrix,
    rank_tol: float = DEFAULT_RANK_TOL,
    rng_seed: int = 0,
    rank: int | None = None,
    psd_tol: float | None = None,
) -> Decomposition:
    """Recover frequencies and powers of a canonical PSD d-LT matrix.

    Requires dims ascending and, in tolerance-detection mode, the
    uniqueness hypotheses rank(S) = rank(upper-left corner) < max(dims).
    With an explicit `rank` (used on inexact solver output where the
    noise floor corrupts rank detection) only r < max(dims) is enforced.
    """
    if not S.canonical:
        raise InputError(f"dims {S.dims} are not canonical (ascending)")
    X, Y, Z = S.dims
    H = materialize(S)
    scale = float(np.linalg.norm(H))
    if scale == 0.0:
        return Decomposition(
            FrequencySet.from_triples(S.dims, np.zeros((0, 3))),
            np.zeros(0),
            0.0,
            0,
        )
    if rank is None:
        lam, _ = eigh_hermitian(H)
        r = _numerical_rank(lam, rank_tol)
        corner_lam, _ = eigh_hermitian(upper_left_corner(S, Z))
        r_corner = _numerical_rank(corner_lam, rank_tol)
        if r >= Z:
            raise RankConditionViolated(
                f"rank {r} is not below the largest dimension {Z}"
            )
        if r_corner != r:
            raise RankConditionViolated(
                f"corner rank {r_corner} differs from matrix rank {r}"
            )
    else:
        r = int(rank)
        if r >= Z:
            raise RankConditionViolated(
                f"requested rank {r} is not below the largest dimension {Z}"
            )
    if r == 0:
        return Decomposition(
            FrequencySet.from_triples(S.dims, np.zeros((0, 3))),
            np.zeros(0),
            scale,
            0,
        )
    C = factor_psd(S, rank_tol=rank_tol, rank=r, psd_tol=psd_tol)
    eye = np.eye(r, dtype=complex)
    U_x = shift_unitary(C, X, Y * Z, rank_tol) if X > 1 else eye
    U_y = shift_unitary(C[: Y * Z], Y, Z, rank_tol) if Y > 1 else eye
    U_z = shift_unitary(C[:Z], Z, 1, rank_tol) if Z > 1 else eye
    triples = joint_pair(U_x, U_y, U_z, rng_seed=rng_seed)

    R = steering_matrix(S.dims, FrequencySet.from_triples(S.dims, triples))
    Rg = np.linalg.pinv(R, rcond=rank_tol)
    P = Rg @ H @ Rg.conj().T
    diag = np.diag(P)
    leak = float(np.abs(diag.imag).max(initial=0.0))
    if leak > 1e-8 * max(float(np.abs(diag.real).max(initial=0.0)), 1e-300):
        warnings.warn(
            f"recovered powers carry imaginary leakage {leak:.2e}",
            RuntimeWarning,
            stacklevel=2,
        )
    powers = diag.real.copy()
    resid = float(np.linalg.norm(H - (R * powers) @ R.conj().T))

    order = np.argsort(powers)[::-1]
    freqs = FrequencySet.from_triples(S.dims, triples[order])
    return Decomposition(freqs, powers[order], resid, r)
