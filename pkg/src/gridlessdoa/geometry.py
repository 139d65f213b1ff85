"""Antenna-array geometry: deployments, steering vectors, sensing matrices.

Conventions (fixed across the package):
  * lattice coordinates are 0-based integers, axes ordered (x, y, z);
  * flat indices use Kronecker order z fastest, then y, then x;
  * the uniform steering vector entry at lattice point n is
    exp(-2j*pi * f.n) / sqrt(N), i.e. unit Euclidean norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionTooSmall,
    InputError,
    NonLatticePosition,
    SizeMismatch,
)

__all__ = [
    "ArrayDeployment",
    "SensingMatrix",
    "FrequencySet",
    "EmbeddedUniformReport",
    "steering_vector_uniform",
    "steering_matrix",
    "steering_vector_angles",
    "freq_from_angles",
    "embed_in_virtual",
    "canonicalize",
    "find_embedded_uniform",
    "resolvable_region",
    "check_injectivity",
    "min_antennas_probabilistic",
]


def _as_dims(dims) -> tuple[int, int, int]:
    t = tuple(int(d) for d in np.atleast_1d(dims))
    if len(t) == 1:
        t = (1, 1) + t
    if len(t) == 2:
        t = (1,) + t
    if len(t) != 3 or any(d < 1 for d in t):
        raise InputError(f"dims must be up to three positive integers, got {dims!r}")
    return t


def active_axes(dims) -> list[int]:
    "Axes with more than one lattice point; their count is the dimension d."
    return [a for a in range(3) if _as_dims(dims)[a] > 1]


def lattice_coords(dims) -> np.ndarray:
    "All lattice points of a full grid, (N, 3) ints, z-fastest flat order."
    X, Y, Z = _as_dims(dims)
    return np.array(np.unravel_index(np.arange(X * Y * Z), (X, Y, Z))).T


def full_triples(dims, f) -> np.ndarray:
    """Map frequency components onto the 3 axes.

    `f` may be a scalar (d = 1), a length-d vector (components assigned to
    the axes with more than one element, in axis order) or a full triple.
    """
    dims = _as_dims(dims)
    f = np.atleast_1d(np.asarray(f, dtype=float))
    axes = active_axes(dims)
    out = np.zeros(3)
    if f.size == 3:
        out[:] = f
    elif f.size == len(axes):
        out[axes] = f
    elif f.size == 1 and len(axes) <= 1:
        if axes:
            out[axes[0]] = f[0]
    else:
        raise DimensionMismatch(
            f"frequency has {f.size} components, expected {len(axes)} or 3"
        )
    return out


@dataclass(frozen=True)
class ArrayDeployment:
    """Physical or virtual antenna deployment on an integer lattice.

    `dims` counts lattice points per axis; `positions` holds integer
    coordinates (one row per antenna); `spacing` is the wavelength-relative
    spacing per axis. For uniform arrays the positions enumerate the full
    lattice in z-fastest order.
    """

    dims: tuple[int, int, int]
    positions: np.ndarray
    spacing: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "dims", _as_dims(self.dims))
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InputError("positions must be an (N, 3) array")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if len(self.spacing) != 3:
            raise InputError("spacing must have three components")
        if pos.shape[0] == 0:
            raise InputError("deployment needs at least one antenna")
        if len({tuple(p) for p in pos.round(9).tolist()}) != pos.shape[0]:
            raise InputError("antenna positions must be distinct")
        if (pos < 0).any():
            raise InputError("lattice coordinates must be nonnegative")
        for a in range(3):
            if pos[:, a].max() > self.dims[a] - 1:
                raise InputError(
                    f"axis {a}: coordinate {pos[:, a].max():g} exceeds dims-1"
                )

    @classmethod
    def uniform(cls, dims, spacing=(0.5, 0.5, 0.5)) -> "ArrayDeployment":
        "Full grid in Kronecker (z-fastest) order."
        dims = _as_dims(dims)
        return cls(dims, lattice_coords(dims).astype(float), spacing)

    @classmethod
    def from_positions(cls, positions, spacing=(0.5, 0.5, 0.5), dims=None):
        pos = np.asarray(positions, dtype=float).reshape(-1, 3)
        if dims is None:
            dims = tuple(int(pos[:, a].max()) + 1 for a in range(3))
        return cls(_as_dims(dims), pos, spacing)

    @property
    def n_antennas(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        "Parameter-space dimension, inferred from dims (> 1 test)."
        return len(active_axes(self.dims))

    def is_uniform(self) -> bool:
        if self.n_antennas != int(np.prod(self.dims)):
            return False
        return np.array_equal(self.positions, lattice_coords(self.dims))

    def physical_positions(self) -> np.ndarray:
        "Positions in wavelength units (coordinates times spacing)."
        return self.positions * np.asarray(self.spacing)


@dataclass(frozen=True)
class SensingMatrix:
    """Binary row selection from a virtual uniform array, stored as an index map.

    Row i of the dense matrix would be the standard basis vector at
    `row_to_virtual[i]`; products with the matrix and its transpose are
    implemented as gather/scatter.
    """

    virtual_dims: tuple[int, int, int]
    row_to_virtual: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "virtual_dims", _as_dims(self.virtual_dims))
        idx = np.asarray(self.row_to_virtual, dtype=int)
        object.__setattr__(self, "row_to_virtual", idx)
        nbar = int(np.prod(self.virtual_dims))
        if idx.ndim != 1 or idx.size == 0:
            raise InputError("row_to_virtual must be a nonempty index vector")
        if idx.min() < 0 or idx.max() >= nbar:
            raise InputError("virtual index out of range")
        if np.unique(idx).size != idx.size:
            raise InputError("sensing rows must select distinct virtual entries")

    @property
    def n(self) -> int:
        return self.row_to_virtual.size

    @property
    def n_virtual(self) -> int:
        return int(np.prod(self.virtual_dims))

    def apply(self, x: np.ndarray) -> np.ndarray:
        "A @ x (gather)."
        return np.asarray(x)[..., self.row_to_virtual]

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        "A.T @ y (scatter into the virtual array)."
        out = np.zeros(self.n_virtual, dtype=np.asarray(y).dtype)
        out[self.row_to_virtual] = y
        return out

    def identity_like(self) -> bool:
        return self.n == self.n_virtual and np.array_equal(
            self.row_to_virtual, np.arange(self.n_virtual)
        )


@dataclass(frozen=True)
class FrequencySet:
    """K points on the d-torus, optionally with complex amplitudes."""

    d: int
    freqs: np.ndarray
    amplitudes: np.ndarray | None = None

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float)
        if f.ndim == 1:
            f = f.reshape(-1, 1) if self.d == 1 else f.reshape(1, -1)
        if f.ndim != 2 or f.shape[1] != self.d:
            raise DimensionMismatch(f"freqs must be (K, {self.d})")
        if (f < 0).any() or (f >= 1).any():
            raise InputError("frequency components must lie in [0, 1)")
        object.__setattr__(self, "freqs", f)
        if self.amplitudes is not None:
            amp = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
            if amp.size != f.shape[0]:
                raise SizeMismatch("one amplitude per frequency expected")
            object.__setattr__(self, "amplitudes", amp)
        if f.shape[0] > 1:
            uniq = {tuple(row) for row in f.tolist()}
            if len(uniq) != f.shape[0]:
                raise InputError("frequency vectors must be pairwise distinct")

    @property
    def k(self) -> int:
        return self.freqs.shape[0]

    def triples(self, dims) -> np.ndarray:
        "(K, 3) frequency triples for the given axis layout."
        return np.stack([full_triples(dims, f) for f in self.freqs])

    @classmethod
    def from_triples(cls, dims, triples, amplitudes=None) -> "FrequencySet":
        axes = active_axes(dims)
        t = np.mod(np.asarray(triples, dtype=float).reshape(-1, 3), 1.0)
        return cls(len(axes), t[:, axes], amplitudes)


def steering_vector_uniform(dims, f) -> np.ndarray:
    """Uniform-array steering vector, z-fastest Kronecker order, unit norm.

    Entry for lattice point n is exp(-2j*pi*f.n)/sqrt(N).
    """
    dims = _as_dims(dims)
    t = full_triples(dims, f)
    n = lattice_coords(dims)
    N = n.shape[0]
    return np.exp(-2j * np.pi * (n @ t)) / math.sqrt(N)


def steering_matrix(dims, freqs: FrequencySet | np.ndarray) -> np.ndarray:
    "Columns are uniform steering vectors, one per frequency."
    dims = _as_dims(dims)
    if isinstance(freqs, FrequencySet):
        triples = freqs.triples(dims)
    else:
        triples = np.stack([full_triples(dims, f) for f in np.atleast_2d(freqs)])
    n = lattice_coords(dims)
    return np.exp(-2j * np.pi * (n @ triples.T)) / math.sqrt(n.shape[0])


def freq_from_angles(theta: float, phi: float, spacing) -> np.ndarray:
    "Normalized frequency triple mod(delta * direction, 1) for (azimuth, elevation)."
    dx, dy, dz = (float(s) for s in spacing)
    return np.mod(
        [
            dx * math.sin(theta) * math.cos(phi),
            dy * math.sin(theta) * math.sin(phi),
            dz * math.cos(theta),
        ],
        1.0,
    )


def steering_vector_angles(array: ArrayDeployment, theta: float, phi: float) -> np.ndarray:
    """Steering vector of a deployment for a physical direction.

    Entry n carries the phase Phi_n = -2*pi*(p_x sin(theta)cos(phi)
    + p_y sin(theta)sin(phi) + p_z cos(theta)); the returned entry is
    exp(1j*Phi_n)/sqrt(N), which for lattice deployments coincides with
    steering_vector_uniform at freq_from_angles(theta, phi, spacing).
    """
    p = array.physical_positions()
    phase = -2.0 * np.pi * (
        p[:, 0] * math.sin(theta) * math.cos(phi)
        + p[:, 1] * math.sin(theta) * math.sin(phi)
        + p[:, 2] * math.cos(theta)
    )
    return np.exp(1j * phase) / math.sqrt(array.n_antennas)


def flat_index(dims, coords) -> np.ndarray:
    "Kronecker-order flat index (z fastest) of integer lattice coordinates."
    X, Y, Z = _as_dims(dims)
    c = np.asarray(coords, dtype=int).reshape(-1, 3)
    return (c[:, 0] * Y + c[:, 1]) * Z + c[:, 2]


def embed_in_virtual(array: ArrayDeployment, virtual_dims) -> SensingMatrix:
    """Sensing matrix selecting the physical antennas out of a virtual grid.

    Raises DimensionTooSmall if the grid does not cover the array and
    NonLatticePosition if a coordinate is not an integer lattice point.
    """
    vd = _as_dims(virtual_dims)
    pos = array.positions
    rounded = np.rint(pos)
    if np.abs(pos - rounded).max() > 1e-9:
        raise NonLatticePosition("positions are not integer lattice points")
    coords = rounded.astype(int)
    for a in range(3):
        if coords[:, a].max() > vd[a] - 1:
            raise DimensionTooSmall(
                f"axis {a}: array extent {coords[:, a].max() + 1} exceeds "
                f"virtual dimension {vd[a]}"
            )
    return SensingMatrix(vd, flat_index(vd, coords))


def canonicalize(virtual_dims):
    """Sort dims ascending; return (sorted_dims, perm) with new axis i = old axis perm[i].

    The permutation is stable, so already-canonical inputs map to the
    identity, and applying it twice returns to a sorted (fixed-point) layout.
    """
    vd = _as_dims(virtual_dims)
    perm = tuple(int(i) for i in np.argsort(np.asarray(vd), kind="stable"))
    return tuple(vd[i] for i in perm), perm


def permute_triples(triples, perm) -> np.ndarray:
    "Reorder frequency/position triples into the permuted axis layout."
    t = np.asarray(triples)
    return t[..., list(perm)]


def invert_permutation(perm):
    inv = [0, 0, 0]
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


@dataclass(frozen=True)
class EmbeddedUniformReport:
    """Largest axis-aligned strided uniform sub-lattice of a sensed set."""

    sub_dims: tuple[int, int, int]
    strides: tuple[int, int, int]
    offsets: tuple[int, int, int]
    indices: np.ndarray = field(repr=False)

    @property
    def s_c(self) -> int:
        return int(sum(self.sub_dims))

    @property
    def n_c(self) -> int:
        return int(np.prod(self.sub_dims))


def find_embedded_uniform(A: SensingMatrix) -> EmbeddedUniformReport:
    """Exhaustive search for the largest embedded uniform sub-lattice.

    Maximizes the point count; ties broken by larger coordinate sum of the
    box dimensions, then by lexicographically smaller (offsets, strides).
    """
    vd = A.virtual_dims
    mask = np.zeros(vd, dtype=bool)
    mask.reshape(-1)[A.row_to_virtual] = True

    best = None  # (n_c, s_c, neg-lex key, payload)
    for ox in range(vd[0]):
        for lx in range(1, vd[0] + 1):
            cx_max = 1 + (vd[0] - 1 - ox) // lx
            for oy in range(vd[1]):
                for ly in range(1, vd[1] + 1):
                    cy_max = 1 + (vd[1] - 1 - oy) // ly
                    for oz in range(vd[2]):
                        for lz in range(1, vd[2] + 1):
                            cz_max = 1 + (vd[2] - 1 - oz) // lz
                            if best and cx_max * cy_max * cz_max < best[0]:
                                continue
                            sub = mask[ox::lx, oy::ly, oz::lz][:cx_max, :cy_max, :cz_max]
                            # largest all-true box anchored at the origin
                            for cx in range(cx_max, 0, -1):
                                for cy in range(cy_max, 0, -1):
                                    line = sub[:cx, :cy, :]
                                    ok = np.all(line, axis=(0, 1))
                                    cz = 0
                                    for v in ok:
                                        if not v:
                                            break
                                        cz += 1
                                    if cz == 0:
                                        continue
                                    n_c = cx * cy * cz
                                    s_c = cx + cy + cz
                                    key = (
                                        n_c,
                                        s_c,
                                        tuple(-v for v in (ox, oy, oz, lx, ly, lz)),
                                    )
                                    if best is None or key > best[:3]:
                                        best = (
                                            n_c,
                                            s_c,
                                            key[2],
                                            ((cx, cy, cz), (lx, ly, lz), (ox, oy, oz)),
                                        )
    counts, strides, offsets = best[3]
    coords = lattice_coords(counts)
    coords = coords * np.array(strides) + np.array(offsets)
    idx = flat_index(vd, coords)
    return EmbeddedUniformReport(counts, strides, offsets, np.sort(idx))


def resolvable_region(report: EmbeddedUniformReport, d: int) -> dict:
    """Resolvable scatter counts: proven floor((S_c-(d-1))/2), conjectured ceil(N_c/2 - 1)."""
    if d not in (1, 2, 3):
        raise InputError("d must be 1, 2 or 3")
    k_cor = (report.s_c - (d - 1)) // 2
    k_conj = math.ceil(report.n_c / 2 - 1)
    return {"k_corollary": int(k_cor), "k_conjecture": int(k_conj)}


def check_injectivity(A: SensingMatrix, freqs: FrequencySet) -> dict:
    """Numerical injectivity of A @ R(f_1..f_m) as a map C^m -> C^N.

    Rank test via singular values with relative threshold 1e-8.
    """
    R = steering_matrix(A.virtual_dims, freqs)
    M = R[A.row_to_virtual, :]
    m = M.shape[1]
    sv = np.linalg.svd(M, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    smin = sv[m - 1] if sv.size >= m else 0.0
    injective = M.shape[0] >= m and smin > 1e-8 * max(smax, 1e-300)
    return {"injective": bool(injective), "smallest_singular_value": float(smin)}


def min_antennas_probabilistic(k: int, eps: float) -> int:
    "Antenna count 2*K*C*log(2K/eps) guaranteeing injectivity w.p. 1-eps (C = 12)."
    if k < 1:
        raise InputError("K must be at least 1")
    if not (0.0 < eps < 1.0):
        raise InputError("epsilon must lie in (0, 1)")
    return math.ceil(2.0 * k * 12.0 * math.log(2.0 * k / eps))
