"""Matrix-realized homogeneous cones and their generalized power functions.

A cone is described by a block pattern inside Sym(N, R): a rank ``r``, block
sizes ``d_1..d_r`` and, for every pair ``i < j``, a subspace of allowed
off-diagonal blocks of dimension ``n_ij``.  The pattern subspace ``E`` is
spanned by ``n = r + sum n_ij`` symmetric matrices, the cone is the set of
positive definite elements of ``E``, and the block upper triangular matrices
with positive scalar diagonal blocks that respect the pattern form a group
``H`` acting simply transitively on the cone via ``x -> t x t^T``.

Everything downstream rests on the triangular factorization ``x = t t^T``
computed by block elimination starting from the last block.  The pivot
scalars of that elimination are the compound power functions ``Q_j``; the
dual-side functions ``Q*_j`` come from the transposed factorization of the
dual realization (the adjoint orbit of the identity, which for patterns that
are not closed under matrix inversion involves an orthogonal projection back
onto ``E``).

Rational inputs stay rational: the pivot recursions use only field
operations, so ``Q`` and ``Qpow`` with integer exponents are exact when the
coordinates are ``fractions.Fraction``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ConeError",
    "UnknownConeError",
    "NotPositiveDefinite",
    "BoundaryElement",
    "NotInCone",
    "SubspaceViolation",
    "SingularMinor",
    "WeightVector",
    "ConeSpec",
    "ConeElement",
    "TriangularFactor",
    "builtin_cone",
    "builtin_names",
    "cholesky_upper",
    "dual_factor",
    "Q",
    "Qpow",
    "Qstar",
    "Qstar_pow",
    "dual_point",
    "act",
    "act_dual",
    "inner",
    "gamma_omega",
    "gamma_factorized",
    "random_element",
    "random_factor",
    "pi_matrix",
    "batched_pivots",
    "batched_dual_pivots",
    "batched_embed",
    "batched_coords",
    "batched_factor_matrices",
    "cone_to_json",
    "cone_from_json",
]

RESIDUAL_TOL = 1e-10
SUBSPACE_TOL = 1e-9
BOUNDARY_CUTOFF = 1e-12


class ConeError(Exception):
    """Base class for cone-algebra failures."""


class UnknownConeError(ConeError):
    """Requested builtin cone name does not exist."""


class NotPositiveDefinite(ConeError):
    """A factorization pivot was nonpositive."""


class BoundaryElement(NotPositiveDefinite):
    """Smallest eigenvalue below the boundary cutoff; log-domain quantities unstable."""


class NotInCone(ConeError):
    """Factor left the triangular pattern; input is outside the realization."""


class SubspaceViolation(ConeError):
    """A matrix that should lie in the pattern subspace does not."""


class SingularMinor(ConeError):
    """A complex block pivot is numerically singular."""


# ---------------------------------------------------------------------------
# weight vectors


def _as_entry(v):
    """Coerce to Fraction when possible, float otherwise."""
    if isinstance(v, Fraction):
        return v
    if isinstance(v, bool):
        raise TypeError("bool is not a weight")
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, float):
        return v
    if isinstance(v, np.integer):
        return Fraction(int(v))
    if isinstance(v, np.floating):
        return float(v)
    raise TypeError(f"cannot interpret {v!r} as a weight entry")


@dataclass(frozen=True)
class WeightVector:
    """A vector of exponents in R^r; scalars broadcast to constant vectors.

    Entries constructed from ints, Fractions or strings like ``"2/3"`` are
    kept as exact rationals.
    """

    entries: tuple

    @classmethod
    def make(cls, value, rank: int) -> "WeightVector":
        if isinstance(value, WeightVector):
            if len(value.entries) != rank:
                raise ValueError(f"weight length {len(value.entries)} != rank {rank}")
            return value
        if isinstance(value, (list, tuple, np.ndarray)):
            entries = tuple(_as_entry(v) for v in value)
            if len(entries) != rank:
                raise ValueError(f"weight length {len(entries)} != rank {rank}")
            return cls(entries)
        return cls((_as_entry(value),) * rank)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def is_exact(self) -> bool:
        return all(isinstance(e, Fraction) for e in self.entries)

    def total(self):
        """Sum of the entries, |w|."""
        return sum(self.entries, Fraction(0)) if self.is_exact else float(sum(self.entries))

    def as_floats(self) -> np.ndarray:
        return np.array([float(e) for e in self.entries], dtype=float)

    def __add__(self, other):
        other = WeightVector.make(other, len(self))
        return WeightVector(tuple(a + b for a, b in zip(self.entries, other.entries)))

    def __sub__(self, other):
        other = WeightVector.make(other, len(self))
        return WeightVector(tuple(a - b for a, b in zip(self.entries, other.entries)))

    def __neg__(self):
        return WeightVector(tuple(-a for a in self.entries))

    def __mul__(self, c):
        c = _as_entry(c)
        return WeightVector(tuple(a * c for a in self.entries))

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# cone specification


def _block_slices(block_dims: Sequence[int]):
    out = []
    start = 0
    for d in block_dims:
        out.append(slice(start, start + d))
        start += d
    return tuple(out)


@dataclass(frozen=True, eq=False)
class ConeSpec:
    """A matrix-realized homogeneous cone.

    Coordinates on the pattern subspace ``E`` are ordered diagonal-first:
    coordinate ``j < r`` is the scalar of diagonal block ``j``; the remaining
    ``n - r`` coordinates run over the off-diagonal pattern directions in
    lexicographic block order.  Every pattern direction used here is a single
    matrix entry, so coordinate ``k`` owns a position ``(row_k, col_k)`` with
    ``basis_k = E_{row,col} + E_{col,row}`` off the diagonal.
    """

    name: str
    r: int
    block_dims: tuple
    n_table: dict          # {(i, j): n_ij} for 1 <= i < j <= r, absent means 0
    off_positions: tuple   # per off coordinate: (block_i, block_j, row, col)
    pairing_weights: tuple  # per diagonal block; 1.0 everywhere = matrix trace
    dual_in_subspace: bool

    def __post_init__(self):
        r = self.r
        dims = self.block_dims
        if len(dims) != r:
            raise ValueError("block_dims length must equal rank")
        m = [0] * r
        nvec = [0] * r
        for (i, j), nij in self.n_table.items():
            if not (1 <= i < j <= r):
                raise ValueError(f"bad n_table key {(i, j)}")
            m[i - 1] += nij
            nvec[j - 1] += nij
        tau = tuple(1 + Fraction(m[k] + nvec[k], 2) for k in range(r))
        n = r + sum(m)
        if n != r + sum(nvec):
            raise ValueError("inconsistent block dimension table")
        if len(self.off_positions) != n - r:
            raise ValueError("off_positions length must be n - r")
        object.__setattr__(self, "m", tuple(m))
        object.__setattr__(self, "nvec", tuple(nvec))
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "N", sum(dims))
        object.__setattr__(self, "slices", _block_slices(dims))
        # index arrays for fast embed/project of batched coordinate vectors
        rows, cols, coord_of, sym = [], [], [], []
        for j in range(r):
            s = self.slices[j]
            for i in range(s.start, s.stop):
                rows.append(i)
                cols.append(i)
                coord_of.append(j)
                sym.append(False)
        for k, (bi, bj, ri, ci) in enumerate(self.off_positions):
            rows.append(ri)
            cols.append(ci)
            coord_of.append(r + k)
            sym.append(True)
        object.__setattr__(self, "_rows", np.array(rows))
        object.__setattr__(self, "_cols", np.array(cols))
        object.__setattr__(self, "_coord_of", np.array(coord_of))
        object.__setattr__(self, "_sym", np.array(sym))
        # off coordinates grouped by block pair, for the dual factorization
        by_pair = {}
        for k, (bi, bj, ri, ci) in enumerate(self.off_positions):
            by_pair.setdefault((bi, bj), []).append((k, ri, ci))
        object.__setattr__(self, "_off_by_pair", by_pair)
        object.__setattr__(self, "basis", self._build_basis())

    # -- coordinate machinery -------------------------------------------------

    def _build_basis(self) -> np.ndarray:
        B = np.zeros((self.n, self.N, self.N))
        for j in range(self.r):
            s = self.slices[j]
            for i in range(s.start, s.stop):
                B[j, i, i] = 1.0
        for k, (bi, bj, ri, ci) in enumerate(self.off_positions):
            B[self.r + k, ri, ci] = 1.0
            B[self.r + k, ci, ri] = 1.0
        return B

    def embed(self, coords) -> np.ndarray:
        """Symmetric N x N matrix with the given pattern coordinates."""
        if _is_exact_coords(coords):
            M = [[Fraction(0)] * self.N for _ in range(self.N)]
            for j in range(self.r):
                s = self.slices[j]
                for i in range(s.start, s.stop):
                    M[i][i] = coords[j]
            for k, (bi, bj, ri, ci) in enumerate(self.off_positions):
                M[ri][ci] = coords[self.r + k]
                M[ci][ri] = coords[self.r + k]
            return np.array(M, dtype=object)
        coords = np.asarray(coords, dtype=float)
        return batched_embed(self, coords)

    def project_coords(self, M: np.ndarray) -> np.ndarray:
        """Orthogonal projection of a symmetric matrix onto E, in coordinates."""
        return batched_coords(self, M)

    def residual(self, M: np.ndarray) -> float:
        """Relative Frobenius distance from M to its projection onto E."""
        Mf = np.asarray(M, dtype=float)
        P = batched_embed(self, self.project_coords(Mf))
        scale = np.linalg.norm(Mf)
        if scale == 0.0:
            return 0.0
        return float(np.linalg.norm(Mf - P) / scale)

    def identity(self) -> "ConeElement":
        coords = np.zeros(self.n)
        coords[: self.r] = 1.0
        return ConeElement(self, coords)

    def identity_exact(self) -> "ConeElement":
        coords = tuple(Fraction(1) if k < self.r else Fraction(0) for k in range(self.n))
        return ConeElement(self, coords)

    def element(self, coords, side: str = "primal") -> "ConeElement":
        if not _is_exact_coords(coords):
            coords = np.asarray(coords, dtype=float)
            if coords.shape != (self.n,):
                raise ValueError(f"expected {self.n} coordinates")
        return ConeElement(self, coords, side=side)

    def element_from_matrix(self, M, side: str = "primal", tol: float = SUBSPACE_TOL) -> "ConeElement":
        M = np.asarray(M, dtype=float)
        res = self.residual(M)
        if res > tol:
            raise SubspaceViolation(f"matrix is {res:.2e} away from the {self.name} pattern")
        return ConeElement(self, self.project_coords(M), side=side)

    def block_of_index(self, i: int) -> int:
        for j, s in enumerate(self.slices):
            if s.start <= i < s.stop:
                return j
        raise IndexError(i)

    # -- validation ------------------------------------------------------------

    def validate(self, rng=None, samples: int = 24) -> None:
        """Check the structural axioms of the realization numerically.

        Verifies the dimension count, m_r = 0, n_1 = 0, the identity lying in
        the span, closure of the triangular pattern under multiplication and
        of E under the congruence action, and that factors of random cone
        points stay in pattern.
        """
        if self.m[-1] != 0 or self.nvec[0] != 0:
            raise ValueError("block table must have m_r = 0 and n_1 = 0")
        if self.n != self.r + sum(self.m):
            raise ValueError("dimension count violated")
        rng = np.random.default_rng(0) if rng is None else rng
        for _ in range(samples):
            t1 = random_factor(self, rng)
            t2 = random_factor(self, rng)
            prod = t1.matrix @ t2.matrix
            if _pattern_residual_tri(self, prod) > 1e-12:
                raise ValueError("triangular pattern is not closed under products")
            x = random_element(self, rng)
            y = t1.matrix @ x.embedded @ t1.matrix.T
            if self.residual(y) > 1e-10:
                raise ValueError("E is not closed under the congruence action")
            w = t1.matrix @ t1.matrix.T
            if self.residual(w) > 1e-12:
                raise ValueError("t t^T leaves the pattern subspace")
        # factorization of random points must reproduce them
        for _ in range(samples):
            x = random_element(self, rng)
            t = cholesky_upper(x)
            err = np.linalg.norm(t.matrix @ t.matrix.T - x.embedded_float) / np.linalg.norm(x.embedded_float)
            if err > RESIDUAL_TOL:
                raise ValueError(f"factorization residual {err:.2e}")


def _pattern_residual_tri(cone: ConeSpec, T: np.ndarray) -> float:
    """Distance of an upper triangular matrix from the H pattern."""
    M = np.zeros_like(T)
    for j in range(cone.r):
        s = cone.slices[j]
        d = cone.block_dims[j]
        M[s, s] = np.eye(d) * np.trace(T[s, s]) / d
    for (bi, bj, ri, ci) in cone.off_positions:
        M[ri, ci] = T[ri, ci]
    scale = max(np.linalg.norm(T), 1e-30)
    return float(np.linalg.norm(T - M) / scale)


def _is_exact_coords(coords) -> bool:
    if isinstance(coords, np.ndarray) and coords.dtype == object:
        return all(isinstance(c, Fraction) for c in coords)
    return isinstance(coords, (tuple, list)) and len(coords) > 0 and all(
        isinstance(c, Fraction) for c in coords
    )


# ---------------------------------------------------------------------------
# elements and factors


class ConeElement:
    """A point of V in cone coordinates, with its embedded symmetric matrix.

    ``side`` distinguishes points of the cone ("primal") from points of its
    dual realization ("dual"); the coordinates live in the same pattern
    subspace either way.
    """

    __slots__ = ("cone", "coords", "side", "_embedded")

    def __init__(self, cone: ConeSpec, coords, side: str = "primal"):
        if side not in ("primal", "dual"):
            raise ValueError("side must be 'primal' or 'dual'")
        self.cone = cone
        if _is_exact_coords(coords):
            self.coords = tuple(coords)
        else:
            self.coords = np.asarray(coords, dtype=float)
        self.side = side
        self._embedded = None

    @property
    def is_exact(self) -> bool:
        return isinstance(self.coords, tuple)

    @property
    def embedded(self):
        if self._embedded is None:
            self._embedded = self.cone.embed(self.coords)
        return self._embedded

    @property
    def embedded_float(self) -> np.ndarray:
        if self.is_exact:
            return np.array([[float(v) for v in row] for row in self.embedded], dtype=float)
        return self.embedded

    @property
    def coords_float(self) -> np.ndarray:
        if self.is_exact:
            return np.array([float(c) for c in self.coords], dtype=float)
        return self.coords

    def as_float(self) -> "ConeElement":
        return ConeElement(self.cone, self.coords_float, side=self.side)

    def scale(self, lam) -> "ConeElement":
        if self.is_exact and isinstance(lam, (int, Fraction)):
            return ConeElement(self.cone, tuple(c * lam for c in self.coords), side=self.side)
        return ConeElement(self.cone, self.coords_float * float(lam), side=self.side)

    def __add__(self, other: "ConeElement") -> "ConeElement":
        if other.cone is not self.cone or other.side != self.side:
            raise ValueError("can only add elements of the same cone and side")
        if self.is_exact and other.is_exact:
            return ConeElement(self.cone, tuple(a + b for a, b in zip(self.coords, other.coords)), side=self.side)
        return ConeElement(self.cone, self.coords_float + other.coords_float, side=self.side)

    def __repr__(self):
        return f"ConeElement({self.cone.name}, {self.side}, {list(self.coords)!r})"


class TriangularFactor:
    """A member of the triangular group H: scalar positive diagonal blocks."""

    __slots__ = ("cone", "rho", "off", "matrix")

    def __init__(self, cone: ConeSpec, rho, off, matrix=None):
        self.cone = cone
        self.rho = np.asarray(rho, dtype=float)
        self.off = np.asarray(off, dtype=float)
        if matrix is None:
            matrix = batched_factor_matrices(cone, self.rho[None, :], self.off[None, :])[0]
        self.matrix = matrix

    @property
    def t(self) -> np.ndarray:
        return self.matrix

    def inverse(self) -> "TriangularFactor":
        Tinv = np.linalg.inv(self.matrix)
        rho = 1.0 / self.rho
        off = _off_coords_of_triangular(self.cone, Tinv)
        return TriangularFactor(self.cone, rho, off, Tinv)

    def compose(self, other: "TriangularFactor") -> "TriangularFactor":
        M = self.matrix @ other.matrix
        rho = self.rho * other.rho
        return TriangularFactor(self.cone, rho, _off_coords_of_triangular(self.cone, M), M)

    def __repr__(self):
        return f"TriangularFactor({self.cone.name}, rho={self.rho!r})"


def _off_coords_of_triangular(cone: ConeSpec, T: np.ndarray) -> np.ndarray:
    return np.array([T[ri, ci] for (_, _, ri, ci) in cone.off_positions], dtype=float)


# ---------------------------------------------------------------------------
# batched kernels (the hot path for Monte Carlo work)


def batched_embed(cone: ConeSpec, coords: np.ndarray) -> np.ndarray:
    """coords (..., n) -> symmetric matrices (..., N, N)."""
    coords = np.asarray(coords)
    out = np.zeros(coords.shape[:-1] + (cone.N, cone.N), dtype=coords.dtype)
    vals = coords[..., cone._coord_of]
    out[..., cone._rows, cone._cols] = vals
    sym = cone._sym
    out[..., cone._cols[sym], cone._rows[sym]] = vals[..., sym]
    return out

def batched_coords(cone: ConeSpec, M: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto E of symmetric matrices (..., N, N)."""
    M = np.asarray(M)
    out = np.zeros(M.shape[:-2] + (cone.n,), dtype=M.dtype)
    for j in range(cone.r):
        s = cone.slices[j]
        d = cone.block_dims[j]
        out[..., j] = np.trace(M[..., s, s], axis1=-2, axis2=-1) / d
    for k, (bi, bj, ri, ci) in enumerate(cone.off_positions):
        out[..., cone.r + k] = 0.5 * (M[..., ri, ci] + M[..., ci, ri])
    return out


def batched_factor_matrices(cone: ConeSpec, rho: np.ndarray, off: np.ndarray) -> np.ndarray:
    """(rho (..., r), off (..., n-r)) -> upper triangular matrices (..., N, N)."""
    rho = np.asarray(rho, dtype=float)
    off = np.asarray(off, dtype=float)
    T = np.zeros(rho.shape[:-1] + (cone.N, cone.N), dtype=float)
    for j in range(cone.r):
        s = cone.slices[j]
        for i in range(s.start, s.stop):
            T[..., i, i] = rho[..., j]
    for k, (bi, bj, ri, ci) in enumerate(cone.off_positions):
        T[..., ri, ci] = off[..., k]
    return T


def batched_pivots(cone: ConeSpec, emb: np.ndarray, guard: bool = False) -> np.ndarray:
    """Reverse-order block elimination pivots of matrices (..., N, N).

    Returns (..., r) pivot scalars (the compound functions Q_j).  Works for
    real and complex inputs.  No pattern checks are performed; callers must
    supply matrices lying in E (or its complexification).  With ``guard``,
    raises SingularMinor if a pivot magnitude underflows.
    """
    A = np.array(emb, copy=True)
    piv = np.zeros(A.shape[:-2] + (cone.r,), dtype=A.dtype)
    for j in range(cone.r - 1, -1, -1):
        s = cone.slices[j]
        d = cone.block_dims[j]
        pblock = A[..., s, s]
        sj = np.trace(pblock, axis1=-2, axis2=-1) / d
        piv[..., j] = sj
        if guard:
            bad = np.abs(sj) < 1e-290
            if np.any(bad):
                raise SingularMinor("singular leading block in complex elimination")
        if s.start > 0:
            col = A[..., : s.start, s]           # (..., s.start, d)
            upd = col @ np.swapaxes(col, -1, -2) / sj[..., None, None]
            A[..., : s.start, : s.start] -= upd
    return piv


def batched_dual_pivots(cone: ConeSpec, emb: np.ndarray) -> np.ndarray:
    """Pivots of the dual factorization for dual-side matrices (..., N, N).

    Solves project_E(t^T t) = xi by forward elimination with pattern
    projections and returns the (..., r) pivots (the functions Q*_j).
    """
    X = np.asarray(emb)
    shape = X.shape[:-2]
    T = np.zeros(shape + (cone.N, cone.N), dtype=X.dtype)
    piv = np.zeros(shape + (cone.r,), dtype=X.dtype)
    for j in range(cone.r):
        s = cone.slices[j]
        d = cone.block_dims[j]
        colj = T[..., :, s]
        cross = np.swapaxes(colj, -1, -2) @ colj      # (..., d, d)
        sj = (np.trace(X[..., s, s], axis1=-2, axis2=-1) - np.trace(cross, axis1=-2, axis2=-1)) / d
        piv[..., j] = sj
        rho = np.sqrt(np.where(np.real(sj) > 0, sj, np.nan))
        for i in range(s.start, s.stop):
            T[..., i, i] = rho
        for bk in range(j + 1, cone.r):
            pair = cone._off_by_pair.get((j + 1, bk + 1))
            sk = cone.slices[bk]
            crossk = np.swapaxes(colj, -1, -2) @ T[..., :, sk] if j > 0 else None
            if pair is None:
                continue
            for (k, ri, ci) in pair:
                c = X[..., ri, ci]
                if crossk is not None:
                    c = c - crossk[..., ri - s.start, ci - sk.start]
                T[..., ri, ci] = c / rho
    return piv


# ---------------------------------------------------------------------------
# factorizations


def _check_boundary(x: ConeElement) -> None:
    M = x.embedded_float
    ev = np.linalg.eigvalsh(M)
    scale = float(np.max(np.abs(ev)))
    if scale == 0.0 or ev[0] <= 0 or ev[0] < BOUNDARY_CUTOFF * scale:
        if ev[0] <= 0:
            raise NotPositiveDefinite(f"eigenvalues reach {ev[0]:.3e}")
        raise BoundaryElement(f"smallest eigenvalue ratio {ev[0]/scale:.3e} below cutoff")


def cholesky_upper(x: ConeElement, check: bool = True) -> TriangularFactor:
    """Factor x = t t^T with t in the triangular group H.

    Block elimination runs from the last block upward so the factor is upper
    triangular.  The diagonal blocks of the eliminated matrix must be scalar
    multiples of the identity and the off-diagonal blocks of the factor must
    lie in the pattern; both are verified and violations raise NotInCone.
    """
    cone = x.cone
    if x.side != "primal":
        raise ValueError("cholesky_upper expects a primal element")
    if check:
        _check_boundary(x)
    A = x.embedded_float.copy()
    scale = float(np.linalg.norm(A))
    T = np.zeros_like(A)
    rho = np.zeros(cone.r)
    for j in range(cone.r - 1, -1, -1):
        s = cone.slices[j]
        d = cone.block_dims[j]
        P = A[s, s]
        sj = float(np.trace(P)) / d
        if np.linalg.norm(P - sj * np.eye(d)) > 1e-10 * max(scale, 1.0):
            raise NotInCone(f"diagonal block {j + 1} is not scalar")
        if sj <= 0:
            raise NotPositiveDefinite(f"pivot {j + 1} is {sj:.3e}")
        rho[j] = math.sqrt(sj)
        T[s, s] = rho[j] * np.eye(d)
        if s.start > 0:
            block = A[: s.start, s] / rho[j]
            T[: s.start, s] = block
            A[: s.start, : s.start] -= (block @ block.T)
    res = _pattern_residual_tri(cone, T)
    if res > 1e-9:
        raise NotInCone(f"factor leaves the pattern by {res:.2e}")
    off = _off_coords_of_triangular(cone, T)
    t = TriangularFactor(cone, rho, off, T)
    if check:
        err = np.linalg.norm(T @ T.T - x.embedded_float) / max(scale, 1e-30)
        if err > RESIDUAL_TOL:
            raise NotInCone(f"factorization residual {err:.2e}")
    return t


def dual_factor(xi: ConeElement) -> TriangularFactor:
    """Factor a dual-side element as xi = project_E(t^T t), t in H."""
    cone = xi.cone
    if xi.side != "dual":
        raise ValueError("dual_factor expects a dual element")
    X = xi.embedded_float
    T = np.zeros_like(X)
    rho = np.zeros(cone.r)
    for j in range(cone.r):
        s = cone.slices[j]
        d = cone.block_dims[j]
        colj = T[:, s]
        sj = (float(np.trace(X[s, s])) - float(np.trace(colj.T @ colj))) / d
        if sj <= 0:
            raise NotPositiveDefinite(f"dual pivot {j + 1} is {sj:.3e}")
        rho[j] = math.sqrt(sj)
        for i in range(s.start, s.stop):
            T[i, i] = rho[j]
        for bk in range(j + 1, cone.r):
            pair = cone._off_by_pair.get((j + 1, bk + 1))
            if pair is None:
                continue
            sk = cone.slices[bk]
            cross = colj.T @ T[:, sk]
            for (k, ri, ci) in pair:
                T[ri, ci] = (X[ri, ci] - cross[ri - s.start, ci - sk.start]) / rho[j]
    return TriangularFactor(cone, rho, _off_coords_of_triangular(cone, T), T)


# ---------------------------------------------------------------------------
# exact pivot recursions


def _exact_matrix(x: ConeElement):
    return [list(row) for row in x.embedded]


def _exact_pivots_primal(cone: ConeSpec, x: ConeElement):
    A = _exact_matrix(x)
    N = cone.N
    piv = [None] * cone.r
    for j in range(cone.r - 1, -1, -1):
        s = cone.slices[j]
        d = cone.block_dims[j]
        sj = sum(A[i][i] for i in range(s.start, s.stop)) / d
        if sj <= 0:
            raise NotPositiveDefinite(f"pivot {j + 1} is {sj}")
        piv[j] = sj
        for a in range(s.start):
            for b in range(s.start):
                acc = Fraction(0)
                for i in range(s.start, s.stop):
                    acc += A[a][i] * A[b][i]
                A[a][b] -= acc / sj
    return tuple(piv)


def _exact_pivots_dual(cone: ConeSpec, xi: ConeElement):
    X = _exact_matrix(xi)
    T = [[Fraction(0)] * cone.N for _ in range(cone.N)]
    piv = [None] * cone.r
    # work with squared diagonals to stay rational: store T scaled rows
    # T_jk = C_jk / rho_j, so track U_jk = rho_j * T_jk = C_jk and divide by
    # the pivot when the product needs 1/rho_j^2.
    U = [[Fraction(0)] * cone.N for _ in range(cone.N)]
    for j in range(cone.r):
        s = cone.slices[j]
        d = cone.block_dims[j]
        acc = Fraction(0)
        for i in range(s.start, s.stop):
            cross = Fraction(0)
            for l in range(s.start):
                blk = cone.block_of_index(l)
                cross += U[l][i] * U[l][i] / piv[blk]
            acc += X[i][i] - cross
        sj = acc / d
        if sj <= 0:
            raise NotPositiveDefinite(f"dual pivot {j + 1} is {sj}")
        piv[j] = sj
        for bk in range(j + 1, cone.r):
            pair = cone._off_by_pair.get((j + 1, bk + 1))
            if pair is None:
                continue
            for (k, ri, ci) in pair:
                cross = Fraction(0)
                for l in range(s.start):
                    blk = cone.block_of_index(l)
                    cross += U[l][ri] * U[l][ci] / piv[blk]
                U[ri][ci] = X[ri][ci] - cross
    return tuple(piv)


# ---------------------------------------------------------------------------
# the spec operations


def Q(x: ConeElement):
    """The compound power functions Q_j(x), exact for rational coordinates."""
    if x.is_exact:
        return _exact_pivots_primal(x.cone, x)
    t = cholesky_upper(x)
    return t.rho ** 2


def Qstar(xi: ConeElement):
    """The dual compound functions Q*_j(xi) of a dual-side element."""
    if xi.is_exact:
        return _exact_pivots_dual(xi.cone, xi)
    return dual_factor(xi).rho ** 2


def Qpow(alpha, x: ConeElement):
    """Product of Q_j(x)^{alpha_j}; exact for rational data and integer exponents."""
    alpha = WeightVector.make(alpha, x.cone.r)
    q = Q(x)
    if x.is_exact and alpha.is_exact and all(a.denominator == 1 for a in alpha):
        out = Fraction(1)
        for qj, aj in zip(q, alpha):
            out *= qj ** int(aj)
        return out
    qf = np.array([float(v) for v in q])
    return float(np.prod(qf ** alpha.as_floats()))


def Qstar_pow(alpha, xi: ConeElement):
    """Product of Q*_j(xi)^{alpha_j} for a dual-side element."""
    alpha = WeightVector.make(alpha, xi.cone.r)
    q = Qstar(xi)
    if xi.is_exact and alpha.is_exact and all(a.denominator == 1 for a in alpha):
        out = Fraction(1)
        for qj, aj in zip(q, alpha):
            out *= qj ** int(aj)
        return out
    qf = np.array([float(v) for v in q])
    return float(np.prod(qf ** alpha.as_floats()))


def act(t: TriangularFactor, x: ConeElement) -> ConeElement:
    """The congruence action x -> t x t^T, back in coordinates."""
    cone = x.cone
    if x.side != "primal":
        raise ValueError("act expects a primal element")
    M = t.matrix @ x.embedded_float @ t.matrix.T
    res = cone.residual(M)
    if res > SUBSPACE_TOL:
        raise SubspaceViolation(f"action left E by {res:.2e}")
    return ConeElement(cone, cone.project_coords(M))


def act_dual(t: TriangularFactor, xi: ConeElement) -> ConeElement:
    """The adjoint action xi -> project_E(t^T xi t) on the dual realization."""
    cone = xi.cone
    if xi.side != "dual":
        raise ValueError("act_dual expects a dual element")
    M = t.matrix.T @ xi.embedded_float @ t.matrix
    return ConeElement(cone, cone.project_coords(M), side="dual")


def dual_point(x: ConeElement) -> ConeElement:
    """The duality bijection between the cone and its dual realization.

    For a primal point x = t t^T the image is the projection onto E of the
    matrix inverse of x; applied to a dual point it returns the primal point
    whose image it is, so the map is an exact involution.  When the pattern
    is closed under inversion the projection is checked to be lossless.
    """
    cone = x.cone
    if x.side == "primal":
        t = cholesky_upper(x)
        inv = np.linalg.inv(x.embedded_float)
        if cone.dual_in_subspace:
            res = cone.residual(inv)
            if res > SUBSPACE_TOL:
                raise SubspaceViolation(f"inverse left E by {res:.2e}; realization bug")
        return ConeElement(cone, cone.project_coords(inv), side="dual")
    s = dual_factor(x)
    sinv = s.inverse().matrix
    M = sinv @ sinv.T
    res = cone.residual(M)
    if res > SUBSPACE_TOL:
        raise SubspaceViolation(f"dual inverse left E by {res:.2e}")
    return ConeElement(cone, cone.project_coords(M))


def inner(x: ConeElement, y: ConeElement, weights=None) -> float:
    """The trace pairing of two pattern matrices.

    ``weights`` optionally rescales the diagonal-block contributions (one
    entry per block); the default is the plain matrix trace.  The cone's own
    ``pairing_weights`` are used when no override is given.
    """
    cone = x.cone
    w = cone.pairing_weights if weights is None else tuple(float(v) for v in weights)
    A = x.embedded_float
    B = y.embedded_float
    total = float(np.sum(A * B))
    if any(abs(wj - 1.0) > 0 for wj in w):
        for j, wj in enumerate(w):
            if wj != 1.0:
                s = cone.slices[j]
                total += (wj - 1.0) * float(np.sum(A[s, s] * B[s, s]))
    return total


def pi_matrix(t: TriangularFactor) -> np.ndarray:
    """The n x n matrix of x -> t x t^T restricted to E, in the basis."""
    cone = t.cone
    cols = []
    for k in range(cone.n):
        img = t.matrix @ cone.basis[k] @ t.matrix.T
        cols.append(cone.project_coords(img))
    return np.array(cols).T


# ---------------------------------------------------------------------------
# sampling


def random_factor(cone: ConeSpec, rng, log_spread: float = 0.45, off_spread: float = 0.4) -> TriangularFactor:
    rho = np.exp(rng.uniform(-log_spread, log_spread, size=cone.r))
    off = rng.normal(0.0, off_spread, size=cone.n - cone.r)
    return TriangularFactor(cone, rho, off)


def random_element(cone: ConeSpec, rng, side: str = "primal",
                   log_spread: float = 0.45, off_spread: float = 0.4) -> ConeElement:
    t = random_factor(cone, rng, log_spread, off_spread)
    if side == "primal":
        M = t.matrix @ t.matrix.T
        return ConeElement(cone, cone.project_coords(M))
    M = t.matrix.T @ t.matrix
    return ConeElement(cone, cone.project_coords(M), side="dual")


# ---------------------------------------------------------------------------
# the gamma integral


def gamma_factorized(cone: ConeSpec, nu) -> float:
    """The product-form reference value (2 pi)^{(n-r)/2} prod Gamma(nu_j - m_j/2).

    Exposed only as a cross-check hint; the measure normalization of the
    coordinate realization differs from it by a computable constant, so it is
    never asserted against the integral.
    """
    nu = WeightVector.make(nu, cone.r)
    val = (2.0 * math.pi) ** ((cone.n - cone.r) / 2.0)
    for j in range(cone.r):
        a = float(nu[j]) - cone.m[j] / 2.0
        if a <= 0:
            return math.inf
        val *= math.gamma(a)
    return val


def gamma_omega(cone: ConeSpec, nu, samples: int = 200_000, seed: int = 0):
    """The gamma integral of the cone at the identity, by Monte Carlo.

    Returns (value, stderr).  Raises DivergenceDetected (from the quadrature
    engine) when some nu_j is at or below m_j/2.
    """
    from . import quadrature  # deferred import; quadrature builds on this module

    return quadrature.gamma_integral(cone, nu, samples=samples, seed=seed)


# ---------------------------------------------------------------------------
# builtin cones


def _make_cone(name, r, block_dims, n_entries, off_positions, dual_in_subspace):
    n_table = dict(n_entries)
    spec = ConeSpec(
        name=name,
        r=r,
        block_dims=tuple(block_dims),
        n_table=n_table,
        off_positions=tuple(off_positions),
        pairing_weights=tuple(1.0 for _ in range(r)),
        dual_in_subspace=dual_in_subspace,
    )
    return spec


_BUILTIN_CACHE: dict = {}


def builtin_names():
    return ("halfline", "sym2", "vinberg", "omegaE")


def builtin_cone(name: str) -> ConeSpec:
    """The built-in cones: halfline, sym2, vinberg, omegaE.

    omegaE is the rank 3, seven dimensional non-selfdual cone inside
    Sym(4, R); block order is chosen so that elimination from the last block
    (the 2 x 2 one) yields the upper triangular factor, which lines up the
    algebra index with the matrix block index.
    """
    if name in _BUILTIN_CACHE:
        return _BUILTIN_CACHE[name]
    if name == "halfline":
        spec = _make_cone("halfline", 1, (1,), {}, (), True)
    elif name == "sym2":
        spec = _make_cone("sym2", 2, (1, 1), {(1, 2): 1}, ((1, 2, 0, 1),), True)
    elif name == "vinberg":
        spec = _make_cone(
            "vinberg", 3, (1, 1, 1),
            {(1, 2): 1, (1, 3): 1},
            ((1, 2, 0, 1), (1, 3, 0, 2)),
            False,
        )
    elif name == "omegaE":
        # blocks of sizes 1, 1, 2; pair (2,3) restricted to the second column
        spec = _make_cone(
            "omegaE", 3, (1, 1, 2),
            {(1, 2): 1, (1, 3): 2, (2, 3): 1},
            ((1, 2, 0, 1), (1, 3, 0, 2), (1, 3, 0, 3), (2, 3, 1, 3)),
            False,
        )
    else:
        raise UnknownConeError(f"unknown cone {name!r}; choose from {builtin_names()}")
    spec.validate()
    _BUILTIN_CACHE[name] = spec
    return spec


# ---------------------------------------------------------------------------
# serialization


def cone_to_json(cone: ConeSpec) -> str:
    doc = {
        "name": cone.name,
        "r": cone.r,
        "block_dims": list(cone.block_dims),
        "n_table": {f"{i},{j}": v for (i, j), v in sorted(cone.n_table.items())},
        "off_positions": [list(p) for p in cone.off_positions],
        "dual_in_subspace": cone.dual_in_subspace,
        "basis": [b.tolist() for b in cone.basis],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def cone_from_json(text: str) -> ConeSpec:
    doc = json.loads(text)
    n_table = {}
    for key, v in doc["n_table"].items():
        i, j = key.split(",")
        n_table[(int(i), int(j))] = int(v)
    spec = ConeSpec(
        name=doc["name"],
        r=int(doc["r"]),
        block_dims=tuple(int(d) for d in doc["block_dims"]),
        n_table=n_table,
        off_positions=tuple(tuple(int(v) for v in p) for p in doc["off_positions"]),
        pairing_weights=tuple(1.0 for _ in range(int(doc["r"]))),
        dual_in_subspace=bool(doc["dual_in_subspace"]),
    )
    if "basis" in doc:
        given = np.array(doc["basis"], dtype=float)
        if given.shape != spec.basis.shape or not np.allclose(given, spec.basis):
            raise SubspaceViolation("stored basis disagrees with the declared pattern")
    spec.validate()
    return spec
