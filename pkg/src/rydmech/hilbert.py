"""Operators and states on atom (x) phonon-mode product spaces.

Factor order is fixed: the atom first, then the phonon modes in index
order. Basis index of ``|a, m1, m2, ...>`` is row-major over that order.
Operators are stored as CSR matrices; states as dense numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.sparse as sp

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class CompositeSpace:
    atom_levels: tuple[str, ...]
    phonon_cutoffs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "atom_levels", tuple(self.atom_levels))
        object.__setattr__(self, "phonon_cutoffs", tuple(int(n) for n in self.phonon_cutoffs))
        if len(self.atom_levels) < 2:
            raise ValueError("need at least two atomic levels")
        if len(set(self.atom_levels)) != len(self.atom_levels):
            raise ValueError(f"duplicate atomic level labels in {self.atom_levels}")
        if any(n < 2 for n in self.phonon_cutoffs):
            raise ValueError("every phonon cutoff must be >= 2")

    @property
    def dims(self) -> tuple[int, ...]:
        return (len(self.atom_levels),) + self.phonon_cutoffs

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_modes(self) -> int:
        return len(self.phonon_cutoffs)

    def level_index(self, label: str) -> int:
        try:
            return self.atom_levels.index(label)
        except ValueError:
            raise KeyError(f"unknown atomic level {label!r}; have {self.atom_levels}") from None

    def check_mode(self, mode: int) -> None:
        if not 0 <= mode < self.n_modes:
            raise IndexError(f"mode index {mode} out of range for {self.n_modes} mode(s)")

    def basis_index(self, label: str, occupations: Sequence[int] = ()) -> int:
        occ = tuple(occupations) or (0,) * self.n_modes
        if len(occ) != self.n_modes:
            raise ValueError(f"expected {self.n_modes} occupation(s), got {len(occ)}")
        for m, n in zip(occ, self.phonon_cutoffs):
            if not 0 <= m < n:
                raise ValueError(f"occupation {m} outside cutoff {n}")
        return int(np.ravel_multi_index((self.level_index(label),) + occ, self.dims))


@dataclass(frozen=True)
class ReducedSpace:
    """Bookkeeping for the factors left after a partial trace."""

    dims: tuple[int, ...]
    factors: tuple[int, ...]

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))


def make_space(atom_levels: Sequence[str], phonon_cutoffs: Sequence[int]) -> CompositeSpace:
    return CompositeSpace(tuple(atom_levels), tuple(phonon_cutoffs))


class Operator:
    """Linear operator on a :class:`CompositeSpace`."""

    __slots__ = ("space", "matrix")
    __array_priority__ = 100

    def __init__(self, space: CompositeSpace, matrix):
        m = sp.csr_matrix(matrix, dtype=complex)
        if m.shape != (space.total_dim, space.total_dim):
            raise ValueError(f"matrix shape {m.shape} does not match dimension {space.total_dim}")
        self.space = space
        self.matrix = m

    def _check(self, other: "Operator") -> None:
        if other.space != self.space:
            raise ValueError("operators live on different spaces")

    def dag(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T)

    def __add__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.space, self.matrix + other.matrix)
        if other == 0:
            return self
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other: "Operator") -> "Operator":
        return self + (-1.0) * other

    def __neg__(self) -> "Operator":
        return (-1.0) * self

    def __mul__(self, other):
        if isinstance(other, Operator):
            return self @ other
        if np.isscalar(other):
            return Operator(self.space, self.matrix * other)
        return NotImplemented

    def __rmul__(self, other):
        if np.isscalar(other):
            return Operator(self.space, self.matrix * other)
        return NotImplemented

    def __truediv__(self, other):
        return self * (1.0 / other)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.space, self.matrix @ other.matrix)
        if isinstance(other, StateVector):
            return StateVector(self.space, self.matrix @ other.data, normalize=False)
        return NotImplemented

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        diff = self.matrix - self.matrix.conj().T
        return diff.nnz == 0 or float(np.max(np.abs(diff.data))) < tol

    def commutator(self, other: "Operator") -> "Operator":
        return self @ other - other @ self

    def __repr__(self):
        return f"Operator(dim={self.space.total_dim}, nnz={self.matrix.nnz})"


class StateVector:
    __slots__ = ("space", "data")

    def __init__(self, space: CompositeSpace, data, normalize: bool = True):
        v = np.asarray(data, dtype=complex).ravel()
        if v.shape != (space.total_dim,):
            raise ValueError(f"state of length {v.size} does not match dimension {space.total_dim}")
        if normalize:
            nrm = np.linalg.norm(v)
            if nrm == 0:
                raise ValueError("zero vector is not a state")
            v = v / nrm
        self.space = space
        self.data = v

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def to_density(self) -> "DensityMatrix":
        return DensityMatrix(self.space, np.outer(self.data, self.data.conj()))

    def __add__(self, other: "StateVector") -> "StateVector":
        return StateVector(self.space, self.data + other.data, normalize=False)

    def __sub__(self, other: "StateVector") -> "StateVector":
        return StateVector(self.space, self.data - other.data, normalize=False)

    def __mul__(self, c) -> "StateVector":
        return StateVector(self.space, self.data * c, normalize=False)

    __rmul__ = __mul__

    def normalized(self) -> "StateVector":
        return StateVector(self.space, self.data)


class DensityMatrix:
    __slots__ = ("space", "data")

    def __init__(self, space, data):
        m = np.asarray(data, dtype=complex)
        n = space.total_dim
        if m.shape != (n, n):
            raise ValueError(f"density matrix shape {m.shape} does not match dimension {n}")
        self.space = space
        self.data = m

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.data - self.data.conj().T)))

    def min_eigenvalue(self) -> float:
        h = 0.5 * (self.data + self.data.conj().T)
        return float(np.linalg.eigvalsh(h)[0])

    def validate(self, trace_tol: float = 1e-8, herm_tol: float = 1e-10,
                 pos_floor: float = -1e-6) -> None:
        tr = self.trace()
        if abs(tr - 1.0) > trace_tol:
            raise ValueError(f"trace {tr.real:.12g} deviates from 1 by more than {trace_tol}")
        if self.hermiticity_error() > herm_tol:
            raise ValueError("density matrix is not Hermitian")
        lam = self.min_eigenvalue()
        if lam < pos_floor:
            raise ValueError(f"smallest eigenvalue {lam:.3g} below {pos_floor}")


def identity(space: CompositeSpace) -> Operator:
    return Operator(space, sp.identity(space.total_dim, dtype=complex, format="csr"))


def tensor_lift(space: CompositeSpace, factor: int, matrix) -> Operator:
    """Embed a single-factor matrix; ``factor`` 0 is the atom, k >= 1 is mode k-1."""
    dims = space.dims
    if not 0 <= factor < len(dims):
        raise IndexError(f"factor {factor} out of range")
    m = sp.csr_matrix(matrix, dtype=complex)
    if m.shape != (dims[factor], dims[factor]):
        raise ValueError(f"factor matrix must be {dims[factor]}x{dims[factor]}")
    parts = [sp.identity(d, dtype=complex, format="csr") for d in dims]
    parts[factor] = m
    return Operator(space, reduce(lambda a, b: sp.kron(a, b, format="csr"), parts))


def ladder(n: int) -> sp.csr_matrix:
    """Truncated single-mode annihilation matrix with <m-1|b|m> = sqrt(m)."""
    return sp.diags(np.sqrt(np.arange(1, n, dtype=float)), 1, shape=(n, n), format="csr")


def annihilation(space: CompositeSpace, mode: int = 0) -> Operator:
    space.check_mode(mode)
    return tensor_lift(space, mode + 1, ladder(space.phonon_cutoffs[mode]))


def creation(space: CompositeSpace, mode: int = 0) -> Operator:
    return annihilation(space, mode).dag()


def number(space: CompositeSpace, mode: int = 0) -> Operator:
    space.check_mode(mode)
    n = space.phonon_cutoffs[mode]
    return tensor_lift(space, mode + 1, sp.diags(np.arange(n, dtype=float)))


def transition(space: CompositeSpace, a: str, b: str) -> Operator:
    """sigma_ab = |a><b| on the atom, identity on the modes."""
    n = len(space.atom_levels)
    m = sp.csr_matrix(([1.0], ([space.level_index(a)], [space.level_index(b)])), shape=(n, n))
    return tensor_lift(space, 0, m)


def projector(space: CompositeSpace, label: str) -> Operator:
    return transition(space, label, label)


def fock_projector(space: CompositeSpace, mode: int, m: int) -> Operator:
    space.check_mode(mode)
    n = space.phonon_cutoffs[mode]
    if not 0 <= m < n:
        raise ValueError(f"Fock index {m} outside cutoff {n}")
    return tensor_lift(space, mode + 1, sp.csr_matrix(([1.0], ([m], [m])), shape=(n, n)))


def basis_projector(space: CompositeSpace, label: str, occupations: Sequence[int]) -> Operator:
    i = space.basis_index(label, occupations)
    d = space.total_dim
    return Operator(space, sp.csr_matrix(([1.0], ([i], [i])), shape=(d, d)))


def fock_state(space: CompositeSpace, atom_label: str, occupations: Sequence[int] = ()) -> StateVector:
    v = np.zeros(space.total_dim, dtype=complex)
    v[space.basis_index(atom_label, occupations)] = 1.0
    return StateVector(space, v)


def superposition(space: CompositeSpace, terms) -> StateVector:
    """Normalized sum of ``(amplitude, label, occupations)`` basis kets."""
    v = np.zeros(space.total_dim, dtype=complex)
    for amp, label, occ in terms:
        v[space.basis_index(label, occ)] += amp
    return StateVector(space, v)


def thermal_distribution(n_th: float, cutoff: int, tail_tol: float = 1e-6) -> np.ndarray:
    """Truncated Bose-Einstein occupation probabilities p_m ~ (n/(n+1))^m.

    Raises if the weight of the untruncated distribution beyond the cutoff
    exceeds ``tail_tol``.
    """
    if n_th < 0:
        raise ValueError("thermal occupation must be non-negative")
    p = np.zeros(cutoff)
    if n_th == 0:
        p[0] = 1.0
        return p
    q = n_th / (n_th + 1.0)
    tail = q**cutoff
    if tail > tail_tol:
        need = int(np.ceil(np.log(tail_tol) / np.log(q)))
        raise ValueError(
            f"cutoff {cutoff} leaves tail weight {tail:.3g} > {tail_tol:g} "
            f"for n_th={n_th:g}; need cutoff >= {need}")
    p = q ** np.arange(cutoff)
    return p / p.sum()


def thermal_state(space: CompositeSpace, atom_label: str, n_th_per_mode,
                  tail_tol: float = 1e-6) -> DensityMatrix:
    if np.isscalar(n_th_per_mode):
        n_th_per_mode = [n_th_per_mode] * space.n_modes
    if len(n_th_per_mode) != space.n_modes:
        raise ValueError("need one thermal occupation per mode")
    atom = np.zeros(len(space.atom_levels))
    atom[space.level_index(atom_label)] = 1.0
    diag = reduce(np.kron, [atom] + [thermal_distribution(n, c, tail_tol)
                                     for n, c in zip(n_th_per_mode, space.phonon_cutoffs)])
    return DensityMatrix(space, np.diag(diag.astype(complex)))


def _as_matrix(state) -> np.ndarray:
    if isinstance(state, StateVector):
        return np.outer(state.data, state.data.conj())
    if isinstance(state, DensityMatrix):
        return state.data
    return np.asarray(state)


def expectation(op: Operator, state) -> complex:
    """<op> for a StateVector or tr(op rho) for a DensityMatrix."""
    if isinstance(state, StateVector):
        return complex(np.vdot(state.data, op.matrix @ state.data))
    rho = _as_matrix(state)
    # tr(A rho) = sum_ij A_ij rho_ji
    return complex(op.matrix.multiply(rho.T).sum())


def partial_trace(state, keep: Sequence[int]) -> DensityMatrix:
    """Reduce onto the factors in ``keep`` (0 = atom, k = mode k-1)."""
    rho = _as_matrix(state)
    dims = state.space.dims
    keep = sorted(set(keep))
    if not keep or any(not 0 <= k < len(dims) for k in keep):
        raise ValueError(f"invalid factor selection {keep}")
    n = len(dims)
    traced = [i for i in range(n) if i not in keep]
    t = rho.reshape(dims + dims)
    # trace out from the highest index down so axis numbers stay valid
    for i in sorted(traced, reverse=True):
        t = np.trace(t, axis1=i, axis2=i + t.ndim // 2)
    kd = tuple(dims[k] for k in keep)
    d = int(np.prod(kd))
    return DensityMatrix(ReducedSpace(kd, tuple(keep)), t.reshape(d, d))
