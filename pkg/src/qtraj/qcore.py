"""Dense linear algebra and state primitives for small Hilbert spaces.

Conventions used throughout the package:

* Operators are dense ``complex128`` numpy arrays.
* Superoperators act on row-major vectorised operators, so that
  ``vec(A X B) = kron(A, B.T) @ vec(X)`` with ``vec(X) = X.reshape(-1)``.
* The Choi matrix of a map ``Phi`` is ``sum_ij |i><j| (x) Phi(|i><j|)``
  (input factor first).
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DimensionError,
    DimensionLimitError,
    InvalidStateError,
    NonHermitianError,
)

__all__ = [
    "Tolerances",
    "DEFAULT_TOL",
    "MAX_DIM",
    "PAULI_X",
    "PAULI_Y",
    "PAULI_Z",
    "ket",
    "projector",
    "check_density_matrix",
    "check_povm_element",
    "tensor_product",
    "partial_trace",
    "hermitian_evolve",
    "QuantumChannel",
    "apply_channel",
    "apply_to_subsystem",
    "fidelity_pure",
    "von_neumann_entropy",
    "linear_entropy",
    "trace_distance",
    "mutual_information",
]


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances for validity checks.

    Attributes:
        herm: max absolute entry of ``A - A^dagger`` for Hermiticity.
        trace: allowed deviation of a trace from its target value.
        psd: allowed negative eigenvalue magnitude.
        unitary: max absolute entry of ``U U^dagger - 1``.
    """

    herm: float = 1e-10
    trace: float = 1e-10
    psd: float = 1e-9
    unitary: float = 1e-10


DEFAULT_TOL = Tolerances()

#: Largest matrix dimension any tensor product may produce.
MAX_DIM = 1024

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def ket(d: int, i: int) -> np.ndarray:
    """Computational basis vector ``|i>`` of dimension ``d``."""
    v = np.zeros(d, dtype=complex)
    v[i] = 1.0
    return v


def projector(psi) -> np.ndarray:
    """Rank-one projector ``|psi><psi|`` (``psi`` is normalised first)."""
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def _as_square(m, name="matrix") -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidStateError(f"{name} has non-finite entries")
    return m


def _is_hermitian(m: np.ndarray, tol: float) -> bool:
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol)


def check_density_matrix(rho, tol: Tolerances = DEFAULT_TOL, weight: float = 1.0) -> np.ndarray:
    """Validate a density matrix and return it as a complex array.

    Args:
        rho: candidate matrix.
        tol: tolerances for the Hermiticity, trace and positivity checks.
        weight: expected trace. Sub-normalised states are normally kept at
            unit trace with their probability carried separately; pass the
            weight here to validate an unnormalised matrix instead.

    Raises:
        InvalidStateError: if any check fails.
    """
    rho = _as_square(rho, "density matrix")
    if not _is_hermitian(rho, tol.herm):
        raise InvalidStateError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - weight) > tol.trace:
        raise InvalidStateError(f"density matrix has trace {tr!r}, expected {weight!r}")
    lam_min = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lam_min < -tol.psd:
        raise InvalidStateError(f"density matrix has negative eigenvalue {lam_min:.3e}")
    return rho


def check_povm_element(m, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Validate ``0 <= m <= 1`` and return ``m`` as a complex array."""
    m = _as_square(m, "POVM element")
    if not _is_hermitian(m, tol.herm):
        raise InvalidStateError("POVM element is not Hermitian")
    lam = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    if lam[0] < -tol.psd or lam[-1] > 1 + tol.psd:
        raise InvalidStateError("POVM element eigenvalues outside [0, 1]")
    return m


def tensor_product(a, b, max_dim: int = MAX_DIM) -> np.ndarray:
    """Kronecker product ``a (x) b``.

    Raises:
        DimensionLimitError: if either output dimension exceeds ``max_dim``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    b = np.atleast_2d(np.asarray(b, dtype=complex))
    rows, cols = a.shape[0] * b.shape[0], a.shape[1] * b.shape[1]
    if max(rows, cols) > max_dim:
        raise DimensionLimitError(f"product dimension {rows}x{cols} exceeds limit {max_dim}")
    return np.kron(a, b)


def _keep_axes(dims: Sequence[int], keep) -> tuple[int, ...]:
    if isinstance(keep, str):
        if len(dims) != 2:
            raise DimensionError("subsystem tags 'S'/'E' need exactly two factors")
        try:
            return ({"S": 0, "E": 1}[keep.upper()],)
        except KeyError:
            raise DimensionError(f"unknown subsystem tag {keep!r}") from None
    if isinstance(keep, (int, np.integer)):
        keep = (int(keep),)
    keep = tuple(sorted(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise DimensionError(f"keep={keep} out of range for {len(dims)} factors")
    return keep


def partial_trace(m, dims: Sequence[int], keep="S") -> np.ndarray:
    """Trace out every factor of ``m`` not listed in ``keep``.

    Args:
        m: operator on ``prod(dims)``.
        dims: factor dimensions, e.g. ``(d_S, d_E)``.
        keep: ``"S"``/``"E"`` for a bipartite split, or the index (or
            indices) of the factors to keep.
    """
    dims = tuple(int(x) for x in dims)
    m = np.asarray(m, dtype=complex)
    n = int(np.prod(dims))
    if m.shape != (n, n):
        raise DimensionError(f"operator of shape {m.shape} does not match dims {dims}")
    keep = _keep_axes(dims, keep)
    letters = string.ascii_letters
    k = len(dims)
    row = list(letters[:k])
    col = list(letters[k : 2 * k])
    for ax in range(k):
        if ax not in keep:
            col[ax] = row[ax]
    out = "".join(row[ax] for ax in keep) + "".join(col[ax] for ax in keep)
    t = np.einsum("".join(row) + "".join(col) + "->" + out, m.reshape(dims + dims))
    dk = int(np.prod([dims[ax] for ax in keep]))
    return t.reshape(dk, dk)


def hermitian_evolve(h, t: float, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Return ``exp(-i h t)`` via the spectral decomposition of ``h``.

    Raises:
        NonHermitianError: if ``h`` is not Hermitian within ``tol.herm``.
    """
    h = _as_square(h, "generator")
    if not _is_hermitian(h, tol.herm):
        raise NonHermitianError("generator is not Hermitian")
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def _superop_from_kraus(kraus) -> np.ndarray:
    return sum(np.kron(k, k.conj()) for k in kraus)


class QuantumChannel:
    """Linear map on operators, stored as a superoperator matrix.

    Instances are immutable. Channels built from Kraus operators keep them;
    otherwise Kraus operators are derived on demand from the Choi matrix
    (which requires complete positivity).

    Args:
        superop: ``(dim_out**2, dim_in**2)`` matrix in the row-major
            vectorisation convention.
        dim_in, dim_out: input/output Hilbert space dimensions.
        kraus: optional Kraus operators consistent with ``superop``.
        name: free-form label used in reports.
    """

    __slots__ = ("superop", "dim_in", "dim_out", "_kraus", "name")

    def __init__(self, superop, dim_in: int, dim_out: int, kraus=None, name: str = ""):
        s = np.array(superop, dtype=complex)
        if s.shape != (dim_out * dim_out, dim_in * dim_in):
            raise DimensionError(
                f"superoperator shape {s.shape} does not match dims {dim_in}->{dim_out}"
            )
        s.setflags(write=False)
        object.__setattr__(self, "superop", s)
        object.__setattr__(self, "dim_in", int(dim_in))
        object.__setattr__(self, "dim_out", int(dim_out))
        if kraus is not None:
            kraus = tuple(np.array(k, dtype=complex) for k in kraus)
            for k in kraus:
                k.setflags(write=False)
        object.__setattr__(self, "_kraus", kraus)
        object.__setattr__(self, "name", name)

    def __setattr__(self, key, value):
        raise AttributeError("QuantumChannel is immutable")

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<QuantumChannel{label} {self.dim_in}->{self.dim_out}>"

    @classmethod
    def from_kraus(cls, kraus, name: str = "") -> "QuantumChannel":
        kraus = [np.atleast_2d(np.asarray(k, dtype=complex)) for k in kraus]
        if not kraus:
            raise DimensionError("at least one Kraus operator is required")
        dout, din = kraus[0].shape
        if any(k.shape != (dout, din) for k in kraus):
            raise DimensionError("Kraus operators have inconsistent shapes")
        return cls(_superop_from_kraus(kraus), din, dout, kraus=kraus, name=name)

    @classmethod
    def from_unitary(cls, u, name: str = "") -> "QuantumChannel":
        return cls.from_kraus([u], name=name)

    @classmethod
    def identity(cls, d: int) -> "QuantumChannel":
        return cls.from_unitary(np.eye(d), name="identity")

    @classmethod
    def from_choi(cls, choi, dim_in: int, dim_out: int, name: str = "") -> "QuantumChannel":
        j = np.asarray(choi, dtype=complex).reshape(dim_in, dim_out, dim_in, dim_out)
        s = j.transpose(1, 3, 0, 2).reshape(dim_out**2, dim_in**2)
        return cls(s, dim_in, dim_out, name=name)

    @property
    def choi(self) -> np.ndarray:
        s = self.superop.reshape(self.dim_out, self.dim_out, self.dim_in, self.dim_in)
        n = self.dim_in * self.dim_out
        return s.transpose(2, 0, 3, 1).reshape(n, n)

    @property
    def kraus(self) -> tuple[np.ndarray, ...]:
        """Kraus operators (derived from the Choi matrix when not supplied)."""
        if self._kraus is not None:
            return self._kraus
        j = self.choi
        w, v = np.linalg.eigh(0.5 * (j + j.conj().T))
        if w[0] < -DEFAULT_TOL.psd * max(1.0, abs(w[-1])):
            raise InvalidStateError("map is not completely positive; no Kraus form")
        ops = []
        for lam, vec in zip(w, v.T):
            if lam > 1e-14:
                ops.append(np.sqrt(lam) * vec.reshape(self.dim_in, self.dim_out).T)
        if not ops:
            ops = [np.zeros((self.dim_out, self.dim_in), dtype=complex)]
        return tuple(ops)

    @property
    def has_kraus(self) -> bool:
        return self._kraus is not None

    def is_cp(self, tol: float = DEFAULT_TOL.psd) -> bool:
        j = self.choi
        return bool(np.linalg.eigvalsh(0.5 * (j + j.conj().T))[0] >= -tol)

    def is_tp(self, tol: float = DEFAULT_TOL.trace) -> bool:
        # Tr Phi(X) = vec(1)^T S vec(X) for every X  <=>  vec(1)^T S = vec(1)^T
        lhs = np.eye(self.dim_out).reshape(-1) @ self.superop
        return bool(np.max(np.abs(lhs - np.eye(self.dim_in).reshape(-1))) <= tol)

    def is_unital(self, tol: float = DEFAULT_TOL.trace) -> bool:
        out = self(np.eye(self.dim_in) / self.dim_in)
        return bool(np.max(np.abs(out - np.eye(self.dim_out) / self.dim_in)) <= tol)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        if x.shape != (self.dim_in, self.dim_in):
            raise DimensionError(f"operator of shape {x.shape} does not match channel input")
        return (self.superop @ x.reshape(-1)).reshape(self.dim_out, self.dim_out)

    def compose(self, first: "QuantumChannel") -> "QuantumChannel":
        """Return ``self o first`` (apply ``first``, then ``self``)."""
        if first.dim_out != self.dim_in:
            raise DimensionError("cannot compose channels with mismatched dimensions")
        kraus = None
        if self.has_kraus and first.has_kraus:
            kraus = [a @ b for a in self.kraus for b in first.kraus]
        return QuantumChannel(
            self.superop @ first.superop, first.dim_in, self.dim_out, kraus=kraus
        )

    def conjugated(self, v) -> "QuantumChannel":
        """The same map written in the basis given by the columns of ``v``.

        Returns ``X -> v^dag Phi(v X v^dag) v``.
        """
        v = np.asarray(v, dtype=complex)
        pre = np.kron(v, v.conj())
        post = np.kron(v.conj().T, v.T)
        kraus = [v.conj().T @ k @ v for k in self._kraus] if self.has_kraus else None
        return QuantumChannel(post @ self.superop @ pre, self.dim_in, self.dim_out, kraus=kraus,
                              name=self.name)


def apply_channel(ch: QuantumChannel, rho, use_kraus: bool | None = None) -> np.ndarray:
    """Apply ``ch`` to ``rho``.

    By default the Kraus path is used when Kraus operators were supplied at
    construction and the superoperator path otherwise.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (ch.dim_in, ch.dim_in):
        raise DimensionError(f"state of shape {rho.shape} does not match channel input {ch.dim_in}")
    if use_kraus is None:
        use_kraus = ch.has_kraus
    if use_kraus:
        return sum(k @ rho @ k.conj().T for k in ch.kraus)
    return ch(rho)


def apply_to_subsystem(ch: QuantumChannel, rho, dims: Sequence[int], which: int) -> np.ndarray:
    """Apply ``ch`` to factor ``which`` of a multipartite operator.

    Works for any linear map (no positivity needed), so linear
    combinations of causal breaks can be pushed through dilations.
    """
    dims = tuple(int(x) for x in dims)
    if dims[which] != ch.dim_in:
        raise DimensionError(f"factor {which} has dimension {dims[which]}, channel expects {ch.dim_in}")
    k = len(dims)
    t = np.asarray(rho, dtype=complex).reshape(dims + dims)
    s = ch.superop.reshape(ch.dim_out, ch.dim_out, ch.dim_in, ch.dim_in)
    t = np.tensordot(s, t, axes=([2, 3], [which, k + which]))
    # result axes: (out_row, out_col, remaining rows..., remaining cols...)
    rest = [ax for ax in range(k) if ax != which]
    order = [0] * (2 * k)
    for pos, ax in enumerate(rest):
        order[ax] = 2 + pos
        order[k + ax] = 2 + (k - 1) + pos
    order[which] = 0
    order[k + which] = 1
    t = np.transpose(t, order)
    new_dims = list(dims)
    new_dims[which] = ch.dim_out
    n = int(np.prod(new_dims))
    return t.reshape(n, n)


def fidelity_pure(psi, rho, tol: Tolerances = DEFAULT_TOL) -> float:
    """Fidelity ``<psi|rho|psi>`` of a state with a pure reference.

    Raises:
        InvalidStateError: if ``psi`` is not normalised.
    """
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    if abs(np.vdot(psi, psi).real - 1.0) > tol.trace:
        raise InvalidStateError("reference vector is not normalised")
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (psi.size, psi.size):
        raise DimensionError("state and reference vector have different dimensions")
    f = np.vdot(psi, rho @ psi).real
    return float(min(1.0, max(0.0, f)))


def _spectrum(rho, tol: Tolerances) -> np.ndarray:
    rho = check_density_matrix(rho, tol)
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    return np.clip(lam, 0.0, None)


def von_neumann_entropy(rho, base: float = 2, tol: Tolerances = DEFAULT_TOL) -> float:
    """``-Tr rho log rho`` with the convention ``0 log 0 = 0`` (bits by default)."""
    lam = _spectrum(rho, tol)
    lam = lam[lam > 0]
    s = -np.sum(lam * np.log(lam)) / np.log(base)
    return float(max(s, 0.0))


def linear_entropy(rho, tol: Tolerances = DEFAULT_TOL) -> float:
    """``1 - Tr rho^2``."""
    rho = check_density_matrix(rho, tol)
    return float(1.0 - np.sum(np.abs(rho) ** 2))


def trace_distance(a, b) -> float:
    """Half the trace norm of ``a - b`` (both Hermitian)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise DimensionError(f"shapes {a.shape} and {b.shape} differ")
    diff = a - b
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))


def mutual_information(rho, dims: Sequence[int], base: float = 2, tol: Tolerances = DEFAULT_TOL) -> float:
    """``S(A) + S(B) - S(AB)`` for a bipartite state with ``dims = (d_A, d_B)``."""
    rho = check_density_matrix(rho, tol)
    s_a = von_neumann_entropy(partial_trace(rho, dims, 0), base, tol)
    s_b = von_neumann_entropy(partial_trace(rho, dims, 1), base, tol)
    return s_a + s_b - von_neumann_entropy(rho, base, tol)
