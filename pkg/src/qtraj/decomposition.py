"""Gell-Mann representation of channels and scaling-unitary decomposition.

A unital trace-preserving map has a real matrix ``M = 1 (+) Mt`` in an
orthonormal Hermitian operator basis. The polar factorisation
``Mt = D O`` splits it into a symmetric positive *scaling* part and an
orthogonal *rotation*. For a coherence subspace ``(mu, mu')`` the scaling
parameter ``ell = -ln |shrink factor|`` measures irreversible loss;
``ell = 0`` everywhere means the map is unitary.

Labels ``(mu, mu')`` refer to the computational basis of the channel's
Hilbert space. Express channels in the eigenbasis of the system operator
first (``QuantumChannel.conjugated``) to get the physically meaningful
subspaces.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    FormulaApplicabilityError,
    NonHermiticityPreservingError,
    NonUnitalError,
)
from .qcore import QuantumChannel, linear_entropy

#: Guard applied before taking the logarithm of a cosine sum.
EPS_LOG = 1e-300
#: Shrink factors below this count as a destroyed subspace.
EPS_SCALE = 1e-12


@dataclass(frozen=True, eq=False)
class GellMannBasis:
    """Orthonormal Hermitian operator basis ``f_0 = 1/sqrt(d), f_1, ...``.

    Ordering: ``f_0``; then for each pair ``j < k`` (lexicographic) the
    symmetric and antisymmetric elements; then the ``d - 1`` diagonal ones.

    Attributes:
        d: Hilbert space dimension.
        elements: ``(d**2, d, d)`` array with ``Tr(f_a f_b) = delta_ab``.
        pair_index: ``(j, k) -> (symmetric index, antisymmetric index)``.
        diagonal_indices: indices of the traceless diagonal elements.
    """

    d: int
    elements: np.ndarray = field(repr=False)
    pair_index: dict = field(repr=False)
    diagonal_indices: tuple = field(repr=False)

    def __len__(self) -> int:
        return self.d * self.d

    def bloch_vector(self, rho) -> np.ndarray:
        """Real coordinates ``x_a = Tr(f_a rho)`` for ``a >= 1``."""
        rho = np.asarray(rho, dtype=complex)
        return np.einsum("aij,ji->a", self.elements[1:], rho).real

    def state(self, bloch) -> np.ndarray:
        """Inverse of :meth:`bloch_vector` for unit-trace operators."""
        x = np.asarray(bloch, dtype=float)
        return np.eye(self.d) / self.d + np.einsum("a,aij->ij", x, self.elements[1:])


def gell_mann_basis(d: int) -> GellMannBasis:
    """Generalised Gell-Mann basis, normalised so that ``Tr(f_a f_b) = delta_ab``."""
    if d < 2:
        raise DimensionError("need d >= 2")
    elems = [np.eye(d, dtype=complex) / math.sqrt(d)]
    pair_index = {}
    for j, k in itertools.combinations(range(d), 2):
        s = np.zeros((d, d), dtype=complex)
        s[j, k] = s[k, j] = 1 / math.sqrt(2)
        a = np.zeros((d, d), dtype=complex)
        a[j, k] = -1j / math.sqrt(2)
        a[k, j] = 1j / math.sqrt(2)
        pair_index[(j, k)] = (len(elems), len(elems) + 1)
        elems += [s, a]
    diag = []
    for l in range(1, d):
        v = np.zeros(d)
        v[:l] = 1.0
        v[l] = -l
        diag.append(len(elems))
        elems.append(np.diag(v / math.sqrt(l * (l + 1))).astype(complex))
    arr = np.array(elems)
    arr.setflags(write=False)
    return GellMannBasis(d, arr, pair_index, tuple(diag))


@dataclass(frozen=True, eq=False)
class ChannelMatrixRep:
    """Real matrix ``M[a, b] = Tr(f_a Phi(f_b))`` of a channel."""

    M: np.ndarray
    basis: GellMannBasis = field(repr=False)

    @property
    def block(self) -> np.ndarray:
        """The ``(d**2 - 1)``-square block acting on traceless operators."""
        return self.M[1:, 1:]

    @property
    def translation(self) -> np.ndarray:
        return self.M[1:, 0]


def channel_matrix(ch: QuantumChannel, basis: GellMannBasis | None = None,
                   tol: float = 1e-10) -> ChannelMatrixRep:
    """Matrix representation in a Gell-Mann basis.

    Raises:
        NonHermiticityPreservingError: if ``M`` has an imaginary part above
            ``tol``.
    """
    if ch.dim_in != ch.dim_out:
        raise DimensionError("channel must map a space to itself")
    basis = gell_mann_basis(ch.dim_in) if basis is None else basis
    if basis.d != ch.dim_in:
        raise DimensionError("basis dimension does not match the channel")
    f = basis.elements
    images = (f.reshape(len(f), -1) @ ch.superop.T).reshape(f.shape)
    m = np.einsum("aij,bji->ab", f, images)
    if np.max(np.abs(m.imag)) > tol:
        raise NonHermiticityPreservingError(
            f"channel matrix has imaginary part {np.max(np.abs(m.imag)):.3e}"
        )
    return ChannelMatrixRep(m.real, basis)


def channel_from_matrix(m, basis: GellMannBasis) -> QuantumChannel:
    """Inverse of :func:`channel_matrix`."""
    f = basis.elements.reshape(len(basis), -1)
    ft = basis.elements.transpose(0, 2, 1).reshape(len(basis), -1)
    superop = np.einsum("ab,ai,bj->ij", np.asarray(m, dtype=float), f, ft)
    return QuantumChannel(superop, basis.d, basis.d)


def _embed(block) -> np.ndarray:
    n = block.shape[0] + 1
    m = np.eye(n)
    m[1:, 1:] = block
    return m


@dataclass(frozen=True, eq=False)
class ScalingUnitaryDecomposition:
    """``Mt = D O`` with scaling parameters and phases per subspace.

    Attributes:
        D: symmetric positive semidefinite scaling block.
        O: orthogonal block.
        ell: ``(mu, mu') -> ell`` for ``mu <= mu'``; ``inf`` for destroyed
            subspaces.
        phi: ``(mu, mu') -> phase`` in ``(-pi, pi]``; NaN if undefined.
    """

    D: np.ndarray
    O: np.ndarray
    ell: dict
    phi: dict
    basis: GellMannBasis = field(repr=False)

    def scaling_channel(self) -> QuantumChannel:
        return channel_from_matrix(_embed(self.D), self.basis)

    def rotation_channel(self) -> QuantumChannel:
        return channel_from_matrix(_embed(self.O), self.basis)

    def max_ell(self, off_diagonal_only: bool = False) -> float:
        vals = [v for (a, b), v in self.ell.items() if not (off_diagonal_only and a == b)]
        return max(vals) if vals else 0.0

    def to_json(self) -> dict:
        return {
            "D": self.D.tolist(),
            "O": self.O.tolist(),
            "ell": [[list(k), _num(v)] for k, v in sorted(self.ell.items())],
            "phi": [[list(k), _num(v)] for k, v in sorted(self.phi.items())],
        }


def _num(x):
    """JSON-safe float: ``inf`` becomes the string ``"inf"``, NaN becomes null."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def _wrap_phase(x: float) -> float:
    """Wrap to ``(-pi, pi]``."""
    y = math.atan2(math.sin(x), math.cos(x))
    return math.pi if y <= -math.pi else y


def scaling_unitary_decompose(rep: ChannelMatrixRep, tol: float = 1e-9) -> ScalingUnitaryDecomposition:
    """Polar decomposition of the traceless block of a unital channel.

    With the SVD ``Mt = U S V^T`` the factors are ``D = U S U^T`` and
    ``O = U V^T``. For a singular ``Mt`` the SVD completes the null
    directions deterministically and ``O`` stays orthogonal.

    Raises:
        NonUnitalError: if the translation column exceeds ``tol``.
        ValueError: if the map is not trace preserving.
    """
    m = rep.M
    if abs(m[0, 0] - 1.0) > tol or np.max(np.abs(m[0, 1:]), initial=0.0) > tol:
        raise ValueError("channel is not trace preserving")
    if np.max(np.abs(rep.translation), initial=0.0) > tol:
        raise NonUnitalError(
            f"translation part {np.max(np.abs(rep.translation)):.3e} is nonzero"
        )
    u, s, vt = np.linalg.svd(rep.block)
    dmat = (u * s) @ u.T
    dmat = 0.5 * (dmat + dmat.T)
    omat = u @ vt

    basis = rep.basis
    d = basis.d
    scale_ch = channel_from_matrix(_embed(dmat), basis)
    rot_ch = channel_from_matrix(_embed(omat), basis)
    ell, phi = {}, {}
    for mu in range(d):
        for nu in range(mu, d):
            e = np.zeros((d, d), dtype=complex)
            e[mu, nu] = 1.0
            c = scale_ch(e)[mu, nu]
            ell[(mu, nu)] = -math.log(abs(c)) + 0.0 if abs(c) > EPS_SCALE else math.inf
            r = rot_ch(e)[mu, nu]
            # O is arbitrary on a destroyed subspace, so its phase carries no meaning
            defined = abs(r) > EPS_SCALE and math.isfinite(ell[(mu, nu)])
            phi[(mu, nu)] = _wrap_phase(math.atan2(r.imag, r.real)) if defined else math.nan
    return ScalingUnitaryDecomposition(dmat, omat, ell, phi, basis)


def decompose_channel(ch: QuantumChannel, tol: float = 1e-9) -> ScalingUnitaryDecomposition:
    """Shorthand for ``scaling_unitary_decompose(channel_matrix(ch))``."""
    return scaling_unitary_decompose(channel_matrix(ch), tol)


def _populations(spec, p_env) -> np.ndarray:
    p = np.asarray(p_env)
    if p.ndim == 2:
        p = spec.env_populations(p)
    p = np.asarray(p, dtype=float)
    if p.shape != (spec.d_e,):
        raise DimensionError("need one environment probability per B eigenvalue")
    if (p < -1e-12).any() or abs(p.sum() - 1.0) > 1e-10:
        raise ValueError("environment weights are not a probability vector")
    return p


def conditional_scaling_parameters(spec, p_env, t: float) -> dict:
    """Closed-form scaling parameters of a product-Hamiltonian step.

    ``ell[mu, mu'] = -1/2 ln |sum_{g g'} p_g p_g' cos(Omega_{g g'} omega_{mu mu'} t)|``
    with ``Omega_{g g'} = b_g - b_g'`` and ``omega_{mu mu'} = s_mu - s_mu'``.

    Args:
        spec: :class:`qtraj.dilation.SpectralHamiltonian`.
        p_env: environment populations in the ``B`` eigenbasis, or the
            environment state itself.
        t: step time.

    Returns:
        ``(mu, mu') -> ell`` for ``mu <= mu'``; ``inf`` when the cosine sum
        underflows ``EPS_LOG``.
    """
    p = _populations(spec, p_env)
    omega = spec.omega()
    big_omega = spec.b_values[:, None] - spec.b_values[None, :]
    pp = np.outer(p, p)
    out = {}
    for mu in range(spec.d):
        for nu in range(mu, spec.d):
            s = float(np.sum(pp * np.cos(big_omega * omega[mu, nu] * t)))
            out[(mu, nu)] = max(0.0, -0.5 * math.log(abs(s))) if abs(s) > EPS_LOG else math.inf
    return out


def conditional_phase_parameters(spec, p_env, t: float) -> dict:
    """Phases ``phi[mu, mu'] = atan2(-sum p sin(b w t), sum p cos(b w t))``.

    This is the argument of the coherence multiplier
    ``sum_g p_g exp(-i b_g omega_{mu mu'} t)``, wrapped to ``(-pi, pi]``;
    NaN where the multiplier vanishes.
    """
    p = _populations(spec, p_env)
    omega = spec.omega()
    out = {}
    for mu in range(spec.d):
        for nu in range(mu, spec.d):
            arg = spec.b_values * omega[mu, nu] * t
            re, im = float(np.sum(p * np.cos(arg))), -float(np.sum(p * np.sin(arg)))
            if re * re + im * im <= EPS_LOG:
                out[(mu, nu)] = math.nan
            else:
                out[(mu, nu)] = _wrap_phase(math.atan2(im, re))
    return out


def linear_entropy_from_scaling(ell: dict, bloch, channel: QuantumChannel | None = None,
                                tol: float = 1e-9) -> float:
    """Linear entropy after a map that shrinks each coherence subspace.

    ``S_L = (d-1)/d - sum_{mu<mu'} e^{-2 ell[mu,mu']} |x_{mu mu'}|^2
    - e^{-2 ell_diag} |x_diag|^2`` where ``x_{mu mu'}`` are the two Bloch
    components of the pair and ``x_diag`` the diagonal ones.

    Args:
        ell: scaling parameters keyed by ``(mu, mu')``; all diagonal entries
            must agree.
        bloch: Bloch vector of the input state in :func:`gell_mann_basis`
            order.
        channel: if given, the result is checked against the linear entropy
            of ``channel`` applied to the state.
        tol: agreement tolerance for that check.

    Raises:
        FormulaApplicabilityError: if the check fails.
    """
    x = np.asarray(bloch, dtype=float)
    d = int(round(math.sqrt(x.size + 1)))
    if d * d - 1 != x.size:
        raise DimensionError("Bloch vector length must be d**2 - 1")
    basis = gell_mann_basis(d)
    diag_ell = {ell.get((m, m), 0.0) for m in range(d)}
    if len(diag_ell) > 1:
        raise ValueError("diagonal scaling parameters differ; the closed form does not apply")
    l_diag = diag_ell.pop()
    s = (d - 1) / d
    for (j, k), (a, b) in basis.pair_index.items():
        s -= math.exp(-2 * ell[(j, k)]) * (x[a - 1] ** 2 + x[b - 1] ** 2)
    s -= math.exp(-2 * l_diag) * sum(x[i - 1] ** 2 for i in basis.diagonal_indices)
    if channel is not None:
        direct = linear_entropy(channel(basis.state(x)))
        if abs(direct - s) > tol:
            raise FormulaApplicabilityError(
                f"closed form gives {s:.12g}, direct computation {direct:.12g}"
            )
    return s
