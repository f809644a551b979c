"""Coherent control under ``H = S (x) B``: decoupling, the three-step game and
the mutual-information memory witness.

Two orderings of control and free evolution are used:

* decoupling sequences evolve first and then apply the control, i.e. the
  joint operator is ``(C_n (x) 1) U ... (C_1 (x) 1) U``;
* the three-step game and :func:`multistep_scaling_parameters` follow the
  dilation convention of :mod:`qtraj.dilation`, where each control acts
  before the evolution that follows it.

All subspace labels ``(mu, mu')`` refer to the eigenbasis of ``S`` as stored
in :class:`qtraj.dilation.SpectralHamiltonian`.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .decomposition import EPS_LOG, EPS_SCALE, _populations
from .dilation import SpectralHamiltonian, dephasing_factor, reduced_channel
from .errors import BudgetExceededError, DimensionError, InvalidStateError
from .qcore import (
    QuantumChannel,
    check_density_matrix,
    fidelity_pure,
    mutual_information,
    partial_trace,
)
from .trajectories import CausalBreakBasis, ExpansionCoefficients, build_ic_basis


def shift_operator(d: int) -> np.ndarray:
    """Cyclic shift ``G`` with ``G[j, j+1 mod d] = 1``; ``G**d = 1``."""
    if d < 2:
        raise DimensionError("need d >= 2")
    return np.roll(np.eye(d, dtype=complex), 1, axis=1)


def _in_frame(u, frame) -> np.ndarray:
    """Operator given in the ``S`` eigenbasis, expressed in the computational basis."""
    return frame @ u @ frame.conj().T


def control_sequence_unitary(spec: SpectralHamiltonian, t: float, controls: Sequence,
                             evolve_first: bool = True) -> np.ndarray:
    """Joint unitary of alternating free evolution and system controls.

    Args:
        spec: product Hamiltonian.
        t: step time.
        controls: system unitaries written in the ``S`` eigenbasis.
        evolve_first: ``True`` for ``C_n U ... C_1 U``, ``False`` for
            ``U C_n ... U C_1``.
    """
    u = spec.unitary(t)
    eye_e = np.eye(spec.d_e)
    w = np.eye(spec.d * spec.d_e, dtype=complex)
    for c in controls:
        c = np.kron(_in_frame(np.asarray(c, dtype=complex), spec.s_basis), eye_e)
        w = (c @ u if evolve_first else u @ c) @ w
    return w


def run_decoupling_sequence(spec: SpectralHamiltonian, rho_e, t: float,
                            controls: Sequence | None = None) -> QuantumChannel:
    """Reduced map of a pulse sequence, evolving before each pulse.

    The default sequence applies the shift ``G`` after each of ``d``
    evolution steps, so the accumulated frames are ``G, G**2, ..., G**d``
    and every coherence sees each energy gap exactly once. The result is
    then a unitary channel.

    Args:
        spec: product Hamiltonian.
        rho_e: initial environment state.
        t: time between pulses.
        controls: optional list of system unitaries (``S`` eigenbasis).
    """
    if controls is None:
        controls = [shift_operator(spec.d)] * spec.d
    w = control_sequence_unitary(spec, t, controls, evolve_first=True)
    return reduced_channel(w, rho_e, spec.d, name="decoupling")


def _cycle_family(d: int) -> list:
    return [[(mu + r) % d for mu in range(d)] for r in range(1, d + 1)]


def decoupling_scaling_parameters(spec: SpectralHamiltonian, p_env, t: float,
                                  permutations: Sequence[Sequence[int]] | None = None) -> dict:
    """Scaling parameters of a permutation pulse sequence.

    ``ell[mu, mu'] = -1/2 ln |sum_{g g'} p_g p_g' cos(t sum_r Omega_{g g'}
    omega_{pi_r(mu) pi_r(mu')})|``. With the full cyclic family
    ``pi_r(mu) = mu + r mod d`` every gap sum vanishes and so does ``ell``.

    Args:
        spec: product Hamiltonian.
        p_env: environment populations or state.
        t: step time.
        permutations: list of index permutations ``pi_r``; defaults to the
            full cycle. A family that does not visit every level equally
            often triggers a warning.
    """
    d = spec.d
    perms = _cycle_family(d) if permutations is None else [list(p) for p in permutations]
    for p in perms:
        if sorted(p) != list(range(d)):
            raise ValueError(f"{p} is not a permutation of range({d})")
    counts = np.zeros((d, d), dtype=int)
    for p in perms:
        for mu in range(d):
            counts[mu, p[mu]] += 1
    if not np.all(counts == counts[0]):
        warnings.warn("permutation family is not balanced; scaling parameters need not vanish",
                      stacklevel=2)
    p = _populations(spec, p_env)
    big_omega = spec.b_values[:, None] - spec.b_values[None, :]
    s = spec.s_values
    pp = np.outer(p, p)
    out = {}
    for mu in range(d):
        for nu in range(mu, d):
            gap = sum(s[q[mu]] - s[q[nu]] for q in perms)
            val = float(np.sum(pp * np.cos(t * big_omega * gap)))
            out[(mu, nu)] = max(0.0, -0.5 * math.log(abs(val))) if abs(val) > EPS_LOG else math.inf
    return out


@dataclass(frozen=True, eq=False)
class ControlCoefficientTensor:
    """Per-step coefficients ``g[a][mu, nu, mu', nu'] = <mu|A_a(|nu><nu'|)|mu'>``.

    Indices refer to the ``S`` eigenbasis. Contracting against the transfer
    operators ``X -> |mu><nu| X |nu'><mu'|`` reproduces each control.
    """

    g: tuple

    @property
    def d(self) -> int:
        return self.g[0].shape[0]

    def __len__(self) -> int:
        return len(self.g)

    @classmethod
    def from_channels(cls, channels: Sequence[QuantumChannel],
                      frame=None) -> "ControlCoefficientTensor":
        """Coefficients of channels given in the computational basis.

        Args:
            channels: one map per step.
            frame: columns are the ``S`` eigenvectors (identity if omitted).
        """
        out = []
        for ch in channels:
            if frame is not None:
                ch = ch.conjugated(frame)
            d = ch.dim_in
            s = ch.superop.reshape(d, d, d, d)  # [mu, mu', nu, nu']
            out.append(np.ascontiguousarray(s.transpose(0, 2, 1, 3)))
        return cls(tuple(out))

    @classmethod
    def from_unitaries(cls, unitaries: Sequence) -> "ControlCoefficientTensor":
        """Coefficients of unitaries already written in the ``S`` eigenbasis."""
        return cls.from_channels([QuantumChannel.from_unitary(u) for u in unitaries])

    @classmethod
    def from_expansions(cls, expansions: Sequence[ExpansionCoefficients],
                        frame=None) -> "ControlCoefficientTensor":
        """``g = sum_lk a[l, k] f^(lk)`` with ``f^(lk)`` the coefficients of the causal breaks."""
        out = []
        for exp in expansions:
            basis = exp.basis
            d = basis.d
            g = np.zeros((d, d, d, d), dtype=complex)
            for l, k in itertools.product(range(basis.size), repeat=2):
                if exp.a[l, k] != 0.0:
                    f = cls.from_channels([basis.causal_break(l, k)], frame).g[0]
                    g += exp.a[l, k] * f
            out.append(g)
        return cls(tuple(out))

    @classmethod
    def shift_sequence(cls, d: int, steps: int | None = None) -> "ControlCoefficientTensor":
        """The shift ``G`` at every step (``d`` steps by default)."""
        steps = d if steps is None else steps
        return cls.from_unitaries([shift_operator(d)] * steps)

    def transfer_matrix(self, alpha: int) -> np.ndarray:
        """Step ``alpha`` as a ``(d**2, d**2)`` matrix from ``(nu, nu')`` to ``(mu, mu')``."""
        d = self.d
        return self.g[alpha].transpose(0, 2, 1, 3).reshape(d * d, d * d)

    def channel(self, alpha: int) -> QuantumChannel:
        """Rebuild step ``alpha`` as ``sum g P`` over the transfer operators."""
        d = self.d
        eye = np.eye(d)
        superop = np.zeros((d * d, d * d), dtype=complex)
        for mu, nu, mp, np_ in itertools.product(range(d), repeat=4):
            c = self.g[alpha][mu, nu, mp, np_]
            if c != 0:
                # X -> |mu><nu| X |nu'><mu'| = kron(|mu><nu|, (|nu'><mu'|)^T)
                superop += c * np.kron(np.outer(eye[mu], eye[nu]), np.outer(eye[mp], eye[np_]))
        return QuantumChannel(superop, d, d)


def sequence_branch_maps(spec: SpectralHamiltonian, coeffs: ControlCoefficientTensor,
                         t: float) -> np.ndarray:
    """Per-environment-level maps ``T_g = prod_a (Dphase_g G_a)`` in matrix-unit space.

    The control of each step acts first and is followed by the free
    evolution, whose phase ``exp(-i b_g omega_{mu mu'} t)`` accumulates
    additively over the steps.

    Returns:
        Array ``(d_e, d**2, d**2)`` mapping ``(nu, nu')`` to ``(mu, mu')``.
    """
    if coeffs.d != spec.d:
        raise DimensionError("control coefficients do not match the system dimension")
    omega = spec.omega().reshape(-1)
    out = []
    for b in spec.b_values:
        phase = np.exp(-1j * b * omega * t)
        m = np.eye(spec.d**2, dtype=complex)
        for alpha in range(len(coeffs)):
            m = phase[:, None] * (coeffs.transfer_matrix(alpha) @ m)
        out.append(m)
    return np.array(out)


def multistep_scaling_parameters(spec: SpectralHamiltonian, coeffs: ControlCoefficientTensor,
                                 rho_e, t: float, budget: int = 10**7) -> dict:
    """Scaling parameters of an interfered control sequence.

    For every output coherence ``(mu, mu')`` and input coherence
    ``(nu, nu')``: ``ell = -1/2 ln |sum_{g g'} p_g p_g' Re(X_g X_g'^*)|``,
    where ``X_g`` is the corresponding entry of the branch map ``T_g``. This
    is ``-ln`` of the modulus of the overall map entry. Entries the sequence
    cannot reach (``|X| <= 1e-12``) get ``inf``.

    Args:
        spec: product Hamiltonian.
        coeffs: control coefficients, one block per step.
        rho_e: environment state (only its ``B`` populations matter).
        t: step time.
        budget: cap on ``d_e * d**(4 (N-1))`` operations.

    Returns:
        ``(mu, nu, mu', nu') -> ell``.
    """
    work = spec.d_e * spec.d ** (4 * max(1, len(coeffs)))
    if work > budget:
        raise BudgetExceededError(f"{work} operations exceed the budget of {budget}")
    p = _populations(spec, rho_e)
    branch = sequence_branch_maps(spec, coeffs, t)
    d = spec.d
    overall = np.einsum("g,gij->ij", p, branch)
    gram = np.einsum("g,h,gij,hij->ij", p, p, branch, branch.conj()).real
    out = {}
    for mu, mp, nu, np_ in itertools.product(range(d), repeat=4):
        i, j = mu * d + mp, nu * d + np_
        if abs(overall[i, j]) <= EPS_SCALE or abs(gram[i, j]) <= EPS_LOG:
            out[(mu, nu, mp, np_)] = math.inf
        else:
            out[(mu, nu, mp, np_)] = max(0.0, -0.5 * math.log(abs(gram[i, j])))
    return out


def max_finite(ell: dict) -> float:
    """Largest finite value of a scaling-parameter map (0 if none)."""
    vals = [v for v in ell.values() if math.isfinite(v)]
    return max(vals) if vals else 0.0


def _pure_vector(rho1, tol=1e-10) -> np.ndarray:
    a = np.asarray(rho1, dtype=complex)
    if a.ndim == 1:
        n = np.linalg.norm(a)
        if abs(n - 1.0) > tol:
            raise InvalidStateError("state vector is not normalised")
        return a
    rho = check_density_matrix(a)
    w, v = np.linalg.eigh(rho)
    if abs(w[-1] - 1.0) > tol:
        raise InvalidStateError("the game needs a pure initial state")
    return v[:, -1]


@dataclass(frozen=True, eq=False)
class GameTranscript:
    """States and fidelities of one run of the three-step game.

    Attributes:
        psi1: Alice's pure state.
        rho2: state Bob receives.
        rho3: state Charlie receives.
        bob: label of Bob's operation.
        f: dephasing factor of the first step.
        fidelity_12, fidelity_13: fidelities of ``rho2`` and ``rho3`` with
            Alice's state.
        fidelity_formula: closed-form prediction for ``fidelity_12`` (qubits).
    """

    psi1: np.ndarray = field(repr=False)
    rho2: np.ndarray = field(repr=False)
    rho3: np.ndarray = field(repr=False)
    bob: str
    f: complex
    fidelity_12: float
    fidelity_13: float
    fidelity_formula: float | None

    @property
    def rho1(self) -> np.ndarray:
        return np.outer(self.psi1, self.psi1.conj())

    def fidelity_after(self, u) -> float:
        """``F(psi1, u rho3 u^dag)``: fidelity once Charlie undoes a fixed unitary."""
        u = np.asarray(u, dtype=complex)
        return fidelity_pure(self.psi1, u @ self.rho3 @ u.conj().T)


def dephasing_fidelity(psi, f: complex) -> float:
    """``1 - 2 |mu|^2 |nu|^2 (1 - Re f)`` for a qubit ``psi = (mu, nu)``."""
    psi = np.asarray(psi, dtype=complex)
    a, b = abs(psi[0]) ** 2, abs(psi[1]) ** 2
    return float(1.0 - 2.0 * a * b * (1.0 - f.real))


def three_step_game(rho1, bob: QuantumChannel, spec: SpectralHamiltonian, rho_e,
                    t: float) -> GameTranscript:
    """Alice prepares, the system evolves, Bob acts, it evolves again.

    ``rho2 = Tr_E U (rho1 (x) rho_e) U^dag`` and
    ``rho3 = Tr_E U (Bob (x) 1)[U (rho1 (x) rho_e) U^dag] U^dag``. States are
    in the computational basis; Bob's channel acts there too.

    Raises:
        InvalidStateError: if ``rho1`` is not pure.
    """
    psi = _pure_vector(rho1)
    d, d_e = spec.d, spec.d_e
    if psi.size != d or bob.dim_in != d or bob.dim_out != d:
        raise DimensionError("state and Bob's operation must act on the system")
    rho_e = check_density_matrix(rho_e)
    u = spec.unitary(t)
    omega = u @ np.kron(np.outer(psi, psi.conj()), rho_e) @ u.conj().T
    rho2 = partial_trace(omega, (d, d_e), keep="S")
    t4 = omega.reshape(d, d_e, d, d_e)
    s4 = bob.superop.reshape(d, d, d, d)
    omega = np.einsum("abst,setf->aebf", s4, t4).reshape(d * d_e, d * d_e)
    omega = u @ omega @ u.conj().T
    rho3 = partial_trace(omega, (d, d_e), keep="S")
    f_formula = None
    f = 1.0 + 0j
    if d == 2:
        gap = spec.s_values[0] - spec.s_values[1]
        f = dephasing_factor(spec, rho_e, t, omega=gap)
        f_formula = dephasing_fidelity(spec.s_basis.conj().T @ psi, f)
    return GameTranscript(psi, rho2, rho3, bob.name or "bob", f,
                          fidelity_pure(psi, rho2), fidelity_pure(psi, rho3), f_formula)


@dataclass(frozen=True, eq=False)
class MutualInfoResult:
    """Correlations between Bob's record and Charlie's system.

    Attributes:
        joint: state of Bob's register (first factor) and the system.
        I: mutual information in bits.
        mode: ``"quantum"``, ``"classical-strategy"`` or ``"markovian-reset"``.
        dims: ``(register dimension, system dimension)``.
    """

    joint: np.ndarray = field(repr=False)
    I: float
    mode: str
    dims: tuple


MODES = ("quantum", "classical-strategy", "markovian-reset")


def mutual_information_experiment(spec: SpectralHamiltonian, rho_e, rho1, rho2_prime=None,
                                  mode: str = "quantum", strategy=None,
                                  basis: CausalBreakBasis | None = None,
                                  reset_state=None, t: float = 1.0) -> MutualInfoResult:
    """Memory witness ``I(B:C)`` between Bob's record and the final system.

    The system evolves once; Bob then stores information about it in a
    local register and feeds ``rho2_prime`` back in; the system evolves
    again and the mutual information between the register and the system
    is computed.

    Modes:
        ``quantum``: Bob swaps the system into a ``d``-dimensional register.
        ``classical-strategy``: Bob measures with the basis POVM and stores
            the outcome ``k``. Without ``strategy`` he always reprepares
            ``rho2_prime``, which makes the record a measurement of the
            quantum register, so its information can only be lower. With
            ``strategy[l, k] = p(l|k)`` he reprepares ``R_l`` and stores
            ``(l, k)`` in a ``d**4``-dimensional register.
        ``markovian-reset``: as ``quantum`` but the environment is replaced
            by ``reset_state`` (default ``rho_e``) before Bob acts.

    Args:
        spec: product Hamiltonian.
        rho_e: initial environment state.
        rho1: initial system state.
        rho2_prime: state Bob feeds back; the maximally mixed state by
            default.
        mode: one of :data:`MODES`.
        strategy: optional column-stochastic ``(d**2, d**2)`` matrix.
        basis: causal-break basis for the classical mode.
        reset_state: environment reset state for ``markovian-reset``.
        t: step time.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    d, d_e = spec.d, spec.d_e
    rho1 = check_density_matrix(rho1)
    rho_e = check_density_matrix(rho_e)
    rho2p = np.eye(d, dtype=complex) / d if rho2_prime is None else check_density_matrix(rho2_prime)
    if rho1.shape != (d, d) or rho2p.shape != (d, d) or rho_e.shape != (d_e, d_e):
        raise DimensionError("state dimensions do not match the Hamiltonian")
    u = spec.unitary(t)
    omega2 = u @ np.kron(rho1, rho_e) @ u.conj().T
    t4 = omega2.reshape(d, d_e, d, d_e)

    def second_step(sys_state, env_op):
        # Tr_E U (sys_state (x) env_op) U^dag, linear in env_op
        w = u @ np.kron(sys_state, env_op) @ u.conj().T
        return partial_trace(w, (d, d_e), keep="S")

    if mode in ("quantum", "markovian-reset"):
        if mode == "markovian-reset":
            tau = rho_e if reset_state is None else check_density_matrix(reset_state)
            rho2 = np.einsum("sete->st", t4)
            t4 = np.kron(rho2, tau).reshape(d, d_e, d, d_e)
            d_e_eff = tau.shape[0]
        else:
            d_e_eff = d_e
        # swap the system into register B and inject rho2'
        bse = np.einsum("setf,xy->sxetyf", t4, rho2p).reshape(d * d * d_e_eff, d * d * d_e_eff)
        u_full = np.kron(np.eye(d), u)
        bse = u_full @ bse @ u_full.conj().T
        joint = partial_trace(bse, (d, d, d_e_eff), keep=(0, 1))
        dims = (d, d)
    else:
        basis = build_ic_basis(d) if basis is None else basis
        sigma = np.einsum("kts,setf->kef", basis.povm, t4)
        if strategy is None:
            n = basis.size
            joint = np.zeros((n * d, n * d), dtype=complex)
            for k in range(n):
                blk = second_step(rho2p, sigma[k])
                joint[k * d:(k + 1) * d, k * d:(k + 1) * d] = blk
            dims = (n, d)
        else:
            strat = np.asarray(strategy, dtype=float)
            n = basis.size
            if strat.shape != (n, n) or (strat < -1e-12).any() or \
                    np.max(np.abs(strat.sum(axis=0) - 1)) > 1e-10:
                raise ValueError("strategy must be a column-stochastic d**2 x d**2 matrix")
            joint = np.zeros((n * n * d, n * n * d), dtype=complex)
            for l, k in itertools.product(range(n), repeat=2):
                if strat[l, k] == 0:
                    continue
                blk = strat[l, k] * second_step(basis.reps[l], sigma[k])
                i = (l * n + k) * d
                joint[i:i + d, i:i + d] = blk
            dims = (n * n, d)
    joint = 0.5 * (joint + joint.conj().T)
    # entropies of exact product states can come out at -1e-16
    info = max(0.0, mutual_information(joint, dims))
    return MutualInfoResult(joint, float(info), mode, dims)
