"""System-environment dilations, conditional maps and Markovianity tests.

A :class:`DilatedProcess` is the ground-truth model: a joint initial state
and one joint unitary per time step. Controls act on the system factor
*before* each unitary, so with controls ``A_1 .. A_{N-1}`` the final joint
state is ``U_{N-1} A_{N-1} ... U_1 A_1 [rho_SE]``.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import BudgetExceededError, DimensionError, InvalidStateError, UndefinedConditionalError
from .qcore import (
    DEFAULT_TOL,
    QuantumChannel,
    apply_to_subsystem,
    check_density_matrix,
    hermitian_evolve,
    partial_trace,
)
from .trajectories import CausalBreakBasis, build_ic_basis, causal_break_joint, max_trajectories

log = logging.getLogger(__name__)

#: Histories less likely than this are treated as impossible.
MIN_HISTORY_PROB = 1e-12


def _eig_grouped(values, vectors, tol=1e-10):
    """Group eigenvectors into ``(value, projector)`` pairs by eigenvalue."""
    order = np.argsort(values, kind="stable")
    groups = []
    for i in order:
        if groups and abs(values[i] - groups[-1][0]) <= tol:
            groups[-1][1].append(i)
        else:
            groups.append((values[i], [i]))
    return [(float(v), vectors[:, idx] @ vectors[:, idx].conj().T) for v, idx in groups]


def _spectrum_from(spec, name):
    """Eigenvalues and eigenbasis (columns) from any accepted spectrum form.

    Accepted forms: a 1-D array of eigenvalues (diagonal operator), a
    Hermitian matrix, or a list of ``(value, projector)`` pairs.
    """
    if isinstance(spec, (list, tuple)) and spec and isinstance(spec[0], (list, tuple)) \
            and len(spec[0]) == 2 and np.ndim(spec[0][1]) == 2:
        projs = [np.asarray(p, dtype=complex) for _, p in spec]
        dim = projs[0].shape[0]
        total = sum(projs)
        if np.max(np.abs(total - np.eye(dim))) > 1e-10:
            raise InvalidStateError(f"{name} projectors do not sum to the identity")
        for i, p in enumerate(projs):
            for j, q in enumerate(projs):
                target = p if i == j else np.zeros_like(p)
                if np.max(np.abs(p @ q - target)) > 1e-10:
                    raise InvalidStateError(f"{name} projectors are not orthogonal")
        vals, vecs = [], []
        for (v, _), p in zip(spec, projs):
            w, u = np.linalg.eigh(p)
            for lam, col in zip(w, u.T):
                if lam > 0.5:
                    vals.append(float(v))
                    vecs.append(col)
        return np.array(vals), np.array(vecs).T
    arr = np.asarray(spec)
    if arr.ndim == 1:
        if not np.all(np.isfinite(arr)) or np.iscomplexobj(arr) and np.max(np.abs(arr.imag)) > 0:
            raise InvalidStateError(f"{name} eigenvalues must be finite reals")
        return arr.real.astype(float), np.eye(arr.size, dtype=complex)
    arr = arr.astype(complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be a vector of eigenvalues or a square matrix")
    if np.max(np.abs(arr - arr.conj().T)) > DEFAULT_TOL.herm:
        raise InvalidStateError(f"{name} is not Hermitian")
    w, v = np.linalg.eigh(arr)
    return w, v


@dataclass(frozen=True, eq=False)
class SpectralHamiltonian:
    """Product interaction ``H = S (x) B`` kept in spectral form.

    Attributes:
        s_values: eigenvalues ``s_mu`` of ``S`` (one per basis vector).
        s_basis: columns are the eigenvectors ``|mu>`` of ``S``.
        b_values: eigenvalues ``b_gamma`` of ``B``.
        b_basis: columns are the eigenvectors ``|gamma>`` of ``B``.
    """

    s_values: np.ndarray
    s_basis: np.ndarray = field(repr=False)
    b_values: np.ndarray
    b_basis: np.ndarray = field(repr=False)

    @classmethod
    def from_spectra(cls, s_spec, b_spec) -> "SpectralHamiltonian":
        sv, sb = _spectrum_from(s_spec, "S")
        bv, bb = _spectrum_from(b_spec, "B")
        return cls(sv, sb, bv, bb)

    @property
    def d(self) -> int:
        return self.s_values.size

    @property
    def d_e(self) -> int:
        return self.b_values.size

    @property
    def s_operator(self) -> np.ndarray:
        return (self.s_basis * self.s_values) @ self.s_basis.conj().T

    @property
    def b_operator(self) -> np.ndarray:
        return (self.b_basis * self.b_values) @ self.b_basis.conj().T

    @property
    def hamiltonian(self) -> np.ndarray:
        return np.kron(self.s_operator, self.b_operator)

    def s_projectors(self):
        """``(s_mu, P_mu)`` pairs with degenerate eigenvalues merged."""
        return _eig_grouped(self.s_values, self.s_basis)

    def b_projectors(self):
        return _eig_grouped(self.b_values, self.b_basis)

    def unitary(self, t: float) -> np.ndarray:
        """``exp(-i H t)`` assembled from the product spectrum."""
        phases = np.exp(-1j * np.outer(self.s_values, self.b_values) * t).reshape(-1)
        v = np.kron(self.s_basis, self.b_basis)
        return (v * phases) @ v.conj().T

    def env_populations(self, rho_e) -> np.ndarray:
        """``p_gamma = <gamma| rho_E |gamma>`` in the eigenbasis of ``B``."""
        rho_e = np.asarray(rho_e, dtype=complex)
        if rho_e.shape != (self.d_e, self.d_e):
            raise DimensionError("environment state dimension does not match B")
        p = np.einsum("ag,ab,bg->g", self.b_basis.conj(), rho_e, self.b_basis).real
        return np.clip(p, 0.0, None)

    def omega(self) -> np.ndarray:
        """Gaps ``omega[mu, mu'] = s_mu - s_mu'``."""
        return self.s_values[:, None] - self.s_values[None, :]


def build_product_hamiltonian(s_spec, b_spec) -> tuple[np.ndarray, SpectralHamiltonian]:
    """``H = sum_{mu gamma} s_mu b_gamma P_mu (x) P_gamma``.

    Args:
        s_spec, b_spec: eigenvalue vectors, Hermitian matrices, or lists of
            ``(value, projector)`` pairs.

    Returns:
        ``(H, spectral form)``.
    """
    spec = SpectralHamiltonian.from_spectra(s_spec, b_spec)
    h = spec.hamiltonian
    return 0.5 * (h + h.conj().T), spec


@dataclass(frozen=True, eq=False)
class DilatedProcess:
    """Joint initial state and step unitaries of a system-environment model.

    Attributes:
        initial: joint state on ``d * d_e`` (system factor first).
        unitaries: ``N - 1`` joint unitaries, ``unitaries[a]`` acts after the
            control at step ``a + 1``.
        d, d_e: system and environment dimensions.
        step_time: spacing of the equidistant time grid, kept for reports.
        reset_state: if set, the environment is replaced by this state
            before every control, which makes the process Markovian.
    """

    initial: np.ndarray
    unitaries: tuple
    d: int
    d_e: int
    step_time: float | None = None
    reset_state: np.ndarray | None = None

    def __post_init__(self):
        dim = self.d * self.d_e
        init = check_density_matrix(self.initial)
        if init.shape != (dim, dim):
            raise DimensionError(f"initial state must be {dim}x{dim}")
        us = tuple(np.asarray(u, dtype=complex) for u in self.unitaries)
        for u in us:
            if u.shape != (dim, dim):
                raise DimensionError("unitary dimension does not match the joint space")
            if np.max(np.abs(u @ u.conj().T - np.eye(dim))) > DEFAULT_TOL.unitary:
                raise InvalidStateError("step operator is not unitary")
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "unitaries", us)
        if self.reset_state is not None:
            tau = check_density_matrix(self.reset_state)
            if tau.shape != (self.d_e, self.d_e):
                raise DimensionError("reset state must live on the environment")
            object.__setattr__(self, "reset_state", tau)

    @property
    def steps(self) -> int:
        return len(self.unitaries) + 1

    @property
    def dims(self) -> tuple[int, int]:
        return (self.d, self.d_e)

    @classmethod
    def from_hamiltonian(cls, h, rho_s, rho_e, steps: int, t: float,
                         reset: bool = False) -> "DilatedProcess":
        """Product initial state ``rho_s (x) rho_e`` and ``U = exp(-iHt)`` at every step."""
        rho_s = np.asarray(rho_s, dtype=complex)
        rho_e = np.asarray(rho_e, dtype=complex)
        u = hermitian_evolve(h, t)
        return cls(np.kron(rho_s, rho_e), (u,) * (steps - 1), rho_s.shape[0], rho_e.shape[0],
                   step_time=t, reset_state=rho_e if reset else None)

    @classmethod
    def from_spectral(cls, spec: SpectralHamiltonian, rho_s, rho_e, steps: int, t: float,
                      reset: bool = False) -> "DilatedProcess":
        rho_s = np.asarray(rho_s, dtype=complex)
        rho_e = np.asarray(rho_e, dtype=complex)
        u = spec.unitary(t)
        return cls(np.kron(rho_s, rho_e), (u,) * (steps - 1), spec.d, spec.d_e,
                   step_time=t, reset_state=rho_e if reset else None)

    def env_marginal(self) -> np.ndarray:
        return partial_trace(self.initial, self.dims, keep="E")

    def _reset(self, omega):
        if self.reset_state is None:
            return omega
        return np.kron(partial_trace(omega, self.dims, keep="S"), self.reset_state)


def run_dilated_process(proc: DilatedProcess, controls: Sequence[QuantumChannel]) -> np.ndarray:
    """Final joint state ``U_{N-1} (A_{N-1} (x) 1) ... U_1 (A_1 (x) 1) [rho_SE]``.

    Controls may be any linear maps on the system (not only CP ones).
    """
    if len(controls) != proc.steps - 1:
        raise DimensionError(f"need {proc.steps - 1} controls, got {len(controls)}")
    omega = proc.initial
    for ctrl, u in zip(controls, proc.unitaries):
        if ctrl.dim_in != proc.d or ctrl.dim_out != proc.d:
            raise DimensionError("controls must act on the system dimension")
        omega = apply_to_subsystem(ctrl, proc._reset(omega), proc.dims, 0)
        omega = u @ omega @ u.conj().T
    return omega


def final_system_state(proc: DilatedProcess, controls: Sequence[QuantumChannel]) -> np.ndarray:
    """``Tr_E`` of :func:`run_dilated_process`."""
    return partial_trace(run_dilated_process(proc, controls), proc.dims, keep="S")


def _history_state(proc, basis, history):
    """Unnormalised joint state right before the next control, given a history."""
    if len(history) > proc.steps - 1:
        raise DimensionError("history is longer than the process")
    omega = proc.initial
    for alpha, (k, l) in enumerate(history):
        omega = causal_break_joint(basis.povm[k], basis.reps[l], proc._reset(omega), proc.dims)
        u = proc.unitaries[alpha]
        omega = u @ omega @ u.conj().T
    return proc._reset(omega)


def conditional_environment_state(proc: DilatedProcess, history=(), outcome: int | None = None,
                                  basis: CausalBreakBasis | None = None,
                                  min_prob: float = MIN_HISTORY_PROB) -> tuple[float, np.ndarray]:
    """Environment state after a causal-break history and an outcome.

    Args:
        proc: the dilated process.
        history: ``((k_1, l_1), ...)`` causal breaks at the earlier steps.
        outcome: POVM outcome ``k`` at the current step, or ``None`` for no
            measurement (the plain environment marginal).
        basis: causal-break basis the indices refer to.
        min_prob: histories less likely than this raise.

    Returns:
        ``(p, tau)``: the history probability and the normalised state.

    Raises:
        UndefinedConditionalError: if ``p < min_prob``.
    """
    if (history or outcome is not None) and basis is None:
        raise ValueError("a basis is required to interpret history indices")
    omega = _history_state(proc, basis, tuple(history))
    if outcome is None:
        sigma = partial_trace(omega, proc.dims, keep="E")
    else:
        t = omega.reshape(proc.d, proc.d_e, proc.d, proc.d_e)
        sigma = np.einsum("ts,setf->ef", basis.povm[outcome], t)
    p = float(np.trace(sigma).real)
    if p < min_prob:
        raise UndefinedConditionalError(f"history has probability {p:.3e}")
    tau = sigma / p
    return p, 0.5 * (tau + tau.conj().T)


@dataclass(frozen=True, eq=False)
class ConditionalMap:
    """One-step reduced dynamics given a causal-break history.

    Attributes:
        history: earlier causal breaks ``((k, l), ...)``.
        outcome: outcome at the current step (``None`` if unmeasured).
        probability: probability of the history and outcome.
        env_state: conditional environment state feeding the step.
        channel: the CPTP map from the repreparation to the next time.
    """

    history: tuple
    outcome: int | None
    probability: float
    env_state: np.ndarray = field(repr=False)
    channel: QuantumChannel = field(repr=False)

    @property
    def step(self) -> int:
        """1-based index of the time step the map starts from."""
        return len(self.history) + 1


def step_channel(u, tau, d: int, basis: CausalBreakBasis) -> QuantumChannel:
    """``X -> Tr_E[u (X (x) tau) u^dag]`` by tomography with the repreparations.

    Uses ``X = sum_l Tr(Theta_l X) R_l`` with the repreparation duals
    ``Theta_l``, so ``S = sum_l vec(Phi(R_l)) vec(Theta_l^T)^T``.
    """
    d_e = tau.shape[0]
    outs = []
    for r in basis.reps:
        joint = u @ np.kron(r, tau) @ u.conj().T
        outs.append(partial_trace(joint, (d, d_e), keep="S"))
    outs = np.array(outs).reshape(basis.size, -1)
    duals_t = basis.rep_duals.transpose(0, 2, 1).reshape(basis.size, -1)
    superop = np.einsum("la,lb->ab", outs, duals_t)
    ch = QuantumChannel(superop, d, d)
    return QuantumChannel(superop, d, d, kraus=ch.kraus, name="conditional")


def conditional_map(proc: DilatedProcess, history=(), outcome: int | None = None,
                    basis: CausalBreakBasis | None = None,
                    min_prob: float = MIN_HISTORY_PROB) -> ConditionalMap:
    """Conditional map of the step following ``history`` and ``outcome``.

    The map is obtained by channel tomography of the dilated step with the
    conditional environment state, so it applies to any joint unitary.

    Raises:
        UndefinedConditionalError: for histories with probability below
            ``min_prob``.
    """
    history = tuple((int(k), int(l)) for k, l in history)
    if len(history) >= proc.steps - 1:
        raise DimensionError("no time step follows this history")
    if basis is None:
        basis = build_ic_basis(proc.d)
    p, tau = conditional_environment_state(proc, history, outcome, basis, min_prob)
    u = proc.unitaries[len(history)]
    return ConditionalMap(history, outcome, p, tau, step_channel(u, tau, proc.d, basis))


class MarkovVerdict(NamedTuple):
    """Result of :func:`markovianity_check`."""

    markovian: bool
    max_deviation: float
    n_maps: int
    skipped: int


def markovianity_check(proc: DilatedProcess, basis: CausalBreakBasis, tol: float = 1e-6,
                       budget: int | None = None, threads: int = 1) -> MarkovVerdict:
    """Test whether every conditional map is independent of its history.

    At each step the conditional maps for all histories (including the
    outcome at that step) are compared; the deviation is the largest
    entrywise difference between any two superoperators. Histories with
    probability below ``1e-12`` are skipped.
    """
    n = basis.size
    total = sum(n ** (2 * a + 1) for a in range(proc.steps - 1))
    budget = max_trajectories() if budget is None else budget
    if total > budget:
        raise BudgetExceededError(f"{total} conditional maps requested, budget is {budget}")
    pairs = list(itertools.product(range(n), repeat=2))

    def one(args):
        hist, k = args
        try:
            return conditional_map(proc, hist, k, basis).channel.superop
        except UndefinedConditionalError:
            return None

    max_dev, n_maps, skipped = 0.0, 0, 0
    for alpha in range(proc.steps - 1):
        jobs = [(h, k) for h in itertools.product(pairs, repeat=alpha) for k in range(n)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                maps = list(pool.map(one, jobs))
        else:
            maps = [one(j) for j in jobs]
        kept = np.array([m for m in maps if m is not None])
        skipped += len(maps) - len(kept)
        n_maps += len(kept)
        if len(kept) > 1:
            dev = max(float(np.max(np.abs(kept - m))) for m in kept)
            max_dev = max(max_dev, dev)
    if skipped:
        log.info("skipped %d zero-probability histories", skipped)
    return MarkovVerdict(max_dev < tol, max_dev, n_maps, skipped)


def dephasing_factor(b_spec, rho_e, t: float, omega: float = 1.0) -> complex:
    """``f = Tr(rho_E exp(-i B omega t))``.

    With ``H = S (x) B`` a system coherence between levels whose ``S``
    eigenvalues differ by ``omega`` is multiplied by ``f`` after time ``t``.

    Args:
        b_spec: ``B`` as eigenvalues, a Hermitian matrix, ``(value,
            projector)`` pairs or a :class:`SpectralHamiltonian`.
        rho_e: environment state.
        t: evolution time.
        omega: system eigenvalue gap (1 for ``S = sigma_z / 2``).
    """
    if isinstance(b_spec, SpectralHamiltonian):
        vals, basis = b_spec.b_values, b_spec.b_basis
    else:
        vals, basis = _spectrum_from(b_spec, "B")
    rho_e = check_density_matrix(rho_e)
    if rho_e.shape != (vals.size, vals.size):
        raise DimensionError("environment state dimension does not match B")
    p = np.einsum("ag,ab,bg->g", basis.conj(), rho_e, basis).real
    return complex(np.sum(p * np.exp(-1j * vals * omega * t)))


def reduced_channel(w, rho_e, d: int, name: str = "") -> QuantumChannel:
    """``rho -> Tr_E[w (rho (x) rho_e) w^dag]`` with Kraus operators.

    ``K_ij = sqrt(lambda_j) (1 (x) <i|) w (1 (x) |e_j>)`` for the
    eigendecomposition ``rho_e = sum_j lambda_j |e_j><e_j|``.
    """
    rho_e = check_density_matrix(rho_e)
    d_e = rho_e.shape[0]
    w = np.asarray(w, dtype=complex)
    if w.shape != (d * d_e, d * d_e):
        raise DimensionError("joint operator does not match d * d_e")
    lam, vecs = np.linalg.eigh(rho_e)
    t = w.reshape(d, d_e, d, d_e)
    kraus = []
    for l, e in zip(lam, vecs.T):
        if l > 1e-15:
            blocks = np.einsum("aibj,j->iab", t, e)
            kraus.extend(np.sqrt(l) * blocks)
    return QuantumChannel.from_kraus(kraus, name=name)
