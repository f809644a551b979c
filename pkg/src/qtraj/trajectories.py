"""Causal breaks, dual frames and elementary-trajectory process tables.

A causal break ``A_lk[rho] = Tr(Pi_k rho) R_l`` measures the system with an
element of an informationally complete (IC) POVM and reprepares one of an IC
set of states. Any operation on the system is a *real linear* (not
necessarily convex) combination of the ``d**4`` causal breaks, so the joint
probabilities of all sequences of causal breaks (the process table) predict
the final state under arbitrary uncorrelated controls.

Indices are zero-based. A trajectory is a tuple ``((k_1, l_1), ...,
(k_{N-1}, l_{N-1}))``; process tables are keyed by ``(k_N, trajectory)``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    BudgetExceededError,
    DimensionError,
    ExpansionError,
    InvalidStateError,
    NotICError,
)
from .qcore import DEFAULT_TOL, QuantumChannel, Tolerances, check_density_matrix, check_povm_element

log = logging.getLogger(__name__)

#: Default cap on the number of trajectories any enumeration may produce.
DEFAULT_MAX_TRAJECTORIES = 10**6
#: Gram matrices with a larger condition number are treated as not IC.
MAX_GRAM_CONDITION = 1e8

TABLE_FORMAT = "qtraj.process-table"
TABLE_VERSION = 1

# reconstruction sums many signed terms, so allow a little more slack
_RECON_TOL = Tolerances(herm=1e-8, trace=1e-8, psd=1e-8)


def max_trajectories() -> int:
    """Enumeration budget; ``TRAJ_MAX_TRAJECTORIES`` overrides the default."""
    env = os.environ.get("TRAJ_MAX_TRAJECTORIES")
    return int(env) if env else DEFAULT_MAX_TRAJECTORIES


def _check_budget(n: int, budget: int | None) -> None:
    budget = max_trajectories() if budget is None else budget
    if n > budget:
        raise BudgetExceededError(
            f"{n} trajectories requested, budget is {budget} "
            "(raise it with budget=... or TRAJ_MAX_TRAJECTORIES)"
        )


def _vec(m) -> np.ndarray:
    return np.asarray(m, dtype=complex).reshape(-1)


def dual_frame(ops: Sequence[np.ndarray], max_condition: float = MAX_GRAM_CONDITION) -> np.ndarray:
    """Operators ``Delta_k`` with ``Tr(Delta_k ops_l) = delta_kl``.

    The duals are ``Delta_k = sum_m (G^-1)_km ops_m`` with the Gram matrix
    ``G_kl = Tr(ops_k ops_l)``.

    Args:
        ops: ``d**2`` Hermitian ``d x d`` operators.
        max_condition: Gram condition numbers above this raise.

    Returns:
        Array of shape ``(d**2, d, d)``.

    Raises:
        NotICError: if the set does not span the operator space.
    """
    ops = np.asarray(ops, dtype=complex)
    if ops.ndim != 3 or ops.shape[1] != ops.shape[2]:
        raise DimensionError("expected a stack of square operators")
    n, d, _ = ops.shape
    if n != d * d:
        raise NotICError(f"{n} operators cannot form a basis of the {d*d}-dimensional operator space")
    gram = np.einsum("kab,lba->kl", ops, ops).real
    cond = np.linalg.cond(gram)
    log.debug("Gram matrix condition number %.3e", cond)
    if not np.isfinite(cond) or cond > max_condition:
        raise NotICError(f"operator set is not informationally complete (cond={cond:.3e})")
    return np.einsum("km,mab->kab", np.linalg.inv(gram), ops)


def default_ic_states(d: int) -> list[np.ndarray]:
    """``d**2`` pure states whose projectors span the operator space.

    ``|j>`` for every ``j``, then ``(|j> + |k>)/sqrt2`` and
    ``(|j> + i|k>)/sqrt2`` for every ``j < k``. For a qubit this is
    ``|0>, |1>, |+>, |+i>``.
    """
    eye = np.eye(d, dtype=complex)
    states = [eye[j] for j in range(d)]
    pairs = list(itertools.combinations(range(d), 2))
    states += [(eye[j] + eye[k]) / np.sqrt(2) for j, k in pairs]
    states += [(eye[j] + 1j * eye[k]) / np.sqrt(2) for j, k in pairs]
    return states


@dataclass(frozen=True, eq=False)
class CausalBreakBasis:
    """IC POVM, IC repreparations and their dual frames.

    Attributes:
        d: system dimension.
        povm: ``(d**2, d, d)`` POVM elements ``Pi_k`` summing to the identity.
        reps: ``(d**2, d, d)`` density matrices ``R_l``.
        duals: ``(d**2, d, d)`` with ``Tr(duals[k] povm[l]) = delta_kl``.
        rep_duals: ``(d**2, d, d)`` with ``Tr(rep_duals[l] reps[m]) = delta_lm``.
    """

    d: int
    povm: np.ndarray
    reps: np.ndarray
    duals: np.ndarray = field(repr=False)
    rep_duals: np.ndarray = field(repr=False)

    @classmethod
    def from_sets(cls, povm, reps, tol=DEFAULT_TOL) -> "CausalBreakBasis":
        povm = np.asarray(povm, dtype=complex)
        reps = np.asarray(reps, dtype=complex)
        d = povm.shape[-1]
        if povm.shape != (d * d, d, d) or reps.shape != (d * d, d, d):
            raise DimensionError("need d**2 POVM elements and d**2 repreparations")
        for m in povm:
            check_povm_element(m, tol)
        if np.max(np.abs(povm.sum(axis=0) - np.eye(d))) > tol.trace:
            raise InvalidStateError("POVM elements do not sum to the identity")
        for r in reps:
            check_density_matrix(r, tol)
        basis = cls(d, povm, reps, dual_frame(povm), dual_frame(reps))
        for arr in (basis.povm, basis.reps, basis.duals, basis.rep_duals):
            arr.setflags(write=False)
        return basis

    @property
    def size(self) -> int:
        return self.d * self.d

    def causal_break(self, l: int, k: int) -> QuantumChannel:
        """The channel ``rho -> Tr(Pi_k rho) R_l`` in Kraus form."""
        return causal_break_channel(self.povm[k], self.reps[l], name=f"break(l={l},k={k})")

    def break_superops(self) -> np.ndarray:
        """All causal-break superoperators, shape ``(d**2, d**2, d**2, d**2)`` as ``[l, k]``."""
        r = self.reps.reshape(self.size, -1)
        p = self.povm.transpose(0, 2, 1).reshape(self.size, -1)
        return np.einsum("la,kb->lkab", r, p)

    def fingerprint(self) -> str:
        """SHA-256 of the POVM and repreparations as row-major ``[re, im]`` pairs."""
        payload = [
            [[[float(z.real), float(z.imag)] for z in row] for row in m]
            for m in itertools.chain(self.povm, self.reps)
        ]
        blob = json.dumps(payload, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def build_ic_basis(d: int) -> CausalBreakBasis:
    """Default causal-break basis for dimension ``d``.

    Repreparations are the pure states of :func:`default_ic_states`. The POVM
    uses the same rank-one projectors, congruence-normalised by
    ``S^{-1/2}`` with ``S`` their sum, so that the elements add up to the
    identity exactly while staying rank one and IC.
    """
    if d < 2:
        raise DimensionError("an IC basis needs d >= 2")
    reps = np.array([np.outer(v, v.conj()) for v in default_ic_states(d)])
    s = reps.sum(axis=0)
    w, v = np.linalg.eigh(s)
    s_inv_half = (v / np.sqrt(w)) @ v.conj().T
    povm = np.array([s_inv_half @ r @ s_inv_half for r in reps])
    povm = 0.5 * (povm + povm.conj().transpose(0, 2, 1))
    return CausalBreakBasis.from_sets(povm, reps)


def causal_break_channel(povm_elem, rep, name: str = "") -> QuantumChannel:
    """Measure-and-reprepare map ``rho -> Tr(povm_elem rho) rep`` with Kraus operators."""
    pe = np.asarray(povm_elem, dtype=complex)
    r = np.asarray(rep, dtype=complex)
    lp, vp = np.linalg.eigh(0.5 * (pe + pe.conj().T))
    lr, vr = np.linalg.eigh(0.5 * (r + r.conj().T))
    kraus = []
    for a, va in zip(lp, vp.T):
        for b, vb in zip(lr, vr.T):
            if a > 1e-15 and b > 1e-15:
                kraus.append(np.sqrt(a * b) * np.outer(vb, va.conj()))
    if not kraus:
        kraus = [np.zeros((r.shape[0], pe.shape[0]), dtype=complex)]
    superop = np.outer(_vec(r), _vec(pe.T))
    return QuantumChannel(superop, pe.shape[0], r.shape[0], kraus=kraus, name=name)


def apply_causal_break(povm_elem, rep, rho) -> tuple[float, np.ndarray]:
    """Measure ``rho`` with ``povm_elem`` and reprepare ``rep``.

    Returns:
        ``(p, rep)``: the outcome probability ``Tr(povm_elem rho)`` and the
        (unit-trace) output state, which does not depend on ``rho``.
    """
    povm_elem = np.asarray(povm_elem, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    rep = np.asarray(rep, dtype=complex)
    if povm_elem.shape != rho.shape:
        raise DimensionError("POVM element and state dimensions differ")
    p = float(np.trace(povm_elem @ rho).real)
    return min(1.0, max(0.0, p)), rep.copy()


@dataclass(frozen=True, eq=False)
class ExpansionCoefficients:
    """Real coefficients ``a[l, k]`` of a map in the causal-break basis."""

    a: np.ndarray
    basis: CausalBreakBasis = field(repr=False)
    residual: float = 0.0

    def recompose(self) -> QuantumChannel:
        """``sum_lk a[l, k] A_lk`` as a channel (not necessarily CP)."""
        s = np.einsum("lk,lkab->ab", self.a, self.basis.break_superops())
        return QuantumChannel(s, self.basis.d, self.basis.d)

    def column_sums(self) -> np.ndarray:
        return self.a.sum(axis=0)


def expand_operation(ch: QuantumChannel, basis: CausalBreakBasis, tol: float = 1e-9) -> ExpansionCoefficients:
    """Expand ``ch`` as ``sum_lk a[l, k] A_lk`` by least squares.

    Raises:
        DimensionError: if ``ch`` does not act on the basis dimension.
        ExpansionError: if the recomposition residual exceeds ``tol`` or the
            coefficients are not real (the map is not Hermiticity preserving).
    """
    if ch.dim_in != basis.d or ch.dim_out != basis.d:
        raise DimensionError(f"channel acts on {ch.dim_in}->{ch.dim_out}, basis on {basis.d}")
    n = basis.size
    design = basis.break_superops().reshape(n * n, -1).T
    target = ch.superop.reshape(-1)
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    residual = float(np.max(np.abs(design @ coef - target)))
    scale = max(1.0, float(np.max(np.abs(target))))
    if residual > tol * scale:
        raise ExpansionError(f"expansion residual {residual:.3e} exceeds tolerance")
    if np.max(np.abs(coef.imag)) > tol * scale:
        raise ExpansionError("expansion coefficients are not real")
    return ExpansionCoefficients(coef.real.reshape(n, n), basis, residual)


class MixednessVerdict(NamedTuple):
    """Result of :func:`is_mixed_wrt_basis`."""

    mixed: bool
    witness: float
    coefficients: ExpansionCoefficients


def is_mixed_wrt_basis(ch: QuantumChannel, basis: CausalBreakBasis, tol: float = 1e-9) -> MixednessVerdict:
    """Is ``ch`` a convex mixture of the basis causal breaks?

    The expansion in an IC basis is unique, so ``ch`` is mixed iff every
    coefficient is non-negative (and each column sums to one, i.e. the map
    is trace preserving). ``witness`` is the most negative coefficient.
    """
    coeffs = expand_operation(ch, basis, tol)
    witness = float(coeffs.a.min())
    tp = bool(np.max(np.abs(coeffs.column_sums() - 1.0)) <= max(tol, 1e-9))
    return MixednessVerdict(bool(witness >= -tol and tp), witness, coeffs)


def enumerate_trajectories(n_steps: int, d: int, budget: int | None = None) -> Iterator[tuple]:
    """All ``d**(4(N-1))`` trajectories ``((k_1, l_1), ..., (k_{N-1}, l_{N-1}))``.

    Yielded in lexicographic order.

    Raises:
        BudgetExceededError: if the count exceeds ``budget``.
    """
    if n_steps < 1:
        raise ValueError("need at least one time step")
    n = d ** (4 * (n_steps - 1))
    _check_budget(n, budget)
    pairs = list(itertools.product(range(d * d), repeat=2))
    return itertools.product(pairs, repeat=n_steps - 1)


@dataclass(frozen=True, eq=False)
class ProcessTensorTable:
    """Joint probabilities of all elementary trajectories.

    ``probs`` has one axis per index in the order
    ``[k_N, k_{N-1}, l_{N-1}, ..., k_1, l_1]``; entry values are
    ``p(Pi_{k_N}, ..., Pi_{k_1} | R_{l_{N-1}}, ..., R_{l_1})``, i.e. joint in
    the outcomes and conditional on the repreparations.
    """

    d: int
    steps: int
    basis: CausalBreakBasis = field(repr=False)
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = (self.d * self.d,) * (2 * self.steps - 1)
        if self.probs.shape != expected:
            raise DimensionError(f"table shape {self.probs.shape}, expected {expected}")

    @staticmethod
    def key_to_axes(k_final: int, traj) -> tuple[int, ...]:
        axes = [int(k_final)]
        for k, l in reversed(tuple(traj)):
            axes += [int(k), int(l)]
        return tuple(axes)

    def __getitem__(self, key) -> float:
        k_final, traj = key
        return float(self.probs[self.key_to_axes(k_final, traj)])

    def __len__(self) -> int:
        return self.probs.size

    def items(self) -> Iterator[tuple[tuple[int, ...], float]]:
        """``(serialised key, p)`` pairs in lexicographic key order."""
        for idx in np.ndindex(*self.probs.shape):
            yield idx, float(self.probs[idx])

    def history_probability(self) -> np.ndarray:
        """``p(k_{N-1}, ..., k_1 | l's)``: the table summed over ``k_N``."""
        return self.probs.sum(axis=0)

    def conditional(self, min_prob: float = 1e-300) -> np.ndarray:
        """``p(k_N | trajectory)``; histories with zero weight give NaN."""
        hist = self.history_probability()
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.probs / hist
        out[:, hist <= min_prob] = np.nan
        return out

    def normalization_error(self) -> float:
        """Max deviation of ``sum over all outcomes`` from 1, per repreparation sequence."""
        p = self.probs
        k_axes = (0,) + tuple(range(1, p.ndim, 2))
        return float(np.max(np.abs(p.sum(axis=k_axes) - 1.0)))

    def to_json(self) -> dict:
        return {
            "format": TABLE_FORMAT,
            "version": TABLE_VERSION,
            "d": self.d,
            "steps": self.steps,
            "basis_fingerprint": self.basis.fingerprint(),
            "entries": [[list(k), p] for k, p in self.items()],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    @classmethod
    def from_json(cls, doc, basis: CausalBreakBasis) -> "ProcessTensorTable":
        """Rebuild a table; ``basis`` must match the stored fingerprint."""
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        if doc.get("format") != TABLE_FORMAT or doc.get("version") != TABLE_VERSION:
            raise ValueError("not a process table document of a supported version")
        if doc["basis_fingerprint"] != basis.fingerprint():
            raise ValueError("basis fingerprint mismatch")
        d, steps = int(doc["d"]), int(doc["steps"])
        probs = np.full((d * d,) * (2 * steps - 1), np.nan)
        for key, p in doc["entries"]:
            probs[tuple(key)] = p
        if np.isnan(probs).any():
            raise ValueError("table is incomplete")
        return cls(d, steps, basis, probs)


def causal_break_joint(povm_elem, rep, omega, dims) -> np.ndarray:
    """``(A ⊗ 1)[omega] = rep ⊗ Tr_S[(povm_elem ⊗ 1) omega]`` for a joint operator."""
    d, d_e = dims
    t = np.asarray(omega).reshape(d, d_e, d, d_e)
    env = np.einsum("ts,setf->ef", povm_elem, t)
    return np.kron(rep, env)


def _branch_step(states, basis, u, dims, reset):
    """Apply every causal break then ``u`` to a stack of joint states."""
    d, d_e = dims
    n = states.shape[0]
    t = states.reshape(n, d, d_e, d, d_e)
    if reset is not None:
        sys = np.einsum("nsete->nst", t)
        t = np.einsum("nst,ef->nsetf", sys, reset)
    env = np.einsum("kts,nsetf->nkef", basis.povm, t)
    joint = np.einsum("lab,nkef->nklaebf", basis.reps, env)
    dim = d * d_e
    joint = joint.reshape(-1, dim, dim)
    return u @ joint @ u.conj().T


def tomograph_process(proc, basis: CausalBreakBasis, budget: int | None = None,
                      threads: int = 1) -> ProcessTensorTable:
    """Record the joint probabilities of every elementary trajectory.

    Args:
        proc: a :class:`qtraj.dilation.DilatedProcess`.
        basis: causal-break basis on the system.
        budget: enumeration cap (see :func:`max_trajectories`).
        threads: number of worker threads; results are identical for any
            value since branches are assembled in a fixed order.
    """
    d, d_e, steps = proc.d, proc.d_e, proc.steps
    if basis.d != d:
        raise DimensionError("basis and process system dimensions differ")
    _check_budget(d ** (4 * (steps - 1)), budget)
    n = basis.size
    dims = (d, d_e)

    def run(states, first_step):
        for alpha in range(first_step, steps - 1):
            states = _branch_step(states, basis, proc.unitaries[alpha], dims, proc.reset_state)
        t = states.reshape(-1, d, d_e, d, d_e)
        return np.einsum("kts,nsete->nk", basis.povm, t).real

    start = np.asarray(proc.initial, dtype=complex)[None]
    if steps == 1:
        probs = run(start, 0).reshape(n)
    else:
        first = _branch_step(start, basis, proc.unitaries[0], dims, proc.reset_state)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(lambda i: run(first[i : i + 1], 1), range(first.shape[0])))
            flat = np.concatenate(parts)
        else:
            flat = run(first, 1)
        # flat axes: [k_1, l_1, ..., k_{N-1}, l_{N-1}, k_N]
        flat = flat.reshape((n,) * (2 * steps - 1))
        order = [2 * steps - 2]
        for alpha in reversed(range(steps - 1)):
            order += [2 * alpha, 2 * alpha + 1]
        probs = flat.transpose(order)
    probs = np.clip(probs, 0.0, 1.0)
    return ProcessTensorTable(d, steps, basis, np.ascontiguousarray(probs))


def reconstruct_final_state(table: ProcessTensorTable, controls: Sequence[QuantumChannel],
                            tol: float = 1e-9) -> np.ndarray:
    """Final system state under arbitrary uncorrelated controls.

    ``rho_N = sum_{k_N} sum_xi a^(xi) p(k_N, xi) Delta_{k_N}`` with product
    coefficients ``a^(xi) = prod_alpha a^alpha[l_alpha, k_alpha]``.

    Args:
        table: complete process table.
        controls: ``N - 1`` trace-preserving maps; ``controls[0]`` acts at
            the first time step.
    """
    if len(controls) != table.steps - 1:
        raise DimensionError(f"need {table.steps - 1} controls, got {len(controls)}")
    if np.isnan(table.probs).any():
        raise ValueError("table is incomplete")
    v = table.probs
    for ch in reversed(controls):
        a = expand_operation(ch, table.basis, tol).a
        # axes 1, 2 of v are (k_alpha, l_alpha) of the latest remaining step
        v = np.tensordot(v, a.T, axes=([1, 2], [0, 1]))
    rho = np.einsum("k,kab->ab", v, table.basis.duals)
    rho = 0.5 * (rho + rho.conj().T)
    return check_density_matrix(rho, _RECON_TOL)


def _check_stochastic(m, name) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be a square matrix")
    if (m < -1e-12).any() or np.max(np.abs(m.sum(axis=0) - 1.0)) > 1e-10:
        raise ValueError(f"{name} is not column stochastic")
    return m


def classical_trajectory_probability(initial, transitions, outcomes, preparations) -> float:
    """``p(x_{i_N}, ..., x_{i_1} | y_{j_{N-1}}, ..., y_{j_1})`` for a Markov chain.

    ``transitions[a][i, j]`` is the probability to move from ``j`` at step
    ``a`` to ``i`` at step ``a + 1``.
    """
    p = float(np.asarray(initial, dtype=float)[outcomes[0]])
    for t, i_next, j in zip(transitions, outcomes[1:], preparations):
        p *= float(np.asarray(t)[i_next, j])
    return p


def classical_joint_probability(initial, transitions, interventions, outcome: int) -> float:
    """Probability of final outcome ``outcome`` given stochastic interventions.

    Args:
        initial: distribution over the ``d`` states at the first time.
        transitions: ``N - 1`` column-stochastic matrices between steps.
        interventions: ``N - 1`` column-stochastic matrices ``mu[j, i]``, the
            probability to reprepare ``j`` after observing ``i``.
        outcome: index of the final measurement outcome.
    """
    p = np.asarray(initial, dtype=float)
    if (p < -1e-12).any() or abs(p.sum() - 1.0) > 1e-10:
        raise ValueError("initial distribution is not normalised")
    if len(transitions) != len(interventions):
        raise DimensionError("need one intervention per transition")
    for t, mu in zip(transitions, interventions):
        t = _check_stochastic(t, "transition")
        mu = _check_stochastic(mu, "intervention")
        p = t @ (mu @ p)
    return float(p[outcome])
