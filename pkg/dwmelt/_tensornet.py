from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, eigsh

from ._errors import ConvergenceError, ParameterError, ShapeError
from ._models import (
    HamiltonianRep,
    SiteBasis,
    SymmetrySector,
    charge_change,
    local_charges,
    local_operator,
)
from ._sectors import Representation

__all__ = (
    "MPO",
    "MPSState",
    "CompressionReport",
    "canonicalize",
    "compress",
    "apply_mpo",
    "overlap",
    "norm",
    "add",
    "sandwich",
    "schmidt_spectra",
    "amplitudes",
    "expectation",
    "mps_from_configs",
    "variational_ground_state",
)

logger = logging.getLogger(__name__)

# Singular values below this fraction of the state norm are numerical noise.
NOISE_FLOOR = 1e-14

OpList = Sequence[tuple[int, np.ndarray]]


class MPO:
    """
    Matrix-product operator with tensors of shape ``(w_left, d_out, d_in, w_right)``
    and a particle-number change attached to every bond channel.
    """

    def __init__(
        self,
        basis: SiteBasis,
        tensors: Sequence[np.ndarray],
        charges: Sequence[np.ndarray],
    ) -> None:
        if len(charges) != len(tensors) + 1:
            raise ShapeError("An MPO needs one charge table per bond.")
        for j, W in enumerate(tensors):
            if W.shape != (len(charges[j]), basis.dim, basis.dim, len(charges[j + 1])):
                raise ShapeError(f"MPO tensor {j} has inconsistent shape {W.shape}.")
        self.basis = basis
        self.tensors = tuple(np.asarray(W, dtype=complex) for W in tensors)
        self.charges = tuple(np.asarray(q, dtype=np.int64).reshape(-1, 2) for q in charges)

    @property
    def L(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> tuple[int, ...]:
        return tuple(W.shape[3] for W in self.tensors[:-1])

    def __repr__(self) -> str:
        return f"MPO(L={self.L}, bond_dims={max(self.bond_dims, default=1)})"

    @classmethod
    def identity(cls, basis: SiteBasis, L: int) -> MPO:
        eye = np.eye(basis.dim, dtype=complex).reshape(1, basis.dim, basis.dim, 1)
        zero = np.zeros((1, 2), dtype=np.int64)
        return cls(basis, [eye] * L, [zero] * (L + 1))

    @classmethod
    def from_terms(cls, H: HamiltonianRep) -> MPO:
        """
        Finite-state-machine MPO of a term list.

        Channel ``I`` carries "nothing placed yet" and ``F`` "term completed". Two- and
        three-site terms share an open channel per (start site, first operator) and a
        closing channel per (end site, last operator).
        """
        basis, L = H.basis, H.L
        ident = local_operator(basis, "id")
        channels: list[dict[tuple[object, ...], int]] = []
        for b in range(L + 1):
            ch: dict[tuple[object, ...], int] = {}
            if b < L:
                ch[("I",)] = len(ch)
            if b > 0:
                ch[("F",)] = len(ch)
            channels.append(ch)
        deltas: list[dict[int, tuple[int, int]]] = [{} for _ in range(L + 1)]

        def dq(term_name: str, op: np.ndarray) -> tuple[int, int]:
            delta = charge_change(basis, op)
            if delta is None:
                raise ParameterError(
                    f"Operator `{term_name}` does not change particle numbers by a "
                    "definite amount and cannot enter a symmetric MPO."
                )
            return delta

        def channel(b: int, key: tuple[object, ...], delta: tuple[int, int]) -> int:
            ch = channels[b]
            if key not in ch:
                ch[key] = len(ch)
                deltas[b][ch[key]] = delta
            return ch[key]

        for term in H.terms:
            s = term.start
            if term.width == 2 or term.width == 3:
                channel(s + 1, ("P", s, term.names[0]), dq(term.names[0], term.factors[0]))
            if term.width == 3:
                d2 = dq(term.names[2], term.factors[2])
                channel(s + 2, ("S", s + 2, term.names[2]), (-d2[0], -d2[1]))
            if term.width > 3:
                raise ParameterError("Terms may span at most three sites.")

        d = basis.dim
        tensors = [
            np.zeros((len(channels[j]), d, d, len(channels[j + 1])), dtype=complex)
            for j in range(L)
        ]
        for j in range(L):
            if ("I",) in channels[j] and ("I",) in channels[j + 1]:
                tensors[j][channels[j][("I",)], :, :, channels[j + 1][("I",)]] = ident
            if ("F",) in channels[j] and ("F",) in channels[j + 1]:
                tensors[j][channels[j][("F",)], :, :, channels[j + 1][("F",)]] = ident

        for term in H.terms:
            s, f = term.start, term.factors
            i_in = channels[s][("I",)]
            if term.width == 1:
                tensors[s][i_in, :, :, channels[s + 1][("F",)]] += term.coef * f[0]
                continue
            p = channels[s + 1][("P", s, term.names[0])]
            tensors[s][i_in, :, :, p] = f[0]
            if term.width == 2:
                tensors[s + 1][p, :, :, channels[s + 2][("F",)]] += term.coef * f[1]
            else:
                k = channels[s + 2][("S", s + 2, term.names[2])]
                tensors[s + 1][p, :, :, k] += term.coef * f[1]
                tensors[s + 2][k, :, :, channels[s + 3][("F",)]] = f[2]

        charges = []
        for b in range(L + 1):
            q = np.zeros((len(channels[b]), 2), dtype=np.int64)
            for idx, delta in deltas[b].items():
                q[idx] = delta
            charges.append(q)
        return cls(basis, tensors, charges)

    def to_dense(self) -> np.ndarray:
        """
        Full ``dim**L`` matrix. Small chains only.
        """
        M = self.tensors[0][0]
        for W in self.tensors[1:]:
            # (out, in, w) x (w, out', in', w') -> (out out', in in', w')
            M = np.einsum("aiw,wbjv->abijv", M, W)
            n = M.shape[0] * M.shape[1]
            M = M.reshape(n, n, -1)
        return M[:, :, 0]


class MPSState:
    """
    Matrix-product state with particle-number labels on every bond.

    Tensors have shape ``(D_left, d, D_right)``; ``charges[b]`` holds the cumulative
    ``(n_up, n_down)`` of sites ``0..b-1`` for every index of bond ``b``.
    ``center`` is the orthogonality center when known.

    Values are treated as immutable: every operation returns a new state.
    """

    representation = Representation.MPS

    def __init__(
        self,
        basis: SiteBasis,
        tensors: Sequence[np.ndarray],
        charges: Sequence[np.ndarray],
        *,
        center: Optional[int] = None,
    ) -> None:
        L = len(tensors)
        if L == 0 or len(charges) != L + 1:
            raise ShapeError("An MPS needs at least one site and one charge table per bond.")
        tensors = tuple(np.asarray(A, dtype=complex) for A in tensors)
        charges = tuple(np.asarray(q, dtype=np.int64).reshape(-1, 2) for q in charges)
        for j, A in enumerate(tensors):
            if A.shape != (len(charges[j]), basis.dim, len(charges[j + 1])):
                raise ShapeError(f"MPS tensor {j} has inconsistent shape {A.shape}.")
        if len(charges[0]) != 1 or len(charges[L]) != 1 or charges[0].any():
            raise ShapeError("MPS boundary bonds must have dimension one.")
        self.basis = basis
        self.tensors = tensors
        self.charges = charges
        self.center = center

    @property
    def L(self) -> int:
        return len(self.tensors)

    @property
    def sector(self) -> SymmetrySector:
        n_up, n_down = self.charges[-1][0]
        return SymmetrySector(int(n_up), int(n_down))

    @property
    def bond_dims(self) -> tuple[int, ...]:
        return tuple(A.shape[2] for A in self.tensors[:-1])

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims, default=1)

    @property
    def norm(self) -> float:
        return norm(self)

    def __repr__(self) -> str:
        return (
            f"MPSState(L={self.L}, sector=({self.sector.n_up}, {self.sector.n_down}), "
            f"max_bond={self.max_bond}, center={self.center})"
        )

    @classmethod
    def product(cls, basis: SiteBasis, local_states: Sequence[int]) -> MPSState:
        """
        Product state from a sequence of local-state indices.
        """
        q = local_charges(basis)
        tensors: list[np.ndarray] = []
        charges = [np.zeros((1, 2), dtype=np.int64)]
        for s in local_states:
            if not 0 <= s < basis.dim:
                raise ShapeError(f"Local state {s} is out of range for {basis.kind.value}.")
            A = np.zeros((1, basis.dim, 1), dtype=complex)
            A[0, s, 0] = 1.0
            tensors.append(A)
            charges.append(charges[-1] + q[s])
        return cls(basis, tensors, charges, center=0)

    def scaled(self, factor: complex) -> MPSState:
        j = self.center if self.center is not None else 0
        tensors = list(self.tensors)
        tensors[j] = tensors[j] * factor
        return MPSState(self.basis, tensors, self.charges, center=self.center)

    def normalized(self) -> MPSState:
        n = self.norm
        if n == 0:
            raise ParameterError("Cannot normalize a zero state.")
        return self.scaled(1.0 / n)

    @cached_property
    def schmidt_values(self) -> tuple[np.ndarray, ...]:
        return schmidt_spectra(self)

    @cached_property
    def _environments(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        left = [np.ones((1, 1), dtype=complex)]
        for A in self.tensors:
            left.append(_transfer_left(left[-1], A, None))
        right = [np.ones((1, 1), dtype=complex)]
        for A in reversed(self.tensors):
            right.append(_transfer_right(right[-1], A))
        right.reverse()
        return left, right


@dataclass(frozen=True)
class CompressionReport:
    """
    Outcome of a compression: squared weight discarded at every internal bond,
    relative to the squared input norm.
    """

    discarded_weight: np.ndarray
    max_bond: int
    fidelity_lower_bound: float

    @property
    def total_discarded(self) -> float:
        return float(np.sum(self.discarded_weight))


# ---------------------------------------------------------------------------
# Block-sparse SVD and sweeps
# ---------------------------------------------------------------------------


def _svd(block: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return scipy.linalg.svd(block, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        logger.debug("gesdd failed on a %s block; retrying with gesvd", block.shape)
        return scipy.linalg.svd(block, full_matrices=False, lapack_driver="gesvd")


def _block_svd(
    theta: np.ndarray, row_q: np.ndarray, col_q: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    SVD of a charge-block-diagonal matrix.

    Rows and columns only couple when their charges agree. Singular values come back
    sorted in descending order, each with the charge of its block. At least one
    (possibly zero) singular triple is always returned.
    """
    nr, nc = theta.shape
    us: list[tuple[np.ndarray, np.ndarray]] = []
    vs: list[tuple[np.ndarray, np.ndarray]] = []
    ss: list[np.ndarray] = []
    qs: list[np.ndarray] = []
    for key in np.unique(row_q, axis=0) if nr else []:
        r = np.flatnonzero((row_q == key).all(axis=1))
        c = np.flatnonzero((col_q == key).all(axis=1))
        if c.size == 0:
            continue
        u, s, vh = _svd(theta[np.ix_(r, c)])
        us.append((r, u))
        vs.append((c, vh))
        ss.append(s)
        qs.append(np.repeat(key[None, :], s.size, axis=0))

    if not ss:
        U = np.zeros((nr, 1), dtype=complex)
        Vh = np.zeros((1, nc), dtype=complex)
        key = row_q[:1] if nr else np.zeros((1, 2), dtype=np.int64)
        return U, np.zeros(1), Vh, key

    k = sum(s.size for s in ss)
    U = np.zeros((nr, k), dtype=complex)
    Vh = np.zeros((k, nc), dtype=complex)
    offset = 0
    for (r, u), (c, vh), s in zip(us, vs, ss):
        U[r, offset : offset + s.size] = u
        Vh[offset : offset + s.size, c] = vh
        offset += s.size
    S = np.concatenate(ss)
    Q = np.concatenate(qs)
    order = np.argsort(-S, kind="stable")
    return U[:, order], S[order], Vh[order], Q[order]


def _truncation_rank(s: np.ndarray, budget: float, floor: float) -> tuple[int, float]:
    # Smallest rank whose discarded tail fits the budget, never below 1.
    w = s**2
    total = float(np.sum(w))
    above = int(np.count_nonzero(s > floor * np.sqrt(total))) if floor else int(
        np.count_nonzero(s > 0)
    )
    tail = np.append(np.cumsum(w[::-1])[::-1], 0.0)
    k = int(np.flatnonzero(tail[1:] <= budget)[0]) + 1
    k = max(1, min(k, above))
    return k, float(tail[k])


BudgetFn = Callable[[int, np.ndarray], float]


def _left_sweep(
    tensors: list[np.ndarray],
    charges: list[np.ndarray],
    q_loc: np.ndarray,
    start: int,
    stop: int,
    budget: Optional[BudgetFn] = None,
    floor: float = NOISE_FLOOR,
) -> tuple[dict[int, np.ndarray], dict[int, float]]:
    # Moves the center from `start` to `stop > start`, splitting at bonds start+1..stop.
    spectra: dict[int, np.ndarray] = {}
    discarded: dict[int, float] = {}
    for j in range(start, stop):
        A = tensors[j]
        Dl, d, _ = A.shape
        row_q = (charges[j][:, None, :] + q_loc[None, :, :]).reshape(-1, 2)
        U, S, Vh, Q = _block_svd(A.reshape(Dl * d, -1), row_q, charges[j + 1])
        k, disc = _truncation_rank(S, budget(j + 1, S) if budget else 0.0, floor)
        tensors[j] = U[:, :k].reshape(Dl, d, k)
        tensors[j + 1] = np.tensordot(S[:k, None] * Vh[:k], tensors[j + 1], axes=(1, 0))
        charges[j + 1] = Q[:k]
        spectra[j + 1] = S[:k]
        discarded[j + 1] = disc
    return spectra, discarded


def _right_sweep(
    tensors: list[np.ndarray],
    charges: list[np.ndarray],
    q_loc: np.ndarray,
    start: int,
    stop: int,
    budget: Optional[BudgetFn] = None,
    floor: float = NOISE_FLOOR,
) -> tuple[dict[int, np.ndarray], dict[int, float]]:
    # Moves the center from `start` to `stop < start`, splitting at bonds start..stop+1.
    spectra: dict[int, np.ndarray] = {}
    discarded: dict[int, float] = {}
    for j in range(start, stop, -1):
        A = tensors[j]
        Dl, d, Dr = A.shape
        col_q = (charges[j + 1][None, :, :] - q_loc[:, None, :]).reshape(-1, 2)
        U, S, Vh, Q = _block_svd(A.reshape(Dl, d * Dr), charges[j], col_q)
        k, disc = _truncation_rank(S, budget(j, S) if budget else 0.0, floor)
        tensors[j] = Vh[:k].reshape(k, d, Dr)
        tensors[j - 1] = np.tensordot(tensors[j - 1], U[:, :k] * S[:k], axes=(2, 0))
        charges[j] = Q[:k]
        spectra[j] = S[:k]
        discarded[j] = disc
    return spectra, discarded


def _check_center(state: MPSState, center: int) -> None:
    if not 0 <= center < state.L:
        raise ShapeError(f"Center {center} is out of range for L={state.L}.")


def canonicalize(state: MPSState, center: int) -> MPSState:
    """
    Mixed-canonical form with the orthogonality center at ``center``.

    Sites left of the center become left-orthonormal, sites right of it
    right-orthonormal. Only numerically zero Schmidt values are dropped, so the state
    itself is unchanged to round-off.

    Parameters
    ----------
    state
        The MPS to bring into canonical form.
    center
        Site index of the new orthogonality center.

    Returns
    -------
    :
        A new :class:`MPSState` with ``center`` set.
    """
    _check_center(state, center)
    tensors, charges = list(state.tensors), list(state.charges)
    q_loc = local_charges(state.basis)
    L = state.L
    if state.center is None:
        # Only the second sweep sees true Schmidt values, so the noise floor waits.
        _left_sweep(tensors, charges, q_loc, 0, L - 1, floor=0.0)
        _right_sweep(tensors, charges, q_loc, L - 1, 0)
        _left_sweep(tensors, charges, q_loc, 0, center)
    elif state.center < center:
        _left_sweep(tensors, charges, q_loc, state.center, center)
    elif state.center > center:
        _right_sweep(tensors, charges, q_loc, state.center, center)
    return MPSState(state.basis, tensors, charges, center=center)


def compress(
    state: MPSState, weight_budget: float, *, normalize: bool = True
) -> tuple[MPSState, CompressionReport]:
    """
    Truncate Schmidt values so that the discarded squared weight stays within budget.

    The budget is split across bonds in proportion to each bond's discardable weight
    (everything but its largest Schmidt value), measured in a first sweep; a second
    sweep then cuts. The kept subspaces are nested, so the fidelity with the input is
    exactly ``1 - total discarded``.

    Parameters
    ----------
    state
        The MPS to compress.
    weight_budget
        Total squared weight (relative to the squared norm) that may be discarded.
    normalize
        Whether to rescale the output to unit norm. Otherwise the input norm is kept
        on the discarded-free part.

    Returns
    -------
    :
        The compressed state (center 0) and a :class:`CompressionReport`.
    """
    if not weight_budget > 0:
        raise ParameterError("`weight_budget` must be positive.")
    L = state.L
    st = canonicalize(state, 0)
    tensors, charges = list(st.tensors), list(st.charges)
    q_loc = local_charges(state.basis)
    n2 = float(np.linalg.norm(tensors[0]) ** 2)
    if n2 == 0 or L == 1:
        report = CompressionReport(np.zeros(max(L - 1, 0)), st.max_bond, 1.0)
        return (st.normalized() if normalize and n2 else st), report

    spectra, floor_loss = _left_sweep(tensors, charges, q_loc, 0, L - 1)
    discardable = {b: float(np.sum(s**2) - s[0] ** 2) / n2 for b, s in spectra.items()}
    total = sum(discardable.values())
    alloc = {
        b: (weight_budget * w / total if total > 0 else 0.0) * n2
        for b, w in discardable.items()
    }
    _, cut = _right_sweep(tensors, charges, q_loc, L - 1, 0, lambda b, s: alloc[b])

    discarded = np.array(
        [(floor_loss[b] + cut[b]) / n2 for b in range(1, L)], dtype=float
    )
    out = MPSState(state.basis, tensors, charges, center=0)
    if normalize:
        out = out.normalized()
    report = CompressionReport(
        discarded, out.max_bond, 1.0 - float(np.sum(discarded))
    )
    return out, report


def apply_mpo(mpo: MPO, state: MPSState) -> MPSState:
    """
    Exact MPO-MPS product; bond dimensions multiply and no truncation is done.
    """
    if mpo.L != state.L or mpo.basis.dim != state.basis.dim:
        raise ShapeError(
            f"MPO (L={mpo.L}, d={mpo.basis.dim}) does not match the state "
            f"(L={state.L}, d={state.basis.dim})."
        )
    tensors = []
    for W, A in zip(mpo.tensors, state.tensors):
        B = np.einsum("wstv,atb->wasvb", W, A)
        wl, Dl, d, wr, Dr = B.shape
        tensors.append(B.reshape(wl * Dl, d, wr * Dr))
    charges = [
        (qw[:, None, :] + qa[None, :, :]).reshape(-1, 2)
        for qw, qa in zip(mpo.charges, state.charges)
    ]
    return MPSState(state.basis, tensors, charges)


def overlap(bra: MPSState, ket: MPSState) -> complex:
    """
    ``<bra|ket>``.
    """
    if bra.L != ket.L:
        raise ShapeError("Overlaps need states of equal length.")
    E = np.ones((1, 1), dtype=complex)
    for A, B in zip(bra.tensors, ket.tensors):
        E = _transfer_left(E, A, None, B)
    return complex(E[0, 0])


def norm(state: MPSState) -> float:
    if state.center is not None:
        return float(np.linalg.norm(state.tensors[state.center]))
    return float(np.sqrt(max(overlap(state, state).real, 0.0)))


def add(
    states: Sequence[MPSState], coefficients: Optional[Sequence[complex]] = None
) -> MPSState:
    """
    ``sum_i c_i |psi_i>`` as a direct-sum MPS (bond dimensions add up).
    """
    if not states:
        raise ParameterError("`states` must not be empty.")
    coefs = list(coefficients) if coefficients is not None else [1.0] * len(states)
    if len(coefs) != len(states):
        raise ShapeError("One coefficient per state is required.")
    first = states[0]
    for s in states[1:]:
        if s.L != first.L or s.basis != first.basis:
            raise ShapeError("Only states on the same lattice can be added.")
        if s.sector != first.sector:
            raise ParameterError("Only states in the same sector can be added.")
    L = first.L
    if L == 1:
        A = sum(c * s.tensors[0] for c, s in zip(coefs, states))
        return MPSState(first.basis, [A], first.charges)

    tensors: list[np.ndarray] = []
    tensors.append(
        np.concatenate([c * s.tensors[0] for c, s in zip(coefs, states)], axis=2)
    )
    for j in range(1, L - 1):
        blocks = [s.tensors[j] for s in states]
        Dl = sum(b.shape[0] for b in blocks)
        Dr = sum(b.shape[2] for b in blocks)
        T = np.zeros((Dl, first.basis.dim, Dr), dtype=complex)
        ol = orr = 0
        for b in blocks:
            T[ol : ol + b.shape[0], :, orr : orr + b.shape[2]] = b
            ol += b.shape[0]
            orr += b.shape[2]
        tensors.append(T)
    tensors.append(np.concatenate([s.tensors[-1] for s in states], axis=0))
    charges = [first.charges[0]]
    for b in range(1, L):
        charges.append(np.concatenate([s.charges[b] for s in states]))
    charges.append(first.charges[L])
    return MPSState(first.basis, tensors, charges)


def sandwich(bra: MPSState, mpo: MPO, ket: MPSState) -> complex:
    """
    ``<bra| mpo |ket>``.
    """
    if not bra.L == mpo.L == ket.L:
        raise ShapeError("The MPO and both states must have the same length.")
    E = np.ones((1, 1, 1), dtype=complex)
    for B, W, K in zip(bra.tensors, mpo.tensors, ket.tensors):
        E = _env_left(E, B, W, K)
    return complex(E[0, 0, 0])


def schmidt_spectra(state: MPSState) -> tuple[np.ndarray, ...]:
    """
    Normalized Schmidt values of every internal bond, largest first.

    Element ``b - 1`` belongs to the cut between sites ``b - 1`` and ``b``.
    """
    st = canonicalize(state, 0)
    tensors, charges = list(st.tensors), list(st.charges)
    spectra, _ = _left_sweep(tensors, charges, local_charges(state.basis), 0, state.L - 1)
    out = []
    for b in range(1, state.L):
        s = spectra[b]
        n = np.sqrt(np.sum(s**2))
        out.append(s / n if n > 0 else s)
    return tuple(out)


def amplitudes(state: MPSState, configs: np.ndarray) -> np.ndarray:
    """
    Amplitudes ``<config|psi>`` for an ``(n, L)`` array of local-state indices.
    """
    configs = np.asarray(configs).reshape(-1, state.L)
    v = np.ones((configs.shape[0], 1), dtype=complex)
    for j, A in enumerate(state.tensors):
        v = np.einsum("na,anb->nb", v, A[:, configs[:, j], :])
    return v[:, 0]


def expectation(state: MPSState, ops: OpList) -> complex:
    """
    ``<psi| prod_k op_k |psi>`` for single-site matrices on distinct sites.

    Raises
    ------
    ShapeError
        If a site is out of range or repeated.
    """
    by_site = {}
    for site, op in ops:
        if not 0 <= site < state.L:
            raise ShapeError(f"Site {site} is out of range for L={state.L}.")
        if site in by_site:
            raise ShapeError(f"Site {site} appears more than once.")
        by_site[site] = op
    if not by_site:
        return complex(overlap(state, state))
    left, right = state._environments
    lo, hi = min(by_site), max(by_site)
    E = left[lo]
    for j in range(lo, hi + 1):
        E = _transfer_left(E, state.tensors[j], by_site.get(j))
    return complex(np.sum(E * right[hi + 1]))


def mps_from_configs(
    basis: SiteBasis, L: int, configs: np.ndarray, values: np.ndarray
) -> MPSState:
    """
    MPS of a state given by its amplitudes on sector configurations.

    Sequential block SVDs from the left; only numerically zero Schmidt values are
    dropped.
    """
    configs = np.asarray(configs, dtype=np.int8).reshape(-1, L)
    if configs.shape[0] == 0:
        raise ShapeError("Cannot build an MPS from an empty configuration list.")
    q = local_charges(basis)
    d = basis.dim
    total = q[configs[0]].sum(axis=0)
    C = np.asarray(values, dtype=complex)[None, :]
    col_of = np.arange(configs.shape[0])
    left_q = np.zeros((1, 2), dtype=np.int64)
    tensors: list[np.ndarray] = []
    charges = [left_q]
    for j in range(L - 1):
        suffix, col_next = np.unique(configs[:, j + 1 :], axis=0, return_inverse=True)
        col_next = col_next.reshape(-1)
        D = C.shape[0]
        M = np.zeros((D, d, suffix.shape[0]), dtype=complex)
        M[:, configs[:, j], col_next] = C[:, col_of]
        row_q = (left_q[:, None, :] + q[None, :, :]).reshape(-1, 2)
        col_q = total - q[suffix].sum(axis=1)
        U, S, Vh, Q = _block_svd(M.reshape(D * d, -1), row_q, col_q)
        k, _ = _truncation_rank(S, 0.0, NOISE_FLOOR)
        tensors.append(U[:, :k].reshape(D, d, k))
        C = S[:k, None] * Vh[:k]
        left_q = Q[:k]
        charges.append(left_q)
        col_of = col_next
    last = np.zeros((C.shape[0], d, 1), dtype=complex)
    last[:, configs[:, L - 1], 0] = C[:, col_of]
    tensors.append(last)
    charges.append(total[None, :])
    return MPSState(basis, tensors, charges, center=L - 1)


# ---------------------------------------------------------------------------
# Contractions
# ---------------------------------------------------------------------------


def _transfer_left(
    E: np.ndarray,
    A: np.ndarray,
    op: Optional[np.ndarray],
    B: Optional[np.ndarray] = None,
) -> np.ndarray:
    # E[bra, ket] -> E'[bra', ket'] through one site; A is the bra tensor.
    B = A if B is None else B
    T = np.tensordot(E, B, axes=(1, 0))
    if op is not None:
        T = np.einsum("ts,asd->atd", op, T)
    return np.tensordot(A.conj(), T, axes=([0, 1], [0, 1]))


def _transfer_right(R: np.ndarray, A: np.ndarray) -> np.ndarray:
    T = np.tensordot(A, R, axes=(2, 1))
    return np.tensordot(A.conj(), T, axes=([1, 2], [1, 2]))


def _env_left(E: np.ndarray, B: np.ndarray, W: np.ndarray, K: np.ndarray) -> np.ndarray:
    # E[bra, w, ket] -> E'[bra', w', ket']
    T = np.tensordot(E, K, axes=(2, 0))
    T = np.tensordot(T, W, axes=([1, 2], [0, 2]))
    T = np.tensordot(B.conj(), T, axes=([0, 1], [0, 2]))
    return T.transpose(0, 2, 1)


def _env_right(R: np.ndarray, B: np.ndarray, W: np.ndarray, K: np.ndarray) -> np.ndarray:
    # R[bra, w, ket] -> R'[bra', w', ket']
    T = np.tensordot(K, R, axes=(2, 2))
    T = np.tensordot(W, T, axes=([2, 3], [1, 3]))
    return np.tensordot(B.conj(), T, axes=([1, 2], [1, 3]))


# ---------------------------------------------------------------------------
# Two-site variational ground state
# ---------------------------------------------------------------------------


def _local_ground_state(
    Lenv: np.ndarray,
    W1: np.ndarray,
    W2: np.ndarray,
    Renv: np.ndarray,
    theta: np.ndarray,
    mask: np.ndarray,
) -> tuple[float, np.ndarray]:
    shape = theta.shape
    allowed = np.flatnonzero(mask.reshape(-1))
    n = allowed.size

    def matvec(x: np.ndarray) -> np.ndarray:
        full = np.zeros(int(np.prod(shape)), dtype=complex)
        full[allowed] = np.ravel(x)
        t = full.reshape(shape)
        X = np.tensordot(Lenv, t, axes=(2, 0))
        X = np.tensordot(X, W1, axes=([1, 2], [0, 2]))
        X = np.tensordot(X, W2, axes=([4, 1], [0, 2]))
        X = np.tensordot(X, Renv, axes=([1, 4], [2, 1]))
        return X.reshape(-1)[allowed]

    x0 = theta.reshape(-1)[allowed]
    if n <= 32:
        Heff = np.column_stack([matvec(e) for e in np.eye(n, dtype=complex)])
        w, v = np.linalg.eigh(0.5 * (Heff + Heff.conj().T))
        energy, x = float(w[0]), v[:, 0]
    else:
        if not np.any(x0):
            x0 = np.ones(n, dtype=complex)
        op = LinearOperator((n, n), matvec=matvec, dtype=complex)
        w, v = eigsh(op, k=1, which="SA", v0=x0)
        energy, x = float(w[0]), v[:, 0]
    out = np.zeros(int(np.prod(shape)), dtype=complex)
    out[allowed] = x
    return energy, out.reshape(shape)


def variational_ground_state(
    mpo: MPO,
    initial: MPSState,
    *,
    max_sweeps: int = 20,
    energy_tol: float = 1e-10,
    weight_budget: float = 1e-12,
    max_bond: Optional[int] = None,
) -> tuple[MPSState, list[float]]:
    """
    Lowest-energy state in the sector of ``initial`` by two-site sweeps.

    Each local problem is restricted to the particle numbers of the sector, so the
    search never leaves it even when other sectors are lower in energy.

    Returns
    -------
    :
        The converged state (normalized, center 0) and the energy after each sweep.

    Raises
    ------
    ConvergenceError
        If the energy change per sweep is still above ``energy_tol`` after
        ``max_sweeps`` sweeps.
    """
    L = initial.L
    if L < 2:
        raise ParameterError("Variational sweeps need at least two sites.")
    st = canonicalize(initial, 0).normalized()
    tensors, charges = list(st.tensors), list(st.charges)
    q_loc = local_charges(initial.basis)
    d = initial.basis.dim
    W = mpo.tensors

    Lenv: list[Optional[np.ndarray]] = [None] * (L + 1)
    Renv: list[Optional[np.ndarray]] = [None] * (L + 1)
    Lenv[0] = np.ones((1, 1, 1), dtype=complex)
    Renv[L] = np.ones((1, 1, 1), dtype=complex)
    for j in range(L - 1, 0, -1):
        Renv[j] = _env_right(Renv[j + 1], tensors[j], W[j], tensors[j])

    def update(j: int, moving_right: bool) -> float:
        theta = np.tensordot(tensors[j], tensors[j + 1], axes=(2, 0))
        ql, qr = charges[j], charges[j + 2]
        mask = np.all(
            ql[:, None, None, None, :]
            + q_loc[None, :, None, None, :]
            + q_loc[None, None, :, None, :]
            == qr[None, None, None, :, :],
            axis=-1,
        )
        energy, theta = _local_ground_state(Lenv[j], W[j], W[j + 1], Renv[j + 2], theta, mask)
        Dl, Dr = theta.shape[0], theta.shape[3]
        row_q = (ql[:, None, :] + q_loc[None, :, :]).reshape(-1, 2)
        col_q = (qr[None, :, :] - q_loc[:, None, :]).reshape(-1, 2)
        U, S, Vh, Q = _block_svd(theta.reshape(Dl * d, d * Dr), row_q, col_q)
        k, _ = _truncation_rank(S, weight_budget, NOISE_FLOOR)
        if max_bond is not None:
            k = min(k, max_bond)
        S = S[:k] / np.linalg.norm(S[:k])
        charges[j + 1] = Q[:k]
        if moving_right:
            tensors[j] = U[:, :k].reshape(Dl, d, k)
            tensors[j + 1] = (S[:, None] * Vh[:k]).reshape(k, d, Dr)
            Lenv[j + 1] = _env_left(Lenv[j], tensors[j], W[j], tensors[j])
        else:
            tensors[j] = (U[:, :k] * S).reshape(Dl, d, k)
            tensors[j + 1] = Vh[:k].reshape(k, d, Dr)
            Renv[j + 1] = _env_right(Renv[j + 2], tensors[j + 1], W[j + 1], tensors[j + 1])
        return energy

    energies: list[float] = []
    for sweep in range(max_sweeps):
        for j in range(L - 1):
            energy = update(j, True)
        for j in range(L - 2, -1, -1):
            energy = update(j, False)
        energies.append(energy)
        bonds = max(A.shape[2] for A in tensors[:-1])
        logger.debug("sweep %d: energy=%.14g max_bond=%d", sweep + 1, energy, bonds)
        if len(energies) >= 2 and abs(energies[-1] - energies[-2]) < energy_tol:
            logger.info(
                "ground state converged after %d sweeps: energy=%.12g", sweep + 1, energy
            )
            return MPSState(initial.basis, tensors, charges, center=0), energies
    raise ConvergenceError(
        f"Ground-state sweeps did not converge within {max_sweeps} sweeps "
        f"(last change {abs(energies[-1] - energies[-2]) if len(energies) > 1 else float('nan'):.3g}).",
        energies=energies,
    )
