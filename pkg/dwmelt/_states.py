from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Literal, Optional, Sequence, Union

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import eigsh

from ._errors import AnnihilationError, ParameterError, UnsupportedBasisError
from ._models import (
    BasisKind,
    CouplingSet,
    HamiltonianRep,
    Preparation,
    SiteBasis,
    SymmetrySector,
    build_bh,
    local_charges,
    local_operator,
)
from ._sectors import DenseState, Representation, sector_space
from ._tensornet import (
    MPSState,
    amplitudes,
    canonicalize,
    mps_from_configs,
    variational_ground_state,
)

if TYPE_CHECKING:
    from ._evolve import GroundStateConfig

__all__ = (
    "QuantumState",
    "product_state",
    "domain_wall",
    "apply_hole",
    "apply_spin_flip",
    "apply_defects",
    "to_dense",
    "to_mps",
    "prepare_bh_ground",
    "boson_cutoff_check",
)

logger = logging.getLogger(__name__)

QuantumState = Union[DenseState, MPSState]
"""
A lattice state in either the dense sector-resolved or the matrix-product
representation.
"""

RepresentationLike = Union[Representation, Literal["dense", "mps"]]

# Names that select the singly occupied/empty states on every basis.
_STATE_ALIASES = {
    BasisKind.TJ: {"hole": "empty"},
    BasisKind.BOSON2: {"up": "(1,0)", "down": "(0,1)", "empty": "(0,0)", "hole": "(0,0)"},
}

# Norms below this count as annihilating the state.
_ZERO_NORM = 1e-12


def _local_index(basis: SiteBasis, label: Union[str, int]) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    label = _STATE_ALIASES.get(basis.kind, {}).get(label, label)
    return basis.index(label)


def product_state(
    basis: SiteBasis,
    labels: Sequence[Union[str, int]],
    representation: RepresentationLike = "mps",
) -> QuantumState:
    """
    Product state from one local label per site.

    Parameters
    ----------
    basis
        The site basis.
    labels
        Local state labels (``basis.labels``, or ``"up"``, ``"down"``, ``"empty"``
        on every basis that has them) or local-state indices.
    representation
        ``"mps"`` (bond dimension one) or ``"dense"``.
    """
    idx = [_local_index(basis, s) for s in labels]
    rep = Representation(representation)
    mps = MPSState.product(basis, idx)
    if rep is Representation.MPS:
        return mps
    return to_dense(mps)


def domain_wall(
    basis: SiteBasis, L: int, representation: RepresentationLike = "mps"
) -> QuantumState:
    """
    ``|up ... up down ... down>`` with the wall between sites ``L/2 - 1`` and ``L/2``.

    Raises
    ------
    ParameterError
        If ``L`` is odd.

    Example
    -------
    >>> from dwmelt import SiteBasis, domain_wall, magnetization_profile
    >>> magnetization_profile(domain_wall(SiteBasis.tj(), 4))
    array([ 0.5,  0.5, -0.5, -0.5])
    """
    if L < 2 or L % 2:
        raise ParameterError(f"`L` must be even and at least 2 for a domain wall, got {L}.")
    return product_state(basis, ["up"] * (L // 2) + ["down"] * (L // 2), representation)


def _apply_local(
    state: QuantumState, site: int, op: np.ndarray, what: str
) -> QuantumState:
    if not 0 <= site < state.L:
        raise ParameterError(f"Site {site} is out of range for L={state.L}.")
    q = local_charges(state.basis)
    rows, cols = np.nonzero(op)
    dq = q[rows[0]] - q[cols[0]]

    if isinstance(state, DenseState):
        configs, values = state.apply_product([(site, op)])
        n = float(np.linalg.norm(values))
        if n < _ZERO_NORM:
            raise AnnihilationError(f"{what} at site {site} annihilates the state.")
        sector = SymmetrySector(
            state.sector.n_up + int(dq[0]), state.sector.n_down + int(dq[1])
        )
        space = sector_space(state.basis, state.L, sector)
        amps = np.zeros(space.dim, dtype=complex)
        amps[space.find(configs)] = values / n
        return DenseState(state.basis, state.L, sector, amps)

    st = canonicalize(state, site)
    tensors = list(st.tensors)
    tensors[site] = np.einsum("ts,asb->atb", op, tensors[site])
    charges = [c if b <= site else c + dq for b, c in enumerate(st.charges)]
    n = float(np.linalg.norm(tensors[site]))
    if n < _ZERO_NORM:
        raise AnnihilationError(f"{what} at site {site} annihilates the state.")
    tensors[site] = tensors[site] / n
    return MPSState(st.basis, tensors, charges, center=site)


def apply_hole(state: QuantumState, site: int, species: str = "up") -> QuantumState:
    """
    Remove one boson of ``species`` at ``site`` and renormalize.

    On the t-J basis the site becomes empty; on the Bose-Hubbard basis ``b_s`` is
    applied.

    Raises
    ------
    AnnihilationError
        If the site holds no such boson (norm below 1e-12).
    UnsupportedBasisError
        On spin-1/2 chains, which have no empty state.
    """
    if species not in ("up", "down"):
        raise ParameterError(f"Unknown species `{species}`; use 'up' or 'down'.")
    kind = state.basis.kind
    if kind is BasisKind.TJ:
        op = local_operator(state.basis, f"a_{species}")
    elif kind is BasisKind.BOSON2:
        op = local_operator(state.basis, f"b_{species}")
    else:
        raise UnsupportedBasisError("Holes need a basis with an empty state.")
    return _apply_local(state, site, op, "Hole")


def apply_spin_flip(state: QuantumState, site: int) -> QuantumState:
    """
    Replace the up boson at ``site`` by a down boson (``S^-``) and renormalize.

    Raises
    ------
    AnnihilationError
        If the site carries no up component.
    """
    return _apply_local(state, site, local_operator(state.basis, "Sm"), "Spin flip")


def apply_defects(
    state: QuantumState, defects: Sequence[tuple[str, int]]
) -> QuantumState:
    """
    Apply ``("hole" | "flip", site)`` defects in order.
    """
    for kind, site in defects:
        if kind == "hole":
            state = apply_hole(state, site)
        elif kind == "flip":
            state = apply_spin_flip(state, site)
        else:
            raise ParameterError(f"Unknown defect type `{kind}`; use 'hole' or 'flip'.")
    return state


def to_dense(state: QuantumState) -> DenseState:
    if isinstance(state, DenseState):
        return state
    space = sector_space(state.basis, state.L, state.sector)
    return DenseState(
        state.basis, state.L, state.sector, amplitudes(state, space.configs)
    )


def to_mps(state: QuantumState) -> MPSState:
    if isinstance(state, MPSState):
        return state
    return mps_from_configs(
        state.basis, state.L, state.space.configs, state.amplitudes
    )


def _dense_ground(H: HamiltonianRep, sector: SymmetrySector) -> tuple[float, DenseState]:
    M = H.sector_matrix(sector)
    n = M.shape[0]
    if n <= 64:
        w, v = scipy.linalg.eigh(M.toarray())
        energy, vec = float(w[0]), v[:, 0]
    else:
        # Fixed start vector keeps the result reproducible.
        v0 = np.ones(n, dtype=complex) / np.sqrt(n)
        w, v = eigsh(M, k=1, which="SA", v0=v0, tol=0)
        energy, vec = float(w[0]), v[:, 0]
    # Fix the global phase: largest amplitude real and positive.
    k = int(np.argmax(np.abs(vec)))
    vec = vec * (abs(vec[k]) / vec[k])
    vec = vec / np.linalg.norm(vec)
    return energy, DenseState(H.basis, H.L, sector, vec)


def prepare_bh_ground(
    H_prep: HamiltonianRep,
    sector: Optional[SymmetrySector] = None,
    method: Literal["dense", "variational"] = "dense",
    config: Optional[GroundStateConfig] = None,
) -> QuantumState:
    """
    Ground state of the preparation Hamiltonian in a fixed particle-number sector.

    Parameters
    ----------
    H_prep
        Bose-Hubbard Hamiltonian with the preparation potential (see
        :func:`~dwmelt.build_bh`).
    sector
        Particle numbers; defaults to ``(L/2, L/2)``.
    method
        ``"dense"`` uses a sparse eigensolver on the sector matrix and returns a
        :class:`DenseState`; ``"variational"`` runs two-site sweeps from the domain
        wall and returns an :class:`MPSState`.
    config
        Sweep controls for the variational method.

    Raises
    ------
    ConvergenceError
        If the variational sweeps exhaust ``config.max_sweeps``.
    """
    from ._evolve import GroundStateConfig

    if H_prep.basis.kind is not BasisKind.BOSON2:
        raise UnsupportedBasisError("The preparation ground state needs a boson basis.")
    L = H_prep.L
    sector = sector or SymmetrySector(L // 2, L - L // 2)
    config = config or GroundStateConfig()
    if method == "dense":
        energy, state = _dense_ground(H_prep, sector)
        logger.info("dense ground state: dim=%d energy=%.12g", state.space.dim, energy)
        return state
    if method == "variational":
        up = min(sector.n_up, L)
        labels = ["up"] * up + ["down"] * (L - up)
        initial = MPSState.product(H_prep.basis, [_local_index(H_prep.basis, s) for s in labels])
        if initial.sector != sector:
            raise ParameterError(
                "The variational search starts from a singly occupied wall; "
                f"sector ({sector.n_up}, {sector.n_down}) needs n_up + n_down = L."
            )
        state, energies = variational_ground_state(
            H_prep.mpo,
            initial,
            max_sweeps=config.max_sweeps,
            energy_tol=config.energy_tol,
            weight_budget=config.weight_budget,
            max_bond=config.max_bond,
        )
        logger.info(
            "variational ground state: sweeps=%d energy=%.12g max_bond=%d",
            len(energies),
            energies[-1],
            state.max_bond,
        )
        return state
    raise ParameterError(f"Unknown method `{method}`; use 'dense' or 'variational'.")


def boson_cutoff_check(
    couplings: CouplingSet,
    L: int,
    n_max_pair: tuple[int, int] = (2, 3),
    mu: float = 10.0,
) -> dict[str, float]:
    """
    Sensitivity of the prepared ground state to the boson cutoff.

    Prepares the dense ground state for both cutoffs and returns the largest
    differences of the magnetization and density profiles and of the energy.
    """
    from ._observables import density_profile, energy, magnetization_profile

    prep = Preparation(mu=mu)
    results = []
    for n_max in n_max_pair:
        H = build_bh(L, couplings, n_max=n_max, prep=prep)
        state = prepare_bh_ground(H)
        results.append(
            (magnetization_profile(state), density_profile(state), energy(state, H))
        )
    (sz_a, n_a, e_a), (sz_b, n_b, e_b) = results
    return {
        "sz_profile": float(np.max(np.abs(sz_a - sz_b))),
        "density": float(np.max(np.abs(n_a - n_b))),
        "energy": abs(e_a - e_b),
    }
