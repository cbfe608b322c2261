from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from functools import cached_property, reduce
from typing import TYPE_CHECKING, Literal, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from ._errors import OperatorLookupError, ParameterError, ShapeError

if TYPE_CHECKING:
    from ._tensornet import MPO

__all__ = (
    "BasisKind",
    "SiteBasis",
    "CouplingSet",
    "SymmetrySector",
    "Preparation",
    "LocalTerm",
    "HamiltonianRep",
    "effective_couplings",
    "build_xxz",
    "build_bh",
    "build_tj",
    "local_operator",
    "local_charges",
    "charge_change",
)

Species = Literal["up", "down"]


class BasisKind(str, enum.Enum):
    SPIN_HALF = "spin_half"
    TJ = "tj"
    BOSON2 = "boson2"


@dataclass(frozen=True)
class SiteBasis:
    """
    Single-site Hilbert space of a lattice model.

    Parameters
    ----------
    kind
        ``SPIN_HALF`` (states up, down), ``TJ`` (states empty, up, down) or ``BOSON2``
        (two boson species, each with occupations ``0..n_max``).
    n_max
        Per-species occupation cutoff. Only meaningful for ``BOSON2``; forced to 1 for
        the other kinds.

    Note
    ----
    The ordering of local states is part of the contract, since operator matrices
    depend on it: ``TJ`` is ordered (empty, up, down) and ``BOSON2`` lexicographically
    in ``(n_up, n_down)``, so that state ``(a, b)`` has index ``a * (n_max + 1) + b``.
    """

    kind: BasisKind
    n_max: int = 1

    def __post_init__(self) -> None:
        kind = BasisKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is BasisKind.BOSON2:
            if int(self.n_max) != self.n_max or self.n_max < 1:
                raise ParameterError(
                    "`n_max` must be an integer >= 1 for a two-species boson basis."
                )
            object.__setattr__(self, "n_max", int(self.n_max))
        else:
            object.__setattr__(self, "n_max", 1)

    @classmethod
    def spin_half(cls) -> SiteBasis:
        return cls(BasisKind.SPIN_HALF)

    @classmethod
    def tj(cls) -> SiteBasis:
        return cls(BasisKind.TJ)

    @classmethod
    def boson2(cls, n_max: int = 2) -> SiteBasis:
        return cls(BasisKind.BOSON2, n_max)

    @property
    def dim(self) -> int:
        if self.kind is BasisKind.SPIN_HALF:
            return 2
        if self.kind is BasisKind.TJ:
            return 3
        return (self.n_max + 1) ** 2

    @property
    def labels(self) -> tuple[str, ...]:
        if self.kind is BasisKind.SPIN_HALF:
            return ("up", "down")
        if self.kind is BasisKind.TJ:
            return ("empty", "up", "down")
        m = self.n_max + 1
        return tuple(f"({a},{b})" for a in range(m) for b in range(m))

    def index(self, label: str) -> int:
        """
        Position of a local state label in the basis ordering.
        """
        try:
            return self.labels.index(label)
        except ValueError:
            raise OperatorLookupError(
                f"`{label}` is not a local state of the {self.kind.value} basis."
            ) from None


@functools.lru_cache(maxsize=None)
def local_charges(basis: SiteBasis) -> np.ndarray:
    """
    ``(dim, 2)`` integer table of ``(n_up, n_down)`` for every local state.
    """
    if basis.kind is BasisKind.SPIN_HALF:
        q = np.array([[1, 0], [0, 1]], dtype=np.int64)
    elif basis.kind is BasisKind.TJ:
        q = np.array([[0, 0], [1, 0], [0, 1]], dtype=np.int64)
    else:
        m = basis.n_max + 1
        q = np.array([[a, b] for a in range(m) for b in range(m)], dtype=np.int64)
    q.flags.writeable = False
    return q


# Spellings used in formulas map onto the canonical names.
_ALIASES = {
    "S^x": "Sx",
    "S^y": "Sy",
    "S^z": "Sz",
    "S^+": "Sp",
    "S^-": "Sm",
    "S^−": "Sm",
    "n_↑": "n_up",
    "n_↓": "n_down",
}


def local_operator(basis: SiteBasis, name: str) -> np.ndarray:
    """
    Matrix of a named single-site operator in the basis ordering.

    Parameters
    ----------
    basis
        The site basis.
    name
        One of ``Sx``, ``Sy``, ``Sz``, ``Sp``, ``Sm``, ``n_up``, ``n_down``, ``n``,
        ``id`` (all bases); ``a_up``, ``a_down``, ``a_up_dag``, ``a_down_dag``
        (hard-core operators, ``TJ`` only); ``b_up``, ``b_down``, ``b_up_dag``,
        ``b_down_dag``, ``nn_up``, ``nn_down``, ``n_up_n_down`` (``BOSON2`` only).
        ``nn_s`` is ``n_s (n_s - 1)``.

    Returns
    -------
    :
        A read-only complex ``(dim, dim)`` array.

    Raises
    ------
    OperatorLookupError
        If the name is not defined for the basis.

    Note
    ----
    On ``TJ`` the spin operators annihilate the empty state. On ``BOSON2`` they are
    the species bilinears ``(1/2) sum b^dag_s [sigma]_{ss'} b_s'``; their algebra is
    exact on states with ``n_up + n_down <= n_max``.
    """
    name = _ALIASES.get(name, name)
    table = _operator_table(basis)
    try:
        return table[name]
    except KeyError:
        raise OperatorLookupError(
            f"Operator `{name}` is not defined for the {basis.kind.value} basis."
        ) from None


def charge_change(basis: SiteBasis, op: np.ndarray) -> Optional[tuple[int, int]]:
    """
    The ``(dn_up, dn_down)`` an operator applies, or ``None`` if it mixes several.
    """
    q = local_charges(basis)
    rows, cols = np.nonzero(np.abs(op) > 0)
    if rows.size == 0:
        return (0, 0)
    deltas = {tuple(int(x) for x in q[r] - q[c]) for r, c in zip(rows, cols)}
    if len(deltas) != 1:
        return None
    (delta,) = deltas
    return (delta[0], delta[1])


@functools.lru_cache(maxsize=None)
def _operator_table(basis: SiteBasis) -> dict[str, np.ndarray]:
    d = basis.dim
    ops: dict[str, np.ndarray] = {}

    def unit(r: int, c: int) -> np.ndarray:
        m = np.zeros((d, d), dtype=complex)
        m[r, c] = 1.0
        return m

    if basis.kind is BasisKind.SPIN_HALF:
        sp_ = unit(0, 1)
        ops["Sz"] = np.diag([0.5, -0.5]).astype(complex)
        ops["n_up"] = unit(0, 0)
        ops["n_down"] = unit(1, 1)
    elif basis.kind is BasisKind.TJ:
        sp_ = unit(1, 2)
        ops["Sz"] = np.diag([0.0, 0.5, -0.5]).astype(complex)
        ops["n_up"] = unit(1, 1)
        ops["n_down"] = unit(2, 2)
        ops["a_up"] = unit(0, 1)
        ops["a_down"] = unit(0, 2)
        ops["a_up_dag"] = unit(1, 0)
        ops["a_down_dag"] = unit(2, 0)
    else:
        m = basis.n_max + 1
        b = np.diag(np.sqrt(np.arange(1, m, dtype=float)), k=1).astype(complex)
        eye = np.eye(m, dtype=complex)
        num = np.diag(np.arange(m, dtype=float)).astype(complex)
        ops["b_up"] = np.kron(b, eye)
        ops["b_down"] = np.kron(eye, b)
        ops["b_up_dag"] = ops["b_up"].conj().T
        ops["b_down_dag"] = ops["b_down"].conj().T
        ops["n_up"] = np.kron(num, eye)
        ops["n_down"] = np.kron(eye, num)
        ops["nn_up"] = np.kron(num @ (num - eye), eye)
        ops["nn_down"] = np.kron(eye, num @ (num - eye))
        ops["n_up_n_down"] = ops["n_up"] @ ops["n_down"]
        sp_ = ops["b_up_dag"] @ ops["b_down"]
        ops["Sz"] = 0.5 * (ops["n_up"] - ops["n_down"])

    sm_ = sp_.conj().T
    ops["Sp"] = sp_
    ops["Sm"] = sm_
    ops["Sx"] = 0.5 * (sp_ + sm_)
    ops["Sy"] = -0.5j * (sp_ - sm_)
    ops["n"] = ops["n_up"] + ops["n_down"]
    ops["id"] = np.eye(d, dtype=complex)

    for v in ops.values():
        v.flags.writeable = False
    return ops


@dataclass(frozen=True)
class CouplingSet:
    """
    Raw two-species Bose-Hubbard parameters and the effective spin couplings they
    imply.

    The effective couplings ``J_perp``, ``J_z`` and ``h`` are derived on access with
    :func:`effective_couplings`, so a modified copy (``dataclasses.replace``) never
    carries stale values.
    """

    t_up: float = 1.0
    t_down: float = 1.0
    U_up: float = 15.0
    U_down: float = 15.0
    V: float = 15.0
    mu: Optional[float] = None

    @classmethod
    def isotropic(cls, t: float = 1.0, U: float = 15.0, mu: Optional[float] = None):
        return cls(t_up=t, t_down=t, U_up=U, U_down=U, V=U, mu=mu)

    @property
    def J_perp(self) -> float:
        return self.effective()[0]

    @property
    def J_z(self) -> float:
        return self.effective()[1]

    @property
    def h(self) -> float:
        return self.effective()[2]

    @property
    def delta_V(self) -> float:
        return (self.U_up + self.U_down) / 2 - self.V

    def effective(self) -> tuple[float, float, float]:
        return effective_couplings(
            self.t_up, self.t_down, self.U_up, self.U_down, self.V
        )


def effective_couplings(
    t_up: float, t_down: float, U_up: float, U_down: float, V: float
) -> tuple[float, float, float]:
    """
    Second-order spin couplings of the two-species Bose-Hubbard chain at unit filling.

    Returns
    -------
    :
        ``(J_perp, J_z, h)``.

    Raises
    ------
    ParameterError
        If any interaction strength is not positive.

    Example
    -------
    >>> effective_couplings(1, 1, 15, 15, 15)
    (-0.26666666666666666, -0.26666666666666666, 0.0)
    """
    if not (U_up > 0 and U_down > 0 and V > 0):
        raise ParameterError("`U_up`, `U_down` and `V` must all be positive.")
    # The evaluation order keeps J_perp == J_z bit-for-bit at the isotropic point.
    J_z = 2 * (t_up**2 + t_down**2) / V - 4 * t_up**2 / U_up - 4 * t_down**2 / U_down
    J_perp = -4 * t_up * t_down / V
    h = 4 * t_up**2 / U_up - 4 * t_down**2 / U_down
    return (J_perp, J_z, h)


@dataclass(frozen=True)
class SymmetrySector:
    """
    Fixed particle numbers ``(n_up, n_down)``. For spin chains ``n_down = L - n_up``.
    """

    n_up: int
    n_down: int

    def __post_init__(self) -> None:
        if self.n_up < 0 or self.n_down < 0:
            raise ParameterError("Sector particle numbers must be non-negative.")
        object.__setattr__(self, "n_up", int(self.n_up))
        object.__setattr__(self, "n_down", int(self.n_down))

    @classmethod
    def for_spins(cls, L: int, n_up: int) -> SymmetrySector:
        return cls(n_up, L - n_up)

    def magnetization(self) -> float:
        return 0.5 * (self.n_up - self.n_down)

    def check(self, basis: SiteBasis, L: int) -> None:
        q = local_charges(basis)
        total = q.sum(axis=1)
        n = self.n_up + self.n_down
        if (
            self.n_up > q[:, 0].max() * L
            or self.n_down > q[:, 1].max() * L
            or n > total.max() * L
            or n < total.min() * L
        ):
            raise ParameterError(
                f"Sector ({self.n_up}, {self.n_down}) is empty for L={L} on the "
                f"{basis.kind.value} basis."
            )


@dataclass(frozen=True)
class Preparation:
    """
    Species- and site-dependent chemical potential used to prepare the wall.

    ``left_species`` is favoured on sites ``0..L/2-1`` and ``right_species`` on the
    rest, each with strength ``mu``.
    """

    mu: float = 10.0
    left_species: Species = "up"
    right_species: Species = "down"

    def __post_init__(self) -> None:
        for s in (self.left_species, self.right_species):
            if s not in ("up", "down"):
                raise ParameterError(f"Unknown species `{s}`; use 'up' or 'down'.")


@dataclass(frozen=True)
class LocalTerm:
    """
    ``coef`` times a product of named single-site operators on contiguous sites
    ``start, start + 1, ...``.
    """

    start: int
    names: tuple[str, ...]
    coef: complex
    factors: tuple[np.ndarray, ...] = field(compare=False, repr=False)

    @property
    def width(self) -> int:
        return len(self.names)

    @property
    def sites(self) -> range:
        return range(self.start, self.start + self.width)

    @property
    def op(self) -> np.ndarray:
        """
        Dense operator on the window, without the coefficient.
        """
        return reduce(np.kron, self.factors)

    def matrix(self) -> np.ndarray:
        return self.coef * self.op


def _term(basis: SiteBasis, start: int, names: Sequence[str], coef: complex):
    names = tuple(_ALIASES.get(n, n) for n in names)
    return LocalTerm(
        start, names, complex(coef), tuple(local_operator(basis, n) for n in names)
    )


@dataclass(frozen=True)
class HamiltonianRep:
    """
    A lattice Hamiltonian as a list of local terms, with a matrix-product-operator
    form built on demand.

    Values are immutable after construction and can be shared between concurrent
    evolution runs.
    """

    basis: SiteBasis
    L: int
    terms: tuple[LocalTerm, ...]
    model: str = "custom"

    def __post_init__(self) -> None:
        for term in self.terms:
            if term.start < 0 or term.start + term.width > self.L:
                raise ShapeError(
                    f"Term {term.names} at site {term.start} does not fit in "
                    f"L={self.L}."
                )

    @cached_property
    def mpo(self) -> MPO:
        from ._tensornet import MPO

        return MPO.from_terms(self)

    def to_sparse(self) -> sp.csr_matrix:
        """
        Full-space sparse matrix (``dim**L`` square). Meant for small chains.
        """
        d = self.basis.dim
        size = d**self.L
        H = sp.csr_matrix((size, size), dtype=complex)
        for term in self.terms:
            left = sp.identity(d**term.start, dtype=complex, format="csr")
            right = sp.identity(
                d ** (self.L - term.start - term.width), dtype=complex, format="csr"
            )
            local = sp.csr_matrix(term.matrix())
            H = H + sp.kron(sp.kron(left, local, format="csr"), right, format="csr")
        return H.tocsr()

    def sector_matrix(self, sector: SymmetrySector) -> sp.csr_matrix:
        """
        Restriction of the Hamiltonian to a symmetry sector, in the ordering of
        :func:`~dwmelt.sector_space`.
        """
        from ._sectors import sector_matrix

        return sector_matrix(self, sector)

    def windows(self, width: int) -> list[LocalTerm]:
        return [t for t in self.terms if t.width == width]


def _check_L(L: int, minimum: int = 2) -> None:
    if int(L) != L or L < minimum:
        raise ParameterError(f"`L` must be an integer >= {minimum}, got {L}.")


def build_xxz(L: int, J_perp: float, J_z: float) -> HamiltonianRep:
    """
    Open spin-1/2 XXZ chain
    ``J_perp sum (Sx Sx + Sy Sy) + J_z sum Sz Sz`` over nearest neighbours.

    Raises
    ------
    ParameterError
        If ``L < 2``.
    """
    _check_L(L)
    basis = SiteBasis.spin_half()
    terms: list[LocalTerm] = []
    for j in range(L - 1):
        terms += _exchange_terms(basis, j, J_perp, J_z)
    return HamiltonianRep(basis, L, tuple(terms), model="xxz")


def _exchange_terms(basis: SiteBasis, j: int, J_perp: float, J_z: float):
    terms: list[LocalTerm] = []
    if J_perp != 0:
        terms.append(_term(basis, j, ("Sp", "Sm"), J_perp / 2))
        terms.append(_term(basis, j, ("Sm", "Sp"), J_perp / 2))
    if J_z != 0:
        terms.append(_term(basis, j, ("Sz", "Sz"), J_z))
    return terms


def _hop_terms(basis: SiteBasis, j: int, op: str, amplitude: float):
    # -amplitude (c^dag_j c_{j+1} + h.c.)
    if amplitude == 0:
        return []
    return [
        _term(basis, j, (f"{op}_dag", op), -amplitude),
        _term(basis, j, (op, f"{op}_dag"), -amplitude),
    ]


def build_bh(
    L: int,
    couplings: CouplingSet,
    n_max: int = 2,
    prep: Optional[Preparation] = None,
) -> HamiltonianRep:
    """
    Two-species Bose-Hubbard chain truncated to ``n_max`` bosons per species and site.

    Parameters
    ----------
    L
        Number of sites.
    couplings
        Hopping and interaction strengths.
    n_max
        Per-species occupation cutoff.
    prep
        If given, adds the preparation potential ``-mu`` on ``prep.left_species`` for
        the left half and on ``prep.right_species`` for the right half.

    Raises
    ------
    ParameterError
        If ``L < 2``, or ``L`` is odd while ``prep`` is set.
    """
    _check_L(L)
    if prep is not None and L % 2:
        raise ParameterError("`L` must be even when a preparation potential is set.")
    basis = SiteBasis.boson2(n_max)
    terms: list[LocalTerm] = []
    for j in range(L - 1):
        terms += _hop_terms(basis, j, "b_up", couplings.t_up)
        terms += _hop_terms(basis, j, "b_down", couplings.t_down)
    for j in range(L):
        if couplings.U_up:
            terms.append(_term(basis, j, ("nn_up",), couplings.U_up / 2))
        if couplings.U_down:
            terms.append(_term(basis, j, ("nn_down",), couplings.U_down / 2))
        if couplings.V:
            terms.append(_term(basis, j, ("n_up_n_down",), couplings.V))
    if prep is not None and prep.mu:
        for j in range(L):
            species = prep.left_species if j < L // 2 else prep.right_species
            terms.append(_term(basis, j, (f"n_{species}",), -prep.mu))
    return HamiltonianRep(
        basis, L, tuple(terms), model="bh" if prep is None else "bh_prep"
    )


def build_tj(
    L: int,
    couplings: CouplingSet,
    include_three_site: bool = True,
    *,
    include_exchange: bool = True,
) -> HamiltonianRep:
    """
    Hard-core boson t-J chain: direct hopping, XXZ exchange with the effective
    couplings of ``couplings``, and the second-order three-site hopping terms.

    The three-site families move a boson by two sites with amplitudes
    ``t_s**2 / V`` (across the other species), ``t_up t_down / V`` (with a spin flip
    on the middle site) and ``2 t_s**2 / U_s`` (across the same species).

    Raises
    ------
    ParameterError
        If ``L < 2``, if ``L < 3`` with three-site terms, or for non-positive
        interaction strengths.
    """
    _check_L(L, 3 if include_three_site else 2)
    basis = SiteBasis.tj()
    J_perp, J_z, _ = couplings.effective()
    t = {"up": couplings.t_up, "down": couplings.t_down}
    U = {"up": couplings.U_up, "down": couplings.U_down}
    other = {"up": "down", "down": "up"}
    raising = {"up": "Sp", "down": "Sm"}
    V = couplings.V

    terms: list[LocalTerm] = []
    for j in range(L - 1):
        terms += _hop_terms(basis, j, "a_up", t["up"])
        terms += _hop_terms(basis, j, "a_down", t["down"])
        if include_exchange:
            terms += _exchange_terms(basis, j, J_perp, J_z)

    if include_three_site:
        for j in range(L - 2):
            for s in ("up", "down"):
                a, a_dag = f"a_{s}", f"a_{s}_dag"
                # s hops over the other species
                c = -t[s] ** 2 / V
                if c:
                    terms.append(_term(basis, j, (a_dag, f"n_{other[s]}", a), c))
                    terms.append(_term(basis, j, (a, f"n_{other[s]}", a_dag), c))
                # s hops onto a -s site whose boson moves on, flipping the middle
                c = -t["up"] * t["down"] / V
                if c:
                    o = other[s]
                    terms.append(_term(basis, j, (f"a_{o}_dag", raising[s], a), c))
                    terms.append(_term(basis, j, (f"a_{o}", raising[o], a_dag), c))
                # s hops over the same species
                c = -2 * t[s] ** 2 / U[s]
                if c:
                    terms.append(_term(basis, j, (a_dag, f"n_{s}", a), c))
                    terms.append(_term(basis, j, (a, f"n_{s}", a_dag), c))
    return HamiltonianRep(basis, L, tuple(terms), model="tj")
