from __future__ import annotations

import enum
import functools
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from ._errors import ParameterError, ShapeError
from ._models import HamiltonianRep, SiteBasis, SymmetrySector, local_charges

__all__ = (
    "Representation",
    "SectorSpace",
    "DenseState",
    "sector_space",
    "enumerate_configs",
)

# Above this many local configurations integer codes would overflow int64.
_CODE_LIMIT = 2**62


class Representation(str, enum.Enum):
    DENSE = "dense"
    MPS = "mps"


def enumerate_configs(basis: SiteBasis, L: int, sector: SymmetrySector) -> np.ndarray:
    """
    All local-state configurations of ``L`` sites with the sector's particle numbers.

    Returns an ``(n, L)`` ``int8`` array ordered lexicographically, site 0 most
    significant.
    """
    q = local_charges(basis)
    d = basis.dim
    target = np.array([sector.n_up, sector.n_down], dtype=np.int64)
    q_max = q.max(axis=0)
    tot = q.sum(axis=1)
    tot_min, tot_max = int(tot.min()), int(tot.max())

    configs = np.zeros((1, 0), dtype=np.int8)
    counts = np.zeros((1, 2), dtype=np.int64)
    for site in range(L):
        remaining = L - site - 1
        parts: list[np.ndarray] = []
        part_counts: list[np.ndarray] = []
        for s in range(d):
            c = counts + q[s]
            need = target - c
            need_tot = need.sum(axis=1)
            ok = (
                (need >= 0).all(axis=1)
                & (need <= q_max * remaining).all(axis=1)
                & (need_tot >= tot_min * remaining)
                & (need_tot <= tot_max * remaining)
            )
            if ok.any():
                col = np.full((int(ok.sum()), 1), s, dtype=np.int8)
                parts.append(np.hstack([configs[ok], col]))
                part_counts.append(c[ok])
        if not parts:
            return np.zeros((0, L), dtype=np.int8)
        configs = np.concatenate(parts)
        counts = np.concatenate(part_counts)

    order = np.lexsort(configs.T[::-1])
    return configs[order]


class SectorSpace:
    """
    Basis of a symmetry sector with fast configuration lookup.

    Lookup uses integer codes (base ``dim`` digits) when they fit in int64, and a
    dictionary of row bytes otherwise.
    """

    def __init__(self, basis: SiteBasis, L: int, sector: SymmetrySector) -> None:
        sector.check(basis, L)
        self.basis = basis
        self.L = L
        self.sector = sector
        self.configs = enumerate_configs(basis, L, sector)
        self.configs.flags.writeable = False
        self._weights: Optional[np.ndarray] = None
        self._codes: Optional[np.ndarray] = None
        self._index: Optional[dict[bytes, int]] = None
        if basis.dim**L < _CODE_LIMIT:
            self._weights = basis.dim ** np.arange(L - 1, -1, -1, dtype=np.int64)
            self._codes = self.configs.astype(np.int64) @ self._weights
        else:
            self._index = {row.tobytes(): i for i, row in enumerate(self.configs)}

    @property
    def dim(self) -> int:
        return int(self.configs.shape[0])

    def __len__(self) -> int:
        return self.dim

    def __repr__(self) -> str:
        return (
            f"SectorSpace({self.basis.kind.value}, L={self.L}, "
            f"sector=({self.sector.n_up}, {self.sector.n_down}), dim={self.dim})"
        )

    def find(self, configs: np.ndarray) -> np.ndarray:
        """
        Row index of each configuration, or -1 for configurations outside the sector.
        """
        configs = np.asarray(configs, dtype=np.int8).reshape(-1, self.L)
        if self._codes is not None and self._weights is not None:
            codes = configs.astype(np.int64) @ self._weights
            pos = np.searchsorted(self._codes, codes)
            pos_c = np.minimum(pos, max(self.dim - 1, 0))
            hit = (pos < self.dim) & (self._codes[pos_c] == codes)
            return np.where(hit, pos_c, -1).astype(np.int64)
        assert self._index is not None
        index = self._index
        return np.array([index.get(row.tobytes(), -1) for row in configs], np.int64)

    def full_codes(self) -> np.ndarray:
        """
        Positions of the sector configurations in the full ``dim**L`` product basis.
        """
        if self._codes is None:
            raise ShapeError("Full-space codes overflow for this chain length.")
        return self._codes


@functools.lru_cache(maxsize=32)
def sector_space(basis: SiteBasis, L: int, sector: SymmetrySector) -> SectorSpace:
    """
    Cached :class:`SectorSpace` for a basis, chain length and sector.
    """
    return SectorSpace(basis, L, sector)


def apply_product(
    configs: np.ndarray, ops: Sequence[tuple[int, np.ndarray]]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Action of a product of single-site matrices on basis configurations.

    Returns ``(source_row, new_config, value)`` triples for every nonzero matrix
    element.
    """
    n = configs.shape[0]
    src = np.arange(n, dtype=np.int64)
    cur = configs
    vals = np.ones(n, dtype=complex)
    for site, op in ops:
        rows, cols = np.nonzero(op)
        new_src: list[np.ndarray] = []
        new_cfg: list[np.ndarray] = []
        new_vals: list[np.ndarray] = []
        local = cur[:, site]
        for r, c in zip(rows, cols):
            m = local == c
            if not m.any():
                continue
            cfg = cur[m].copy()
            cfg[:, site] = r
            new_src.append(src[m])
            new_cfg.append(cfg)
            new_vals.append(vals[m] * op[r, c])
        if not new_src:
            return (
                np.zeros(0, np.int64),
                np.zeros((0, configs.shape[1]), np.int8),
                np.zeros(0, complex),
            )
        src = np.concatenate(new_src)
        cur = np.concatenate(new_cfg)
        vals = np.concatenate(new_vals)
    return src, cur, vals


def sector_matrix(H: HamiltonianRep, sector: SymmetrySector) -> sp.csr_matrix:
    space = sector_space(H.basis, H.L, sector)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    data: list[np.ndarray] = []
    for term in H.terms:
        ops = [(term.start + k, f) for k, f in enumerate(term.factors)]
        src, cfg, vals = apply_product(space.configs, ops)
        dst = space.find(cfg)
        keep = dst >= 0
        rows.append(dst[keep])
        cols.append(src[keep])
        data.append(term.coef * vals[keep])
    n = space.dim
    if not rows:
        return sp.csr_matrix((n, n), dtype=complex)
    M = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return M.tocsr()


class DenseState:
    """
    Sector-resolved state vector: one complex amplitude per sector configuration.
    """

    representation = Representation.DENSE

    def __init__(
        self,
        basis: SiteBasis,
        L: int,
        sector: SymmetrySector,
        amplitudes: np.ndarray,
    ) -> None:
        self.basis = basis
        self.L = L
        self.sector = sector
        self.space = sector_space(basis, L, sector)
        amplitudes = np.asarray(amplitudes, dtype=complex).reshape(-1)
        if amplitudes.shape[0] != self.space.dim:
            raise ShapeError(
                f"Expected {self.space.dim} amplitudes for {self.space!r}, got "
                f"{amplitudes.shape[0]}."
            )
        self.amplitudes = amplitudes

    def __repr__(self) -> str:
        return f"DenseState(L={self.L}, dim={self.space.dim}, norm={self.norm:.6g})"

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> DenseState:
        n = self.norm
        if n == 0:
            raise ParameterError("Cannot normalize a zero state.")
        return self.with_amplitudes(self.amplitudes / n)

    def with_amplitudes(self, amplitudes: np.ndarray) -> DenseState:
        return DenseState(self.basis, self.L, self.sector, amplitudes)

    def apply_product(
        self, ops: Sequence[tuple[int, np.ndarray]]
    ) -> tuple[np.ndarray, np.ndarray]:
        """
        ``prod(ops) |psi>`` as configurations and amplitudes.

        Returns an ``(n, L)`` ``int8`` array of configurations and a complex vector,
        with duplicate configurations already summed.
        """
        src, cfg, vals = apply_product(self.space.configs, ops)
        return _merge(cfg, vals * self.amplitudes[src])

    def expectation(self, ops: Sequence[tuple[int, np.ndarray]]) -> complex:
        """
        ``<psi| prod(ops) |psi>`` for single-site matrices on distinct sites.
        """
        for site, _ in ops:
            if not 0 <= site < self.L:
                raise ShapeError(f"Site {site} is out of range for L={self.L}.")
        psi = self.amplitudes
        if all(_is_diagonal(op) for _, op in ops):
            weights = np.ones(self.space.dim, dtype=complex)
            cfg = self.space.configs
            for site, op in ops:
                weights *= np.diagonal(op)[cfg[:, site]]
            return complex(np.sum(np.abs(psi) ** 2 * weights))
        src, cfg, vals = apply_product(self.space.configs, ops)
        dst = self.space.find(cfg)
        keep = dst >= 0
        return complex(
            np.sum(psi[dst[keep]].conj() * vals[keep] * psi[src[keep]])
        )

    def full_vector(self) -> np.ndarray:
        """
        Embedding into the full ``dim**L`` product space (small L only).
        """
        out = np.zeros(self.basis.dim**self.L, dtype=complex)
        out[self.space.full_codes()] = self.amplitudes
        return out

    def schmidt_values(self, bond: int) -> np.ndarray:
        """
        Schmidt values across the cut between sites ``bond - 1`` and ``bond``.

        The decomposition is done block by block in the left particle numbers.
        """
        if not 1 <= bond <= self.L - 1:
            raise ShapeError(f"Bond {bond} is out of range for L={self.L}.")
        q = local_charges(self.basis)
        cfg = self.space.configs
        left_q = q[cfg[:, :bond]].sum(axis=1)
        values: list[np.ndarray] = []
        for key in np.unique(left_q, axis=0):
            rows = np.flatnonzero((left_q == key).all(axis=1))
            _, li = np.unique(cfg[rows, :bond], axis=0, return_inverse=True)
            _, ri = np.unique(cfg[rows, bond:], axis=0, return_inverse=True)
            li, ri = li.reshape(-1), ri.reshape(-1)
            block = np.zeros((li.max() + 1, ri.max() + 1), dtype=complex)
            block[li, ri] = self.amplitudes[rows]
            values.append(np.linalg.svd(block, compute_uv=False))
        s = np.sort(np.concatenate(values))[::-1]
        n = np.sqrt(np.sum(s**2))
        return s / n if n > 0 else s


def _is_diagonal(op: np.ndarray) -> bool:
    return not np.any(op - np.diag(np.diagonal(op)))


def _merge(cfg: np.ndarray, vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if cfg.shape[0] == 0:
        return cfg, vals
    uniq, inverse = np.unique(cfg, axis=0, return_inverse=True)
    out = np.zeros(uniq.shape[0], dtype=complex)
    np.add.at(out, inverse.reshape(-1), vals)
    return uniq, out
