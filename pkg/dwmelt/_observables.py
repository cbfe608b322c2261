from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ._errors import (
    InsufficientDataError,
    OperatorLookupError,
    ParameterError,
    ShapeError,
    UnsupportedBasisError,
)
from ._models import BasisKind, HamiltonianRep, charge_change, local_operator
from ._sectors import DenseState
from ._tensornet import MPSState, expectation, sandwich, schmidt_spectra

__all__ = (
    "ObserverSchedule",
    "TrajectoryRecord",
    "CurrentSet",
    "SITE_KEYS",
    "BOND_KEYS",
    "DX_KEYS",
    "SCALAR_KEYS",
    "expect",
    "local_profile",
    "magnetization_profile",
    "density_profile",
    "correlator_sites",
    "raw_correlator",
    "connected_zz",
    "xx_correlator",
    "entanglement_entropy",
    "entropy_profile",
    "energy",
    "currents",
    "measure",
    "keys_for",
)

State = Union[DenseState, MPSState]

SITE_KEYS = ("sz_profile", "density")
BOND_KEYS = (
    "entropy",
    "current_up",
    "current_down",
    "current_spin",
    "current_up_2site",
    "current_down_2site",
    "current_spin_2site",
    "current_up_3site",
    "current_down_3site",
    "current_spin_3site",
)
DX_KEYS = ("zeta", "chi")
SCALAR_KEYS = ("energy", "norm")
# Per-shift raw products: zz_raw_d{d}, xx_raw_d{d}.
RAW_PREFIXES = ("zz_raw_d", "xx_raw_d")

CURRENT_KEYS = tuple(k for k in BOND_KEYS if k.startswith("current_"))


def _default_keys() -> tuple[str, ...]:
    return ("sz_profile", "density", "zeta", "chi", "entropy", *CURRENT_KEYS, "energy", "norm")


@dataclass(frozen=True)
class ObserverSchedule:
    """
    What to measure and when.

    Parameters
    ----------
    stride
        Sample every ``stride`` time steps (the last step is always sampled).
    keys
        Observable keys to record. ``density`` is skipped on spin-1/2 chains.
    dx
        Correlator distances.
    shifts
        Shifts ``d`` for which raw ``zz``/``xx`` products are stored, as needed by the
        superposition predictions.
    """

    stride: int = 1
    keys: tuple[str, ...] = field(default_factory=_default_keys)
    dx: tuple[int, ...] = (1, 2, 3)
    shifts: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ParameterError("`stride` must be at least 1.")
        known = set(SITE_KEYS + BOND_KEYS + DX_KEYS + SCALAR_KEYS)
        for key in self.keys:
            if key not in known:
                raise ParameterError(f"Unknown observable key `{key}`.")
        if any(d < 1 for d in self.dx):
            raise ParameterError("Correlator distances `dx` must be at least 1.")
        if any(s < 0 for s in self.shifts):
            raise ParameterError("Shifts must be non-negative.")
        object.__setattr__(self, "keys", tuple(self.keys))
        object.__setattr__(self, "dx", tuple(int(d) for d in self.dx))
        object.__setattr__(self, "shifts", tuple(int(s) for s in self.shifts))

    def index_of(self, key: str, L: int) -> np.ndarray:
        """
        Index values of an observable array: sites, bonds, distances or ``[0]``.
        """
        if key in SITE_KEYS:
            return np.arange(L)
        if key in BOND_KEYS:
            return np.arange(L - 1)
        if key in DX_KEYS or key.startswith(RAW_PREFIXES):
            return np.array(self.dx, dtype=np.int64)
        return np.zeros(1, dtype=np.int64)


def expect(state: State, ops: Sequence[tuple[int, np.ndarray]]) -> complex:
    """
    ``<psi| prod_k op_k |psi>`` for single-site matrices on distinct sites.
    """
    if isinstance(state, DenseState):
        return state.expectation(ops)
    return expectation(state, ops)


def local_profile(state: State, name: str) -> np.ndarray:
    """
    Real part of ``<O_j>`` at every site for a named single-site operator.
    """
    op = local_operator(state.basis, name)
    return np.array([expect(state, [(j, op)]).real for j in range(state.L)])


def magnetization_profile(state: State) -> np.ndarray:
    return local_profile(state, "Sz")


def density_profile(state: State) -> np.ndarray:
    """
    ``<n_up + n_down>`` per site.

    Raises
    ------
    UnsupportedBasisError
        On spin-1/2 chains, where every site is occupied by definition.
    """
    if state.basis.kind is BasisKind.SPIN_HALF:
        raise UnsupportedBasisError("Densities are not defined on a spin-1/2 chain.")
    return local_profile(state, "n")


def correlator_sites(L: int, dx: int) -> tuple[int, int]:
    """
    Sites ``(i, j)`` of the symmetric pair at distance ``dx`` around the wall.

    The pair is placed at ``L/2 - dx`` and ``L/2 + dx - 1`` (0-based), so ``dx = 1``
    is the pair straddling the wall.
    """
    if not 1 <= dx <= L // 2:
        raise ParameterError(f"`dx` must lie in [1, {L // 2}], got {dx}.")
    return L // 2 - dx, L // 2 + dx - 1


def raw_correlator(state: State, name: str, i: int, j: int) -> float:
    op = local_operator(state.basis, name)
    if i == j:
        return float(expect(state, [(i, op @ op)]).real)
    return float(expect(state, [(i, op), (j, op)]).real)


def connected_zz(state: State, dx: int) -> float:
    """
    ``<Sz_i Sz_j> - <Sz_i><Sz_j>`` for the pair at distance ``dx``.
    """
    i, j = correlator_sites(state.L, dx)
    sz = local_operator(state.basis, "Sz")
    zi = expect(state, [(i, sz)]).real
    zj = expect(state, [(j, sz)]).real
    return raw_correlator(state, "Sz", i, j) - zi * zj


def xx_correlator(state: State, dx: int) -> float:
    """
    ``<Sx_i Sx_j>`` for the pair at distance ``dx``.
    """
    i, j = correlator_sites(state.L, dx)
    return raw_correlator(state, "Sx", i, j)


def _entropy(s: np.ndarray) -> float:
    p = s**2
    p = p[p > 0]
    return float(max(-np.sum(p * np.log(p)), 0.0))


def entanglement_entropy(state: State, bond: int) -> float:
    """
    Von Neumann entropy of the cut between sites ``bond - 1`` and ``bond``.
    """
    if not 1 <= bond <= state.L - 1:
        raise ShapeError(f"Bond {bond} is out of range for L={state.L}.")
    if isinstance(state, DenseState):
        return _entropy(state.schmidt_values(bond))
    return _entropy(state.schmidt_values[bond - 1])


def entropy_profile(state: State) -> np.ndarray:
    """
    Entropies of all internal cuts; element ``b`` is the cut after site ``b``.
    """
    if isinstance(state, DenseState):
        return np.array([_entropy(state.schmidt_values(b)) for b in range(1, state.L)])
    return np.array([_entropy(s) for s in schmidt_spectra(state)])


def energy(state: State, H: HamiltonianRep) -> float:
    if isinstance(state, DenseState):
        from ._evolve import sector_operator

        M = sector_operator(H, state.sector)
        psi = state.amplitudes
        return float(np.vdot(psi, M @ psi).real)
    return float(sandwich(state, H.mpo, state).real)


@dataclass(frozen=True)
class CurrentSet:
    """
    Particle and spin currents through one bond.

    ``spin`` is ``(up - down) / 2``; the split parts ``spin_2site`` and
    ``spin_3site`` are ``up - down`` without the factor 1/2. Three-site parts are
    ``None`` at the two edge bonds, where the window of the split is incomplete.
    """

    up: float
    down: float
    spin: float
    up_2site: float
    down_2site: float
    spin_2site: float
    up_3site: Optional[float]
    down_3site: Optional[float]
    spin_3site: Optional[float]


@functools.lru_cache(maxsize=16)
def _term_charges(H: HamiltonianRep) -> tuple[np.ndarray, ...]:
    out = []
    for term in H.terms:
        dq = []
        for name, f in zip(term.names, term.factors):
            delta = charge_change(H.basis, f)
            if delta is None:
                raise ParameterError(f"Operator `{name}` has no definite charge change.")
            dq.append(delta)
        out.append(np.array(dq, dtype=np.int64).reshape(-1, 2))
    return tuple(out)


def currents(state: State, H: HamiltonianRep, bond: int) -> CurrentSet:
    """
    Particle currents of both species through ``bond`` (between sites ``bond`` and
    ``bond + 1``).

    Each current is the time derivative of the number of bosons right of the bond,
    ``i <[H, N_right]>``, assembled from the terms of ``H``: a term moving ``k``
    bosons across the bond contributes ``-i k <term>``. The split into two- and
    three-site parts follows the width of the contributing terms.

    Raises
    ------
    ParameterError
        If the bond is not an internal bond of the chain.
    """
    L = state.L
    if not 0 <= bond <= L - 2:
        raise ParameterError(f"Bond {bond} is out of range [0, {L - 2}].")
    parts = {2: np.zeros(2), 3: np.zeros(2)}
    for term, dq in zip(H.terms, _term_charges(H)):
        if not term.start <= bond < term.start + term.width - 1:
            continue
        right = np.arange(term.start, term.start + term.width) > bond
        delta = dq[right].sum(axis=0)
        if not delta.any():
            continue
        value = term.coef * expect(
            state, [(term.start + k, f) for k, f in enumerate(term.factors)]
        )
        parts[min(max(term.width, 2), 3)] += (-1j * value * delta).real
    up2, down2 = parts[2]
    up3, down3 = parts[3]
    up, down = up2 + up3, down2 + down3
    edge = bond == 0 or bond == L - 2
    return CurrentSet(
        up=float(up),
        down=float(down),
        spin=float(0.5 * (up - down)),
        up_2site=float(up2),
        down_2site=float(down2),
        spin_2site=float(up2 - down2),
        up_3site=None if edge else float(up3),
        down_3site=None if edge else float(down3),
        spin_3site=None if edge else float(up3 - down3),
    )


def _nan(x: Optional[float]) -> float:
    return math.nan if x is None else x


def measure(state: State, H: HamiltonianRep, schedule: ObserverSchedule) -> dict[str, np.ndarray]:
    """
    Evaluate every key of the schedule on one state.
    """
    L = state.L
    keys = schedule.keys
    out: dict[str, np.ndarray] = {}
    sz = magnetization_profile(state)
    if "sz_profile" in keys:
        out["sz_profile"] = sz
    if "density" in keys and state.basis.kind is not BasisKind.SPIN_HALF:
        out["density"] = density_profile(state)

    dxs = [dx for dx in schedule.dx if dx <= L // 2]
    if "zeta" in keys:
        vals = []
        for dx in schedule.dx:
            if dx in dxs:
                i, j = correlator_sites(L, dx)
                vals.append(raw_correlator(state, "Sz", i, j) - sz[i] * sz[j])
            else:
                vals.append(math.nan)
        out["zeta"] = np.array(vals)
    if "chi" in keys:
        out["chi"] = np.array(
            [xx_correlator(state, dx) if dx in dxs else math.nan for dx in schedule.dx]
        )
    for name, prefix, wanted in (("Sz", "zz_raw_d", "zeta"), ("Sx", "xx_raw_d", "chi")):
        if wanted not in keys:
            continue
        for d in schedule.shifts:
            vals = []
            for dx in schedule.dx:
                if dx in dxs:
                    i, j = correlator_sites(L, dx)
                    vals.append(
                        raw_correlator(state, name, i + d, j + d) if j + d < L else math.nan
                    )
                else:
                    vals.append(math.nan)
            out[f"{prefix}{d}"] = np.array(vals)

    if "entropy" in keys:
        out["entropy"] = entropy_profile(state) if L > 1 else np.zeros(0)
    if any(k in keys for k in CURRENT_KEYS):
        sets = [currents(state, H, b) for b in range(L - 1)]
        for key in CURRENT_KEYS:
            if key in keys:
                attr = key[len("current_"):]
                out[key] = np.array([_nan(getattr(c, attr)) for c in sets])
    if "energy" in keys:
        out["energy"] = np.array([energy(state, H)])
    if "norm" in keys:
        out["norm"] = np.array([state.norm])
    return out


class TrajectoryRecord:
    """
    Time series of observables with run metadata.

    ``samples[k]`` maps observable keys to arrays measured at ``times[k]``;
    ``diagnostics[k]`` holds the step diagnostics accumulated up to that sample.
    """

    def __init__(
        self,
        L: int,
        schedule: ObserverSchedule,
        metadata: Optional[dict[str, Any]] = None,
    ) -> None:
        self.L = L
        self.schedule = schedule
        self.metadata: dict[str, Any] = dict(metadata or {})
        self.times: list[float] = []
        self.samples: list[dict[str, np.ndarray]] = []
        self.diagnostics: list[dict[str, Any]] = []
        self.complete = True
        self.error: Optional[dict[str, Any]] = None

    def __repr__(self) -> str:
        state = "complete" if self.complete else "incomplete"
        return f"TrajectoryRecord(L={self.L}, samples={len(self.times)}, {state})"

    @property
    def config_hash(self) -> str:
        return str(self.metadata.get("config_hash", ""))

    def append(
        self,
        time: float,
        sample: dict[str, np.ndarray],
        diagnostics: Optional[dict[str, Any]] = None,
    ) -> None:
        if self.times and not time > self.times[-1]:
            raise ParameterError(
                f"Sample times must increase strictly; got {time} after {self.times[-1]}."
            )
        self.times.append(float(time))
        self.samples.append(sample)
        self.diagnostics.append(dict(diagnostics or {}))

    def time_index(self, time: float, tol: float = 1e-9) -> int:
        for k, t in enumerate(self.times):
            if abs(t - time) <= tol * max(1.0, abs(time)):
                return k
        raise OperatorLookupError(f"Time {time} was not sampled in this trajectory.")

    def at(self, time: float, key: str) -> np.ndarray:
        """
        Observable ``key`` at a sampled ``time``.
        """
        sample = self.samples[self.time_index(time)]
        if key not in sample:
            raise InsufficientDataError(f"Observable `{key}` was not recorded.")
        return sample[key]

    def series(self, key: str, index: int = 0) -> np.ndarray:
        """
        Time series of one element of an observable.
        """
        idx = list(self.schedule.index_of(key, self.L))
        if index not in idx:
            raise ShapeError(f"Index {index} is not recorded for `{key}`.")
        pos = idx.index(index)
        out = []
        for sample in self.samples:
            if key not in sample:
                raise InsufficientDataError(f"Observable `{key}` was not recorded.")
            out.append(sample[key][pos])
        return np.array(out)

    def keys(self) -> list[str]:
        return list(self.samples[0]) if self.samples else []

    def to_frame(self) -> pd.DataFrame:
        """
        Long table with columns ``config_hash, time, key, index, value``.
        """
        rows: list[tuple[str, float, str, int, float]] = []
        h = self.config_hash
        for t, sample in zip(self.times, self.samples):
            for key in sorted(sample):
                idx = self.schedule.index_of(key, self.L)
                for i, v in zip(idx, np.asarray(sample[key], dtype=float)):
                    rows.append((h, t, key, int(i), float(v)))
        return pd.DataFrame(rows, columns=["config_hash", "time", "key", "index", "value"])

    def to_dict(self) -> dict[str, Any]:
        return {
            "L": self.L,
            "schedule": {
                "stride": self.schedule.stride,
                "keys": list(self.schedule.keys),
                "dx": list(self.schedule.dx),
                "shifts": list(self.schedule.shifts),
            },
            "metadata": self.metadata,
            "times": self.times,
            "samples": [
                {k: [_json_float(x) for x in np.asarray(v, float)] for k, v in s.items()}
                for s in self.samples
            ],
            "diagnostics": self.diagnostics,
            "complete": self.complete,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrajectoryRecord:
        sched = data["schedule"]
        rec = cls(
            int(data["L"]),
            ObserverSchedule(
                stride=sched["stride"],
                keys=tuple(sched["keys"]),
                dx=tuple(sched["dx"]),
                shifts=tuple(sched["shifts"]),
            ),
            data.get("metadata"),
        )
        for t, s, d in zip(data["times"], data["samples"], data["diagnostics"]):
            sample = {
                k: np.array([math.nan if x is None else x for x in v], dtype=float)
                for k, v in s.items()
            }
            rec.times.append(float(t))
            rec.samples.append(sample)
            rec.diagnostics.append(d)
        rec.complete = bool(data.get("complete", True))
        rec.error = data.get("error")
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> TrajectoryRecord:
        return cls.from_dict(json.loads(text))


def _json_float(x: float) -> Optional[float]:
    return None if math.isnan(x) else float(x)


def keys_for(basis_kind: BasisKind, keys: Iterable[str]) -> tuple[str, ...]:
    """
    Drop keys that are undefined on a basis (densities on spin-1/2 chains).
    """
    if basis_kind is BasisKind.SPIN_HALF:
        return tuple(k for k in keys if k != "density")
    return tuple(keys)
