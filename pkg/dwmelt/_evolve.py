from __future__ import annotations

import functools
import logging
import math
import os
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from packaging.version import InvalidVersion, Version

from ._errors import AccuracyError, CheckpointError, DwmeltError, ParameterError
from ._models import BasisKind, HamiltonianRep, SiteBasis, SymmetrySector
from ._observables import ObserverSchedule, TrajectoryRecord, measure
from ._sectors import DenseState
from ._tensornet import (
    MPO,
    CompressionReport,
    MPSState,
    add,
    apply_mpo,
    canonicalize,
    compress,
    norm,
    overlap,
    sandwich,
)
from ._util import atomic_write
from ._versions import versions

__all__ = (
    "KrylovConfig",
    "GroundStateConfig",
    "StepDiagnostics",
    "Checkpoint",
    "krylov_step_dense",
    "krylov_step_mps",
    "evolve_trajectory",
    "save_checkpoint",
    "load_checkpoint",
)

logger = logging.getLogger(__name__)

# Krylov recursion stops once the next vector is this small.
_BREAKDOWN = 1e-14
# Overlap-matrix eigenvalues below this fraction of the largest are dropped.
_GRAM_CUTOFF = 1e-12


@dataclass(frozen=True)
class KrylovConfig:
    """
    Controls of a Krylov time step.

    Parameters
    ----------
    dt
        Time step.
    epsilon
        Per-step bound on ``r**2 = |U psi - psi'|**2 / |U psi + psi'|**2``.
    max_krylov
        Largest Krylov dimension before the step is declared uncertifiable.
    per_vector_budget
        Compression weight budget for every Krylov vector (MPS path); defaults to
        ``epsilon / 100``.
    final_budget
        Compression budget of the evolved state (MPS path); defaults to
        ``epsilon / 10``.
    safety
        Factor applied to the Krylov tail estimate.
    oracle_r2
        Target of the dense path, which does not truncate and is held to round-off
        independently of ``epsilon``.
    """

    dt: float = 0.1
    epsilon: float = 1e-6
    max_krylov: int = 25
    per_vector_budget: Optional[float] = None
    final_budget: Optional[float] = None
    safety: float = 10.0
    oracle_r2: float = 1e-24

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ParameterError("`dt` must be positive.")
        if not 0 < self.epsilon < 1:
            raise ParameterError("`epsilon` must lie in (0, 1).")
        if self.max_krylov < 2:
            raise ParameterError("`max_krylov` must be at least 2.")
        for name in ("per_vector_budget", "final_budget"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ParameterError(f"`{name}` must be positive.")
        if not self.safety >= 1:
            raise ParameterError("`safety` must be at least 1.")
        if not self.oracle_r2 > 0:
            raise ParameterError("`oracle_r2` must be positive.")

    @classmethod
    def for_model(cls, model: str, t: float = 1.0, **kwargs: Any) -> KrylovConfig:
        """
        Default step for a model family: ``0.1/t`` for spin and t-J chains, ``0.01/t``
        for Bose-Hubbard chains.
        """
        dt = (0.01 if model.startswith("bh") else 0.1) / t
        return cls(**{"dt": dt, **kwargs})

    @property
    def vector_budget(self) -> float:
        return self.per_vector_budget or self.epsilon / 100

    @property
    def result_budget(self) -> float:
        return self.final_budget or self.epsilon / 10


@dataclass(frozen=True)
class GroundStateConfig:
    """
    Controls of the variational ground-state sweeps.
    """

    max_sweeps: int = 20
    energy_tol: float = 1e-10
    weight_budget: float = 1e-12
    max_bond: Optional[int] = None

    def __post_init__(self) -> None:
        if self.max_sweeps < 2:
            raise ParameterError("`max_sweeps` must be at least 2.")
        if not self.energy_tol > 0 or not self.weight_budget > 0:
            raise ParameterError("`energy_tol` and `weight_budget` must be positive.")
        if self.max_bond is not None and self.max_bond < 1:
            raise ParameterError("`max_bond` must be at least 1.")


@dataclass(frozen=True)
class StepDiagnostics:
    krylov_dim: int
    r2: float
    discarded_weight: float = 0.0
    max_bond: int = 0


State = Union[DenseState, MPSState]
Operator = Union[HamiltonianRep, sp.spmatrix, np.ndarray]


@functools.lru_cache(maxsize=8)
def sector_operator(H: HamiltonianRep, sector: SymmetrySector) -> sp.csr_matrix:
    """
    Cached sector matrix of a Hamiltonian.
    """
    return H.sector_matrix(sector)


def _tridiagonal_expm_column(
    alphas: list[float], betas: list[float], dt: float
) -> np.ndarray:
    # First column of exp(-i dt T) for the Lanczos tridiagonal T.
    if len(alphas) == 1:
        return np.array([np.exp(-1j * dt * alphas[0])])
    w, U = scipy.linalg.eigh_tridiagonal(np.array(alphas), np.array(betas))
    return U @ (np.exp(-1j * dt * w) * U[0, :])


def _lanczos_step(
    matvec: Callable[[np.ndarray], np.ndarray],
    psi: np.ndarray,
    dt: float,
    max_krylov: int,
    target_r2: float,
    safety: float,
) -> tuple[np.ndarray, StepDiagnostics]:
    n0 = np.linalg.norm(psi)
    V = [psi / n0]
    alphas: list[float] = []
    betas: list[float] = []
    r2 = math.inf
    for k in range(max_krylov):
        w = matvec(V[k])
        alphas.append(float(np.vdot(V[k], w).real))
        # Full reorthogonalization, applied twice.
        Vm = np.array(V)
        for _ in range(2):
            w = w - Vm.T @ (Vm.conj() @ w)
        beta = float(np.linalg.norm(w))
        c = _tridiagonal_expm_column(alphas, betas, dt)
        r2 = (safety * beta * abs(c[-1])) ** 2 / 4
        if beta < _BREAKDOWN or r2 < target_r2:
            out = np.array(V).T @ c
            out = out / np.linalg.norm(out)
            return out * n0, StepDiagnostics(krylov_dim=k + 1, r2=r2)
        betas.append(beta)
        V.append(w / beta)
    raise AccuracyError(
        f"Krylov step not certified within {max_krylov} vectors (r2 estimate {r2:.3g}).",
        residual=r2,
    )


def _dense_step(
    state: DenseState, H: Operator, config: KrylovConfig
) -> tuple[DenseState, StepDiagnostics]:
    M = sector_operator(H, state.sector) if isinstance(H, HamiltonianRep) else H
    if M.shape[0] != state.amplitudes.shape[0]:
        raise ParameterError("The Hamiltonian does not act on the state's sector.")
    out, diag = _lanczos_step(
        lambda v: M @ v,
        state.amplitudes,
        config.dt,
        config.max_krylov,
        config.oracle_r2,
        config.safety,
    )
    return state.with_amplitudes(out), diag


def krylov_step_dense(state: DenseState, H: Operator, config: KrylovConfig) -> DenseState:
    """
    One step ``exp(-i H dt) |psi>`` on a dense sector state.

    The Lanczos basis grows until the tail estimate of the step error meets
    ``config.oracle_r2``; the result is renormalized.

    Parameters
    ----------
    state
        The state to evolve.
    H
        A :class:`HamiltonianRep` or a sector matrix acting on ``state.amplitudes``.
    config
        Step controls.

    Raises
    ------
    AccuracyError
        If ``config.max_krylov`` vectors do not meet the target.
    """
    return _dense_step(state, H, config)[0]


def _canonical_basis(S: np.ndarray) -> np.ndarray:
    s, U = np.linalg.eigh(0.5 * (S + S.conj().T))
    keep = s > _GRAM_CUTOFF * s.max()
    return U[:, keep] / np.sqrt(s[keep])


def krylov_step_mps(
    state: MPSState, H_mpo: Union[MPO, HamiltonianRep], config: KrylovConfig
) -> tuple[MPSState, CompressionReport, StepDiagnostics]:
    """
    One certified Krylov step on an MPS.

    Every Krylov vector is its own compressed MPS. The subspace exponential is taken
    in the (numerically) orthonormalized span, and the step is accepted once

    ``err = safety * beta * |a_last| + sum_k |a_k| sqrt(2 delta_k) + sqrt(2 delta_final)``

    satisfies ``err**2 / 4 < epsilon``, where ``beta`` is the norm of the next
    Krylov direction, ``a`` the coefficients of the result, ``delta_k`` the weight
    discarded from vector ``k`` and ``delta_final`` that of the result.

    Returns
    -------
    :
        The evolved state (carrying the input norm), the compression report of the final
        compression, and step diagnostics.

    Raises
    ------
    AccuracyError
        If the certificate fails with ``config.max_krylov`` vectors.
    """
    mpo = H_mpo.mpo if isinstance(H_mpo, HamiltonianRep) else H_mpo
    eps = config.epsilon
    psi = canonicalize(state, 0)
    n0 = norm(psi)
    vecs = [psi.scaled(1.0 / n0)]
    deltas = [0.0]
    m_max = config.max_krylov
    S = np.zeros((m_max, m_max), dtype=complex)
    Hs = np.zeros((m_max, m_max), dtype=complex)
    S[0, 0] = 1.0
    Hs[0, 0] = sandwich(vecs[0], mpo, vecs[0])
    a_prior = math.sqrt(2 * config.result_budget)
    err = math.inf

    while True:
        m = len(vecs)
        w = apply_mpo(mpo, vecs[-1])
        coefs = [overlap(v, w) for v in vecs]
        w = add([w, *vecs], [1.0, *(-c for c in coefs)])
        w, rep = compress(w, config.vector_budget, normalize=False)
        beta = norm(w)

        X = _canonical_basis(S[:m, :m])
        Ht = X.conj().T @ Hs[:m, :m] @ X
        e, Z = np.linalg.eigh(0.5 * (Ht + Ht.conj().T))
        y0 = X.conj().T @ S[:m, 0]
        a = X @ (Z @ (np.exp(-1j * config.dt * e) * (Z.conj().T @ y0)))
        tail = config.safety * beta * abs(a[-1])
        trunc = float(np.sum(np.abs(a) * np.sqrt(2 * np.array(deltas))))
        err = tail + trunc + a_prior
        done = beta < _BREAKDOWN or err**2 / 4 < eps
        logger.debug(
            "krylov m=%d beta=%.3g tail=%.3g trunc=%.3g r2<=%.3g", m, beta, tail, trunc, err**2 / 4
        )
        if done:
            break
        if m == m_max:
            raise AccuracyError(
                f"Krylov step not certified within {m_max} vectors "
                f"(r2 bound {err**2 / 4:.3g} >= epsilon {eps:.3g}).",
                residual=err**2 / 4,
            )
        v_new = w.scaled(1.0 / beta)
        vecs.append(v_new)
        deltas.append(rep.total_discarded)
        for i, v in enumerate(vecs):
            S[i, m] = overlap(v, v_new)
            S[m, i] = np.conj(S[i, m])
            Hs[i, m] = sandwich(v, mpo, v_new)
            Hs[m, i] = np.conj(Hs[i, m])

    if len(vecs) == 1:
        result = vecs[0].scaled(a[0])
    else:
        result = add(vecs, list(a))
    out, report = compress(result, config.result_budget, normalize=True)
    err = err - a_prior + math.sqrt(2 * report.total_discarded)
    diag = StepDiagnostics(
        krylov_dim=len(vecs),
        r2=err**2 / 4,
        discarded_weight=float(sum(deltas)) + report.total_discarded,
        max_bond=out.max_bond,
    )
    return out.scaled(n0), report, diag


def _step(
    state: State, H: HamiltonianRep, config: KrylovConfig
) -> tuple[State, StepDiagnostics]:
    if isinstance(state, DenseState):
        return _dense_step(state, H, config)
    out, _, diag = krylov_step_mps(state, H, config)
    return out, diag


def evolve_trajectory(
    state: State,
    H: HamiltonianRep,
    config: KrylovConfig,
    horizon: float,
    schedule: Optional[ObserverSchedule] = None,
    *,
    metadata: Optional[dict[str, Any]] = None,
    checkpoint_path: Optional[Union[str, os.PathLike[str]]] = None,
    checkpoint_every: int = 0,
    resume: Optional[Checkpoint] = None,
) -> TrajectoryRecord:
    """
    Evolve a state to ``horizon`` in steps of ``config.dt``, sampling observables.

    Samples are taken at step 0, every ``schedule.stride`` steps and at the last
    step. Each sample carries the step diagnostics accumulated since the previous
    one.

    Parameters
    ----------
    state
        Initial state (dense or MPS).
    H
        The Hamiltonian.
    config
        Step controls.
    horizon
        Final time; must be a multiple of ``config.dt``.
    schedule
        Observables to record.
    metadata
        Stored on the record; ``config_hash`` is used in checkpoints.
    checkpoint_path
        Where to write checkpoints.
    checkpoint_every
        Write a checkpoint every this many steps (0 disables periodic checkpoints;
        a final one is still written when a path is given).
    resume
        Continue from a loaded checkpoint instead of ``state``.

    Returns
    -------
    :
        The trajectory. If a step cannot be certified, the record holds the samples
        so far, ``complete`` is ``False`` and ``error`` describes the failure.
    """
    schedule = schedule or ObserverSchedule()
    n_steps = int(round(horizon / config.dt))
    if horizon < 0 or abs(n_steps * config.dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ParameterError(
            f"`horizon` must be a non-negative multiple of dt={config.dt}, got {horizon}."
        )

    if resume is not None:
        record = TrajectoryRecord.from_json(resume.record_json)
        state, step = resume.state, resume.step
        if record.complete and step >= n_steps:
            return record
        record.complete = True
        record.error = None
    else:
        record = TrajectoryRecord(state.L, schedule, metadata)
        record.append(0.0, measure(state, H, schedule), {"krylov_dim": 0, "r2": 0.0})
        step = 0
    meta_hash = str(record.metadata.get("config_hash", ""))

    pending: list[StepDiagnostics] = []
    while step < n_steps:
        try:
            state, diag = _step(state, H, config)
        except AccuracyError as e:
            record.complete = False
            record.error = e.to_record()
            record.error["time"] = step * config.dt
            logger.error("step %d failed: %s", step + 1, e.message)
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, state, step, config.dt, meta_hash, record)
            return record
        step += 1
        pending.append(diag)
        logger.debug(
            "step %d: krylov_dim=%d r2=%.3g max_bond=%d",
            step,
            diag.krylov_dim,
            diag.r2,
            diag.max_bond,
        )
        if step % schedule.stride == 0 or step == n_steps:
            record.append(step * config.dt, measure(state, H, schedule), _summarize(pending))
            pending = []
        if checkpoint_path is not None and (
            step == n_steps or (checkpoint_every and step % checkpoint_every == 0)
        ):
            save_checkpoint(checkpoint_path, state, step, config.dt, meta_hash, record)
    logger.info("trajectory finished: %d steps, %d samples", n_steps, len(record.times))
    return record


def _summarize(diags: list[StepDiagnostics]) -> dict[str, Any]:
    return {
        "steps": len(diags),
        "krylov_dim": max(d.krylov_dim for d in diags),
        "r2": max(d.r2 for d in diags),
        "discarded_weight": float(sum(d.discarded_weight for d in diags)),
        "max_bond": max(d.max_bond for d in diags),
    }


@dataclass
class Checkpoint:
    """
    A saved evolution state: the quantum state, step count, and the record so far.
    """

    state: State
    step: int
    dt: float
    config_hash: str
    record_json: str
    format_version: str

    @property
    def time(self) -> float:
        return self.step * self.dt


def save_checkpoint(
    path: Union[str, os.PathLike[str]],
    state: State,
    step: int,
    dt: float,
    config_hash: str,
    record: TrajectoryRecord,
) -> Path:
    """
    Write a checkpoint atomically as a compressed ``.npz`` container.

    Layout: ``format_version``, ``representation``, ``basis_kind``, ``n_max``, ``L``,
    ``sector``, ``step``, ``dt``, ``config_hash``, ``record`` (JSON), then
    ``amplitudes`` (dense) or ``center`` plus ``tensor_{j}`` and ``charges_{b}``
    (MPS).
    """
    arrays: dict[str, Any] = {
        "format_version": np.array(versions["checkpoint"]),
        "basis_kind": np.array(state.basis.kind.value),
        "n_max": np.array(state.basis.n_max),
        "L": np.array(state.L),
        "sector": np.array([state.sector.n_up, state.sector.n_down]),
        "step": np.array(step),
        "dt": np.array(dt),
        "config_hash": np.array(config_hash),
        "record": np.array(record.to_json()),
    }
    if isinstance(state, DenseState):
        arrays["representation"] = np.array("dense")
        arrays["amplitudes"] = state.amplitudes
    else:
        arrays["representation"] = np.array("mps")
        arrays["center"] = np.array(-1 if state.center is None else state.center)
        for j, A in enumerate(state.tensors):
            arrays[f"tensor_{j}"] = A
        for b, q in enumerate(state.charges):
            arrays[f"charges_{b}"] = q

    def write(tmp: Path) -> None:
        with open(tmp, "wb") as f:
            np.savez_compressed(f, **arrays)

    try:
        return atomic_write(path, write)
    except OSError as e:
        raise CheckpointError(f"Could not write checkpoint `{path}`: {e}") from e


def load_checkpoint(path: Union[str, os.PathLike[str]]) -> Checkpoint:
    """
    Read a checkpoint written by :func:`save_checkpoint`.

    Raises
    ------
    CheckpointError
        If the file is missing, unreadable, or of an incompatible major version.
    """
    try:
        with np.load(path, allow_pickle=False) as data:
            fields = {k: data[k] for k in data.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"Could not read checkpoint `{path}`: {e}") from e

    try:
        stored = Version(str(fields["format_version"]))
        current = Version(versions["checkpoint"])
    except (KeyError, InvalidVersion) as e:
        raise CheckpointError(f"Checkpoint `{path}` has no valid format version.") from e
    if stored.major != current.major or stored > current:
        raise CheckpointError(
            f"Checkpoint `{path}` has format {stored}; this version reads {current.major}.x "
            f"up to {current}."
        )

    try:
        kind = BasisKind(str(fields["basis_kind"]))
        basis = SiteBasis(kind, int(fields["n_max"]))
        L = int(fields["L"])
        sector = SymmetrySector(*(int(x) for x in fields["sector"]))
        if str(fields["representation"]) == "dense":
            state: State = DenseState(basis, L, sector, fields["amplitudes"])
        else:
            center = int(fields["center"])
            state = MPSState(
                basis,
                [fields[f"tensor_{j}"] for j in range(L)],
                [fields[f"charges_{b}"] for b in range(L + 1)],
                center=None if center < 0 else center,
            )
        return Checkpoint(
            state=state,
            step=int(fields["step"]),
            dt=float(fields["dt"]),
            config_hash=str(fields["config_hash"]),
            record_json=str(fields["record"]),
            format_version=str(stored),
        )
    except (KeyError, DwmeltError) as e:
        raise CheckpointError(f"Checkpoint `{path}` is corrupt: {e}") from e
