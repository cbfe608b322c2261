from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Literal, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ._analysis import (
    beating_amplitude,
    comparison_table,
    deviation,
    front_velocity,
    shift_average,
    superposed_profile,
    transit_time,
    two_hole_profile,
)
from ._errors import (
    AccuracyError,
    CheckpointError,
    DwmeltError,
    InsufficientDataError,
    OperatorLookupError,
    ParameterError,
    ShapeError,
)
from ._evolve import GroundStateConfig, KrylovConfig, evolve_trajectory, load_checkpoint
from ._models import (
    CouplingSet,
    HamiltonianRep,
    Preparation,
    SiteBasis,
    build_bh,
    build_tj,
    build_xxz,
)
from ._observables import ObserverSchedule, TrajectoryRecord, keys_for
from ._states import (
    QuantumState,
    apply_defects,
    domain_wall,
    prepare_bh_ground,
    product_state,
    to_dense,
    to_mps,
)
from ._util import atomic_write, canonical_json, hash_deterministic, output_root, unique
from ._versions import versions

__all__ = (
    "Defect",
    "PrepConfig",
    "OutputConfig",
    "ExperimentConfig",
    "RunResult",
    "ConvergenceReport",
    "Preset",
    "PresetResult",
    "PRESETS",
    "parse_value",
    "apply_overrides",
    "build_hamiltonian",
    "build_initial_state",
    "run_directory",
    "run_experiment",
    "run_many",
    "load_run",
    "resume",
    "compare_records",
    "convergence_table",
    "superposition_tables",
    "run_convergence_suite",
    "model_comparison_table",
    "run_model_comparison",
    "run_preset",
    "describe_presets",
)

logger = logging.getLogger(__name__)

ModelName = Literal["xxz", "bh", "tj"]
MODELS = ("xxz", "bh", "tj")

# Sections left out of the config hash: they change where results go, not what
# they are.
_UNHASHED = ("output", "reference")


@dataclass(frozen=True)
class Defect:
    """
    A hole or spin flip applied to the initial state.

    ``site`` uses the lattice numbering ``1..L``.
    """

    kind: Literal["hole", "flip"]
    site: int

    def __post_init__(self) -> None:
        if self.kind not in ("hole", "flip"):
            raise ParameterError(f"Unknown defect type `{self.kind}`; use 'hole' or 'flip'.")
        if not isinstance(self.site, int) or self.site < 1:  # pyright: ignore[reportUnnecessaryIsInstance]
            raise ParameterError(f"Defect sites are numbered from 1, got {self.site!r}.")

    @classmethod
    def from_value(cls, value: Any) -> Defect:
        if isinstance(value, Defect):
            return value
        if isinstance(value, Mapping):
            _check_keys(cls, value, "defects")  # pyright: ignore[reportUnknownArgumentType]
            return cls(**value)  # pyright: ignore[reportUnknownArgumentType]
        if isinstance(value, (list, tuple)) and len(value) == 2:  # pyright: ignore[reportUnknownArgumentType]
            kind, site = value  # pyright: ignore[reportUnknownVariableType]
            return cls(kind, site)  # pyright: ignore[reportUnknownArgumentType]
        raise ParameterError(f"Cannot read a defect from {value!r}.")

    @property
    def d(self) -> int:
        """
        Shift of the wall caused by this defect: 1 for a hole, 2 for a flip.
        """
        return 1 if self.kind == "hole" else 2


@dataclass(frozen=True)
class PrepConfig:
    """
    How the initial state is prepared.

    ``kind="product"`` starts from the product wall (or polarized chain);
    ``kind="ground"`` takes the ground state of the Bose-Hubbard chain with the
    preparation potential ``mu``.
    """

    kind: Literal["product", "ground"] = "product"
    mu: float = 10.0
    method: Literal["dense", "variational"] = "dense"
    ground: GroundStateConfig = field(default_factory=GroundStateConfig)

    def __post_init__(self) -> None:
        if self.kind not in ("product", "ground"):
            raise ParameterError(f"Unknown preparation `{self.kind}`; use 'product' or 'ground'.")
        if self.method not in ("dense", "variational"):
            raise ParameterError(
                f"Unknown preparation method `{self.method}`; use 'dense' or 'variational'."
            )


@dataclass(frozen=True)
class OutputConfig:
    """
    Where and how results are written.

    Parameters
    ----------
    root
        Output root; defaults to ``$DWMELT_OUTPUT_ROOT`` or ``./runs``.
    checkpoint
        Write ``checkpoint.npz`` into the run directory.
    checkpoint_every
        Steps between periodic checkpoints (0 writes only the final one).
    reuse
        Return the stored result when a complete run with the same hash exists.
    """

    root: Optional[str] = None
    checkpoint: bool = True
    checkpoint_every: int = 50
    reuse: bool = False

    def __post_init__(self) -> None:
        if self.checkpoint_every < 0:
            raise ParameterError("`checkpoint_every` must be non-negative.")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Complete description of one trajectory.

    Parameters
    ----------
    model
        ``"xxz"``, ``"bh"`` or ``"tj"``.
    L
        Number of sites.
    couplings
        Raw Bose-Hubbard parameters. The t-J and XXZ chains use the effective
        couplings they imply.
    n_max
        Boson cutoff per species (Bose-Hubbard only).
    J_perp, J_z
        Override the effective XXZ couplings (XXZ only).
    defects
        Holes and spin flips, at lattice sites ``1..L``. On the domain wall they must
        sit in ``[2, L/2 - 1]``.
    background
        ``"wall"`` (domain wall) or ``"polarized"`` (all up).
    prep
        Initial-state preparation.
    representation
        ``"dense"`` (exact, small chains) or ``"mps"``.
    evolution
        Krylov step controls; defaults to :meth:`KrylovConfig.for_model`.
    horizon
        Final time.
    observables
        What to record and how often.
    include_three_site, include_exchange
        Term families of the t-J chain.
    label
        Human-readable prefix of the run directory.
    reference
        Directory of a clean run; when set, superposition tables against it are
        written next to the trajectory.
    output
        Output location and checkpoint policy.

    Example
    -------
    >>> cfg = ExperimentConfig.from_dict({"model": "tj", "L": 12, "horizon": 1.0})
    >>> cfg.krylov.dt
    0.1
    """

    model: ModelName = "tj"
    L: int = 40
    couplings: CouplingSet = field(default_factory=CouplingSet)
    n_max: int = 2
    J_perp: Optional[float] = None
    J_z: Optional[float] = None
    defects: tuple[Defect, ...] = ()
    background: Literal["wall", "polarized"] = "wall"
    prep: PrepConfig = field(default_factory=PrepConfig)
    representation: Literal["dense", "mps"] = "mps"
    evolution: Optional[KrylovConfig] = None
    horizon: float = 10.0
    observables: ObserverSchedule = field(default_factory=ObserverSchedule)
    include_three_site: bool = True
    include_exchange: bool = True
    label: str = ""
    reference: Optional[str] = None
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self) -> None:
        if self.model not in MODELS:
            raise ParameterError(f"Unknown model `{self.model}`; use one of {', '.join(MODELS)}.")
        if not isinstance(self.L, int) or self.L < 2:  # pyright: ignore[reportUnnecessaryIsInstance]
            raise ParameterError(f"`L` must be an integer of at least 2, got {self.L!r}.")
        if self.background not in ("wall", "polarized"):
            raise ParameterError(
                f"Unknown background `{self.background}`; use 'wall' or 'polarized'."
            )
        if self.background == "wall" and self.L % 2:
            raise ParameterError(f"`L` must be even for a domain wall, got {self.L}.")
        if self.representation not in ("dense", "mps"):
            raise ParameterError(
                f"Unknown representation `{self.representation}`; use 'dense' or 'mps'."
            )
        if self.n_max < 1:
            raise ParameterError("`n_max` must be at least 1.")
        if self.model != "xxz" and (self.J_perp is not None or self.J_z is not None):
            raise ParameterError("`J_perp` and `J_z` can only be set for the XXZ model.")
        if self.prep.kind == "ground" and (self.model != "bh" or self.background != "wall"):
            raise ParameterError(
                "Ground-state preparation needs `model='bh'` and the domain-wall background."
            )
        self._normalize_numbers()
        object.__setattr__(self, "defects", tuple(Defect.from_value(d) for d in self.defects))
        self._check_defects()

        if self.evolution is None:
            object.__setattr__(
                self, "evolution", KrylovConfig.for_model(self.model, self.couplings.t_up)
            )
        dt = self.krylov.dt
        if self.horizon < 0 or abs(round(self.horizon / dt) * dt - self.horizon) > 1e-9 * max(
            1.0, self.horizon
        ):
            raise ParameterError(
                f"`horizon` must be a non-negative multiple of dt={dt}, got {self.horizon}."
            )
        keys = keys_for(self.basis.kind, self.observables.keys)
        if keys != self.observables.keys:
            object.__setattr__(self, "observables", dataclasses.replace(self.observables, keys=keys))

    def _normalize_numbers(self) -> None:
        # 15 and 15.0 must hash alike.
        c = self.couplings
        floats = {f: float(getattr(c, f)) for f in _HOPPING}
        if c.mu is not None:
            floats["mu"] = float(c.mu)
        object.__setattr__(self, "couplings", dataclasses.replace(c, **floats))
        object.__setattr__(self, "prep", dataclasses.replace(self.prep, mu=float(self.prep.mu)))
        object.__setattr__(self, "horizon", float(self.horizon))
        for name in ("J_perp", "J_z"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, float(value))

    def _check_defects(self) -> None:
        sites = [d.site for d in self.defects]
        if len(set(sites)) != len(sites):
            raise ParameterError("Two defects share a site.")
        lo, hi = (2, self.L // 2 - 1) if self.background == "wall" else (1, self.L)
        for d in self.defects:
            if not lo <= d.site <= hi:
                raise ParameterError(
                    f"Defect site {d.site} is outside [{lo}, {hi}] for L={self.L} "
                    f"on the {self.background} background."
                )
            if d.kind == "hole" and self.model == "xxz":
                raise ParameterError("Holes need the t-J or Bose-Hubbard model.")

    @property
    def krylov(self) -> KrylovConfig:
        assert self.evolution is not None
        return self.evolution

    @property
    def basis(self) -> SiteBasis:
        if self.model == "xxz":
            return SiteBasis.spin_half()
        if self.model == "tj":
            return SiteBasis.tj()
        return SiteBasis.boson2(self.n_max)

    @property
    def config_hash(self) -> str:
        data = self.to_dict()
        for key in _UNHASHED:
            data.pop(key, None)
        return hash_deterministic(canonical_json(data))

    @property
    def short_hash(self) -> str:
        return self.config_hash[:12]

    def to_dict(self) -> dict[str, Any]:
        # Tuples become lists so the dict compares equal to its JSON round trip.
        return json.loads(canonical_json(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExperimentConfig:
        """
        Build a config from nested key/value data. Missing keys take their
        defaults; unknown keys raise :class:`ParameterError`.
        """
        _check_keys(cls, data, "config")
        kwargs: dict[str, Any] = {}
        for name, value in data.items():
            if name == "evolution":
                continue
            if name in _SECTIONS and value is not None:
                value = _section(_SECTIONS[name], value, name)
            elif name == "defects":
                value = tuple(Defect.from_value(v) for v in value or ())
            kwargs[name] = value
        evolution = data.get("evolution")
        if evolution is not None and not isinstance(evolution, KrylovConfig):
            if not isinstance(evolution, Mapping):
                raise ParameterError("`evolution` must be a mapping.")
            _check_keys(KrylovConfig, evolution, "evolution")  # pyright: ignore[reportUnknownArgumentType]
            couplings = kwargs.get("couplings", CouplingSet())
            evolution = KrylovConfig.for_model(
                str(kwargs.get("model", "tj")), couplings.t_up, **evolution  # pyright: ignore[reportUnknownArgumentType]
            )
        kwargs["evolution"] = evolution
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParameterError(f"Config is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ParameterError("A config must be a JSON object.")
        return cls.from_dict(data)  # pyright: ignore[reportUnknownArgumentType]


def _check_keys(cls: type, data: Mapping[str, Any], where: str) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ParameterError(
            f"Unknown key(s) in `{where}`: {', '.join(unknown)}. "
            f"Known keys: {', '.join(sorted(known))}."
        )


def _section(cls: type, value: Any, where: str) -> Any:
    if isinstance(value, cls):
        return value
    if not isinstance(value, Mapping):
        raise ParameterError(f"`{where}` must be a mapping, got {value!r}.")
    _check_keys(cls, value, where)  # pyright: ignore[reportUnknownArgumentType]
    kwargs = dict(value)  # pyright: ignore[reportUnknownArgumentType]
    if cls is PrepConfig and "ground" in kwargs:
        kwargs["ground"] = _section(GroundStateConfig, kwargs["ground"], f"{where}.ground")
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ParameterError(f"Invalid `{where}`: {e}") from e


_SECTIONS: dict[str, type] = {
    "couplings": CouplingSet,
    "prep": PrepConfig,
    "observables": ObserverSchedule,
    "output": OutputConfig,
}


def parse_value(text: str) -> Any:
    """
    Read an override value as a JSON literal, falling back to the raw string.

    Example
    -------
    >>> parse_value("40"), parse_value("1e-5"), parse_value("mps")
    (40, 1e-05, 'mps')
    """
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(
    data: Mapping[str, Any], overrides: Iterable[tuple[str, Any]]
) -> dict[str, Any]:
    """
    Set dotted ``section.field`` paths in nested config data, in order, so the last
    override of a path wins. The input is not modified.
    """
    out = copy.deepcopy(dict(data))
    for path, value in overrides:
        keys = path.split(".")
        if not all(keys):
            raise ParameterError(f"Invalid override path `{path}`.")
        node = out
        for k in keys[:-1]:
            child = node.get(k)
            if child is None:
                child = node[k] = {}
            elif not isinstance(child, dict):
                raise ParameterError(f"`{path}` does not name a config section.")
            node = child  # pyright: ignore[reportUnknownVariableType]
        node[keys[-1]] = value
    return out


def build_hamiltonian(config: ExperimentConfig) -> HamiltonianRep:
    c = config.couplings
    if config.model == "xxz":
        J_perp = c.J_perp if config.J_perp is None else config.J_perp
        J_z = c.J_z if config.J_z is None else config.J_z
        return build_xxz(config.L, J_perp, J_z)
    if config.model == "tj":
        return build_tj(
            config.L,
            c,
            config.include_three_site,
            include_exchange=config.include_exchange,
        )
    return build_bh(config.L, c, n_max=config.n_max)


def build_initial_state(config: ExperimentConfig) -> QuantumState:
    """
    The initial state of a run: prepared wall or polarized chain, then defects.
    """
    basis = config.basis
    rep = config.representation
    state: QuantumState
    if config.prep.kind == "ground":
        H_prep = build_bh(config.L, config.couplings, config.n_max, Preparation(mu=config.prep.mu))
        state = prepare_bh_ground(H_prep, method=config.prep.method, config=config.prep.ground)
        state = to_mps(state) if rep == "mps" else to_dense(state)
    elif config.background == "wall":
        state = domain_wall(basis, config.L, rep)
    else:
        state = product_state(basis, ["up"] * config.L, rep)
    return apply_defects(state, [(d.kind, d.site - 1) for d in config.defects])


def run_directory(config: ExperimentConfig) -> Path:
    root = Path(config.output.root) if config.output.root else output_root()
    return root / f"{config.label or config.model}-{config.short_hash}"


@dataclass
class RunResult:
    """
    A finished (or failed) trajectory and where its files live.
    """

    config: ExperimentConfig
    record: TrajectoryRecord
    run_dir: Path

    @property
    def complete(self) -> bool:
        return self.record.complete

    @property
    def files(self) -> dict[str, Path]:
        names = ("trajectory.csv", "record.json", "metadata.json", "checkpoint.npz")
        names += ("error.json", "comparison.csv")
        return {n: self.run_dir / n for n in names if (self.run_dir / n).exists()}


RunFn = Callable[[ExperimentConfig], RunResult]


def _write_text(path: Path, text: str) -> None:
    atomic_write(path, lambda tmp: tmp.write_text(text, encoding="utf-8"))


def _write_csv(path: Path, frame: pd.DataFrame) -> None:
    atomic_write(path, lambda tmp: frame.to_csv(tmp, index=False, float_format="%.17g"))


def _metadata(
    config: ExperimentConfig, record: Optional[TrajectoryRecord], status: str
) -> dict[str, Any]:
    from . import __version__

    meta: dict[str, Any] = {
        "config": config.to_dict(),
        "config_hash": config.config_hash,
        "status": status,
        "versions": {
            "dwmelt": __version__,
            "numpy": np.__version__,
            "pandas": pd.__version__,
            **{f"{k}_format": v for k, v in versions.items()},
        },
    }
    if record is not None:
        diags = record.diagnostics
        meta.update(
            complete=record.complete,
            samples=len(record.times),
            final_time=record.times[-1] if record.times else None,
            max_krylov_dim=max((d.get("krylov_dim", 0) for d in diags), default=0),
            max_r2=max((d.get("r2", 0.0) for d in diags), default=0.0),
            discarded_weight=sum(d.get("discarded_weight", 0.0) for d in diags),
            max_bond=max((d.get("max_bond", 0) for d in diags), default=0),
        )
    return meta


def _write_error(run_dir: Path, error: dict[str, Any]) -> None:
    _write_text(run_dir / "error.json", json.dumps(error, indent=2, sort_keys=True))


def _finish(run_dir: Path, config: ExperimentConfig, record: TrajectoryRecord) -> RunResult:
    _write_csv(run_dir / "trajectory.csv", record.to_frame())
    _write_text(run_dir / "record.json", record.to_json())
    status = "complete" if record.complete else "failed"
    _write_text(
        run_dir / "metadata.json",
        json.dumps(_metadata(config, record, status), indent=2, sort_keys=True),
    )
    if record.error is not None:
        _write_error(run_dir, record.error)
    elif (run_dir / "error.json").exists():
        (run_dir / "error.json").unlink()
    result = RunResult(config, record, run_dir)
    if config.reference and config.defects:
        _write_reference_comparison(result)
    logger.info(
        "run %s %s: %d samples up to t=%g",
        run_dir.name,
        status,
        len(record.times),
        record.times[-1] if record.times else 0.0,
    )
    return result


def _write_reference_comparison(result: RunResult) -> None:
    assert result.config.reference is not None
    clean = load_run(result.config.reference).record
    if clean.L != result.record.L:
        raise ShapeError("The reference run has a different chain length.")
    shifts = [defect.d for defect in result.config.defects]
    tables = superposition_tables(result.record, clean, shifts)
    if not tables.empty:
        tables.insert(0, "clean_hash", clean.config_hash)
        tables.insert(0, "defect_hash", result.record.config_hash)
        _write_csv(result.run_dir / "comparison.csv", tables)


def run_experiment(config: ExperimentConfig) -> RunResult:
    """
    Prepare, evolve and measure one trajectory, and write its files.

    The run directory ``<root>/<label>-<hash>`` receives ``trajectory.csv`` (long
    format, one row per time, key and index, each carrying the config hash),
    ``record.json``, ``metadata.json``, ``checkpoint.npz`` and, on failure,
    ``error.json``. Identical configs produce byte-identical CSV files.

    Parameters
    ----------
    config
        The experiment.

    Returns
    -------
    :
        The record and run directory. If a step could not be certified the record is
        incomplete and ``record.error`` describes the failure.

    Raises
    ------
    DwmeltError
        Errors before or outside time stepping; ``error.json`` is written first.
    """
    run_dir = run_directory(config)
    if config.output.reuse:
        try:
            existing = load_run(run_dir)
        except CheckpointError:
            pass
        else:
            if existing.complete and existing.record.config_hash == config.config_hash:
                logger.info("reusing %s", run_dir)
                return existing
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_text(
        run_dir / "metadata.json",
        json.dumps(_metadata(config, None, "running"), indent=2, sort_keys=True),
    )
    logger.info(
        "run %s: model=%s L=%d representation=%s T=%g dt=%g epsilon=%g",
        run_dir.name,
        config.model,
        config.L,
        config.representation,
        config.horizon,
        config.krylov.dt,
        config.krylov.epsilon,
    )
    try:
        H = build_hamiltonian(config)
        state = build_initial_state(config)
        record = evolve_trajectory(
            state,
            H,
            config.krylov,
            config.horizon,
            config.observables,
            metadata={"config_hash": config.config_hash, "label": config.label},
            checkpoint_path=run_dir / "checkpoint.npz" if config.output.checkpoint else None,
            checkpoint_every=config.output.checkpoint_every,
        )
    except DwmeltError as e:
        logger.error("run %s aborted: %s", run_dir.name, e.message)
        _write_error(run_dir, e.to_record())
        raise
    return _finish(run_dir, config, record)


def run_many(
    configs: Mapping[str, ExperimentConfig], jobs: int = 1, run: RunFn = run_experiment
) -> dict[str, RunResult]:
    """
    Run independent trajectories, in a process pool when ``jobs > 1``.
    """
    if jobs < 1:
        raise ParameterError("`jobs` must be at least 1.")
    if jobs == 1 or len(configs) <= 1:
        return {name: run(cfg) for name, cfg in configs.items()}
    with ProcessPoolExecutor(max_workers=min(jobs, len(configs))) as pool:
        futures = {name: pool.submit(run, cfg) for name, cfg in configs.items()}
        return {name: f.result() for name, f in futures.items()}


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Could not read `{path}`: {e}") from e


def load_run(run_dir: Union[str, Path]) -> RunResult:
    """
    Load a run written by :func:`run_experiment`.

    Raises
    ------
    CheckpointError
        If the directory does not hold a readable run.
    """
    run_dir = Path(run_dir)
    meta = _read_json(run_dir / "metadata.json")
    record = TrajectoryRecord.from_dict(_read_json(run_dir / "record.json"))
    return RunResult(ExperimentConfig.from_dict(meta["config"]), record, run_dir)


def resume(run_dir: Union[str, Path]) -> RunResult:
    """
    Continue an interrupted run from its checkpoint.

    The resumed trajectory is identical to an uninterrupted one.

    Raises
    ------
    CheckpointError
        If the checkpoint is missing, unreadable, or belongs to another config.
    """
    run_dir = Path(run_dir)
    meta = _read_json(run_dir / "metadata.json")
    config = ExperimentConfig.from_dict(meta["config"])
    ckpt = load_checkpoint(run_dir / "checkpoint.npz")
    if ckpt.config_hash != config.config_hash:
        raise CheckpointError(
            f"Checkpoint hash {ckpt.config_hash[:12]} does not match config "
            f"{config.short_hash}."
        )
    if not math.isclose(ckpt.dt, config.krylov.dt, rel_tol=1e-12):
        raise CheckpointError(f"Checkpoint step {ckpt.dt} differs from dt={config.krylov.dt}.")
    logger.info("resuming %s at t=%g", run_dir.name, ckpt.time)
    record = evolve_trajectory(
        ckpt.state,
        build_hamiltonian(config),
        config.krylov,
        config.horizon,
        config.observables,
        checkpoint_path=run_dir / "checkpoint.npz",
        checkpoint_every=config.output.checkpoint_every,
        resume=ckpt,
    )
    return _finish(run_dir, config, record)


def _require_complete(result: RunResult) -> TrajectoryRecord:
    record = result.record
    if not record.complete:
        error = record.error or {}
        raise AccuracyError(
            f"Run `{result.run_dir.name}` is incomplete: {error.get('message', 'unknown error')}",
            residual=float(error.get("residual", math.nan)),
        )
    return record


def _common_times(a: TrajectoryRecord, b: TrajectoryRecord) -> list[float]:
    out: list[float] = []
    for t in a.times:
        try:
            b.time_index(t)
        except OperatorLookupError:
            continue
        out.append(t)
    return out


def compare_records(
    a: TrajectoryRecord, b: TrajectoryRecord, keys: Optional[Sequence[str]] = None
) -> dict[str, float]:
    """
    Largest absolute difference per observable over the shared sample times.

    Raises
    ------
    InsufficientDataError
        If the records share no sample time.
    """
    if a.L != b.L:
        raise ShapeError(f"Cannot compare chains of length {a.L} and {b.L}.")
    times = _common_times(a, b)
    if not times:
        raise InsufficientDataError("The records share no sample time.")
    names = unique(keys if keys is not None else [*a.keys(), *b.keys()])
    out: dict[str, float] = {}
    for key in names:
        if key not in a.samples[0] or key not in b.samples[0]:
            continue
        out[key] = max(deviation(a.at(t, key), b.at(t, key)) for t in times)
    return out


@dataclass
class ConvergenceReport:
    """
    Deviations between runs at successive fidelity thresholds.

    ``table`` has columns ``epsilon_coarse, epsilon_fine, key, max_deviation``.
    """

    epsilons: tuple[float, ...]
    table: pd.DataFrame
    runs: dict[float, RunResult] = field(default_factory=dict)

    @property
    def non_monotone(self) -> list[str]:
        """
        Keys whose deviation grows from one threshold pair to the next.
        """
        flagged: list[str] = []
        for key, group in self.table.groupby("key", sort=True):
            devs = group["max_deviation"].to_numpy()
            if np.any(np.diff(devs) > 0):
                flagged.append(str(key))
        return flagged

    @property
    def monotone(self) -> bool:
        return not self.non_monotone


def convergence_table(results: Mapping[float, RunResult]) -> pd.DataFrame:
    eps = sorted(results, reverse=True)
    rows: list[tuple[float, float, str, float]] = []
    for coarse, fine in zip(eps, eps[1:]):
        devs = compare_records(
            _require_complete(results[coarse]), _require_complete(results[fine])
        )
        for key, value in devs.items():
            rows.append((coarse, fine, key, value))
    return pd.DataFrame(rows, columns=["epsilon_coarse", "epsilon_fine", "key", "max_deviation"])


def run_convergence_suite(
    config: ExperimentConfig,
    epsilons: Sequence[float],
    jobs: int = 1,
    run: RunFn = run_experiment,
) -> ConvergenceReport:
    """
    Repeat a run at several fidelity thresholds and compare successive levels.

    Parameters
    ----------
    config
        The experiment; its ``evolution.epsilon`` is replaced by each threshold.
    epsilons
        At least two distinct thresholds.

    Raises
    ------
    ParameterError
        If fewer than two distinct thresholds are given.
    AccuracyError
        If any of the runs fails.
    """
    eps = sorted({float(e) for e in epsilons}, reverse=True)
    if len(eps) < 2:
        raise ParameterError("A convergence suite needs at least two distinct `epsilon` values.")
    base = config.label or config.model
    configs = {
        f"{e:g}": dataclasses.replace(
            config,
            evolution=dataclasses.replace(config.krylov, epsilon=e),
            label=f"{base}-eps{e:g}",
        )
        for e in eps
    }
    by_name = run_many(configs, jobs, run)
    results = {e: by_name[f"{e:g}"] for e in eps}
    report = ConvergenceReport(tuple(eps), convergence_table(results), results)
    for key in report.non_monotone:
        logger.warning("deviation of `%s` does not shrink monotonically with epsilon", key)
    return report


def model_comparison_table(bh: TrajectoryRecord, tj: TrajectoryRecord) -> pd.DataFrame:
    """
    Paired observables of a full and an effective run at shared times.

    Columns: ``time, key, index, bh, tj, deviation``. ``sz_profile`` rows are the
    sites ``L/2 + dx`` (lattice numbering; array index ``L/2 + dx - 1``); ``zeta``
    and ``chi`` rows are indexed by ``dx``.
    """
    if bh.L != tj.L:
        raise ShapeError(f"Cannot pair chains of length {bh.L} and {tj.L}.")
    if bh.schedule.dx != tj.schedule.dx:
        raise ShapeError("Both runs must record the same correlator distances.")
    L = bh.L
    rows: list[tuple[float, str, int, float, float, float]] = []
    for t in _common_times(tj, bh):
        a = bh.samples[bh.time_index(t)]
        b = tj.samples[tj.time_index(t)]
        if "sz_profile" in a and "sz_profile" in b:
            for dx in tj.schedule.dx:
                site = L // 2 + dx - 1
                if site < L:
                    x, y = float(a["sz_profile"][site]), float(b["sz_profile"][site])
                    rows.append((t, "sz_profile", site, x, y, x - y))
        for key in ("zeta", "chi"):
            if key in a and key in b:
                for n, dx in enumerate(tj.schedule.dx):
                    x, y = float(a[key][n]), float(b[key][n])
                    rows.append((t, key, dx, x, y, x - y))
    return pd.DataFrame(rows, columns=["time", "key", "index", "bh", "tj", "deviation"])


_GEOMETRY = ("L", "defects", "background", "horizon")
_HOPPING = ("t_up", "t_down", "U_up", "U_down", "V")


def _check_geometry(a: ExperimentConfig, b: ExperimentConfig) -> None:
    for name in _GEOMETRY:
        if getattr(a, name) != getattr(b, name):
            raise ParameterError(f"Paired runs differ in `{name}`.")
    for name in _HOPPING:
        if getattr(a.couplings, name) != getattr(b.couplings, name):
            raise ParameterError(f"Paired runs differ in `couplings.{name}`.")


def run_model_comparison(
    bh_config: ExperimentConfig,
    tj_config: ExperimentConfig,
    jobs: int = 1,
    run: RunFn = run_experiment,
) -> pd.DataFrame:
    """
    Run a full and an effective model on the same geometry and pair their
    observables.

    Raises
    ------
    ParameterError
        If the two configs differ in length, defects, background, horizon or the
        hopping and interaction strengths.
    """
    _check_geometry(bh_config, tj_config)
    results = run_many({"bh": bh_config, "tj": tj_config}, jobs, run)
    table = model_comparison_table(
        _require_complete(results["bh"]), _require_complete(results["tj"])
    )
    return table


def superposition_tables(
    defect: TrajectoryRecord, clean: TrajectoryRecord, shifts: Sequence[int]
) -> pd.DataFrame:
    """
    :func:`~dwmelt.comparison_table` for every observable both records support.

    ``shifts`` holds one entry per defect. With more than one defect only the
    magnetization profile can be predicted.
    """
    keys = [
        k
        for k in ("sz_profile", "zeta", "chi")
        if k in defect.keys() and k in clean.keys()
    ]
    frames: list[pd.DataFrame] = []
    for key in keys:
        try:
            frames.append(
                comparison_table(
                    defect, clean, list(shifts), key, _common_times(defect, clean)  # pyright: ignore[reportArgumentType]
                )
            )
        except InsufficientDataError:
            logger.info("no `%s` prediction for shifts %s", key, list(shifts))
    if not frames:
        return pd.DataFrame(
            columns=["time", "key", "index", "defect", "prediction", "clean", "deviation"]
        )
    return pd.concat(frames, ignore_index=True)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

Analysis = Callable[[Mapping[str, RunResult]], dict[str, pd.DataFrame]]


@dataclass(frozen=True)
class Preset:
    """
    A named group of runs plus the tables computed from them.

    ``runs`` maps run names to partial config data; overrides are applied to every
    run before it is built.
    """

    name: str
    description: str
    runs: Mapping[str, Mapping[str, Any]]
    analysis: Analysis

    def configs(self, overrides: Iterable[tuple[str, Any]] = ()) -> dict[str, ExperimentConfig]:
        overrides = list(overrides)
        out: dict[str, ExperimentConfig] = {}
        for run_name, data in self.runs.items():
            data = apply_overrides(data, [("label", f"{self.name}-{run_name}")])
            out[run_name] = ExperimentConfig.from_dict(apply_overrides(data, overrides))
        return out


@dataclass
class PresetResult:
    name: str
    runs: dict[str, RunResult]
    tables: dict[str, pd.DataFrame]
    directory: Path


def _tj(L: int, U: float, **extra: Any) -> dict[str, Any]:
    data: dict[str, Any] = {
        "model": "tj",
        "L": L,
        "couplings": {"U_up": U, "U_down": U, "V": U},
        "representation": "mps",
    }
    data.update(extra)
    return data


def _hole(site: int) -> list[dict[str, Any]]:
    return [{"kind": "hole", "site": site}]


def _flip(site: int) -> list[dict[str, Any]]:
    return [{"kind": "flip", "site": site}]


_PROFILE_KEYS = {"keys": ["sz_profile", "density"]}
_SUPERPOSITION_KEYS = {"keys": ["sz_profile", "density", "zeta", "chi"]}
_CURRENT_KEYS = {
    "keys": [
        "sz_profile",
        "density",
        "current_up",
        "current_down",
        "current_spin",
        "current_up_2site",
        "current_down_2site",
        "current_spin_2site",
        "current_up_3site",
        "current_down_3site",
        "current_spin_3site",
    ],
    "stride": 5,
}


def _wall_region(L: int) -> slice:
    return slice(L // 2 - 8, L // 2 + 8)


def _velocity_analysis(results: Mapping[str, RunResult]) -> dict[str, pd.DataFrame]:
    rows: list[tuple[str, str, float, float, float]] = []
    for name, tracer, window in (
        ("hole", "hole-density-peak", (1.0, 6.0)),
        ("flip", "magnetization-crossing", (10.0, 40.0)),
    ):
        result = results[name]
        record = _require_complete(result)
        c = result.config.couplings
        expected = 2 * c.t_up if name == "hole" else abs(c.J_perp)
        v = front_velocity(record, tracer, window)  # pyright: ignore[reportArgumentType]
        rows.append((name, tracer, v, expected, abs(v - expected) / expected))
    return {
        "velocities": pd.DataFrame(
            rows, columns=["run", "tracer", "velocity", "expected", "relative_error"]
        )
    }


def _superposition_analysis(results: Mapping[str, RunResult]) -> dict[str, pd.DataFrame]:
    clean = _require_complete(results["clean"])
    tables: dict[str, pd.DataFrame] = {}
    for name in ("hole", "flip"):
        if name in results:
            defect = results[name]
            shifts = [x.d for x in defect.config.defects]
            tables[f"superposition_{name}"] = superposition_tables(
                _require_complete(defect), clean, shifts
            )
    region = _wall_region(clean.L)
    rows: list[tuple[float, float, float, float]] = []
    for t in clean.times:
        if t < 10.0:
            continue
        sz = clean.at(t, "sz_profile")
        raw = beating_amplitude(sz, region)
        smooth = beating_amplitude(shift_average(sz, 1), region)
        rows.append((t, raw, smooth, smooth / raw if raw else math.nan))
    tables["beating"] = pd.DataFrame(rows, columns=["time", "raw", "averaged", "ratio"])
    return tables


def _model_comparison_analysis(results: Mapping[str, RunResult]) -> dict[str, pd.DataFrame]:
    tables: dict[str, pd.DataFrame] = {}
    summary: list[tuple[float, float]] = []
    for name in results:
        if not name.startswith("bh_"):
            continue
        U = name[3:]
        bh, tj = results[name], results[f"tj_{U}"]
        _check_geometry(bh.config, tj.config)
        table = model_comparison_table(_require_complete(bh), _require_complete(tj))
        tables[f"comparison_{U}"] = table
        L = bh.config.L
        mask = (table["key"] == "sz_profile") & (table["index"] == L // 2)
        summary.append(
            (bh.config.couplings.U_up, float(table.loc[mask, "deviation"].abs().max()))
        )
    tables["summary"] = pd.DataFrame(summary, columns=["U", "max_deviation_sz_center"])
    return tables


def _current_analysis(results: Mapping[str, RunResult]) -> dict[str, pd.DataFrame]:
    rows: list[tuple[float, float, float, float]] = []
    for result in results.values():
        record = _require_complete(result)
        two = np.array([np.abs(record.at(t, "current_spin_2site")) for t in record.times])
        three = np.array([np.abs(record.at(t, "current_spin_3site")) for t in record.times])
        m2, m3 = float(np.nanmax(two)), float(np.nanmax(three))
        rows.append((result.config.couplings.U_up, m2, m3, m3 / m2 if m2 else math.nan))
    frame = pd.DataFrame(rows, columns=["U", "max_2site", "max_3site", "ratio"])
    return {"currents": frame.sort_values("U", ignore_index=True)}


def _transit(result: RunResult) -> float:
    # Every hole must have crossed the wall; the one farthest from it is last.
    c = result.config
    return max(transit_time(c.L, d.site - 1, c.couplings.t_up) for d in c.defects)


def _two_hole_analysis(results: Mapping[str, RunResult]) -> dict[str, pd.DataFrame]:
    clean = _require_complete(results["clean"])
    holes = results["two_holes"]
    defect = _require_complete(holes)
    single = _require_complete(results["hole"])
    region = _wall_region(clean.L)
    after = max(_transit(holes), _transit(results["hole"]))
    rows: list[tuple[float, int, float, float, float, float]] = []
    summary: list[tuple[float, float, float, float]] = []
    for t in _common_times(defect, clean):
        if t < after:
            continue
        pred = two_hole_profile(clean, t)
        dv, cv = defect.at(t, "sz_profile"), clean.at(t, "sz_profile")
        for j in range(clean.L):
            rows.append((t, j, float(dv[j]), float(pred[j]), float(cv[j]), float(dv[j] - pred[j])))
        if t in single.times:
            two = deviation(dv, pred, region)
            one = deviation(single.at(t, "sz_profile"), superposed_profile(clean, 1, t), region)
            summary.append((t, two, one, two / one if one else math.nan))
    return {
        "two_holes": pd.DataFrame(
            rows, columns=["time", "index", "defect", "prediction", "clean", "deviation"]
        ),
        "two_hole_summary": pd.DataFrame(
            summary, columns=["time", "two_hole_deviation", "single_hole_deviation", "ratio"]
        ),
    }


def _u_sweep_analysis(results: Mapping[str, RunResult]) -> dict[str, pd.DataFrame]:
    rows: list[tuple[float, float, float]] = []
    for name in results:
        if not name.startswith("hole_"):
            continue
        hole = results[name]
        clean = _require_complete(results[f"clean_{name[5:]}"])
        defect = _require_complete(hole)
        after = _transit(hole)
        for t in _common_times(defect, clean):
            if t >= after:
                pred = superposed_profile(clean, 1, t)
                dev = deviation(defect.at(t, "sz_profile"), pred, _wall_region(clean.L))
                rows.append((hole.config.couplings.U_up, t, dev))
    frame = pd.DataFrame(rows, columns=["U", "time", "sup_deviation"])
    return {"superposition_by_U": frame.sort_values(["U", "time"], ignore_index=True)}


def _convergence_analysis(results: Mapping[str, RunResult]) -> dict[str, pd.DataFrame]:
    return {
        "convergence": convergence_table(
            {r.config.krylov.epsilon: r for r in results.values()}
        )
    }


def _oracle_analysis(results: Mapping[str, RunResult]) -> dict[str, pd.DataFrame]:
    rows: list[tuple[str, str, float]] = []
    for name in results:
        if not name.endswith("_dense"):
            continue
        case = name[: -len("_dense")]
        devs = compare_records(
            _require_complete(results[name]),
            _require_complete(results[f"{case}_mps"]),
            ["sz_profile", "zeta", "chi"],
        )
        rows += [(case, key, value) for key, value in devs.items()]
    return {"oracle": pd.DataFrame(rows, columns=["case", "key", "max_deviation"])}


_ORACLE_KEYS = {"keys": ["sz_profile", "zeta", "chi"], "stride": 5}


def _bh_oracle(L: int) -> dict[str, Any]:
    return {
        "model": "bh",
        "L": L,
        "n_max": 2,
        "prep": {"kind": "ground", "method": "dense"},
        "horizon": 5.0,
        "observables": {**_ORACLE_KEYS, "stride": 50},
    }


def _paired(cases: Mapping[str, dict[str, Any]]) -> dict[str, dict[str, Any]]:
    runs: dict[str, dict[str, Any]] = {}
    for case, data in cases.items():
        runs[f"{case}_dense"] = {**data, "representation": "dense"}
        runs[f"{case}_mps"] = {**data, "representation": "mps"}
    return runs


def _oracle_runs() -> dict[str, dict[str, Any]]:
    keys = _ORACLE_KEYS
    return _paired(
        {
            "xxz": {"model": "xxz", "L": 12, "horizon": 5.0, "observables": keys},
            "tj_clean": _tj(12, 15.0, horizon=5.0, observables=keys),
            "tj_hole": _tj(12, 15.0, horizon=5.0, observables=keys, defects=_hole(2)),
            "tj_flip": _tj(12, 15.0, horizon=5.0, observables=keys, defects=_flip(4)),
            "bh": _bh_oracle(8),
        }
    )


def _model_comparison_runs() -> dict[str, dict[str, Any]]:
    keys = {"keys": ["sz_profile", "zeta", "chi"], "dx": [1, 2, 3]}
    runs: dict[str, dict[str, Any]] = {}
    for U in (8, 15):
        common = {"horizon": 5.0, "defects": _hole(2)}
        runs[f"bh_{U}"] = {
            "model": "bh",
            "L": 12,
            "couplings": {"U_up": U, "U_down": U, "V": U},
            "prep": {"kind": "ground", "method": "variational"},
            "representation": "mps",
            "observables": {**keys, "stride": 10},
            **common,
        }
        runs[f"tj_{U}"] = _tj(12, U, representation="dense", observables=keys, **common)
    return runs


PRESETS: dict[str, Preset] = {
    p.name: p
    for p in (
        Preset(
            "front-velocity",
            "Hole and spin-flip front velocities on a polarized t-J chain (L=41/40, U=15).",
            {
                "hole": _tj(
                    41,
                    15.0,
                    background="polarized",
                    defects=_hole(21),
                    horizon=6.0,
                    observables={**_PROFILE_KEYS, "stride": 2},
                ),
                "flip": _tj(
                    40,
                    15.0,
                    background="polarized",
                    defects=_flip(20),
                    horizon=40.0,
                    observables={**_PROFILE_KEYS, "stride": 10},
                ),
            },
            _velocity_analysis,
        ),
        Preset(
            "superposition",
            "Clean, hole and spin-flip walls with superposition tables (t-J, L=40, U=15).",
            {
                "clean": _tj(40, 15.0, horizon=16.0, observables={**_SUPERPOSITION_KEYS, "stride": 5}),
                "hole": _tj(
                    40,
                    15.0,
                    defects=_hole(14),
                    horizon=16.0,
                    observables={**_SUPERPOSITION_KEYS, "stride": 5},
                ),
                "flip": _tj(
                    40,
                    15.0,
                    defects=_flip(16),
                    horizon=16.0,
                    observables={**_SUPERPOSITION_KEYS, "stride": 5},
                ),
            },
            _superposition_analysis,
        ),
        Preset(
            "model-comparison",
            "Bose-Hubbard against t-J dynamics with a hole (L=12, U in {8, 15}).",
            _model_comparison_runs(),
            _model_comparison_analysis,
        ),
        Preset(
            "currents",
            "Two- and three-site current contributions of a hole run (t-J, L=40, U in {15, 60}).",
            {
                f"hole_{U}": _tj(40, U, defects=_hole(14), horizon=10.0, observables=_CURRENT_KEYS)
                for U in (15, 60)
            },
            _current_analysis,
        ),
        Preset(
            "two-holes",
            "Two holes against the doubly shifted clean profile, with a one-hole benchmark (t-J, L=40).",
            {
                "clean": _tj(40, 15.0, horizon=20.0, observables={**_PROFILE_KEYS, "stride": 5}),
                "hole": _tj(
                    40,
                    15.0,
                    defects=_hole(10),
                    horizon=20.0,
                    observables={**_PROFILE_KEYS, "stride": 5},
                ),
                "two_holes": _tj(
                    40,
                    15.0,
                    defects=_hole(10) + _hole(15),
                    horizon=20.0,
                    observables={**_PROFILE_KEYS, "stride": 5},
                ),
            },
            _two_hole_analysis,
        ),
        Preset(
            "u-sweep",
            "Superposition deviation after hole transit versus U (t-J, L=40, U in {8, 15, 60}).",
            {
                f"{kind}_{U}": _tj(
                    40,
                    U,
                    defects=_hole(14) if kind == "hole" else [],
                    horizon=15.0,
                    observables={**_PROFILE_KEYS, "stride": 5},
                )
                for U in (8, 15, 60)
                for kind in ("clean", "hole")
            },
            _u_sweep_analysis,
        ),
        Preset(
            "convergence",
            "Fidelity-threshold convergence of a hole run (t-J, L=20, epsilon 1e-4..1e-6).",
            {
                f"eps{e:g}": _tj(
                    20,
                    15.0,
                    defects=_hole(4),
                    horizon=5.0,
                    evolution={"epsilon": e},
                    observables={**_SUPERPOSITION_KEYS, "stride": 5},
                )
                for e in (1e-4, 1e-5, 1e-6)
            },
            _convergence_analysis,
        ),
        Preset(
            "oracle",
            "Dense against MPS evolution for XXZ, t-J and Bose-Hubbard chains (L=12/12/8).",
            _oracle_runs(),
            _oracle_analysis,
        ),
        Preset(
            "oracle-bh10",
            "Dense against MPS evolution for the Bose-Hubbard chain at L=10, n_max=2 (hours).",
            _paired({"bh": _bh_oracle(10)}),
            _oracle_analysis,
        ),
    )
}


def run_preset(
    name: str,
    overrides: Iterable[tuple[str, Any]] = (),
    jobs: int = 1,
    run: RunFn = run_experiment,
) -> PresetResult:
    """
    Run every trajectory of a preset and write its tables to
    ``<root>/presets/<name>/<table>.csv``.

    Raises
    ------
    ParameterError
        If the preset does not exist.
    """
    if name not in PRESETS:
        raise ParameterError(f"Unknown preset `{name}`; available: {', '.join(PRESETS)}.")
    preset = PRESETS[name]
    configs = preset.configs(overrides)
    results = run_many(configs, jobs, run)
    tables = preset.analysis(results)
    first = next(iter(configs.values()))
    root = Path(first.output.root) if first.output.root else output_root()
    directory = root / "presets" / name
    for table_name, frame in tables.items():
        _write_csv(directory / f"{table_name}.csv", frame)
    logger.info("preset %s: %d runs, tables in %s", name, len(results), directory)
    return PresetResult(name, results, tables, directory)


def describe_presets() -> str:
    width = max(len(n) for n in PRESETS)
    return "\n".join(f"{p.name:<{width}}  {p.description}" for p in PRESETS.values())
