import dataclasses
import json
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import pytest

from dwmelt import (
    PRESETS,
    CheckpointError,
    Defect,
    ExperimentConfig,
    InsufficientDataError,
    ObserverSchedule,
    ParameterError,
    RunResult,
    ShapeError,
    TrajectoryRecord,
    apply_overrides,
    build_hamiltonian,
    build_initial_state,
    compare_records,
    describe_presets,
    evolve_trajectory,
    load_run,
    magnetization_profile,
    resume,
    run_convergence_suite,
    run_experiment,
    run_many,
    run_model_comparison,
    run_preset,
    shift_average,
    two_hole_profile,
)
from dwmelt.__main__ import main
from dwmelt._runner import parse_value, run_directory


def small(root: Path, **extra: Any) -> ExperimentConfig:
    data: dict[str, Any] = {
        "model": "tj",
        "L": 6,
        "representation": "dense",
        "horizon": 0.4,
        "observables": {"keys": ["sz_profile", "density", "zeta", "chi"], "dx": [1, 2]},
        "output": {"root": str(root)},
    }
    data.update(extra)
    return ExperimentConfig.from_dict(data)


def test_defaults():
    cfg = ExperimentConfig()
    assert (cfg.model, cfg.L, cfg.representation) == ("tj", 40, "mps")
    assert cfg.krylov.dt == pytest.approx(0.1)
    assert ExperimentConfig(model="bh", L=8).krylov.dt == pytest.approx(0.01)
    assert len(cfg.short_hash) == 12
    assert cfg.config_hash.startswith(cfg.short_hash)


def test_hash_is_stable():
    a = ExperimentConfig.from_dict({"couplings": {"U_up": 15, "V": 15}, "horizon": 2})
    b = ExperimentConfig.from_dict({"couplings": {"U_up": 15.0, "V": 15.0}, "horizon": 2.0})
    assert a.config_hash == b.config_hash

    # Output location and reference runs do not change the physics
    c = ExperimentConfig.from_dict(
        {"horizon": 2, "output": {"root": "elsewhere"}, "reference": "runs/clean"}
    )
    assert c.config_hash == a.config_hash
    assert ExperimentConfig.from_dict({"L": 42, "horizon": 2}).config_hash != a.config_hash


def test_dict_round_trip():
    cfg = ExperimentConfig.from_dict(
        {
            "model": "tj",
            "L": 12,
            "defects": [{"kind": "hole", "site": 3}, ["flip", 5]],
            "evolution": {"epsilon": 1e-5},
            "observables": {"keys": ["sz_profile"], "stride": 2},
        }
    )
    assert cfg.defects == (Defect("hole", 3), Defect("flip", 5))
    assert cfg.krylov.epsilon == 1e-5
    back = ExperimentConfig.from_dict(cfg.to_dict())
    assert back == cfg
    assert back.config_hash == cfg.config_hash
    assert ExperimentConfig.from_json(json.dumps(cfg.to_dict())) == cfg


def test_unknown_keys():
    with pytest.raises(ParameterError, match="Unknown key"):
        ExperimentConfig.from_dict({"modle": "tj"})
    with pytest.raises(ParameterError, match="`couplings`"):
        ExperimentConfig.from_dict({"couplings": {"W": 1.0}})
    with pytest.raises(ParameterError, match="`evolution`"):
        ExperimentConfig.from_dict({"evolution": {"tau": 0.1}})
    with pytest.raises(ParameterError):
        ExperimentConfig.from_json("[1, 2]")
    with pytest.raises(ParameterError, match="JSON"):
        ExperimentConfig.from_json("{")


@pytest.mark.parametrize(
    "data",
    [
        {"model": "hubbard"},
        {"L": 1},
        {"L": 7},
        {"background": "striped"},
        {"representation": "tree"},
        {"n_max": 0},
        {"J_perp": 1.0},
        {"prep": {"kind": "ground"}},
        {"defects": [{"kind": "twist", "site": 3}]},
        {"defects": [{"kind": "hole", "site": 0}]},
        {"defects": [["hole", 5], ["flip", 5]]},
        {"model": "xxz", "defects": [["hole", 5]]},
        {"horizon": 0.25},
        {"horizon": -1.0},
    ],
)
def test_invalid_configs(data: dict[str, Any]):
    with pytest.raises(ParameterError):
        ExperimentConfig.from_dict(data)


def test_defect_ranges():
    # On the wall the defect must sit strictly inside the left half
    ExperimentConfig.from_dict({"L": 8, "defects": [["hole", 2], ["flip", 3]]})
    with pytest.raises(ParameterError, match=r"\[2, 3\]"):
        ExperimentConfig.from_dict({"L": 8, "defects": [["hole", 1]]})
    with pytest.raises(ParameterError, match=r"\[2, 3\]"):
        ExperimentConfig.from_dict({"L": 8, "defects": [["hole", 4]]})

    polarized = {"L": 7, "background": "polarized"}
    ExperimentConfig.from_dict({**polarized, "defects": [["hole", 1], ["flip", 7]]})
    with pytest.raises(ParameterError, match=r"\[1, 7\]"):
        ExperimentConfig.from_dict({**polarized, "defects": [["hole", 8]]})


def test_density_is_dropped_on_spin_chains():
    cfg = ExperimentConfig.from_dict(
        {"model": "xxz", "L": 8, "observables": {"keys": ["density", "sz_profile"]}}
    )
    assert cfg.observables.keys == ("sz_profile",)
    assert cfg.basis.dim == 2


def test_parse_value():
    assert parse_value("40") == 40
    assert parse_value("1e-5") == 1e-5
    assert parse_value("true") is True
    assert parse_value('["sz_profile"]') == ["sz_profile"]
    assert parse_value("mps") == "mps"


def test_apply_overrides():
    data = {"L": 12, "couplings": {"U_up": 15.0}}
    out = apply_overrides(
        data, [("couplings.U_up", 8.0), ("L", 20), ("L", 24), ("output.root", "x")]
    )
    assert out == {"L": 24, "couplings": {"U_up": 8.0}, "output": {"root": "x"}}
    assert data == {"L": 12, "couplings": {"U_up": 15.0}}

    with pytest.raises(ParameterError, match="Invalid override"):
        apply_overrides(data, [("couplings..U_up", 1)])
    with pytest.raises(ParameterError, match="does not name"):
        apply_overrides(data, [("L.value", 1)])


def test_build_initial_state():
    cfg = ExperimentConfig.from_dict(
        {"L": 8, "representation": "dense", "defects": [["hole", 2]]}
    )
    state = build_initial_state(cfg)
    assert np.allclose(magnetization_profile(state), [0.5, 0, 0.5, 0.5] + [-0.5] * 4)
    assert build_hamiltonian(cfg).L == 8

    polarized = ExperimentConfig.from_dict(
        {"model": "xxz", "L": 5, "background": "polarized", "defects": [["flip", 3]]}
    )
    sz = magnetization_profile(build_initial_state(polarized))
    assert np.allclose(sz, [0.5, 0.5, -0.5, 0.5, 0.5])

    xxz = ExperimentConfig.from_dict({"model": "xxz", "L": 4, "J_perp": 2.0, "J_z": 0.0})
    M = build_hamiltonian(xxz).to_sparse().toarray()
    assert np.allclose(np.diag(M), 0.0)


def test_run_experiment(tmp_path: Path, snapshot):
    cfg = small(tmp_path)
    result = run_experiment(cfg)

    assert result.complete
    assert result.run_dir == tmp_path / f"tj-{cfg.short_hash}"
    assert result.run_dir == run_directory(cfg)
    assert set(result.files) == {
        "trajectory.csv",
        "record.json",
        "metadata.json",
        "checkpoint.npz",
    }
    assert result.record.times == pytest.approx([0.0, 0.1, 0.2, 0.3, 0.4])

    lines = (result.run_dir / "trajectory.csv").read_text().splitlines()
    assert lines[0] == snapshot
    frame = pd.read_csv(result.run_dir / "trajectory.csv")
    assert set(frame.config_hash) == {cfg.config_hash}
    assert {"sz_profile", "density", "zeta", "chi"} <= set(frame.key)

    meta = json.loads((result.run_dir / "metadata.json").read_text())
    assert meta["status"] == "complete"
    assert meta["config_hash"] == cfg.config_hash
    assert meta["samples"] == 5
    assert meta["final_time"] == pytest.approx(0.4)
    assert meta["versions"]["csv_format"] == "1.0"
    assert ExperimentConfig.from_dict(meta["config"]) == cfg


def test_identical_configs_give_identical_files(tmp_path: Path):
    a = run_experiment(small(tmp_path / "a"))
    b = run_experiment(small(tmp_path / "b"))
    assert a.run_dir.name == b.run_dir.name
    for name in ("trajectory.csv", "record.json"):
        assert (a.run_dir / name).read_bytes() == (b.run_dir / name).read_bytes()


def test_reuse(tmp_path: Path, monkeypatch: pytest.MonkeyPatch):
    first = run_experiment(small(tmp_path))

    def boom(*args: Any, **kwargs: Any):
        raise AssertionError("should not evolve again")

    monkeypatch.setattr("dwmelt._runner.evolve_trajectory", boom)
    again = run_experiment(small(tmp_path, output={"root": str(tmp_path), "reuse": True}))
    assert again.complete
    assert again.run_dir == first.run_dir
    assert again.record.times == first.record.times


def test_load_run(tmp_path: Path):
    result = run_experiment(small(tmp_path))
    loaded = load_run(result.run_dir)
    assert loaded.config == result.config
    assert loaded.record.times == result.record.times
    assert np.allclose(loaded.record.at(0.4, "zeta"), result.record.at(0.4, "zeta"))

    with pytest.raises(CheckpointError):
        load_run(tmp_path / "missing")


def test_failed_step_writes_error(tmp_path: Path):
    cfg = small(
        tmp_path,
        horizon=2.0,
        defects=[["hole", 2]],
        evolution={"dt": 1.0, "max_krylov": 2},
    )
    result = run_experiment(cfg)
    assert not result.complete
    assert "error.json" in result.files
    error = json.loads((result.run_dir / "error.json").read_text())
    assert error["error"] == "AccuracyError"
    assert error["exit_code"] == 3
    meta = json.loads((result.run_dir / "metadata.json").read_text())
    assert meta["status"] == "failed"
    assert meta["samples"] == 1


def test_resume_continues_an_interrupted_run(tmp_path: Path):
    cfg = small(tmp_path, output={"root": str(tmp_path), "checkpoint_every": 2})
    full = run_experiment(cfg)

    # Replace the final checkpoint by one written halfway
    evolve_trajectory(
        build_initial_state(cfg),
        build_hamiltonian(cfg),
        cfg.krylov,
        0.2,
        cfg.observables,
        metadata={"config_hash": cfg.config_hash, "label": cfg.label},
        checkpoint_path=full.run_dir / "checkpoint.npz",
    )
    resumed = resume(full.run_dir)
    assert resumed.complete
    assert resumed.record.times == pytest.approx(full.record.times)
    for t in full.record.times:
        for key in ("sz_profile", "zeta"):
            assert np.allclose(
                resumed.record.at(t, key), full.record.at(t, key), atol=1e-12, equal_nan=True
            )


def test_resume_rejects_foreign_checkpoints(tmp_path: Path):
    cfg = small(tmp_path)
    result = run_experiment(cfg)
    evolve_trajectory(
        build_initial_state(cfg),
        build_hamiltonian(cfg),
        cfg.krylov,
        0.2,
        cfg.observables,
        metadata={"config_hash": "0" * 40},
        checkpoint_path=result.run_dir / "checkpoint.npz",
    )
    with pytest.raises(CheckpointError, match="does not match"):
        resume(result.run_dir)
    with pytest.raises(CheckpointError):
        resume(tmp_path / "missing")


def test_reference_comparison(tmp_path: Path):
    clean = run_experiment(small(tmp_path, L=8, label="clean"))
    holed = run_experiment(
        small(
            tmp_path,
            L=8,
            label="hole",
            defects=[["hole", 2]],
            reference=str(clean.run_dir),
        )
    )
    assert "comparison.csv" in holed.files
    table = pd.read_csv(holed.files["comparison.csv"])
    assert list(table.columns[:2]) == ["defect_hash", "clean_hash"]
    assert set(table.clean_hash) == {clean.config.config_hash}
    assert {"sz_profile", "zeta", "chi"} <= set(table.key)


def test_reference_comparison_with_two_holes(tmp_path: Path):
    clean = run_experiment(small(tmp_path, L=8, label="clean"))
    holes = run_experiment(
        small(
            tmp_path,
            L=8,
            label="holes",
            defects=[["hole", 2], ["hole", 3]],
            reference=str(clean.run_dir),
        )
    )
    table = pd.read_csv(holes.files["comparison.csv"])
    # Correlators have no two-defect prediction
    assert set(table.key) == {"sz_profile"}
    for t, rows in table.groupby("time"):
        expected = two_hole_profile(clean.record, t)
        assert np.allclose(rows.prediction, expected, equal_nan=True)



def make_record(L: int, times: tuple[float, ...], offset: float = 0.0) -> TrajectoryRecord:
    record = TrajectoryRecord(L, ObserverSchedule(keys=("sz_profile",)))
    for t in times:
        record.append(t, {"sz_profile": np.full(L, t + offset)})
    return record


def test_compare_records():
    a = make_record(4, (0.0, 0.5, 1.0))
    b = make_record(4, (0.0, 1.0), offset=0.25)
    assert compare_records(a, b) == pytest.approx({"sz_profile": 0.25})
    assert compare_records(a, a) == {"sz_profile": 0.0}

    with pytest.raises(ShapeError):
        compare_records(a, make_record(6, (0.0,)))
    with pytest.raises(InsufficientDataError):
        compare_records(a, make_record(4, (0.25,)))


def test_run_many_validates_jobs():
    with pytest.raises(ParameterError, match="`jobs`"):
        run_many({}, jobs=0)


def test_convergence_suite(tmp_path: Path):
    cfg = small(tmp_path)
    report = run_convergence_suite(cfg, [1e-4, 1e-6, 1e-5])
    assert report.epsilons == (1e-4, 1e-5, 1e-6)
    assert list(report.table.columns) == [
        "epsilon_coarse",
        "epsilon_fine",
        "key",
        "max_deviation",
    ]
    pairs = set(zip(report.table.epsilon_coarse, report.table.epsilon_fine))
    assert pairs == {(1e-4, 1e-5), (1e-5, 1e-6)}
    # The dense path does not truncate, so every threshold gives the same trajectory
    assert (report.table.max_deviation < 1e-12).all()
    assert report.runs[1e-5].run_dir.name.startswith("tj-eps1e-05-")

    with pytest.raises(ParameterError, match="two distinct"):
        run_convergence_suite(cfg, [1e-5, 1e-5])


def test_model_comparison(tmp_path: Path):
    common = {
        "L": 4,
        "representation": "dense",
        "horizon": 0.1,
        "output": {"root": str(tmp_path)},
    }
    bh = ExperimentConfig.from_dict(
        {
            **common,
            "model": "bh",
            "prep": {"kind": "ground"},
            "observables": {"keys": ["sz_profile"], "dx": [1, 2], "stride": 10},
        }
    )
    tj = ExperimentConfig.from_dict(
        {**common, "model": "tj", "observables": {"keys": ["sz_profile"], "dx": [1, 2]}}
    )
    table = run_model_comparison(bh, tj)
    assert list(table.columns) == ["time", "key", "index", "bh", "tj", "deviation"]
    assert table["time"].tolist() == pytest.approx([0.0, 0.0, 0.1, 0.1])
    assert table["index"].tolist() == [2, 3, 2, 3]
    assert (table.deviation.abs() < 0.1).all()

    with pytest.raises(ParameterError, match="`horizon`"):
        run_model_comparison(bh, dataclasses.replace(tj, horizon=0.2))


def test_presets(tmp_path: Path, snapshot):
    assert describe_presets() == snapshot
    for preset in PRESETS.values():
        configs = preset.configs([("output.root", str(tmp_path))])
        assert configs
        for name, cfg in configs.items():
            assert cfg.label == f"{preset.name}-{name}"
            assert cfg.output.root == str(tmp_path)

    convergence = PRESETS["convergence"].configs()
    assert sorted(c.krylov.epsilon for c in convergence.values()) == [1e-6, 1e-5, 1e-4]

    with pytest.raises(ParameterError, match="Unknown preset"):
        run_preset("nope")


def test_preset_geometry():
    two = PRESETS["two-holes"].configs()
    assert two["two_holes"].defects == (Defect("hole", 10), Defect("hole", 15))
    assert two["hole"].defects == (Defect("hole", 10),)
    assert {c.horizon for c in two.values()} == {20.0}
    sweep = PRESETS["u-sweep"].configs()
    assert {c.horizon for c in sweep.values()} == {15.0}
    assert sweep["hole_60"].defects == (Defect("hole", 14),)
    bh = PRESETS["oracle-bh10"].configs()
    assert {(c.model, c.L, c.n_max) for c in bh.values()} == {("bh", 10, 2)}
    assert {c.representation for c in bh.values()} == {"dense", "mps"}


def profile_record(profiles: dict[float, np.ndarray]) -> TrajectoryRecord:
    L = len(next(iter(profiles.values())))
    record = TrajectoryRecord(L, ObserverSchedule(keys=("sz_profile",)))
    for t, p in profiles.items():
        record.append(t, {"sz_profile": p})
    return record


WALL = np.linspace(0.5, -0.5, 40)


def test_u_sweep_measures_the_wall_region(tmp_path: Path):
    # A disturbance far left of the wall must not count
    predicted = np.nan_to_num(shift_average(WALL, 1), nan=-0.5)
    disturbed = predicted.copy()
    disturbed[3] -= 0.3
    results = {}
    for name, cfg in PRESETS["u-sweep"].configs().items():
        profile = disturbed if name.startswith("hole") else WALL
        record = profile_record({0.0: WALL, 6.0: profile})
        results[name] = RunResult(cfg, record, tmp_path)
    table = PRESETS["u-sweep"].analysis(results)["superposition_by_U"]
    # Transit of a hole at site 14 on L=40 ends at t=5
    assert table["time"].tolist() == [6.0, 6.0, 6.0]
    assert table.U.tolist() == [8.0, 15.0, 60.0]
    assert (table.sup_deviation < 1e-12).all()


@pytest.mark.parametrize("reverse", [False, True])
def test_two_hole_analysis(tmp_path: Path, reverse: bool):
    one = np.nan_to_num(shift_average(WALL, 1), nan=-0.5)
    two = np.nan_to_num(shift_average(one, 1), nan=-0.5)
    wall = slice(12, 28)
    single, double = one.copy(), two.copy()
    single[wall] += 0.02
    double[wall] += 0.01
    double[2] -= 0.3

    configs = PRESETS["two-holes"].configs()
    if reverse:
        cfg = configs["two_holes"]
        configs["two_holes"] = dataclasses.replace(cfg, defects=cfg.defects[::-1])
    # The farther hole (site 10) crosses the wall last, at t=7
    times = (0.0, 6.0, 8.0)
    records = {
        "clean": profile_record({t: WALL for t in times}),
        "hole": profile_record({t: single for t in times}),
        "two_holes": profile_record({t: double for t in times}),
    }
    results = {name: RunResult(configs[name], records[name], tmp_path) for name in configs}
    tables = PRESETS["two-holes"].analysis(results)

    assert set(tables["two_holes"]["time"]) == {8.0}
    summary = tables["two_hole_summary"]
    assert summary["time"].tolist() == [8.0]
    assert summary.two_hole_deviation[0] == pytest.approx(0.01)
    assert summary.single_hole_deviation[0] == pytest.approx(0.02)
    assert summary.ratio[0] == pytest.approx(0.5)



def test_cli_presets(capsys: pytest.CaptureFixture[str]):
    assert main(["presets"]) == 0
    assert capsys.readouterr().out == describe_presets() + "\n"


def test_cli_run(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    code = main(
        [
            "run",
            "--set",
            "model=xxz",
            "--L",
            "4",
            "--T",
            "0.2",
            "--representation",
            "dense",
            "--output",
            str(tmp_path),
            "--set",
            'observables.keys=["sz_profile"]',
        ]
    )
    assert code == 0
    run_dir = Path(capsys.readouterr().out.strip())
    assert run_dir.parent == tmp_path
    assert (run_dir / "run.log").exists()
    assert (run_dir / "trajectory.csv").exists()


def test_cli_exit_codes(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    # Odd chains cannot hold a domain wall
    assert main(["run", "--L", "5", "--output", str(tmp_path)]) == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "ParameterError"
    assert record["exit_code"] == 2

    failing = [
        "run",
        "--L",
        "6",
        "--T",
        "2",
        "--representation",
        "dense",
        "--output",
        str(tmp_path),
        "--set",
        'defects=[["hole", 2]]',
        "--set",
        "evolution.dt=1.0",
        "--set",
        "evolution.max_krylov=2",
        "--set",
        'observables.keys=["sz_profile"]',
    ]
    assert main(failing) == 3
    assert main(["resume", str(tmp_path / "missing")]) == 4


def test_cli_converge(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(small(tmp_path).to_dict()))
    code = main(
        ["converge", str(path), "--epsilons", "1e-4", "1e-5", "--output", str(tmp_path)]
    )
    assert code == 0
    assert "max_deviation" in capsys.readouterr().out


@pytest.mark.slow
def test_oracle_preset(tmp_path: Path):
    result = run_preset("oracle", [("output.root", str(tmp_path))])
    oracle = result.tables["oracle"]
    assert set(oracle.case) == {"xxz", "tj_clean", "tj_hole", "tj_flip", "bh"}
    assert (oracle.max_deviation < 1e-4).all()
    assert (result.directory / "oracle.csv").exists()
