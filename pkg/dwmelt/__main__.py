from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Iterator, Optional, Sequence

from ._errors import DwmeltError, ParameterError, exit_code_for
from ._runner import (
    ExperimentConfig,
    RunResult,
    apply_overrides,
    describe_presets,
    parse_value,
    resume,
    run_convergence_suite,
    run_directory,
    run_experiment,
    run_model_comparison,
    run_preset,
)

logger = logging.getLogger("dwmelt")

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"

# Shortcut flags and the config paths they set.
SHORTCUTS: dict[str, tuple[str, ...]] = {
    "L": ("L",),
    "U": ("couplings.U_up", "couplings.U_down", "couplings.V"),
    "t": ("couplings.t_up", "couplings.t_down"),
    "T": ("horizon",),
    "epsilon": ("evolution.epsilon",),
    "representation": ("representation",),
    "output": ("output.root",),
}


class _Override(argparse.Action):
    # --set and the shortcut flags share one ordered list, so the last one wins.
    def __call__(
        self,
        parser: argparse.ArgumentParser,
        namespace: argparse.Namespace,
        values: Any,
        option_string: Optional[str] = None,
    ) -> None:
        items = list(getattr(namespace, "overrides", None) or [])
        if self.dest == "set":
            path, sep, raw = str(values).partition("=")
            if not sep or not path.strip():
                parser.error(f"--set expects `section.field=value`, got `{values}`")
            items.append((path.strip(), parse_value(raw)))
        else:
            value = str(values) if self.dest == "output" else parse_value(str(values))
            items += [(path, value) for path in SHORTCUTS[self.dest]]
        setattr(namespace, "overrides", items)


def _common_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("-v", "--verbose", action="store_true", help="Log per-step details.")
    p.add_argument("-q", "--quiet", action="store_true", help="Log warnings and errors only.")
    p.add_argument(
        "--set",
        action=_Override,
        metavar="KEY=VALUE",
        help="Override a config field, e.g. `--set evolution.epsilon=1e-5`. Repeatable.",
    )
    for name in SHORTCUTS:
        p.add_argument(f"--{name}", action=_Override, help=f"Shortcut for {', '.join(SHORTCUTS[name])}.")
    p.add_argument("--jobs", type=int, default=1, help="Trajectories to run in parallel.")
    p.add_argument(
        "--reuse", action="store_true", help="Reuse complete runs with the same config hash."
    )
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="dwmelt", description="Domain-wall melting in Bose-Hubbard, t-J and XXZ chains."
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", parents=[common], help="Run one config or a preset.")
    run.add_argument("config", nargs="?", help="JSON config file.")
    run.add_argument("--preset", help="Run a named preset instead of a config file.")

    compare = sub.add_parser(
        "compare", parents=[common], help="Pair a Bose-Hubbard run with a t-J run."
    )
    compare.add_argument("bh_config")
    compare.add_argument("tj_config")

    converge = sub.add_parser(
        "converge", parents=[common], help="Repeat a run at several fidelity thresholds."
    )
    converge.add_argument("config")
    converge.add_argument(
        "--epsilons", type=float, nargs="+", default=[1e-4, 1e-5, 1e-6], metavar="EPS"
    )

    res = sub.add_parser("resume", parents=[common], help="Continue a run from its checkpoint.")
    res.add_argument("run_dir")

    sub.add_parser("presets", help="List the available presets.")
    parser.set_defaults(overrides=[])
    return parser


def _setup_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)


@contextlib.contextmanager
def _run_log(run_dir: Path) -> Iterator[None]:
    run_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(run_dir / "run.log", mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    root.addHandler(handler)
    try:
        yield
    finally:
        root.removeHandler(handler)
        handler.close()


def logged_run(config: ExperimentConfig) -> RunResult:
    """
    :func:`run_experiment` with its log mirrored to ``run.log`` in the run directory.
    """
    with _run_log(run_directory(config)):
        return run_experiment(config)


def _load_config(path: Optional[str], overrides: Sequence[tuple[str, Any]]) -> ExperimentConfig:
    data: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        data = ExperimentConfig.from_json(text).to_dict()
    return ExperimentConfig.from_dict(apply_overrides(data, overrides))


def _overrides(args: argparse.Namespace) -> list[tuple[str, Any]]:
    items: list[tuple[str, Any]] = list(args.overrides)
    if args.reuse:
        items.append(("output.reuse", True))
    return items


def _report(result: RunResult) -> int:
    print(result.run_dir)
    if result.complete:
        return 0
    error = result.record.error or {}
    return int(error.get("exit_code", 3))


def _dispatch(args: argparse.Namespace) -> int:
    verb = args.verb
    if verb == "presets":
        print(describe_presets())
        return 0
    overrides = _overrides(args)
    if verb == "run":
        if args.preset:
            if args.config:
                raise ParameterError("Give either a config file or `--preset`, not both.")
            result = run_preset(args.preset, overrides, args.jobs, logged_run)
            print(result.directory)
            return 0
        return _report(logged_run(_load_config(args.config, overrides)))
    if verb == "compare":
        table = run_model_comparison(
            _load_config(args.bh_config, overrides),
            _load_config(args.tj_config, overrides),
            args.jobs,
            logged_run,
        )
        summary = table.groupby("key")["deviation"].apply(lambda s: s.abs().max())
        print(summary.to_string())
        return 0
    if verb == "converge":
        report = run_convergence_suite(
            _load_config(args.config, overrides), args.epsilons, args.jobs, logged_run
        )
        print(report.table.to_string(index=False))
        return 0 if report.monotone else 3
    if verb == "resume":
        run_dir = Path(args.run_dir)
        with _run_log(run_dir):
            return _report(resume(run_dir))
    raise AssertionError(verb)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args)
    try:
        return _dispatch(args)
    except (DwmeltError, OSError) as e:
        record = e.to_record() if isinstance(e, DwmeltError) else {"error": type(e).__name__}
        record.setdefault("message", str(e))
        logger.error("%s", record["message"])
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
