"""Command-line entry points.

Exit status: 0 success, 1 validation/evaluation errors, 2 I/O, schema or
usage errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .appeval import ApplicationProfile, match_requirements
from .errors import LtsEvalError, ParameterError, SchemaError
from .io import read_yaml, write_yaml
from .metrics import DEFAULT_QUANTILES, PerformanceResults, evaluate_experiment
from .report import read_error_table, write_error_table, write_offset_curve, write_plot_data
from .scenario import ScenarioKind, TestCase, build_scenario, testcase_from_dict, testcase_to_dict, validate_test_case
from .testbed import ErrorModel, load_experiment, run_experiment, save_experiment

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
REFERENCE_DIR = Path(__file__).resolve().parent / "data" / "reference"
PERFORMANCE_FILE = "performance.yaml"


class CliError(Exception):
    def __init__(self, msg, code=EXIT_INVALID):
        super().__init__(msg)
        self.code = code


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _floats(text: str, n: Optional[int] = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} values, got {text!r}")
    return vals


def _area(text):
    return _floats(text, 2)


def _yaml_files(paths: Sequence[str]) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob("*.yaml")))
        elif p.exists():
            out.append(p)
        else:
            raise CliError(f"{p}: no such file or directory", EXIT_IO)
    return out


def _performance_path(p: Path) -> Path:
    return p / PERFORMANCE_FILE if p.is_dir() else p


# -- subcommands ------------------------------------------------------------------


def _report_validation(tc: TestCase) -> bool:
    rep = validate_test_case(tc)
    for w in rep.warnings:
        _warn(w)
    for e in rep.errors:
        print(f"error: {e}", file=sys.stderr)
    return rep.ok


def cmd_scenario(a) -> int:
    tc = build_scenario(a.kind, tuple(a.area), a.poses, a.speed, a.seed)
    if not _report_validation(tc):
        return EXIT_INVALID
    write_yaml(a.out, testcase_to_dict(tc))
    print(f"wrote {a.out} ({len(tc.eval_poses)} evaluation poses)")
    return EXIT_OK


def _load_error_model(doc, seed: Optional[int]) -> ErrorModel:
    em = ErrorModel.from_dict(doc or {})
    if seed is not None:
        em = ErrorModel.from_dict({**em.to_dict(), "seed": seed})
    return em


def cmd_simulate(a) -> int:
    tc = testcase_from_dict(read_yaml(a.testcase))
    if not _report_validation(tc):
        return EXIT_INVALID
    em = _load_error_model(read_yaml(a.error_model), a.seed)
    data = run_experiment(tc, em, a.gt_rate)
    path = save_experiment(data, tc, a.out)
    print(f"wrote {path} ({len(data.gt)} GT, {len(data.lts)} LTS samples)")
    return EXIT_OK


def _evaluate_to(exp_path, out: Path, quantiles, name, thr) -> PerformanceResults:
    data, tc = load_experiment(exp_path)
    ev = evaluate_experiment(data, tc, quantiles, lts_name=name, latency_speed_threshold_mm_s=thr)
    write_yaml(out / PERFORMANCE_FILE, ev.results.to_dict())
    write_error_table(ev.pose_errors, out / "error_samples.csv")
    if ev.stream_errors is not None:
        write_error_table(ev.stream_errors, out / "stream_errors.csv")
    write_offset_curve(ev.time_offset_curve, out / "clock_offset_curve.csv")
    return ev.results


def cmd_evaluate(a) -> int:
    res = _evaluate_to(a.experiment, Path(a.out), a.quantiles, a.name, a.latency_speed_threshold)
    print(f"wrote {Path(a.out) / PERFORMANCE_FILE} ({res.matched_count} matched samples)")
    return EXIT_OK


def _match_doc(profiles: list[ApplicationProfile], results: list[tuple[str, PerformanceResults]]) -> dict:
    evs = [match_requirements(p, results) for p in profiles]
    return {
        "overall_suitable_lts": {ev.application: ev.suitable for ev in evs},
        "applications": [ev.to_dict() for ev in evs],
    }


def _load_results(paths) -> list[tuple[str, PerformanceResults]]:
    out = []
    for p in paths:
        res = PerformanceResults.from_dict(read_yaml(_performance_path(Path(p))))
        out.append((res.lts_name or Path(p).stem, res))
    return out


def cmd_match(a) -> int:
    prof_paths = a.profile or []
    res_paths = a.results or []
    if a.reference:
        prof_paths = prof_paths + [str(REFERENCE_DIR / "profiles")]
        res_paths = res_paths + [str(REFERENCE_DIR / "results")]
    if not prof_paths or not res_paths:
        raise CliError("match needs --profile and --results (or --reference)", EXIT_IO)
    profiles = [ApplicationProfile.from_dict(read_yaml(p)) for p in _yaml_files(prof_paths)]
    expanded = []
    for p in map(Path, res_paths):
        if p.is_dir() and not (p / PERFORMANCE_FILE).exists():
            expanded.extend(sorted(p.glob("*.yaml")))
        else:
            expanded.append(p)
    doc = _match_doc(profiles, _load_results(expanded))
    write_yaml(a.out, doc)
    for app, names in doc["overall_suitable_lts"].items():
        print(f"{app}: {{{', '.join(names)}}}")
    return EXIT_OK


def _report(results_path: Path, out: Path, figures: bool) -> list[Path]:
    base = results_path if results_path.is_dir() else results_path.parent
    for name in ("stream_errors.csv", "error_samples.csv"):
        if (base / name).exists():
            return write_plot_data(read_error_table(base / name), out, figures)
    raise CliError(f"{base}: no stream_errors.csv or error_samples.csv to report on", EXIT_IO)


def cmd_report(a) -> int:
    for p in _report(Path(a.results), Path(a.out), not a.no_figures):
        print(f"wrote {p}")
    return EXIT_OK


# -- pipeline ---------------------------------------------------------------------


@dataclass
class LtsSpec:
    name: str
    error_model: dict


@dataclass
class RunManifest:
    output_dir: Path
    lts: list[LtsSpec]
    test_case: Optional[Path] = None
    scenario: dict = field(default_factory=dict)
    seed: int = 0
    quantiles: tuple = DEFAULT_QUANTILES
    latency_speed_threshold_mm_s: Optional[float] = None
    gt_rate_hz: float = 100.0
    profiles: list = field(default_factory=list)
    figures: bool = True

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        doc = read_yaml(path)
        if not isinstance(doc, dict):
            raise SchemaError(f"{path}: manifest must be a mapping")
        base = path.parent

        def rel(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        known = {"output_dir", "lts", "test_case", "scenario", "seed", "quantiles", "latency_speed_threshold_mm_s", "gt_rate_hz", "profiles", "figures"}
        unknown = set(doc) - known
        if unknown:
            raise SchemaError(f"{path}: unknown manifest keys {sorted(unknown)}")
        if "output_dir" not in doc or not doc.get("lts"):
            raise SchemaError(f"{path}: manifest needs 'output_dir' and a non-empty 'lts' list")
        lts = []
        for i, entry in enumerate(doc["lts"]):
            if not isinstance(entry, dict) or "name" not in entry:
                raise SchemaError(f"{path}: lts[{i}] needs a 'name'")
            em = entry.get("error_model") or {}
            if isinstance(em, str):
                em = read_yaml(rel(em)) or {}
            lts.append(LtsSpec(str(entry["name"]), dict(em)))
        names = [s.name for s in lts]
        if len(set(names)) != len(names):
            raise SchemaError(f"{path}: LTS names must be unique")
        tc = doc.get("test_case")
        if tc is not None and not rel(tc).exists():
            raise CliError(f"{rel(tc)}: test case not found", EXIT_IO)
        profiles = [rel(p) for p in doc.get("profiles") or []]
        for p in profiles:
            if not p.exists():
                raise CliError(f"{p}: profile not found", EXIT_IO)
        return cls(
            output_dir=rel(doc["output_dir"]),
            lts=lts,
            test_case=rel(tc) if tc is not None else None,
            scenario=dict(doc.get("scenario") or {}),
            seed=int(doc.get("seed", 0)),
            quantiles=tuple(float(q) for q in doc.get("quantiles", DEFAULT_QUANTILES)),
            latency_speed_threshold_mm_s=doc.get("latency_speed_threshold_mm_s"),
            gt_rate_hz=float(doc.get("gt_rate_hz", 100.0)),
            profiles=profiles,
            figures=bool(doc.get("figures", True)),
        )

    def build_test_case(self) -> TestCase:
        if self.test_case is not None:
            return testcase_from_dict(read_yaml(self.test_case))
        s = dict(self.scenario)
        unknown = set(s) - {"kind", "area", "poses", "speed_mm_s", "seed"}
        if unknown:
            raise SchemaError(f"unknown scenario keys {sorted(unknown)}")
        return build_scenario(
            s.get("kind", "StandardDynamic"),
            tuple(s.get("area", (10.0, 10.0))),
            int(s.get("poses", 63)),
            s.get("speed_mm_s"),
            int(s.get("seed", self.seed)),
        )


def run_pipeline(m: RunManifest) -> dict:
    out = m.output_dir
    tc = m.build_test_case()
    if not _report_validation(tc):
        raise CliError("test case failed validation")
    write_yaml(out / "testcase.yaml", testcase_to_dict(tc))
    results = []
    for i, spec in enumerate(m.lts):
        em_doc = dict(spec.error_model)
        # each LTS draws from its own stream unless it pins a seed
        em_doc.setdefault("seed", m.seed + i)
        em = ErrorModel.from_dict(em_doc)
        root = out / spec.name
        save_experiment(run_experiment(tc, em, m.gt_rate_hz), tc, root / "experiment")
        res = _evaluate_to(root / "experiment", root / "evaluation", m.quantiles, spec.name, m.latency_speed_threshold_mm_s)
        _report(root / "evaluation", root / "report", m.figures)
        results.append((spec.name, res))
    summary = {"test_case_id": tc.id, "lts": {n: {"performance": f"{n}/evaluation/{PERFORMANCE_FILE}"} for n, _ in results}}
    if m.profiles:
        profiles = [ApplicationProfile.from_dict(read_yaml(p)) for p in _yaml_files([str(p) for p in m.profiles])]
        doc = _match_doc(profiles, results)
        write_yaml(out / "evaluation.yaml", doc)
        summary["overall_suitable_lts"] = doc["overall_suitable_lts"]
    write_yaml(out / "summary.yaml", summary)
    return summary


def cmd_pipeline(a) -> int:
    m = RunManifest.load(a.manifest)
    summary = run_pipeline(m)
    print(f"wrote {m.output_dir} ({len(summary['lts'])} LTS)")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ltseval", description="Test and evaluation of localization and tracking systems.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scenario", help="build and validate a test case")
    s.add_argument("--kind", required=True, choices=[k.value for k in ScenarioKind if k is not ScenarioKind.CUSTOM])
    s.add_argument("--area", type=_area, default=(10.0, 10.0), help="width,depth in m")
    s.add_argument("--poses", type=int, default=63)
    s.add_argument("--speed", type=float, default=None, help="nominal speed in mm/s")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("simulate", help="run the synthetic testbed")
    s.add_argument("--testcase", required=True)
    s.add_argument("--error-model", required=True)
    s.add_argument("--seed", type=int, default=None, help="overrides the error model seed")
    s.add_argument("--gt-rate", type=float, default=100.0, help="GT sampling rate in Hz")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("evaluate", help="compute performance results for one experiment")
    s.add_argument("--experiment", required=True)
    s.add_argument("--quantiles", type=_floats, default=DEFAULT_QUANTILES)
    s.add_argument("--name", default="lts")
    s.add_argument("--latency-speed-threshold", type=float, default=None, help="mm/s")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("match", help="match performance results against application profiles")
    s.add_argument("--profile", nargs="+")
    s.add_argument("--results", nargs="+")
    s.add_argument("--reference", action="store_true", help="use the bundled three-application fixture set")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("report", help="export plot data and figures")
    s.add_argument("--results", required=True, help="evaluation directory or its performance.yaml")
    s.add_argument("--out", required=True)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("pipeline", help="scenario, simulate, evaluate, report and match from one manifest")
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParameterError, LtsEvalError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
