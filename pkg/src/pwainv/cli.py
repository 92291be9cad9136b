"""Command-line front end.

Exit codes: 0 success, 2 usage error, and one code per library error
category (see :mod:`pwainv.errors`).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import PwaError
from .io import load_model, model_to_dict, read_trajectory, write_table, write_trajectory
from .pwa import Trajectory, simulate

COMMANDS = ("simulate", "invert", "stable-invert", "ilc", "bench-printhead", "check")
DEFAULT_SEED = 0


class UsageError(Exception):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    command: str
    model_path: Path | None = None
    reference_path: Path | None = None
    input_path: Path | None = None
    output_dir: Path | None = None
    seed: int = DEFAULT_SEED
    degree: str = "auto"
    lead_pad: int = 0
    trail_pad: int = 0
    selection_cost: str = "state-jump"
    scheme: str = "ililc"
    gain: float | None = None
    trials: int = 9
    dump_trajectories: bool = False
    a6_tol: float = 1e-10
    tolerances: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)


def _parser():
    p = argparse.ArgumentParser(prog="pwainv", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        sp.add_argument("--config", type=Path, help="JSON file with default option values")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", dest="output_dir", type=Path)
        if model:
            sp.add_argument("--model", dest="model_path", type=Path)

    sp = sub.add_parser("check", help="report modelling assumptions as JSON")
    common(sp)
    sp.add_argument("--a6-tol", type=float)

    sp = sub.add_parser("simulate", help="simulate a model on an input CSV")
    common(sp)
    sp.add_argument("--input", dest="input_path", type=Path)

    sp = sub.add_parser("invert", help="build the explicit inverse (and optionally run it)")
    common(sp)
    sp.add_argument("--degree", choices=["0", "1", "2", "auto"])
    sp.add_argument("--ref", dest="reference_path", type=Path)

    sp = sub.add_parser("stable-invert", help="finite-horizon stable inversion of a reference")
    common(sp)
    sp.add_argument("--ref", dest="reference_path", type=Path)
    sp.add_argument("--lead-pad", type=int)
    sp.add_argument("--trail-pad", type=int)
    sp.add_argument("--selection-cost", choices=["state-jump", "input-norm", "input-jump"])

    sp = sub.add_parser("ilc", help="run one ILC scheme on the printhead benchmark")
    common(sp, model=False)
    sp.add_argument("--scheme", choices=["ililc", "gradient", "ptype"])
    sp.add_argument("--trials", type=int)
    sp.add_argument("--gain", type=float)
    sp.add_argument("--dump-trajectories", action="store_true", default=None)

    sp = sub.add_parser("bench-printhead", help="run the five-scenario printhead benchmark")
    common(sp, model=False)
    return p


def parse_config(argv=None) -> RunConfig:
    """Parse flags, merge them over an optional ``--config`` JSON file and validate."""
    ns = vars(_parser().parse_args(argv))
    command = ns.pop("command")
    file_values = {}
    cfg_path = ns.pop("config", None)
    if cfg_path is not None:
        if not cfg_path.exists():
            raise UsageError("config", f"file {cfg_path} does not exist")
        try:
            file_values = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError("config", f"invalid JSON ({exc})") from None
        if not isinstance(file_values, dict):
            raise UsageError("config", "top level must be a JSON object")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    merged = {}
    for key, value in file_values.items():
        key = key.replace("-", "_")
        if key in ("model", "ref", "reference", "input", "out"):
            key = {"model": "model_path", "ref": "reference_path", "reference": "reference_path",
                   "input": "input_path", "out": "output_dir"}[key]
        if key in names and key != "command":
            merged[key] = value
        elif command in ("ilc", "bench-printhead"):
            merged.setdefault("bench", {})[key] = value
        else:
            raise UsageError(key, "unknown configuration key")
    for key, value in ns.items():
        if value is not None:
            merged[key] = value
    if "seed" not in merged and os.environ.get("PWAINV_SEED"):
        try:
            merged["seed"] = int(os.environ["PWAINV_SEED"])
        except ValueError:
            raise UsageError("seed", "PWAINV_SEED must be an integer") from None
    for key in ("model_path", "reference_path", "input_path", "output_dir"):
        if key in merged and merged[key] is not None:
            merged[key] = Path(merged[key])
    cfg = RunConfig(command=command, **merged)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    needs = {
        "check": ["model_path"],
        "simulate": ["model_path", "input_path", "output_dir"],
        "invert": ["model_path"],
        "stable-invert": ["model_path", "reference_path", "output_dir"],
        "ilc": ["output_dir"],
        "bench-printhead": ["output_dir"],
    }[cfg.command]
    flag = {"model_path": "--model", "reference_path": "--ref", "input_path": "--input", "output_dir": "--out"}
    for name in needs:
        value = getattr(cfg, name)
        if value is None:
            raise UsageError(flag[name], "is required")
        if name != "output_dir" and not Path(value).exists():
            raise UsageError(flag[name], f"file {value} does not exist")
    if cfg.reference_path is not None and not cfg.reference_path.exists():
        raise UsageError("--ref", f"file {cfg.reference_path} does not exist")
    if cfg.lead_pad < 0 or cfg.trail_pad < 0:
        raise UsageError("--lead-pad/--trail-pad", "must be non-negative")
    if cfg.trials < 1:
        raise UsageError("--trials", "must be at least 1")
    if cfg.scheme not in ("ililc", "gradient", "ptype"):
        raise UsageError("--scheme", f"unknown scheme {cfg.scheme!r}")
    if str(cfg.degree) not in ("0", "1", "2", "auto"):
        raise UsageError("--degree", f"must be 0, 1, 2 or auto, not {cfg.degree!r}")


# ---------------------------------------------------------------------------
# Commands


def _write_meta(out: Path, cfg: RunConfig, extra=None):
    meta = {
        "command": cfg.command,
        "seed": cfg.seed,
        "pwainv": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "tolerances": cfg.tolerances,
    }
    meta.update(extra or {})
    (out / "meta.json").write_text(json.dumps(meta, indent=1, default=str))


def _cmd_check(cfg):
    from .inversion import check_assumptions

    report = check_assumptions(load_model(cfg.model_path), a6_tol=cfg.a6_tol).to_dict()
    print(json.dumps(report, indent=1))
    return 0


def _cmd_simulate(cfg):
    model = load_model(cfg.model_path)
    u = read_trajectory(cfg.input_path)
    res = simulate(model, np.zeros(model.n_x), u)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(out / "y.csv", res.y)
    write_trajectory(out / "x.csv", res.x)
    write_trajectory(out / "delta.csv", res.delta)
    _write_meta(out, cfg)
    return 0


def _preview(ref: Trajectory, mu):
    return Trajectory(ref.samples[mu:, 0], ref.start_k, "r")


def _cmd_invert(cfg):
    from .inversion import invert

    model = load_model(cfg.model_path)
    inv = invert(model, cfg.degree)
    doc = model_to_dict(inv)
    if cfg.output_dir is None:
        print(json.dumps(doc))
        return 0
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "inverse.json").write_text(json.dumps(doc, indent=1))
    if cfg.reference_path is not None:
        ref = read_trajectory(cfg.reference_path)
        res = inv.simulate(_preview(ref, inv.mu_tilde))
        write_trajectory(out / "u.csv", Trajectory(res.y.samples, res.y.start_k, "u"))
        write_trajectory(out / "x.csv", res.x)
        write_trajectory(out / "delta.csv", res.delta)
    _write_meta(out, cfg, {"mu_tilde": inv.mu_tilde})
    return 0


def _cmd_stable_invert(cfg):
    from .inversion import invert
    from .pwa import ExogenousSchedule, PwaModel
    from .stable import StableInversionConfig, compute_decoupling, pad_reference, stable_inverse

    model = load_model(cfg.model_path)
    if isinstance(model.schedule, ExogenousSchedule) and (cfg.lead_pad or cfg.trail_pad):
        # pads need the closed loop defined before and after the bound signal
        model = PwaModel(model.partition, model.schedule.held(cfg.lead_pad, cfg.trail_pad),
                         model.declared_mu_c, model.name)
    inv = invert(model, "auto")
    scfg = StableInversionConfig(cfg.lead_pad, cfg.trail_pad, selection_cost=cfg.selection_cost,
                                 **{k: v for k, v in cfg.tolerances.items()
                                    if k in ("decoupling_tol", "hyperbolicity_margin", "switching_tol")})
    ref = read_trajectory(cfg.reference_path)
    r = _preview(ref, inv.mu_tilde)
    if scfg.lead_pad or scfg.trail_pad:
        r = pad_reference(r, scfg.lead_pad, scfg.trail_pad, inv)
    dec = compute_decoupling(inv, scfg.anchor_q, scfg.anchor_k, scfg.decoupling_tol, scfg.hyperbolicity_margin)
    res = stable_inverse(inv, r, scfg, dec)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(out / "u.csv", res.u)
    write_trajectory(out / "x.csv", res.x)
    write_trajectory(out / "delta.csv", res.delta)
    (out / "report.json").write_text(json.dumps(res.report, indent=1, default=float))
    _write_meta(out, cfg, {"mu_tilde": inv.mu_tilde})
    return 0


def _bench_config(cfg: RunConfig):
    from .printhead import BenchConfig, ReferenceConfig

    values = dict(cfg.bench)
    if "reference" in values and isinstance(values["reference"], dict):
        values["reference"] = ReferenceConfig(**values["reference"])
    for key in ("ililc_candidates", "gradient_candidates", "ptype_candidates"):
        if key in values:
            values[key] = tuple(values[key])
    allowed = {f.name for f in dataclasses.fields(BenchConfig)}
    unknown = set(values) - allowed
    if unknown:
        raise UsageError("bench", f"unknown benchmark keys {sorted(unknown)}")
    values["seed"] = cfg.seed
    return BenchConfig(**values)


def _cmd_ilc(cfg):
    from .printhead import Benchmark, tune_gain_line_search

    bench = Benchmark(_bench_config(cfg))
    gain = cfg.gain
    if gain is None:
        cands = getattr(bench.cfg, f"{cfg.scheme}_candidates")
        gain, _ = tune_gain_line_search(bench, cfg.scheme, cands, cfg.trials)
    hist = bench.run_scheme(cfg.scheme, gain, cfg.trials)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "trials.csv", ["trial", "nrmse", "peak"], [(h.trial, h.nrmse, h.peak) for h in hist])
    if cfg.dump_trajectories:
        for h in hist:
            write_trajectory(out / f"u_trial{h.trial}.csv", Trajectory(h.u, 0, "u"))
            write_trajectory(out / f"y_trial{h.trial}.csv", Trajectory(h.y, bench.mu, "y"))
    _write_meta(out, cfg, {"scheme": cfg.scheme, "gain": gain, "trials": cfg.trials})
    return 0


def _cmd_bench(cfg):
    from .printhead import Benchmark, run_benchmark

    bcfg = _bench_config(cfg)
    bench = Benchmark(bcfg)
    res = run_benchmark(bcfg, bench)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "table.csv", ["scenario", "nrmse", "peak_error"],
                [(row["scenario"], row["nrmse"], row["peak"]) for row in res.table])
    rows = [(scheme, i, n, p) for scheme, curve in res.trials.items() for i, (n, p) in enumerate(curve)]
    write_table(out / "trials.csv", ["scheme", "trial", "nrmse", "peak"], rows)
    for scenario, traj in res.trajectories.items():
        write_trajectory(out / f"{scenario}_u.csv", Trajectory(traj["u"], 0, "u"))
        write_trajectory(out / f"{scenario}_y.csv", Trajectory(traj["y"], bench.mu, "y"))
    _write_meta(out, cfg, {"gains": res.gains, "self_inversion": res.self_inversion, "timings": res.timings})
    return 0


HANDLERS = {
    "check": _cmd_check,
    "simulate": _cmd_simulate,
    "invert": _cmd_invert,
    "stable-invert": _cmd_stable_invert,
    "ilc": _cmd_ilc,
    "bench-printhead": _cmd_bench,
}


def dispatch(cfg: RunConfig) -> int:
    """Run a parsed command; library errors map to their exit codes."""
    try:
        return HANDLERS[cfg.command](cfg)
    except PwaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.assumption:
            print(f"assumption implicated: {exc.assumption}", file=sys.stderr)
        if exc.details:
            print(json.dumps(exc.details, default=str), file=sys.stderr)
        return exc.exit_code
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
