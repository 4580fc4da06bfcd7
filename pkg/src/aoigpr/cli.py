"""Command-line front end: ``aoigpr run | compare | sweep-m | sweep-alpha``.

Every command validates its whole configuration before touching the output
directory, stages results in a scratch directory next to it, and moves the
files into place only once everything has been computed.  A bad config or
flag exits with status 1 and writes nothing; a failure during simulation
exits with status 2.

Config keys can be overridden from the environment with
``AOIGPR_<SECTION>__<KEY>=value`` (for example ``AOIGPR_RUN__T=500``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import re
import shutil
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from . import __version__
from .config import (ConfigError, ScenarioConfig, config_to_dict, env_overrides, load_config,
                     loads_config)
from .engine import (POLICIES, pooled_metrics, run_simulation, write_ccdf_csv,
                     write_trace_csv)
from .kernels import BACKEND

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
BUILTIN = "builtin:"
_RANGE = re.compile(r"^(\d+)-(\d+)$")


class UsageError(Exception):
    """Bad command-line input (exit status 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- argument helpers ----------------------------------------------------------

def parse_int_list(text: str) -> list[int]:
    """``"0,1,2"``, ``"0-4"`` (inclusive range) or a mix of both."""
    out = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        m = _RANGE.match(part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise UsageError(f"empty range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            try:
                out.append(int(part))
            except ValueError:
                raise UsageError(f"not an integer: {part!r}") from None
    return out


def parse_float_list(text: str) -> list[float]:
    out = []
    for part in (p.strip() for p in text.split(",")):
        if part:
            try:
                out.append(float(part))
            except ValueError:
                raise UsageError(f"not a number: {part!r}") from None
    return out


def _candidates(text: str):
    if text == "exhaustive":
        return text
    try:
        value = int(text)
    except ValueError:
        raise UsageError(f"--candidates must be 'exhaustive' or an integer, got {text!r}")
    if value < 1:
        raise UsageError("--candidates must be >= 1")
    return value


def resolve_config_path(spec: str | None) -> Path | None:
    if spec is None:
        return None
    if spec.startswith(BUILTIN):
        name = spec[len(BUILTIN):]
        ref = resources.files("aoigpr") / "data" / f"{name}.toml"
        if not ref.is_file():
            raise UsageError(f"no bundled config named {name!r}")
        return Path(str(ref))
    return Path(spec)


def build_config(args) -> ScenarioConfig:
    """File (or reference defaults) + environment overrides + command-line flags."""
    overrides = env_overrides()
    path = resolve_config_path(args.config)
    cfg = loads_config("", overrides) if path is None else load_config(path, overrides)
    changes = {}
    if args.warmup is not None:
        if args.warmup < 0:
            raise UsageError("--warmup must be >= 0")
        changes["warmup"] = args.warmup
    if args.candidates is not None:
        changes["learning.candidates"] = _candidates(args.candidates)
    if args.slots is not None:
        if args.slots < 0:
            raise UsageError("--slots must be >= 0")
        changes["T"] = args.slots
    return cfg.with_(**changes).validate()


def _seeds(args, cfg: ScenarioConfig) -> list[int]:
    if args.seeds is None:
        return [cfg.seed]
    seeds = parse_int_list(args.seeds)
    if not seeds:
        raise UsageError("--seeds is empty")
    if len(set(seeds)) != len(seeds):
        raise UsageError("--seeds has duplicates")
    for s in seeds:
        if not 0 <= s < 2**64:
            raise UsageError(f"seed {s} is not a 64-bit unsigned integer")
    return seeds


# --- output staging --------------------------------------------------------------

def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def artifact_version() -> str:
    """``<version>+g<commit>`` when run from a git checkout, else the version."""
    here = Path(__file__).resolve().parent
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here,
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return __version__
    commit = rev.stdout.strip()
    return f"{__version__}+g{commit}" if rev.returncode == 0 and commit else __version__


class Staging:
    """Scratch directory whose files are moved into ``out`` on commit."""

    def __init__(self, out: Path):
        self.out = out
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(prefix=".aoigpr-", dir=self.out.parent))
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name

    def commit(self, manifest: dict) -> None:
        manifest["files"] = {name: sha256_of(self.dir / name) for name in sorted(self.files)}
        with open(self.dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.out.mkdir(parents=True, exist_ok=True)
        for name in self.files + ["manifest.json"]:
            shutil.move(str(self.dir / name), str(self.out / name))
        self.discard()

    def discard(self) -> None:
        shutil.rmtree(self.dir, ignore_errors=True)


def base_manifest(command: str, cfg: ScenarioConfig, seeds, policies, out: Path,
                  timings: dict) -> dict:
    return {
        "command": command,
        "version": artifact_version(),
        "kernel_backend": BACKEND,
        "config": config_to_dict(cfg),
        "seeds": list(seeds),
        "policies": list(policies),
        "output_dir": str(out),
        "timings_s": timings,
    }


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _clean(value):
    """NaN/inf -> None so metrics stay valid JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, list):
        return [_clean(v) for v in value]
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    return value


def metrics_dict(report) -> dict:
    d = report.to_dict()
    d["ccdf"] = [[x, p] for x, p in report.ccdf]
    return _clean(d)


def mean_se(values) -> tuple[float, float]:
    vals = [v for v in values if v is not None and math.isfinite(v)]
    if not vals:
        return float("nan"), float("nan")
    m = math.fsum(vals) / len(vals)
    if len(vals) < 2:
        return m, float("nan")
    var = math.fsum((v - m) ** 2 for v in vals) / (len(vals) - 1)
    return m, math.sqrt(var / len(vals))


def _num(v) -> str:
    return "" if v is None or not math.isfinite(v) else repr(float(v))


# --- simulation cells ----------------------------------------------------------------

def _cell(job):
    """One (config, policy, alpha_i) simulation; module-level so workers can pickle it."""
    cfg, policy, alpha_i, workers = job
    t0 = time.perf_counter()
    trace, report = run_simulation(cfg, policy, workers=workers, alpha_i=alpha_i)
    return trace, report, time.perf_counter() - t0


def run_cells(jobs, n_jobs: int):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_cell(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_cell, jobs))


# --- commands ----------------------------------------------------------------------------

def cmd_run(args, cfg: ScenarioConfig, seeds, out: Path) -> dict:
    policy = args.policy
    stage = Staging(out)
    try:
        jobs = [(cfg.with_(seed=s), policy, None, args.workers) for s in seeds]
        results = run_cells(jobs, args.jobs)
        traces = [r[0] for r in results]
        learning = policy != "baseline1"
        if len(seeds) == 1:
            pooled = results[0][1]
        else:
            pooled = pooled_metrics(traces, cfg.with_(seed=seeds[0]), learning)
        metrics = {"policy": policy, "seeds": seeds, "pooled": metrics_dict(pooled),
                   "per_seed": {str(s): metrics_dict(r[1]) for s, r in zip(seeds, results)}}
        _write_json(stage.path("metrics.json"), metrics)
        write_ccdf_csv(pooled, stage.path("ccdf.csv"))
        if args.trace:
            for s, tr in zip(seeds, traces):
                name = "trace.csv" if len(seeds) == 1 else f"trace_seed{s}.csv"
                write_trace_csv(tr, stage.path(name))
        timings = {f"seed{s}": r[2] for s, r in zip(seeds, results)}
        stage.commit(base_manifest("run", cfg, seeds, [policy], out, timings))
    except BaseException:
        stage.discard()
        raise
    print(f"{policy}: violation_prob={pooled.violation_prob:.6g} "
          f"avg_aoi_ms={pooled.avg_aoi_ms:.6g} samples={pooled.n_samples}")
    return metrics


def cmd_compare(args, cfg: ScenarioConfig, seeds, out: Path) -> dict:
    policies = ["proposed", "baseline2", "baseline1"]
    stage = Staging(out)
    try:
        jobs = [(cfg.with_(seed=s), pol, None, args.workers) for pol in policies for s in seeds]
        results = run_cells(jobs, args.jobs)
        by_policy: dict[str, list] = {p: [] for p in policies}
        timings = {}
        with open(stage.path("comparison.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", "seed", "violation_prob", "avg_aoi_ms"])
            for (c, pol, _, _), (trace, rep, dt) in zip(jobs, results):
                w.writerow([pol, c.seed, repr(rep.violation_prob), repr(rep.avg_aoi_ms)])
                by_policy[pol].append(trace)
                timings[f"{pol}/seed{c.seed}"] = dt
        pooled = {p: pooled_metrics(by_policy[p], cfg.with_(seed=seeds[0]), p != "baseline1")
                  for p in policies}
        v = {p: pooled[p].violation_prob for p in policies}
        summary = {
            "pooled": {p: {"violation_prob": v[p], "avg_aoi_ms": pooled[p].avg_aoi_ms,
                           "rmse_mean_ms": _clean(pooled[p].rmse_mean)} for p in policies},
            "checks": {
                "proposed_le_baseline1": v["proposed"] <= v["baseline1"],
                "proposed_le_baseline2": v["proposed"] <= v["baseline2"],
                "baseline2_le_baseline1": v["baseline2"] <= v["baseline1"],
            },
        }
        _write_json(stage.path("summary.json"), _clean(summary))
        for p in policies:
            write_ccdf_csv(pooled[p], stage.path(f"ccdf_{p}.csv"))
        stage.commit(base_manifest("compare", cfg, seeds, policies, out, timings))
    except BaseException:
        stage.discard()
        raise
    for p in policies:
        print(f"{p:9s} violation_prob={v[p]:.6g} avg_aoi_ms={pooled[p].avg_aoi_ms:.6g}")
    ok = summary["checks"]["proposed_le_baseline1"]
    print(f"ordering proposed <= baseline1: {'yes' if ok else 'NO'}")
    return summary


def _sweep(args, cfg, seeds, out, *, command, key, values, make_job, policy_label):
    stage = Staging(out)
    try:
        cells = [(val, s) for val in values for s in seeds]
        jobs = [make_job(val, s) for val, s in cells]
        results = run_cells(jobs, args.jobs)
        rows, timings = [], {}
        for (val, s), (trace, rep, dt) in zip(cells, results):
            rows.append((val, s, rep.rmse_mean, rep.violation_prob, rep.avg_aoi_ms))
            timings[f"{key}={val}/seed{s}"] = dt
        with open(stage.path(f"{command.replace('-', '_')}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([key, "seed", "rmse_ms", "violation_prob", "avg_aoi_ms"])
            for val, s, rm, vp, av in rows:
                w.writerow([val, s, _num(rm), repr(vp), repr(av)])
        summary_rows = []
        with open(stage.path(f"{command.replace('-', '_')}_summary.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([key, "n_seeds", "rmse_mean_ms", "rmse_se_ms", "violation_mean",
                        "violation_se", "avg_aoi_mean_ms", "avg_aoi_se_ms"])
            for val in values:
                sel = [r for r in rows if r[0] == val]
                rm = mean_se([r[2] for r in sel])
                vp = mean_se([r[3] for r in sel])
                av = mean_se([r[4] for r in sel])
                summary_rows.append((val, rm, vp, av))
                w.writerow([val, len(sel), _num(rm[0]), _num(rm[1]), _num(vp[0]), _num(vp[1]),
                            _num(av[0]), _num(av[1])])
        stage.commit(base_manifest(command, cfg, seeds, [policy_label], out, timings))
    except BaseException:
        stage.discard()
        raise
    for val, rm, vp, av in summary_rows:
        print(f"{key}={val}: rmse_ms={rm[0]:.6g} violation={vp[0]:.6g} "
              f"(se {vp[1]:.3g}) avg_aoi_ms={av[0]:.6g}")
    return summary_rows


def prepare_sweep_m(args, cfg: ScenarioConfig) -> None:
    if args.m_list is None:
        raise UsageError("sweep-m needs --m-list")
    args.m_values = parse_int_list(args.m_list)
    if not args.m_values:
        raise UsageError("--m-list is empty")
    if any(m < 1 for m in args.m_values):
        raise UsageError("--m-list entries must be >= 1")
    for m in args.m_values:
        cfg.with_(M=m).validate()


def prepare_sweep_alpha(args, cfg: ScenarioConfig) -> None:
    if args.alpha_i_list is None:
        raise UsageError("sweep-alpha needs --alpha-i-list")
    args.alphas = parse_float_list(args.alpha_i_list)
    if not args.alphas:
        raise UsageError("--alpha-i-list is empty")
    if any(not (a >= 0 and math.isfinite(a)) for a in args.alphas):
        raise UsageError("--alpha-i-list entries must be finite and >= 0")


def cmd_sweep_m(args, cfg: ScenarioConfig, seeds, out: Path):
    policy = args.policy or "baseline2"
    return _sweep(args, cfg, seeds, out, command="sweep-m", key="M", values=args.m_values,
                  make_job=lambda m, s: (cfg.with_(M=m, seed=s), policy, None, args.workers),
                  policy_label=policy)


def cmd_sweep_alpha(args, cfg: ScenarioConfig, seeds, out: Path):
    return _sweep(args, cfg, seeds, out, command="sweep-alpha", key="alpha_i",
                  values=args.alphas,
                  make_job=lambda a, s: (cfg.with_(alpha_i=a, seed=s), "proposed", None,
                                         args.workers),
                  policy_label="proposed")


PREPARE = {"sweep-m": prepare_sweep_m, "sweep-alpha": prepare_sweep_alpha}

COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "sweep-m": cmd_sweep_m,
    "sweep-alpha": cmd_sweep_alpha,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aoigpr", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"aoigpr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="TOML scenario file, or builtin:table1 / builtin:desk "
                                        "(default: reference scenario)")
        p.add_argument("--seeds", help="comma list and/or inclusive ranges, e.g. 0-4 "
                                       "(default: the config's run.seed)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--warmup", type=int, help="slots excluded from metrics")
        p.add_argument("--candidates", help="'exhaustive' or a cap S on scored actions")
        p.add_argument("--slots", type=int, help="override run.T")
        p.add_argument("--workers", type=int, default=1,
                       help="threads for the per-slot decision phase")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for independent (config, seed) cells")

    p = sub.add_parser("run", help="simulate one policy")
    common(p)
    p.add_argument("--policy", choices=POLICIES, default="proposed")
    p.add_argument("--trace", action="store_true", help="also write the per-slot trace CSV")

    p = sub.add_parser("compare", help="all three policies on the same seeds")
    common(p)

    p = sub.add_parser("sweep-m", help="dataset size sweep")
    common(p)
    p.add_argument("--m-list", help="comma list of window sizes M")
    p.add_argument("--policy", choices=[x for x in POLICIES if x != "baseline1"],
                   help="learning policy (default baseline2)")

    p = sub.add_parser("sweep-alpha", help="exploration weight sweep")
    common(p)
    p.add_argument("--alpha-i-list", help="comma list of alpha_i values")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.workers < 1 or args.jobs < 1:
            raise UsageError("--workers and --jobs must be >= 1")
        cfg = build_config(args)
        seeds = _seeds(args, cfg)
        for s in seeds:
            cfg.with_(seed=s).validate()
        if args.command in PREPARE:
            PREPARE[args.command](args, cfg)
        out = Path(args.out)
        if out.exists() and not out.is_dir():
            raise UsageError(f"--out {out} exists and is not a directory")
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"aoigpr: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args, cfg, seeds, out)
    except KeyboardInterrupt:
        print("aoigpr: interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any simulation failure maps to exit 2
        print(f"aoigpr: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
