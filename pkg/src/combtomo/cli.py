"""Command-line driver: generate -> simulate -> reconstruct -> evaluate, plus suite and benchmark.

Examples:
  combtomo generate --config run.json --seed 3 --out runs/a
  combtomo simulate --model runs/a/model.json --out runs/a
  combtomo reconstruct --dataset runs/a/dataset.jsonl --nominal runs/a/nominal.json --init prior --out runs/a/full
  combtomo evaluate --truth runs/a/model.json --model runs/a/full/model_out.json --out runs/a/full
"""
from __future__ import annotations

import os

# Linear algebra runs single-threaded so results do not depend on the machine;
# --threads controls the number of independent work items evaluated at once.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import dataclasses  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from concurrent.futures import ProcessPoolExecutor  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .cis import (CISSet, ProfileError, UnsupportedDimensionError, comb_factor_indices,  # noqa: E402
                  ptm_differences, ptm_of_branch)
from .config import ConfigError, RunConfig, load_config  # noqa: E402
from .experiments import initial_point, make_models, simulate  # noqa: E402
from .figures import bar_chart_svg, heatmap_svg, write_svg  # noqa: E402
from .persist import (SchemaError, config_hash, dumps, read_dataset, read_model, sha256,  # noqa: E402
                      write_csv, write_dataset, write_model)
from .stiefel import NumericError  # noqa: E402
from .tensor import DimensionError  # noqa: E402
from .tomography import Evaluator, benchmark_iteration, reconstruct  # noqa: E402

log = logging.getLogger("combtomo")

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5


class ValidationError(ValueError):
    pass


class NumericFailure(RuntimeError):
    pass


# --- helpers ------------------------------------------------------------------

def _seed(args, cfg: RunConfig) -> int:
    return cfg.seed if args.seed is None else args.seed


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _path(flag, fallback, name):
    p = flag or fallback
    if p is None:
        raise ConfigError(f"missing input: pass --{name} or set paths.{name}")
    return p


def write_manifest(out: Path, command: str, cfg: RunConfig, seed: int, inputs, outputs, started: float):
    doc = {
        "command": command,
        "version": __version__,
        "config_sha256": config_hash(cfg.to_dict()),
        "seed": seed,
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(p): sha256(p) for p in outputs},
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def parse_init(spec: str) -> tuple[str, float | None]:
    kind, _, arg = spec.partition(":")
    kind = kind.replace("-", "_")
    if kind not in ("random", "prior", "truth_perturbed"):
        raise ConfigError(f"unknown init {spec!r}")
    if kind == "truth_perturbed":
        try:
            return kind, float(arg) if arg else 0.05
        except ValueError as exc:
            raise ConfigError(f"bad perturbation angle in {spec!r}") from exc
    if arg:
        raise ConfigError(f"init {kind!r} takes no argument")
    return kind, None


def _trace_rows(result):
    return [(k, loss, g, w) for k, (loss, g, w) in
            enumerate(zip(result.loss_trace, result.grad_trace, result.time_trace))]


def _check_dataset(profile, data):
    try:
        return Evaluator(profile, data)
    except IndexError as exc:
        raise ValidationError(f"dataset does not match the model structure: {exc}") from exc


# --- pipeline stages ------------------------------------------------------------

def run_reconstruction(cfg: RunConfig, data, profile, point, mode: str, opt=None):
    opt = opt or cfg.optimizer
    ev = _check_dataset(profile, data)
    if mode == "iqct":
        return reconstruct(data, profile, point, opt, active=comb_factor_indices(profile), evaluator=ev)
    return reconstruct(data, profile, point, opt, evaluator=ev)


def ptm_report_rows(truth: CISSet, model: CISSet):
    try:
        rows = ptm_differences(model.instruments, truth.instruments)
    except (DimensionError, ValueError, IndexError) as exc:
        raise ValidationError(f"model structures differ: {exc}") from exc
    fros = [r[3] for r in rows]
    summary = float(np.mean(fros)) if fros else 0.0
    return rows, summary


# --- commands -----------------------------------------------------------------

def cmd_generate(args, cfg):
    started = time.time()
    seed = _seed(args, cfg)
    out = _out(args)
    nominal, truth = make_models(cfg, seed)
    meta = {"seed": seed, "perturbation": cfg.to_dict()["experiment"]["perturbation"]}
    files = [write_model(out / "model.json", truth, meta),
             write_model(out / "nominal.json", nominal, {"seed": seed})]
    write_manifest(out, "generate", cfg, seed, [], files, started)
    print(out / "model.json")


def cmd_simulate(args, cfg):
    started = time.time()
    seed = _seed(args, cfg)
    out = _out(args)
    model_path = _path(args.model, cfg.paths.model, "model")
    model = read_model(model_path)
    data = simulate(cfg, model, seed, args.threads)
    path = write_dataset(out / "dataset.jsonl", data)
    write_manifest(out, "simulate", cfg, seed, [model_path], [path], started)
    print(path)


def cmd_reconstruct(args, cfg):
    started = time.time()
    seed = _seed(args, cfg)
    out = _out(args)
    data_path = _path(args.dataset, cfg.paths.dataset, "dataset")
    data = read_dataset(data_path)
    inputs = [data_path]
    nominal = truth = None
    if args.nominal or cfg.paths.nominal:
        inputs.append(args.nominal or cfg.paths.nominal)
        nominal = read_model(inputs[-1])
    if args.truth or cfg.paths.truth:
        inputs.append(args.truth or cfg.paths.truth)
        truth = read_model(inputs[-1])
    ref = nominal or truth
    profile = ref.profile if ref is not None else cfg.profile.build()
    kind, angle = parse_init(args.init)
    point = initial_point(kind, angle, profile, seed, nominal, truth, args.mode)
    result = run_reconstruction(cfg, data, profile, point, args.mode)
    files = [write_model(out / "model_out.json", result.cis,
                         {"mode": args.mode, "init": args.init, "seed": seed, "reason": result.reason,
                          "iterations": result.iterations}),
             write_csv(out / "trace.csv", ("iter", "loss", "grad_norm", "wall_ms"), _trace_rows(result))]
    write_manifest(out, "reconstruct", cfg, seed, inputs, files, started)
    log.info("%s after %d iterations: loss %.3e grad %.3e", result.reason, result.iterations,
             result.final_loss, result.final_grad_norm)
    print(f"{result.reason} iterations={result.iterations} loss={result.final_loss:.3e} "
          f"grad_norm={result.final_grad_norm:.3e}")
    if result.reason == "numeric_failure":
        raise NumericFailure(result.detail)


def cmd_evaluate(args, cfg):
    started = time.time()
    seed = _seed(args, cfg)
    out = _out(args)
    truth_path = _path(args.truth, cfg.paths.truth, "truth")
    model_path = _path(args.model, cfg.paths.model, "model")
    truth, model = read_model(truth_path), read_model(model_path)
    rows, summary = ptm_report_rows(truth, model)
    files = [write_csv(out / "report.csv", ("slot", "instrument", "branch", "fro_diff"),
                       [r[:3] + (float(r[3]),) for r in rows] + [("summary", "all", "all", summary)])]
    inputs = [truth_path, model_path]
    losses = {}
    data_path = args.dataset or cfg.paths.dataset
    if data_path:
        inputs.append(data_path)
        data = read_dataset(data_path)
        for name, cis in (("truth", truth), ("model", model)):
            losses[name] = _check_dataset(cis.profile, data).evaluate(cis.to_point(), False)[0].total
    files.append(out / "evaluation.json")
    (out / "evaluation.json").write_text(dumps({"delta_ptm": summary, "losses": losses}))
    pairs = [(t, v) for t, slot in enumerate(truth.instruments) for v in range(len(slot))]
    for t, v in pairs[:cfg.evaluate.heatmaps]:
        panels = []
        for x, (wt, wm) in enumerate(zip(truth.instruments[t][v].branches, model.instruments[t][v].branches)):
            try:
                pt, pm = ptm_of_branch(wt, truth.profile.d_in[t + 1]), ptm_of_branch(wm, model.profile.d_in[t + 1])
            except UnsupportedDimensionError:
                break
            panels += [(f"branch {x} truth", pt), (f"branch {x} model", pm), (f"branch {x} diff", pm - pt)]
        if panels:
            files.append(write_svg(out / f"ptm_t{t}_v{v}.svg", heatmap_svg(panels)))
    write_manifest(out, "evaluate", cfg, seed, inputs, files, started)
    print(f"delta_ptm={summary:.6g}")


SUMMARY_HEADER = ("ancillas", "n_steps", "angle", "seed", "method", "final_loss", "grad_norm",
                  "iterations", "reason", "delta_ptm")


def _cell_name(ancillas, n_steps, angle, seed):
    return f"a{ancillas}_N{n_steps}_ang{angle:g}_s{seed}"


def run_cell(cfg: RunConfig, ancillas: str, n_steps: int, angle: float, seed: int, out: str) -> list:
    """One suite cell: ground truth, exact data and one run per method from a shared start."""
    cell = Path(out) / _cell_name(ancillas, n_steps, angle, seed)
    cell.mkdir(parents=True, exist_ok=True)
    nominal, truth = make_models(cfg, seed, n_steps, ancillas, angle)
    write_model(cell / "model.json", truth, {"seed": seed, "angle": angle})
    write_model(cell / "nominal.json", nominal, {"seed": seed})
    data = simulate(cfg, truth, seed)
    write_dataset(cell / "dataset.jsonl", data)
    profile = truth.profile
    kind, init_angle = parse_init(cfg.suite.init)
    opt = dataclasses.replace(cfg.optimizer, max_iterations=cfg.suite.max_iterations)
    rows = []
    for method in cfg.suite.methods:
        if method not in ("full", "iqct"):
            raise ConfigError(f"unknown method {method!r}")
        point = initial_point(kind, init_angle, profile, seed + 1, nominal, truth, method)
        result = run_reconstruction(cfg, data, profile, point, method, opt)
        mdir = cell / method
        mdir.mkdir(exist_ok=True)
        write_model(mdir / "model_out.json", result.cis, {"mode": method, "reason": result.reason})
        write_csv(mdir / "trace.csv", ("iter", "loss", "grad_norm", "wall_ms"), _trace_rows(result))
        _, dptm = ptm_report_rows(truth, result.cis)
        rows.append((ancillas, n_steps, float(angle), seed, method, float(result.final_loss),
                     float(result.final_grad_norm), result.iterations, result.reason, float(dptm)))
    return rows


def _cell_job(job):
    cfg, ancillas, n_steps, angle, seed, out = job
    try:
        return run_cell(cfg, ancillas, n_steps, angle, seed, out)
    except (ConfigError, ValidationError, ProfileError, SchemaError) as exc:
        return [(ancillas, n_steps, float(angle), seed, m, float("nan"), float("nan"), 0,
                 f"failed: {exc}".replace("\n", " "), float("nan")) for m in cfg.suite.methods]


def cmd_suite(args, cfg):
    started = time.time()
    seed = _seed(args, cfg)
    out = _out(args)
    s = cfg.suite
    jobs = [(cfg, a, n, ang, seed + sd, str(out)) for a in s.ancillas for n in s.n_steps
            for ang in s.angles for sd in s.seeds]
    if args.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.threads) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    rows = [r for cell in results for r in cell]
    files = [write_csv(out / "summary.csv", SUMMARY_HEADER,
                       [r[:5] + tuple(_csv_float(v) for v in r[5:7]) + r[7:9] + (_csv_float(r[9]),)
                        for r in rows])]
    groups = [f"{a} N={n} ang={ang:g}" for a in s.ancillas for n in s.n_steps for ang in s.angles]
    if groups and s.methods:
        means = np.full((len(groups), len(s.methods)), np.nan)
        for g, (a, n, ang) in enumerate((a, n, ang) for a in s.ancillas for n in s.n_steps for ang in s.angles):
            for k, m in enumerate(s.methods):
                vals = [r[5] for r in rows if (r[0], r[1], r[2], r[4]) == (a, n, float(ang), m)]
                means[g, k] = np.mean(vals) if vals else np.nan
        files.append(write_svg(out / "fig2a.svg", bar_chart_svg(groups, list(s.methods), means,
                                                                "mean final loss")))
    write_manifest(out, "suite", cfg, seed, [], files, started)
    print(out / "summary.csv")


def _csv_float(v):
    return "nan" if not np.isfinite(v) else float(v)


def cmd_benchmark(args, cfg):
    started = time.time()
    seed = _seed(args, cfg)
    out = _out(args)
    b = cfg.benchmark
    profiles = [cfg.profile.build(b.n_steps, a) for a in b.ancillas]
    rows = benchmark_iteration(profiles, b.repetitions, cfg.experiment.scheme(seed), seed)
    header = ("ancillas", "n_steps", "records", "repetitions", "mean_ms", "std_ms")
    files = [write_csv(out / "benchmark.csv", header, [tuple(r[h] for h in header) for r in rows])]
    write_manifest(out, "benchmark", cfg, seed, [], files, started)
    print(out / "benchmark.csv")


COMMANDS = {"generate": cmd_generate, "simulate": cmd_simulate, "reconstruct": cmd_reconstruct,
            "evaluate": cmd_evaluate, "suite": cmd_suite, "benchmark": cmd_benchmark}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="combtomo", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="parallel workers")
        if name in ("simulate", "evaluate"):
            p.add_argument("--model", help="model JSON")
        if name in ("reconstruct", "evaluate"):
            p.add_argument("--dataset", help="dataset JSON Lines")
            p.add_argument("--truth", help="ground-truth model JSON")
        if name == "reconstruct":
            p.add_argument("--nominal", help="nominal (design) model JSON")
            p.add_argument("--mode", choices=("full", "iqct"), default="full")
            p.add_argument("--init", default="random", help="random | prior | truth-perturbed:ANGLE")
    return parser


def _fail(code: str, status: int, detail) -> int:
    print(f"combtomo: error={code} " + str(detail).replace("\n", " "), file=sys.stderr)
    return status


def main(argv=None) -> int:
    level = os.environ.get("COMBTOMO_LOG", "WARNING").upper()
    logging.basicConfig(level=level if isinstance(getattr(logging, level, None), int) else "WARNING",
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        return _fail("config", EXIT_CONFIG, "--threads must be >= 1")
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except (ValidationError, SchemaError, ProfileError, DimensionError, UnsupportedDimensionError) as exc:
        return _fail("validation", EXIT_VALIDATION, exc)
    except (NumericFailure, NumericError) as exc:
        return _fail("numeric", EXIT_NUMERIC, exc)
    except OSError as exc:
        return _fail("io", EXIT_IO, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
