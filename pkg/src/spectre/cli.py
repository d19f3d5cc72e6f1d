"""Command-line front end.

Verbs:

* ``simulate``    — build a phantom, simulate counts, write inputs
* ``reconstruct`` — full pipeline: simulate, solve, write results
* ``compare``     — run several method configs against one shared simulation
* ``evaluate``    — per-bin squared relative errors between two ``.t3d`` files

Run configs are JSON documents validated against a closed schema: unknown
keys anywhere are rejected.  Exit codes: 0 success, 2 bad config or input,
3 numeric failure during reconstruction.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import __version__
from .projector import build_system_matrix, parallel_geometry
from .solver import METHODS, SolverConfig, reconstruct, relative_l2_error
from .spectral_model import (
    build_phantom1,
    build_phantom2,
    energy_grid,
    pwls_transform,
    simulate_counts,
)
from .tensor3 import read_t3d, write_t3d

_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_NONNEG_NUM = {"type": "number", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "phantom": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "type": {"enum": ["phantom1", "phantom2"]},
                "dims": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 2},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "energies": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "lo": _POS_NUM,
                        "hi": _POS_NUM,
                        "bins": _POS_INT,
                    },
                },
                "pixel_size_cm": _POS_NUM,
                "seed": {"type": "integer", "minimum": 0},
                "texture_amplitude": _NONNEG_NUM,
                "ramp_amplitude": _NONNEG_NUM,
            },
        },
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "angles": _POS_INT,
                "n_det": _POS_INT,
            },
        },
        "spectrum": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "photons": _POS_NUM,
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "method": {"enum": list(METHODS)},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eta": _POS_NUM,
                "gamma_unfold": {
                    "type": "array",
                    "items": _NONNEG_NUM,
                    "minItems": 3,
                    "maxItems": 3,
                },
                "gamma_tsvd": _NONNEG_NUM,
                "alpha_hi": _NONNEG_NUM,
                "alpha_lo": _NONNEG_NUM,
                "alpha_3d": _NONNEG_NUM,
                "outer_iters": _POS_INT,
                "fista_iters": _POS_INT,
                "tv_prox_iters": _POS_INT,
                "power_iters": _POS_INT,
                "lipschitz": {
                    "anyOf": [_POS_NUM, {"type": "null"}],
                },
                "init": {"enum": ["zero", "fbp"]},
                "clip_negative": {"type": "boolean"},
                "early_stop_tol": {
                    "anyOf": [_POS_NUM, {"type": "null"}],
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "previews": {"type": "boolean"},
            },
        },
    },
}

DEFAULTS = {
    "phantom": {
        "type": "phantom1",
        "dims": [128, 128],
        "energies": {"lo": 25.0, "hi": 85.0, "bins": 12},
        "pixel_size_cm": 0.13,
        "seed": 0,
        "texture_amplitude": 0.05,
        "ramp_amplitude": 0.02,
    },
    "geometry": {"angles": 16},
    "spectrum": {"photons": 1.0e6, "seed": 0},
    "method": "TNN1+TV",
    "solver": {},
    "output": {"previews": True},
}


class ConfigError(ValueError):
    pass


def _merge_defaults(base, over):
    out = {}
    for key, val in base.items():
        if isinstance(val, dict):
            out[key] = _merge_defaults(val, over.get(key, {}))
        else:
            out[key] = over.get(key, val)
    for key in over:
        if key not in base:
            out[key] = over[key]
    return out


def load_config(path) -> dict:
    """Read, validate, and default-fill a JSON run config."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    errors = sorted(
        Draft202012Validator(CONFIG_SCHEMA).iter_errors(raw),
        key=lambda e: list(e.absolute_path),
    )
    if errors:
        where = "/".join(str(p) for p in errors[0].absolute_path) or "<root>"
        raise ConfigError(f"{path}: at {where}: {errors[0].message}")
    return _merge_defaults(DEFAULTS, raw)


def _resolve_threads(arg_threads) -> int:
    if arg_threads is not None:
        return arg_threads
    env = os.environ.get("SPECTRE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"SPECTRE_THREADS={env!r} is not an integer") from exc
        if n < 0:
            raise ConfigError("SPECTRE_THREADS must be >= 0")
        return n
    return 1


def _build_phantom(cfg):
    ph_cfg = cfg["phantom"]
    n1, n2 = ph_cfg["dims"]
    en = ph_cfg["energies"]
    energies = energy_grid(en["lo"], en["hi"], en["bins"])
    if ph_cfg["type"] == "phantom1":
        return build_phantom1(n1, n2, energies=energies,
                              pixel_size_cm=ph_cfg["pixel_size_cm"])
    return build_phantom2(
        n1, n2, energies=energies,
        pixel_size_cm=ph_cfg["pixel_size_cm"],
        seed=ph_cfg["seed"],
        texture_amplitude=ph_cfg["texture_amplitude"],
        ramp_amplitude=ph_cfg["ramp_amplitude"],
    )


def _build_system(cfg, n1, n2):
    geo = cfg["geometry"]
    geom = parallel_geometry(n1, n2, geo["angles"], n_det=geo.get("n_det"))
    return build_system_matrix(geom)


def _simulate(cfg, seed_override=None):
    phantom = _build_phantom(cfg)
    sm = _build_system(cfg, *phantom.labels.shape)
    seed = cfg["spectrum"]["seed"] if seed_override is None else seed_override
    ms = simulate_counts(phantom, sm, cfg["spectrum"]["photons"], seed=seed)
    return phantom, sm, ms


def _solver_config(cfg, threads) -> SolverConfig:
    kwargs = dict(cfg["solver"])
    if "gamma_unfold" in kwargs:
        kwargs["gamma_unfold"] = tuple(kwargs["gamma_unfold"])
    return SolverConfig(method=cfg["method"], threads=threads, **kwargs)


def _write_pgm(path, img):
    """8-bit binary PGM, min/max normalized."""
    img = np.asarray(img, dtype=float)
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        scaled = (img - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(img)
    data = np.round(255.0 * scaled).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(data.tobytes())


def _preview_bins(energies):
    """Bins nearest 25 and 85 keV, deduplicated, with filename tags."""
    energies = np.asarray(energies)
    picks = {}
    for target in (25.0, 85.0):
        k = int(np.argmin(np.abs(energies - target)))
        picks[k] = f"{int(round(energies[k])):03d}kev"
    return picks


def _write_history(path, history):
    n_err = len(history[0].errors) if history and history[0].errors else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iteration", "objective", "residual"]
            + [f"err_bin_{k:02d}" for k in range(n_err)]
        )
        for rec in history:
            row = [rec.iteration, f"{rec.objective:.12e}", f"{rec.residual:.12e}"]
            if n_err:
                row += [f"{e:.12e}" for e in rec.errors]
            writer.writerow(row)


def _write_meta(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _counts_tensor(ms):
    # store as angle x detector x energy so energy runs along tube fibers
    return np.transpose(ms.counts, (1, 2, 0)).astype(np.float64)


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    phantom, sm, ms = _simulate(cfg, args.seed)
    outdir = Path(args.out or cfg["output"].get("dir", "."))
    outdir.mkdir(parents=True, exist_ok=True)
    write_t3d(outdir / "truth.t3d", phantom.chi)
    write_t3d(outdir / "counts.t3d", _counts_tensor(ms))
    _write_meta(outdir / "meta.json", {
        "command": "simulate",
        "version": __version__,
        "config": cfg,
        "seed": ms.seed,
        "energies_kev": list(map(float, phantom.energies)),
        "counts_layout": ["angle", "detector", "energy"],
    })
    print(f"wrote truth.t3d and counts.t3d to {outdir}")
    return 0


def _run_reconstruction(cfg, seed_override, threads):
    phantom, sm, ms = _simulate(cfg, seed_override)
    data = pwls_transform(ms)
    solver_cfg = _solver_config(cfg, threads)
    result = reconstruct(data, sm, solver_cfg, truth=phantom.chi)
    return phantom, sm, ms, result


def _write_run_outputs(outdir, cfg, phantom, ms, result):
    outdir.mkdir(parents=True, exist_ok=True)
    write_t3d(outdir / "truth.t3d", phantom.chi)
    write_t3d(outdir / "counts.t3d", _counts_tensor(ms))
    write_t3d(outdir / "recon.t3d", result.chi)
    _write_history(outdir / "history.csv", result.history)
    errors = [
        relative_l2_error(result.chi[:, :, k], phantom.chi[:, :, k])
        for k in range(phantom.chi.shape[2])
    ]
    if cfg["output"]["previews"]:
        for k, tag in _preview_bins(phantom.energies).items():
            _write_pgm(outdir / f"truth_{tag}.pgm", phantom.chi[:, :, k])
            _write_pgm(outdir / f"recon_{tag}.pgm", result.chi[:, :, k])
    _write_meta(outdir / "meta.json", {
        "command": "reconstruct",
        "version": __version__,
        "config": cfg,
        "seed": ms.seed,
        "threads": result.config.threads,
        "energies_kev": list(map(float, phantom.energies)),
        "counts_layout": ["angle", "detector", "energy"],
        "wall_time_s": result.wall_time,
        "errors": errors,
    })
    return errors


def _cmd_reconstruct(args) -> int:
    cfg = load_config(args.config)
    threads = _resolve_threads(args.threads)
    phantom, sm, ms, result = _run_reconstruction(cfg, args.seed, threads)
    outdir = Path(args.out or cfg["output"].get("dir", "."))
    errors = _write_run_outputs(outdir, cfg, phantom, ms, result)
    print(f"method {cfg['method']}: mean squared relative error "
          f"{np.mean(errors):.4e} over {len(errors)} bins "
          f"({result.wall_time:.1f}s); outputs in {outdir}")
    return 0


def _cmd_compare(args) -> int:
    cfgs = [load_config(p) for p in args.configs]
    shared = [
        {k: c[k] for k in ("phantom", "geometry", "spectrum")} for c in cfgs
    ]
    if any(s != shared[0] for s in shared[1:]):
        raise ConfigError(
            "compare requires identical phantom/geometry/spectrum sections"
        )
    threads = _resolve_threads(args.threads)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    phantom, sm, ms = _simulate(cfgs[0], args.seed)
    data = pwls_transform(ms)
    picks = _preview_bins(phantom.energies)
    rows = []
    for cfg in cfgs:
        result = reconstruct(data, sm, _solver_config(cfg, threads),
                             truth=phantom.chi)
        subdir = outdir / cfg["method"].replace("+", "_")
        errors = _write_run_outputs(subdir, cfg, phantom, ms, result)
        row = {"method": cfg["method"], "mean": float(np.mean(errors)),
               "wall_time_s": result.wall_time}
        for k, tag in picks.items():
            row[f"err_{tag}"] = errors[k]
        rows.append(row)
    fields = ["method"] + [f"err_{tag}" for tag in picks.values()] + [
        "mean", "wall_time_s"]
    with open(outdir / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    header = f"{'method':<10}" + "".join(f"{f:>14}" for f in fields[1:])
    print(header)
    for row in rows:
        print(f"{row['method']:<10}" + "".join(
            f"{row[f]:>14.4e}" for f in fields[1:]))
    return 0


def _cmd_evaluate(args) -> int:
    truth = read_t3d(args.truth)
    recon = read_t3d(args.recon)
    if truth.shape != recon.shape:
        raise ConfigError(
            f"shape mismatch: truth {truth.shape} vs recon {recon.shape}"
        )
    errors = [
        relative_l2_error(recon[:, :, k], truth[:, :, k])
        for k in range(truth.shape[2])
    ]
    for k, err in enumerate(errors):
        print(f"bin {k:02d}: {err:.6e}")
    print(f"mean:   {np.mean(errors):.6e}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin", "squared_relative_error"])
            writer.writerows((k, f"{e:.12e}") for k, e in enumerate(errors))
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="spectre",
        description="Energy-resolved CT simulation and reconstruction.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p_sim = sub.add_parser("simulate", help="simulate counts from a config")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", help="output directory")
    p_sim.add_argument("--seed", type=int, help="override measurement seed")
    p_sim.set_defaults(func=_cmd_simulate)

    p_rec = sub.add_parser("reconstruct", help="simulate and reconstruct")
    p_rec.add_argument("--config", required=True)
    p_rec.add_argument("--out", help="output directory")
    p_rec.add_argument("--seed", type=int, help="override measurement seed")
    p_rec.add_argument("--threads", type=int,
                       help="x-update worker threads; 0 = all cores "
                            "(default: SPECTRE_THREADS or 1)")
    p_rec.set_defaults(func=_cmd_reconstruct)

    p_cmp = sub.add_parser(
        "compare", help="run several configs against one simulation")
    p_cmp.add_argument("configs", nargs="+")
    p_cmp.add_argument("--out", required=True, help="output directory")
    p_cmp.add_argument("--seed", type=int, help="override measurement seed")
    p_cmp.add_argument("--threads", type=int)
    p_cmp.set_defaults(func=_cmd_compare)

    p_eval = sub.add_parser(
        "evaluate", help="per-bin errors between truth and reconstruction")
    p_eval.add_argument("truth")
    p_eval.add_argument("recon")
    p_eval.add_argument("--out", help="optional CSV path")
    p_eval.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
