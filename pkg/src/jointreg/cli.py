"""Command-line driver: register, warp, evaluate, synth, gradcheck, sweep.

Every subcommand writes a canonical manifest next to its outputs so a run
can be reproduced from its recorded configuration.  Exit codes: 0 success,
2 invalid input, 3 numerical failure during optimization.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import os
import sys
import time

import numpy as np

from . import io
from .errors import DivergenceError, InputError, JointRegError
from .fields import warp_labels, warp_volume, warp_vertices
from .losses import LossWeights
from .metrics import evaluate
from .optimize import RegistrationConfig, gradient_check, register_pair, sweep
from .sphere import CorticalMesh
from .synth import deform_bundle, make_gradcheck_bundle, make_phantom
from .version import __version__
from .volume import LabelMap3

log = logging.getLogger("jointreg")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _digest_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _base_manifest(command, args, inputs):
    man = {
        "command": command,
        "tool": f"jointreg {__version__}",
        "seed": int(args.seed),
        "threads": int(args.threads) if args.threads else 0,
    }
    for name, path in inputs:
        man[f"digest.{name}"] = _digest_file(path)
    return man


def _parse_iters(text):
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise InputError(f"--iters must be comma-separated ints, got {text!r}") from None


def _parse_grid(text):
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise InputError(f"--sphere-grid must look like 64x128, got {text!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise InputError(f"--sphere-grid must look like 64x128, got {text!r}") from None


def _parse_kappas(text):
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise InputError(f"--kappas must be comma-separated floats, got {text!r}") from None


def _config_from_args(args):
    weights = LossWeights(
        lambda_reg=args.lambda_reg,
        gamma_cons=args.gamma,
        kappa_struct=args.kappa,
    )
    kw = dict(weights=weights, seed=int(args.seed))
    if args.levels is not None:
        kw["levels"] = args.levels
    if args.iters is not None:
        kw["iters_per_level"] = _parse_iters(args.iters)
    if args.sphere_grid is not None:
        kw["sphere_grid"] = _parse_grid(args.sphere_grid)
    if args.step_size is not None:
        kw["step_size"] = args.step_size
    return RegistrationConfig(**kw)


def _require_register_inputs(args, moving, fixed, mv_dir, fx_dir):
    """Name exactly which bundle files a nonzero weight needs."""
    missing = []
    if args.gamma > 0:
        for d, b in ((mv_dir, moving), (fx_dir, fixed)):
            if b.mesh is None:
                missing.append(os.path.join(d, io.MESH_FILE))
                missing.append(os.path.join(d, io.SPHERE_FILE))
    if args.kappa > 0:
        for d, b in ((mv_dir, moving), (fx_dir, fixed)):
            if b.labels is None:
                missing.append(os.path.join(d, io.LABELS_FILE))
    if missing:
        raise InputError(
            "weights require inputs that are not present: "
            + ", ".join(dict.fromkeys(missing))
        )


def _add_weight_flags(p):
    p.add_argument("--lambda", dest="lambda_reg", type=float, default=1.0,
                   help="smoothness weight (default 1.0)")
    p.add_argument("--gamma", type=float, default=0.05,
                   help="volume-surface consistency weight (default 0.05)")
    p.add_argument("--kappa", type=float, default=10.0,
                   help="structural soft-Dice weight (default 10.0)")
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--iters", default=None,
                   help="comma-separated iterations per level, e.g. 150,150,100")
    p.add_argument("--sphere-grid", default=None, help="spherical grid, e.g. 64x128")
    p.add_argument("--step-size", type=float, default=None)


def cmd_register(args):
    moving = io.load_bundle(args.moving)
    fixed = io.load_bundle(args.fixed)
    _require_register_inputs(args, moving, fixed, args.moving, args.fixed)
    cfg = _config_from_args(args)
    groups = io.read_label_groups(args.groups) if args.groups else None
    log.info("registering %s -> %s", args.moving, args.fixed)
    res = register_pair(moving, fixed, cfg, groups=groups)

    os.makedirs(args.out, exist_ok=True)
    phi_path = os.path.join(args.out, "phi.fld3")
    psi_path = os.path.join(args.out, "psi.fld2")
    io.save_field3(phi_path, res.phi)
    io.save_field2(psi_path, res.psi)
    io.write_loss_trace(os.path.join(args.out, "loss_trace.txt"), res.loss_trace)
    if moving.labels is not None and fixed.labels is not None:
        # score the field as persisted, so a later `evaluate` of phi.fld3
        # reproduces this report exactly despite the f32 serialization
        saved = io.load_field3(phi_path)
        report = evaluate(saved, moving.labels, fixed.labels, groups=groups)
        io.write_metric_report(os.path.join(args.out, "metrics.txt"), report)
    io.write_manifest(os.path.join(args.out, "manifest.txt"), res.manifest)
    log.info("final objective %.6f", res.loss_trace[-1].total)
    return EXIT_OK


def cmd_warp(args):
    t0 = time.time()
    field = io.load_field3(args.field)
    ext = os.path.splitext(args.inp)[1]
    if ext == ".vol":
        vol = io.load_volume(args.inp)
        out = warp_volume(vol.data, field)
        io.save_volume(args.out, dataclasses.replace(vol, data=out))
    elif ext == ".lab":
        labels = io.load_labelmap(args.inp)
        out = warp_labels(labels.data, field)
        io.save_labelmap(args.out, LabelMap3(out, label_set=labels.label_set))
    elif ext == ".ply":
        mesh = io.load_mesh(args.inp)
        verts = warp_vertices(mesh.verts, field)
        io.save_mesh(args.out, CorticalMesh(verts, mesh.tris, mesh.descriptors))
    else:
        raise InputError(f"--in must end in .vol, .lab or .ply, got {args.inp!r}")
    man = _base_manifest("warp", args, [("in", args.inp), ("field", args.field)])
    man["wall_time_s"] = round(time.time() - t0, 3)
    io.write_manifest(args.out + ".manifest.txt", man)
    return EXIT_OK


def cmd_evaluate(args):
    t0 = time.time()
    field = io.load_field3(args.field)
    moving = io.load_labelmap(args.moving_labels)
    fixed = io.load_labelmap(args.fixed_labels)
    groups = io.read_label_groups(args.groups) if args.groups else None
    report = evaluate(field, moving, fixed, groups=groups)
    io.write_metric_report(args.out, report)
    inputs = [
        ("field", args.field),
        ("moving_labels", args.moving_labels),
        ("fixed_labels", args.fixed_labels),
    ]
    if args.groups:
        inputs.append(("groups", args.groups))
    man = _base_manifest("evaluate", args, inputs)
    man["wall_time_s"] = round(time.time() - t0, 3)
    io.write_manifest(args.out + ".manifest.txt", man)
    return EXIT_OK


def cmd_synth(args):
    t0 = time.time()
    bundle = make_phantom(
        int(args.seed),
        size=args.size,
        n_labels=args.n_labels,
        mesh_subdiv=args.mesh_subdiv,
    )
    io.save_bundle(args.out, bundle)
    man = _base_manifest("synth", args, [])
    man.update(
        {
            "size": args.size,
            "n_labels": args.n_labels,
            "mesh_subdiv": args.mesh_subdiv,
            "magnitude": float(args.deform) if args.deform is not None else 0.0,
        }
    )
    if args.deform is not None:
        moved, gt = deform_bundle(bundle, int(args.seed) + 1, magnitude=args.deform)
        io.save_bundle(os.path.join(args.out, "moved"), moved)
        io.save_field3(os.path.join(args.out, "gt.fld3"), gt)
    man["wall_time_s"] = round(time.time() - t0, 3)
    io.write_manifest(os.path.join(args.out, "manifest.txt"), man)
    return EXIT_OK


def cmd_gradcheck(args):
    t0 = time.time()
    bundle = make_gradcheck_bundle(int(args.seed))
    cfg = _config_from_args(args)
    rep = gradient_check(
        cfg,
        bundle,
        n_components=args.n_components,
        objective=args.objective,
        field_scale=args.field_scale,
        fd_step=args.fd_step,
        seed=int(args.seed),
    )
    os.makedirs(args.out, exist_ok=True)
    lines = {
        "objective": rep.objective,
        "n_components": rep.n_components,
        "fd_step": rep.fd_step,
        "max_rel_err": rep.max_rel_err,
        "mean_rel_err": rep.mean_rel_err,
        "max_abs_analytic": rep.max_abs_analytic,
        "max_abs_fd": rep.max_abs_fd,
    }
    io.write_manifest(os.path.join(args.out, "gradcheck.txt"), lines)
    for k in ("objective", "n_components", "fd_step", "max_rel_err", "mean_rel_err"):
        print(f"{k}={lines[k]}")
    man = _base_manifest("gradcheck", args, [])
    man["wall_time_s"] = round(time.time() - t0, 3)
    io.write_manifest(os.path.join(args.out, "manifest.txt"), man)
    return EXIT_OK


def cmd_sweep(args):
    t0 = time.time()
    pairs = []
    pair_paths = []
    try:
        with open(args.pairs, "r", encoding="ascii") as fh:
            rows = [ln.split() for ln in fh.read().split("\n") if ln.strip()]
    except OSError as e:
        raise InputError(f"cannot read --pairs file {args.pairs!r}: {e}") from e
    for row in rows:
        if len(row) != 2:
            raise InputError(f"--pairs lines must be 'moving_dir fixed_dir', got {row}")
        pairs.append((io.load_bundle(row[0]), io.load_bundle(row[1])))
        pair_paths.append(row)
    cfg = _config_from_args(args)
    groups = io.read_label_groups(args.groups) if args.groups else None
    table = sweep(cfg, _parse_kappas(args.kappas), pairs, groups=groups)

    os.makedirs(args.out, exist_ok=True)
    cols = ("kappa", "mean_dice", "mean_dice_cortical", "mean_pct_folds", "mean_sd_log_detj")
    out_path = os.path.join(args.out, "sweep.txt")
    with open(out_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(" ".join(cols) + "\n")
        for row in table:
            fh.write(" ".join(repr(float(getattr(row, c))) for c in cols) + "\n")
    with open(out_path, "r", encoding="ascii") as fh:
        sys.stdout.write(fh.read())
    man = _base_manifest("sweep", args, [])
    man["kappas"] = args.kappas
    man["n_pairs"] = len(pairs)
    for i, (mv, fx) in enumerate(pair_paths):
        man[f"pair.{i}.moving"] = mv
        man[f"pair.{i}.fixed"] = fx
    man["wall_time_s"] = round(time.time() - t0, 3)
    io.write_manifest(os.path.join(args.out, "manifest.txt"), man)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="jointreg",
        description="Joint volumetric and cortical-surface diffeomorphic registration.",
    )
    parser.add_argument("--seed", type=int, default=0, help="seed recorded and used everywhere")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap native thread pools (default: all cores)")
    parser.add_argument("--log-level", default="warning",
                        choices=("debug", "info", "warning", "error"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="register a moving bundle onto a fixed bundle")
    p.add_argument("--moving", required=True, help="moving bundle directory")
    p.add_argument("--fixed", required=True, help="fixed bundle directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--groups", default=None, help="label groups file for the report")
    _add_weight_flags(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("warp", help="apply a 3-D field to a volume, labelmap or mesh")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("evaluate", help="score a field against label maps")
    p.add_argument("--field", required=True)
    p.add_argument("--moving-labels", required=True)
    p.add_argument("--fixed-labels", required=True)
    p.add_argument("--groups", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic subject bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--n-labels", type=int, default=4)
    p.add_argument("--mesh-subdiv", type=int, default=3)
    p.add_argument("--deform", type=float, default=None,
                   help="also write a deformed copy with this warp magnitude")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of the gradient")
    p.add_argument("--out", required=True)
    p.add_argument("--objective", choices=("full", "reg"), default="full")
    p.add_argument("--n-components", type=int, default=200)
    p.add_argument("--field-scale", type=float, default=1.0)
    p.add_argument("--fd-step", type=float, default=None)
    _add_weight_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="register pairs across kappa values")
    p.add_argument("--pairs", required=True,
                   help="text file with one 'moving_dir fixed_dir' line per pair")
    p.add_argument("--kappas", default="0.5,1,10")
    p.add_argument("--groups", default=None)
    p.add_argument("--out", required=True)
    _add_weight_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("jointreg: --threads must be >= 1", file=sys.stderr)
            return EXIT_INPUT
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMBA_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"jointreg: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except JointRegError as e:
        print(f"jointreg: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"jointreg: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
