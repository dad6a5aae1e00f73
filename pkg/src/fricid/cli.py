"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 missing or
unreadable artifact, 4 numerical failure, 5 infeasible trajectory design.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .data import Sequence, read_sequence, write_sequence
from .doe import DesignConfig, MotionLimits, TrajectoryCoeffs, design, sample_reference
from .em import EMConfig
from .errors import (ConfigError, ConvergenceError, DegeneracyError, DivergenceError, FeasibilityError,
                     FormatError, NumericalError, ParameterError, SamplingError, ShapeError)
from .eval import benchmark_report, friction_curve, loop_area
from .friction import GMSParams, LuGreParams, SimpleFrictionParams, StribeckParams
from .identify import METHODS, IdentifyOptions, LVMConfig, identify
from .io import RunConfig, load_model, plant_from_config, read_manifest, save_model, write_manifest
from .synth import Controller, NoiseLevels, TruthFriction, synthesize_campaign

log = logging.getLogger("fricid")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_NUMERICAL, EXIT_INFEASIBLE = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


# -- config translation ----------------------------------------------------------------
def truth_from_config(cfg: RunConfig, n):
    law = cfg.get("truth", "law").strip()
    f = lambda k: np.full(n, cfg.float("truth", k))  # noqa: E731
    if law == "none":
        params = None
    elif law == "simple":
        params = SimpleFrictionParams(f("coulomb"), f("viscous"))
    elif law == "stribeck":
        params = StribeckParams(f("fc"), f("fs"), f("vs"), f("sigma2"), f("delta"))
    elif law == "lugre":
        params = LuGreParams(f("sigma0"), f("sigma1"), f("sigma2"), f("fc"), f("fs"), f("vs"), f("delta"))
    elif law == "gms":
        k = np.tile(cfg.floats("truth", "gms_stiffness"), (n, 1))
        w = np.tile(cfg.floats("truth", "gms_weights"), (n, 1))
        params = GMSParams(k, w, f("gms_attraction"), f("sigma2"), f("fc"), f("fs"), f("vs"), f("delta"))
    else:
        raise ConfigError(f"unknown ground-truth friction law {law!r}")
    return TruthFriction(law, params, n)


def limits_from_config(cfg: RunConfig):
    return MotionLimits(q=(cfg.float("doe", "q_min"), cfg.float("doe", "q_max")),
                        qd=(-cfg.float("doe", "qd_max"), cfg.float("doe", "qd_max")),
                        qdd=(-cfg.float("doe", "qdd_max"), cfg.float("doe", "qdd_max")),
                        jerk=cfg.float("doe", "jerk_max"))


def design_config(cfg: RunConfig):
    return DesignConfig(K=cfg.int("doe", "harmonics"), omega=2 * np.pi / cfg.float("doe", "period"),
                        duration=cfg.float("doe", "duration"), grid_dt=cfg.float("doe", "grid_dt"),
                        margin=cfg.float("doe", "margin"), decay=cfg.float("doe", "decay"))


def em_config(cfg: RunConfig, seed, threads):
    s = "em"
    return EMConfig(max_iter=cfg.int(s, "max_iter"), tol_factor=cfg.float(s, "tol_factor"),
                    patience=cfg.int(s, "patience"), n_particles=cfg.int(s, "n_particles"),
                    replicates=cfg.int(s, "replicates"), smoother=cfg.get(s, "smoother").strip(),
                    ess_threshold=cfg.float(s, "ess_threshold"), anchor_initial=cfg.bool(s, "anchor_initial"),
                    epochs=cfg.int(s, "epochs"), batch_size=cfg.int(s, "batch_size"), lr=cfg.float(s, "lr"),
                    mstep_pairs=cfg.optional_int(s, "mstep_pairs"), elbo_pairs=cfg.optional_int(s, "elbo_pairs"),
                    max_retries=cfg.int(s, "max_retries"), update_q=cfg.bool(s, "update_q"),
                    update_r=cfg.bool(s, "update_r"), update_initial=cfg.bool(s, "update_initial"),
                    var_floor=cfg.float(s, "var_floor"), seed=seed,
                    common_random_numbers=cfg.bool(s, "common_random_numbers"), threads=threads,
                    checkpoint_every=cfg.int(s, "checkpoint_every"))


def lvm_config(cfg: RunConfig, seed, threads):
    s = "lvm"
    return LVMConfig(n_latent=cfg.int(s, "n_latent"),
                     friction_hidden=tuple(int(v) for v in cfg.floats(s, "friction_hidden")),
                     latent_hidden=tuple(int(v) for v in cfg.floats(s, "latent_hidden")),
                     em_steps=cfg.int(s, "em_steps"), pretrain_steps=cfg.int(s, "pretrain_steps"),
                     latent_var=cfg.float(s, "latent_var"), freeze_lumped=cfg.bool(s, "freeze_lumped"),
                     em=em_config(cfg, seed, threads))


def identify_options(cfg: RunConfig):
    s = "identify"
    return IdentifyOptions(
        filter_cutoff=cfg.float(s, "filter_cutoff"), filter_order=cfg.int(s, "filter_order"),
        trim=cfg.int(s, "trim"), window_seconds=cfg.float(s, "window_seconds"), windows=cfg.int(s, "windows"),
        simplex_evaluations=cfg.int(s, "simplex_evaluations"), gms_elements=cfg.int(s, "gms_elements"),
        nn_hidden=tuple(int(v) for v in cfg.floats(s, "nn_hidden")), nn_steps=cfg.int(s, "nn_steps"),
        nn_lr=cfg.float(s, "nn_lr"), rnn_hidden=cfg.int(s, "rnn_hidden"), rnn_layers=cfg.int(s, "rnn_layers"),
        rnn_window=cfg.int(s, "rnn_window"), rnn_steps=cfg.int(s, "rnn_steps"), rnn_lr=cfg.float(s, "rnn_lr"))


# -- dataset directories ---------------------------------------------------------------
def read_split(data_dir, split):
    paths = sorted(glob.glob(os.path.join(data_dir, split, "*.csv")))
    if not paths:
        raise FileNotFoundError(f"no {split} sequences under {data_dir}")
    return [read_sequence(p) for p in paths]


# -- commands ----------------------------------------------------------------------------
def cmd_synthesize(args, cfg, seed):
    plant = plant_from_config(cfg)
    noise = NoiseLevels(cfg.float("noise", "q"), cfg.float("noise", "qd"), cfg.float("noise", "tau"))
    camp = synthesize_campaign(
        plant, truth_from_config(cfg, plant.n_dof), limits_from_config(cfg), seed=seed,
        n_designs=cfg.int("synthesis", "trajectories"), runs=cfg.int("synthesis", "runs"),
        n_validation=cfg.int("synthesis", "validation"), dt=cfg.float("synthesis", "dt"), noise=noise,
        substeps=cfg.int("synthesis", "substeps"),
        controller=Controller(cfg.float("controller", "kp"), cfg.float("controller", "kd")),
        design_config=design_config(cfg))
    splits = {"train": [], "validation": []}
    for split, seqs in (("train", camp.train), ("validation", camp.validation)):
        os.makedirs(os.path.join(args.out, split), exist_ok=True)
        for i, s in enumerate(seqs):
            name = f"{split}/seq_{i:02d}.csv"
            write_sequence(os.path.join(args.out, name), s)
            splits[split].append({"file": name, **s.meta})
    os.makedirs(os.path.join(args.out, "designs"), exist_ok=True)
    for i, c in enumerate(camp.designs):
        with open(os.path.join(args.out, "designs", f"design_{i:02d}.json"), "w", encoding="utf-8") as fh:
            fh.write(c.to_json() + "\n")
    with open(os.path.join(args.out, "dataset.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"splits": splits, "dt": cfg.float("synthesis", "dt"), "truth": cfg.get("truth", "law")},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")
    log.info("wrote %d training and %d validation sequences", len(camp.train), len(camp.validation))
    return {}


def cmd_design(args, cfg, seed):
    plant = plant_from_config(cfg)
    dc = design_config(cfg)
    c = design(limits_from_config(cfg), seed, dc, plant.n_dof)
    t, q, qd, qdd = sample_reference(c, cfg.float("synthesis", "dt"))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "coefficients.json"), "w", encoding="utf-8") as fh:
        fh.write(c.to_json() + "\n")
    n = plant.n_dof
    head = (["t"] + [f"q{j + 1}" for j in range(n)] + [f"qd{j + 1}" for j in range(n)]
            + [f"qdd{j + 1}" for j in range(n)])
    rows = np.column_stack([t, q, qd, qdd])
    with open(os.path.join(args.out, "reference.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(head) + "\n")
        for r in rows:
            fh.write(",".join(f"{v:.17g}" for v in r) + "\n")
    return {}


def cmd_identify(args, cfg, seed):
    args.method = args.method or cfg.get("identify", "method").strip()
    if args.method not in METHODS:
        raise UsageError(f"unknown method {args.method!r}; choose from {', '.join(METHODS)}")
    seqs = read_split(args.data, "train")
    plant = plant_from_config(cfg)
    os.makedirs(args.out, exist_ok=True)
    trace = os.path.join(args.out, "em_trace.csv") if args.method == "lvm" else None
    model = identify(args.method, plant, seqs, seed=seed, options=identify_options(cfg),
                     lvm_config=lvm_config(cfg, seed, args.threads), trace_path=trace)
    save_model(os.path.join(args.out, f"{args.method}.fmf"), model,
               extra={"method": args.method, "seed": seed, "config_hash": cfg.hash()})
    return {}


def _model_paths(paths):
    out = []
    for p in paths:
        if os.path.isdir(p):
            out += sorted(glob.glob(os.path.join(p, "*.fmf")))
        elif os.path.exists(p):
            out.append(p)
        else:
            raise FileNotFoundError(f"model file not found: {p}")
    if not out:
        raise FileNotFoundError("no model files given")
    return out


def cmd_evaluate(args, cfg, seed):
    models = {}
    for p in _model_paths(args.models):
        models[os.path.splitext(os.path.basename(p))[0]] = load_model(p).model
    seq = read_split(args.data, "validation")[args.sequence] if os.path.isdir(args.data) else read_sequence(args.data)
    rep = benchmark_report(models, seq, cfg.float("eval", "horizon"), out_dir=args.out, threads=args.threads)
    print(rep.table())
    return {}


def cmd_export_curves(args, cfg, seed):
    mf = load_model(args.model)
    seq = read_split(args.data, "validation")[args.sequence] if os.path.isdir(args.data) else read_sequence(args.data)
    v, tf = friction_curve(mf.model, seq, n_particles=cfg.int("eval", "curve_particles"), seed=seed)
    os.makedirs(args.out, exist_ok=True)
    n = seq.n_joints
    with open(os.path.join(args.out, "friction_curve.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["t"] + [f"qd{j + 1}" for j in range(n)] + [f"tau_f{j + 1}" for j in range(n)]) + "\n")
        for r in np.column_stack([seq.t, v, tf]):
            fh.write(",".join(f"{x:.17g}" for x in r) + "\n")
    print("loop area per joint:", " ".join(f"{a:.6g}" for a in loop_area(v, tf)))
    return {}


def cmd_inspect(args, cfg, seed):
    mf = load_model(args.model)
    h = mf.header
    info = {"kind": h["meta"]["kind"], "format": "fricid model", "tool_version": h["tool_version"],
            "config_hash": h["config_hash"], "extra": h["extra"], "dof": mf.model.n,
            "lumped": [float(v) for v in mf.model.lumped],
            "arrays": {e["name"]: e["shape"] for e in h["layout"]}}
    print(json.dumps(info, indent=1, sort_keys=True))
    return {}


COMMANDS = {"synthesize": cmd_synthesize, "design": cmd_design, "identify": cmd_identify,
            "evaluate": cmd_evaluate, "export-curves": cmd_export_curves, "inspect-model": cmd_inspect}
WRITES_OUTPUT = {"synthesize", "design", "identify", "evaluate", "export-curves"}


def build_parser():
    # SUPPRESS keeps a flag given before the command from being reset by the subparser
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="configuration file (flat sections, key = value)")
    common.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (1 is bit-exact)")
    common.add_argument("--manifest", help="rerun a command from the manifest of an earlier run")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fricid", description="Dynamic friction identification toolkit.",
                                parents=[common])
    p.add_argument("--version", action="version", version=f"fricid {__version__}")
    sub = p.add_subparsers(dest="command")
    sub.add_parser("synthesize", parents=[common], help="simulate a ground-truth measurement campaign")
    sub.add_parser("design", parents=[common], help="design one excitation trajectory")
    s = sub.add_parser("identify", parents=[common], help="fit a model to the training split")
    s.add_argument("--data", help="dataset directory written by synthesize")
    s.add_argument("--method", help=f"one of {', '.join(METHODS)} (default from [identify] method)")
    s = sub.add_parser("evaluate", parents=[common], help="open-loop benchmark on a validation sequence")
    s.add_argument("--data")
    s.add_argument("--models", nargs="+", default=[])
    s.add_argument("--sequence", type=int, default=0)
    s = sub.add_parser("export-curves", parents=[common], help="friction characteristic along a sequence")
    s.add_argument("--model")
    s.add_argument("--data")
    s.add_argument("--sequence", type=int, default=0)
    s = sub.add_parser("inspect-model", parents=[common], help="print a model file summary")
    s.add_argument("model")
    return p


# arguments that define the computation (recorded in manifests; --out and --manifest are not)
RECORDED = ("command", "data", "method", "models", "sequence", "model")


def _from_manifest(args):
    doc = read_manifest(args.manifest)
    rec = doc.get("args", {})
    for k in RECORDED:
        if k in rec:
            setattr(args, k, rec[k])
    args.seed = doc["seeds"]["run"]
    return doc["config"]


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    for k in ("config", "seed", "out", "threads", "manifest", "verbose", "data", "method", "model", "command"):
        if not hasattr(args, k):
            setattr(args, k, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg_text = None
        if args.manifest:
            cfg_text = _from_manifest(args)
        if not args.command:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        cfg = RunConfig.from_string(cfg_text) if cfg_text is not None else RunConfig.load(args.config)
        seed = args.seed if args.seed is not None else cfg.int("run", "seed")
        if seed < 0:
            raise UsageError("seeds must be non-negative")
        cfg.set("run", "seed", seed)
        threads = args.threads if args.threads is not None else cfg.int("run", "threads")
        if threads < 1:
            raise UsageError("--threads must be at least 1")
        args.threads = threads
        if args.command in WRITES_OUTPUT and not args.out:
            raise UsageError("--out is required")
        for k, v in (("identify", "data"), ("evaluate", "data"),
                     ("export-curves", "model"), ("export-curves", "data")):
            if args.command == k and not getattr(args, v):
                raise UsageError(f"{k} needs --{v}")
        COMMANDS[args.command](args, cfg, seed)
        if args.command in WRITES_OUTPUT:
            rec = {k: getattr(args, k) for k in RECORDED if getattr(args, k, None) is not None}
            write_manifest(args.out, args.command, cfg, {"run": seed}, extra={"args": rec})
        return EXIT_OK
    except (UsageError, ConfigError, ParameterError, ShapeError) as err:
        print(f"fricid: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, FormatError) as err:
        print(f"fricid: missing or unreadable artifact: {err}", file=sys.stderr)
        return EXIT_MISSING
    except (NumericalError, DivergenceError, DegeneracyError, ConvergenceError, SamplingError) as err:
        print(f"fricid: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FeasibilityError as err:
        print(f"fricid: infeasible design: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
