"""Experiment driver: staged subcommands with run manifests.

Stages (collect -> train-models -> augment -> train-policy -> eval -> report)
each write their outputs plus a manifest listing config and content hashes of
every file involved; re-running a completed stage with unchanged inputs is a
no-op unless --force is given. CABI_OUT overrides the output directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

from . import augment as aug
from . import checkpoint, data, report
from .config import ExperimentConfig, load_config
from .cvae import train_cvae
from .dynamics import train_ensemble
from .learner import LearnerConfig, evaluate, train_policy
from .metrics import prediction_error, region_fractions
from .nn import seeded_rng
from .riskworld import RiskWorld, collect_random


class StageError(Exception):
    def __init__(self, stage, message):
        super().__init__(message)
        self.stage = stage


# ---------------------------------------------------------------- paths

def out_dir(args) -> str:
    d = args.out or os.environ.get("CABI_OUT") or "runs"
    os.makedirs(d, exist_ok=True)
    return d


def dataset_path(out, seed):
    return os.path.join(out, f"dataset_s{seed}.cabi")


def models_dir(out, seed):
    return os.path.join(out, f"models_s{seed}")


def buffer_path(out, strategy, k, seed):
    return os.path.join(out, f"buffer_{strategy}_k{k:g}_s{seed}.cabi")


def policy_path(out, label, seed):
    return os.path.join(out, f"policy_{label}_s{seed}")


MODEL_NAMES = ("fwd_ens", "bwd_ens", "fwd_cvae", "bwd_cvae")


def _require(stage, path):
    if not os.path.exists(path):
        raise StageError(stage, f"missing prerequisite file: {path}")
    return path


# ------------------------------------------------------------- manifests

def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _manifest_path(out, stage, tag):
    d = os.path.join(out, "manifests")
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, f"{stage}_{tag}.json")


def _hash_files(paths):
    return {p: checkpoint.file_hash(p) for p in paths if os.path.exists(p)}


def stage_fresh(out, stage, tag, cfg, inputs, outputs) -> bool:
    """True when a previous run of this stage is still valid."""
    path = _manifest_path(out, stage, tag)
    if not os.path.exists(path):
        return False
    try:
        with open(path) as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError):
        return False
    if manifest.get("config_hash") != _config_hash(cfg):
        return False
    for p in inputs + outputs:
        if not os.path.exists(p):
            return False
    if manifest.get("inputs") != _hash_files(inputs):
        return False
    if manifest.get("outputs") != _hash_files(outputs):
        return False
    return True


def write_manifest(out, stage, tag, cfg, inputs, outputs) -> None:
    manifest = {
        "stage": stage,
        "tag": tag,
        "config_hash": _config_hash(cfg),
        "config": cfg,
        "inputs": _hash_files(inputs),
        "outputs": _hash_files(outputs),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(_manifest_path(out, stage, tag), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


# ---------------------------------------------------------------- stages

def cmd_collect(args):
    out = out_dir(args)
    if args.env != "riskworld":
        raise StageError("collect", f"unknown environment {args.env!r}")
    path = args.dataset or dataset_path(out, args.seed)
    cfg = {"env": args.env, "steps": args.steps, "seed": args.seed}
    outputs = [path, path + ".json"]
    if not args.force and stage_fresh(out, "collect", f"s{args.seed}", cfg,
                                      [], outputs):
        print(f"collect: {path} up to date")
        return
    ds = collect_random(args.steps, seeded_rng(args.seed))
    ds.seed = args.seed
    data.save(ds, path)
    write_manifest(out, "collect", f"s{args.seed}", cfg, [], outputs)
    print(f"collect: wrote {ds.count} transitions to {path}")


def cmd_train_models(args):
    out = out_dir(args)
    ds_path = args.dataset or dataset_path(out, args.seed)
    _require("train-models", ds_path)
    mdir = args.models or models_dir(out, args.seed)
    os.makedirs(mdir, exist_ok=True)
    cfg = {"seed": args.seed, "epochs": args.epochs,
           "cvae_epochs": args.cvae_epochs, "holdout": args.holdout,
           "batch_size": args.batch_size, "lr": args.lr,
           "cvae_kl_weight": args.cvae_kl_weight,
           "normalize_inputs": args.normalize_inputs}
    inputs = [ds_path, ds_path + ".json"]
    outputs = []
    for name in MODEL_NAMES:
        outputs += [os.path.join(mdir, name + ".json"),
                    os.path.join(mdir, name + ".bin")]
    if not args.force and stage_fresh(out, "train-models", f"s{args.seed}",
                                      cfg, inputs, outputs):
        print(f"train-models: {mdir} up to date")
        return
    ds = data.load(ds_path)
    rng = seeded_rng(args.seed)
    train, hold = data.split_holdout(ds, args.holdout, rng)
    common = dict(batch_size=args.batch_size, lr=args.lr,
                  normalize_inputs=args.normalize_inputs)
    t0 = time.time()
    fwd = train_ensemble(train, hold, "forward", args.epochs, rng, **common)
    print(f"train-models: forward ensemble done ({time.time() - t0:.0f}s)")
    bwd = train_ensemble(train, hold, "backward", args.epochs, rng, **common)
    print(f"train-models: backward ensemble done ({time.time() - t0:.0f}s)")
    fcv = train_cvae(train, "forward", args.cvae_epochs, rng,
                     batch_size=args.batch_size,
                     kl_weight=args.cvae_kl_weight,
                     normalize_inputs=args.normalize_inputs)
    bcv = train_cvae(train, "backward", args.cvae_epochs, rng,
                     batch_size=args.batch_size,
                     kl_weight=args.cvae_kl_weight,
                     normalize_inputs=args.normalize_inputs)
    print(f"train-models: rollout policies done ({time.time() - t0:.0f}s)")
    for name, model in zip(MODEL_NAMES, (fwd, bwd, fcv, bcv)):
        checkpoint.save_model(model, os.path.join(mdir, name))
    write_manifest(out, "train-models", f"s{args.seed}", cfg, inputs, outputs)
    print(f"train-models: checkpoints in {mdir}")


def _load_models(stage, mdir):
    loaded = []
    for name in MODEL_NAMES:
        base = os.path.join(mdir, name)
        _require(stage, base + ".json")
        _require(stage, base + ".bin")
        loaded.append(checkpoint.load_model(base))
    fwd, bwd, fcv, bcv = loaded
    models = aug.BidirectionalModels(forward=fwd, backward=bwd)
    policies = aug.RolloutPolicies(forward=aug.CvaePolicy(fcv),
                                   backward=aug.CvaePolicy(bcv))
    return models, policies


def _model_hashes(mdir):
    return {name: checkpoint.file_hash(os.path.join(mdir, name + ".bin"))
            for name in MODEL_NAMES}


def cmd_augment(args):
    out = out_dir(args)
    ds_path = args.dataset or dataset_path(out, args.seed)
    mdir = args.models or models_dir(out, args.seed)
    _require("augment", ds_path)
    path = args.buffer or buffer_path(out, args.strategy, args.k, args.seed)
    rollout = aug.RolloutConfig(fwd_horizon=args.fwd_horizon,
                                bwd_horizon=args.bwd_horizon, k=args.k,
                                batch_anchors=args.batch_anchors,
                                total=args.count,
                                check_mode=args.check_mode)
    cfg = {"seed": args.seed, "strategy": args.strategy,
           "rollout": rollout.as_dict(), "dataset": ds_path, "models": mdir}
    inputs = [ds_path] + [os.path.join(mdir, n + ".bin")
                          for n in MODEL_NAMES]
    outputs = [path, path + ".json", path + ".provenance.json"]
    if not args.force and stage_fresh(
            out, "augment", f"{args.strategy}_k{args.k:g}_s{args.seed}", cfg,
            inputs, outputs):
        print(f"augment: {path} up to date")
        return
    ds = data.load(ds_path)
    models, policies = _load_models("augment", mdir)
    buf = aug.generate(ds, models, policies, rollout, args.strategy,
                       seeded_rng(args.seed))
    data.save(buf.as_dataset(ds.env), path)
    provenance = dict(buf.provenance)
    provenance.update({"seed": args.seed, "dataset": ds_path,
                       "model_hashes": _model_hashes(mdir)})
    with open(path + ".provenance.json", "w") as f:
        json.dump(provenance, f, indent=1, sort_keys=True)
    write_manifest(out, "augment",
                   f"{args.strategy}_k{args.k:g}_s{args.seed}", cfg, inputs,
                   outputs)
    print(f"augment: {buf.count} transitions ({args.strategy}) -> {path}")


def cmd_train_policy(args):
    out = out_dir(args)
    ds_path = args.dataset or dataset_path(out, args.seed)
    _require("train-policy", ds_path)
    ds = data.load(ds_path)
    synthetic = None
    eta = args.eta
    if args.buffer:
        _require("train-policy", args.buffer)
        synthetic = data.load(args.buffer)
        if synthetic.count == 0 and eta < 1.0:
            print("train-policy: empty buffer, using eta=1")
            eta = 1.0
    elif eta < 1.0:
        raise StageError("train-policy", "eta < 1 requires --buffer")
    label = args.label or ("raw" if synthetic is None else "mixed")
    path = policy_path(out, label, args.seed)
    lcfg = LearnerConfig(steps=args.steps, batch_size=args.batch_size,
                         eta=eta)
    cfg = {"seed": args.seed, "eta": eta, "learner": lcfg.as_dict(),
           "dataset": ds_path, "buffer": args.buffer}
    inputs = [p for p in (ds_path, args.buffer) if p]
    outputs = [path + ".json", path + ".bin"]
    if not args.force and stage_fresh(out, "train-policy",
                                      f"{label}_s{args.seed}", cfg, inputs,
                                      outputs):
        print(f"train-policy: {path} up to date")
        return
    sampler = data.MixedSampler(real=ds, synthetic=synthetic, eta=eta)
    policy = train_policy(sampler, lcfg, seeded_rng(args.seed),
                          seed=args.seed)
    checkpoint.save_model(policy, path)
    write_manifest(out, "train-policy", f"{label}_s{args.seed}", cfg, inputs,
                   outputs)
    print(f"train-policy: saved {path}")


def cmd_eval(args):
    out = out_dir(args)
    _require("eval", args.policy + ".json")
    _require("eval", args.policy + ".bin")
    policy = checkpoint.load_model(args.policy)
    result = evaluate(policy, RiskWorld(), args.episodes,
                      seeded_rng(args.seed))
    label = args.label or os.path.basename(args.policy)
    path = os.path.join(out, f"eval_{label}_s{args.seed}.csv")
    report.write_returns_csv(result, path, label=label)
    print(f"eval: mean={result.mean:.3f} std={result.std:.3f} -> {path}")


def cmd_report(args):
    out = out_dir(args)
    rdir = os.path.join(out, "report")
    os.makedirs(rdir, exist_ok=True)
    paths = list(args.buffers or [])
    if not paths:
        paths = sorted(
            os.path.join(out, p) for p in os.listdir(out)
            if p.startswith("buffer_") and p.endswith(".cabi"))
    if not paths:
        raise StageError("report", "no buffer files found to report on")
    rows = []
    for p in paths:
        _require("report", p)
        buf = data.load(p)
        label = os.path.basename(p).removesuffix(".cabi")
        svg_path = os.path.join(rdir, label + ".svg")
        report.write_scatter(buf, label, svg_path)
        rows.append((label, buf))
        print(f"report: {svg_path}")
    csv_path = os.path.join(rdir, "region_fractions.csv")
    report.write_region_csv(rows, csv_path)
    print(f"report: {csv_path}")


def cmd_ablation(args):
    out = out_dir(args)
    strategies = args.strategies.split(",")
    ks = [float(v) for v in args.ks.split(",")]
    seeds = [int(v) for v in args.seeds.split(",")]
    path = os.path.join(out, "ablation.csv")
    fields = ["strategy", "k", "seed", "mean_return", "std_return",
              "danger_fraction", "oob_fraction", "eps_fwd", "eps_bwd",
              "error"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for seed in seeds:
            try:
                ds = data.load(_require("ablation", dataset_path(out, seed)))
                models, policies = _load_models("ablation",
                                                models_dir(out, seed))
            except (StageError, data.DatasetFormatError) as e:
                for strategy in strategies:
                    for k in ks:
                        writer.writerow({"strategy": strategy, "k": k,
                                         "seed": seed, "error": str(e)})
                continue
            for strategy in strategies:
                for k in ks:
                    row = {"strategy": strategy, "k": k, "seed": seed,
                           "error": ""}
                    try:
                        row.update(_ablation_cell(
                            ds, models, policies, strategy, k, seed, args))
                    except Exception as e:  # record and continue the suite
                        row["error"] = f"{type(e).__name__}: {e}"
                    writer.writerow(row)
                    f.flush()
                    print(f"ablation: {strategy} k={k:g} seed={seed} "
                          + (row["error"] or f"return={row['mean_return']}"))
    print(f"ablation: {path}")


def _ablation_cell(ds, models, policies, strategy, k, seed, args):
    rollout = aug.RolloutConfig(fwd_horizon=args.fwd_horizon,
                                bwd_horizon=args.bwd_horizon, k=k,
                                total=args.count)
    buf = aug.generate(ds, models, policies, rollout, strategy,
                       seeded_rng(seed))
    out = {}
    if buf.count:
        frac = region_fractions(buf)
        out["danger_fraction"] = f"{frac.danger_fraction:.6f}"
        out["oob_fraction"] = f"{frac.out_of_bounds_fraction:.6f}"
        out["eps_fwd"] = f"{prediction_error(buf, models.forward, 'forward'):.6f}"
        out["eps_bwd"] = f"{prediction_error(buf, models.backward, 'backward'):.6f}"
    eta = args.eta if buf.count else 1.0
    sampler = data.MixedSampler(real=ds, synthetic=buf if buf.count else None,
                                eta=eta)
    lcfg = LearnerConfig(steps=args.learner_steps, batch_size=args.batch_size)
    policy = train_policy(sampler, lcfg, seeded_rng(seed), seed=seed)
    result = evaluate(policy, RiskWorld(), args.episodes,
                      seeded_rng(seed + 10_000))
    out["mean_return"] = f"{result.mean:.4f}"
    out["std_return"] = f"{result.std:.4f}"
    return out


# ------------------------------------------------------------------ main

def _add_common(p):
    p.add_argument("--out", default=None,
                   help="output directory (default $CABI_OUT or ./runs)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true",
                   help="re-run even if the stage manifest is fresh")
    p.add_argument("--config", default=None,
                   help="key=value config file supplying defaults")


def build_parser():
    # config-backed flags default to None; _resolve_defaults fills them from
    # the --config file (when given) and then the builtin defaults
    parser = argparse.ArgumentParser(
        prog="cabi",
        description="bidirectional model-based data augmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="log random-policy transitions")
    _add_common(p)
    p.add_argument("--env", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--dataset", default=None, help="explicit output path")
    p.set_defaults(func=cmd_collect, stage="collect")

    p = sub.add_parser("train-models",
                       help="train dynamics ensembles and rollout policies")
    _add_common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--models", default=None, help="checkpoint directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--cvae-epochs", type=int, default=None)
    p.add_argument("--cvae-kl-weight", type=float, default=None)
    p.add_argument("--holdout", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--normalize-inputs", type=lambda v: v != "0",
                   default=None)
    p.set_defaults(func=cmd_train_models, stage="train-models")

    p = sub.add_parser("augment", help="generate a synthetic model buffer")
    _add_common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--models", default=None)
    p.add_argument("--buffer", default=None, help="explicit output path")
    p.add_argument("--strategy", default=None, choices=aug.STRATEGIES)
    p.add_argument("--k", type=float, default=None)
    p.add_argument("--fwd-horizon", type=int, default=None)
    p.add_argument("--bwd-horizon", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--batch-anchors", type=int, default=None)
    p.add_argument("--check-mode", default=None, choices=["sample", "mean"])
    p.set_defaults(func=cmd_augment, stage="augment")

    p = sub.add_parser("train-policy", help="offline actor-critic training")
    _add_common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--buffer", default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--label", default=None)
    p.set_defaults(func=cmd_train_policy, stage="train-policy")

    p = sub.add_parser("eval", help="evaluate a trained policy")
    _add_common(p)
    p.add_argument("--policy", required=True,
                   help="checkpoint base path (no extension)")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--label", default=None)
    p.set_defaults(func=cmd_eval, stage="eval")

    p = sub.add_parser("report",
                       help="map scatter SVGs and region-fraction CSV")
    _add_common(p)
    p.add_argument("--buffers", nargs="*", default=None)
    p.set_defaults(func=cmd_report, stage="report")

    p = sub.add_parser("ablation",
                       help="strategy x k x seed grid -> long CSV")
    _add_common(p)
    p.add_argument("--strategies",
                   default="cabi,bomi,forward,backward,random,ensemble-variance")
    p.add_argument("--ks", default="0,10,20,50,100")
    p.add_argument("--seeds", default=None)
    p.add_argument("--fwd-horizon", type=int, default=None)
    p.add_argument("--bwd-horizon", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--learner-steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.set_defaults(func=cmd_ablation, stage="ablation")
    return parser


def _resolve_defaults(args):
    """Explicit flag > config file value > builtin default."""
    cfg = load_config(args.config) if getattr(args, "config", None) \
        else ExperimentConfig()
    builtin = {
        "collect": {"env": cfg.env, "steps": cfg.collect_steps},
        "train-models": {
            "epochs": cfg.models.epochs,
            "cvae_epochs": cfg.models.cvae_epochs,
            "cvae_kl_weight": cfg.models.cvae_kl_weight,
            "holdout": cfg.models.holdout,
            "batch_size": cfg.models.batch_size,
            "lr": cfg.models.lr,
            "normalize_inputs": cfg.models.normalize_inputs,
        },
        "augment": {
            "strategy": cfg.strategy,
            "k": cfg.rollout.k,
            "fwd_horizon": cfg.rollout.fwd_horizon,
            "bwd_horizon": cfg.rollout.bwd_horizon,
            "count": cfg.rollout.total,
            "batch_anchors": cfg.rollout.batch_anchors,
            "check_mode": cfg.rollout.check_mode,
        },
        "train-policy": {
            "eta": cfg.eta,
            "steps": cfg.learner.steps,
            "batch_size": cfg.learner.batch_size,
        },
        "eval": {"episodes": cfg.eval_episodes},
        "ablation": {
            "seeds": ",".join(str(s) for s in cfg.seeds),
            "fwd_horizon": cfg.rollout.fwd_horizon,
            "bwd_horizon": cfg.rollout.bwd_horizon,
            "count": cfg.rollout.total,
            "eta": cfg.eta,
            "learner_steps": 20_000,
            "batch_size": cfg.learner.batch_size,
            "episodes": cfg.eval_episodes,
        },
    }
    for attr, value in builtin.get(args.command, {}).items():
        if getattr(args, attr, None) is None:
            setattr(args, attr, value)
    if args.out is None and getattr(args, "config", None):
        args.out = cfg.out_dir


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _resolve_defaults(args)
        args.func(args)
    except StageError as e:
        print(f"stage {e.stage} failed: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # pragma: no cover - defensive
        print(f"stage {getattr(args, 'stage', '?')} failed: "
              f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
