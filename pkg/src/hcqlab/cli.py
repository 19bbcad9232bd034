"""Command-line experiment runner.

    hcqlab synth  --out data.csv [--n 231 --dim 8 --separation 6 --pixels]
    hcqlab train  [--config exp.yaml] [--model hybrid-alex] [--seed 0] [--out runs]
    hcqlab attack [--config exp.yaml] [--checkpoint runs/<id>/checkpoint.json] [--attack pgd]
    hcqlab search [--config exp.yaml] [--limit 20]
    hcqlab report runs/<id>

Run artifacts go to ``<out>/<run-id>/``.  Exit codes: 0 success, 1 runtime
failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import jsonschema

from hcqlab import attacks, data, metrics, search
from hcqlab import config as C
from hcqlab import model as M

REPORT_SCHEMA = "hcqlab.report/v1"


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------------
# shared helpers

def _floats(v):
    return repr(v) if isinstance(v, float) else v


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_floats(v) for v in row])
    path.write_text(buf.getvalue())


def read_csv(path: Path) -> list:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def load_dataset(cfg: dict) -> data.Dataset:
    ds = cfg["dataset"]
    if ds["source"] == "file":
        return data.load_features(ds["path"])
    if ds["source"] == "pixels":
        return data.synth_pixel_dataset(ds["n_samples"], ds["seed"])
    return data.synth_dataset(ds["n_samples"], ds["feature_dim"], float(ds["separation"]), ds["seed"])


def prepare_data(cfg: dict) -> tuple:
    """Deterministic (train, test) pair for a configuration."""
    ds_cfg = cfg["dataset"]
    full = load_dataset(cfg)
    n_train = ds_cfg["n_train"]
    if n_train is not None and n_train >= len(full):
        raise C.ConfigError(f"dataset.n_train: {n_train} is not smaller than the dataset size {len(full)}")
    train, test = data.split(full, float(ds_cfg["train_fraction"]), ds_cfg["seed"],
                             n_train=n_train, stratify=ds_cfg["stratify"])
    normalize = ds_cfg["normalize"]
    if normalize is None:
        normalize = ds_cfg["source"] != "pixels"
    if normalize:
        train, test, _ = data.normalize(train, test)
    return train, test


def attack_spec(cfg: dict) -> attacks.AttackSpec:
    a = cfg["attack"]
    clip = a["clip"]
    if clip is None and cfg["dataset"]["source"] == "pixels":
        clip = [0.0, 1.0]
    return attacks.AttackSpec(
        kind="fgsa",
        pgd_steps=a["pgd_steps"],
        pgd_step_size=a["pgd_step_size"],
        random_start=a["random_start"],
        clip_min=None if clip is None else float(clip[0]),
        clip_max=None if clip is None else float(clip[1]),
        seed=cfg["seed"],
    )


def run_dir(cfg: dict, default_id: str) -> Path:
    d = Path(cfg["out"]) / (cfg["run_id"] or default_id)
    d.mkdir(parents=True, exist_ok=True)
    return d


def train_run_id(cfg: dict) -> str:
    return f"{cfg['model']['variant']}-s{cfg['seed']}"


# ----------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    if args.pixels:
        ds = data.synth_pixel_dataset(args.n, args.seed)
    else:
        ds = data.synth_dataset(args.n, args.dim, args.separation, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save_features(ds, out)
    print(f"wrote {len(ds)} samples x {ds.feature_dim} features to {out}")
    return 0


def cmd_train(cfg: dict) -> Path:
    train_set, test_set = prepare_data(cfg)
    tcfg = C.train_config(cfg)
    variant = cfg["model"]["variant"]
    mdl = M.build_model(variant, train_set.feature_dim, cfg["seed"], input_scaling=cfg["model"]["input_scaling"])
    mdl, history = M.train(mdl, train_set, tcfg, test_set)
    out = run_dir(cfg, train_run_id(cfg))
    (out / "config.yaml").write_text(C.dump(cfg))
    M.save_checkpoint(mdl, out / "checkpoint.json", tcfg, cfg["seed"])
    write_csv(out / "history.csv", M.HISTORY_FIELDS, [[r[k] for k in M.HISTORY_FIELDS] for r in history])
    cm = M.evaluate(mdl, test_set)
    (out / "metrics.csv").write_text(metrics.format_rows([metrics.report_row(variant, cm)]))
    last = history[-1]
    print(f"{variant}: test accuracy {last['test_acc']:.4f} after {tcfg.epochs} epochs -> {out}")
    return out


def cmd_attack(cfg: dict, checkpoint=None) -> Path:
    out = run_dir(cfg, train_run_id(cfg))
    ckpt = Path(checkpoint) if checkpoint else out / "checkpoint.json"
    if not ckpt.exists():
        raise UsageError(f"checkpoint not found: {ckpt}")
    mdl, _ = M.load_checkpoint(ckpt)
    _, test_set = prepare_data(cfg)
    if mdl.feature_dim != test_set.feature_dim:
        raise M.CheckpointError(
            f"checkpoint expects {mdl.feature_dim} features but the configured dataset has {test_set.feature_dim}"
        )
    eps = C.epsilon_grid(cfg)
    spec = attack_spec(cfg)
    summary = []
    for kind in cfg["attack"]["kinds"]:
        result = attacks.epsilon_sweep(mdl, test_set, kind, eps, spec)
        (out / f"sweep_{kind}.csv").write_text(result.to_csv())
        low = result.minimum()
        summary.append([kind, low.clean_acc, low.adv_acc, low.epsilon])
        print(f"{kind}: lowest accuracy {low.adv_acc:.4f} at epsilon {low.epsilon}")
    write_csv(out / "sweep_summary.csv", ("attack", "clean_acc", "min_adv_acc", "epsilon"), summary)
    return out


def cmd_search(cfg: dict, enumerate_only: bool = False) -> Path:
    s = cfg["search"]
    specs = search.enumerate_space(search.SearchSpace())
    if s["limit"] is not None:
        specs = specs[: s["limit"]]
    out = run_dir(cfg, f"search-s{cfg['seed']}")
    if enumerate_only:
        write_csv(out / "space.csv", ("index", "spec_id", "n_qubits", "n_trainable"),
                  [[i, sp.name, sp.n_qubits, sp.n_trainable] for i, sp in enumerate(specs)])
        print(f"enumerated {len(specs)} circuits -> {out / 'space.csv'}")
        return out
    train_set, val_set = prepare_data(cfg)
    t = cfg["train"]
    base = search.default_search_config(cfg["seed"], s["budget"])
    overrides = {k: t[k] for k in ("batch_size", "learning_rate", "optimizer", "step_size", "gamma") if t[k] is not None}
    base = replace(base, **overrides)
    records = search.run_search(specs, train_set, val_set, s["budget"], float(s["probe_epsilon"]), cfg["seed"],
                                base, float(s["weight"]), s["workers"])
    (out / "config.yaml").write_text(C.dump(cfg))
    (out / "search.csv").write_text(search.records_csv(records, s["include_timing"]))
    top = records
    if s["refine_epochs"]:
        top = search.refine_top_k(records, train_set, val_set, s["top_k"], s["refine_epochs"],
                                  float(s["probe_epsilon"]), cfg["seed"], base, float(s["weight"]))
    (out / "search_topk.json").write_text(search.top_k_json(top, s["top_k"]))
    best = records[0]
    print(f"searched {len(records)} circuits; best {best.spec_id} objective {best.objective:.4f} -> {out}")
    return out


def _report_schema() -> dict:
    return json.loads(resources.files("hcqlab").joinpath("schemas/report.schema.json").read_text())


def _num(v: str):
    try:
        f = float(v)
    except ValueError:
        return v
    return int(f) if v.lstrip("-").isdigit() else f


def cmd_report(run_path) -> Path:
    d = Path(run_path)
    if not d.is_dir():
        raise UsageError(f"run directory not found: {d}")
    required = ["config.yaml", "checkpoint.json", "history.csv", "metrics.csv"]
    missing = [f for f in required if not (d / f).exists()]
    kinds = []
    if (d / "config.yaml").exists():
        cfg = C.load_config(d / "config.yaml")
        kinds = cfg["attack"]["kinds"]
        missing += [f"sweep_{k}.csv" for k in kinds if not (d / f"sweep_{k}.csv").exists()]
    else:
        cfg = None
        missing.append("sweep_<attack>.csv")
    if missing:
        raise UsageError(f"{d}: missing artifacts: {', '.join(missing)}")
    metric_rows = [{k: _num(v) for k, v in r.items()} for r in read_csv(d / "metrics.csv")]
    for r in metric_rows:
        cm = metrics.ConfusionMatrix(r["tp"], r["fp"], r["tn"], r["fn"])
        recomputed = metrics.compute_metrics(cm)
        for name, val in vars(recomputed).items():
            if r[name] != val:
                raise RuntimeError(f"{d / 'metrics.csv'}: {name} does not match the stored confusion counts")
    sweeps = {}
    for k in kinds:
        rows = [{key: float(v) for key, v in r.items()} for r in read_csv(d / f"sweep_{k}.csv")]
        low = min(rows, key=lambda r: (r["adv_acc"], r["epsilon"]))
        sweeps[k] = {"rows": rows, "minimum": {"epsilon": low["epsilon"], "adv_acc": low["adv_acc"]}}
    history = [{k: _num(v) for k, v in r.items()} for r in read_csv(d / "history.csv")]
    report = {
        "schema": REPORT_SCHEMA,
        "run_id": d.name,
        "config": cfg,
        "checkpoint": "checkpoint.json",
        "metrics": metric_rows,
        "history": history,
        "sweeps": sweeps,
    }
    jsonschema.validate(report, _report_schema())
    (d / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(f"wrote {d / 'report.json'}")
    return d / "report.json"


# ----------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hcqlab", description="Hybrid quantum-classical robustness lab")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output root directory")
        sp.add_argument("--run-id", help="run directory name (default derived from model and seed)")
        sp.add_argument("--model", choices=sorted(M.VARIANTS))
        sp.add_argument("--profile", choices=M.PROFILES)
        sp.add_argument("--epochs", type=int)

    sp = sub.add_parser("synth", help="write a synthetic feature CSV")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=231)
    sp.add_argument("--dim", type=int, default=8)
    sp.add_argument("--separation", type=float, default=6.0)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--pixels", action="store_true", help="8x8 bar images instead of Gaussian clusters")

    common(sub.add_parser("train", help="train a model variant"))

    sp = sub.add_parser("attack", help="epsilon sweeps against a trained checkpoint")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--attack", choices=attacks.KINDS, action="append", help="repeatable; default all")
    sp.add_argument("--eps-start", type=float)
    sp.add_argument("--eps-end", type=float)
    sp.add_argument("--eps-step", type=float)

    sp = sub.add_parser("search", help="circuit-architecture search")
    common(sp)
    sp.add_argument("--limit", type=int, help="only the first N enumerated circuits")
    sp.add_argument("--budget", type=int, help="epochs per candidate")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--enumerate-only", action="store_true", help="list the space without training")

    sp = sub.add_parser("report", help="merge a run directory into report.json")
    sp.add_argument("run_dir")
    return p


def config_from_args(args) -> dict:
    overrides = {
        "seed": args.seed,
        "out": args.out,
        "run_id": args.run_id,
        "model.variant": args.model,
        "model.profile": args.profile,
        "train.epochs": args.epochs,
    }
    if getattr(args, "attack", None):
        overrides["attack.kinds"] = args.attack
    if getattr(args, "limit", None) is not None:
        overrides["search.limit"] = args.limit
    if getattr(args, "budget", None) is not None:
        overrides["search.budget"] = args.budget
    if getattr(args, "workers", None) is not None:
        overrides["search.workers"] = args.workers
    cfg = C.load_config(args.config, overrides)
    eps_flags = [getattr(args, f"eps_{k}", None) for k in ("start", "end", "step")]
    if any(v is not None for v in eps_flags):
        grid = cfg["attack"]["epsilons"]
        if not isinstance(grid, dict):
            grid = {"start": 0.05, "end": 0.5, "step": 0.05}
        for key, v in zip(("start", "end", "step"), eps_flags):
            if v is not None:
                grid[key] = v
        cfg["attack"]["epsilons"] = grid
        C.validate(cfg)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "report":
            cmd_report(args.run_dir)
            return 0
        cfg = config_from_args(args)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "attack":
            cmd_attack(cfg, args.checkpoint)
        elif args.command == "search":
            cmd_search(cfg, args.enumerate_only)
        return 0
    except (C.ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
