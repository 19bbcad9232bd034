"""Experiment configuration: a versioned YAML document merged over defaults.

Unknown keys are rejected with their dotted path, so typos fail loudly.
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from hcqlab import attacks
from hcqlab import model as M

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "out": "runs",
    "run_id": None,
    "dataset": {
        "source": "synthetic",  # synthetic | pixels | file
        "path": None,
        "n_samples": 231,
        "feature_dim": 8,
        "separation": 6.0,
        "seed": 7,
        "n_train": 182,  # exact training-set size; null -> use train_fraction
        "train_fraction": 0.8,
        "stratify": True,
        "normalize": None,  # null -> on for synthetic/file, off for pixels
    },
    "model": {
        "variant": "hybrid-alex",
        "profile": "tuned",
        "input_scaling": "tanh_half_pi",
    },
    "train": {
        "epochs": 25,
        "batch_size": None,  # null -> variant/profile default
        "learning_rate": None,
        "optimizer": "adam",
        "step_size": None,
        "gamma": 0.1,
    },
    "attack": {
        "kinds": ["ga", "fgsa", "pgd"],
        "epsilons": {"start": 0.05, "end": 0.5, "step": 0.05},
        "pgd_steps": 10,
        "pgd_step_size": None,
        "random_start": True,
        "clip": None,  # null -> [0, 1] for pixels, off otherwise
    },
    "search": {
        "budget": 5,
        "probe_epsilon": 0.1,
        "weight": 0.5,
        "limit": None,
        "top_k": 3,
        "refine_epochs": 0,
        "workers": 1,
        "include_timing": False,
    },
}


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown configuration key")
        if isinstance(base[key], dict) and key != "epsilons":
            if not isinstance(val, dict):
                raise ConfigError(f"{where}: expected a mapping")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def load_config(path=None, overrides: dict = None) -> dict:
    """Defaults, then the YAML file (if any), then ``overrides`` (dotted keys)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: invalid YAML: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        cfg = _merge(cfg, doc)
    for dotted, val in (overrides or {}).items():
        if val is None:
            continue
        *parents, leaf = dotted.split(".")
        node = cfg
        for key in parents:
            node = node[key]
        node[leaf] = val
    validate(cfg)
    return cfg


def _positive_int(cfg, dotted, allow_none=False):
    node = cfg
    for key in dotted.split("."):
        node = node[key]
    if node is None and allow_none:
        return
    if isinstance(node, bool) or not isinstance(node, int) or node < 1:
        raise ConfigError(f"{dotted}: must be a positive integer, got {node!r}")


def validate(cfg: dict) -> None:
    if cfg["version"] != CONFIG_VERSION:
        raise ConfigError(f"version: unsupported config version {cfg['version']!r}")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed: must be an integer")
    ds = cfg["dataset"]
    if ds["source"] not in ("synthetic", "pixels", "file"):
        raise ConfigError(f"dataset.source: must be synthetic, pixels or file, got {ds['source']!r}")
    if ds["source"] == "file":
        if not ds["path"]:
            raise ConfigError("dataset.path: required when dataset.source is 'file'")
        if not Path(ds["path"]).exists():
            raise ConfigError(f"dataset.path: file not found: {ds['path']}")
    _positive_int(cfg, "dataset.n_samples")
    _positive_int(cfg, "dataset.feature_dim")
    _positive_int(cfg, "dataset.n_train", allow_none=True)
    if not 0 < float(ds["train_fraction"]) < 1:
        raise ConfigError("dataset.train_fraction: must lie in (0, 1)")
    m = cfg["model"]
    if m["variant"] not in M.VARIANTS:
        raise ConfigError(f"model.variant: must be one of {sorted(M.VARIANTS)}, got {m['variant']!r}")
    if m["profile"] not in M.PROFILES:
        raise ConfigError(f"model.profile: must be one of {list(M.PROFILES)}, got {m['profile']!r}")
    if m["input_scaling"] not in M.SCALINGS:
        raise ConfigError(f"model.input_scaling: must be one of {list(M.SCALINGS)}")
    _positive_int(cfg, "train.epochs")
    _positive_int(cfg, "train.batch_size", allow_none=True)
    _positive_int(cfg, "train.step_size", allow_none=True)
    t = cfg["train"]
    if t["learning_rate"] is not None and not float(t["learning_rate"]) > 0:
        raise ConfigError("train.learning_rate: must be positive")
    if t["optimizer"] not in ("adam", "sgd"):
        raise ConfigError("train.optimizer: must be adam or sgd")
    if not 0 < float(t["gamma"]) <= 1:
        raise ConfigError("train.gamma: must lie in (0, 1]")
    a = cfg["attack"]
    kinds = a["kinds"]
    if isinstance(kinds, str):
        kinds = a["kinds"] = [kinds]
    for k in kinds:
        if k not in attacks.KINDS:
            raise ConfigError(f"attack.kinds: unknown attack {k!r}")
    eps = epsilon_grid(cfg)
    if not eps:
        raise ConfigError("attack.epsilons: grid is empty")
    if any(e < 0 for e in eps) or any(b <= a_ for a_, b in zip(eps, eps[1:])):
        raise ConfigError("attack.epsilons: must be non-negative and strictly ascending")
    _positive_int(cfg, "attack.pgd_steps")
    if a["clip"] is not None and (len(a["clip"]) != 2 or a["clip"][0] >= a["clip"][1]):
        raise ConfigError("attack.clip: must be null or [min, max] with min < max")
    _positive_int(cfg, "search.budget")
    _positive_int(cfg, "search.top_k")
    _positive_int(cfg, "search.workers")
    _positive_int(cfg, "search.limit", allow_none=True)
    if not 0 <= float(cfg["search"]["weight"]) <= 1:
        raise ConfigError("search.weight: must lie in [0, 1]")


def epsilon_grid(cfg: dict) -> list:
    e = cfg["attack"]["epsilons"]
    if isinstance(e, dict):
        try:
            return attacks.default_epsilons(float(e["start"]), float(e["end"]), float(e["step"]))
        except (KeyError, TypeError, ValueError):
            raise ConfigError("attack.epsilons: expected {start, end, step} or a list") from None
    if isinstance(e, (list, tuple)):
        return [float(v) for v in e]
    raise ConfigError("attack.epsilons: expected {start, end, step} or a list")


def train_config(cfg: dict) -> M.TrainConfig:
    t = cfg["train"]
    overrides = {k: t[k] for k in ("epochs", "batch_size", "learning_rate", "optimizer", "step_size", "gamma")
                 if t[k] is not None}
    return M.default_train_config(cfg["model"]["variant"], cfg["seed"], cfg["model"]["profile"], **overrides)


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)
