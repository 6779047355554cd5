"""Flat ``key = value`` config files and the run configuration.

One config format serves run configs and checkpoint metadata: one
``key = value`` pair per line, ``#`` starts a comment, unknown keys are
an error (typos should not pass silently).  CLI flags override file
values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

__all__ = ["parse_kv_text", "format_kv", "RunConfig", "load_run_config"]


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv(pairs: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


@dataclass
class RunConfig:
    """Everything a pretraining or finetuning run needs.

    ``arms`` selects which pretraining loss terms are backpropagated;
    both are always computed and logged.  ``precision`` is "f64" for
    verification-grade runs and "f32" for faster training.
    """

    seed: int = 0
    data: str = "data"
    epochs: int = 20
    finetune_epochs: int = 150
    batch_size: int = 4
    lr: float = 1e-3
    finetune_lr: float = 3e-4
    weight_decay: float = 1e-7
    lam: float = 0.01          # config key: lambda
    arms: tuple = ("occ", "feat")
    fraction: float = 1.0
    ckpt: str = ""
    precision: str = "f64"
    n_i: int = 16
    n_b: int = 32
    val_count: int = 16

    def __post_init__(self):
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")
        bad = [a for a in self.arms if a not in ("occ", "feat")]
        if bad:
            raise ValueError(f"unknown loss arms {bad}; choose from occ, feat")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")


# config-file key → dataclass attribute (only where they differ)
_KEY_TO_ATTR = {"lambda": "lam"}
_ATTR_TO_KEY = {v: k for k, v in _KEY_TO_ATTR.items()}


def _parse_arms(text: str) -> tuple:
    items = tuple(sorted({p.strip() for p in text.split(",") if p.strip()}))
    return items


def _coerce(attr: str, text: str, current):
    if attr == "arms":
        return _parse_arms(text)
    if isinstance(current, bool):  # pragma: no cover - no bool fields today
        return text.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    return text


def load_run_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from defaults, then a file, then overrides."""
    cfg = RunConfig()
    valid = {f.name for f in fields(RunConfig)}

    def apply(pairs: dict, source: str):
        for key, value in pairs.items():
            attr = _KEY_TO_ATTR.get(key, key)
            if attr not in valid:
                raise ValueError(f"{source}: unknown config key {key!r}")
            if isinstance(value, str):
                value = _coerce(attr, value, getattr(cfg, attr))
            setattr(cfg, attr, value)

    if path:
        apply(parse_kv_text(open(path).read(), source=path), path)
    if overrides:
        apply(overrides, "<cli>")
    cfg.__post_init__()
    return cfg


def run_config_to_kv(cfg: RunConfig) -> dict[str, str]:
    pairs = {}
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if f.name == "arms":
            value = ",".join(value)
        pairs[_ATTR_TO_KEY.get(f.name, f.name)] = str(value)
    return pairs
