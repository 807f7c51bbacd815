"""Plain-text key=value run configuration.

Precedence: command-line overrides > config file > built-in defaults.
Stage hyperparameters use dotted keys, e.g. `trajpred.epochs=6` or
`fusion.vam_proj_freeze_epochs=15`.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def load_config_file(path) -> dict:
    cfg = {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, "
                              f"got {raw!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def merge(defaults: dict, file_cfg: dict | None,
          overrides: dict | None) -> dict:
    out = dict(defaults)
    for layer in (file_cfg, overrides):
        if layer:
            out.update({k: v for k, v in layer.items() if v is not None})
    return out


def get_int(cfg: dict, key: str, default: int) -> int:
    value = cfg.get(key, default)
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key} must be an integer, "
                          f"got {value!r}") from None


def get_float(cfg: dict, key: str, default: float) -> float:
    value = cfg.get(key, default)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key} must be a number, "
                          f"got {value!r}") from None


def stage_specs_from_config(cfg: dict) -> dict:
    """Apply `<stage>.<field>` keys on top of the default schedule."""
    from .training import default_stages

    specs = default_stages()
    for stage, spec in specs.items():
        specs[stage] = spec.replace(
            peak_lr=get_float(cfg, f"{stage}.peak_lr", spec.peak_lr),
            epochs=get_int(cfg, f"{stage}.epochs", spec.epochs),
            batch_size=get_int(cfg, f"{stage}.batch_size", spec.batch_size),
            vam_proj_freeze_epochs=get_int(
                cfg, f"{stage}.vam_proj_freeze_epochs",
                spec.vam_proj_freeze_epochs),
            max_train_samples=get_int(cfg, f"{stage}.max_train_samples",
                                      spec.max_train_samples),
        )
    return specs


# Schedule that finishes on a desk CPU. The architecture is untouched;
# epochs and per-stage sample budgets shrink, and peak LRs rise because
# the reference schedule's step counts (tens of thousands) do not exist
# at this scale. Documented in the README.
DESK_SCALE = {
    "trajpred.epochs": "10",
    "trajpred.peak_lr": "1e-3",
    "trajpred.batch_size": "16",
    "sam.epochs": "3",
    "sam.peak_lr": "1.5e-4",
    "van1.epochs": "2",
    "van1.peak_lr": "3e-4",
    "van1.max_train_samples": "1200",
    "van2.epochs": "2",
    "van2.peak_lr": "3e-4",
    "van2.max_train_samples": "1200",
    "fusion.epochs": "24",
    "fusion.peak_lr": "1e-3",
    "fusion.vam_proj_freeze_epochs": "8",
    "overlap": "0.85",
    "van_input_size": "32",
}
