"""
Plain ``key = value`` experiment configuration with includes.

Lines starting with ``#`` are comments.  ``include = other.cfg`` splices in
another file (relative to the including file); later assignments override
earlier ones, so a file can include a base config and then adjust it.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError

__all__ = ["ExperimentConfig", "EXPERIMENTS", "load_config", "parse_config_text"]

EXPERIMENTS = ("eig", "spectral-probe", "observability", "cost-curve", "synthesize", "three-sphere")

#: defaults shared by every experiment (the 1D reference configuration)
DEFAULTS = {
    "dimension": "1",
    "extent": "0,1",
    "n_interior": "399",
    "coefficient": "constant:1",
    "omega": "interval:0.45,0.55",
    "delta_grid": "0.02,0.05,0.1,0.2,0.3",
    "T_grid": "0.5,0.35,0.25,0.18,0.125",
    "lambda_grid": "auto",
    "lambda_count": "12",
    "c0": "auto",
    "n_modes": "200",
    "tol": "1e-8",
    "cn_steps": "4096",
    "cn_tol": "1e-5",
    "projection_tol": "1e-9",
    "seed": "0",
    "observability_T": "1e-4",
    "u0_delta": "0.1",
    "include_omega": "true",
    "methods": "three-phase,gramian-optimal",
    "R1": "0.5",
    "R3": "1.5",
    "h": "0.0078125",
    "window": "0.35,5.933185307179586",
    "r0": "auto",
    "r1": "0.1",
    "r2": "0.3",
    "n_samples": "30",
    "length_scale": "0.1",
}


def _read(path: Path, seen: tuple, out: dict) -> None:
    path = path.resolve()
    if path in seen:
        raise ValidationError(f"include cycle through {path}")
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, value = key.strip(), value.strip()
        if key == "include":
            _read(path.parent / value, seen + (path,), out)
        else:
            out[key] = value


def parse_config_text(text: str) -> dict:
    """Parse config text without includes (for tests and inline use)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"line {lineno}: expected key = value")
        if key.strip() == "include":
            raise ValidationError("include is only supported for config files")
        out[key.strip()] = value.strip()
    return out


def _floats(text, name):
    text = text.strip()
    if not text:
        return []
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ValidationError(f"{name}: expected comma-separated numbers, got {text!r}") from None


def _float(text, name):
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"{name}: expected a number, got {text!r}") from None


def _int(text, name):
    try:
        return int(text)
    except ValueError:
        raise ValidationError(f"{name}: expected an integer, got {text!r}") from None


def _bool(text, name):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"{name}: expected a boolean, got {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings.

    ``raw`` holds the resolved string values (defaults merged with the
    file); :attr:`digest` hashes their canonical rendering.
    """

    experiment: str
    raw: dict = field(repr=False)

    # ---- derived typed views ------------------------------------------
    def get(self, key):
        return self.raw[key]

    def float(self, key):
        return _float(self.raw[key], key)

    def int(self, key):
        return _int(self.raw[key], key)

    def floats(self, key):
        return _floats(self.raw[key], key)

    def bool(self, key):
        return _bool(self.raw[key], key)

    def optional_float(self, key):
        v = self.raw.get(key, "auto").strip().lower()
        return None if v in ("auto", "none", "") else _float(v, key)

    @property
    def dimension(self) -> int:
        return self.int("dimension")

    @property
    def extent(self):
        vals = self.floats("extent")
        d = self.dimension
        if len(vals) != 2 * d:
            raise ValidationError(f"extent: expected {2 * d} numbers for dimension {d}")
        return tuple((vals[2 * k], vals[2 * k + 1]) for k in range(d))

    @property
    def n_interior(self):
        vals = [int(v) for v in self.floats("n_interior")]
        return vals[0] if len(vals) == 1 else tuple(vals)

    @property
    def seed(self) -> int:
        return self.int("seed")

    def canonical(self) -> str:
        keys = sorted(self.raw)
        return "".join(f"{k}={self.raw[k]}\n" for k in keys) + f"experiment={self.experiment}\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def validate(self) -> None:
        """Range checks common to all experiments."""
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.experiment!r}")
        if self.dimension not in (1, 2):
            raise ValidationError("dimension must be 1 or 2")
        _ = self.extent
        exp = self.experiment
        if exp in ("cost-curve", "synthesize"):
            T = self.floats("T_grid")
            if not T:
                raise ValidationError("T_grid is empty")
            bad = [t for t in T if not 0 < t < 1]
            if bad:
                raise ValidationError(f"T_grid values must lie in (0, 1): {bad}")
            if self.int("n_modes") < 1:
                raise ValidationError("n_modes must be positive")
            c0 = self.optional_float("c0")
            if c0 is not None and not c0 > 0:
                raise ValidationError("c0 must be positive")
        if exp in ("spectral-probe", "observability", "cost-curve"):
            d = self.floats("delta_grid")
            if exp != "cost-curve" and not d:
                raise ValidationError("delta_grid is empty")
            if any(not (x >= 0 and math.isfinite(x)) for x in d):
                raise ValidationError("delta values must be finite and >= 0")
        if exp == "observability" and not self.float("observability_T") > 0:
            raise ValidationError("observability_T must be positive")
        if exp == "three-sphere":
            if self.int("n_samples") < 20:
                raise ValidationError("three-sphere needs at least 20 samples")
            if not self.float("h") > 0:
                raise ValidationError("h must be positive")
        for key in ("tol", "cn_tol", "projection_tol"):
            if not self.float(key) > 0:
                raise ValidationError(f"{key} must be positive")


def load_config(path, experiment: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file (with includes) and merge it over the defaults.

    ``experiment`` (e.g. from the CLI subcommand) takes precedence over an
    ``experiment`` key in the file; a mismatch between the two is an error.
    """
    values = {}
    if path is not None:
        _read(Path(path), (), values)
    if overrides:
        values.update({k: str(v) for k, v in overrides.items()})
    file_exp = values.pop("experiment", None)
    if experiment is not None and file_exp is not None and file_exp != experiment:
        raise ValidationError(f"config is for experiment {file_exp!r}, not {experiment!r}")
    exp = experiment or file_exp
    if exp is None:
        raise ValidationError("no experiment given")
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    raw = dict(DEFAULTS)
    raw.update(values)
    cfg = ExperimentConfig(exp, raw)
    cfg.validate()
    return cfg
