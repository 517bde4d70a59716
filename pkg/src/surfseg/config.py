"""Run configuration: defaults, file parsing, validation.

A config file is flat ``key = value`` text, one pair per line, ``#``
comments allowed. Keys match the CLI flag names with underscores
(``sigma``, ``lambda``, ``mu``, ``dt``, ``steps``, ``n_sub``, ``n0``,
``l_min``, ``l_max``, ``grid_a``, ``delta0``, ``delete_tol``,
``color_space``, ``solver``, ``tol``, ``seed``,
``stop_on_energy_rise``). Command-line flags override file values.

Scale-dependent fields (``l_min``, ``l_max``, ``grid_a``, ``delta0``,
``delete_tol``) may be left unset; :meth:`RunConfig.resolve` fills them
from the mesh and the initial curve spacing.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = ["RunConfig", "load_config"]


@dataclass
class RunConfig:
    """All knobs of a segmentation run.

    ``lam`` holds the data weights: one value for gray, one per channel
    (or a single shared value) for rgb, and (chroma, brightness) for
    cb. The config key and CLI flag are spelled ``lambda``.
    """

    sigma: float = 1.0
    lam: tuple = (1.0,)
    mu: float = 0.0
    dt: float = 1e-3
    steps: int = 100
    n_sub: int = 10
    n0: int = 4
    l_min: float = None
    l_max: float = None
    grid_a: float = None
    delta0: float = None
    delete_tol: float = None
    color_space: str = "gray"
    solver: str = "direct"
    tol: float = 1e-10
    seed: int = 0
    stop_on_energy_rise: bool = False

    def validate(self):
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if any(l < 0 for l in self.lam) or self.mu < 0:
            raise ConfigError("lambda and mu must be nonnegative")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if self.n_sub < 1 or self.n0 < 1:
            raise ConfigError("n_sub and n0 must be at least 1")
        if self.color_space not in ("gray", "rgb", "cb"):
            raise ConfigError(f"unknown color_space: {self.color_space}")
        if self.solver not in ("direct", "cg"):
            raise ConfigError(f"unknown solver: {self.solver}")
        if self.grid_a is not None and self.delta0 is not None:
            if self.grid_a * np.sqrt(3.0) >= self.delta0:
                raise ConfigError(
                    "grid_a too coarse: grid_a*sqrt(3) must stay below delta0")
        for name in ("l_min", "l_max", "grid_a", "delta0", "delete_tol"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigError(f"{name} must be positive when given")

    def resolve(self, mesh, network):
        """Fill unset scale-dependent fields from mesh and curves.

        The tubular radius ``delta0`` defaults to twice the largest
        per-vertex average edge length. Spacing bounds default to half
        and twice the initial average node spacing. The grid cell size
        defaults just under the finer of the sheet-safety bound
        (delta0/sqrt(3)) and the node spacing bound (l_min), so only
        genuinely pinching curve parts collide.
        """
        if self.delta0 is None:
            self.delta0 = 2.0 * float(mesh.vertex_avg_edge.max())
        spacings = [c.length() / c.num_segments for c in network.curves
                    if c.num_segments > 0]
        h0 = float(np.mean(spacings)) if spacings else mesh.mean_edge_length
        if self.l_min is None:
            self.l_min = 0.5 * h0
        if self.l_max is None:
            self.l_max = 2.0 * h0
        if self.grid_a is None:
            self.grid_a = 0.9 * min(self.delta0, self.l_min) / np.sqrt(3.0)
        if self.delete_tol is None:
            self.delete_tol = 3.0 * self.l_min
        self.validate()
        return self


_FIELD_BY_KEY = {
    "sigma": ("sigma", float),
    "lambda": ("lam", "lam"),
    "mu": ("mu", float),
    "dt": ("dt", float),
    "steps": ("steps", int),
    "n_sub": ("n_sub", int),
    "n0": ("n0", int),
    "l_min": ("l_min", float),
    "l_max": ("l_max", float),
    "grid_a": ("grid_a", float),
    "delta0": ("delta0", float),
    "delete_tol": ("delete_tol", float),
    "color_space": ("color_space", str),
    "solver": ("solver", str),
    "tol": ("tol", float),
    "seed": ("seed", int),
    "stop_on_energy_rise": ("stop_on_energy_rise", "bool"),
}


def _parse_bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"bad boolean value: {text!r}")


def parse_lambda(text) -> tuple:
    """Parse the lambda setting: a number or a comma-separated list."""
    if isinstance(text, (int, float)):
        return (float(text),)
    try:
        return tuple(float(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"bad lambda value: {text!r}") from exc


def load_config(path, base: RunConfig = None) -> RunConfig:
    """Read a flat key=value config file over an optional base config."""
    cfg = base if base is not None else RunConfig()
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _FIELD_BY_KEY:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            attr, conv = _FIELD_BY_KEY[key]
            if conv == "lam":
                setattr(cfg, attr, parse_lambda(value))
            elif conv == "bool":
                setattr(cfg, attr, _parse_bool(value))
            else:
                try:
                    setattr(cfg, attr, conv(value))
                except ValueError as exc:
                    raise ConfigError(
                        f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return cfg
