"""Experiment configuration files.

A config is a TOML file::

    kind = "growth-xi"        # see KINDS
    seed = 1
    trials = 10000
    workers = 1               # optional
    out = "runs/growth"       # optional output directory

    [graph]                   # optional; defaults to Z^3 of adequate size
    type = "grid"             # grid | stitched | rotated
    dim = 3
    half = 130                # box [-half, half]^dim
    spacing = 1
    weight = 1

    [params]                  # per-kind parameters, see PARAMS
    radii = [16, 32, 64, 128]

``start`` (top level) gives the start vertex coordinates; it defaults to
the origin on grids and to the vertex nearest the middle of the region
otherwise.  Unknown keys anywhere are errors.  Trial counts are scaled
by ``--trials-scale``.
"""
from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from fractions import Fraction

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .lattices import PAIRS, ConfigError, StitchConfig

KINDS = ("sample-lerw", "growth-xi", "quasi-loops", "isotropy", "nonintersect", "escape", "beurling",
         "coupling", "interp", "ust", "certify", "oracle-suite")

DEFAULT_TRIALS = {
    "sample-lerw": 100, "growth-xi": 10000, "quasi-loops": 2000, "isotropy": 0, "nonintersect": 20000,
    "escape": 20000, "beurling": 20000, "coupling": 10000, "interp": 2000, "ust": 1000, "certify": 0,
    "oracle-suite": 0,
}

PARAMS = {
    "sample-lerw": dict(radius=16.0, erase=True),
    "growth-xi": dict(radii=[16, 32, 64, 128]),
    "quasi-loops": dict(radii=[32, 64, 128], eps=0.4, delta_hat=0.1),
    "isotropy": dict(radii=[10, 20, 40], cells=8, mode="exact", assign="plus"),
    "nonintersect": dict(radii=[4, 8, 16, 32, 64], other=[1, 0, 0]),
    "escape": dict(radii=[16, 32, 64], normal=[0, 0, 1], offset=-4.0, variant="ball"),
    "beurling": dict(r=16.0, segment=[[5, 0, -40], [5, 0, 40]]),
    "coupling": dict(alpha=2.0, K=1.0, levels=3, inner="exact", inner_trials=20000,
                     lambdas=[0, 1, 2, 4, 6, 8]),
    "interp": dict(scales=[64, 128], domain=[[0.25, 0.25, 0.25], [0.75, 0.75, 0.75]],
                   target=[[0.0, 0.0, 0.4], [1.0, 1.0, 1.0]], point=[0.5, 0.5, 0.5],
                   pair="z3-2z3", L=16, M=[4, 8], alpha=["1/2", "3/4"], xi="random:1",
                   margin_coef=4.0, margin_power=0.75),
    "ust": dict(half=8),
    "certify": dict(sample=10000),
    "oracle-suite": dict(instances=50),
}

GRAPH_KEYS = {
    "grid": dict(type="grid", dim=3, half=None, spacing=1, weight=1),
    "stitched": dict(type="stitched", pair="z3-2z3", L=16, M=4, xi="all1", margin=4, alpha="1/2", window=None),
    "rotated": dict(type="rotated", box=[[-12, -12, -12], [13, 13, 13]]),
}

TOP_KEYS = {"kind", "seed", "trials", "workers", "out", "graph", "start", "params"}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    trials: int = 0
    workers: int | None = None
    graph: dict = field(default_factory=dict)
    start: list | None = None
    params: dict = field(default_factory=dict)
    out: str | None = None

    def resolved(self) -> dict:
        """Every setting, defaults included; enough to rerun the experiment."""
        out = dict(kind=self.kind, seed=self.seed, trials=self.trials, graph=_clean(self.graph),
                   params=_clean(self.params))
        if self.workers is not None:
            out["workers"] = self.workers
        if self.start is not None:
            out["start"] = list(self.start)
        if self.out is not None:
            out["out"] = self.out
        return out

    def scaled(self, factor: float) -> "ExperimentConfig":
        c = copy.deepcopy(self)
        if factor != 1:
            if factor <= 0:
                raise ConfigError("--trials-scale must be positive")
            c.trials = max(1, int(round(self.trials * factor))) if self.trials else 0
            if "inner_trials" in c.params:
                c.params["inner_trials"] = max(1, int(round(c.params["inner_trials"] * factor)))
        return c


def _clean(d):
    return {k: v for k, v in d.items() if v is not None}


def _coerce(name, value, default):
    if default is None or value is None:
        return value
    if name == "params.sample" and value == "all":
        return value
    if name in ("params.M", "params.alpha") and not isinstance(value, list):
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{name} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if isinstance(default, str):
        if isinstance(value, (int, float)) and name.endswith("alpha"):
            return str(value)
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{name} must be a list")
        return value
    return value


def _merge(section, given, defaults):
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    out = dict(defaults)
    for k, v in given.items():
        out[k] = _coerce(f"{section}.{k}", v, defaults[k])
    return out


def parse_config(data: dict, kind: str | None = None) -> ExperimentConfig:
    """Validate a config mapping and fill in defaults."""
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    k = data.get("kind", kind)
    if kind is not None and data.get("kind") not in (None, kind):
        raise ConfigError(f"config kind {data['kind']!r} does not match command {kind!r}")
    if k not in KINDS:
        raise ConfigError(f"unknown experiment kind {k!r}; choose from {', '.join(KINDS)}")
    seed = _coerce("seed", data.get("seed", 0), 0)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    trials = _coerce("trials", data.get("trials", DEFAULT_TRIALS[k]), 0)
    if trials < 0:
        raise ConfigError("trials must be non-negative")
    workers = data.get("workers")
    if workers is not None:
        workers = _coerce("workers", workers, 0)
        if workers < 1:
            raise ConfigError("workers must be at least 1")
    params = _merge("params", data.get("params", {}), PARAMS[k])
    g = dict(data.get("graph", {}))
    gtype = g.get("type", "stitched" if k == "certify" else "grid")
    if gtype not in GRAPH_KEYS:
        raise ConfigError(f"unknown graph type {gtype!r}")
    g = _merge("graph", {**g, "type": gtype}, GRAPH_KEYS[gtype])
    start = data.get("start")
    if start is not None and (not isinstance(start, list) or not all(isinstance(x, (int, float)) for x in start)):
        raise ConfigError("start must be a list of coordinates")
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out must be a directory path")
    cfg = ExperimentConfig(k, seed, trials, workers, g, start, params, out)
    _check(cfg)
    return cfg


def load_config(path, kind: str | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(data, kind)


def stitch_config(g: dict) -> StitchConfig:
    win = g.get("window")
    if win is not None:
        if len(win) != 2:
            raise ConfigError("graph.window must be [[lo...], [hi...]]")
        win = (tuple(int(x) for x in win[0]), tuple(int(x) for x in win[1]))
    try:
        alpha = Fraction(str(g["alpha"]))
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError(f"graph.alpha is not a fraction: {g['alpha']!r}") from e
    return StitchConfig(g["pair"], g["L"], g["M"], xi=g["xi"], margin=g["margin"], alpha=alpha, window=win)


def graph_dim(g: dict) -> int:
    if g["type"] == "grid":
        return g["dim"]
    if g["type"] == "stitched":
        return PAIRS[g["pair"]][0]
    return 3


def _check(cfg: ExperimentConfig):
    """Parameter checks that need no computation."""
    g, p = cfg.graph, cfg.params
    if g["type"] == "grid":
        if g["dim"] < 1:
            raise ConfigError("graph.dim must be positive")
        if g["half"] is not None and g["half"] < 1:
            raise ConfigError("graph.half must be positive")
        if g["spacing"] < 1 or g["weight"] <= 0:
            raise ConfigError("graph.spacing and graph.weight must be positive")
    elif g["type"] == "stitched":
        stitch_config(g)
    d = graph_dim(g)
    if cfg.start is not None and len(cfg.start) != d:
        raise ConfigError(f"start must have {d} coordinates")
    for key in ("radii", "scales"):
        if key in p:
            r = p[key]
            if not r or any(not isinstance(x, (int, float)) for x in r) or any(b <= a for a, b in zip(r, r[1:])):
                raise ConfigError(f"params.{key} must be a strictly increasing list of numbers")
    if cfg.kind == "growth-xi" and min(p["radii"]) < 8:
        raise ConfigError("growth-xi radii must be at least 8")
    if cfg.kind in ("growth-xi", "quasi-loops", "nonintersect", "escape") and len(p["radii"]) < 3:
        raise ConfigError("exponent fits need at least 3 radii")
    if cfg.kind == "quasi-loops" and not (0 < p["eps"] < 1 and 0 < p["delta_hat"] < 1):
        raise ConfigError("params.eps and params.delta_hat must lie in (0, 1)")
    if cfg.kind == "isotropy":
        if p["mode"] not in ("exact", "mc"):
            raise ConfigError("params.mode must be 'exact' or 'mc'")
        if p["assign"] not in ("plus", "minus"):
            raise ConfigError("params.assign must be 'plus' or 'minus'")
        if p["mode"] == "mc" and cfg.trials < 1:
            raise ConfigError("mc isotropy needs trials")
        if p["cells"] < 4:
            raise ConfigError("params.cells must be at least 4")
    if cfg.kind == "escape" and p["variant"] not in ("ball", "slab"):
        raise ConfigError("params.variant must be 'ball' or 'slab'")
    if cfg.kind == "nonintersect" and len(p["other"]) != d:
        raise ConfigError(f"params.other must have {d} coordinates")
    if cfg.kind == "coupling":
        if not 0 < p["alpha"] <= d - 1:
            raise ConfigError("params.alpha must lie in (0, d-1]")
        if p["levels"] < 1 or p["K"] <= 0:
            raise ConfigError("params.levels must be >= 1 and params.K > 0")
        if p["inner"] not in ("exact", "mc"):
            raise ConfigError("params.inner must be 'exact' or 'mc'")
    if cfg.kind == "interp":
        n = len(p["scales"])
        for key in ("M", "alpha"):
            if not isinstance(p[key], list):
                p[key] = [p[key]] * n
            if len(p[key]) != n:
                raise ConfigError(f"params.{key} needs one entry per scale")
        for M, a in zip(p["M"], p["alpha"]):
            StitchConfig(p["pair"], p["L"], int(M), xi="all1", alpha=Fraction(str(a)))
        if p["pair"] not in PAIRS or PAIRS[p["pair"]][0] != 3:
            raise ConfigError("interp is set up for the 3-D pairs")
    if cfg.kind in ("certify",) and g["type"] == "grid":
        raise ConfigError("certify needs a stitched or rotated graph")
    if cfg.kind == "certify":
        s = p["sample"]
        if not (s == "all" or (isinstance(s, int) and s > 0)):
            raise ConfigError("params.sample must be a positive integer or 'all'")
    if cfg.kind == "oracle-suite" and p["instances"] < 1:
        raise ConfigError("params.instances must be positive")
