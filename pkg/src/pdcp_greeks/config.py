"""Run configuration: INI-style ``key = value`` sections plus command-line overrides.

Example::

    [problem]
    preset = 1d

    [market]
    sigma = 0.4
    r = 0.02

    [run]
    m = 200
    methods = be,cn,dirka,dirkb,lobatto
    n_list = 10,20,40,80
    grid = quadratic
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from typing import Optional

from .market import PUT_1D, PUT_ON_AVERAGE_2D, InvalidParameterError, MarketParams1D, MarketParams2D
from .stepping import GRID_KINDS, PRESET_NAMES, PenaltyConfig

PRESETS = {"1d": PUT_1D, "2d": PUT_ON_AVERAGE_2D}
DEFAULT_M = {1: 200, 2: 100}
DEFAULT_METHODS = {1: ("be", "cn", "dirka", "dirkb", "lobatto"), 2: ("be", "cn", "dirka", "dirkb")}


@dataclass
class RunConfig:
    params: object = PUT_1D
    m: int = 200
    methods: tuple = DEFAULT_METHODS[1]
    n_list: tuple = (10, 20, 40, 80)
    grid_kind: str = "quadratic"
    damping_steps: Optional[int] = None
    roi: Optional[tuple] = None
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    out: str = "results"
    jobs: Optional[int] = None  # None: one worker per available core
    cache_dir: Optional[str] = None
    reference_n: Optional[int] = None
    price_method: str = "dirka"
    price_n: int = 100

    @property
    def dims(self) -> int:
        return 1 if isinstance(self.params, MarketParams1D) else 2

    def validate(self) -> "RunConfig":
        if self.m < 3:
            raise InvalidParameterError(f"m must be at least 3, got {self.m}")
        if not self.n_list:
            raise InvalidParameterError("n_list must contain at least one N")
        for N in self.n_list:
            if N < 1:
                raise InvalidParameterError(f"every N must be at least 1, got N={N}")
        for key in self.methods:
            if key not in PRESET_NAMES:
                raise InvalidParameterError(f"unknown method {key!r}; choose from {', '.join(PRESET_NAMES)}")
        if self.grid_kind not in GRID_KINDS:
            raise InvalidParameterError(f"grid must be one of {GRID_KINDS}, got {self.grid_kind!r}")
        if self.damping_steps is not None and self.damping_steps < 0:
            raise InvalidParameterError("damping_steps must be nonnegative")
        if self.roi is not None:
            lo, hi = self.roi
            if not 0 < lo < hi < self.params.s_max:
                raise InvalidParameterError(f"roi must satisfy 0 < lo < hi < s_max, got {self.roi}")
        if self.price_method not in PRESET_NAMES:
            raise InvalidParameterError(f"unknown method {self.price_method!r}; choose from {', '.join(PRESET_NAMES)}")
        if self.price_n < 1:
            raise InvalidParameterError(f"N must be at least 1, got N={self.price_n}")
        if self.jobs is not None and self.jobs < 1:
            raise InvalidParameterError("jobs must be at least 1")
        if self.reference_n is not None and self.reference_n < 1:
            raise InvalidParameterError("reference N must be at least 1")
        return self


def _ints(text) -> tuple:
    text = str(text).strip()
    if ".." in text:
        lo, hi = text.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


def _words(text) -> tuple:
    return tuple(x.strip().lower() for x in str(text).split(",") if x.strip())


def _floats(text) -> tuple:
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _make_params(dims: int, base, market: dict):
    cls = MarketParams1D if dims == 1 else MarketParams2D
    if not isinstance(base, cls):
        base = PRESETS["1d" if dims == 1 else "2d"]
    # INI keys are case-insensitive (T, K are stored as t, k)
    names = {f.name.lower(): f.name for f in dataclasses.fields(cls)}
    unknown = {k for k in market if k.lower() not in names}
    if unknown:
        raise InvalidParameterError(f"unknown market keys for {dims}D: {sorted(unknown)}")
    values = dataclasses.asdict(base)
    values.update({names[k.lower()]: float(v) for k, v in market.items()})
    return cls(**values)


def build_config(ini_text: Optional[str] = None, **overrides) -> RunConfig:
    """Merge defaults, an INI document and keyword overrides (None means 'not given')."""
    cp = configparser.ConfigParser()
    if ini_text:
        cp.read_string(ini_text)

    def get(section, key):
        if overrides.get(key) is not None:
            return overrides[key]
        if cp.has_option(section, key):
            return cp.get(section, key)
        return None

    preset_name = (get("problem", "preset") or "").lower() or None
    dim = get("problem", "dim")
    if preset_name is not None and preset_name not in PRESETS:
        raise InvalidParameterError(f"unknown preset {preset_name!r}; choose 1d or 2d")
    dims = int(dim) if dim is not None else (2 if preset_name == "2d" else 1)
    if dims not in (1, 2):
        raise InvalidParameterError(f"dim must be 1 or 2, got {dims}")
    base = PRESETS[preset_name] if preset_name else PRESETS["1d" if dims == 1 else "2d"]
    market = dict(cp.items("market")) if cp.has_section("market") else {}
    market.update(overrides.get("market") or {})
    params = _make_params(dims, base, market)

    cfg = RunConfig(params=params, m=DEFAULT_M[dims], methods=DEFAULT_METHODS[dims])
    if (v := get("run", "m")) is not None:
        cfg.m = int(v)
    if (v := get("run", "methods")) is not None:
        cfg.methods = _words(v) if isinstance(v, str) else tuple(v)
    if (v := get("run", "n_list")) is not None:
        cfg.n_list = _ints(v) if isinstance(v, str) else tuple(int(x) for x in v)
    if (v := get("run", "grid")) is not None:
        cfg.grid_kind = str(v).lower()
    if (v := get("run", "damping_steps")) is not None and str(v).strip() != "":
        cfg.damping_steps = int(v)
    if (v := get("run", "roi")) is not None and str(v).strip() != "":
        cfg.roi = _floats(v) if isinstance(v, str) else tuple(v)
        if len(cfg.roi) != 2:
            raise InvalidParameterError("roi takes two numbers: lo,hi")
    if (v := get("run", "jobs")) is not None and str(v).strip() != "":
        cfg.jobs = int(v)
    if (v := get("price", "method")) is not None:
        cfg.price_method = str(v).lower()
    if (v := get("price", "N")) is not None:
        cfg.price_n = int(v)
    if (v := get("output", "out")) is not None:
        cfg.out = str(v)
    if (v := get("reference", "cache_dir")) is not None:
        cfg.cache_dir = str(v) or None
    if (v := get("reference", "reference_n")) is not None and str(v).strip() != "":
        cfg.reference_n = int(v)
    pen = {}
    for key in ("large", "tol", "max_penalty_iters"):
        if (v := get("penalty", key)) is not None:
            pen[key] = int(v) if key == "max_penalty_iters" else float(v)
    try:
        cfg.penalty = PenaltyConfig(**pen)
    except ValueError as exc:
        raise InvalidParameterError(str(exc)) from exc
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser()
    cp["problem"] = {"dim": str(cfg.dims)}
    cp["market"] = {k: repr(v) for k, v in dataclasses.asdict(cfg.params).items()}
    cp["run"] = {
        "m": str(cfg.m),
        "methods": ",".join(cfg.methods),
        "n_list": ",".join(str(n) for n in cfg.n_list),
        "grid": cfg.grid_kind,
        "damping_steps": "" if cfg.damping_steps is None else str(cfg.damping_steps),
        "roi": "" if cfg.roi is None else ",".join(repr(x) for x in cfg.roi),
        "jobs": "" if cfg.jobs is None else str(cfg.jobs),
    }
    cp["price"] = {"method": cfg.price_method, "N": str(cfg.price_n)}
    cp["penalty"] = {k: repr(v) for k, v in dataclasses.asdict(cfg.penalty).items()}
    cp["reference"] = {
        "cache_dir": cfg.cache_dir or "",
        "reference_n": "" if cfg.reference_n is None else str(cfg.reference_n),
    }
    cp["output"] = {"out": cfg.out}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
