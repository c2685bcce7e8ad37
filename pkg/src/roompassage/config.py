"""Study configuration: flat TOML documents, presets and validation."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .eigensolve import EigSolveOptions
from .geometry import (
    BaseDomain,
    GeometryError,
    PerturbationParams,
    RegimeClass,
    ShapeSpec,
    anchor_indices,
    classify_regime,
    exponents_to_params,
    validate_assumptions,
)

# (alpha, beta) per preset, one for each limit operator
PRESETS: Dict[str, Tuple[float, float]] = {
    "coupled": (2.0, -1.0),
    "courant-hilbert": (4.0, 0.0),
    "steklov": (1.0, -1.0),
    "neumann": (1.0, 0.0),
}
DEFAULT_EPS = (0.25, 0.125, 0.0625)
OUT_ENV = "ROOMPASSAGE_OUT"

_FLOAT_KEYS = {
    "W", "H", "room_width", "room_height", "passage_width", "gluing_radius",
    "alpha", "beta", "Lambda", "tol", "sigma0_mesh_h", "sigma0_rtol", "window",
    "aspect_limit", "q_limit", "r_limit",
}
_INT_KEYS = {"block_size", "seed", "jobs", "sigma0_max_refinements"}
_LIST_KEYS = {"eps", "b", "d", "h", "rho"}
KNOWN_KEYS = _FLOAT_KEYS | _INT_KEYS | _LIST_KEYS | {"mesh_h", "preset", "out", "save_meshes"}


class ConfigError(ValueError):
    """Invalid configuration; carries the offending key and line when known."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class StudyConfig:
    eps: Tuple[float, ...]
    alpha: Optional[float] = None
    beta: Optional[float] = None
    base: BaseDomain = field(default_factory=BaseDomain)
    shape: ShapeSpec = field(default_factory=ShapeSpec)
    explicit: Optional[Tuple[PerturbationParams, ...]] = None
    q_limit: Optional[float] = None
    r_limit: Optional[float] = None
    mesh_h: Tuple[float, ...] = (1.0 / 64.0,)
    Lambda: float = 30.0
    eig: EigSolveOptions = field(default_factory=EigSolveOptions)
    sigma0_mesh_h: float = 1.0 / 64.0
    sigma0_rtol: float = 1e-4
    sigma0_max_refinements: int = 2
    window: float = 1e-2
    aspect_limit: float = 8.0
    save_meshes: bool = True
    out: Optional[Path] = None
    preset: Optional[str] = None
    jobs: int = 1

    def __post_init__(self):
        validate_config(self)

    def mesh_h_for(self, i: int) -> float:
        return self.mesh_h[i] if len(self.mesh_h) > 1 else self.mesh_h[0]

    def params_for(self, i: int) -> PerturbationParams:
        if self.explicit is not None:
            return self.explicit[i]
        return exponents_to_params(self.eps[i], self.alpha, self.beta)

    def regime(self) -> RegimeClass:
        if self.explicit is None:
            return classify_regime(self.alpha, self.beta, self.shape, self.base)
        q, r = self.q_limit, self.r_limit
        q_kind = "infinite" if math.isinf(q) else ("zero" if q == 0 else "finite")
        return RegimeClass(q_kind, q, "zero" if r == 0 else "positive", r)

    def with_overrides(self, **kw) -> "StudyConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def validate_config(c: StudyConfig) -> None:
    if len(c.eps) == 0:
        raise ConfigError("eps list is empty", "eps")
    if any(not 0 < e < 1 for e in c.eps):
        raise ConfigError(f"eps values must lie in (0, 1), got {list(c.eps)}", "eps")
    if any(b >= a for a, b in zip(c.eps, c.eps[1:])):
        raise ConfigError(f"eps list must be strictly decreasing, got {list(c.eps)}", "eps")
    if len(c.mesh_h) not in (1, len(c.eps)) or any(h <= 0 for h in c.mesh_h):
        raise ConfigError("mesh_h must be one positive value or one per eps", "mesh_h")
    if not c.Lambda > 0:
        raise ConfigError(f"Lambda must be positive, got {c.Lambda}", "Lambda")
    if c.jobs < 1:
        raise ConfigError("jobs must be >= 1", "jobs")
    if c.sigma0_mesh_h <= 0 or c.sigma0_rtol <= 0 or c.sigma0_max_refinements < 0:
        raise ConfigError("sigma0 settings must be positive", "sigma0_mesh_h")
    if not 0 < c.window < 1:
        raise ConfigError("window must lie in (0, 1)", "window")
    if c.explicit is None:
        if c.alpha is None or c.beta is None:
            raise ConfigError("alpha and beta (or a preset, or explicit b, d, h, rho lists) are required", "alpha")
        if c.alpha < 1:
            raise ConfigError(f"alpha={c.alpha} violates d <= b (needs alpha >= 1)", "alpha")
        if c.beta < -1:
            raise ConfigError(f"beta={c.beta} must be >= -1", "beta")
    else:
        if len(c.explicit) != len(c.eps):
            raise ConfigError("explicit parameter lists need one entry per eps", "d")
        if c.q_limit is None or c.r_limit is None:
            raise ConfigError("explicit parameters need q_limit and r_limit", "q_limit")
        if c.q_limit < 0 or c.r_limit < 0 or math.isinf(c.r_limit):
            raise ConfigError("q_limit must be >= 0 and r_limit finite and >= 0", "q_limit")
    for i, eps in enumerate(c.eps):
        if not anchor_indices(c.base, eps):
            raise ConfigError(f"eps={eps} leaves no room on Gamma of width {c.base.W}", "eps")
        params = c.params_for(i)
        report = validate_assumptions(params, c.shape)
        if not report.ok:
            bad = ", ".join(f"{f.name}: {f.detail}" for f in report.failures())
            raise ConfigError(f"eps={eps}: {bad}", "alpha" if c.explicit is None else "d")


def _key_lines(text: str) -> Dict[str, int]:
    lines = {}
    pat = re.compile(r"""^\s*["']?([A-Za-z0-9_\-]+)["']?\s*=""")
    for n, line in enumerate(text.splitlines(), start=1):
        m = pat.match(line)
        if m and m.group(1) not in lines:
            lines[m.group(1)] = n
    return lines


def _as_float(key, v, line) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", key, line)
    return float(v)


def parse_config(text: str) -> StudyConfig:
    """Parse a flat TOML study description.

    Unknown keys, type errors and invariant violations raise ``ConfigError``
    naming the key and its line.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed document: {exc}") from exc
    lines = _key_lines(text)
    for key, value in doc.items():
        if key not in KNOWN_KEYS:
            raise ConfigError("unknown key", key, lines.get(key))
        if isinstance(value, dict):
            raise ConfigError("tables are not supported; use flat keys", key, lines.get(key))
    return config_from_mapping(doc, lines)


def config_from_mapping(doc: Dict[str, Any], lines: Optional[Dict[str, int]] = None) -> StudyConfig:
    lines = lines or {}
    kw: Dict[str, Any] = {}

    def num(key):
        return _as_float(key, doc[key], lines.get(key))

    def num_list(key):
        v = doc[key]
        if not isinstance(v, list) or not v:
            raise ConfigError("expected a non-empty list of numbers", key, lines.get(key))
        return tuple(_as_float(key, x, lines.get(key)) for x in v)

    preset = doc.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}", "preset", lines.get("preset"))
        kw["preset"] = preset
        kw["alpha"], kw["beta"] = PRESETS[preset]
    for key in ("alpha", "beta"):
        if key in doc:
            kw[key] = num(key)
    kw["eps"] = num_list("eps") if "eps" in doc else (DEFAULT_EPS if preset else None)
    if kw["eps"] is None:
        raise ConfigError("missing required field", "eps")

    base_kw = {k: num(k) for k in ("W", "H") if k in doc}
    shape_kw = {k: num(k) for k in ("room_width", "room_height", "passage_width", "gluing_radius") if k in doc}
    try:
        kw["base"] = BaseDomain(**base_kw)
        kw["shape"] = ShapeSpec(**shape_kw)
    except (GeometryError, ValueError) as exc:
        key = next(iter(base_kw or shape_kw), None)
        raise ConfigError(str(exc), key, lines.get(key)) from exc

    explicit_keys = [k for k in ("b", "d", "h", "rho") if k in doc]
    if explicit_keys:
        if len(explicit_keys) != 4:
            missing = sorted({"b", "d", "h", "rho"} - set(explicit_keys))
            raise ConfigError(f"explicit parameters need b, d, h and rho; missing {missing}", explicit_keys[0])
        cols = {k: num_list(k) for k in explicit_keys}
        if any(len(v) != len(kw["eps"]) for v in cols.values()):
            raise ConfigError("explicit parameter lists need one entry per eps", "d", lines.get("d"))
        kw["explicit"] = tuple(
            PerturbationParams(eps=e, b=cols["b"][i], d=cols["d"][i], h=cols["h"][i], rho=cols["rho"][i])
            for i, e in enumerate(kw["eps"])
        )
        kw.pop("alpha", None)
        kw.pop("beta", None)
    for key in ("q_limit", "r_limit", "Lambda", "sigma0_mesh_h", "sigma0_rtol", "window", "aspect_limit"):
        if key in doc:
            kw[key] = num(key)
    if "mesh_h" in doc:
        v = doc["mesh_h"]
        kw["mesh_h"] = num_list("mesh_h") if isinstance(v, list) else (num("mesh_h"),)
    for key in ("jobs", "sigma0_max_refinements"):
        if key in doc:
            if not isinstance(doc[key], int) or isinstance(doc[key], bool):
                raise ConfigError("expected an integer", key, lines.get(key))
            kw[key] = doc[key]
    if "save_meshes" in doc:
        if not isinstance(doc["save_meshes"], bool):
            raise ConfigError("expected true or false", "save_meshes", lines.get("save_meshes"))
        kw["save_meshes"] = doc["save_meshes"]
    if "out" in doc:
        kw["out"] = Path(str(doc["out"]))

    eig_kw = {}
    if "tol" in doc:
        eig_kw["tol"] = num("tol")
    for key in ("block_size", "seed"):
        if key in doc:
            if not isinstance(doc[key], int) or isinstance(doc[key], bool):
                raise ConfigError("expected an integer", key, lines.get(key))
            eig_kw[key] = doc[key]
    try:
        kw["eig"] = EigSolveOptions(**eig_kw)
    except ValueError as exc:
        key = next(iter(eig_kw))
        raise ConfigError(str(exc), key, lines.get(key)) from exc

    try:
        return StudyConfig(**kw)
    except ConfigError as exc:
        if exc.line is None and exc.key in lines:
            raise ConfigError(str(exc).split(": ", 1)[-1], exc.key, lines[exc.key]) from None
        raise
    except (GeometryError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def preset_config(name: str, **overrides) -> StudyConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", "preset")
    return config_from_mapping({"preset": name}).with_overrides(**overrides)


def load_config(path: Path) -> StudyConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text)
