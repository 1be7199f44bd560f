"""Flat ``key = value`` run configuration with positioned error messages."""

import re
from dataclasses import asdict, dataclass, fields

import tomli

from .errors import ConfigError

__all__ = ["RunConfig", "parse_config", "load_config", "DEFAULTS"]


@dataclass(frozen=True)
class RunConfig:
    """Resolved run parameters.

    ``J`` is the number of eigenvalues kept per wavenumber; ``stable_cutoff``
    bounds Re lambda of the stable modes carried in simulations; ``n_modes``
    is the size of the nonlinear Galerkin basis.  ``wall`` selects the active
    wall of the restricted variant (0 for y = 0, 1 for y = 1).
    """

    nu: float = 0.002
    a: float = 1.0
    M: int = 64
    M_x: int = 3
    alpha0: float = 1.0
    variant: str = "complex"
    wall: int = 1
    T: float = 20.0
    dt: float = 0.01
    J: int = 40
    seed: int = 0
    output_dir: str = "out"
    margin: float = 1e-8
    cluster_tol: float = 1e-6
    stable_cutoff: float = 10.0
    n_modes: int = 16

    def to_dict(self):
        return asdict(self)


DEFAULTS = RunConfig()
_TYPES = {f.name: f.type for f in fields(RunConfig)}
_KEY = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_-]*)\s*=")

# (predicate, message) per key
_CONSTRAINTS = {
    "nu": (lambda v: v > 0, "must be positive"),
    "a": (lambda v: v >= 0, "must be non-negative"),
    "M": (lambda v: v >= 8 and v % 2 == 0, "must be an even integer >= 8"),
    "M_x": (lambda v: v >= 1, "must be >= 1"),
    "alpha0": (lambda v: v > 0, "must be positive"),
    "variant": (lambda v: v in ("complex", "real", "restricted"), "must be complex, real or restricted"),
    "wall": (lambda v: v in (0, 1), "must be 0 or 1"),
    "T": (lambda v: v > 0, "must be positive"),
    "dt": (lambda v: v > 0, "must be positive"),
    "J": (lambda v: v >= 1, "must be >= 1"),
    "seed": (lambda v: v >= 0, "must be non-negative"),
    "margin": (lambda v: v > 0, "must be positive"),
    "cluster_tol": (lambda v: v > 0, "must be positive"),
    "stable_cutoff": (lambda v: v > 0, "must be positive"),
    "n_modes": (lambda v: v >= 2, "must be >= 2"),
}


def _positions(text):
    pos = {}
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0]
        if s.strip().startswith("["):
            raise ConfigError("tables are not allowed in a flat config", i, s.index("[") + 1)
        mt = _KEY.match(s)
        if not mt:
            continue
        key, col = mt.group(1), mt.start(1) + 1
        if key in pos:
            raise ConfigError(f"duplicate key '{key}'", i, col, key)
        pos[key] = (i, col)
    return pos


def _coerce(key, value, where):
    typ = _TYPES[key]
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if isinstance(value, bool) or not isinstance(value, typ):
        raise ConfigError(f"'{key}' expects {typ.__name__}, got {type(value).__name__}", *where, key)
    return value


def parse_config(text):
    """Parse a flat config document into a validated RunConfig.

    Omitted keys take the defaults of RunConfig.  Unknown keys, duplicate keys,
    wrong types and violated constraints raise ConfigError with the line and
    column of the offending key.
    """
    pos = _positions(text)
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"malformed config: {e.msg}", e.lineno, e.colno) from None
    values = {}
    for key, value in doc.items():
        where = pos.get(key, (None, None))
        if key not in _TYPES:
            raise ConfigError(f"unknown key '{key}'", *where, key)
        value = _coerce(key, value, where)
        pred, msg = _CONSTRAINTS.get(key, (lambda v: True, ""))
        if not pred(value):
            raise ConfigError(f"'{key}' {msg}, got {value!r}", *where, key)
        values[key] = value
    return RunConfig(**values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
