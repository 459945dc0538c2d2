"""Family configuration: parsing, normalization and invariant checks.

A family file is INI with one ``[family]`` section::

    [family]
    domain = sphere          # sphere | torus | interval
    n = 2                    # sphere dimension or complex torus dimension
    g = 4*(x3**2 - 0.5)**2
    even = true              # required on the sphere
    rule = paper-C21         # paper-C21: p = 3/(2k-2); paper-C11: p = 1/(k-1)
    eps = 1e-1:1e-6:decade   # or a comma list, or hi:lo:count (geometric)
    k = 2
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import expr
from .errors import ConfigError

RULES = {"paper-C21": "C21", "paper-C11": "C11"}
DEFAULT_SCHEDULE = "1e-1:1e-6:decade"
DEFAULT_SCAN_RES = {"sphere": 32, "torus": 16, "interval": 201}
NEG_TOL = 1e-12


def rule_name(rule: str) -> str:
    """Canonical rule label; accepts ``paper-C21``, ``C21``, ``c21`` and the C11 forms."""
    key = str(rule).strip()
    for name, short in RULES.items():
        if key.lower() in (name.lower(), short.lower()):
            return name
    raise ConfigError(f"rule: unknown exponent rule {rule!r}; expected one of {sorted(RULES)}")


def exponent(k: int, rule: str) -> float:
    """``p`` of the rule ``f^(1/p)`` regularity: ``3/(2k-2)`` or ``1/(k-1)``."""
    if k < 2:
        raise ConfigError(f"k: need k >= 2, got {k}")
    return 3.0 / (2 * k - 2) if RULES[rule_name(rule)] == "C21" else 1.0 / (k - 1)


def parse_schedule(text: Union[str, Sequence[float]]) -> tuple:
    """``eps`` values from ``hi:lo:decade``, ``hi:lo:count`` or a list; must strictly decrease."""
    if isinstance(text, str):
        s = text.strip()
        if ":" in s:
            parts = [p.strip() for p in s.split(":")]
            if len(parts) != 3:
                raise ConfigError(f"eps: expected hi:lo:decade or hi:lo:count, got {text!r}")
            try:
                hi, lo = float(parts[0]), float(parts[1])
            except ValueError:
                raise ConfigError(f"eps: bad bounds in {text!r}") from None
            if hi <= 0 or lo <= 0:
                raise ConfigError("eps: values must be positive")
            if hi < lo:
                raise ConfigError(f"eps: schedule {text!r} is not decreasing")
            if parts[2] == "decade":
                a, b = np.log10(hi), np.log10(lo)
                count = int(round(a - b)) + 1
                if not np.isclose(a - b, count - 1):
                    raise ConfigError(f"eps: bounds of {text!r} are not whole decades apart")
                vals = [10.0 ** (a - i) for i in range(count)]
            else:
                try:
                    count = int(parts[2])
                except ValueError:
                    raise ConfigError(f"eps: step {parts[2]!r} is neither 'decade' nor a count") from None
                if count < 1:
                    raise ConfigError("eps: count must be positive")
                vals = list(np.geomspace(hi, lo, count))
        else:
            try:
                vals = [float(v) for v in s.replace(",", " ").split()]
            except ValueError:
                raise ConfigError(f"eps: cannot read {text!r}") from None
    else:
        vals = [float(v) for v in text]
    if not vals:
        raise ConfigError("eps: empty schedule")
    if any(v <= 0 for v in vals):
        raise ConfigError("eps: values must be positive")
    if any(b >= a for a, b in zip(vals, vals[1:])):
        raise ConfigError(f"eps: schedule {list(vals)} is not decreasing")
    return tuple(float(v) for v in vals)


@dataclass
class FamilySpec:
    """Normalized degenerate family ``f_eps = (g + eps)^(1/p)``."""

    domain: str
    n: int
    g: str
    even: bool
    rule: str
    eps: tuple
    k: Optional[int] = None
    p: Optional[float] = None
    res: Optional[int] = None
    interval: dict = field(default_factory=dict)
    scan_min: Optional[float] = None

    @property
    def expression(self) -> expr.Expression:
        return expr.parse(self.g, self.domain, self.n)

    @property
    def rule_short(self) -> str:
        return RULES[self.rule]

    def evaluate(self, points) -> np.ndarray:
        """``g`` at points in the domain's ambient coordinates."""
        return self.expression(expr.coordinate_env(self.domain, self.n, points))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["eps"] = list(self.eps)
        return d

    def digest(self) -> str:
        return config_digest(self.as_dict())


def config_digest(obj) -> str:
    """SHA-256 of the canonical JSON form."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _read(config) -> dict:
    if isinstance(config, FamilySpec):
        return config.as_dict()
    if isinstance(config, dict):
        return dict(config)
    cp = config if isinstance(config, configparser.ConfigParser) else configparser.ConfigParser(
        inline_comment_prefixes=("#", ";")
    )
    if not isinstance(config, configparser.ConfigParser):
        text = str(config)
        if "\n" not in text and os.path.exists(text):
            try:
                with open(text, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {config!r}: {exc}") from None
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
    if "family" not in cp:
        raise ConfigError("config has no [family] section")
    return dict(cp["family"])


def _bool(v, name):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"{name}: expected a boolean, got {v!r}")


def _int(v, name):
    try:
        return int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected an integer, got {v!r}") from None


def scan_points(spec: FamilySpec, res: Optional[int] = None):
    """Nodes used for the nonnegativity / evenness scans."""
    from .degprobe import ProbeDomain
    from .sphere import make_grid
    from .torusgrid import TorusGrid

    res = res or DEFAULT_SCAN_RES[spec.domain]
    if spec.domain == "sphere":
        return make_grid(spec.n, res if spec.n == 2 else 8).points()
    if spec.domain == "torus":
        return TorusGrid(spec.n, res if spec.n <= 2 else min(res, 8)).points()
    iv = spec.interval
    return ProbeDomain.interval(iv["a"], iv["b"], iv["margin"], res).nodes()


def validate_config(config, *, k: Optional[int] = None, scan_res: Optional[int] = None) -> FamilySpec:
    """Resolve defaults and check a family configuration.

    ``config`` may be a path, INI text, a mapping, a :class:`ConfigParser` or a
    :class:`FamilySpec`.  ``k`` overrides the file.  Every violation raises
    :class:`ConfigError` naming the offending field.
    """
    raw = _read(config)
    allowed = {"domain", "n", "g", "even", "rule", "eps", "k", "p", "res", "a", "b", "margin", "interval", "scan_min"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s): {sorted(unknown)}")
    domain = str(raw.get("domain", "")).strip().lower()
    if domain not in DEFAULT_SCAN_RES:
        raise ConfigError(f"domain: expected sphere, torus or interval, got {raw.get('domain')!r}")
    default_n = {"sphere": 2, "torus": 1, "interval": 1}[domain]
    n = _int(raw.get("n", default_n), "n")
    if domain == "sphere" and n not in (2, 3):
        raise ConfigError(f"n: sphere dimension must be 2 or 3, got {n}")
    if domain == "torus" and n < 1:
        raise ConfigError(f"n: torus complex dimension must be positive, got {n}")
    if domain == "interval":
        n = 1
    if "g" not in raw or not str(raw["g"]).strip():
        raise ConfigError("g: missing base profile")
    g = str(raw["g"]).strip()
    expr.parse(g, domain, n)
    even = _bool(raw.get("even", False), "even")
    rule = rule_name(raw.get("rule", "paper-C21"))
    eps = parse_schedule(raw.get("eps", DEFAULT_SCHEDULE))
    kk = k if k is not None else (None if raw.get("k") in (None, "") else _int(raw["k"], "k"))
    p = None
    if kk is not None:
        if kk < 2:
            raise ConfigError(f"k: need k >= 2, got {kk}")
        if domain != "interval" and kk > n:
            raise ConfigError(f"k: need k <= {n} on this domain, got {kk}")
        p = exponent(kk, rule)
    res = None if raw.get("res") in (None, "") else _int(raw["res"], "res")
    interval = {}
    if domain == "interval":
        src = raw.get("interval") or {}
        try:
            interval = {
                "a": float(src.get("a", raw.get("a", 0.0))),
                "b": float(src.get("b", raw.get("b", 1.0))),
                "margin": float(src.get("margin", raw.get("margin", 0.1))),
            }
        except ValueError:
            raise ConfigError("interval: a, b, margin must be numbers") from None
        if not interval["b"] > interval["a"]:
            raise ConfigError("interval: need b > a")
    if domain == "sphere" and not even:
        raise ConfigError(
            "even: sphere families need an antipodally even g; otherwise f_eps can violate the "
            "moment compatibility condition (integral of x_i f_eps = 0 for every i)"
        )
    spec = FamilySpec(domain, n, g, even, rule, eps, kk, p, res, interval)
    pts = scan_points(spec, scan_res)
    vals = spec.evaluate(pts)
    if not np.all(np.isfinite(vals)):
        raise ConfigError("g: non-finite values on the scan grid")
    scale = max(1.0, float(np.max(np.abs(vals))))
    spec.scan_min = float(np.min(vals))
    if spec.scan_min < -NEG_TOL * scale:
        idx = np.unravel_index(int(np.argmin(vals)), vals.shape)
        where = np.asarray(pts)[idx]
        raise ConfigError(f"g: negative value {spec.scan_min:.6g} at {np.round(where, 6).tolist()} (g must be >= 0)")
    if even and domain == "sphere":
        odd = float(np.max(np.abs(vals - spec.evaluate(-np.asarray(pts)))))
        if odd > 1e-12 * scale:
            raise ConfigError(f"even: g is flagged even but g(-x) differs from g(x) by {odd:.3e}")
    return spec
