"""Run configuration: ``key = value`` sections with line-numbered errors.

``configparser`` does not keep the line of each key, and every error here
must name one, so the format is parsed directly.  Lines are
``[section]`` headers, ``key = value`` pairs, blank lines, or comments
starting with ``#`` or ``;``.  Values are single-line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError

# (section, key): (type, default, check, help).  Types: float, int, bool, str,
# floats (comma list), words (comma list).  This table is the documentation.
DEFAULTS = {
    ("domain", "kind"): ("str", "rectangle", ("rectangle", "disk"), "domain shape"),
    ("domain", "length"): ("float", 2.0, ">0", "rectangle length L (height is 1)"),
    ("domain", "sigma"): ("words", "left,right", ("left", "right"), "controlled side walls (rectangle)"),
    ("domain", "theta0"): ("float", math.pi / 4, ">0", "controlled arc half-opening (disk)"),
    ("domain", "kitchen_depth"): ("float", 0.5, ">0", "extension of the domain beyond the controlled walls"),
    ("domain", "nx"): ("int", 128, ">=8", "cells along x (radial cells on the disk)"),
    ("domain", "ny"): ("int", 64, ">=8", "cells along y (angular cells on the disk)"),
    ("envelope", "T"): ("float", 0.05, ">0", "length of the active phase"),
    ("envelope", "mass"): ("float", 3.0, ">0", "integral of the time envelope"),
    ("envelope", "profile"): ("str", "sine", ("sine", "bump"), "envelope shape"),
    ("layer", "z_max"): ("float", 20.0, ">0", "fast-variable extent during the active phase"),
    ("layer", "h_z"): ("float", 0.05, ">0", "fast-variable spacing"),
    ("layer", "steps"): ("int", 100, ">=1", "layer time steps during the active phase"),
    ("layer", "theta"): ("float", 0.5, "[0.5,1]", "implicitness of the z-diffusion"),
    ("layer", "decay_tol"): ("float", 1e-6, ">0", "largest allowed value at z_max"),
    ("wpd", "design"): ("bool", True, None, "build the kitchen source (false = ablation)"),
    ("wpd", "K"): ("int", 0, ">=0", "highest cancelled moment"),
    ("wpd", "k_max"): ("int", 2, ">=0", "largest K accepted"),
    ("wpd", "scale"): ("float", 0.5, ">0", "length scale of the source profiles in z"),
    ("wpd", "window_lo"): ("float", 10.0, ">0", "slope-fit window start"),
    ("wpd", "window_hi"): ("float", 1000.0, ">0", "slope-fit window end"),
    ("viscous", "friction"): ("float", 0.5, ">=0", "Navier friction coefficient alpha"),
    ("viscous", "cfl"): ("float", 1.0, ">0", "advective CFL number of the active phase"),
    ("viscous", "dt_after"): ("float", 0.005, ">0", "time step after the active phase"),
    ("viscous", "horizon_cap"): ("float", 100.0, ">0", "largest allowed T / eps"),
    ("viscous", "stage1"): ("float", 0.0, ">=0", "duration of the optional free-decay stage"),
    ("viscous", "ustar_amplitude"): ("float", 1.0, ">=0", "peak vorticity of the initial blob"),
    ("viscous", "ustar_x"): ("float", 1.0, None, "blob centre x"),
    ("viscous", "ustar_y"): ("float", 0.5, None, "blob centre y"),
    ("viscous", "ustar_width"): ("float", 0.15, ">0", "blob width"),
    ("viscous", "noise"): ("float", 0.0, ">=0", "seeded random vorticity added to the blob"),
    ("sweep", "eps"): ("floats", "0.1,0.05,0.025", ">0", "viscosities of the sweep"),
    ("sweep", "workers"): ("int", 1, ">=1", "parallel worker slots"),
    ("sweep", "seed"): ("int", 0, ">=0", "random seed"),
    ("sweep", "checks"): ("bool", True, None, "evaluate acceptance checks"),
}
SECTIONS = ("domain", "envelope", "layer", "wpd", "viscous", "sweep")


@dataclass
class Config:
    values: dict
    lines: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def __getitem__(self, key):
        return self.values[key]

    def get(self, section, key):
        return self.values[(section, key)]

    def section(self, name):
        return {k: v for (s, k), v in self.values.items() if s == name}

    def with_values(self, **updates):
        """Copy with ``section__key=value`` overrides (values already typed)."""
        vals = dict(self.values)
        for name, val in updates.items():
            sec, key = name.split("__", 1)
            if (sec, key) not in DEFAULTS:
                raise ConfigError(f"unknown key {sec}.{key}")
            vals[(sec, key)] = _convert(sec, key, val if isinstance(val, str) else _render(val), 0, self.source)
        return Config(vals, dict(self.lines), self.source)

    def echo(self):
        """Every key with its value and whether it came from the file."""
        out = []
        for sec in SECTIONS:
            out.append(f"[{sec}]")
            for (s, k) in DEFAULTS:
                if s != sec:
                    continue
                origin = f"line {self.lines[(s, k)]}" if (s, k) in self.lines else "default"
                out.append(f"{k} = {_render(self.values[(s, k)])}  # {origin}")
        return "\n".join(out) + "\n"


def _render(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_render(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _err(source, lineno, msg):
    return ConfigError(f"{source}:{lineno}: {msg}")


def _check_range(sec, key, val, rule, lineno, source):
    if rule is None:
        return
    if isinstance(rule, tuple):
        items = val if isinstance(val, tuple) else (val,)
        for it in items:
            if it not in rule:
                raise _err(source, lineno, f"{sec}.{key} = {it!r} is not one of {', '.join(rule)}")
        return
    items = val if isinstance(val, tuple) else (val,)
    for x in items:
        if rule.startswith("["):
            lo, hi = (float(p) for p in rule[1:-1].split(","))
            ok = lo <= x <= hi
        elif rule.startswith(">="):
            ok = x >= float(rule[2:])
        else:
            ok = x > float(rule[1:])
        if not ok:
            raise _err(source, lineno, f"{sec}.{key} = {x!r} is out of range (needs {rule})")


def _convert(sec, key, raw, lineno, source):
    typ, _, rule, _ = DEFAULTS[(sec, key)]
    raw = raw.strip()
    try:
        if typ == "float":
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError
        elif typ == "int":
            val = int(raw)
        elif typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError
            val = low in ("true", "yes", "1", "on")
        elif typ == "floats":
            val = tuple(float(p) for p in raw.split(","))
            if not val or not all(math.isfinite(x) for x in val):
                raise ValueError
        elif typ == "words":
            val = tuple(p.strip() for p in raw.split(",") if p.strip())
            if not val or len(set(val)) != len(val):
                raise ValueError
        else:
            if not raw:
                raise ValueError
            val = raw
    except ValueError:
        raise _err(source, lineno, f"{sec}.{key}: cannot read {raw!r} as {typ}") from None
    _check_range(sec, key, val, rule, lineno, source)
    return val


def default_config() -> Config:
    vals = {k: _convert(k[0], k[1], _render(v[1]), 0, "<defaults>") for k, v in DEFAULTS.items()}
    return Config(vals)


def parse_config(text, source="<string>") -> Config:
    """Parse config text; every error carries ``source:line``."""
    cfg = default_config()
    values, lines = dict(cfg.values), {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise _err(source, lineno, f"malformed section header {s!r}")
            section = s[1:-1].strip()
            if section not in SECTIONS:
                raise _err(source, lineno, f"unknown section [{section}]")
            continue
        if "=" not in s:
            raise _err(source, lineno, f"expected 'key = value', got {s!r}")
        if section is None:
            raise _err(source, lineno, "key outside of any section")
        key, raw = (p.strip() for p in s.split("=", 1))
        if (section, key) not in DEFAULTS:
            raise _err(source, lineno, f"unknown key {key!r} in [{section}]")
        if (section, key) in lines:
            raise _err(source, lineno, f"duplicate key {section}.{key} (first on line {lines[(section, key)]})")
        values[(section, key)] = _convert(section, key, raw, lineno, source)
        lines[(section, key)] = lineno
    out = Config(values, lines, source)
    validate(out)
    return out


def validate(cfg: Config):
    """Cross-key checks, reported at the line of the later key."""
    def line(*keys):
        return max((cfg.lines.get(k, 0) for k in keys), default=0)

    if cfg.get("wpd", "K") > cfg.get("wpd", "k_max"):
        raise _err(cfg.source, line(("wpd", "K"), ("wpd", "k_max")), "wpd.K exceeds wpd.k_max")
    if cfg.get("wpd", "window_hi") <= cfg.get("wpd", "window_lo"):
        raise _err(cfg.source, line(("wpd", "window_lo"), ("wpd", "window_hi")), "slope window is empty")
    if cfg.get("layer", "z_max") / cfg.get("layer", "h_z") < 8:
        raise _err(cfg.source, line(("layer", "z_max"), ("layer", "h_z")), "layer needs z_max / h_z >= 8")
    if cfg.get("domain", "kind") != "rectangle":
        raise _err(cfg.source, line(("domain", "kind")), "the viscous stages run on the rectangle only")
    if set(cfg.get("domain", "sigma")) != {"left", "right"}:
        raise _err(cfg.source, line(("domain", "sigma")),
                   "the boundary-layer stage needs both side walls controlled (sigma = left,right)")
    T = cfg.get("envelope", "T")
    for e in cfg.get("sweep", "eps"):
        if e >= 1:
            raise _err(cfg.source, line(("sweep", "eps")), f"sweep eps {e} must be below 1")
        if T / e > cfg.get("viscous", "horizon_cap"):
            raise _err(cfg.source, line(("sweep", "eps"), ("viscous", "horizon_cap")),
                       f"horizon T/eps = {T / e:g} exceeds viscous.horizon_cap")


def load_config(path) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}:0: cannot read config ({exc.strerror})") from None
    except UnicodeDecodeError:
        raise ConfigError(f"{path}:0: config is not UTF-8 text") from None
    return parse_config(text, str(path))


def defaults_table():
    """Markdown table of every key (used for the README)."""
    rows = ["| section | key | default | allowed | meaning |", "|---|---|---|---|---|"]
    for (s, k), (_, d, rule, help_) in DEFAULTS.items():
        allowed = "/".join(rule) if isinstance(rule, tuple) else (rule or "any")
        rows.append(f"| {s} | {k} | {_render(d)} | {allowed} | {help_} |")
    return "\n".join(rows)
