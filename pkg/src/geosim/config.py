"""Configuration files: flat dotted keys in TOML syntax.

Example::

    run.role = "NIB"
    run.duration_s = 3600
    nib.n = 32
    nib.country = "IND"
    nib.strategy = "direct"

Every key must appear in :data:`SCHEMA`; unknown keys are hard errors.
Quantities carry their unit in the key name and are converted exactly
(``nib.dvf_ms = 0.1`` becomes ``1e-4`` seconds).
"""

from __future__ import annotations

import re
import sys
from decimal import Decimal
from dataclasses import dataclass, field, replace
from importlib import resources

from .engine import SimConfig, gib_config, nib_config
from .records import MIB

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

FULL_DAY_S = 8 * 3600.0
PRESETS = ("fig8", "fig9", "nib", "gib", "geos")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line else ""
        what = f"{key}: " if key else ""
        super().__init__(f"{where}{what}{message}")


def _scale(value, exponent: int) -> float:
    # decimal rescaling, so 0.1 ms is exactly the double nearest 1e-4
    return float(Decimal(repr(value)).scaleb(exponent))


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


# layer key -> (validator, SimConfig field, converter)
LAYER_KEYS = {
    "n": (_int, "n", int),
    "b_max_mib": (_num, "b_max", lambda v: int(round(v * MIB))),
    "b_max_bytes": (_int, "b_max", int),
    "header_size": (_int, "header_size", int),
    "tx_size": (_int, "tx_size", int),
    "dvf_ms": (_num, "dvf", lambda v: _scale(v, -3)),
    "dvf_report_ms": (_num, "dvf_report", lambda v: _scale(v, -3)),
    "bandwidth_mbps": (_num, "bandwidth", lambda v: _scale(v, 6)),
    "propagation_ms": (_num, "propagation", lambda v: _scale(v, -3)),
    "strategy": (lambda v: v in ("tree", "direct"), "strategy", str),
    "beta": (_int, "beta", int),
    "rate_tps": (_num, "rate", float),
    "country": (lambda v: isinstance(v, str), "country", str),
    "gamma": (_int, "gamma", int),
    "crashed": (lambda v: isinstance(v, list) and all(_int(x) for x in v), "crashed", tuple),
    "sign_ms": (_num, "sign_time", lambda v: _scale(v, -3)),
    "aggregate_ms": (_num, "aggregate_time", lambda v: _scale(v, -3)),
    "qc_verify_ms": (_num, "qc_verify_time", lambda v: _scale(v, -3)),
    "timeout_factor": (_num, "timeout_factor", float),
    "jitter": (_num, "jitter", float),
    "empty_blocks": (lambda v: isinstance(v, bool), "empty_blocks", bool),
    "report_base_size": (_int, "report_base_size", int),
}
RUN_KEYS = {
    "role": lambda v: v in ("NIB", "GIB", "GEOS"),
    "duration_s": _num,
    "full_day": lambda v: isinstance(v, bool),
    "seed": lambda v: _int(v) and 0 <= v < 2**64,
    "warmup_fraction": _num,
    "event_log": lambda v: isinstance(v, bool),
}
GEOS_KEYS = {
    "countries": lambda v: v == "all" or (isinstance(v, list) and all(isinstance(x, str) for x in v)),
    "coupled": lambda v: isinstance(v, bool),
}
_num_list = lambda v: isinstance(v, list) and len(v) > 0 and all(_num(x) for x in v)  # noqa: E731
SWEEP_KEYS = {
    "layer": lambda v: v in ("NIB", "GIB", "GEOS"),
    "n": lambda v: _num_list(v) and all(_int(x) for x in v),
    "b_max_mib": _num_list,
    "dvf_ms": _num_list,
    "gamma": lambda v: _num_list(v) and all(_int(x) for x in v),
    "strategy": lambda v: isinstance(v, list) and len(v) > 0 and all(x in ("tree", "direct") for x in v),
    "repetitions": lambda v: _int(v) and v >= 1,
    "max_points": lambda v: _int(v) and v >= 1,
}
OUTPUT_KEYS = {"divergence_fatal": lambda v: isinstance(v, bool)}

SCHEMA: dict[str, object] = {}
for _k, _spec in LAYER_KEYS.items():
    SCHEMA[f"nib.{_k}"] = _spec[0]
    SCHEMA[f"gib.{_k}"] = _spec[0]
SCHEMA.update({f"run.{k}": v for k, v in RUN_KEYS.items()})
SCHEMA.update({f"geos.{k}": v for k, v in GEOS_KEYS.items()})
SCHEMA.update({f"sweep.{k}": v for k, v in SWEEP_KEYS.items()})
SCHEMA.update({f"output.{k}": v for k, v in OUTPUT_KEYS.items()})

SWEEP_AXES = ("n", "b_max_mib", "dvf_ms", "gamma", "strategy")


@dataclass(frozen=True)
class SweepSpec:
    layer: str
    axes: tuple[tuple[str, tuple], ...]
    repetitions: int = 1
    max_points: int = 10_000

    def __post_init__(self):
        if not self.axes:
            raise ConfigError("sweep needs at least one axis")
        if self.size > self.max_points:
            raise ConfigError(f"sweep has {self.size} points, above the cap of {self.max_points}", "sweep.max_points")

    @property
    def size(self) -> int:
        total = self.repetitions
        for _, values in self.axes:
            total *= len(values)
        return total


@dataclass(frozen=True)
class ResolvedConfig:
    role: str
    nib: SimConfig
    gib: SimConfig
    countries: tuple[str, ...] | str = "all"
    coupled: bool = False
    sweep: SweepSpec | None = None
    divergence_fatal: bool = True
    flat: dict = field(default_factory=dict, compare=False)

    def echo(self) -> str:
        """Every resolved parameter as a loadable config (plus derived values as comments)."""
        lines = [f"{k} = {_toml_value(v)}" for k, v in sorted(self.flat.items())]
        for layer, cfg in (("nib", self.nib), ("gib", self.gib)):
            lines.append(f"# {layer}: capacity={cfg.capacity} tx_size={cfg.transaction_size} quorum={cfg.quorum}")
        return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(r"^\s*" + r"\s*\.\s*".join(re.escape(p) for p in key.split(".")) + r"\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return i
    leaf = key.split(".")[-1]
    pat = re.compile(r"^\s*" + re.escape(leaf) + r"\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return i
    return None


def parse_config_text(text: str) -> dict:
    """Parse and validate one config file; returns its flat key map."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"syntax error: {exc}", line=int(m.group(1)) if m else None) from None
    flat = _flatten(data)
    for key, value in flat.items():
        check = SCHEMA.get(key)
        if check is None:
            raise ConfigError("unknown key", key, _line_of(text, key))
        if not check(value):
            raise ConfigError(f"invalid value {value!r}", key, _line_of(text, key))
    for layer in ("nib", "gib"):
        if f"{layer}.b_max_mib" in flat and f"{layer}.b_max_bytes" in flat:
            raise ConfigError("give b_max_mib or b_max_bytes, not both", f"{layer}.b_max_bytes", _line_of(text, f"{layer}.b_max_bytes"))
    return flat


def preset_text(name: str) -> str:
    if name in ("nib", "gib", "geos"):
        return f'run.role = "{name.upper()}"\n'
    try:
        return resources.files("geosim.presets").joinpath(f"{name}.cfg").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def _layer_config(flat: dict, layer: str, base: SimConfig, run_fields: dict) -> SimConfig:
    kw = {}
    for key, (_, fname, conv) in LAYER_KEYS.items():
        if f"{layer}.{key}" in flat:
            kw[fname] = conv(flat[f"{layer}.{key}"])
    if layer == "nib" and "rate" in kw and "country" not in kw:
        kw["country"] = None
    try:
        return replace(base, **kw, **run_fields)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), layer) from None


def resolve(flat: dict) -> ResolvedConfig:
    role = flat.get("run.role", "NIB")
    run_fields = {}
    if flat.get("run.full_day"):
        run_fields["duration"] = FULL_DAY_S
    if "run.duration_s" in flat:
        run_fields["duration"] = float(flat["run.duration_s"])
    if "run.seed" in flat:
        run_fields["seed"] = int(flat["run.seed"])
    if "run.warmup_fraction" in flat:
        run_fields["warmup_fraction"] = float(flat["run.warmup_fraction"])
    if "run.event_log" in flat:
        run_fields["event_log"] = bool(flat["run.event_log"])
    nib = _layer_config(flat, "nib", nib_config(), run_fields)
    gib = _layer_config(flat, "gib", gib_config(nib_n=nib.n), run_fields)
    if "gib.n" not in flat and role == "GEOS":
        gib = replace(gib, n=nib.n)
    if role == "GIB" and "gib.rate_tps" not in flat:
        raise ConfigError("a standalone GIB run needs gib.rate_tps", "gib.rate_tps")
    sweep = None
    axes = tuple((a, tuple(flat[f"sweep.{a}"])) for a in SWEEP_AXES if f"sweep.{a}" in flat)
    if axes or "sweep.layer" in flat:
        sweep = SweepSpec(flat.get("sweep.layer", role), axes, int(flat.get("sweep.repetitions", 1)), int(flat.get("sweep.max_points", 10_000)))
    countries = flat.get("geos.countries", "all")
    resolved_flat = dict(flat)
    for layer, cfg in (("nib", nib), ("gib", gib)):
        resolved_flat.pop(f"{layer}.b_max_mib", None)
        resolved_flat.update(layer_echo(layer, cfg))
    resolved_flat["run.role"] = role
    resolved_flat["run.duration_s"] = nib.duration
    resolved_flat["run.seed"] = nib.seed
    resolved_flat["run.warmup_fraction"] = nib.warmup_fraction
    resolved_flat.setdefault("geos.countries", countries)
    resolved_flat.setdefault("geos.coupled", bool(flat.get("geos.coupled", False)))
    resolved_flat.setdefault("output.divergence_fatal", bool(flat.get("output.divergence_fatal", True)))
    return ResolvedConfig(
        role=role,
        nib=nib,
        gib=gib,
        countries=tuple(countries) if isinstance(countries, list) else countries,
        coupled=bool(flat.get("geos.coupled", False)),
        sweep=sweep,
        divergence_fatal=bool(flat.get("output.divergence_fatal", True)),
        flat=resolved_flat,
    )


def layer_echo(layer: str, cfg: SimConfig) -> dict:
    """Schema keys (with units) describing every result-affecting field of ``cfg``."""
    out = {
        f"{layer}.n": cfg.n,
        f"{layer}.b_max_bytes": cfg.b_max,
        f"{layer}.header_size": cfg.header_size,
        f"{layer}.tx_size": cfg.transaction_size,
        f"{layer}.dvf_ms": _scale(cfg.dvf, 3),
        f"{layer}.dvf_report_ms": _scale(cfg.dvf_report, 3),
        f"{layer}.bandwidth_mbps": _scale(cfg.bandwidth, -6),
        f"{layer}.propagation_ms": _scale(cfg.propagation, 3),
        f"{layer}.strategy": cfg.strategy,
        f"{layer}.beta": cfg.beta,
        f"{layer}.rate_tps": cfg.arrival_rate,
        f"{layer}.gamma": cfg.gamma,
        f"{layer}.crashed": list(cfg.crashed),
        f"{layer}.sign_ms": _scale(cfg.sign_time, 3),
        f"{layer}.aggregate_ms": _scale(cfg.aggregate_time, 3),
        f"{layer}.qc_verify_ms": _scale(cfg.qc_verify_time, 3),
        f"{layer}.timeout_factor": cfg.timeout_factor,
        f"{layer}.jitter": cfg.jitter,
        f"{layer}.empty_blocks": cfg.empty_blocks,
        f"{layer}.report_base_size": cfg.report_base_size,
    }
    if cfg.country is not None and cfg.rate is None:
        out[f"{layer}.country"] = cfg.country
    return out


def load_config(path: str | None = None, *, preset: str | None = None, text: str | None = None) -> ResolvedConfig:
    """Merge a preset, then a config file (or literal ``text``), into one resolved config."""
    flat: dict = {}
    if preset is not None:
        flat.update(parse_config_text(preset_text(preset)))
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    if text is not None:
        flat.update(parse_config_text(text))
    return resolve(flat)
