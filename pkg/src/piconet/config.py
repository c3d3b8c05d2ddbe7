"""YAML experiment configuration with line-anchored validation errors.

Example::

    scenario: bursty
    phy: {snr0_db: 8, modes: [2dh3, 3dh3]}
    channel: {rice_factor_db: 6.95, s_min: 0.01}
    sensors:
      - {rate: 0.04, arrival: geometric, q: 0.1}
    policy: {names: [opportunistic_sleep], V: [20, 50, 100], tau: [1, 2, 5, 10]}
    run: {T: 1000000, seed: 1, replicates: 5}
"""

from __future__ import annotations

import difflib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .channel import ChannelModel
from .phy import DEFAULT_MODES, PACKET_TYPES, PhyModeSet
from .policy import DEFAULT_P_MAX, ArrivalLaw
from .sim import POLICIES, Scenario


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


@dataclass
class ExperimentConfig:
    scenario: str
    snr0_db: float
    mode_labels: tuple[str, ...]
    rho: int
    rice_factor_db: float
    s_min: float
    sensors: tuple[ArrivalLaw, ...]
    policies: tuple[str, ...]
    V: tuple[float, ...]
    P_max: float
    tau: tuple[float, ...]
    T: int
    warmup: Optional[int]
    seed: int
    replicates: int
    lambdas: tuple[float, ...]
    bounds_K: int
    grid_per_dim: int
    n_samples: int
    snr_db_grid: tuple[float, float, int]
    text: str = field(default="", repr=False)

    @property
    def modes(self) -> PhyModeSet:
        return PhyModeSet.bluetooth(self.mode_labels, self.snr0_db, self.rho)

    @property
    def channel(self) -> ChannelModel:
        return ChannelModel(self.rice_factor_db, self.s_min)

    def scenario_for(self, policy: str, V: float, tau: float = 10.0) -> Scenario:
        return Scenario(self.sensors, self.modes, self.channel, policy, V, self.P_max, tau)


SCHEMA: dict[str, Any] = {
    "scenario": None,
    "phy": {"snr0_db": None, "modes": None, "rho": None},
    "channel": {"rice_factor_db": None, "s_min": None},
    "sensors": None,
    "policy": {"names": None, "V": None, "P_max": None, "tau": None},
    "run": {"T": None, "warmup": None, "seed": None, "replicates": None},
    "bounds": {"lambdas": None, "K": None, "grid_per_dim": None, "n_samples": None},
    "phy_curves": {"start_db": None, "stop_db": None, "num": None},
}
SENSOR_KEYS = ("rate", "arrival", "q", "period", "phase")


class _Doc:
    """Parsed document plus the source line of every mapping value."""

    def __init__(self, text: str, source: str):
        self.source = source
        loader = yaml.SafeLoader(text)
        try:
            node = loader.get_single_node()
            data = loader.construct_document(node) if node is not None else {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                              mark.line + 1 if mark else None, source) from None
        finally:
            loader.dispose()
        if not isinstance(data, dict):
            raise ConfigError("top level must be a mapping", 1, source)
        self.data = data
        self.lines: dict[tuple, int] = {}
        self._walk(node, ())

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                self.lines[path + (key_node.value, "__key__")] = key_node.start_mark.line + 1
                self._walk(value_node, path + (key_node.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                self._walk(item, path + (i,))

    def error(self, message: str, path: tuple):
        p = path
        while p and p not in self.lines:
            p = p[:-1]
        return ConfigError(message, self.lines.get(p), self.source)


def _dotted(path) -> str:
    return ".".join(str(p) for p in path)


def _check_keys(doc: _Doc, mapping: dict, allowed, path: tuple):
    for key in mapping:
        if key not in allowed:
            options = {str(a): str(a) for a in allowed}
            if not path:
                # a nested key written at top level: suggest its dotted path
                for section, sub in SCHEMA.items():
                    for leaf in sub or ():
                        options.setdefault(leaf, f"{section}.{leaf}")
            near = difflib.get_close_matches(str(key), list(options), n=1)
            hint = f"; did you mean '{options[near[0]]}'?" if near else ""
            raise ConfigError(f"unknown key '{_dotted(path + (key,))}'{hint}",
                              doc.lines.get(path + (key, "__key__")), doc.source)


def _section(doc: _Doc, name: str) -> dict:
    value = doc.data.get(name, {})
    if value is None:
        value = {}
    if not isinstance(value, dict):
        raise doc.error(f"'{name}' must be a mapping", (name,))
    _check_keys(doc, value, SCHEMA[name], (name,))
    return value


def _real(doc, value, path, lo=-math.inf, hi=math.inf, lo_open=False, allow_inf=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise doc.error(f"'{_dotted(path)}' must be a number, got {value!r}", path) from None
        else:
            raise doc.error(f"'{_dotted(path)}' must be a number, got {value!r}", path)
    value = float(value)
    if math.isnan(value) or (math.isinf(value) and not allow_inf):
        raise doc.error(f"'{_dotted(path)}' must be finite", path)
    if value < lo or value > hi or (lo_open and value == lo):
        bound = f"> {lo}" if lo_open else f">= {lo}"
        raise doc.error(f"'{_dotted(path)}' = {value} out of range (need {bound}"
                        + (f" and <= {hi})" if hi < math.inf else ")"), path)
    return value


def _int(doc, value, path, lo=None):
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise doc.error(f"'{_dotted(path)}' must be an integer, got {value!r}", path)
    if lo is not None and value < lo:
        raise doc.error(f"'{_dotted(path)}' = {value} out of range (need >= {lo})", path)
    return int(value)


def _list(doc, value, path, nonempty=True):
    if not isinstance(value, list):
        value = [value]
    if nonempty and not value:
        raise doc.error(f"'{_dotted(path)}' must not be empty", path)
    return value


def _sensor(doc: _Doc, item, i: int) -> ArrivalLaw:
    path = ("sensors", i)
    if not isinstance(item, dict):
        raise doc.error("each sensor must be a mapping", path)
    _check_keys(doc, item, SENSOR_KEYS, path)
    if "rate" not in item:
        raise doc.error(f"'{_dotted(path)}' needs a 'rate'", path)
    rate = _real(doc, item["rate"], path + ("rate",), lo=0.0)
    kind = item.get("arrival", "deterministic")
    if kind not in ("deterministic", "geometric"):
        raise doc.error(f"'{_dotted(path + ('arrival',))}' must be deterministic or geometric", path + ("arrival",))
    q = _real(doc, item.get("q", 1.0), path + ("q",), lo=0.0, hi=1.0, lo_open=True)
    period = _int(doc, item.get("period", 1), path + ("period",), lo=1)
    phase = _int(doc, item.get("phase", 0), path + ("phase",), lo=0)
    return ArrivalLaw(kind, rate, period, q, phase % period)


def parse_text(text: str, source: str = "<config>") -> ExperimentConfig:
    doc = _Doc(text, source)
    data = doc.data
    if "manifest_version" in data and "config_text" in data:
        cfg = parse_text(data["config_text"], source)
        if "seed" in data:
            cfg.seed = _int(doc, data["seed"], ("seed",), lo=0)
        return cfg
    _check_keys(doc, data, SCHEMA, ())

    scenario = data.get("scenario", "default")
    if not isinstance(scenario, str):
        raise doc.error("'scenario' must be a string", ("scenario",))

    phy = _section(doc, "phy")
    snr0_db = _real(doc, phy.get("snr0_db", 8.0), ("phy", "snr0_db"))
    labels = tuple(str(m).lower() for m in _list(doc, phy.get("modes", list(DEFAULT_MODES)), ("phy", "modes")))
    for i, lab in enumerate(labels):
        if lab not in PACKET_TYPES:
            near = difflib.get_close_matches(lab, list(PACKET_TYPES), n=1)
            hint = f"; did you mean '{near[0]}'?" if near else ""
            raise doc.error(f"unknown packet type '{lab}'{hint}", ("phy", "modes", i))
    rho = _int(doc, phy.get("rho", 6), ("phy", "rho"), lo=0)
    if rho > 64:
        raise doc.error("'phy.rho' out of range (need <= 64)", ("phy", "rho"))

    ch = _section(doc, "channel")
    rice = _real(doc, ch.get("rice_factor_db", 6.95), ("channel", "rice_factor_db"), allow_inf=True)
    s_min = _real(doc, ch.get("s_min", 0.01), ("channel", "s_min"), lo=0.0, lo_open=True)

    raw_sensors = data.get("sensors", [])
    if raw_sensors is None:
        raw_sensors = []
    if not isinstance(raw_sensors, list):
        raise doc.error("'sensors' must be a list", ("sensors",))
    sensors = tuple(_sensor(doc, item, i) for i, item in enumerate(raw_sensors))

    pol = _section(doc, "policy")
    names = tuple(_list(doc, pol.get("names", ["opportunistic"]), ("policy", "names")))
    for i, name in enumerate(names):
        if name not in POLICIES:
            near = difflib.get_close_matches(str(name), POLICIES, n=1)
            hint = f"; did you mean '{near[0]}'?" if near else ""
            raise doc.error(f"unknown policy '{name}'{hint}", ("policy", "names", i))
    v_list = tuple(
        _real(doc, v, ("policy", "V", i), lo=1.0, lo_open=True)
        for i, v in enumerate(_list(doc, pol.get("V", [100.0]), ("policy", "V")))
    )
    p_max = _real(doc, pol.get("P_max", DEFAULT_P_MAX), ("policy", "P_max"), lo=0.0, lo_open=True)
    taus = tuple(
        _real(doc, t, ("policy", "tau", i), lo=1.0)
        for i, t in enumerate(_list(doc, pol.get("tau", [10.0]), ("policy", "tau")))
    )

    run = _section(doc, "run")
    T = _int(doc, run.get("T", 1_000_000), ("run", "T"), lo=1)
    warmup = run.get("warmup")
    if warmup is not None:
        warmup = _int(doc, warmup, ("run", "warmup"), lo=0)
        if warmup >= T:
            raise doc.error("'run.warmup' must be smaller than 'run.T'", ("run", "warmup"))
    seed = _int(doc, run.get("seed", 0), ("run", "seed"), lo=0)
    replicates = _int(doc, run.get("replicates", 1), ("run", "replicates"), lo=1)

    bounds = _section(doc, "bounds")
    lambdas = tuple(
        _real(doc, v, ("bounds", "lambdas", i), lo=0.0)
        for i, v in enumerate(_list(doc, bounds.get("lambdas", [0.1, 0.5, 1.0, 1.5, 2.0, 2.5]), ("bounds", "lambdas")))
    )
    bounds_k = _int(doc, bounds.get("K", 1), ("bounds", "K"), lo=1)
    grid = _int(doc, bounds.get("grid_per_dim", 15), ("bounds", "grid_per_dim"), lo=2)
    n_samples = _int(doc, bounds.get("n_samples", 100_000), ("bounds", "n_samples"), lo=1)

    curves = _section(doc, "phy_curves")
    start = _real(doc, curves.get("start_db", 0.0), ("phy_curves", "start_db"))
    stop = _real(doc, curves.get("stop_db", 40.0), ("phy_curves", "stop_db"))
    num = _int(doc, curves.get("num", 201), ("phy_curves", "num"), lo=2)
    if stop <= start:
        raise doc.error("'phy_curves.stop_db' must exceed 'start_db'", ("phy_curves", "stop_db"))

    cfg = ExperimentConfig(
        scenario, snr0_db, labels, rho, rice, s_min, sensors, names, v_list, p_max, taus,
        T, warmup, seed, replicates, lambdas, bounds_k, grid, n_samples, (start, stop, num), text,
    )
    try:
        modes = cfg.modes
        channel = cfg.channel
    except ValueError as exc:
        raise ConfigError(str(exc), None, source) from None
    total = sum(s.rate for s in sensors)
    if sensors and total >= modes.max_rate:
        raise doc.error(
            f"total arrival rate {total:g} must stay below the peak service rate {modes.max_rate:.6g}", ("sensors",)
        )
    if p_max * channel.s_min < modes.snr0:
        raise doc.error("'policy.P_max' * s_min must reach snr0", ("policy", "P_max"))
    return cfg


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_text(text, str(path))

