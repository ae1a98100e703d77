"""TOML run configuration.

Frequencies are given in units of 2*pi*MHz (so ``omega_q = 3500`` means
``2*pi*3500e6 rad/s``); times in seconds or as the scaled time
``omega_q t / pi``.  Omitted fields take the default
processor parameters (see :meth:`NetworkSpec.table1`).
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib
import tomli_w

from .coeff import DEFAULT_CAP, CoeffTensor
from .generators import TWO_PI_MHZ, NetworkSpec

PRESETS = ("annihilation-product", "number", "identity", "projector-k")
METHODS = ("generating-function", "conventional", "both")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class NetworkBlock:
    n_modes: int = 1
    omega_q: Any = 3500.0
    eta: Any = 250.0
    drive: Any = None  # default: 125 on mode 1, 0 elsewhere
    omega_d: Any = 3500.0
    kappa: Any = 0.02 / (2 * math.pi)
    coupling: Any = 10.0

    def to_spec(self) -> NetworkSpec:
        n = self.n_modes
        drive = self.drive
        if drive is None:
            drive = [125.0] + [0.0] * (n - 1)
        cpl = np.asarray(self.coupling, dtype=float)
        if cpl.ndim == 0:
            cpl = np.full((n, n), float(cpl))
            np.fill_diagonal(cpl, 0.0)
        return NetworkSpec(
            omega_q=_vec(self.omega_q, n) * TWO_PI_MHZ,
            eta=_vec(self.eta, n) * TWO_PI_MHZ,
            drive=_cvec(drive, n) * TWO_PI_MHZ,
            omega_d=_vec(self.omega_d, n) * TWO_PI_MHZ,
            kappa=_vec(self.kappa, n) * TWO_PI_MHZ,
            coupling=cpl * TWO_PI_MHZ,
        )


def _vec(x, n: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"expected a scalar or {n} values, got {list(arr.shape)}")
    return arr


def _cvec(x, n: int) -> np.ndarray:
    """Complex per-mode values; a complex entry is written ``[re, im]``."""
    if not isinstance(x, list):
        return np.full(n, complex(x))
    out = []
    for v in x:
        out.append(complex(v[0], v[1]) if isinstance(v, list) else complex(v))
    if len(out) != n:
        raise ValueError(f"expected {n} drive values, got {len(out)}")
    return np.array(out)


@dataclass
class OperatorBlock:
    preset: str | None = "annihilation-product"
    k: int = 0  # projector level / number-operator mode
    offset: int | None = None
    terms: list | None = None  # [[k1, l1, ..., re, im], ...]

    def tensor(self, n_modes: int, cap: int) -> CoeffTensor:
        if (self.preset is None) == (self.terms is None):
            raise ValueError("operator needs exactly one of 'preset' or 'terms'")
        if self.terms is not None:
            data = {}
            for row in self.terms:
                if len(row) != 2 * n_modes + 2:
                    raise ValueError(f"term {row} needs {2 * n_modes} exponents plus re, im")
                data[tuple(int(v) for v in row[:-2])] = complex(row[-2], row[-1])
            return CoeffTensor(n_modes, data, cap=cap)
        if self.preset == "identity":
            return CoeffTensor.identity(n_modes, cap)
        if self.preset == "annihilation-product":
            return CoeffTensor.monomial((0, 1) * n_modes, cap=cap)
        if self.preset == "number":
            if not 0 <= self.k < n_modes:
                raise ValueError("number preset: k selects the mode and must be < n_modes")
            idx = [0] * (2 * n_modes)
            idx[2 * self.k] = idx[2 * self.k + 1] = 1
            return CoeffTensor.monomial(idx, cap=cap)
        if self.preset == "projector-k":
            return projector(self.k, n_modes, cap)
        raise ValueError(f"unknown preset {self.preset!r} (choose from {', '.join(PRESETS)})")


def projector(k: int, n_modes: int, cap: int) -> CoeffTensor:
    """``|k><k|`` on mode 1: ``(1/k!) sum_p (-1)^p/p! (a^dag)^{k+p} a^{k+p}``."""
    data = {}
    for p in range(cap - k + 1):
        idx = [0] * (2 * n_modes)
        idx[0] = idx[1] = k + p
        data[tuple(idx)] = (-1) ** p / (math.factorial(k) * math.factorial(p))
    return CoeffTensor(n_modes, data, cap=cap)


@dataclass
class IntegratorBlock:
    scaled_time: float = 10.0
    total_time: float | None = None
    dt: float | None = None
    tau: float = 0.0
    cap: int = DEFAULT_CAP
    r_mode: str = "diagonal"
    out_degree: int = 2
    n_samples: int = 200


@dataclass
class StateBlock:
    kind: str = "vacuum"  # vacuum | coherent | number
    alpha: list | None = None  # per mode, complex as [re, im]
    n: list | None = None


@dataclass
class CompareBlock:
    target: float = 1e-4
    ref_levels: int = 8
    levels: int = 8  # conventional production truncation


@dataclass
class BenchBlock:
    modes: list = field(default_factory=lambda: [1, 2])
    scaled_times: list = field(default_factory=lambda: [10.0])
    cap: int = 16
    target: float = 1e-4


@dataclass
class EntropyBlock:
    hw_over_kte: float = 12.0
    eta: list = field(default_factory=lambda: [-50.0, 0.0, 50.0, 250.0])
    t0_ratios: list = field(default_factory=lambda: [0.5, 0.8, 1.2, 2.0])
    window_fractions: list = field(default_factory=lambda: [0.1, 0.5, 0.9])
    n_levels: int = 16


@dataclass
class RunConfig:
    network: NetworkBlock = field(default_factory=NetworkBlock)
    operator: OperatorBlock = field(default_factory=OperatorBlock)
    integrator: IntegratorBlock = field(default_factory=IntegratorBlock)
    state: StateBlock = field(default_factory=StateBlock)
    compare: CompareBlock = field(default_factory=CompareBlock)
    bench: BenchBlock = field(default_factory=BenchBlock)
    entropy: EntropyBlock = field(default_factory=EntropyBlock)
    method: str = "generating-function"
    out: str = "out"

    def spec(self) -> NetworkSpec:
        return self.network.to_spec()

    def total_time(self) -> float:
        if self.integrator.total_time is not None:
            return float(self.integrator.total_time)
        return self.integrator.scaled_time * math.pi / float(self.spec().omega_q[0])

    def initial_operator(self) -> CoeffTensor:
        return self.operator.tensor(self.network.n_modes, self.integrator.cap)

    def to_dict(self) -> dict:
        return _strip_none(asdict(self))

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())


_BLOCKS = {
    "network": NetworkBlock,
    "operator": OperatorBlock,
    "integrator": IntegratorBlock,
    "state": StateBlock,
    "compare": CompareBlock,
    "bench": BenchBlock,
    "entropy": EntropyBlock,
}
_TOP = {"method", "out"}


def _strip_none(d):
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    return d


def _line_of(text: str, section: str | None, key: str) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", stripped)
        if m:
            current = m.group(1)
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return no
        if section is not None and current is None and stripped.startswith(f"{section}."):
            return no
    return None


def parse_config(text: str) -> RunConfig:
    """Parse and validate; errors carry the offending line when known."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"syntax error: {exc}", int(m.group(1)) if m else None) from None
    kwargs = {}
    for key, value in raw.items():
        if key in _TOP:
            kwargs[key] = value
            continue
        if key not in _BLOCKS:
            raise ConfigError(f"unknown section or key {key!r}", _line_of(text, None, key) or _section_line(text, key))
        if not isinstance(value, dict):
            raise ConfigError(f"{key!r} must be a table", _line_of(text, None, key))
        cls = _BLOCKS[key]
        names = set(cls.__dataclass_fields__)
        for sub in value:
            if sub not in names:
                raise ConfigError(f"unknown key {sub!r} in [{key}]", _line_of(text, key, sub))
        if key == "operator" and "terms" in value and "preset" not in value:
            value = dict(value, preset=None)
        try:
            kwargs[key] = cls(**value)
        except TypeError as exc:
            raise ConfigError(f"[{key}]: {exc}", _section_line(text, key)) from None
    cfg = RunConfig(**kwargs)
    _validate(cfg, text)
    return cfg


def _section_line(text: str, section: str) -> int | None:
    for no, line in enumerate(text.splitlines(), 1):
        if re.match(rf"^\s*\[\s*{re.escape(section)}\s*\]", line):
            return no
    return None


def _validate(cfg: RunConfig, text: str) -> None:
    def fail(section, key, msg):
        raise ConfigError(msg, _line_of(text, section, key) or _section_line(text, section))

    net = cfg.network
    if not isinstance(net.n_modes, int) or net.n_modes < 1:
        fail("network", "n_modes", "n_modes must be a positive integer")
    try:
        kappa = _vec(net.kappa, net.n_modes)
        omega = _vec(net.omega_q, net.n_modes)
    except ValueError as exc:
        fail("network", "kappa", str(exc))
    if np.any(kappa < 0):
        fail("network", "kappa", "kappa must be non-negative")
    if np.any(omega <= 0):
        fail("network", "omega_q", "omega_q must be positive")
    try:
        net.to_spec()
    except ValueError as exc:
        key = "coupling" if "coupling" in str(exc) else "drive"
        fail("network", key, str(exc))
    if cfg.method not in METHODS:
        fail(None, "method", f"method must be one of {', '.join(METHODS)}")
    integ = cfg.integrator
    if integ.dt is not None and integ.dt <= 0:
        fail("integrator", "dt", "dt must be positive (seconds)")
    if integ.tau < 0:
        fail("integrator", "tau", "tau must be non-negative")
    if integ.r_mode not in ("diagonal", "full"):
        fail("integrator", "r_mode", "r_mode must be 'diagonal' or 'full'")
    if integ.cap < 2:
        fail("integrator", "cap", "cap must be at least 2")
    if (integ.total_time if integ.total_time is not None else integ.scaled_time) < 0:
        fail("integrator", "scaled_time", "time must be non-negative")
    try:
        op = cfg.initial_operator()
    except ValueError as exc:
        fail("operator", "preset", str(exc))
    if cfg.operator.offset is not None:
        d = cfg.operator.offset
        bad = [idx for idx in op.data if any(idx[2 * j + 1] - idx[2 * j] != d for j in range(net.n_modes))]
        if bad:
            fail("operator", "offset", f"operator has entries off the diagonal offset {d}: {bad[0]}")
    if cfg.state.kind not in ("vacuum", "coherent", "number"):
        fail("state", "kind", "state kind must be vacuum, coherent or number")
    if cfg.compare.target <= 0:
        fail("compare", "target", "target must be positive")


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
