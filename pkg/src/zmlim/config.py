"""
Experiment configuration and its flat ``key = value`` text format.

Lines look like ``stepper.dt = 0.0005``; ``#`` starts a comment; tuples are
comma separated; booleans are ``true``/``false``.  Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from zmlim.errors import ConfigError


@dataclass
class GridSection:
    d: int = 2
    N: int = 64


@dataclass
class ModelSection:
    s: int = 3
    tau: float = 0.5
    T_L: float = 0.5
    T0: float = 1.0
    oscillation_heating: bool = True


@dataclass
class DataSection:
    """Amplitudes of the seeded initial data (sup norms of the fields or their gradients)."""

    seed: int = 7
    kmax: int = 1
    decay: float = 2.0
    v_I: float = 0.1
    q_I: float = 0.1
    psi_I: float = 0.1
    T_I: float = 0.05
    sigma_E: float = 0.125
    u_E: float = 0.125
    T_E: float = 0.125
    well_prepared: bool = False


@dataclass
class StepperSection:
    dt: float = 5e-4
    scheme: str = "IF-RK4"
    snapshot_dt: float = 2.5e-3
    ds: float = 0.05


@dataclass
class SweepSection:
    eps_list: tuple = (0.1, 0.05, 0.025, 0.0125)
    slope_min: float = 0.8
    second_order: bool = False
    threads: int = 0


@dataclass
class RunSection:
    eps: float = 0.05


@dataclass
class ExperimentConfig:
    grid: GridSection = field(default_factory=GridSection)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    stepper: StepperSection = field(default_factory=StepperSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> "ExperimentConfig":
        d, N = self.grid.d, self.grid.N
        if d not in (2, 3):
            raise ConfigError(f"grid.d must be 2 or 3, got {d}")
        if N < 8 or N & (N - 1):
            raise ConfigError(f"grid.N must be a power of two >= 8, got {N}")
        if not self.model.s > d / 2 + 1:
            raise ConfigError(f"model.s={self.model.s} must exceed d/2 + 1 = {d / 2 + 1}")
        if self.model.tau <= 0 or self.model.T_L <= 0:
            raise ConfigError("model.tau and model.T_L must be positive")
        if self.model.T0 - self.data.T_I < self.model.T_L:
            raise ConfigError(
                f"initial temperature can drop to T0 - T_I = {self.model.T0 - self.data.T_I:.4g} "
                f"below T_L = {self.model.T_L}"
            )
        eps = self.sweep.eps_list
        if any(not (0 < e < 1) for e in eps):
            raise ConfigError("every eps must lie in (0, 1)")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("sweep.eps_list must be strictly decreasing")
        if not (0 < self.run.eps < 1):
            raise ConfigError("run.eps must lie in (0, 1)")
        st = self.stepper
        if st.dt <= 0 or st.snapshot_dt < st.dt or st.ds <= 0:
            raise ConfigError("need 0 < stepper.dt <= stepper.snapshot_dt and stepper.ds > 0")
        ratio = st.snapshot_dt / st.dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ConfigError("stepper.snapshot_dt must be a multiple of stepper.dt")
        steps = self.model.tau / st.snapshot_dt
        if abs(steps - round(steps)) > 1e-9 * steps:
            raise ConfigError("model.tau must be a multiple of stepper.snapshot_dt")
        if eps and st.snapshot_dt > 2 * math.pi * min(eps) / 16 + 1e-15:
            raise ConfigError(
                f"stepper.snapshot_dt={st.snapshot_dt} leaves fewer than 16 snapshots per "
                f"fast period 2*pi*eps_min={2 * math.pi * min(eps):.4g}"
            )
        return self

    # -- flat key/value form -------------------------------------------------

    def to_flat(self) -> dict:
        out = {}
        for sec in dataclasses.fields(self):
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                out[f"{sec.name}.{f.name}"] = getattr(obj, f.name)
        return out

    def set(self, key: str, raw) -> None:
        sec_name, _, name = key.partition(".")
        sec = getattr(self, sec_name, None) if sec_name in _SECTIONS else None
        if sec is None or name not in {f.name for f in dataclasses.fields(sec)}:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(sec, name)
        setattr(sec, name, _coerce(key, current, raw))


_SECTIONS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key, current, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        cfg.set(key.strip(), value)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: ExperimentConfig, header: list[str] | None = None) -> str:
    lines = [f"# {h}" for h in (header or [])]
    lines += [f"{k} = {format_value(v)}" for k, v in cfg.to_flat().items()]
    return "\n".join(lines) + "\n"
