"""Plain key = value run configuration.

Example::

    # couplings
    mu1 = 0.0013
    mu2 = 0.0449
    c1 = 1.0
    d1 = 1.0
    w0 = -0.5
    v0_amplitude = 0.005
    grid.n = 16
    grid.mode = double
    grid.offset = true

Unknown keys are rejected with their line numbers; defaults fill in every
omitted optional key.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .grid import GridMode, TorusGrid, build_grid
from .model import ExampleParams

_FLOAT_KEYS = {
    "mu1", "mu2", "c1", "c2", "c3", "d1", "d2", "d3", "w0", "v0_amplitude",
}
_GRID_KEYS = {"grid.n", "grid.mode", "grid.offset"}
_KNOWN = _FLOAT_KEYS | _GRID_KEYS

_DEFAULTS = {
    "c1": 1.0, "c2": 1.0, "c3": 1.0,
    "d1": 1.0, "d2": 1.0, "d3": 1.0,
    "w0": 1.0, "v0_amplitude": 0.0,
    "grid.n": 16, "grid.mode": "double", "grid.offset": True,
}

_MODES = {"base": GridMode.BASE, "double": GridMode.DOUBLE_COVER,
          "double_cover": GridMode.DOUBLE_COVER}


@dataclass(frozen=True)
class RunConfig:
    params: ExampleParams
    grid_n: int
    grid_mode: GridMode
    grid_offset: bool

    def build_grid(self) -> TorusGrid:
        return build_grid(self.grid_n, self.grid_mode, self.grid_offset)

    def echo(self) -> dict:
        return {
            "mu1": self.params.mu1,
            "mu2": self.params.mu2,
            "c": list(self.params.c),
            "d": list(self.params.d),
            "w0": self.params.w0,
            "v0_amplitude": self.params.v0_amplitude,
            "grid": {
                "n": self.grid_n,
                "mode": self.grid_mode.value,
                "offset": self.grid_offset,
            },
        }


def parse_config_text(text: str) -> RunConfig:
    values: dict = {}
    unknown: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _KNOWN:
            unknown.append(f"{key!r} (line {lineno})")
            continue
        if key in _FLOAT_KEYS:
            try:
                values[key] = float(val)
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} needs a number, got {val!r}")
        elif key == "grid.n":
            try:
                values[key] = int(val)
            except ValueError:
                raise ConfigError(f"line {lineno}: grid.n needs an integer, got {val!r}")
        elif key == "grid.mode":
            if val not in _MODES:
                raise ConfigError(
                    f"line {lineno}: grid.mode must be one of {sorted(_MODES)}, got {val!r}"
                )
            values[key] = val
        elif key == "grid.offset":
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"line {lineno}: grid.offset needs a boolean, got {val!r}")
            values[key] = low in ("true", "1", "yes")
    if unknown:
        raise ConfigError("unknown configuration keys: " + ", ".join(unknown))
    for key in ("mu1", "mu2"):
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    merged = {**_DEFAULTS, **values}
    params = ExampleParams(
        mu1=merged["mu1"],
        mu2=merged["mu2"],
        c=(merged["c1"], merged["c2"], merged["c3"]),
        d=(merged["d1"], merged["d2"], merged["d3"]),
        w0=merged["w0"],
        v0_amplitude=merged["v0_amplitude"],
    )
    return RunConfig(
        params=params,
        grid_n=merged["grid.n"],
        grid_mode=_MODES[merged["grid.mode"]],
        grid_offset=merged["grid.offset"],
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    return parse_config_text(text)
