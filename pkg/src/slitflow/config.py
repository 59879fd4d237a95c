"""Runtime settings, overridable through ``SLITFLOW_*`` environment variables."""

import os
from dataclasses import dataclass, fields


def _env_flag(name, default):
    raw = os.environ.get(name)
    if raw is None:
        return default
    return raw.strip().lower() not in ("0", "false", "no", "off", "")


@dataclass(frozen=True)
class Settings:
    kernel_resolution: int = 16
    kernel_tol: float = 1e-8
    kernel_max_resolution: int = 128
    cond_limit: float = 1e12
    slit_rtol: float = 1e-8
    probe_rtol: float = 1e-7
    flow_rtol: float = 1e-10
    max_step: float = 0.01
    absorb_eps: float = 1e-6
    height_floor_frac: float = 1e-3
    driver_slit_eps: float = 1e-2
    hull_eps: float = 1e-3
    grid_h: float = 2.0 ** -8
    sde_dt: float = 1e-4

    @classmethod
    def from_env(cls):
        kwargs = {}
        for f in fields(cls):
            raw = os.environ.get("SLITFLOW_" + f.name.upper())
            if raw is not None:
                kwargs[f.name] = type(f.default)(float(raw))
        return cls(**kwargs)


USE_NUMBA = _env_flag("SLITFLOW_NUMBA", True)

settings = Settings.from_env()
