"""Bundled test feeder: the 33-bus radial distribution network.

Line impedances are the classic Baran-Wu data (ohms at 12.66 kV),
converted here to per-unit on a 1 MVA base.  The nominal bus loads ship
alongside as the spatial template for the synthetic load sampler; they are
not part of :class:`~incentflow.grid.NetworkCase` itself.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .grid import Line, NetworkCase, dump_case, load_case

BASE_KV = 12.66
BASE_MVA = 1.0
_Z_BASE = BASE_KV**2 / BASE_MVA  # ohm

# from, to, r (ohm), x (ohm), P at "to" bus (kW), Q at "to" bus (kvar)
_IEEE33_BRANCHES = [
    (0, 1, 0.0922, 0.0470, 100.0, 60.0),
    (1, 2, 0.4930, 0.2511, 90.0, 40.0),
    (2, 3, 0.3660, 0.1864, 120.0, 80.0),
    (3, 4, 0.3811, 0.1941, 60.0, 30.0),
    (4, 5, 0.8190, 0.7070, 60.0, 20.0),
    (5, 6, 0.1872, 0.6188, 200.0, 100.0),
    (6, 7, 0.7114, 0.2351, 200.0, 100.0),
    (7, 8, 1.0300, 0.7400, 60.0, 20.0),
    (8, 9, 1.0440, 0.7400, 60.0, 20.0),
    (9, 10, 0.1966, 0.0650, 45.0, 30.0),
    (10, 11, 0.3744, 0.1238, 60.0, 35.0),
    (11, 12, 1.4680, 1.1550, 60.0, 35.0),
    (12, 13, 0.5416, 0.7129, 120.0, 80.0),
    (13, 14, 0.5910, 0.5260, 60.0, 10.0),
    (14, 15, 0.7463, 0.5450, 60.0, 20.0),
    (15, 16, 1.2890, 1.7210, 60.0, 20.0),
    (16, 17, 0.7320, 0.5740, 90.0, 40.0),
    (1, 18, 0.1640, 0.1565, 90.0, 40.0),
    (18, 19, 1.5042, 1.3554, 90.0, 40.0),
    (19, 20, 0.4095, 0.4784, 90.0, 40.0),
    (20, 21, 0.7089, 0.9373, 90.0, 40.0),
    (2, 22, 0.4512, 0.3083, 90.0, 50.0),
    (22, 23, 0.8980, 0.7091, 420.0, 200.0),
    (23, 24, 0.8960, 0.7011, 420.0, 200.0),
    (5, 25, 0.2030, 0.1034, 60.0, 25.0),
    (25, 26, 0.2842, 0.1447, 60.0, 25.0),
    (26, 27, 1.0590, 0.9337, 60.0, 20.0),
    (27, 28, 0.8042, 0.7006, 120.0, 70.0),
    (28, 29, 0.5075, 0.2585, 200.0, 600.0),
    (29, 30, 0.9744, 0.9630, 150.0, 70.0),
    (30, 31, 0.3105, 0.3619, 210.0, 100.0),
    (31, 32, 0.3410, 0.5302, 60.0, 40.0),
]


def ieee33_case() -> NetworkCase:
    lines = tuple(
        Line(f, t, r / _Z_BASE, x / _Z_BASE) for f, t, r, x, _, _ in _IEEE33_BRANCHES
    )
    return NetworkCase(
        bus_count=33,
        slack_id=0,
        lines=lines,
        slack_voltage=1.0 + 0.0j,
        base_mva=BASE_MVA,
        name="ieee33",
    )


def ieee33_load_template() -> tuple[np.ndarray, np.ndarray]:
    """Nominal demand per PQ bus in per-unit (positive demand units)."""
    p = np.zeros(32)
    q = np.zeros(32)
    for _, to, _, _, p_kw, q_kvar in _IEEE33_BRANCHES:
        p[to - 1] += p_kw / (BASE_MVA * 1000.0)
        q[to - 1] += q_kvar / (BASE_MVA * 1000.0)
    return p, q


def bundled_case_path() -> str:
    """Filesystem path of the shipped sample case file."""
    return str(resources.files("incentflow").joinpath("data/ieee33.json"))


def write_ieee33_json(path) -> None:
    """Regenerate the sample case file from the embedded table."""
    case = ieee33_case()
    extra = {}
    for _, to, _, _, p_kw, q_kvar in _IEEE33_BRANCHES:
        extra[to] = {"p_kw": p_kw, "q_kvar": q_kvar}
    dump_case(case, path, bus_extra=extra)


def load_case_or_bundled(path: str | None) -> NetworkCase:
    if path is None:
        return ieee33_case()
    return load_case(path)
