import numpy as np
import pytest

from aacoords.chart import build_chart
from aacoords.systems import builtin
from aacoords.torus import GridSpec, build_lattice_field


class _Lazy:
    """Build-once cache keyed by name, shared across the session."""

    def __init__(self, make):
        self._make = make
        self._store = {}

    def __getitem__(self, key):
        if key not in self._store:
            self._store[key] = self._make(key)
        return self._store[key]


def _field(name):
    spec = builtin(name)
    if name == "harmonic1d":
        return build_lattice_field(spec, GridSpec([np.linspace(0.5, 1.5, 11)]))
    return build_lattice_field(spec)


@pytest.fixture(scope="session")
def fields():
    return _Lazy(_field)


@pytest.fixture(scope="session")
def charts(fields):
    def make(name):
        spec = builtin(name)
        return build_chart(spec, fields[name], straighten=(name == "oscillator2d"))

    return _Lazy(make)


@pytest.fixture(scope="session")
def raw_charts(fields):
    """Charts without straightening."""
    return _Lazy(lambda name: build_chart(builtin(name), fields[name]))
