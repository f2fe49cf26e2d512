"""Registry of fitted constants.

The analytic estimates this package verifies come with unspecified constants
C.  Each constant is measured once on a calibration sample and recorded
here; assertions then use twice the calibrated value, so the checks test
structure (decay orders, envelopes) rather than guessed magnitudes.
"""

from __future__ import annotations

import json

_REGISTRY: dict[str, float] = {}


def get_constant(name: str, default: float = 1.0) -> float:
    return _REGISTRY.get(name, default)


def record_constant(name: str, value: float) -> None:
    _REGISTRY[name] = float(value)


def calibrated_bound(name: str, default: float = 1.0) -> float:
    """Assertion threshold: 2x the calibrated constant."""
    return 2.0 * get_constant(name, default)


def dump(path) -> None:
    with open(path, "w") as fh:
        json.dump(_REGISTRY, fh, indent=2, sort_keys=True)


def load(path) -> None:
    with open(path) as fh:
        _REGISTRY.update(json.load(fh))
