"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Mapping, Optional

import numpy as np

from .tape import Tape, Var, backward


def grad_check(
    f: Callable[[Tape, dict[str, Var]], Var],
    point: Mapping[str, np.ndarray],
    h: float = 1e-5,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Max of ``|analytic - numeric| / max(1, |numeric|)`` over coordinates.

    ``f`` builds a scalar on the tape it is given from the named inputs.
    With ``max_coords`` only a seeded random subset of coordinates is probed.
    Always runs in 64-bit.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    point = {k: np.array(v, dtype=np.float64) for k, v in point.items()}

    tape = Tape(np.float64)
    inputs = {k: tape.param(k, v) for k, v in point.items()}
    grads = backward(tape, f(tape, inputs))

    def value(name, flat_index, delta):
        arr = point[name]
        saved = arr.flat[flat_index]
        arr.flat[flat_index] = saved + delta
        try:
            t = Tape(np.float64, record=False)
            return float(f(t, {k: t.param(k, v) for k, v in point.items()}).data)
        finally:
            arr.flat[flat_index] = saved

    coords = [(k, i) for k, v in point.items() for i in range(v.size)]
    if max_coords is not None and len(coords) > max_coords:
        # one coordinate from every input first, then a uniform fill
        rng = np.random.default_rng(seed)
        starts = np.cumsum([0] + [v.size for v in point.values()])
        chosen = {int(rng.integers(a, b)) for a, b in zip(starts[:-1], starts[1:]) if b > a}
        rest = np.setdiff1d(np.arange(len(coords)), sorted(chosen))
        extra = max(0, max_coords - len(chosen))
        chosen.update(rng.choice(rest, size=min(extra, len(rest)), replace=False).tolist())
        coords = [coords[i] for i in sorted(chosen)]

    worst = 0.0
    for name, i in coords:
        numeric = (value(name, i, h) - value(name, i, -h)) / (2.0 * h)
        analytic = grads[name].flat[i]
        worst = max(worst, abs(analytic - numeric) / max(1.0, abs(numeric)))
    return worst
