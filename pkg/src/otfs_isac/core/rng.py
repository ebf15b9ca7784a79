"""Seeded random streams for reproducible Monte Carlo runs.

Every random draw in a run comes from a child generator whose seed is the
counter tuple ``(master_seed, stream, point, trial)`` fed to
:class:`numpy.random.SeedSequence`. Trials can therefore run in any order or
in parallel and still reproduce bit-identical results.
"""
from typing import Optional, Union

import numpy as np

SeedLike = Union[int, np.random.Generator, None]

# Stream identifiers keep independent consumers of one master seed apart.
STREAMS = {
    "channel-estimation": 1,
    "ber": 2,
    "sensing": 3,
    "path-detection": 4,
    "fnn-dataset": 5,
    "fnn-training": 6,
    "selftest": 7,
}


def stream_id(name: str) -> int:
    try:
        return STREAMS[name]
    except KeyError:
        raise ValueError(f"Unknown random stream '{name}'") from None


def trial_rng(
    master_seed: int, stream: Union[str, int], point: int = 0, trial: int = 0
) -> np.random.Generator:
    """Child generator for one (stream, sweep point, trial) triple."""
    if master_seed < 0:
        raise ValueError(f"Master seed must be non-negative, got {master_seed}")
    sid = stream_id(stream) if isinstance(stream, str) else int(stream)
    sequence = np.random.SeedSequence([master_seed, sid, point, trial])
    return np.random.default_rng(sequence)


def as_generator(seed: SeedLike, default: Optional[int] = None) -> np.random.Generator:
    """Accept a seed or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        seed = default
    return np.random.default_rng(seed)
