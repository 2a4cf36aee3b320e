"""Counter-based random streams and order-preserving parallel execution.

Every random quantity is drawn from a Philox stream addressed by
``(seed, key..., index)``: the key selects the purpose (frozen state,
driver, sigma, ...), the index selects the trial.  Streams are derived
from the address alone, so results never depend on how trials are
distributed over workers.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

# stream purposes
FROZEN = 1
DRIVER = 2
SIGMA = 3
WBAR = 4
WPERP = 5
DRIFT = 6
EXACT = 7
GAUSS = 8
COUNTER = 9

TRIAL_BLOCK = 1024


def _key(seed: int, purpose: Sequence[int]) -> np.ndarray:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in purpose))
    return ss.generate_state(2, np.uint64)


def stream(seed: int, *purpose: int, index: int = 0) -> np.random.Generator:
    """Return the generator for ``(seed, purpose..., index)``.

    The Philox key is a hash of ``(seed, purpose)``; ``index`` is placed in
    the third counter word, so distinct indices never share counter space.
    """
    key = _key(seed, purpose)
    counter = np.array([0, 0, index, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def trial_normals(seed: int, purpose: Sequence[int], start: int, stop: int, size: int) -> np.ndarray:
    """Standard normals for trials ``start..stop-1``, one stream per trial."""
    key = _key(seed, purpose)
    out = np.empty((stop - start, size))
    counter = np.zeros(4, dtype=np.uint64)
    for row, k in enumerate(range(start, stop)):
        counter[2] = k
        gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
        out[row] = gen.standard_normal(size)
    return out


def blocks(n: int, block: int = TRIAL_BLOCK) -> list[tuple[int, int]]:
    return [(s, min(s + block, n)) for s in range(0, n, block)]


def map_blocks(fn: Callable, n: int, workers: int = 1, block: int = TRIAL_BLOCK, args: tuple = ()) -> list:
    """Evaluate ``fn(start, stop, *args)`` over fixed-size trial blocks.

    Block boundaries depend only on ``n`` and ``block``; results come back in
    block order for any ``workers``.  ``fn`` must be picklable when
    ``workers > 1``.
    """
    ranges = blocks(n, block)
    if workers <= 1 or len(ranges) <= 1:
        return [fn(s, e, *args) for s, e in ranges]
    with ProcessPoolExecutor(max_workers=min(workers, len(ranges))) as pool:
        futures = [pool.submit(fn, s, e, *args) for s, e in ranges]
        return [f.result() for f in futures]


def driver_purpose(stream_index: int = 0) -> tuple[int, ...]:
    """Purpose tuple for fresh-driver stream ``stream_index``.

    Stream 0 is the one ``simulate_paths`` uses for frozen-state runs.
    """
    return (DRIVER,) if stream_index == 0 else (DRIVER, int(stream_index))
