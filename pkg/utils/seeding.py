from typing import List
import numpy as np


def spawn_seeds(seed: int, count: int) -> List[int]:
    """Derive ``count`` independent integer seeds from one root seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]


def spawn_generators(seed: int, count: int) -> List[np.random.Generator]:
    """One independent generator per task, derived deterministically from ``seed``."""
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(count)]
