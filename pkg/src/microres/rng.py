"""Counter-based uniform random numbers.

Every uniform used by the simulator and the synthetic generator is a pure
function of ``(seed, claim key, replication, step, lane)``.  Results therefore
do not depend on how claims and replications are split across chunks or
worker processes.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / float(1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser (wrapping uint64 arithmetic)."""
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def policy_key(policy_id: str) -> int:
    """Stable 64-bit key of a policy identifier."""
    digest = hashlib.blake2b(str(policy_id).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def policy_keys(policy_ids) -> np.ndarray:
    return np.array([policy_key(p) for p in policy_ids], dtype=np.uint64)


def counter_uniforms(seed: int, keys, replications, step: int, lane: int) -> np.ndarray:
    """Uniforms in [0, 1) for aligned arrays of claim keys and replications."""
    keys = np.asarray(keys, dtype=np.uint64)
    reps = np.asarray(replications).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _GOLDEN + np.uint64(lane + 1))
        h = _mix(h ^ keys)
        h = _mix(h + (reps + np.uint64(1)) * _GOLDEN)
        h = _mix(h ^ (np.uint64(step & 0xFFFFFFFF) * _M2 + np.uint64(0x632BE59BD9B4E019)))
    return (h >> _S11).astype(np.float64) * _INV53


def substream(seed: int, *tags: int) -> np.random.Generator:
    """Independent numpy generator for a tagged sub-task (e.g. one replication)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(t) & 0xFFFFFFFF for t in tags]]))
