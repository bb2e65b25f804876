"""Symmetric group utilities: enumeration, composition, cycle types.

Permutations are tuples mapping position k to sigma[k], 0-based. Cycle
types are descending partitions, e.g. (2, 1) for a transposition in S_3.
"""

import itertools
from dataclasses import dataclass

from .errors import ContractViolation


def all_permutations(p: int):
    """S_p as a list of tuples; identity first."""
    return [tuple(perm) for perm in itertools.permutations(range(p))]


def identity(p: int) -> tuple:
    return tuple(range(p))


def compose(sigma, tau) -> tuple:
    """(sigma o tau)[k] = sigma[tau[k]]."""
    return tuple(sigma[tau[k]] for k in range(len(tau)))


def inverse(sigma) -> tuple:
    inv = [0] * len(sigma)
    for k, v in enumerate(sigma):
        inv[v] = k
    return tuple(inv)


def cycles(sigma):
    seen = [False] * len(sigma)
    out = []
    for start in range(len(sigma)):
        if seen[start]:
            continue
        cyc = []
        k = start
        while not seen[k]:
            seen[k] = True
            cyc.append(k)
            k = sigma[k]
        out.append(cyc)
    return out


def cycle_count(sigma) -> int:
    return len(cycles(sigma))


def cycle_type(sigma) -> tuple:
    """Descending partition of cycle lengths."""
    return tuple(sorted((len(c) for c in cycles(sigma)), reverse=True))


def cycle_type_key(ctype) -> str:
    """Stable text form of a cycle-type partition, like '3+1'. JSON key."""
    t = tuple(sorted((int(v) for v in ctype), reverse=True))
    if any(v < 1 for v in t):
        raise ContractViolation(f"bad cycle type {ctype!r}")
    return "+".join(str(v) for v in t)


@dataclass(frozen=True)
class Permutation:
    mapping: tuple

    def __post_init__(self):
        m = tuple(int(v) for v in self.mapping)
        if sorted(m) != list(range(len(m))):
            raise ContractViolation(f"{self.mapping!r} is not a bijection")
        object.__setattr__(self, "mapping", m)

    @property
    def p(self) -> int:
        return len(self.mapping)

    @property
    def cycle_type(self) -> tuple:
        return cycle_type(self.mapping)
