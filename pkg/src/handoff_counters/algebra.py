"""Payload algebras: the value domains a handoff counter can carry.

A payload algebra is a commutative monoid (combine, zero) that is also a
join-semilattice (join, leq) whose least element equals the monoid identity
and where join(x, y) is always below combine(x, y).  Counter state moves
between nodes by zeroing at the origin (via the identity) and combining at
the destination, while reporting aggregates with join.

Three instances are provided:

* ``NAT``  -- plain non-negative integer counts (combine=+, join=max),
* ``MAP``  -- a map from counter ids to counts, for many counters in one
  replica (combine adds per key, join takes per-key max),
* ``PN``   -- the MAP algebra restricted to keys ``p`` and ``n``, giving a
  counter that supports both increments and decrements.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

Payload = Any


@dataclass(frozen=True)
class PayloadAlgebra:
    """Commutative monoid + join-semilattice over payload values.

    Laws (checked by the test suite on generated values):
      combine is associative/commutative with identity ``zero``;
      join is associative/commutative/idempotent and induces ``leq``
      (leq(x, y) iff join(x, y) == y); ``bottom == zero``; and
      leq(join(x, y), combine(x, y)) for all x, y.
    """

    name: str
    zero: Payload
    combine: Callable[[Payload, Payload], Payload]
    join: Callable[[Payload, Payload], Payload]
    leq: Callable[[Payload, Payload], bool]

    @property
    def bottom(self) -> Payload:
        # least element of the semilattice; required to equal zero
        return self.zero


def _check_nat(x: int) -> int:
    if not isinstance(x, int) or isinstance(x, bool) or x < 0:
        raise ValueError(f"nat payload must be a non-negative integer, got {x!r}")
    return x


def nat_algebra() -> PayloadAlgebra:
    """Non-negative integer counts: combine is addition, join is max."""
    return PayloadAlgebra(
        name="nat",
        zero=0,
        combine=lambda x, y: x + y,
        join=lambda x, y: x if x >= y else y,
        leq=lambda x, y: x <= y,
    )


def map_payload(entries: dict[str, int] | None = None) -> dict[str, int]:
    """Normalize a counter map: validate counts and drop zero entries.

    An absent key reads as zero, so dropping explicit zeros makes structural
    equality coincide with semantic equality.
    """
    if not entries:
        return {}
    out = {}
    for key, value in entries.items():
        if not isinstance(key, str):
            raise ValueError(f"map payload keys must be strings, got {key!r}")
        _check_nat(value)
        if value != 0:
            out[key] = value
    return out


def map_combine(x: dict[str, int], y: dict[str, int]) -> dict[str, int]:
    """Key union, adding counts on common keys."""
    if not x:
        return dict(y)
    if not y:
        return dict(x)
    out = dict(x)
    for key, value in y.items():
        out[key] = out.get(key, 0) + value
    return out

def map_join(x: dict[str, int], y: dict[str, int]) -> dict[str, int]:
    """Key union, taking the maximum count on common keys."""
    if not x:
        return dict(y)
    if not y:
        return dict(x)
    out = dict(x)
    for key, value in y.items():
        if out.get(key, 0) < value:
            out[key] = value
    return out

def map_leq(x: dict[str, int], y: dict[str, int]) -> bool:
    """Pointwise order with absent keys read as zero."""
    return all(y.get(key, 0) >= value for key, value in x.items())


def map_algebra() -> PayloadAlgebra:
    """Map-of-counters payloads over normalized ``{counter_id: count}`` dicts."""
    return PayloadAlgebra(
        name="map",
        zero={},
        combine=map_combine,
        join=map_join,
        leq=map_leq,
    )


def pn_algebra() -> PayloadAlgebra:
    """Increment/decrement counter: the map algebra over keys ``p`` and ``n``.

    The restriction to the two keys is a usage convention enforced by the
    mutators in :mod:`handoff_counters.core` scenarios, not by the algebra
    operations themselves.
    """
    alg = map_algebra()
    return PayloadAlgebra(
        name="pn",
        zero=alg.zero,
        combine=alg.combine,
        join=alg.join,
        leq=alg.leq,
    )


def pn_fetch(payload: dict[str, int]) -> int:
    """Report an increment/decrement counter: count(p) minus count(n)."""
    return payload.get("p", 0) - payload.get("n", 0)


NAT = nat_algebra()
MAP = map_algebra()
PN = pn_algebra()

_BY_NAME = {"nat": NAT, "map": MAP, "pn": PN}


def algebra_by_name(name: str) -> PayloadAlgebra:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown payload algebra {name!r}; expected one of {sorted(_BY_NAME)}") from None


def encode_payload(value: Payload) -> Payload:
    """JSON-ready form of a payload (ints pass through, maps sorted by key)."""
    if isinstance(value, dict):
        return {k: value[k] for k in sorted(value)}
    return value


def decode_payload(raw: Payload) -> Payload:
    """Inverse of :func:`encode_payload`, validating the payload shape."""
    if isinstance(raw, dict):
        return map_payload(raw)
    if isinstance(raw, int) and not isinstance(raw, bool):
        return _check_nat(raw)
    raise ValueError(f"payload must be an int or a string-keyed map, got {raw!r}")
