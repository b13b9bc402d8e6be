"""Naive version-vector counter, used as oracle and scalability foil.

Every participant owns one entry in a map of node ids to counts; merge is
the pointwise maximum and the reported value the sum of all entries.  It
converges under arbitrary loss/duplication/reordering, but every id that
ever participates pollutes every replica forever -- the id explosion the
handoff mechanism exists to avoid.  Entries are deliberately never removed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

NodeId = str


@dataclass(slots=True)
class GCounterState:
    id: NodeId
    entries: dict[NodeId, int]


def gc_init(node_id: NodeId) -> GCounterState:
    """Fresh replica; the caller must use each id once, ever."""
    return GCounterState(id=node_id, entries={node_id: 0})


def gc_incr(state: GCounterState, amount: int = 1) -> GCounterState:
    if amount < 0:
        raise ValueError("amount must be non-negative")
    entries = dict(state.entries)
    entries[state.id] = entries.get(state.id, 0) + amount
    return GCounterState(id=state.id, entries=entries)


def gc_fetch(state: GCounterState) -> int:
    return sum(state.entries.values())


def gc_merge(ci: GCounterState, cj: GCounterState) -> GCounterState:
    """Pointwise maximum over the key union."""
    entries = dict(ci.entries)
    for key, value in cj.entries.items():
        if entries.get(key, -1) < value:
            entries[key] = value
    return GCounterState(id=ci.id, entries=entries)


def gc_encode(state: GCounterState) -> bytes:
    obj = {"entries": dict(sorted(state.entries.items())), "id": state.id}
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def gc_decode(data: bytes) -> GCounterState:
    try:
        obj = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ValueError(f"undecodable g-counter state: {exc}") from None
    if not isinstance(obj, dict) or set(obj) != {"id", "entries"}:
        raise ValueError("g-counter state must be an object with fields id, entries")
    node_id = obj["id"]
    entries = obj["entries"]
    if not isinstance(node_id, str) or not node_id:
        raise ValueError("id must be a non-empty string")
    if not isinstance(entries, dict) or node_id not in entries:
        raise ValueError("entries must be a map containing the self entry")
    for key, value in entries.items():
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise ValueError(f"entry {key!r} must be a non-negative integer, got {value!r}")
    return GCounterState(id=node_id, entries=dict(entries))
