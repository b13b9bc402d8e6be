"""The handoff counter replica: state record, local ops, and merge.

Each replica lives at a node with a fixed tier.  Counts accumulate in the
replica's own ``vals`` entry and move toward tier 0 through a four-step
slot/token handshake embedded in ``merge``: the lower-tier side opens a
*slot* for the higher-tier side, the higher-tier side moves its accounted
value into a *token* matched to that slot, the slot is filled by acquiring
the token, and finally the token is discarded once the source learns the
slot is gone.  Slot and token identities carry a (source clock, destination
clock) pair so that duplicated or reordered messages can never create or
acquire the same slot/token twice.

All operations are pure: they never mutate their inputs and return new
states.  A node's current state is expected to be swapped atomically by the
caller, which is what makes crash recovery from the last stored state safe.

``merge`` applies eight transformations in a fixed order (innermost first):
fillslots, discardslot, createslot, mergevectors, aggregate, discardtokens,
createtoken, cachetokens.  Each stage sees the previous stage's output and
the unmodified received state.  The staged functions below are the
reference pipeline; ``merge`` itself is a fused single pass over the same
logic (the test suite asserts both agree on randomly sampled states).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable

from .algebra import NAT, Payload, PayloadAlgebra, decode_payload, encode_payload

NodeId = str
ClockPair = tuple[int, int]
TokenKey = tuple[NodeId, NodeId]
TokenVal = tuple[ClockPair, Payload]
# Full identity of a slot or token: (src, dst, sck, dck).
TokenId = tuple[NodeId, NodeId, int, int]


class SelfMergeError(ValueError):
    """Raised when a state is merged with another state of the same id.

    A node never sends to itself, so this always signals a harness bug
    rather than a recoverable condition.
    """


@dataclass(slots=True)
class HandoffState:
    """One node's replica.

    id:     globally unique node id (callers must never reuse one)
    tier:   the node's fixed tier; values flow toward tier 0
    val:    largest counter value safely reportable from local knowledge
    below:  lower bound on the value accounted at strictly smaller tiers
    vals:   id -> payload; only the self entry unless tier 0, where entries
            for the other tier-0 nodes form the permanent version vector
    sck:    source clock, bumped when this node creates a token
    dck:    destination clock, bumped when this node creates a slot
    slots:  source id -> (sck, dck) clock pair authorizing one token
    tokens: (src, dst) -> ((sck, dck), payload); at most one per pair,
            held by the creator and possibly cached at third nodes
    """

    id: NodeId
    tier: int
    val: Payload
    below: Payload
    vals: dict[NodeId, Payload]
    sck: int
    dck: int
    slots: dict[NodeId, ClockPair]
    tokens: dict[TokenKey, TokenVal]

    def token_ids(self) -> list[TokenId]:
        """Full (src, dst, sck, dck) identities of the tokens held here."""
        return [(src, dst, ck[0], ck[1]) for (src, dst), (ck, _) in self.tokens.items()]


def init(node_id: NodeId, tier: int, alg: PayloadAlgebra = NAT) -> HandoffState:
    """Fresh replica for a never-before-used node id."""
    if not isinstance(node_id, str) or not node_id or "|" in node_id:
        raise ValueError(f"node id must be a non-empty string without '|', got {node_id!r}")
    if tier < 0:
        raise ValueError(f"tier must be a non-negative integer, got {tier!r}")
    zero = alg.zero
    return HandoffState(
        id=node_id, tier=tier, val=zero, below=zero,
        vals={node_id: zero}, sck=0, dck=0, slots={}, tokens={},
    )


def fetch(state: HandoffState) -> Payload:
    """Report the counter value (the cached maximum safely known locally)."""
    return state.val


def mutate(state: HandoffState, inflate: Callable[[Payload], Payload],
           alg: PayloadAlgebra = NAT) -> HandoffState:
    """Apply an inflation to both ``val`` and the self ``vals`` entry.

    ``inflate`` must be an inflation (x is below inflate(x)) and commute
    with the other mutations used, otherwise convergence is forfeit.
    """
    new_val = inflate(state.val)
    new_self = inflate(state.vals[state.id])
    if not alg.leq(state.val, new_val) or not alg.leq(state.vals[state.id], new_self):
        raise ValueError("mutation is not an inflation")
    vals = dict(state.vals)
    vals[state.id] = new_self
    return replace(state, val=new_val, vals=vals)


def add_delta(state: HandoffState, delta: Payload, alg: PayloadAlgebra = NAT) -> HandoffState:
    """Inflate by combining a payload delta into ``val`` and the self entry."""
    combine = alg.combine
    vals = dict(state.vals)
    vals[state.id] = combine(vals[state.id], delta)
    return replace(state, val=combine(state.val, delta), vals=vals)


def incr(state: HandoffState) -> HandoffState:
    """Count one event (integer payloads)."""
    vals = dict(state.vals)
    vals[state.id] += 1
    return replace(state, val=state.val + 1, vals=vals)


def map_incr(state: HandoffState, counter_id: str, amount: int = 1) -> HandoffState:
    """Count ``amount`` events against one counter of a map payload."""
    from .algebra import MAP
    if amount < 0:
        raise ValueError("amount must be non-negative")
    return add_delta(state, {counter_id: amount}, MAP) if amount else state


def pn_incr(state: HandoffState, amount: int = 1) -> HandoffState:
    return map_incr(state, "p", amount)


def pn_decr(state: HandoffState, amount: int = 1) -> HandoffState:
    return map_incr(state, "n", amount)


# ---------------------------------------------------------------------------
# The eight merge transformations (reference pipeline).
#
# Each takes the accumulating local state and the received state, returning
# the next local state.  They are only meaningful inside merge, in order.
# ---------------------------------------------------------------------------

def fillslots(ci: HandoffState, cj: HandoffState, alg: PayloadAlgebra = NAT) -> HandoffState:
    """Acquire received tokens that exactly match one of our slots.

    The token payload is combined into our self entry and the slot is
    removed, consuming the one-shot authorization it represented.
    """
    acquired = [
        (src, n)
        for (src, dst), (ck, n) in cj.tokens.items()
        if dst == ci.id and ci.slots.get(src) == ck
    ]
    if not acquired:
        return ci
    vals = dict(ci.vals)
    acc = vals[ci.id]
    for _, n in acquired:
        acc = alg.combine(acc, n)
    vals[ci.id] = acc
    gone = {src for src, _ in acquired}
    slots = {k: v for k, v in ci.slots.items() if k not in gone}
    return replace(ci, vals=vals, slots=slots)


def discardslot(ci: HandoffState, cj: HandoffState, alg: PayloadAlgebra = NAT) -> HandoffState:
    """Drop our slot for the sender if it can never be filled.

    The sender's source clock having moved past the slot's recorded value
    proves the matching token will never be generated.
    """
    slot = ci.slots.get(cj.id)
    if slot is None or cj.sck <= slot[0]:
        return ci
    slots = dict(ci.slots)
    del slots[cj.id]
    return replace(ci, slots=slots)


def createslot(ci: HandoffState, cj: HandoffState, alg: PayloadAlgebra = NAT) -> HandoffState:
    """Open a slot for a higher-tier sender that has value to hand off.

    Storing and bumping the destination clock makes the slot identity
    unrepeatable, so duplicate messages cannot recreate it.
    """
    if ci.tier < cj.tier and cj.vals[cj.id] != alg.zero and cj.id not in ci.slots:
        slots = dict(ci.slots)
        slots[cj.id] = (cj.sck, ci.dck)
        return replace(ci, slots=slots, dck=ci.dck + 1)
    return ci


def mergevectors(ci: HandoffState, cj: HandoffState, alg: PayloadAlgebra = NAT) -> HandoffState:
    """Join the permanent version vectors pointwise (tier-0 pairs only)."""
    if ci.tier != 0 or cj.tier != 0:
        return ci
    join = alg.join
    vals = dict(ci.vals)
    for key, value in cj.vals.items():
        cur = vals.get(key)
        vals[key] = value if cur is None else join(cur, value)
    return replace(ci, vals=vals)


def aggregate(ci: HandoffState, cj: HandoffState, alg: PayloadAlgebra = NAT) -> HandoffState:
    """Pull the sender's knowledge of smaller-tier totals into below/val.

    ``below`` is computed first and ``val`` uses the new value; both can
    only grow.  At tier 0 the reportable value is the whole vector sum.
    """
    join, combine = alg.join, alg.combine
    if ci.tier == cj.tier:
        b = join(ci.below, cj.below)
    elif ci.tier > cj.tier:
        b = join(ci.below, cj.val)
    else:
        b = ci.below
    if ci.tier == 0:
        v = alg.zero
        for n in ci.vals.values():
            v = combine(v, n)
    elif ci.tier == cj.tier:
        v = join(ci.val, join(cj.val, combine(combine(b, ci.vals[ci.id]), cj.vals[cj.id])))
    else:
        v = join(ci.val, combine(b, ci.vals[ci.id]))
    return replace(ci, below=b, val=v)


def discardtokens(ci: HandoffState, cj: HandoffState, alg: PayloadAlgebra = NAT) -> HandoffState:
    """Drop tokens destined to the sender that it provably acquired.

    Proof is either a slot for the token's source with a larger destination
    clock, or no such slot and the sender's destination clock past the
    token's.  Either way the slot the token matched is gone for good.
    """
    if not ci.tokens:
        return ci
    kept = {}
    for key, tok in ci.tokens.items():
        src, dst = key
        if dst == cj.id:
            dck = tok[0][1]
            slot = cj.slots.get(src)
            if slot is not None:
                if slot[1] > dck:
                    continue
            elif cj.dck > dck:
                continue
        kept[key] = tok
    if len(kept) == len(ci.tokens):
        return ci
    return replace(ci, tokens=kept)


def createtoken(ci: HandoffState, cj: HandoffState, alg: PayloadAlgebra = NAT) -> HandoffState:
    """Move our accounted value into a token for the sender's slot.

    Requires the sender's slot for us to carry our current source clock;
    creating the token bumps that clock, so the same token can never be
    created twice.  A zero-valued token is permitted.
    """
    slot = cj.slots.get(ci.id)
    if slot is None or slot[0] != ci.sck:
        return ci
    tokens = dict(ci.tokens)
    tokens[(ci.id, cj.id)] = (slot, ci.vals[ci.id])
    vals = dict(ci.vals)
    vals[ci.id] = alg.zero
    return replace(ci, tokens=tokens, vals=vals, sck=ci.sck + 1)


def cachetokens(ci: HandoffState, cj: HandoffState, alg: PayloadAlgebra = NAT) -> HandoffState:
    """Cache a higher-tier sender's own outbound tokens for other nodes.

    Per (src, dst) pair the entry with the larger source clock wins; an
    older entry must already have been acquired.  Caching lets a client
    delegate finishing a handoff if its chosen server becomes unreachable.
    """
    if ci.tier >= cj.tier:
        return ci
    incoming = {
        key: tok
        for key, tok in cj.tokens.items()
        if key[0] == cj.id and key[1] != ci.id
    }
    if not incoming:
        return ci
    tokens = dict(ci.tokens)
    for key, tok in incoming.items():
        mine = tokens.get(key)
        if mine is None or mine[0][0] < tok[0][0]:
            tokens[key] = tok
    return replace(ci, tokens=tokens)


_PIPELINE = (fillslots, discardslot, createslot, mergevectors,
             aggregate, discardtokens, createtoken, cachetokens)


def merge_staged(ci: HandoffState, cj: HandoffState, alg: PayloadAlgebra = NAT) -> HandoffState:
    """Merge as the literal composition of the eight transformations."""
    if ci.id == cj.id:
        raise SelfMergeError(f"merge of node {ci.id!r} with itself")
    acc = ci
    for stage in _PIPELINE:
        acc = stage(acc, cj, alg)
    return acc


def merge(ci: HandoffState, cj: HandoffState, alg: PayloadAlgebra = NAT) -> HandoffState:
    """Merge a received state into the local one (fused fast path).

    Equivalent to :func:`merge_staged`; the received state may be
    view-restricted (see :func:`view`), which changes nothing here.
    """
    if ci.id == cj.id:
        raise SelfMergeError(f"merge of node {ci.id!r} with itself")
    combine, join, zero = alg.combine, alg.join, alg.zero
    i, j = ci.id, cj.id
    tier_i, tier_j = ci.tier, cj.tier

    vals = ci.vals
    slots = ci.slots
    sck = ci.sck
    dck = ci.dck
    self_val = vals[i]
    vals_fresh = slots_fresh = False

    # fillslots
    cj_tokens = cj.tokens
    if cj_tokens and slots:
        gone = None
        for key, tok in cj_tokens.items():
            if key[1] == i and slots.get(key[0]) == tok[0]:
                self_val = combine(self_val, tok[1])
                if gone is None:
                    gone = [key[0]]
                else:
                    gone.append(key[0])
        if gone is not None:
            vals = dict(vals)
            vals[i] = self_val
            vals_fresh = True
            slots = dict(slots)
            slots_fresh = True
            for src in gone:
                del slots[src]

    # discardslot
    slot_j = slots.get(j)
    if slot_j is not None and cj.sck > slot_j[0]:
        if not slots_fresh:
            slots = dict(slots)
            slots_fresh = True
        del slots[j]

    # createslot
    if tier_i < tier_j and j not in slots and cj.vals[j] != zero:
        if not slots_fresh:
            slots = dict(slots)
            slots_fresh = True
        slots[j] = (cj.sck, dck)
        dck += 1

    # mergevectors
    if tier_i == 0 and tier_j == 0:
        if not vals_fresh:
            vals = dict(vals)
            vals_fresh = True
        for key, value in cj.vals.items():
            cur = vals.get(key)
            vals[key] = value if cur is None else join(cur, value)
        self_val = vals[i]

    # aggregate (b first, v with the new b)
    if tier_i == tier_j:
        below = join(ci.below, cj.below)
    elif tier_i > tier_j:
        below = join(ci.below, cj.val)
    else:
        below = ci.below
    if tier_i == 0:
        val = zero
        for n in vals.values():
            val = combine(val, n)
    elif tier_i == tier_j:
        val = join(ci.val, join(cj.val, combine(combine(below, self_val), cj.vals[j])))
    else:
        val = join(ci.val, combine(below, self_val))

    # discardtokens
    tokens = ci.tokens
    tokens_fresh = False
    if tokens:
        cj_slots = cj.slots
        cj_dck = cj.dck
        kept = {}
        changed = False
        for key, tok in tokens.items():
            if key[1] == j:
                tok_dck = tok[0][1]
                slot = cj_slots.get(key[0])
                if (slot[1] > tok_dck) if slot is not None else (cj_dck > tok_dck):
                    changed = True
                    continue
            kept[key] = tok
        if changed:
            tokens = kept
            tokens_fresh = True

    # createtoken
    slot_i = cj.slots.get(i)
    if slot_i is not None and slot_i[0] == sck:
        if not tokens_fresh:
            tokens = dict(tokens)
            tokens_fresh = True
        tokens[(i, j)] = (slot_i, self_val)
        if not vals_fresh:
            vals = dict(vals)
            vals_fresh = True
        vals[i] = zero
        sck += 1

    # cachetokens
    if tier_i < tier_j and cj_tokens:
        for key, tok in cj_tokens.items():
            if key[0] == j and key[1] != i:
                mine = tokens.get(key)
                if mine is None or mine[0][0] < tok[0][0]:
                    if not tokens_fresh:
                        tokens = dict(tokens)
                        tokens_fresh = True
                    tokens[key] = tok

    return HandoffState(
        id=i, tier=tier_i, val=val, below=below, vals=vals,
        sck=sck, dck=dck, slots=slots, tokens=tokens,
    )


def view(state: HandoffState, dest_id: NodeId, dest_tier: int) -> HandoffState:
    """Restrict the state to what the destination's merge will look at.

    Only the slots map shrinks: a higher-tier destination needs just its
    own slot, a lower-tier destination needs none, and an equal-tier
    destination needs the full map (it may cache tokens destined to us).
    Safe when a client's handoff servers all share one tier.
    """
    if state.tier < dest_tier:
        slot = state.slots.get(dest_id)
        return replace(state, slots={} if slot is None else {dest_id: slot})
    if state.tier > dest_tier:
        return replace(state, slots={})
    return state


@dataclass(slots=True)
class RetirementEvidence:
    """Token ids of ours seen cached in states received from other nodes."""

    node_id: NodeId
    cached: set[TokenId] = field(default_factory=set)

    def observe(self, received: HandoffState) -> None:
        """Record our own tokens appearing in a state received from elsewhere."""
        for (src, dst), (ck, _) in received.tokens.items():
            if src == self.node_id:
                self.cached.add((src, dst, ck[0], ck[1]))


def can_retire(state: HandoffState, alg: PayloadAlgebra = NAT) -> bool:
    """True when every locally issued count is accounted elsewhere.

    Requires the self entry drained to zero and no tokens held: any token
    still here might be the only copy of a value in flight.
    """
    return state.vals[state.id] == alg.zero and not state.tokens


def can_retire_cached(state: HandoffState, evidence: RetirementEvidence,
                      alg: PayloadAlgebra = NAT) -> bool:
    """Like :func:`can_retire` but own tokens may instead be cached elsewhere.

    A token of ours seen in another node's state will be delivered by that
    node eventually, so we may go silent without waiting for the
    destination itself to confirm.
    """
    if state.vals[state.id] != alg.zero:
        return False
    for tid in state.token_ids():
        if tid[0] == state.id and tid not in evidence.cached:
            return False
    return True


# ---------------------------------------------------------------------------
# Canonical wire encoding: JSON mirroring the state record, keys sorted,
# tokens keyed by "src|dst".  Equal states encode byte-identically.
# ---------------------------------------------------------------------------

def _to_jsonable(state: HandoffState) -> dict:
    return {
        "id": state.id,
        "tier": state.tier,
        "val": encode_payload(state.val),
        "below": encode_payload(state.below),
        "vals": {k: encode_payload(v) for k, v in sorted(state.vals.items())},
        "sck": state.sck,
        "dck": state.dck,
        "slots": {k: list(v) for k, v in sorted(state.slots.items())},
        "tokens": {
            f"{src}|{dst}": [list(ck), encode_payload(n)]
            for (src, dst), (ck, n) in sorted(state.tokens.items())
        },
    }


def encode(state: HandoffState) -> bytes:
    """Canonical byte encoding of a state."""
    return json.dumps(_to_jsonable(state), sort_keys=True, separators=(",", ":")).encode()


def encoded_size(state: HandoffState) -> int:
    return len(encode(state))


_FIELDS = {"id", "tier", "val", "below", "vals", "sck", "dck", "slots", "tokens"}


def _clock_pair(raw) -> ClockPair:
    if (not isinstance(raw, list) or len(raw) != 2
            or not all(isinstance(c, int) and not isinstance(c, bool) and c >= 0 for c in raw)):
        raise ValueError(f"clock pair must be two non-negative integers, got {raw!r}")
    return (raw[0], raw[1])


def decode(data: bytes) -> HandoffState:
    """Decode :func:`encode` output, rejecting malformed input."""
    try:
        obj = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ValueError(f"undecodable handoff state: {exc}") from None
    if not isinstance(obj, dict) or set(obj) != _FIELDS:
        raise ValueError(f"handoff state must be an object with fields {sorted(_FIELDS)}")
    node_id = obj["id"]
    tier = obj["tier"]
    sck, dck = obj["sck"], obj["dck"]
    if not isinstance(node_id, str) or not node_id:
        raise ValueError("id must be a non-empty string")
    for name, value in (("tier", tier), ("sck", sck), ("dck", dck)):
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    vals = {k: decode_payload(v) for k, v in obj["vals"].items()}
    if node_id not in vals:
        raise ValueError("vals must contain the self entry")
    if tier != 0 and set(vals) != {node_id}:
        raise ValueError("non-tier-0 states must carry only the self vals entry")
    slots = {}
    for src, ck in obj["slots"].items():
        if src == node_id:
            raise ValueError("a node cannot hold a slot keyed by its own id")
        slots[src] = _clock_pair(ck)
    tokens: dict[TokenKey, TokenVal] = {}
    for key, tok in obj["tokens"].items():
        src, sep, dst = key.partition("|")
        if not sep or not src or not dst or src == dst:
            raise ValueError(f"token key must be 'src|dst' with distinct ids, got {key!r}")
        if not isinstance(tok, list) or len(tok) != 2:
            raise ValueError(f"token value must be [[sck, dck], payload], got {tok!r}")
        tokens[(src, dst)] = (_clock_pair(tok[0]), decode_payload(tok[1]))
    return HandoffState(
        id=node_id, tier=tier,
        val=decode_payload(obj["val"]), below=decode_payload(obj["below"]),
        vals=vals, sck=sck, dck=dck, slots=slots, tokens=tokens,
    )
