"""Tiered node graphs and the structural rules handoff relies on.

A topology is a set of (node, tier) pairs plus undirected links.  Four
rules make handoff and version-vector dissemination work; each is checked
independently by :func:`validate_topology`:

* links are bidirectional (undirected by construction, still validated
  for unknown endpoints and self-links),
* the tier-0 subgraph is connected,
* every node reaches a tier-0 node along strictly decreasing tiers,
* two strictly-smaller-tier neighbors of one node are themselves linked
  (so a client can switch servers without losing connectivity guarantees).
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Topology:
    """Node/tier listing plus undirected links, with derived lookups."""

    nodes: list[tuple[str, int]]
    links: set[tuple[str, str]]
    tiers: dict[str, int] = field(init=False)
    neighbors: dict[str, list[str]] = field(init=False)

    def __post_init__(self):
        self.tiers = dict(self.nodes)
        if len(self.tiers) != len(self.nodes):
            raise ValueError("duplicate node ids in topology")
        self.links = {_norm_link(a, b) for a, b in self.links}
        nbrs: dict[str, set[str]] = {n: set() for n, _ in self.nodes}
        for a, b in self.links:
            if a in nbrs and b in nbrs:
                nbrs[a].add(b)
                nbrs[b].add(a)
        self.neighbors = {n: sorted(v) for n, v in nbrs.items()}

    @property
    def node_ids(self) -> list[str]:
        return sorted(self.tiers)

    @property
    def max_tier(self) -> int:
        return max(t for _, t in self.nodes) if self.nodes else 0

    def sorted_links(self) -> list[tuple[str, str]]:
        return sorted(self.links)


def _norm_link(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def validate_topology(topo: Topology) -> list[str]:
    """Return the list of rule violations (empty means the topology is ok)."""
    violations = []
    tiers = topo.tiers

    for a, b in sorted(topo.links):
        if a == b:
            violations.append(f"self-link at node {a}")
        if a not in tiers:
            violations.append(f"link endpoint {a} is not a declared node")
        if b not in tiers:
            violations.append(f"link endpoint {b} is not a declared node")

    tier0 = sorted(n for n, t in tiers.items() if t == 0)
    if len(tier0) > 1:
        seen = {tier0[0]}
        frontier = [tier0[0]]
        while frontier:
            cur = frontier.pop()
            for nbr in topo.neighbors.get(cur, ()):
                if tiers.get(nbr) == 0 and nbr not in seen:
                    seen.add(nbr)
                    frontier.append(nbr)
        missing = [n for n in tier0 if n not in seen]
        if missing:
            violations.append(f"tier-0 not connected: {', '.join(missing)} unreachable from {tier0[0]}")

    # A node reaches tier 0 descending strictly iff some strictly lower
    # neighbor does; resolving in increasing tier order needs one pass.
    reaches: dict[str, bool] = {}
    for node in sorted(tiers, key=lambda n: (tiers[n], n)):
        tier = tiers[node]
        reaches[node] = tier == 0 or any(
            tiers[nbr] < tier and reaches.get(nbr, False)
            for nbr in topo.neighbors.get(node, ())
        )
        if not reaches[node]:
            violations.append(f"no descending path to tier 0 from {node} (tier {tier})")

    for node in sorted(tiers):
        tier = tiers[node]
        lower = [n for n in topo.neighbors.get(node, ()) if tiers[n] < tier]
        for i, v in enumerate(lower):
            for w in lower[i + 1:]:
                if _norm_link(v, w) not in topo.links:
                    violations.append(
                        f"smaller-tier neighbors {v} and {w} of {node} are not linked"
                    )
    return violations


def datacenter_topology(datacenters: int, tier1_per_dc: int, clients_per_tier1: int,
                        tier0_per_dc: int = 1) -> Topology:
    """Expand the datacenter generator spec into a concrete topology.

    Per datacenter: ``tier0_per_dc`` tier-0 nodes (all tier-0 nodes are
    fully linked across datacenters), ``tier1_per_dc`` tier-1 servers
    (fully linked within the datacenter, each linked to the local tier-0
    nodes), and ``tier1_per_dc * clients_per_tier1`` tier-2 clients, each
    linked to every local tier-1 server so it can switch servers.
    """
    if datacenters < 1 or tier1_per_dc < 0 or clients_per_tier1 < 0 or tier0_per_dc < 1:
        raise ValueError("generator spec requires at least one datacenter and one tier-0 node per datacenter")
    nodes: list[tuple[str, int]] = []
    links: set[tuple[str, str]] = set()
    tier0_all: list[str] = []
    for d in range(datacenters):
        t0s = [f"dc{d}-t0-{k}" for k in range(tier0_per_dc)]
        t1s = [f"dc{d}-t1-{s}" for s in range(tier1_per_dc)]
        clients = [f"dc{d}-t2-{c}" for c in range(tier1_per_dc * clients_per_tier1)]
        nodes += [(n, 0) for n in t0s] + [(n, 1) for n in t1s] + [(n, 2) for n in clients]
        tier0_all += t0s
        for i, a in enumerate(t1s):
            for b in t1s[i + 1:]:
                links.add(_norm_link(a, b))
            for t0 in t0s:
                links.add(_norm_link(a, t0))
        for c in clients:
            for s in t1s:
                links.add(_norm_link(c, s))
    for i, a in enumerate(tier0_all):
        for b in tier0_all[i + 1:]:
            links.add(_norm_link(a, b))
    return Topology(nodes=nodes, links=links)


def topology_from_config(spec: dict) -> Topology:
    """Build a topology from an inline listing or a generator spec."""
    if not isinstance(spec, dict):
        raise ValueError("topology must be an object")
    if "generator" in spec:
        gen = spec["generator"]
        if not isinstance(gen, dict):
            raise ValueError("topology.generator must be an object")
        known = {"datacenters", "tier1_per_dc", "clients_per_tier1", "tier0_per_dc"}
        unknown = set(gen) - known
        if unknown:
            raise ValueError(f"unknown generator fields: {sorted(unknown)}")
        try:
            return datacenter_topology(
                datacenters=int(gen["datacenters"]),
                tier1_per_dc=int(gen["tier1_per_dc"]),
                clients_per_tier1=int(gen["clients_per_tier1"]),
                tier0_per_dc=int(gen.get("tier0_per_dc", 1)),
            )
        except KeyError as exc:
            raise ValueError(f"generator spec missing field {exc.args[0]!r}") from None
    if "nodes" not in spec or "links" not in spec:
        raise ValueError("topology needs either a generator spec or nodes + links")
    nodes = []
    for entry in spec["nodes"]:
        if (not isinstance(entry, (list, tuple)) or len(entry) != 2
                or not isinstance(entry[0], str)
                or not isinstance(entry[1], int) or entry[1] < 0):
            raise ValueError(f"node entries must be [id, tier] pairs, got {entry!r}")
        nodes.append((entry[0], entry[1]))
    links = set()
    for entry in spec["links"]:
        if (not isinstance(entry, (list, tuple)) or len(entry) != 2
                or not all(isinstance(e, str) for e in entry)):
            raise ValueError(f"link entries must be [a, b] pairs, got {entry!r}")
        links.add(_norm_link(entry[0], entry[1]))
    return Topology(nodes=nodes, links=links)
