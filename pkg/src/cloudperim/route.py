"""L3/L4 connectivity resolution over the scenario's locus graph.

Loci are network segments plus the distinguished ONPREM and INTERNET.
Paths are shortest by hop count with lexicographic edge-id tie-break, so
resolution is deterministic for a fixed scenario.

Non-routable segments are origins or destinations, never transit: a path
may leave one only when it is the flow's source, and may enter one only
through a vpc-connector edge or a terminal endpoint-traversal hop. A NAT
hop is legal only as the final hop toward INTERNET.
"""

from __future__ import annotations

import heapq
import ipaddress
from dataclasses import dataclass
from enum import Enum

from . import model as m
from .errors import UnknownLocusError, UnknownTargetError
from .scenario import Scenario


class HopKind(str, Enum):
    INTRA_SEGMENT = "intra-segment"
    PEERING = "peering"
    GATEWAY = "gateway"
    INTERCONNECT = "interconnect"
    VPN = "vpn"
    NAT = "nat"
    VPC_CONNECTOR = "vpc-connector"
    ENDPOINT_TRAVERSAL = "endpoint-traversal"


_EDGE_HOP = {
    m.EdgeKind.PEERING: HopKind.PEERING,
    m.EdgeKind.INTERCONNECT: HopKind.INTERCONNECT,
    m.EdgeKind.VPN: HopKind.VPN,
    m.EdgeKind.NAT_GATEWAY: HopKind.NAT,
    m.EdgeKind.VPC_CONNECTOR: HopKind.VPC_CONNECTOR,
    m.EdgeKind.GATEWAY_APPLIANCE: HopKind.GATEWAY,
}


@dataclass(frozen=True)
class Hop:
    kind: HopKind
    src: str
    dst: str
    edge: str | None = None        # connectivity edge or consumer endpoint id
    attachment: str | None = None  # for endpoint-traversal hops

    def describe(self) -> str:
        return f"{self.kind.value}({self.edge})" if self.edge else self.kind.value


@dataclass(frozen=True)
class RoutePath:
    hops: tuple[Hop, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "hops", tuple(self.hops))

    @property
    def endpoint_hop(self) -> Hop | None:
        for h in self.hops:
            if h.kind is HopKind.ENDPOINT_TRAVERSAL:
                return h
        return None

    def gateway_hops(self) -> list[Hop]:
        return [h for h in self.hops if h.kind is HopKind.GATEWAY]

    def describe(self) -> str:
        return "+".join(h.describe() for h in self.hops) or "local"


class UnreachableReason(str, Enum):
    NO_PATH = "NO_PATH"
    NON_ROUTABLE = "NON_ROUTABLE"


@dataclass(frozen=True)
class Unreachable:
    reason: UnreachableReason


def _edge_traversals(s: Scenario, at: str, source: str, final_target: str):
    """Yield (edge, next_locus) legal from ``at`` for a flow from ``source``."""
    idx = s.index()
    at_seg = idx.segments.get(at)
    if at_seg is not None and at_seg.routability is m.Routability.NON_ROUTABLE and at != source:
        return  # non-routable segments are never transit
    for e in s.edges:
        if at not in e.ends:
            continue
        nxt = e.other_end(at)
        if nxt == at:
            continue
        if e.direction is m.EdgeDirection.OUTBOUND_ONLY and e.ends[0] != at:
            continue
        if e.kind is m.EdgeKind.NAT_GATEWAY and (nxt != m.INTERNET or final_target != m.INTERNET):
            continue  # nat only as the final hop toward INTERNET
        nxt_seg = idx.segments.get(nxt)
        if (
            nxt_seg is not None
            and nxt_seg.routability is m.Routability.NON_ROUTABLE
            and e.kind is not m.EdgeKind.VPC_CONNECTOR
        ):
            continue  # cannot route into a non-routable segment
        yield e, nxt


def _shortest_locus_path(s: Scenario, source: str, goal: str, final_target: str) -> list[Hop] | None:
    """Deterministic shortest path between loci: (hop count, edge ids) minimal."""
    if source == goal:
        return []
    counter = 0  # heap tiebreaker; Hop tuples do not order
    queue: list[tuple[int, tuple[str, ...], int, str, tuple[Hop, ...]]] = [(0, (), 0, source, ())]
    best: dict[str, tuple[int, tuple[str, ...]]] = {source: (0, ())}
    while queue:
        dist, key, _, at, hops = heapq.heappop(queue)
        if at == goal:
            return list(hops)
        if best.get(at, (dist, key)) < (dist, key):
            continue
        for edge, nxt in _edge_traversals(s, at, source, final_target):
            cand_key = key + (edge.id,)
            cand = (dist + 1, cand_key)
            if nxt in best and best[nxt] <= cand:
                continue
            best[nxt] = cand
            hop = Hop(kind=_EDGE_HOP[edge.kind], src=at, dst=nxt, edge=edge.id)
            counter += 1
            heapq.heappush(queue, (dist + 1, cand_key, counter, nxt, hops + (hop,)))
    return None


def _candidate_paths_to_service(s: Scenario, source: str, svc: m.ServiceSpec) -> list[list[Hop]]:
    idx = s.index()
    candidates: list[list[Hop]] = []
    if source == svc.segment:
        candidates.append([Hop(kind=HopKind.INTRA_SEGMENT, src=source, dst=source)])
    else:
        direct = _shortest_locus_path(s, source, svc.segment, svc.segment)
        if direct is not None:
            candidates.append(direct)
    att = idx.attachment_for_service.get(svc.id)
    if att is not None:
        for ep in idx.endpoints_for_attachment.get(att.id, ()):
            lead = _shortest_locus_path(s, source, ep.segment, ep.segment)
            if lead is None:
                continue
            traversal = Hop(
                kind=HopKind.ENDPOINT_TRAVERSAL,
                src=ep.segment,
                dst=svc.segment,
                edge=ep.id,
                attachment=att.id,
            )
            candidates.append(lead + [traversal])
    return candidates


def _pick(candidates: list[list[Hop]]) -> list[Hop] | None:
    if not candidates:
        return None
    return min(candidates, key=lambda hops: (len(hops), tuple(h.edge or "" for h in hops)))


def resolve_path(s: Scenario, source: str, target: str) -> RoutePath | Unreachable:
    """Resolve how ``source`` reaches ``target`` (service, endpoint, address, INTERNET)."""
    idx = s.index()
    if source not in idx.segments and source not in m.DISTINGUISHED_LOCI:
        raise UnknownLocusError(source)
    cache = getattr(idx, "_path_cache", None)
    if cache is None:
        cache = idx._path_cache = {}
    if (source, target) in cache:
        return cache[(source, target)]
    result = _resolve_uncached(s, source, target)
    cache[(source, target)] = result
    return result


def _resolve_uncached(s: Scenario, source: str, target: str) -> RoutePath | Unreachable:
    idx = s.index()
    if target == m.INTERNET:
        hops = _shortest_locus_path(s, source, m.INTERNET, m.INTERNET)
        return RoutePath(tuple(hops)) if hops is not None else Unreachable(UnreachableReason.NO_PATH)

    if target in idx.services:
        svc = idx.services[target]
        picked = _pick(_candidate_paths_to_service(s, source, svc))
        if picked is not None:
            return RoutePath(tuple(picked))
        home = idx.segments.get(svc.segment)
        if home is not None and home.routability is m.Routability.NON_ROUTABLE:
            return Unreachable(UnreachableReason.NON_ROUTABLE)
        return Unreachable(UnreachableReason.NO_PATH)

    if target in idx.endpoints:
        ep = idx.endpoints[target]
        att = idx.attachments.get(ep.attachment)
        svc = idx.services.get(att.service) if att else None
        if svc is None:
            raise UnknownTargetError(target)
        lead = _shortest_locus_path(s, source, ep.segment, ep.segment)
        if lead is None:
            return Unreachable(UnreachableReason.NO_PATH)
        traversal = Hop(
            kind=HopKind.ENDPOINT_TRAVERSAL,
            src=ep.segment,
            dst=svc.segment,
            edge=ep.id,
            attachment=att.id,
        )
        return RoutePath(tuple(lead + [traversal]))

    # bare address target
    try:
        ipaddress.ip_address(target.split(":")[0])
    except ValueError:
        raise UnknownTargetError(target) from None
    holder = next(
        (seg for seg in s.segments if seg.cidrs and seg.contains_address(target.split(":")[0])),
        None,
    )
    if holder is None:
        raise UnknownTargetError(target)
    if holder.id == source:
        return RoutePath((Hop(kind=HopKind.INTRA_SEGMENT, src=source, dst=source),))
    if holder.routability is m.Routability.NON_ROUTABLE:
        return Unreachable(UnreachableReason.NON_ROUTABLE)
    hops = _shortest_locus_path(s, source, holder.id, holder.id)
    return RoutePath(tuple(hops)) if hops is not None else Unreachable(UnreachableReason.NO_PATH)


def routable_pairs(s: Scenario) -> set[tuple[str, str]]:
    """All (source locus, service-or-INTERNET) pairs with a resolvable path."""
    sources = sorted(x.id for x in s.segments) + [m.ONPREM, m.INTERNET]
    targets = sorted(x.id for x in s.services) + [m.INTERNET]
    pairs = set()
    for src in sources:
        for tgt in targets:
            if src == m.INTERNET and tgt == m.INTERNET:
                continue
            if isinstance(resolve_path(s, src, tgt), RoutePath):
                pairs.add((src, tgt))
    return pairs
