"""Domain model: resource hierarchy, networks, services, identity, policy, flows.

Everything here is an immutable value object plus pure queries. A scenario
(module ``scenario``) is just a bag of these; evaluators never mutate them.

Loci are addressed by segment id or by the distinguished strings ``ONPREM``
and ``INTERNET``. Tags are ``key:value`` strings; duplicate keys resolve
nearest-definition-wins down the hierarchy.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .errors import EmptyPerimeterError, InvalidHierarchyError, UnknownNodeError

ONPREM = "ONPREM"
INTERNET = "INTERNET"
DISTINGUISHED_LOCI = frozenset({ONPREM, INTERNET})

# Wildcard token accepted in rule match positions (CIDR lists, target sets, methods).
ANY = "*"


class NodeKind(str, Enum):
    ORGANIZATION = "organization"
    FOLDER = "folder"
    PROJECT = "project"
    RESOURCE = "resource"


class Routability(str, Enum):
    ROUTABLE = "routable"
    NON_ROUTABLE = "non-routable"


class TrustMode(str, Enum):
    """Intra-segment default verdict when no firewall rule matches."""

    TRUSTING = "trusting"
    ZERO_TRUST = "zero-trust"


class EdgeKind(str, Enum):
    PEERING = "peering"
    INTERCONNECT = "interconnect"
    VPN = "vpn"
    NAT_GATEWAY = "nat-gateway"
    VPC_CONNECTOR = "vpc-connector"
    GATEWAY_APPLIANCE = "gateway-appliance"


class EdgeDirection(str, Enum):
    BIDIRECTIONAL = "bidirectional"
    OUTBOUND_ONLY = "outbound-only"


class ServiceLayer(str, Enum):
    L4 = "l4"
    L7 = "l7"


class ComputeKind(str, Enum):
    VM = "vm"
    KUBERNETES = "kubernetes"
    SERVERLESS = "serverless"
    PAAS = "paas"
    SAAS = "saas"


class AuthMode(str, Enum):
    ZERO_TRUST = "zero-trust"
    PERIMETER_TRUSTING = "perimeter-trusting"


class IdpKind(str, Enum):
    CLOUD_NATIVE = "cloud-native"
    DIRECTORY = "directory"
    CLUSTER = "cluster"


class TrustKind(str, Enum):
    ONE_WAY_TRUST = "one-way-trust"
    TWO_WAY_TRUST = "two-way-trust"
    WORKLOAD_FEDERATION = "workload-federation"


class PrincipalKind(str, Enum):
    HUMAN = "human"
    SERVICE_ACCOUNT = "service-account"
    WORKLOAD = "workload"
    AD_IDENTITY = "ad-identity"
    K8S_SERVICE_ACCOUNT = "k8s-service-account"


class RuleAction(str, Enum):
    ALLOW = "allow"
    DENY = "deny"
    DELEGATE = "delegate"


class Mechanism(str, Enum):
    NETWORK_SEGMENTATION = "network-segmentation"
    DATA_PLANE_PERIMETER = "data-plane-perimeter"
    HIERARCHICAL_FIREWALL = "hierarchical-firewall"
    ORG_CONSTRAINT = "org-constraint"


class ConstraintKind(str, Enum):
    NO_PUBLIC_IP = "no-public-ip"
    NO_EXTERNAL_LB = "no-external-lb"
    NO_INTERNET_EGRESS = "no-internet-egress"
    RESTRICT_SERVICE_KINDS = "restrict-service-kinds"


class Verdict(str, Enum):
    ALLOW = "allow"
    DENY = "deny"


class PointKind(str, Enum):
    """Enforcement points, in fixed evaluation order."""

    ROUTE = "ROUTE"
    HIER_FIREWALL = "HIER_FIREWALL"
    SEGMENT_FIREWALL = "SEGMENT_FIREWALL"
    GATEWAY = "GATEWAY"
    CONSUMER_ENDPOINT = "CONSUMER_ENDPOINT"
    PRODUCER_ATTACHMENT = "PRODUCER_ATTACHMENT"
    PERIMETER_EGRESS = "PERIMETER_EGRESS"
    PERIMETER_INGRESS = "PERIMETER_INGRESS"
    AUTHN = "AUTHN"
    RBAC = "RBAC"


ENFORCEMENT_CHAIN: tuple[PointKind, ...] = tuple(PointKind)


class DenyReason(str, Enum):
    """Closed enumeration of deny reason codes."""

    NO_ROUTE = "NO_ROUTE"
    HIER_FIREWALL = "HIER_FIREWALL"
    SEGMENT_FIREWALL = "SEGMENT_FIREWALL"
    FIREWALL_DEFAULT = "FIREWALL_DEFAULT"
    GATEWAY = "GATEWAY"
    CONSUMER = "CONSUMER"
    PRODUCER = "PRODUCER"
    PERIMETER_EGRESS = "PERIMETER_EGRESS"
    PERIMETER_INGRESS = "PERIMETER_INGRESS"
    NO_CREDENTIAL = "NO_CREDENTIAL"
    RBAC_DEFAULT_DENY = "RBAC_DEFAULT_DENY"
    RBAC_CONDITION = "RBAC_CONDITION"


NOT_APPLICABLE = "not-applicable"
DEFAULT_RULE = "default"


# ---------------------------------------------------------------------------
# Hierarchy and tags
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResourceNode:
    """One element of the org/folder/project/resource tree."""

    id: str
    kind: NodeKind
    parent: str | None = None
    tags: frozenset[str] = frozenset()
    labels: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", dict(self.labels))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ResourceNode):
            return NotImplemented
        return (
            self.id == other.id
            and self.kind == other.kind
            and self.parent == other.parent
            and self.tags == other.tags
            and dict(self.labels) == dict(other.labels)
        )

    def __hash__(self) -> int:
        return hash((self.id, self.kind, self.parent, self.tags))


def tag_key(tag: str) -> str:
    """Key part of a ``key:value`` tag."""
    return tag.split(":", 1)[0]


def method_matches(pattern: str, method: str) -> bool:
    """Exact match or a single trailing-wildcard prefix (``admin.*`` style)."""
    if pattern == ANY:
        return True
    if pattern.endswith("*"):
        return method.startswith(pattern[:-1])
    return pattern == method


def ancestors(node: str, nodes: Mapping[str, ResourceNode]) -> list[str]:
    """Node ids from the organization root down to ``node`` inclusive."""
    if node not in nodes:
        raise UnknownNodeError(node)
    chain: list[str] = []
    seen: set[str] = set()
    cur: str | None = node
    while cur is not None:
        if cur in seen:
            raise InvalidHierarchyError(f"parent cycle at {cur!r}")
        if cur not in nodes:
            raise UnknownNodeError(cur)
        seen.add(cur)
        chain.append(cur)
        cur = nodes[cur].parent
    chain.reverse()
    return chain


def effective_tags(node: str, nodes: Mapping[str, ResourceNode]) -> frozenset[str]:
    """Union of own and inherited tags, nearest definition winning per key."""
    resolved: dict[str, set[str]] = {}
    for nid in ancestors(node, nodes):
        here: dict[str, set[str]] = {}
        for tag in nodes[nid].tags:
            here.setdefault(tag_key(tag), set()).add(tag)
        # nearer definitions replace the whole key, not just one value
        resolved.update(here)
    return frozenset(t for tags in resolved.values() for t in tags)


# ---------------------------------------------------------------------------
# Network substrate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkSegment:
    id: str
    project: str
    routability: Routability
    cidrs: tuple[str, ...]
    subnets: Mapping[str, str] = field(default_factory=dict)
    trust_mode: TrustMode = TrustMode.TRUSTING

    def __post_init__(self) -> None:
        object.__setattr__(self, "cidrs", tuple(self.cidrs))
        object.__setattr__(self, "subnets", dict(self.subnets))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NetworkSegment):
            return NotImplemented
        return (
            self.id,
            self.project,
            self.routability,
            self.cidrs,
            dict(self.subnets),
            self.trust_mode,
        ) == (
            other.id,
            other.project,
            other.routability,
            other.cidrs,
            dict(other.subnets),
            other.trust_mode,
        )

    def __hash__(self) -> int:
        return hash((self.id, self.project, self.cidrs))

    def contains_address(self, address: str) -> bool:
        addr = ipaddress.ip_address(address)
        return any(addr in ipaddress.ip_network(c) for c in self.cidrs)


@dataclass(frozen=True)
class GatewayRule:
    """Directional rule on a gateway-appliance edge; first match wins."""

    id: str
    src_zone: str
    dst_zone: str
    action: RuleAction
    new_connection: bool = True
    protocol: str = "tcp"
    content_class: str | None = None


@dataclass(frozen=True)
class ConnectivityEdge:
    id: str
    kind: EdgeKind
    ends: tuple[str, str]
    direction: EdgeDirection = EdgeDirection.BIDIRECTIONAL
    gateway_rules: tuple[GatewayRule, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "ends", tuple(self.ends))
        object.__setattr__(self, "gateway_rules", tuple(self.gateway_rules))

    def other_end(self, locus: str) -> str:
        a, b = self.ends
        return b if locus == a else a


# ---------------------------------------------------------------------------
# Services and service networking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ServiceSpec:
    id: str
    project: str
    segment: str
    layer: ServiceLayer
    compute: ComputeKind
    auth_mode: AuthMode
    address: str | None = None        # L4: "ip" or "ip:port"
    fqdn: str | None = None           # L7
    backends: tuple[str, ...] = ()
    run_as: tuple[str, ...] = ()      # principal ids the backends execute as
    workload: str | None = None       # grouping for blast radius / lint
    idp: str | None = None            # idp whose credentials the service accepts
    reads: tuple[str, ...] = ()
    writes: tuple[str, ...] = ()
    depends_on: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for f in ("backends", "run_as", "reads", "writes", "depends_on"):
            object.__setattr__(self, f, tuple(getattr(self, f)))

    @property
    def host(self) -> str | None:
        if self.address is None:
            return None
        return self.address.split(":", 1)[0]

    @property
    def port(self) -> int | None:
        if self.address is None or ":" not in self.address:
            return None
        return int(self.address.split(":", 1)[1])


@dataclass(frozen=True)
class AccessPredicate:
    """One entry of a consumer/producer endpoint policy; first match decides."""

    id: str
    action: RuleAction
    identities: tuple[str, ...] = ()  # principal ids or group names; empty = any
    cidrs: tuple[str, ...] = ()       # source CIDRs; empty = any
    methods: tuple[str, ...] = ()     # empty = any

    def __post_init__(self) -> None:
        object.__setattr__(self, "identities", tuple(self.identities))
        object.__setattr__(self, "cidrs", tuple(self.cidrs))
        object.__setattr__(self, "methods", tuple(self.methods))


@dataclass(frozen=True)
class ServiceAttachment:
    id: str
    service: str
    policy: tuple[AccessPredicate, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "policy", tuple(self.policy))


@dataclass(frozen=True)
class ConsumerEndpoint:
    id: str
    segment: str
    attachment: str
    address: str | None = None
    fqdn: str | None = None
    policy: tuple[AccessPredicate, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "policy", tuple(self.policy))


# ---------------------------------------------------------------------------
# Policy rules
# ---------------------------------------------------------------------------

ORG_SCOPE = "organization"


@dataclass(frozen=True)
class FirewallRule:
    """5-tuple-style rule at organization, folder, or segment scope.

    ``scope`` is ``organization``, ``folder:<id>`` or ``segment:<id>``.
    ``src``/``dst`` entries are CIDRs or the tokens ONPREM/INTERNET/``*``.
    """

    id: str
    scope: str
    priority: int
    action: RuleAction
    src: tuple[str, ...] = (ANY,)
    dst: tuple[str, ...] = (ANY,)
    protocol: str = "any"
    ports: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "src", tuple(self.src))
        object.__setattr__(self, "dst", tuple(self.dst))
        object.__setattr__(self, "ports", tuple(tuple(p) for p in self.ports))

    @property
    def scope_kind(self) -> str:
        return self.scope.split(":", 1)[0]

    @property
    def scope_id(self) -> str | None:
        return self.scope.split(":", 1)[1] if ":" in self.scope else None


@dataclass(frozen=True)
class PerimeterTarget:
    """One (project, service, method) entry of a perimeter rule's target set."""

    project: str = ANY
    service: str = ANY
    method: str = ANY


@dataclass(frozen=True)
class PerimeterRule:
    """Allow-only ingress/egress rule for data-plane perimeter crossings."""

    id: str
    identities: tuple[str, ...] = ()          # principal ids / groups; empty = any
    device: Mapping[str, str] = field(default_factory=dict)
    networks: tuple[str, ...] = ()            # CIDRs or ONPREM/INTERNET; empty = any
    targets: tuple[PerimeterTarget, ...] = ()  # empty = any target

    def __post_init__(self) -> None:
        object.__setattr__(self, "identities", tuple(self.identities))
        object.__setattr__(self, "device", dict(self.device))
        object.__setattr__(self, "networks", tuple(self.networks))
        object.__setattr__(self, "targets", tuple(self.targets))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PerimeterRule):
            return NotImplemented
        return (
            self.id,
            self.identities,
            dict(self.device),
            self.networks,
            self.targets,
        ) == (other.id, other.identities, dict(other.device), other.networks, other.targets)

    def __hash__(self) -> int:
        return hash((self.id, self.identities, self.networks, self.targets))


@dataclass(frozen=True)
class MemberSelector:
    folders: tuple[str, ...] = ()
    projects: tuple[str, ...] = ()
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "folders", tuple(self.folders))
        object.__setattr__(self, "projects", tuple(self.projects))
        object.__setattr__(self, "tags", tuple(self.tags))


@dataclass(frozen=True)
class AbstractPerimeter:
    id: str
    name: str
    members: MemberSelector
    ingress: tuple[PerimeterRule, ...] = ()
    egress: tuple[PerimeterRule, ...] = ()
    mechanisms: frozenset[Mechanism] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "ingress", tuple(self.ingress))
        object.__setattr__(self, "egress", tuple(self.egress))
        object.__setattr__(self, "mechanisms", frozenset(self.mechanisms))


@dataclass(frozen=True)
class TagCondition:
    key: str
    value: str

    def holds(self, tags: Iterable[str]) -> bool:
        tags = set(tags)
        want = f"{self.key}:{self.value}"
        if want not in tags:
            return False
        # conflicting values for the same key fail closed
        return not any(t != want and tag_key(t) == self.key for t in tags)


@dataclass(frozen=True)
class Permission:
    service: str
    method: str = ANY


@dataclass(frozen=True)
class RBACBinding:
    id: str
    principal: str                      # principal id or group name
    role: tuple[Permission, ...]
    condition: TagCondition | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", tuple(self.role))

    def grants(self, service: str, method: str) -> bool:
        return any(
            p.service == service and (p.method == ANY or p.method == method)
            for p in self.role
        )


@dataclass(frozen=True)
class OrgConstraint:
    id: str
    kind: ConstraintKind
    scope: str                          # org or folder node id
    exception_tag: str | None = None


# ---------------------------------------------------------------------------
# Identity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityProvider:
    id: str
    kind: IdpKind
    segment: str | None = None          # where the idp's servers live (directory idps)


@dataclass(frozen=True)
class Principal:
    id: str
    kind: PrincipalKind
    idp: str
    groups: tuple[str, ...] = ()
    device: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "device", dict(self.device))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Principal):
            return NotImplemented
        return (self.id, self.kind, self.idp, self.groups, dict(self.device)) == (
            other.id,
            other.kind,
            other.idp,
            other.groups,
            dict(other.device),
        )

    def __hash__(self) -> int:
        return hash((self.id, self.kind, self.idp, self.groups))

    def matches_identity(self, token: str) -> bool:
        """True if ``token`` names this principal, one of its groups, or any."""
        return token == ANY or token == self.id or token in self.groups


@dataclass(frozen=True)
class TrustEdge:
    id: str
    src: str
    dst: str
    kind: TrustKind
    mapping: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mapping", dict(self.mapping))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrustEdge):
            return NotImplemented
        return (self.id, self.src, self.dst, self.kind, dict(self.mapping)) == (
            other.id,
            other.src,
            other.dst,
            other.kind,
            dict(other.mapping),
        )

    def __hash__(self) -> int:
        return hash((self.id, self.src, self.dst, self.kind))


@dataclass(frozen=True)
class ChainStep:
    idp: str
    principal: str
    edge: str | None                    # None for the home-idp first step


@dataclass(frozen=True)
class CredentialChain:
    steps: tuple[ChainStep, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def terminal_principal(self) -> str:
        return self.steps[-1].principal

    @property
    def terminal_idp(self) -> str:
        return self.steps[-1].idp

    def __len__(self) -> int:
        return len(self.steps)


# ---------------------------------------------------------------------------
# Data assets and flows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataAsset:
    id: str
    resource: str
    tags: frozenset[str] = frozenset()


@dataclass(frozen=True)
class FlowRequest:
    """A candidate flow: who, from where, to what, doing what."""

    principal: str
    source: str                          # segment id, ONPREM, or INTERNET
    target: str                          # service id, endpoint id, or INTERNET
    method: str = "connect"
    source_address: str | None = None
    payload_tags: frozenset[str] = frozenset()
    presented_chain: CredentialChain | None = None


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    reason: DenyReason | None = None

    @property
    def allowed(self) -> bool:
        return self.verdict is Verdict.ALLOW


ALLOW = Decision(Verdict.ALLOW)


def deny(reason: DenyReason) -> Decision:
    return Decision(Verdict.DENY, reason)


@dataclass(frozen=True)
class TraceStep:
    index: int
    point: PointKind
    verdict: Verdict
    rule: str                            # matched rule id, "default", or "not-applicable"
    reason: DenyReason | None = None


DecisionTrace = tuple[TraceStep, ...]


# ---------------------------------------------------------------------------
# Perimeter membership
# ---------------------------------------------------------------------------


def resolve_members(
    perimeter: AbstractPerimeter, nodes: Mapping[str, ResourceNode]
) -> frozenset[str]:
    """Project ids selected by folders, explicit listing, or tag selectors."""
    projects = {n.id for n in nodes.values() if n.kind is NodeKind.PROJECT}
    selected: set[str] = set()
    for pid in projects:
        chain = ancestors(pid, nodes)
        if any(f in chain for f in perimeter.members.folders):
            selected.add(pid)
    selected.update(p for p in perimeter.members.projects if p in projects)
    if perimeter.members.tags:
        for pid in projects:
            etags = effective_tags(pid, nodes)
            if any(sel in etags for sel in perimeter.members.tags):
                selected.add(pid)
    if not selected:
        raise EmptyPerimeterError(perimeter.id)
    return frozenset(selected)
