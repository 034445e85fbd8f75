"""SPF incorporation audit over real or recorded DNS.

For each domain we flatten the SPF include tree, note which provider SPF
records it pulls in (directly and transitively), and read its DMARC policy.
A domain is *vulnerable* when it incorporates a provider whose preset
allows open forwarding.
"""

from __future__ import annotations

import collections
import concurrent.futures
import dataclasses
import json
import threading
import time
from typing import Any, Callable, Iterable, Mapping, Optional, Protocol, Sequence

from .errors import DnsError, MalformedRecord, NxDomain, ServFail, Timeout
from .message import normalize_domain, registered_domain
from .profiles import ProviderProfile, builtin_profiles
from .zone import DEFAULT_LOOKUP_LIMIT, is_spf_text, parse_spf

DEFAULT_CONCURRENCY = 16
POLICIES = ("none", "quarantine", "reject", "absent")


class Resolver(Protocol):
    def query_txt(self, name: str) -> list[list[str]]:
        """TXT records for ``name``, each as its list of character-string segments."""


class FixtureResolver:
    """Answers from a recorded map; used by every test.

    Values are a list of records (a string or a list of segments each), or
    ``{"error": "nxdomain" | "servfail" | "timeout"}``. A timeout entry may
    carry ``"times": n`` and ``"records"`` to model a transient failure.
    Names missing from the map are NXDOMAIN.
    """

    _ERRORS = {"nxdomain": NxDomain, "servfail": ServFail, "timeout": Timeout}

    def __init__(self, records: Mapping[str, Any]):
        self._records = {k.lower().rstrip("."): v for k, v in records.items()}
        self._failures: collections.Counter[str] = collections.Counter()
        self._lock = threading.Lock()
        self.calls: list[str] = []

    @classmethod
    def from_file(cls, path: str) -> "FixtureResolver":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def query_txt(self, name: str) -> list[list[str]]:
        key = name.lower().rstrip(".")
        with self._lock:
            self.calls.append(key)
            entry = self._records.get(key)
            if entry is None:
                raise NxDomain(key)
            if isinstance(entry, dict):
                times = entry.get("times")
                if times is None or self._failures[key] < times:
                    self._failures[key] += 1
                    raise self._ERRORS[entry["error"]](key)
                entry = entry.get("records", [])
        return [[r] if isinstance(r, str) else list(r) for r in entry]


class LiveResolver:
    """System or explicitly addressed DNS via dnspython."""

    def __init__(self, nameserver: Optional[str] = None, lifetime: float = 5.0):
        import dns.resolver

        self._dns = dns
        self._resolver = dns.resolver.Resolver(configure=nameserver is None)
        if nameserver is not None:
            self._resolver.nameservers = [nameserver]
        self._resolver.lifetime = lifetime

    def query_txt(self, name: str) -> list[list[str]]:
        exc_mod = self._dns.resolver
        try:
            answer = self._resolver.resolve(name, "TXT")
        except exc_mod.NXDOMAIN as exc:
            raise NxDomain(name) from exc
        except exc_mod.NoAnswer:
            return []
        except exc_mod.LifetimeTimeout as exc:
            raise Timeout(name, str(exc)) from exc
        except (exc_mod.NoNameservers, self._dns.exception.DNSException) as exc:
            raise ServFail(name, str(exc)) from exc
        return [[s.decode("utf-8", "replace") for s in rdata.strings] for rdata in answer]


def fetch_txt(
    name: str,
    resolver: Resolver,
    retries: int = 2,
    backoff: float = 0.05,
    sleep: Callable[[float], None] = time.sleep,
) -> list[str]:
    """TXT strings for ``name``, segments joined; timeouts are retried."""
    attempt = 0
    while True:
        try:
            return ["".join(segments) for segments in resolver.query_txt(name)]
        except Timeout:
            if attempt >= retries:
                raise
            sleep(backoff * (2**attempt))
            attempt += 1


class _Counting:
    def __init__(self, inner: Resolver):
        self.inner = inner
        self.calls = 0

    def query_txt(self, name: str) -> list[list[str]]:
        self.calls += 1
        return self.inner.query_txt(name)


@dataclasses.dataclass
class IncludeNode:
    domain: str
    spf: Optional[str] = None
    error: Optional[str] = None
    children: list["IncludeNode"] = dataclasses.field(default_factory=list)
    via: str = "include"

    def walk(self) -> Iterable["IncludeNode"]:
        yield self
        for child in self.children:
            yield from child.walk()

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "domain": self.domain,
            "via": self.via,
            "spf": self.spf,
            "error": self.error,
            "children": [c.to_dict() for c in self.children],
        }


@dataclasses.dataclass
class Flattening:
    tree: Optional[IncludeNode]
    networks: list[str]
    lookup_count: int
    resolver_calls: int
    truncated: bool
    errors: list[dict[str, str]]


def _spf_records(texts: Sequence[str]) -> list[str]:
    return [t for t in texts if is_spf_text(t)]


def flatten_spf(
    domain: str,
    resolver: Resolver,
    max_lookups: int = DEFAULT_LOOKUP_LIMIT,
    fetch: Callable[[str, Resolver], list[str]] = fetch_txt,
) -> Flattening:
    """Breadth-first include expansion.

    ``lookup_count`` counts include and redirect lookups, the root query
    excluded, matching the SPF processing limit. A cycle or a lookup past
    ``max_lookups`` stops expansion and sets ``truncated``.
    """
    counting = _Counting(resolver)
    errors: list[dict[str, str]] = []
    networks: list[str] = []
    truncated = False
    lookups = 0

    def load(node: IncludeNode) -> list[tuple[str, str]]:
        try:
            texts = _spf_records(fetch(node.domain, counting))
        except DnsError as exc:
            node.error = exc.kind
            errors.append({"domain": node.domain, "kind": exc.kind})
            return []
        if not texts:
            return []
        if len(texts) > 1:
            node.error = "multiple_spf_records"
            errors.append({"domain": node.domain, "kind": node.error})
            return []
        node.spf = texts[0]
        try:
            record = parse_spf(texts[0], strict=False)
        except MalformedRecord:
            node.error = "malformed"
            errors.append({"domain": node.domain, "kind": "malformed"})
            return []
        for net in record.networks:
            if str(net) not in networks:
                networks.append(str(net))
        targets = [(d, "include") for d in record.includes]
        if record.redirect:
            targets.append((record.redirect, "redirect"))
        return targets

    root = IncludeNode(normalize_domain(domain), via="root")
    queue = collections.deque([(root, (root.domain,), load(root))])
    while queue and not truncated:
        node, ancestors, targets = queue.popleft()
        for target, via in targets:
            if target in ancestors:
                node.children.append(IncludeNode(target, error="cycle", via=via))
                errors.append({"domain": target, "kind": "cycle"})
                truncated = True
                break
            if lookups >= max_lookups:
                truncated = True
                break
            lookups += 1
            child = IncludeNode(target, via=via)
            node.children.append(child)
            queue.append((child, ancestors + (target,), load(child)))
    if root.spf is None and root.error is None:
        tree = None
    else:
        tree = root
    return Flattening(tree, networks, lookups, counting.calls, truncated, errors)


@dataclasses.dataclass
class AuditReport:
    domain: str
    spf_raw: Optional[str]
    include_tree: Optional[IncludeNode]
    incorporates: dict[str, bool]
    incorporates_direct: dict[str, bool]
    dmarc_policy: str
    lookup_count: int
    resolver_calls: int
    truncated: bool
    networks: list[str]
    errors: list[dict[str, str]]
    vulnerable: bool = False

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["include_tree"] = self.include_tree.to_dict() if self.include_tree else None
        return out


def incorporates(report: AuditReport, provider_spf_domain: str) -> bool:
    """Whether the provider record appears anywhere below the root."""
    if report.include_tree is None:
        return False
    target = provider_spf_domain.lower().rstrip(".")
    return any(n.domain == target for c in report.include_tree.children for n in c.walk())


def incorporates_directly(report: AuditReport, provider_spf_domain: str) -> bool:
    if report.include_tree is None:
        return False
    target = provider_spf_domain.lower().rstrip(".")
    return any(c.domain == target for c in report.include_tree.children)


def _dmarc_from_texts(texts: Sequence[str]) -> Optional[str]:
    for text in texts:
        tags = [t.strip() for t in text.split(";")]
        if not tags or tags[0].replace(" ", "").lower() != "v=dmarc1":
            continue
        for tag in tags[1:]:
            key, _, value = tag.partition("=")
            if key.strip().lower() == "p" and value.strip().lower() in POLICIES[:3]:
                return value.strip().lower()
        return None
    return None


def read_dmarc(domain: str, resolver: Resolver, fetch=fetch_txt) -> tuple[str, list[dict[str, str]]]:
    """DMARC policy at ``_dmarc.domain`` with organizational-domain fallback."""
    names = [domain]
    try:
        org = registered_domain(domain)
    except ValueError:
        org = domain
    if org != domain:
        names.append(org)
    errors = []
    for name in names:
        try:
            policy = _dmarc_from_texts(fetch(f"_dmarc.{name}", resolver))
        except NxDomain:
            continue
        except DnsError as exc:
            errors.append({"domain": f"_dmarc.{name}", "kind": exc.kind})
            continue
        if policy is not None:
            return policy, errors
    return "absent", errors


def audit_domain(
    domain: str,
    provider_spf_domains: Sequence[str],
    resolver: Resolver,
    open_forwarding: Mapping[str, bool],
    max_lookups: int = DEFAULT_LOOKUP_LIMIT,
) -> AuditReport:
    try:
        name = normalize_domain(domain)
    except ValueError:
        return AuditReport(domain, None, None, {p: False for p in provider_spf_domains},
                           {p: False for p in provider_spf_domains}, "absent", 0, 0, False, [],
                           [{"domain": domain, "kind": "invalid_domain"}])
    flat = flatten_spf(name, resolver, max_lookups)
    counting = _Counting(resolver)
    dmarc_policy, dmarc_errors = read_dmarc(name, counting)
    report = AuditReport(
        domain=name,
        spf_raw=flat.tree.spf if flat.tree else None,
        include_tree=flat.tree,
        incorporates={},
        incorporates_direct={},
        dmarc_policy=dmarc_policy,
        lookup_count=flat.lookup_count,
        resolver_calls=flat.resolver_calls + counting.calls,
        truncated=flat.truncated,
        networks=flat.networks,
        errors=flat.errors + dmarc_errors,
    )
    for provider in provider_spf_domains:
        report.incorporates[provider] = incorporates(report, provider)
        report.incorporates_direct[provider] = incorporates_directly(report, provider)
    report.vulnerable = any(
        hit and open_forwarding.get(provider, False) for provider, hit in report.incorporates.items()
    )
    return report


def open_forwarding_by_spf_domain(profiles: Optional[Mapping[str, ProviderProfile]] = None) -> dict[str, bool]:
    """Provider SPF domain -> whether any preset using it allows open forwarding."""
    out: dict[str, bool] = {}
    for profile in (profiles or builtin_profiles()).values():
        if profile.spf_domain and not profile.is_list:
            out[profile.spf_domain] = out.get(profile.spf_domain, False) or profile.open_forwarding
    return out


def _fraction(part: int, whole: int) -> float:
    return round(part / whole, 6) if whole else 0.0


def summarize(reports: Sequence[AuditReport], provider_spf_domains: Sequence[str]) -> dict[str, Any]:
    n = len(reports)
    transitive = sum(any(r.incorporates.values()) for r in reports)
    direct = sum(any(r.incorporates_direct.values()) for r in reports)
    vulnerable = sum(r.vulnerable for r in reports)
    histogram = {p: 0 for p in POLICIES}
    for r in reports:
        histogram[r.dmarc_policy] += 1
    return {
        "domains": n,
        "incorporating": transitive,
        "incorporating_direct": direct,
        "vulnerable": vulnerable,
        "fraction_incorporating": _fraction(transitive, n),
        "fraction_incorporating_direct": _fraction(direct, n),
        "fraction_vulnerable": _fraction(vulnerable, n),
        "per_provider": {
            p: {
                "transitive": sum(r.incorporates.get(p, False) for r in reports),
                "direct": sum(r.incorporates_direct.get(p, False) for r in reports),
            }
            for p in provider_spf_domains
        },
        "dmarc_policy_histogram": histogram,
        "domains_with_errors": sum(bool(r.errors) for r in reports),
        "truncated": sum(r.truncated for r in reports),
    }


@dataclasses.dataclass
class AuditResult:
    reports: list[AuditReport]
    summary: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {"reports": [r.to_dict() for r in self.reports], "summary": self.summary}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def audit(
    domains: Sequence[str],
    provider_spf_domains: Sequence[str],
    resolver: Resolver,
    concurrency: int = DEFAULT_CONCURRENCY,
    profiles: Optional[Mapping[str, ProviderProfile]] = None,
) -> AuditResult:
    """Audit every domain concurrently; reports come back in input order."""
    providers = [p.lower().rstrip(".") for p in provider_spf_domains]
    forwarding = open_forwarding_by_spf_domain(profiles)

    def one(domain: str) -> AuditReport:
        try:
            return audit_domain(domain, providers, resolver, forwarding)
        except Exception as exc:  # isolate anything unexpected to its domain
            return AuditReport(domain, None, None, {p: False for p in providers},
                               {p: False for p in providers}, "absent", 0, 0, False, [],
                               [{"domain": domain, "kind": type(exc).__name__}])

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        reports = list(pool.map(one, domains))
    return AuditResult(reports, summarize(reports, providers))


def read_domain_list(text: str) -> list[str]:
    """Newline-delimited domains; blank lines and ``#`` comments skipped."""
    out = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out
