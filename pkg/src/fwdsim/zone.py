"""Simulated DNS zone data and SPF evaluation.

The SPF grammar understood by the simulator is ``ip4``, ``include`` and
``all``. The same parser runs in tolerant mode for the live audit, where
other terms are kept aside instead of rejected.
"""

from __future__ import annotations

import dataclasses
import enum
import ipaddress
import types
from typing import Any, Mapping, Optional, Union

from .errors import LookupLimitExceeded, MalformedRecord, UnknownSuffix
from .message import normalize_domain, registered_domain

DEFAULT_LOOKUP_LIMIT = 10


class SpfVerdict(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    SOFTFAIL = "softfail"
    NONE = "none"
    # only ever produced when a LookupLimitExceeded was caught and recorded
    PERMERROR = "permerror"


class Policy(str, enum.Enum):
    NONE = "none"
    QUARANTINE = "quarantine"
    REJECT = "reject"
    ABSENT = "absent"

    @property
    def rank(self) -> int:
        # absent is handled like none for disposition
        return {"absent": 0, "none": 0, "quarantine": 1, "reject": 2}[self.value]


class Alignment(str, enum.Enum):
    RELAXED = "relaxed"
    STRICT = "strict"


@dataclasses.dataclass(frozen=True)
class Ip4:
    network: ipaddress.IPv4Network

    def __str__(self) -> str:
        return f"ip4:{self.network}"


@dataclasses.dataclass(frozen=True)
class Include:
    domain: str

    def __str__(self) -> str:
        return f"include:{self.domain}"


@dataclasses.dataclass(frozen=True)
class All:
    qualifier: SpfVerdict

    def __str__(self) -> str:
        return {SpfVerdict.PASS: "+all", SpfVerdict.FAIL: "-all", SpfVerdict.SOFTFAIL: "~all"}[
            self.qualifier
        ]


Mechanism = Union[Ip4, Include, All]

_ALL_QUALIFIERS = {
    "+": SpfVerdict.PASS,
    "": SpfVerdict.PASS,
    "-": SpfVerdict.FAIL,
    "~": SpfVerdict.SOFTFAIL,
}


@dataclasses.dataclass(frozen=True)
class SpfRecord:
    mechanisms: tuple[Mechanism, ...] = ()
    redirect: Optional[str] = None
    # terms the simulator does not model; only populated in tolerant mode
    unsupported: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        alls = [i for i, m in enumerate(self.mechanisms) if isinstance(m, All)]
        if len(alls) > 1 or (alls and alls[0] != len(self.mechanisms) - 1):
            raise MalformedRecord("'all' may appear once and only as the last mechanism")

    @property
    def includes(self) -> tuple[str, ...]:
        return tuple(m.domain for m in self.mechanisms if isinstance(m, Include))

    @property
    def networks(self) -> tuple[ipaddress.IPv4Network, ...]:
        return tuple(m.network for m in self.mechanisms if isinstance(m, Ip4))

    def render(self) -> str:
        terms = ["v=spf1", *(str(m) for m in self.mechanisms)]
        if self.redirect:
            terms.append(f"redirect={self.redirect}")
        return " ".join(terms)


def is_spf_text(text: str) -> bool:
    head = text.strip().split(None, 1)
    return bool(head) and head[0].lower() == "v=spf1"


def parse_spf(text: str, *, strict: bool = True) -> SpfRecord:
    """Parse an SPF string (``v=spf1`` prefix optional in strict mode)."""
    terms = text.split()
    if terms and terms[0].lower() == "v=spf1":
        terms = terms[1:]
    elif not strict:
        raise MalformedRecord(f"not an SPF record: {text!r}")
    mechanisms: list[Mechanism] = []
    unsupported: list[str] = []
    redirect = None
    for term in terms:
        low = term.lower()
        if mechanisms and isinstance(mechanisms[-1], All):
            if strict:
                raise MalformedRecord(f"term after 'all': {term!r}")
            continue
        qualifier = low[0] if low[0] in "+-~?" else ""
        bare = low[len(qualifier):]
        if bare == "all":
            if qualifier not in _ALL_QUALIFIERS:
                if strict:
                    raise MalformedRecord(f"unsupported qualifier in {term!r}")
                unsupported.append(term)
                continue
            mechanisms.append(All(_ALL_QUALIFIERS[qualifier]))
        elif bare.startswith("ip4:") and qualifier in ("", "+"):
            try:
                network = ipaddress.IPv4Network(bare[4:], strict=False)
            except ValueError as exc:
                raise MalformedRecord(f"bad ip4 network in {term!r}") from exc
            mechanisms.append(Ip4(network))
        elif bare.startswith("include:") and qualifier in ("", "+"):
            try:
                mechanisms.append(Include(normalize_domain(bare[8:])))
            except ValueError as exc:
                raise MalformedRecord(f"bad include target in {term!r}") from exc
        elif bare.startswith("redirect=") and not strict:
            redirect = bare[9:].rstrip(".")
        elif strict:
            raise MalformedRecord(f"unsupported SPF term {term!r}")
        else:
            unsupported.append(term)
    return SpfRecord(tuple(mechanisms), redirect=redirect, unsupported=tuple(unsupported))


@dataclasses.dataclass(frozen=True)
class DmarcRecord:
    policy: Policy
    alignment_mode: Alignment = Alignment.RELAXED

    def __post_init__(self) -> None:
        if self.policy is Policy.ABSENT:
            raise MalformedRecord("a published DMARC record cannot have policy 'absent'")


@dataclasses.dataclass(frozen=True)
class KeyRecord:
    selector: str
    domain: str
    key_id: str


def _frozen(mapping: Mapping) -> Mapping:
    return types.MappingProxyType(dict(mapping))


@dataclasses.dataclass(frozen=True)
class ZoneDb:
    spf: Mapping[str, SpfRecord] = dataclasses.field(default_factory=dict)
    dmarc: Mapping[str, DmarcRecord] = dataclasses.field(default_factory=dict)
    keys: Mapping[tuple[str, str], KeyRecord] = dataclasses.field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "spf", _frozen(self.spf))
        object.__setattr__(self, "dmarc", _frozen(self.dmarc))
        object.__setattr__(self, "keys", _frozen(self.keys))

    def merged(self, other: "ZoneDb") -> "ZoneDb":
        """New zone with ``other``'s records layered over this one."""
        return ZoneDb(
            spf={**self.spf, **other.spf},
            dmarc={**self.dmarc, **other.dmarc},
            keys={**self.keys, **other.keys},
        )

    def without(self, domain: str) -> "ZoneDb":
        return ZoneDb(
            spf={d: r for d, r in self.spf.items() if d != domain},
            dmarc={d: r for d, r in self.dmarc.items() if d != domain},
            keys={k: r for k, r in self.keys.items() if k[1] != domain},
        )


def evaluate_spf(
    zone: ZoneDb, domain: str, sender_ip: str, max_lookups: int = DEFAULT_LOOKUP_LIMIT
) -> SpfVerdict:
    """Evaluate the SPF policy of ``domain`` for ``sender_ip``.

    Mechanisms are tried in order, includes depth-first. Each include costs
    one lookup; going past ``max_lookups`` raises LookupLimitExceeded.
    """
    ip = ipaddress.ip_address(sender_ip)
    lookups = 0

    def check(name: str) -> SpfVerdict:
        nonlocal lookups
        record = zone.spf.get(name)
        if record is None:
            return SpfVerdict.NONE
        for mech in record.mechanisms:
            if isinstance(mech, Ip4):
                if ip.version == 4 and ip in mech.network:
                    return SpfVerdict.PASS
            elif isinstance(mech, Include):
                lookups += 1
                if lookups > max_lookups:
                    raise LookupLimitExceeded(domain, max_lookups)
                if check(mech.domain) is SpfVerdict.PASS:
                    return SpfVerdict.PASS
            else:
                return mech.qualifier
        # no match and no 'all': neutral, which the verdict set folds into none
        return SpfVerdict.NONE

    return check(normalize_domain(domain))


def lookup_dmarc(zone: ZoneDb, from_domain: str) -> Optional[DmarcRecord]:
    """Exact-domain DMARC record, else the organizational domain's, else None."""
    name = normalize_domain(from_domain)
    record = zone.dmarc.get(name)
    if record is not None:
        return record
    try:
        org = registered_domain(name)
    except UnknownSuffix:
        return None
    return zone.dmarc.get(org)


def lookup_key(zone: ZoneDb, selector: str, domain: str) -> Optional[KeyRecord]:
    return zone.keys.get((selector, domain.lower()))


def zone_from_dict(data: Mapping[str, Any]) -> ZoneDb:
    """Load the JSON zone format.

    ``{domain: {"spf": "include:x -all", "dmarc": {"p": "reject",
    "alignment": "strict"}, "keys": [{"selector": "s1", "key_id": "..."}]}}``
    """
    spf: dict[str, SpfRecord] = {}
    dmarc: dict[str, DmarcRecord] = {}
    keys: dict[tuple[str, str], KeyRecord] = {}
    for raw_domain, entry in data.items():
        domain = normalize_domain(raw_domain)
        if entry.get("spf") is not None:
            spf[domain] = parse_spf(entry["spf"])
        if entry.get("dmarc") is not None:
            d = entry["dmarc"]
            dmarc[domain] = DmarcRecord(
                policy=Policy(d["p"].lower()),
                alignment_mode=Alignment(d.get("alignment", "relaxed").lower()),
            )
        for key in entry.get("keys", []):
            selector = key["selector"]
            if (selector, domain) in keys:
                raise MalformedRecord(f"duplicate key selector {selector!r} for {domain}")
            keys[(selector, domain)] = KeyRecord(selector, domain, key["key_id"])
    return ZoneDb(spf=spf, dmarc=dmarc, keys=keys)


def zone_to_dict(zone: ZoneDb) -> dict[str, Any]:
    out: dict[str, dict[str, Any]] = {}
    for domain, record in zone.spf.items():
        out.setdefault(domain, {})["spf"] = record.render()
    for domain, record in zone.dmarc.items():
        out.setdefault(domain, {})["dmarc"] = {
            "p": record.policy.value,
            "alignment": record.alignment_mode.value,
        }
    for (selector, domain), record in sorted(zone.keys.items()):
        out.setdefault(domain, {}).setdefault("keys", []).append(
            {"selector": selector, "key_id": record.key_id}
        )
    return {d: out[d] for d in sorted(out)}
