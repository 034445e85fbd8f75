"""Per-hop authentication: SPF binding, DKIM, DMARC alignment and ARC.

Signatures are HMAC-SHA256 tags keyed by a secret derived from the zone's
``key_id``. Every signer and verifier lives inside the simulator, so a
shared-secret primitive is enough to make tampering detectable.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import hmac
import json
from typing import Any, Iterable, Optional, Sequence

from .errors import LookupLimitExceeded, MissingHeader, UnknownKey, UnknownSuffix
from .message import EmailMessage, canonicalize, registered_domain
from .zone import (
    Alignment,
    KeyRecord,
    Policy,
    SpfVerdict,
    ZoneDb,
    evaluate_spf,
    lookup_dmarc,
    lookup_key,
)

DKIM_HEADERS = ("from", "to", "subject")
ARC_HEADERS = ("from", "to", "subject")


class ArcMode(str, enum.Enum):
    OFF = "off"
    CORRECT = "correct"
    ZOHO_BUGGY = "zoho_buggy"


class ArcVerdict(str, enum.Enum):
    OVERRIDE_PASS = "override_pass"
    NO_OVERRIDE = "no_override"


@dataclasses.dataclass(frozen=True)
class SpfResult:
    verdict: SpfVerdict
    domain: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {"verdict": self.verdict.value, "domain": self.domain}


@dataclasses.dataclass(frozen=True)
class DkimResult:
    signer_domain: str
    valid: bool

    def to_dict(self) -> dict[str, Any]:
        return {"signer_domain": self.signer_domain, "valid": self.valid}


@dataclasses.dataclass(frozen=True)
class DmarcResult:
    aligned_pass: bool
    applicable_policy: Policy

    def to_dict(self) -> dict[str, Any]:
        return {"aligned_pass": self.aligned_pass, "applicable_policy": self.applicable_policy.value}


@dataclasses.dataclass(frozen=True)
class AuthOutcome:
    spf: SpfResult
    dkim: tuple[DkimResult, ...]
    dmarc: DmarcResult
    arc: Optional[ArcVerdict] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "spf": self.spf.to_dict(),
            "dkim": [d.to_dict() for d in self.dkim],
            "dmarc": self.dmarc.to_dict(),
            "arc": self.arc.value if self.arc else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AuthOutcome":
        return cls(
            spf=SpfResult(SpfVerdict(data["spf"]["verdict"]), data["spf"]["domain"]),
            dkim=tuple(DkimResult(d["signer_domain"], d["valid"]) for d in data["dkim"]),
            dmarc=DmarcResult(
                data["dmarc"]["aligned_pass"], Policy(data["dmarc"]["applicable_policy"])
            ),
            arc=ArcVerdict(data["arc"]) if data.get("arc") else None,
        )


@dataclasses.dataclass(frozen=True)
class DkimSignature:
    signer_domain: str
    selector: str
    signed_headers: tuple[str, ...]
    tag: str

    def __post_init__(self) -> None:
        if "from" not in (h.lower() for h in self.signed_headers):
            raise ValueError("a DKIM signature must cover the FROM header")


@dataclasses.dataclass(frozen=True)
class ArcSet:
    instance: int
    sealer_domain: str
    selector: str
    recorded_results: AuthOutcome
    chain_valid: bool
    seal_tag: str

    def __post_init__(self) -> None:
        if self.instance < 1:
            raise ValueError("ARC instance numbers start at 1")

    def describe(self) -> str:
        # everything except the tag, in a fixed order
        return json.dumps(
            {
                "i": self.instance,
                "d": self.sealer_domain,
                "s": self.selector,
                "cv": self.chain_valid,
                "results": self.recorded_results.to_dict(),
            },
            sort_keys=True,
            separators=(",", ":"),
        )


def _secret(key: KeyRecord) -> bytes:
    return hashlib.sha256(f"fwdsim-signing-secret:{key.key_id}".encode()).digest()


def _tag(key: KeyRecord, payload: bytes) -> str:
    return hmac.new(_secret(key), payload, hashlib.sha256).hexdigest()


def _require_key(zone: ZoneDb, selector: str, domain: str) -> KeyRecord:
    key = lookup_key(zone, selector, domain)
    if key is None:
        raise UnknownKey(f"no key for selector {selector!r} at {domain}")
    return key


def aligned(from_domain: str, other_domain: Optional[str], mode: Alignment) -> bool:
    """Strict compares FQDNs; relaxed compares registered domains."""
    if other_domain is None:
        return False
    if mode is Alignment.STRICT:
        return from_domain == other_domain
    try:
        return registered_domain(from_domain) == registered_domain(other_domain)
    except UnknownSuffix:
        return from_domain == other_domain


def check_spf(msg: EmailMessage, zone: ZoneDb) -> SpfResult:
    """SPF verdict for the MAIL FROM domain as seen from ``msg.origin_ip``."""
    if msg.origin_ip is None:
        raise ValueError("origin_ip must be set before authentication checks")
    mail_from = msg.envelope.mail_from
    if mail_from is None:
        return SpfResult(SpfVerdict.NONE, None)
    return SpfResult(evaluate_spf(zone, mail_from.domain, msg.origin_ip), mail_from.domain)


def _dkim_payload(msg: EmailMessage, domain: str, selector: str, headers: Sequence[str]) -> bytes:
    prefix = f"dkim|{domain}|{selector}|{','.join(h.lower() for h in headers)}\n"
    return prefix.encode() + canonicalize(msg, headers)


def sign_dkim(
    msg: EmailMessage,
    signer_domain: str,
    selector: str,
    zone: ZoneDb,
    signed_headers: Sequence[str] = DKIM_HEADERS,
) -> DkimSignature:
    key = _require_key(zone, selector, signer_domain)
    headers = tuple(h.lower() for h in signed_headers)
    return DkimSignature(
        signer_domain=key.domain,
        selector=selector,
        signed_headers=headers,
        tag=_tag(key, _dkim_payload(msg, key.domain, selector, headers)),
    )


def add_dkim(msg: EmailMessage, signer_domain: str, selector: str, zone: ZoneDb) -> EmailMessage:
    """Return ``msg`` with a fresh signature appended."""
    signature = sign_dkim(msg, signer_domain, selector, zone)
    return msg.with_headers(dkim_signatures=msg.headers.dkim_signatures + (signature,))


def verify_dkim(msg: EmailMessage, zone: ZoneDb) -> tuple[DkimResult, ...]:
    results = []
    for sig in msg.headers.dkim_signatures:
        key = lookup_key(zone, sig.selector, sig.signer_domain)
        valid = False
        if key is not None:
            try:
                expected = _tag(key, _dkim_payload(msg, sig.signer_domain, sig.selector, sig.signed_headers))
            except MissingHeader:
                expected = ""
            valid = hmac.compare_digest(expected, sig.tag)
        results.append(DkimResult(sig.signer_domain, valid))
    return tuple(results)


def evaluate_dmarc(
    msg: EmailMessage,
    spf_result: SpfResult,
    dkim_results: Iterable[DkimResult],
    zone: ZoneDb,
) -> DmarcResult:
    from_domain = msg.headers.from_addr.domain
    record = lookup_dmarc(zone, from_domain)
    mode = record.alignment_mode if record else Alignment.RELAXED
    spf_ok = spf_result.verdict is SpfVerdict.PASS and aligned(from_domain, spf_result.domain, mode)
    dkim_ok = any(r.valid and aligned(from_domain, r.signer_domain, mode) for r in dkim_results)
    return DmarcResult(
        aligned_pass=spf_ok or dkim_ok,
        applicable_policy=record.policy if record else Policy.ABSENT,
    )


def authenticate(msg: EmailMessage, zone: ZoneDb) -> AuthOutcome:
    """SPF, DKIM and DMARC for one hop. A blown SPF lookup cap is recorded as permerror."""
    try:
        spf = check_spf(msg, zone)
    except LookupLimitExceeded:
        spf = SpfResult(SpfVerdict.PERMERROR, msg.envelope.mail_from.domain)
    dkim = verify_dkim(msg, zone)
    return AuthOutcome(spf=spf, dkim=dkim, dmarc=evaluate_dmarc(msg, spf, dkim, zone))


def _seal_payload(msg: EmailMessage, prior: Sequence[ArcSet], arc_set_description: str) -> bytes:
    parts = [f"arc-set|{s.describe()}|{s.seal_tag}\n" for s in prior]
    parts.append(f"arc-new|{arc_set_description}\n")
    return "".join(parts).encode() + canonicalize(msg, ARC_HEADERS)


def verify_seal(msg: EmailMessage, index: int, zone: ZoneDb) -> bool:
    """Check the seal of the ARC set at zero-based ``index``."""
    arc_set = msg.headers.arc_sets[index]
    key = lookup_key(zone, arc_set.selector, arc_set.sealer_domain)
    if key is None:
        return False
    try:
        expected = _tag(key, _seal_payload(msg, msg.headers.arc_sets[:index], arc_set.describe()))
    except MissingHeader:
        return False
    return hmac.compare_digest(expected, arc_set.seal_tag)


def seal_arc(
    msg: EmailMessage,
    sealer_domain: str,
    selector: str,
    current_outcome: AuthOutcome,
    zone: ZoneDb,
) -> EmailMessage:
    """Append the next ARC set, recording ``current_outcome`` at sealing time."""
    key = _require_key(zone, selector, sealer_domain)
    prior = msg.headers.arc_sets
    if prior:
        chain_valid = prior[-1].chain_valid and all(
            verify_seal(msg, i, zone) for i in range(len(prior))
        )
    else:
        # the first set has no predecessor to invalidate it
        chain_valid = True
    unsigned = ArcSet(
        instance=len(prior) + 1,
        sealer_domain=key.domain,
        selector=selector,
        recorded_results=current_outcome,
        chain_valid=chain_valid,
        seal_tag="",
    )
    tag = _tag(key, _seal_payload(msg, prior, unsigned.describe()))
    return msg.with_headers(arc_sets=prior + (dataclasses.replace(unsigned, seal_tag=tag),))


def validate_arc(
    msg: EmailMessage,
    trust_list: Iterable[str],
    mode: ArcMode,
    zone: ZoneDb,
) -> ArcVerdict:
    """Decide whether the ARC chain lets a receiver override a DMARC failure.

    ``CORRECT`` needs every seal to verify, an intact chain, every sealer
    trusted, and a DMARC pass recorded by the first sealer.
    ``ZOHO_BUGGY`` only checks that the newest seal verifies and comes from a
    trusted sealer, ignoring what any set recorded.
    """
    sets = msg.headers.arc_sets
    trusted = {d.lower() for d in trust_list}
    if mode is ArcMode.OFF or not sets:
        return ArcVerdict.NO_OVERRIDE
    if mode is ArcMode.ZOHO_BUGGY:
        latest = len(sets) - 1
        if sets[latest].sealer_domain in trusted and verify_seal(msg, latest, zone):
            return ArcVerdict.OVERRIDE_PASS
        return ArcVerdict.NO_OVERRIDE
    ok = (
        all(verify_seal(msg, i, zone) for i in range(len(sets)))
        and all(s.chain_valid for s in sets)
        and all(s.sealer_domain in trusted for s in sets)
        and sets[0].recorded_results.dmarc.aligned_pass
    )
    return ArcVerdict.OVERRIDE_PASS if ok else ArcVerdict.NO_OVERRIDE
