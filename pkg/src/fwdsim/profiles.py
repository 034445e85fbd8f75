"""Provider policy profiles and the inbound / forwarding decisions.

A profile captures everything one provider or mailing-list service does
differently: its forwarding rewrite, whether forwarding needs consent from
the destination, how it substitutes or overrides DMARC dispositions, its ARC
behaviour, and its UI warnings.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import types
from typing import Any, Iterable, Mapping, Optional

from .auth import (
    ArcMode,
    ArcVerdict,
    AuthOutcome,
    add_dkim,
    authenticate,
    seal_arc,
    validate_arc,
)
from .errors import ForwardingNotConfigured, InvalidSetup, UnknownAccount, UnknownSuffix
from .forwarding import ForwarderIdentity, ForwardingMechanism, apply_forwarding
from .message import EmailAddress, EmailMessage, normalize_domain, registered_domain
from .zone import KeyRecord, Policy, ZoneDb, parse_spf

LIST_FOOTER = "-- \nYou received this message because you are subscribed to this list."
DEFAULT_SELECTOR = "sim1"


class Verdict(str, enum.Enum):
    INBOX = "inbox"
    SPAM = "spam"
    REJECT = "reject"


class SetupStatus(str, enum.Enum):
    OK = "ok"
    NEEDS_CONFIRMATION = "needs_confirmation"
    DENIED = "denied"


@dataclasses.dataclass(frozen=True)
class RelaxedRule:
    """Accept DMARC failures arriving from one source provider.

    ``require_to_mismatch`` models the extra condition Gmail places on
    sources other than Gmail and Outlook: the TO header must not name the
    recipient's own address.
    """

    max_policy: Policy
    require_to_mismatch: bool = False

    def __post_init__(self) -> None:
        if self.max_policy not in (Policy.NONE, Policy.QUARANTINE):
            raise InvalidSetup("relaxed validation tolerates at most a quarantine policy")


@dataclasses.dataclass(frozen=True)
class ProviderProfile:
    name: str
    domain: str
    sending_ip: str
    forwarding_mechanism: ForwardingMechanism
    spf_domain: Optional[str] = None
    spf_networks: tuple[str, ...] = ()
    selector: str = DEFAULT_SELECTOR
    hosted_domains: frozenset[str] = frozenset()
    is_list: bool = False
    open_forwarding: bool = False
    notifies_destination: bool = False
    enforces_dmarc: bool = True
    quarantine_instead_of_reject: bool = False
    fail_none_means_quarantine: bool = False
    warn_on_dmarc_fail: bool = False
    allowlist_override_scope: Policy = Policy.NONE
    allow_unrestricted_override: bool = False
    protected_domains: frozenset[str] = frozenset()
    relaxed_validation_sources: Mapping[str, RelaxedRule] = dataclasses.field(default_factory=dict)
    unsolicited_dkim_for_hosted: bool = False
    appends_footer: bool = False
    arc_mode: ArcMode = ArcMode.OFF
    arc_trust: frozenset[str] = frozenset()
    arc_seals_on_forward: bool = False
    gmail_ui_bug: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "relaxed_validation_sources", types.MappingProxyType(dict(self.relaxed_validation_sources))
        )
        object.__setattr__(self, "hosted_domains", frozenset(self.hosted_domains) | {self.domain})
        if self.arc_trust and self.arc_mode is ArcMode.OFF:
            raise InvalidSetup(f"{self.name}: arc_trust requires ARC validation to be enabled")
        if (
            self.allowlist_override_scope is Policy.REJECT
            and not self.protected_domains
            and not self.allow_unrestricted_override
        ):
            raise InvalidSetup(
                f"{self.name}: overriding reject policies needs protected_domains "
                "or allow_unrestricted_override"
            )
        if self.allowlist_override_scope is Policy.ABSENT:
            raise InvalidSetup(f"{self.name}: allowlist scope must be none, quarantine or reject")

    def identity(self, account: EmailAddress) -> ForwarderIdentity:
        return ForwarderIdentity(account=account, sending_ip=self.sending_ip)


@dataclasses.dataclass(frozen=True)
class UserAccount:
    address: EmailAddress
    allowlist: frozenset[str] = frozenset()
    forward_to: Optional[EmailAddress] = None
    forward_confirmed: bool = False
    # mailing lists only
    members: tuple[EmailAddress, ...] = ()

    def allowlists(self, sender: EmailAddress) -> bool:
        return sender.addr_spec.lower() in self.allowlist or sender.domain in self.allowlist

    def forwarding_active(self, profile: ProviderProfile) -> bool:
        if profile.is_list:
            return bool(self.members)
        return self.forward_to is not None and (profile.open_forwarding or self.forward_confirmed)


@dataclasses.dataclass(frozen=True)
class Disposition:
    verdict: Verdict
    warning: bool = False

    def __post_init__(self) -> None:
        if self.verdict is Verdict.REJECT and self.warning:
            object.__setattr__(self, "warning", False)

    def to_dict(self) -> dict[str, Any]:
        return {"verdict": self.verdict.value, "warning": self.warning}


@dataclasses.dataclass(frozen=True)
class Assessment:
    """Inbound decision plus the rule that produced it."""

    disposition: Disposition
    outcome: AuthOutcome
    rule: str
    override: bool = False


@dataclasses.dataclass(frozen=True)
class ForwardAction:
    kind: str  # "drop" or "forward"
    messages: tuple[EmailMessage, ...]
    assessment: Assessment

    @property
    def is_drop(self) -> bool:
        return self.kind == "drop"


def _org(domain: str) -> str:
    try:
        return registered_domain(domain)
    except UnknownSuffix:
        return domain


def _profile_for_ip(ip: Optional[str], directory: Mapping[str, ProviderProfile]) -> Optional[ProviderProfile]:
    if ip is None:
        return None
    for name in sorted(directory):
        if directory[name].sending_ip == ip:
            return directory[name]
    return None


def _trust_domains(profile: ProviderProfile, directory: Mapping[str, ProviderProfile]) -> set[str]:
    return {directory[name].domain for name in profile.arc_trust if name in directory}


def ui_warning_suppressed(msg: EmailMessage) -> bool:
    """The Gmail indicator bug: no DKIM headers and matching sender domains."""
    mail_from = msg.envelope.mail_from
    return (
        not msg.headers.dkim_signatures
        and mail_from is not None
        and _org(mail_from.domain) == _org(msg.headers.from_addr.domain)
    )


def assess_inbound(
    profile: ProviderProfile,
    account: UserAccount,
    msg: EmailMessage,
    zone: ZoneDb,
    directory: Optional[Mapping[str, ProviderProfile]] = None,
) -> Assessment:
    """Run the full inbound procedure and report which rule decided it."""
    if directory is None:
        directory = builtin_profiles()
    if not account.address.same_mailbox(msg.envelope.rcpt_to):
        raise UnknownAccount(f"{msg.envelope.rcpt_to.addr_spec} is not {account.address.addr_spec}")
    outcome = authenticate(msg, zone)
    if profile.arc_mode is not ArcMode.OFF:
        verdict = validate_arc(msg, _trust_domains(profile, directory), profile.arc_mode, zone)
        outcome = dataclasses.replace(outcome, arc=verdict)
    policy = outcome.dmarc.applicable_policy
    from_addr = msg.headers.from_addr
    protected = from_addr.domain in profile.protected_domains

    def ui(verdict: Verdict, warning: bool) -> bool:
        if profile.warn_on_dmarc_fail and msg.was_forwarded:
            return not (profile.gmail_ui_bug and ui_warning_suppressed(msg))
        return warning

    if outcome.dmarc.aligned_pass:
        return Assessment(Disposition(Verdict.INBOX, ui(Verdict.INBOX, False)), outcome, "dmarc_pass")
    if outcome.arc is ArcVerdict.OVERRIDE_PASS:
        return Assessment(Disposition(Verdict.INBOX, False), outcome, "arc_override", override=True)
    if (
        account.allowlists(from_addr)
        and policy.rank <= profile.allowlist_override_scope.rank
        and not protected
    ):
        return Assessment(Disposition(Verdict.INBOX, False), outcome, "allowlist", override=True)
    source = _profile_for_ip(msg.origin_ip, directory)
    rule = profile.relaxed_validation_sources.get(source.name) if source else None
    if (
        rule is not None
        and policy.rank <= rule.max_policy.rank
        and not protected
        and not (rule.require_to_mismatch and msg.headers.to_addr.same_mailbox(account.address))
    ):
        return Assessment(
            Disposition(Verdict.INBOX, ui(Verdict.INBOX, False)), outcome, "relaxed_validation", override=True
        )
    if not profile.enforces_dmarc:
        return Assessment(Disposition(Verdict.INBOX, ui(Verdict.INBOX, False)), outcome, "dmarc_not_enforced")
    if policy is Policy.REJECT:
        if profile.quarantine_instead_of_reject:
            return Assessment(Disposition(Verdict.SPAM, ui(Verdict.SPAM, True)), outcome, "quarantine_instead_of_reject")
        return Assessment(Disposition(Verdict.REJECT), outcome, "policy_reject")
    if policy is Policy.QUARANTINE:
        return Assessment(Disposition(Verdict.SPAM, ui(Verdict.SPAM, True)), outcome, "policy_quarantine")
    if profile.fail_none_means_quarantine:
        return Assessment(Disposition(Verdict.SPAM, ui(Verdict.SPAM, True)), outcome, "fail_none_quarantined")
    return Assessment(
        Disposition(Verdict.INBOX, ui(Verdict.INBOX, profile.warn_on_dmarc_fail)), outcome, "policy_none"
    )


def decide_inbound(
    profile: ProviderProfile,
    account: UserAccount,
    msg: EmailMessage,
    zone: ZoneDb,
    directory: Optional[Mapping[str, ProviderProfile]] = None,
) -> tuple[Disposition, AuthOutcome]:
    result = assess_inbound(profile, account, msg, zone, directory)
    return result.disposition, result.outcome


def decide_forward(
    profile: ProviderProfile,
    account: UserAccount,
    msg: EmailMessage,
    zone: ZoneDb,
    directory: Optional[Mapping[str, ProviderProfile]] = None,
) -> ForwardAction:
    """Authenticate at the forwarder, then drop or rewrite for each destination."""
    if not account.forwarding_active(profile):
        raise ForwardingNotConfigured(f"{account.address.addr_spec} does not forward")
    result = assess_inbound(profile, account, msg, zone, directory)
    if result.disposition.verdict is not Verdict.INBOX and not result.override:
        return ForwardAction("drop", (), result)
    destinations = account.members if profile.is_list else (account.forward_to,)
    fwd = profile.identity(account.address)
    out = []
    for destination in destinations:
        forwarded = apply_forwarding(msg, profile.forwarding_mechanism, fwd, destination)
        if profile.appends_footer:
            forwarded = dataclasses.replace(forwarded, body=forwarded.body.rstrip("\n") + "\n" + LIST_FOOTER)
        from_domain = forwarded.headers.from_addr.domain
        if profile.unsolicited_dkim_for_hosted and from_domain in profile.hosted_domains:
            forwarded = add_dkim(forwarded, from_domain, profile.selector, zone)
        if profile.arc_seals_on_forward:
            forwarded = seal_arc(forwarded, profile.domain, profile.selector, result.outcome, zone)
        out.append(forwarded)
    return ForwardAction("forward", tuple(out), result)


def configure_forwarding(
    profile: ProviderProfile, account: UserAccount, destination: EmailAddress
) -> tuple[SetupStatus, UserAccount]:
    """Point ``account`` at ``destination``.

    Without open forwarding the setting stays inert until the destination
    confirms it (see ``confirm_destination``).
    """
    if profile.is_list:
        return SetupStatus.DENIED, account
    updated = dataclasses.replace(account, forward_to=destination, forward_confirmed=False)
    if profile.open_forwarding:
        return SetupStatus.OK, updated
    return SetupStatus.NEEDS_CONFIRMATION, updated


def confirm_destination(account: UserAccount, confirmed_by: EmailAddress) -> UserAccount:
    if account.forward_to is None:
        raise InvalidSetup(f"{account.address.addr_spec} has no pending forwarding destination")
    if not account.forward_to.same_mailbox(confirmed_by):
        raise InvalidSetup(
            f"only {account.forward_to.addr_spec} may confirm forwarding, not {confirmed_by.addr_spec}"
        )
    return dataclasses.replace(account, forward_confirmed=True)


def provider_zone(profiles: Iterable[ProviderProfile]) -> ZoneDb:
    """DNS records for provider infrastructure: SPF for sending servers and signing keys."""
    networks: dict[str, list[str]] = {}
    spf_text: dict[str, str] = {}
    keys: dict[tuple[str, str], KeyRecord] = {}
    for profile in profiles:
        if profile.spf_domain:
            bucket = networks.setdefault(profile.spf_domain, [])
            bucket.extend(n for n in profile.spf_networks if n not in bucket)
            spf_text.setdefault(profile.domain, f"include:{profile.spf_domain} -all")
        elif profile.spf_networks:
            spf_text.setdefault(profile.domain, " ".join(f"ip4:{n}" for n in profile.spf_networks) + " -all")
        for domain in sorted(profile.hosted_domains):
            keys[(profile.selector, domain)] = KeyRecord(profile.selector, domain, f"{domain}/{profile.selector}")
    for spf_domain, nets in networks.items():
        spf_text[spf_domain] = " ".join(f"ip4:{n}" for n in nets) + " -all"
    return ZoneDb(spf={d: parse_spf(t) for d, t in spf_text.items()}, keys=keys)


# ---------------------------------------------------------------------------
# presets


_PROTECTED = frozenset({"aa.com", "foxnews.com", "ikea.com", "citizensbank.com"})

_PROVIDERS = (
    # name, domain, spf domain, network, sending ip, mechanism
    ("Fastmail", "fastmail.com", "spf.messagingengine.com", "66.111.4.0/24", "66.111.4.25", ForwardingMechanism.PMF),
    ("Freemail", "freemail.hu", "spf.freemail.hu", "195.228.245.0/24", "195.228.245.10", ForwardingMechanism.MFEF),
    ("GMX", "gmx.com", "spf.gmx.net", "212.227.15.0/24", "212.227.15.15", ForwardingMechanism.REM),
    ("Gmail", "gmail.com", "_spf.google.com", "209.85.128.0/17", "209.85.220.41", ForwardingMechanism.REM),
    ("GoDaddy", "secureserver.net", "spf.secureserver.net", "68.178.252.0/24", "68.178.252.10", ForwardingMechanism.REM),
    ("Hushmail", "hushmail.com", "spf.hushmail.com", "65.39.178.0/24", "65.39.178.20", ForwardingMechanism.PMF),
    ("iCloud", "icloud.com", "_spf.icloud.com", "17.58.0.0/16", "17.58.63.1", ForwardingMechanism.PMF),
    ("Inbox.lv", "inbox.lv", "spf.inbox.lv", "89.111.3.0/24", "89.111.3.10", ForwardingMechanism.REM),
    ("Mail.ru", "mail.ru", "_spf.mail.ru", "94.100.176.0/20", "94.100.177.1", ForwardingMechanism.PMF),
    ("Mail2World", "mail2world.com", "spf.mail2world.com", "64.57.49.0/24", "64.57.49.10", ForwardingMechanism.PMF),
    ("Onet", "onet.pl", "spf.onet.pl", "141.105.16.0/24", "141.105.16.10", ForwardingMechanism.REM),
    ("Outlook", "outlook.com", "spf.protection.outlook.com", "40.92.0.0/15", "40.92.1.1", ForwardingMechanism.MFEF),
    ("Pobox", "pobox.com", "spf.pobox.com", "64.147.108.0/24", "64.147.108.10", ForwardingMechanism.REM),
    ("Runbox", "runbox.com", "spf.runbox.com", "185.226.149.0/24", "185.226.149.10", ForwardingMechanism.PMF),
    ("Yahoo", "yahoo.com", "_spf.mail.yahoo.com", "98.136.0.0/16", "98.136.100.1", ForwardingMechanism.PMF),
    ("Zoho", "zohomail.com", "spf.zoho.com", "136.143.188.0/24", "136.143.188.10", ForwardingMechanism.REM),
)

_LISTS = (
    ("Gaggle", "gaggle.email", "spf.gaggle.email", "54.240.10.0/24", "54.240.10.5", ForwardingMechanism.REM_MOD),
    ("Google Groups", "googlegroups.com", "_spf.google.com", "209.85.128.0/17", "209.85.220.65", ForwardingMechanism.REM),
    # self-hosted list software: the hosting organization's own SPF must list the server
    ("Mailman", "mailman.invalid-host.net", None, "198.51.100.0/26", "198.51.100.25", ForwardingMechanism.REM),
    ("Listserv", "listserv.invalid-host.net", None, "198.51.100.64/26", "198.51.100.90", ForwardingMechanism.REM),
)

_OPEN_FORWARDING = {
    "Outlook", "Fastmail", "iCloud", "Freemail", "GoDaddy", "Hushmail", "Mail2World", "Onet", "Pobox", "Runbox",
}
_NOTIFY = {"Mail2World", "Pobox"}
_QUARANTINE_OVER_REJECT = {"Outlook", "Fastmail", "GMX", "Inbox.lv", "Pobox"}
_NOT_ENFORCING = {"Freemail", "Mail2World", "Runbox", "Gaggle"}
_WARNS = {"Gmail", "Onet", "Zoho"}
_UNSOLICITED_DKIM = {"iCloud", "Hushmail", "Runbox"}
_ALLOWLIST_SCOPE = {
    "Fastmail": Policy.REJECT, "GMX": Policy.REJECT, "Inbox.lv": Policy.REJECT, "Pobox": Policy.REJECT,
    "Outlook": Policy.REJECT,
    "Gmail": Policy.QUARANTINE, "Hushmail": Policy.QUARANTINE, "iCloud": Policy.QUARANTINE,
    "Mail.ru": Policy.QUARANTINE, "Onet": Policy.QUARANTINE, "Zoho": Policy.QUARANTINE,
    "Yahoo": Policy.NONE,
}
_ARC = {
    # receiver: (mode, trusted sealers)
    "Gmail": (ArcMode.CORRECT, {"Gmail", "Fastmail", "Pobox"}),
    "Outlook": (ArcMode.CORRECT, {"Gmail"}),
    "Zoho": (ArcMode.ZOHO_BUGGY, {"Gmail", "Fastmail", "Pobox"}),
    "Fastmail": (ArcMode.CORRECT, {"Gmail", "Zoho", "Fastmail", "Pobox"}),
    "Pobox": (ArcMode.CORRECT, {"Gmail", "Fastmail", "Pobox"}),
}
_ARC_SEALERS = {"Gmail", "Zoho", "Fastmail", "Pobox"}


def _relaxed_sources(name: str) -> dict[str, RelaxedRule]:
    if name == "Gmail":
        rules = {
            other: RelaxedRule(Policy.QUARANTINE, require_to_mismatch=True)
            for other, *_ in _PROVIDERS
            if other not in ("Gmail", "Outlook")
        }
        rules["Gmail"] = RelaxedRule(Policy.QUARANTINE)
        rules["Outlook"] = RelaxedRule(Policy.QUARANTINE)
        return rules
    if name == "Outlook":
        return {"Gmail": RelaxedRule(Policy.NONE), "Fastmail": RelaxedRule(Policy.NONE)}
    if name == "Mail.ru":
        return {"Gmail": RelaxedRule(Policy.QUARANTINE)}
    return {}


@functools.lru_cache(maxsize=1)
def _builtin() -> Mapping[str, ProviderProfile]:
    profiles: dict[str, ProviderProfile] = {}
    for is_list, rows in ((False, _PROVIDERS), (True, _LISTS)):
        for name, domain, spf_domain, network, ip, mechanism in rows:
            arc_mode, arc_trust = _ARC.get(name, (ArcMode.OFF, set()))
            scope = _ALLOWLIST_SCOPE.get(name, Policy.NONE)
            profiles[name] = ProviderProfile(
                name=name,
                domain=domain,
                sending_ip=ip,
                forwarding_mechanism=mechanism,
                spf_domain=spf_domain,
                spf_networks=(network,),
                hosted_domains=frozenset({domain}),
                is_list=is_list,
                open_forwarding=name in _OPEN_FORWARDING,
                notifies_destination=name in _NOTIFY,
                enforces_dmarc=name not in _NOT_ENFORCING,
                quarantine_instead_of_reject=name in _QUARANTINE_OVER_REJECT,
                fail_none_means_quarantine=name == "Outlook",
                warn_on_dmarc_fail=name in _WARNS,
                allowlist_override_scope=scope,
                allow_unrestricted_override=scope is Policy.REJECT and name != "Outlook",
                protected_domains=_PROTECTED if name == "Outlook" else frozenset(),
                relaxed_validation_sources=_relaxed_sources(name),
                unsolicited_dkim_for_hosted=name in _UNSOLICITED_DKIM,
                arc_mode=arc_mode,
                arc_trust=frozenset(arc_trust),
                arc_seals_on_forward=name in _ARC_SEALERS,
                gmail_ui_bug=name == "Gmail",
            )
    return types.MappingProxyType(profiles)


def builtin_profiles() -> dict[str, ProviderProfile]:
    """The 16 provider and 4 mailing-list presets, keyed by name."""
    return dict(_builtin())


# ---------------------------------------------------------------------------
# override patches


def _as_bool(value: Any) -> bool:
    if not isinstance(value, bool):
        raise InvalidSetup(f"expected a boolean, got {value!r}")
    return value


def _as_str_set(value: Any) -> frozenset[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise InvalidSetup(f"expected a list of strings, got {value!r}")
    return frozenset(value)


def _as_domain_set(value: Any) -> frozenset[str]:
    return frozenset(normalize_domain(v) for v in _as_str_set(value))


def _as_relaxed(value: Any) -> dict[str, RelaxedRule]:
    if not isinstance(value, dict):
        raise InvalidSetup(f"expected an object of relaxed-validation rules, got {value!r}")
    rules = {}
    for source, rule in value.items():
        if isinstance(rule, str):
            rules[source] = RelaxedRule(Policy(rule))
        else:
            rules[source] = RelaxedRule(
                Policy(rule["max_policy"]), bool(rule.get("require_to_mismatch", False))
            )
    return rules


def _as_str(value: Any) -> str:
    if not isinstance(value, str):
        raise InvalidSetup(f"expected a string, got {value!r}")
    return value


_CONVERTERS = {
    "domain": _as_str,
    "sending_ip": _as_str,
    "spf_domain": lambda v: None if v is None else _as_str(v),
    "spf_networks": lambda v: tuple(sorted(_as_str_set(v))),
    "selector": _as_str,
    "forwarding_mechanism": ForwardingMechanism,
    "hosted_domains": _as_domain_set,
    "protected_domains": _as_domain_set,
    "arc_trust": _as_str_set,
    "allowlist_override_scope": Policy,
    "relaxed_validation_sources": _as_relaxed,
    "arc_mode": ArcMode,
}
_BOOL_FIELDS = {
    f.name for f in dataclasses.fields(ProviderProfile) if f.type in ("bool", bool)
}


def apply_patch(profile: ProviderProfile, patch: Mapping[str, Any]) -> ProviderProfile:
    """Return ``profile`` with JSON-style field overrides applied."""
    changes: dict[str, Any] = {}
    for key, value in patch.items():
        if key == "name":
            continue
        if key in _BOOL_FIELDS:
            changes[key] = _as_bool(value)
        elif key in _CONVERTERS:
            try:
                changes[key] = _CONVERTERS[key](value)
            except (ValueError, KeyError, TypeError) as exc:
                raise InvalidSetup(f"{profile.name}.{key}: {exc}") from exc
        else:
            raise InvalidSetup(f"unknown profile field {key!r}")
    return dataclasses.replace(profile, **changes)


def apply_overrides(
    profiles: Mapping[str, ProviderProfile], overrides: Mapping[str, Mapping[str, Any]]
) -> dict[str, ProviderProfile]:
    """Apply an override file ``{provider name: {field: value}}``."""
    out = dict(profiles)
    for name, patch in overrides.items():
        if name not in out:
            raise InvalidSetup(f"override for unknown provider {name!r}")
        out[name] = apply_patch(out[name], patch)
    return out


def profile_to_dict(profile: ProviderProfile) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in dataclasses.fields(profile):
        value = getattr(profile, f.name)
        if isinstance(value, enum.Enum):
            value = value.value
        elif isinstance(value, frozenset):
            value = sorted(value)
        elif isinstance(value, tuple):
            value = list(value)
        elif f.name == "relaxed_validation_sources":
            value = {
                k: {"max_policy": r.max_policy.value, "require_to_mismatch": r.require_to_mismatch}
                for k, r in sorted(value.items())
            }
        out[f.name] = value
    return out
