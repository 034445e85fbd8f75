"""Addresses, the envelope/message header layers, and the message container.

Everything here is immutable; transforms elsewhere build new values with
``dataclasses.replace``.
"""

from __future__ import annotations

import dataclasses
import ipaddress
import re
from email.utils import formataddr, parseaddr
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Optional, Sequence

from .errors import MalformedAddress, MissingHeader, UnknownSuffix

if TYPE_CHECKING:
    from .auth import ArcSet, DkimSignature

_LABEL_RE = re.compile(r"^[a-z0-9_](?:[a-z0-9_-]{0,61}[a-z0-9])?$")  # "_" for _spf-style names
_WS_RE = re.compile(r"\s+")
_BAD_LOCAL_CHARS = set(" \t\r\n<>@,;:\"()[]\\")

# Small embedded public-suffix snapshot. Names whose suffix is not listed
# fall back to treating the last label as the suffix (two-label rule).
PUBLIC_SUFFIXES = frozenset(
    {
        "com", "org", "net", "edu", "gov", "mil", "int", "info", "biz", "io",
        "email", "uk", "co.uk", "ac.uk", "gov.uk", "org.uk", "au", "com.au",
        "net.au", "org.au", "edu.au", "gov.au", "fr", "de", "hu", "pl", "lv",
        "ru", "no", "jp", "co.jp", "cn", "com.cn", "us", "ca", "nl",
    }
)


def is_valid_domain(name: str) -> bool:
    if not name or len(name) > 253:
        return False
    return all(_LABEL_RE.match(label) for label in name.split("."))


def normalize_domain(name: str) -> str:
    """Lowercase and strip a trailing dot; raise if not a valid DNS name."""
    domain = name.strip().rstrip(".").lower()
    if not is_valid_domain(domain):
        raise MalformedAddress(f"illegal domain name: {name!r}")
    return domain


@dataclasses.dataclass(frozen=True)
class EmailAddress:
    local: str
    domain: str
    display_name: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.local or any(ch in _BAD_LOCAL_CHARS for ch in self.local):
            raise MalformedAddress(f"illegal local part: {self.local!r}")
        if self.domain != self.domain.lower() or not is_valid_domain(self.domain):
            raise MalformedAddress(f"illegal domain: {self.domain!r}")
        if self.display_name is not None and not self.display_name.strip():
            object.__setattr__(self, "display_name", None)

    @property
    def addr_spec(self) -> str:
        return f"{self.local}@{self.domain}"

    def render(self) -> str:
        if self.display_name:
            return formataddr((self.display_name, self.addr_spec))
        return self.addr_spec

    def same_mailbox(self, other: Optional["EmailAddress"]) -> bool:
        """Compare the routable part only; display names never matter here."""
        return other is not None and self.addr_spec == other.addr_spec

    def __str__(self) -> str:
        return self.render()


def parse_address(text: str) -> EmailAddress:
    """Parse ``local@domain`` or ``Name <local@domain>``.

    The domain is lowercased; the local part keeps its case.
    """
    if not isinstance(text, str) or "@" not in text:
        raise MalformedAddress(f"missing '@' in address: {text!r}")
    display, spec = parseaddr(text.strip())
    if spec.count("@") != 1:
        raise MalformedAddress(f"address must contain exactly one '@': {text!r}")
    local, _, domain = spec.partition("@")
    if not local or not domain:
        raise MalformedAddress(f"empty local part or domain: {text!r}")
    domain = normalize_domain(domain)
    return EmailAddress(local=local, domain=domain, display_name=display or None)


def registered_domain(domain: str) -> str:
    """Return the organizational (public suffix + 1) domain of ``domain``."""
    name = normalize_domain(domain)
    labels = name.split(".")
    suffix_len = 1
    for i in range(len(labels)):
        candidate = ".".join(labels[i:])
        if candidate in PUBLIC_SUFFIXES:
            suffix_len = len(labels) - i
            break
    if len(labels) <= suffix_len:
        raise UnknownSuffix(f"{name} is itself a public suffix")
    return ".".join(labels[-(suffix_len + 1):])


@dataclasses.dataclass(frozen=True)
class Envelope:
    rcpt_to: EmailAddress
    mail_from: Optional[EmailAddress] = None

    def __post_init__(self) -> None:
        if self.rcpt_to is None:
            raise ValueError("envelope requires rcpt_to")


@dataclasses.dataclass(frozen=True)
class MessageHeaders:
    from_addr: EmailAddress
    to_addr: EmailAddress
    subject: str = ""
    dkim_signatures: tuple["DkimSignature", ...] = ()
    arc_sets: tuple["ArcSet", ...] = ()
    received: tuple[str, ...] = ()
    # any other header, in message order: (name, value)
    extra: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.from_addr is None or self.to_addr is None:
            raise ValueError("FROM and TO headers are required")
        for position, arc_set in enumerate(self.arc_sets, start=1):
            if arc_set.instance != position:
                raise ValueError(
                    f"ARC set at position {position} carries instance {arc_set.instance}"
                )

    def values(self, name: str) -> list[str]:
        """All values for header ``name`` (case-insensitive), in order."""
        key = name.lower()
        if key == "from":
            return [self.from_addr.render()]
        if key == "to":
            return [self.to_addr.render()]
        if key == "subject":
            return [self.subject]
        return [value for hname, value in self.extra if hname.lower() == key]


@dataclasses.dataclass(frozen=True)
class EmailMessage:
    envelope: Envelope
    headers: MessageHeaders
    body: str = ""
    origin_ip: Optional[str] = None

    def __post_init__(self) -> None:
        if self.origin_ip is not None:
            ipaddress.ip_address(self.origin_ip)

    @property
    def was_forwarded(self) -> bool:
        return bool(self.headers.received)

    def with_headers(self, **changes: Any) -> "EmailMessage":
        return dataclasses.replace(self, headers=dataclasses.replace(self.headers, **changes))

    def with_envelope(self, **changes: Any) -> "EmailMessage":
        return dataclasses.replace(self, envelope=dataclasses.replace(self.envelope, **changes))


def _collapse(value: str) -> str:
    return _WS_RE.sub(" ", value).strip()


def canonicalize(msg: EmailMessage, header_names: Sequence[str]) -> bytes:
    """Deterministic byte form of the named headers plus the body.

    A simplified relaxed scheme: lowercase names, whitespace runs collapsed,
    one header per line, then a blank line and the body without trailing
    blank lines.
    """
    lines = []
    for name in header_names:
        values = msg.headers.values(name)
        if not values:
            raise MissingHeader(name)
        for value in values:
            lines.append(f"{name.lower()}:{_collapse(value)}\n")
    body_lines = msg.body.splitlines()
    while body_lines and not body_lines[-1].strip():
        body_lines.pop()
    lines.append("\n")
    lines.extend(line + "\n" for line in body_lines)
    return "".join(lines).encode("utf-8")


def message_from_dict(data: Mapping[str, Any]) -> EmailMessage:
    """Build a message from the JSON fixture format.

    ``{"envelope": {"mail_from", "rcpt_to"}, "headers": {"from", "to",
    "subject", "extra"}, "body", "origin_ip"}``; ``mail_from`` may be null.
    """
    env = data["envelope"]
    hdr = data["headers"]
    mail_from = env.get("mail_from")
    return EmailMessage(
        envelope=Envelope(
            rcpt_to=parse_address(env["rcpt_to"]),
            mail_from=parse_address(mail_from) if mail_from else None,
        ),
        headers=MessageHeaders(
            from_addr=parse_address(hdr["from"]),
            to_addr=parse_address(hdr["to"]),
            subject=hdr.get("subject", ""),
            extra=tuple((str(n), str(v)) for n, v in hdr.get("extra", [])),
        ),
        body=data.get("body", ""),
        origin_ip=data.get("origin_ip"),
    )


def message_to_dict(msg: EmailMessage) -> dict[str, Any]:
    out: dict[str, Any] = {
        "envelope": {
            "mail_from": msg.envelope.mail_from.render() if msg.envelope.mail_from else None,
            "rcpt_to": msg.envelope.rcpt_to.render(),
        },
        "headers": {
            "from": msg.headers.from_addr.render(),
            "to": msg.headers.to_addr.render(),
            "subject": msg.headers.subject,
        },
        "body": msg.body,
        "origin_ip": msg.origin_ip,
    }
    if msg.headers.extra:
        out["headers"]["extra"] = [list(pair) for pair in msg.headers.extra]
    return out


def address_set(entries: Iterable[str]) -> frozenset[str]:
    """Lowercased allowlist entries; each is an address or a bare domain."""
    return frozenset(entry.strip().lower() for entry in entries if entry.strip())
