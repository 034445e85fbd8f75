"""The four forwarding header-rewrite mechanisms."""

from __future__ import annotations

import dataclasses
import enum
import ipaddress
from typing import Optional

from .errors import NotAddressedToForwarder
from .message import EmailAddress, EmailMessage


class ForwardingMechanism(str, enum.Enum):
    PMF = "pmf"
    MFEF = "mfef"
    REM = "rem"
    REM_MOD = "rem_mod"


@dataclasses.dataclass(frozen=True)
class ForwarderIdentity:
    account: EmailAddress
    sending_ip: str

    def __post_init__(self) -> None:
        ipaddress.ip_address(self.sending_ip)


def srs_rewrite(original_mail_from: Optional[EmailAddress], fwd: ForwarderIdentity) -> EmailAddress:
    """Encode the original envelope sender into the forwarder's domain.

    ``sp@hotcrp.com`` forwarded by ``fwd@univ.edu`` becomes
    ``fwd=sp=hotcrp.com@univ.edu``; a null sender becomes ``fwd=bounce``.
    """
    if original_mail_from is None:
        local = "fwd=bounce"
    else:
        local = f"fwd={original_mail_from.local}={original_mail_from.domain}"
    return EmailAddress(local=local, domain=fwd.account.domain)


def apply_forwarding(
    msg: EmailMessage,
    mechanism: ForwardingMechanism,
    fwd: ForwarderIdentity,
    destination: EmailAddress,
) -> EmailMessage:
    if not fwd.account.same_mailbox(msg.envelope.rcpt_to):
        raise NotAddressedToForwarder(
            f"message for {msg.envelope.rcpt_to.addr_spec} reached forwarder {fwd.account.addr_spec}"
        )
    envelope = dataclasses.replace(msg.envelope, rcpt_to=destination)
    headers = msg.headers
    if mechanism is ForwardingMechanism.MFEF:
        from_addr = headers.from_addr
        envelope = dataclasses.replace(
            envelope, mail_from=EmailAddress(from_addr.local, from_addr.domain)
        )
    elif mechanism in (ForwardingMechanism.REM, ForwardingMechanism.REM_MOD):
        envelope = dataclasses.replace(envelope, mail_from=srs_rewrite(msg.envelope.mail_from, fwd))
        if mechanism is ForwardingMechanism.REM_MOD:
            # the display name survives; only the address becomes the list's
            headers = dataclasses.replace(
                headers,
                from_addr=EmailAddress(
                    fwd.account.local, fwd.account.domain, headers.from_addr.display_name
                ),
            )
    annotation = (
        f"by {fwd.account.domain} [{fwd.sending_ip}] via {mechanism.value} "
        f"for {destination.addr_spec}"
    )
    headers = dataclasses.replace(headers, received=headers.received + (annotation,))
    return dataclasses.replace(msg, envelope=envelope, headers=headers, origin_ip=fwd.sending_ip)
