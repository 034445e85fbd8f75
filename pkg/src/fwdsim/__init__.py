"""Deterministic email forwarding and spoofing simulator."""

from .auth import ArcMode, ArcVerdict, AuthOutcome, authenticate, seal_arc, sign_dkim, validate_arc, verify_dkim
from .forwarding import ForwarderIdentity, ForwardingMechanism, apply_forwarding
from .library import arc_trust_grid, attack_library
from .message import EmailAddress, EmailMessage, Envelope, MessageHeaders, canonicalize, parse_address, registered_domain
from .profiles import (
    Disposition,
    ProviderProfile,
    UserAccount,
    Verdict,
    builtin_profiles,
    configure_forwarding,
    decide_forward,
    decide_inbound,
)
from .scenario import judge, run_and_judge, run_scenario
from .zone import Policy, SpfVerdict, ZoneDb, evaluate_spf

__all__ = [
    "ArcMode", "ArcVerdict", "AuthOutcome", "Disposition", "EmailAddress", "EmailMessage", "Envelope",
    "ForwarderIdentity", "ForwardingMechanism", "MessageHeaders", "Policy", "ProviderProfile",
    "SpfVerdict", "UserAccount", "Verdict", "ZoneDb", "apply_forwarding", "arc_trust_grid",
    "attack_library", "authenticate", "builtin_profiles", "canonicalize", "configure_forwarding",
    "decide_forward", "decide_inbound", "evaluate_spf", "judge", "parse_address", "registered_domain",
    "run_and_judge",
    "run_scenario", "seal_arc", "sign_dkim", "validate_arc", "verify_dkim",
]
