"""Preset attack scenarios, their negative controls, and the ARC trust grid.

Scenarios are defined in the JSON file format so the shipped files under
``scenarios/`` can be regenerated from, and checked against, this module.
"""

from __future__ import annotations

import copy
import json
import pathlib
from typing import Any, Iterable, Optional

from .profiles import builtin_profiles
from .scenario import Scenario, scenario_from_dict

ATTACKER_IP = "203.0.113.5"
LEGIT_SENDER_IP = "192.0.2.10"

ARC_RECEIVERS = ("Gmail", "Outlook", "Zoho", "Fastmail", "Pobox")
ARC_SEALERS = ("Gmail", "Zoho", "Fastmail", "Pobox")


def _msg(mail_from: Optional[str], rcpt_to: str, from_: str, to: str, subject: str, body: str, ip: str = ATTACKER_IP) -> dict[str, Any]:
    return {
        "envelope": {"mail_from": mail_from, "rcpt_to": rcpt_to},
        "headers": {"from": from_, "to": to, "subject": subject},
        "body": body,
        "origin_ip": ip,
    }


def _spoofed_domain(spf: str, policy: str) -> dict[str, Any]:
    return {"spf": spf, "dmarc": {"p": policy}}


def _forward(account: str, destination: str, confirm: bool = False) -> list[dict[str, str]]:
    steps = [{"op": "configure_forwarding", "account": account, "destination": destination}]
    if confirm:
        steps.append({"op": "confirm_destination", "account": account, "by": destination})
    return steps


def _scenario(name, description, zones, accounts, setup, message, victim, success, profiles=()):
    return {
        "name": name,
        "description": description,
        "profiles": list(profiles),
        "zones": zones,
        "accounts": accounts,
        "setup": setup,
        "inject": {"actor": "attacker", "message": message},
        "expect": {"success_required": success, "victim": victim},
    }


def _control(attack: dict[str, Any], description: str, **changes: Any) -> dict[str, Any]:
    control = copy.deepcopy(attack)
    control["name"] = attack["name"] + "-control"
    control["description"] = description
    control["expect"]["success_required"] = False
    control.update(changes)
    return control


# ---------------------------------------------------------------------------
# attack 1: providers whose SPF record a spoofed domain incorporates


# key -> (forwarder, attacker, spoofed From, SPF include, DMARC policy, hosted?, victim, allowlist?)
_A1 = {
    "outlook": ("Outlook", "attacker@outlook.com", "Anthony.Blinken@state.gov", "spf.protection.outlook.com", "reject", False, "victim@gmail.com", True),
    "icloud": ("iCloud", "attacker@icloud.com", "support@peterborgapps.com", "_spf.icloud.com", "quarantine", True, "victim@yahoo.com", True),
    "freemail": ("Freemail", "attacker@freemail.hu", "ugyfel@otpbank.hu", "spf.freemail.hu", "reject", False, "victim@gmail.com", False),
    "hushmail": ("Hushmail", "attacker@hushmail.com", "counsel@securelegal.com", "spf.hushmail.com", "quarantine", True, "victim@yahoo.com", True),
    "mail2world": ("Mail2World", "attacker@mail2world.com", "billing@m2wcustomer.com", "spf.mail2world.com", "reject", False, "victim@gmail.com", False),
    "runbox": ("Runbox", "attacker@runbox.com", "post@fjordshipping.no", "spf.runbox.com", "reject", True, "victim@yahoo.com", False),
}
_VICTIM_PROVIDER = {"gmail.com": "Gmail", "yahoo.com": "Yahoo"}


def _a1(key: str) -> tuple[dict[str, Any], dict[str, Any]]:
    provider, attacker, spoofed, spf_include, policy, hosted, victim, allowlist = _A1[key]
    domain = spoofed.split("@")[1]
    profiles = [{"name": provider, "hosted_domains": [domain]}] if hosted else [provider]
    zones = {domain: _spoofed_domain(f"include:{spf_include} -all", policy)}
    accounts = [
        {"provider": provider, "address": attacker},
        {"provider": _VICTIM_PROVIDER[victim.split("@")[1]], "address": victim},
    ]
    allow = [{"op": "allowlist_add", "account": attacker, "entry": domain}] if allowlist else []
    message = _msg(spoofed, attacker, spoofed, victim, "Urgent: account review", "Please review the attached notice.")
    attack = _scenario(
        f"A1-spf-incorporation-{key}",
        f"{domain} incorporates the SPF record of {provider}; mail forwarded by an attacker's "
        f"{provider} account passes SPF at the victim.",
        zones, accounts, allow + _forward(attacker, victim), message, victim, True, profiles,
    )
    if allowlist:
        control = _control(
            attack,
            f"Same flow without the allowlist entry; {provider} does not forward the spoof.",
            setup=_forward(attacker, victim),
        )
    else:
        # the forwarder does not enforce DMARC, so the control removes the incorporation
        control = _control(
            attack,
            f"{domain} publishes its own SPF servers instead of including {provider}'s record.",
            zones={domain: _spoofed_domain("ip4:192.0.2.0/24 -all", policy)},
            profiles=[provider],
        )
    return attack, control


# ---------------------------------------------------------------------------
# attack 2: relaxed validation of mail arriving from large providers


def _a2_gmail_via_outlook() -> tuple[dict[str, Any], dict[str, Any]]:
    attacker, victim = "attacker@outlook.com", "victim@gmail.com"
    attack = _scenario(
        "A2-relaxed-gmail-via-outlook",
        "Gmail accepts DMARC failures under Quarantine when the last hop is Outlook.",
        {"alipay.com": _spoofed_domain("ip4:198.18.10.0/24 -all", "quarantine")},
        [{"provider": "Outlook", "address": attacker}, {"provider": "Gmail", "address": victim}],
        [{"op": "allowlist_add", "account": attacker, "entry": "alipay.com"}] + _forward(attacker, victim),
        _msg("service@alipay.com", attacker, "service@alipay.com", victim, "Payment notice", "Your payment is on hold."),
        victim, True, ["Outlook", "Gmail"],
    )
    control = _control(
        attack, "Gmail without relaxed validation quarantines the forwarded spoof.",
        profiles=["Outlook", {"name": "Gmail", "relaxed_validation_sources": {}}],
    )
    return attack, control


def _a2_outlook_via_fastmail() -> tuple[dict[str, Any], dict[str, Any]]:
    attacker, victim = "attacker@fastmail.com", "victim@outlook.com"
    attack = _scenario(
        "A2-outlook-via-fastmail",
        "Outlook accepts DMARC failures under None when forwarded by a personal Fastmail account.",
        {"lesechos.fr": _spoofed_domain("ip4:198.18.20.0/24 -all", "none")},
        [{"provider": "Fastmail", "address": attacker}, {"provider": "Outlook", "address": victim}],
        _forward(attacker, victim),
        _msg("redaction@lesechos.fr", attacker, "redaction@lesechos.fr", victim, "Interview request", "Could we talk tomorrow?"),
        victim, True, ["Fastmail", "Outlook"],
    )
    control = _control(
        attack, "Outlook without relaxed validation quarantines the DMARC failure.",
        profiles=["Fastmail", {"name": "Outlook", "relaxed_validation_sources": {}}],
    )
    return attack, control


def _a2_me_trick() -> tuple[dict[str, Any], dict[str, Any]]:
    attacker, victim = "attacker@fastmail.com", "victim@gmail.com"
    attack = _scenario(
        "A2-gmail-via-fastmail-me-trick",
        "Gmail's relaxed path for other providers requires TO to differ from the recipient; "
        "a TO header displayed as 'me' with another address satisfies it.",
        {"megabank.com": _spoofed_domain("ip4:198.18.30.0/24 -all", "quarantine")},
        [{"provider": "Fastmail", "address": attacker}, {"provider": "Gmail", "address": victim}],
        [{"op": "allowlist_add", "account": attacker, "entry": "megabank.com"}] + _forward(attacker, victim),
        _msg("security@megabank.com", attacker, "security@megabank.com", "me <customers@megabank.com>",
             "Verify your card", "Confirm your recent transaction."),
        victim, True, ["Fastmail", "Gmail"],
    )
    control = _control(attack, "TO names the victim directly, so Gmail's relaxed path does not apply.")
    control["inject"]["message"]["headers"]["to"] = victim
    return attack, control


def _a2_mailru_control() -> dict[str, Any]:
    # Mail.ru relaxes for Gmail, but Gmail's confirmation requirement blocks an
    # attacker-configured forward, so the attack is not reachable.
    attacker, victim = "attacker@gmail.com", "victim@mail.ru"
    return _scenario(
        "A2-mailru-via-gmail-control",
        "Mail.ru trusts Gmail, but Gmail forwarding stays inert without the destination's consent.",
        {"sberbank.ru": _spoofed_domain("ip4:198.18.40.0/24 -all", "quarantine")},
        [{"provider": "Gmail", "address": attacker}, {"provider": "Mail.ru", "address": victim}],
        [{"op": "allowlist_add", "account": attacker, "entry": "sberbank.ru"}] + _forward(attacker, victim),
        _msg("info@sberbank.ru", attacker, "info@sberbank.ru", victim, "Card blocked", "Call us now."),
        victim, False, ["Gmail", "Mail.ru"],
    )


# ---------------------------------------------------------------------------
# attack 3: ARC


def _a3_zoho_via_fastmail() -> tuple[dict[str, Any], dict[str, Any]]:
    attacker, victim = "attacker@fastmail.com", "victim@zohomail.com"
    attack = _scenario(
        "A3-zoho-arc-via-fastmail",
        "Zoho honours the newest trusted ARC seal without reading recorded results.",
        {"facebook.com": _spoofed_domain("ip4:198.18.50.0/24 -all", "reject")},
        [{"provider": "Fastmail", "address": attacker}, {"provider": "Zoho", "address": victim}],
        [{"op": "allowlist_add", "account": attacker, "entry": "facebook.com"}] + _forward(attacker, victim),
        _msg("biden@facebook.com", attacker, "biden@facebook.com", victim, "A message", "Hello from the team."),
        victim, True, ["Fastmail", "Zoho"],
    )
    control = _control(
        attack, "Zoho with correct ARC validation sees the recorded DMARC failure.",
        profiles=["Fastmail", {"name": "Zoho", "arc_mode": "correct"}],
    )
    return attack, control


def _a3_multihop() -> tuple[dict[str, Any], dict[str, Any]]:
    gmail, outlook, victim = "attacker@gmail.com", "attacker@outlook.com", "victim@zohomail.com"
    domain = "cnn.com"
    attack = _scenario(
        "A3-multihop-gmail-outlook-zoho",
        "Gmail seals, Outlook forwards without sealing, and Zoho trusts the Gmail seal.",
        {domain: _spoofed_domain("ip4:198.18.60.0/24 -all", "quarantine")},
        [
            {"provider": "Gmail", "address": gmail},
            {"provider": "Outlook", "address": outlook},
            {"provider": "Zoho", "address": victim},
        ],
        [
            {"op": "allowlist_add", "account": gmail, "entry": domain},
            {"op": "allowlist_add", "account": outlook, "entry": domain},
            *_forward(gmail, outlook, confirm=True),
            *_forward(outlook, victim),
        ],
        _msg(f"breaking@{domain}", gmail, f"breaking@{domain}", victim, "Breaking news", "Read the full story."),
        victim, True, ["Gmail", "Outlook", "Zoho"],
    )
    control = _control(
        attack, "Zoho with correct ARC validation quarantines the three-hop spoof.",
        profiles=["Gmail", "Outlook", {"name": "Zoho", "arc_mode": "correct"}],
    )
    return attack, control


# ---------------------------------------------------------------------------
# attack 4: mailing lists


# key -> (list provider, list address, spoofed sender, org SPF, member, member provider)
_LISTS = {
    "googlegroups": ("Google Groups", "list@univ.edu", "someone@univ.edu", "include:_spf.google.com -all", "member@gmail.com", "Gmail"),
    "mailman": ("Mailman", "staff@yale.edu", "provost@yale.edu", "ip4:198.51.100.0/26 -all", "member@outlook.com", "Outlook"),
    "listserv": ("Listserv", "alerts@wa.gov", "governor@wa.gov", "ip4:198.51.100.64/26 -all", "member@yahoo.com", "Yahoo"),
}


def _a4_list(key: str) -> tuple[dict[str, Any], dict[str, Any]]:
    provider, list_addr, spoofed, org_spf, member, member_provider = _LISTS[key]
    domain = list_addr.split("@")[1]
    attack = _scenario(
        f"A4-mailinglist-{key}-dmarc-none",
        f"A {provider} list on {domain} remails a spoof of its own DMARC-None domain; "
        "the rewritten MAIL FROM passes aligned SPF at the member.",
        {domain: {"spf": org_spf, "dmarc": {"p": "none"}}},
        [
            {"provider": provider, "address": list_addr, "members": [member]},
            {"provider": member_provider, "address": member},
        ],
        [],
        _msg(spoofed, list_addr, spoofed, list_addr, "Policy update", "Effective immediately."),
        member, True, [{"name": provider, "hosted_domains": [domain]}],
    )
    control = _control(attack, f"{domain} publishes Reject, so the list refuses the spoof.")
    control["zones"][domain]["dmarc"]["p"] = "reject"
    return attack, control


def _a4_gaggle() -> tuple[dict[str, Any], dict[str, Any]]:
    list_addr, member = "team@gaggle.email", "member@gmail.com"
    attack = _scenario(
        "A4-gaggle-any-policy",
        "Gaggle does not enforce DMARC, so even a Reject-domain spoof is remailed to members.",
        {"paypal.com": _spoofed_domain("ip4:198.18.70.0/24 -all", "reject")},
        [
            {"provider": "Gaggle", "address": list_addr, "members": [member]},
            {"provider": "Gmail", "address": member},
        ],
        [],
        _msg("service@paypal.com", list_addr, "PayPal <service@paypal.com>", list_addr, "Account limited", "Restore access now."),
        member, True, ["Gaggle", "Gmail"],
    )
    control = _control(
        attack, "With DMARC enforcement Gaggle rejects the spoof.",
        profiles=[{"name": "Gaggle", "enforces_dmarc": True}, "Gmail"],
    )
    return attack, control


def _a4_backend_mta() -> tuple[dict[str, Any], dict[str, Any]]:
    list_addr, member = "faculty@mit.edu", "member@outlook.com"
    attack = _scenario(
        "A4-backend-mta-no-dmarc",
        "A self-hosted list whose MTA skips DMARC remails a spoof of its own Reject domain.",
        {"mit.edu": {"spf": "ip4:198.51.100.0/26 -all", "dmarc": {"p": "reject"}}},
        [
            {"provider": "Mailman", "address": list_addr, "members": [member]},
            {"provider": "Outlook", "address": member},
        ],
        [],
        _msg("president@mit.edu", list_addr, "president@mit.edu", list_addr, "Campus notice", "Please read."),
        member, True, [{"name": "Mailman", "hosted_domains": ["mit.edu"], "enforces_dmarc": False}],
    )
    control = _control(
        attack, "The list MTA enforcing DMARC rejects the spoof.",
        profiles=[{"name": "Mailman", "hosted_domains": ["mit.edu"], "enforces_dmarc": True}],
    )
    return attack, control


# ---------------------------------------------------------------------------


def library_dicts() -> dict[str, dict[str, Any]]:
    """Every preset and control in file form, keyed by name."""
    pairs = [_a1(k) for k in _A1]
    pairs += [_a2_gmail_via_outlook(), _a2_outlook_via_fastmail(), _a2_me_trick()]
    pairs += [_a3_zoho_via_fastmail(), _a3_multihop()]
    pairs += [_a4_list(k) for k in _LISTS]
    pairs += [_a4_gaggle(), _a4_backend_mta()]
    out = {}
    for attack, control in pairs:
        out[attack["name"]] = attack
        out[control["name"]] = control
    standalone = _a2_mailru_control()
    out[standalone["name"]] = standalone
    return dict(sorted(out.items()))


def attack_library() -> dict[str, Scenario]:
    return {name: scenario_from_dict(data) for name, data in library_dicts().items()}


def filter_names(names: Iterable[str], pattern: Optional[str]) -> list[str]:
    """Names whose preset prefix matches ``pattern`` (case-insensitive substring)."""
    names = sorted(names)
    if not pattern:
        return names
    needle = pattern.lower()
    return [n for n in names if needle in n.lower()]


# ---------------------------------------------------------------------------
# ARC trust grid


def arc_grid_dict(receiver: str, sealer: str) -> dict[str, Any]:
    """A legitimate message forwarded by ``sealer`` to an account at ``receiver``."""
    profiles = builtin_profiles()
    relay = f"relay@{profiles[sealer].domain}"
    inbox = f"reader@{profiles[receiver].domain}"
    if relay == inbox:
        inbox = f"reader2@{profiles[receiver].domain}"
    return {
        "name": f"arc-grid-{receiver}-via-{sealer}",
        "description": f"Does {receiver} override a DMARC failure sealed by {sealer}?",
        "profiles": [receiver, sealer],
        "zones": {"newsletter-sender.com": _spoofed_domain("ip4:192.0.2.0/24 -all", "reject")},
        "accounts": [
            {"provider": sealer, "address": relay},
            {"provider": receiver, "address": inbox},
        ],
        "setup": _forward(relay, inbox, confirm=True),
        "inject": {
            "actor": "legitimate sender",
            "message": _msg(
                "news@newsletter-sender.com", relay, "news@newsletter-sender.com", relay,
                "Monthly digest", "This month's news.", ip=LEGIT_SENDER_IP,
            ),
        },
        "expect": {"success_required": True, "victim": inbox},
    }


def arc_trust_grid() -> dict[tuple[str, str], Scenario]:
    return {
        (r, s): scenario_from_dict(arc_grid_dict(r, s)) for r in ARC_RECEIVERS for s in ARC_SEALERS
    }


def export_scenarios(directory: str) -> list[pathlib.Path]:
    """Write every preset and control as ``<name>.json`` under ``directory``."""
    root = pathlib.Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, data in library_dicts().items():
        path = root / f"{name}.json"
        path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
        paths.append(path)
    return paths
