"""Multi-hop delivery runs: load a scenario, execute it, judge the outcome."""

from __future__ import annotations

import collections
import dataclasses
import json
from typing import Any, Mapping, Optional

from .auth import add_dkim
from .errors import FwdsimError, HopLimitExceeded, InvalidSetup
from .message import EmailAddress, EmailMessage, address_set, message_from_dict, parse_address
from .profiles import (
    Disposition,
    ProviderProfile,
    SetupStatus,
    UserAccount,
    Verdict,
    apply_patch,
    assess_inbound,
    builtin_profiles,
    configure_forwarding,
    confirm_destination,
    decide_forward,
    provider_zone,
)
from .zone import ZoneDb, zone_from_dict

DEFAULT_MAX_HOPS = 8
SETUP_OPS = ("configure_forwarding", "confirm_destination", "allowlist_add")


@dataclasses.dataclass(frozen=True)
class SetupStep:
    op: str
    account: EmailAddress
    argument: str

    def __post_init__(self) -> None:
        if self.op not in SETUP_OPS:
            raise InvalidSetup(f"unknown setup operation {self.op!r}")


@dataclasses.dataclass(frozen=True)
class Injection:
    actor: str
    message: EmailMessage
    # (domain, selector) pairs the sender signs with before sending
    sign_as: tuple[tuple[str, str], ...] = ()


@dataclasses.dataclass(frozen=True)
class ExpectedOutcome:
    success_required: bool
    victim: EmailAddress


@dataclasses.dataclass(frozen=True)
class Scenario:
    name: str
    zone: ZoneDb
    profiles: Mapping[str, ProviderProfile]
    accounts: tuple[tuple[str, UserAccount], ...]
    setup: tuple[SetupStep, ...]
    injection: Injection
    expectation: ExpectedOutcome
    description: str = ""
    max_hops: int = DEFAULT_MAX_HOPS

    def __post_init__(self) -> None:
        seen = set()
        for provider, account in self.accounts:
            if provider not in self.profiles:
                raise InvalidSetup(f"account {account.address.addr_spec} uses unknown provider {provider!r}")
            if account.address.domain not in self.profiles[provider].hosted_domains:
                raise InvalidSetup(f"{provider} does not host {account.address.domain}")
            if account.address.addr_spec in seen:
                raise InvalidSetup(f"duplicate account {account.address.addr_spec}")
            if account.members and not self.profiles[provider].is_list:
                raise InvalidSetup(f"{account.address.addr_spec} has members but {provider} is not a list")
            seen.add(account.address.addr_spec)
        referenced = [s.account for s in self.setup]
        referenced += [m for _, a in self.accounts for m in a.members]
        referenced += [self.injection.message.envelope.rcpt_to, self.expectation.victim]
        for address in referenced:
            if address.addr_spec not in seen:
                raise InvalidSetup(f"unknown account {address.addr_spec}")
        if self.injection.message.origin_ip is None:
            raise InvalidSetup("the injected message needs an origin_ip")
        if self.max_hops < 1:
            raise InvalidSetup("max_hops must be positive")


@dataclasses.dataclass(frozen=True)
class Hop:
    index: int
    provider: str
    account: str
    record: Mapping[str, Any]


@dataclasses.dataclass(frozen=True)
class DeliveryTrace:
    scenario: str
    setup_events: tuple[Mapping[str, Any], ...]
    hops: tuple[Hop, ...]
    final: Mapping[str, Disposition]

    def lines(self, judgement: Optional["Judgement"] = None, expectation: Optional[ExpectedOutcome] = None) -> list[str]:
        out = [json.dumps(e, separators=(",", ":")) for e in self.setup_events]
        out += [json.dumps(h.record, separators=(",", ":")) for h in self.hops]
        out.append(json.dumps(self.summary(judgement, expectation), separators=(",", ":")))
        return out

    def to_jsonl(self, judgement: Optional["Judgement"] = None, expectation: Optional[ExpectedOutcome] = None) -> str:
        return "\n".join(self.lines(judgement, expectation)) + "\n"

    def summary(self, judgement: Optional["Judgement"] = None, expectation: Optional[ExpectedOutcome] = None) -> dict[str, Any]:
        out: dict[str, Any] = {
            "type": "summary",
            "scenario": self.scenario,
            "hops": len(self.hops),
            "final": {addr: d.to_dict() for addr, d in sorted(self.final.items())},
        }
        if expectation is not None:
            out["victim"] = expectation.victim.addr_spec
            out["success_required"] = expectation.success_required
            disposition = self.final.get(expectation.victim.addr_spec)
            if judgement is not None:
                out["judgement"] = "pass" if judgement.passed else "fail"
                out["reason"] = judgement.reason
            out["verdict"] = disposition.verdict.value if disposition else "none"
            out["warning"] = disposition.warning if disposition else False
        return out


@dataclasses.dataclass(frozen=True)
class Judgement:
    passed: bool
    reason: str


def _message_summary(msg: EmailMessage) -> dict[str, Any]:
    mail_from = msg.envelope.mail_from
    return {
        "mail_from": mail_from.addr_spec if mail_from else None,
        "rcpt_to": msg.envelope.rcpt_to.addr_spec,
        "from": msg.headers.from_addr.render(),
        "to": msg.headers.to_addr.render(),
        "origin_ip": msg.origin_ip,
        "dkim": [s.signer_domain for s in msg.headers.dkim_signatures],
        "arc": [s.sealer_domain for s in msg.headers.arc_sets],
    }


def _hop_record(index: int, provider: ProviderProfile, account: UserAccount, msg: EmailMessage, assessment, action, transform) -> dict[str, Any]:
    return {
        "type": "hop",
        "hop": index,
        "provider": provider.name,
        "account": account.address.addr_spec,
        "received": _message_summary(msg),
        "auth": assessment.outcome.to_dict(),
        "rule": assessment.rule,
        "action": action,
        "transform": transform,
    }


def run_scenario(scenario: Scenario) -> DeliveryTrace:
    """Execute setup, inject the message and follow it until every copy lands."""
    profiles = scenario.profiles
    provider_of = {a.address.addr_spec: p for p, a in scenario.accounts}
    accounts = {a.address.addr_spec: a for _, a in scenario.accounts}
    events: list[dict[str, Any]] = []

    for step in scenario.setup:
        key = step.account.addr_spec
        profile = profiles[provider_of[key]]
        event: dict[str, Any] = {"type": "setup", "op": step.op, "account": key}
        if step.op == "allowlist_add":
            accounts[key] = dataclasses.replace(
                accounts[key], allowlist=accounts[key].allowlist | address_set([step.argument])
            )
            event["entry"] = step.argument.lower()
        elif step.op == "configure_forwarding":
            destination = parse_address(step.argument)
            status, accounts[key] = configure_forwarding(profile, accounts[key], destination)
            if status is SetupStatus.DENIED:
                raise InvalidSetup(f"{profile.name} does not allow forwarding from {key}")
            event["destination"] = destination.addr_spec
            event["status"] = status.value
            event["notified"] = status is SetupStatus.OK and profile.notifies_destination
        else:
            by = parse_address(step.argument)
            accounts[key] = confirm_destination(accounts[key], by)
            event["by"] = by.addr_spec
        events.append(event)

    msg = scenario.injection.message
    for domain, selector in scenario.injection.sign_as:
        msg = add_dkim(msg, domain, selector, scenario.zone)

    hops: list[Hop] = []
    final: dict[str, Disposition] = {}
    queue = collections.deque([msg])
    while queue:
        current = queue.popleft()
        key = current.envelope.rcpt_to.addr_spec
        if key not in accounts:
            raise InvalidSetup(f"no account receives mail for {key}")
        if len(hops) >= scenario.max_hops:
            raise HopLimitExceeded(f"more than {scenario.max_hops} hops in {scenario.name}")
        profile = profiles[provider_of[key]]
        account = accounts[key]
        index = len(hops) + 1
        if account.forwarding_active(profile):
            result = decide_forward(profile, account, current, scenario.zone, profiles)
            if result.is_drop:
                action = {"kind": "drop", **result.assessment.disposition.to_dict()}
                transform = None
            else:
                action = {"kind": "forward", "to": [m.envelope.rcpt_to.addr_spec for m in result.messages]}
                transform = profile.forwarding_mechanism.value
                queue.extend(result.messages)
            record = _hop_record(index, profile, account, current, result.assessment, action, transform)
        else:
            assessment = assess_inbound(profile, account, current, scenario.zone, profiles)
            final[key] = assessment.disposition
            action = {"kind": "deliver", **assessment.disposition.to_dict()}
            record = _hop_record(index, profile, account, current, assessment, action, None)
        hops.append(Hop(index, profile.name, key, record))

    return DeliveryTrace(scenario.name, tuple(events), tuple(hops), final)


def judge(trace: DeliveryTrace, expectation: ExpectedOutcome) -> Judgement:
    """Attack success means the victim got it in the inbox with no warning."""
    disposition = trace.final.get(expectation.victim.addr_spec)
    if disposition is None:
        failure = "not delivered"
    elif disposition.verdict is not Verdict.INBOX:
        failure = f"verdict {disposition.verdict.value}"
    elif disposition.warning:
        failure = "warning shown"
    else:
        failure = None
    if expectation.success_required:
        return Judgement(failure is None, "attack succeeded" if failure is None else failure)
    if failure is None:
        return Judgement(False, "attack succeeded")
    return Judgement(True, f"attack blocked: {failure}")


def run_and_judge(scenario: Scenario) -> tuple[DeliveryTrace, Judgement]:
    trace = run_scenario(scenario)
    return trace, judge(trace, scenario.expectation)


# ---------------------------------------------------------------------------
# file format


def _profile_directory(entries: Any, overrides: Optional[Mapping[str, Mapping[str, Any]]]) -> dict[str, ProviderProfile]:
    directory = builtin_profiles()
    for entry in entries or []:
        if isinstance(entry, str):
            if entry not in directory:
                raise InvalidSetup(f"unknown provider {entry!r}")
            continue
        name = entry.get("name")
        if name not in directory:
            raise InvalidSetup(f"unknown provider {name!r}")
        directory[name] = apply_patch(directory[name], entry)
    for name, patch in (overrides or {}).items():
        if name not in directory:
            raise InvalidSetup(f"override for unknown provider {name!r}")
        directory[name] = apply_patch(directory[name], patch)
    return directory


def scenario_from_dict(
    data: Mapping[str, Any], overrides: Optional[Mapping[str, Mapping[str, Any]]] = None
) -> Scenario:
    """Build a scenario from its JSON form; ``overrides`` patches profiles last."""
    try:
        profiles = _profile_directory(data.get("profiles"), overrides)
        zone = provider_zone(profiles.values()).merged(zone_from_dict(data.get("zones", {})))
        accounts = tuple(
            (
                entry["provider"],
                UserAccount(
                    address=parse_address(entry["address"]),
                    allowlist=address_set(entry.get("allowlist", [])),
                    members=tuple(parse_address(m) for m in entry.get("members", [])),
                ),
            )
            for entry in data["accounts"]
        )
        setup = tuple(
            SetupStep(
                op=step["op"],
                account=parse_address(step["account"]),
                argument=step.get("destination") or step.get("by") or step.get("entry") or "",
            )
            for step in data.get("setup", [])
        )
        inject = data["inject"]
        injection = Injection(
            actor=inject.get("actor", "sender"),
            message=message_from_dict(inject["message"]),
            sign_as=tuple((s["domain"], s["selector"]) for s in inject.get("sign_as", [])),
        )
        expect = data["expect"]
        expectation = ExpectedOutcome(
            success_required=bool(expect["success_required"]),
            victim=parse_address(expect["victim"]),
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise InvalidSetup(f"malformed scenario: {exc!r}") from exc
    return Scenario(
        name=data.get("name", "unnamed"),
        description=data.get("description", ""),
        zone=zone,
        profiles=profiles,
        accounts=accounts,
        setup=setup,
        injection=injection,
        expectation=expectation,
        max_hops=int(data.get("max_hops", DEFAULT_MAX_HOPS)),
    )


def load_scenario(text: str, overrides: Optional[Mapping[str, Mapping[str, Any]]] = None) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidSetup(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidSetup("scenario must be a JSON object")
    try:
        return scenario_from_dict(data, overrides)
    except FwdsimError:
        raise
    except ValueError as exc:
        raise InvalidSetup(str(exc)) from exc
