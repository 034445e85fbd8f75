"""``fwdsim`` command line: run a scenario, run the attack library, audit SPF."""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from typing import Any, Optional, Sequence, TextIO

from .audit import FixtureResolver, LiveResolver, audit, read_domain_list
from .errors import FwdsimError, HopLimitExceeded
from .library import filter_names, library_dicts
from .profiles import builtin_profiles
from .scenario import DeliveryTrace, Judgement, Scenario, load_scenario, run_and_judge, scenario_from_dict

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
NETWORK_ENV = "FWDSIM_ALLOW_NETWORK"


def _load_overrides(path: Optional[str]) -> Optional[dict[str, Any]]:
    if not path:
        return None
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("profile overrides must be a JSON object keyed by provider name")
    return data


def _emit(text: str, out: Optional[str], stdout: TextIO) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        stdout.write(text)


def _trace_text(scenario: Scenario, trace: DeliveryTrace, judgement: Judgement) -> str:
    lines = [f"scenario {scenario.name}"]
    for event in trace.setup_events:
        detail = {k: v for k, v in event.items() if k not in ("type", "op", "account")}
        lines.append(f"  setup {event['op']} {event['account']} {json.dumps(detail, sort_keys=True)}")
    for hop in trace.hops:
        rec = hop.record
        auth = rec["auth"]
        action = rec["action"]
        outcome = action["kind"]
        if "verdict" in action:
            outcome += f" {action['verdict']} warning={str(action['warning']).lower()}"
        if action.get("to"):
            outcome += " -> " + ",".join(action["to"])
        lines.append(
            f"  hop {hop.index} {hop.provider} {hop.account}: spf={auth['spf']['verdict']} "
            f"dmarc={'pass' if auth['dmarc']['aligned_pass'] else 'fail'}"
            f"({auth['dmarc']['applicable_policy']}) arc={auth['arc'] or '-'} "
            f"rule={rec['rule']} {outcome}"
            + (f" via {rec['transform']}" if rec["transform"] else "")
        )
    summary = trace.summary(judgement, scenario.expectation)
    lines.append(
        f"victim {summary['victim']}: verdict={summary['verdict']} "
        f"warning={str(summary['warning']).lower()}"
    )
    lines.append(f"judgement {summary['judgement'].upper()}: {summary['reason']}")
    return "\n".join(lines) + "\n"


def cmd_run(args: argparse.Namespace, stdout: TextIO, stderr: TextIO) -> int:
    try:
        overrides = _load_overrides(args.profiles)
        with open(args.scenario, encoding="utf-8") as fh:
            scenario = load_scenario(fh.read(), overrides)
    except (OSError, ValueError, FwdsimError) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    try:
        trace, judgement = run_and_judge(scenario)
    except HopLimitExceeded as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_FAIL
    except FwdsimError as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    if args.format == "json":
        text = trace.to_jsonl(judgement, scenario.expectation)
    else:
        text = _trace_text(scenario, trace, judgement)
    _emit(text, args.out, stdout)
    return EXIT_OK if judgement.passed else EXIT_FAIL


def _run_preset(name: str, data: dict[str, Any], overrides: Optional[dict[str, Any]]) -> dict[str, Any]:
    scenario = scenario_from_dict(data, overrides)
    trace, judgement = run_and_judge(scenario)
    summary = trace.summary(judgement, scenario.expectation)
    return {
        "name": name,
        "success_required": scenario.expectation.success_required,
        "victim": summary["victim"],
        "verdict": summary["verdict"],
        "warning": summary["warning"],
        "hops": len(trace.hops),
        "judgement": summary["judgement"],
        "reason": judgement.reason,
    }


def run_attacks(pattern: Optional[str] = None, overrides: Optional[dict[str, Any]] = None) -> list[dict[str, Any]]:
    presets = library_dicts()
    names = filter_names(presets, pattern)
    with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool:
        rows = list(pool.map(lambda n: _run_preset(n, presets[n], overrides), names))
    return sorted(rows, key=lambda r: r["name"])


def cmd_attacks(args: argparse.Namespace, stdout: TextIO, stderr: TextIO) -> int:
    try:
        overrides = _load_overrides(args.profiles)
        rows = run_attacks(args.filter, overrides)
    except (OSError, ValueError, FwdsimError) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    if not rows:
        stderr.write(f"warning: no preset matches filter {args.filter!r}\n")
    passed = sum(r["judgement"] == "pass" for r in rows)
    if args.format == "json":
        doc = {"results": rows, "summary": {"total": len(rows), "passed": passed, "failed": len(rows) - passed}}
        text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    else:
        width = max((len(r["name"]) for r in rows), default=4)
        lines = [f"{'name':<{width}}  expect   verdict  warning  result"]
        for r in rows:
            expect = "attack" if r["success_required"] else "blocked"
            lines.append(
                f"{r['name']:<{width}}  {expect:<7}  {r['verdict']:<7}  "
                f"{str(r['warning']).lower():<7}  {r['judgement'].upper()}"
            )
        lines.append(f"{passed}/{len(rows)} expectations met")
        text = "\n".join(lines) + "\n"
    _emit(text, args.out, stdout)
    return EXIT_OK if passed == len(rows) else EXIT_FAIL


def default_provider_spf_domains() -> list[str]:
    return sorted({p.spf_domain for p in builtin_profiles().values() if p.spf_domain and not p.is_list})


def cmd_audit(args: argparse.Namespace, stdout: TextIO, stderr: TextIO) -> int:
    try:
        with open(args.domains, encoding="utf-8") as fh:
            domains = read_domain_list(fh.read())
    except (OSError, UnicodeDecodeError) as exc:
        stderr.write(f"error: cannot read domain list: {exc}\n")
        return EXIT_USAGE
    if args.fixtures:
        try:
            resolver = FixtureResolver.from_file(args.fixtures)
        except (OSError, ValueError) as exc:
            stderr.write(f"error: cannot read fixtures: {exc}\n")
            return EXIT_USAGE
    else:
        if not args.live_dns_i_understand or os.environ.get(NETWORK_ENV) != "1":
            stderr.write(
                f"error: live DNS needs --live-dns-i-understand and {NETWORK_ENV}=1; "
                "use --fixtures for recorded answers\n"
            )
            return EXIT_USAGE
        resolver = LiveResolver(args.resolver)
    providers = args.providers.split(",") if args.providers else default_provider_spf_domains()
    result = audit(domains, [p.strip() for p in providers if p.strip()], resolver)
    if args.format == "json":
        text = result.to_json()
    else:
        s = result.summary
        lines = []
        for r in result.reports:
            hits = ",".join(p for p, hit in r.incorporates.items() if hit) or "-"
            errs = ",".join(e["kind"] for e in r.errors) or "-"
            lines.append(
                f"{r.domain}: incorporates={hits} dmarc={r.dmarc_policy} lookups={r.lookup_count}"
                f" truncated={str(r.truncated).lower()} vulnerable={str(r.vulnerable).lower()} errors={errs}"
            )
        lines.append(
            f"{s['incorporating']}/{s['domains']} incorporate a provider record "
            f"(fraction {s['fraction_incorporating']}; direct {s['incorporating_direct']}); "
            f"{s['vulnerable']} vulnerable"
        )
        lines.append("dmarc: " + " ".join(f"{k}={v}" for k, v in s["dmarc_policy_histogram"].items()))
        text = "\n".join(lines) + "\n"
    _emit(text, args.out, stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fwdsim", description="Email forwarding and spoofing simulator.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("--out", help="write output to this file instead of stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run one scenario file")
    run.add_argument("scenario")
    run.add_argument("--profiles", help="JSON profile overrides keyed by provider name")
    run.set_defaults(handler=cmd_run)

    attacks = sub.add_parser("attacks", parents=[common], help="run the attack library")
    attacks.add_argument("--filter", help="only presets whose name contains this text")
    attacks.add_argument("--profiles", help="JSON profile overrides keyed by provider name")
    attacks.set_defaults(handler=cmd_attacks)

    aud = sub.add_parser("audit", parents=[common], help="audit domains for SPF incorporation")
    aud.add_argument("domains", help="newline-delimited domain list")
    aud.add_argument("--providers", help="comma-separated provider SPF domains")
    aud.add_argument("--fixtures", help="recorded DNS answers (JSON)")
    aud.add_argument("--resolver", help="nameserver address for live DNS")
    aud.add_argument("--live-dns-i-understand", action="store_true", help="allow real DNS queries")
    aud.set_defaults(handler=cmd_audit)
    return parser


def main(argv: Optional[Sequence[str]] = None, stdout: TextIO = None, stderr: TextIO = None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    return args.handler(args, stdout, stderr)


if __name__ == "__main__":
    sys.exit(main())
