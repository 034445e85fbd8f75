import json

import jsonschema
import pytest
from importlib import resources

from fwdsim.audit import (
    FixtureResolver,
    audit,
    fetch_txt,
    flatten_spf,
    incorporates,
    read_domain_list,
)
from fwdsim.errors import NxDomain, Timeout

OUTLOOK = "spf.protection.outlook.com"
GOOGLE = "_spf.google.com"


@pytest.fixture
def dns(fixtures_dir):
    return json.loads((fixtures_dir / "dns.json").read_text())


@pytest.fixture
def resolver(dns):
    return FixtureResolver(dns)


def report_for(domain, resolver, providers=(OUTLOOK,)):
    return audit([domain], list(providers), resolver).reports[0]


def test_fetch_txt_fixture(resolver):
    assert fetch_txt("state.gov", resolver) == ["v=spf1 include:spf.protection.outlook.com -all"]


def test_fetch_txt_joins_segments(resolver):
    assert fetch_txt("split.example", resolver) == [
        "v=spf1 ip4:203.0.113.0/24 include:spf.protection.outlook.com -all"
    ]


def test_fetch_txt_nxdomain(resolver):
    with pytest.raises(NxDomain):
        fetch_txt("gone.example", resolver)


def test_fetch_txt_retries_transient_timeout(resolver):
    sleeps = []
    assert fetch_txt("flaky.example", resolver, sleep=sleeps.append) == ["v=spf1 include:_spf.google.com -all"]
    assert sleeps == [0.05]


def test_fetch_txt_gives_up(resolver):
    sleeps = []
    with pytest.raises(Timeout):
        fetch_txt("slow.example", resolver, retries=2, sleep=sleeps.append)
    assert sleeps == [0.05, 0.1]
    assert resolver.calls.count("slow.example") == 3


def test_flatten_two_levels(resolver):
    flat = flatten_spf("nested.gov", resolver)
    assert flat.tree.depth() == 3
    assert flat.networks == ["192.0.2.0/24", "40.92.0.0/15", "40.107.0.0/16"]
    assert flat.lookup_count == 2 and not flat.truncated


def test_flatten_simple_chain(dns):
    r = FixtureResolver({"a.com": ["v=spf1 include:b.com -all"], "b.com": ["v=spf1 ip4:1.2.3.0/24 -all"]})
    flat = flatten_spf("a.com", r)
    assert flat.tree.depth() == 2
    assert flat.networks == ["1.2.3.0/24"]


def test_flatten_cycle_is_truncated(resolver):
    flat = flatten_spf("loop.example", resolver)
    assert flat.truncated
    assert flat.tree.children[0].error == "cycle"


def test_flatten_lookup_cap(resolver):
    flat = flatten_spf("chain0.example", resolver)
    assert flat.truncated
    assert flat.lookup_count == 10
    assert flat.tree.depth() == 11


def test_flatten_no_spf(resolver):
    flat = flatten_spf("nospf.example", resolver)
    assert flat.tree is None and flat.lookup_count == 0


def test_redirect_followed(resolver):
    assert report_for("redirected.com", resolver).incorporates[OUTLOOK]


def test_multiple_spf_records_flagged(resolver):
    assert report_for("multi.example", resolver).errors[0]["kind"] == "multiple_spf_records"


def test_incorporates_direct_and_transitive(resolver):
    direct = report_for("state.gov", resolver)
    nested = report_for("nested.gov", resolver)
    assert incorporates(direct, OUTLOOK) and direct.incorporates_direct[OUTLOOK]
    assert incorporates(nested, OUTLOOK) and not nested.incorporates_direct[OUTLOOK]
    assert not incorporates(report_for("unrelated.org", resolver), OUTLOOK)


def test_incorporation_past_the_cap_is_not_seen(resolver):
    assert not report_for("chain0.example", resolver).incorporates[OUTLOOK]


def test_dmarc_readout(resolver):
    assert report_for("state.gov", resolver).dmarc_policy == "reject"
    assert report_for("nested.gov", resolver).dmarc_policy == "quarantine"
    assert report_for("unrelated.org", resolver).dmarc_policy == "absent"
    assert report_for("mail.univ.edu", resolver).dmarc_policy == "none"


@pytest.mark.parametrize("domain", ["state.gov", "nested.gov", "chain0.example", "loop.example", "gmail-user.com", "mail.univ.edu"])
def test_lookup_count_matches_resolver_calls(dns, domain):
    r = FixtureResolver(dns)
    report = audit([domain], [OUTLOOK], r).reports[0]
    assert report.resolver_calls == len(r.calls)
    spf_calls = [c for c in r.calls if not c.startswith("_dmarc.")]
    assert report.lookup_count == len(spf_calls) - 1


def test_errors_are_isolated(resolver):
    result = audit(["gone.example", "broken.example", "slow.example", "state.gov", "not a domain"], [OUTLOOK], resolver)
    kinds = [[e["kind"] for e in r.errors] for r in result.reports]
    assert kinds[0] == ["nxdomain"]
    assert kinds[1][0] == "servfail"
    assert kinds[2][0] == "timeout"
    assert kinds[3] == []
    assert kinds[4] == ["invalid_domain"]
    assert result.reports[3].incorporates[OUTLOOK]


def test_three_domain_fraction(resolver):
    result = audit(["state.gov", "unrelated.org", "nospf.example"], [OUTLOOK], resolver)
    assert result.summary["incorporating"] == 1
    assert result.summary["fraction_incorporating"] == pytest.approx(1 / 3, abs=1e-6)
    assert result.summary["dmarc_policy_histogram"] == {"none": 0, "quarantine": 0, "reject": 1, "absent": 2}


def test_empty_audit(resolver):
    result = audit([], [OUTLOOK], resolver)
    assert result.reports == []
    assert result.summary["domains"] == 0 and result.summary["fraction_incorporating"] == 0.0


def test_vulnerability_needs_open_forwarding(resolver):
    result = audit(["state.gov", "gmail-user.com"], [OUTLOOK, GOOGLE], resolver)
    outlook_hit, gmail_hit = result.reports
    assert outlook_hit.vulnerable
    assert gmail_hit.incorporates[GOOGLE] and not gmail_hit.vulnerable
    assert result.summary["per_provider"][GOOGLE] == {"transitive": 1, "direct": 1}


def test_report_order_follows_input(dns):
    domains = [f"chain{i}.example" for i in range(12)] + ["state.gov", "nested.gov"]
    result = audit(domains, [OUTLOOK], FixtureResolver(dns), concurrency=4)
    assert [r.domain for r in result.reports] == domains


def test_reports_are_byte_identical(dns):
    domains = ["state.gov", "nested.gov", "chain0.example", "loop.example", "gone.example"]
    first = audit(domains, [OUTLOOK], FixtureResolver(dns)).to_json()
    second = audit(domains, [OUTLOOK], FixtureResolver(dns), concurrency=1).to_json()
    assert first == second


def test_monotone_incorporation(dns):
    before = report_for("unrelated.org", FixtureResolver(dns))
    grown = dict(dns, **{"unrelated.org": ["v=spf1 ip4:198.51.100.0/24 include:nested.gov -all"]})
    after = report_for("unrelated.org", FixtureResolver(grown))
    assert not before.incorporates[OUTLOOK] and after.incorporates[OUTLOOK]


def test_audit_json_schema(resolver):
    doc = json.loads(audit(["state.gov", "loop.example", "gone.example"], [OUTLOOK], resolver).to_json())
    audit_schema = json.loads(resources.files("fwdsim").joinpath("schemas/audit.schema.json").read_text())
    jsonschema.Draft7Validator(audit_schema).validate(doc)


def test_domain_list_parsing():
    assert read_domain_list("# c\nstate.gov\n\n  a.com  # note\n") == ["state.gov", "a.com"]
