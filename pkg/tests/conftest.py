import pathlib

import pytest

from fwdsim.message import EmailMessage, Envelope, MessageHeaders, parse_address

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


def make_message(
    mail_from="sp@hotcrp.com",
    rcpt_to="fwd@univ.edu",
    from_="sp@hotcrp.com",
    to="fwd@univ.edu",
    subject="Paper review",
    body="See the reviews.\n",
    origin_ip="192.0.2.10",
):
    return EmailMessage(
        envelope=Envelope(
            rcpt_to=parse_address(rcpt_to),
            mail_from=parse_address(mail_from) if mail_from else None,
        ),
        headers=MessageHeaders(from_addr=parse_address(from_), to_addr=parse_address(to), subject=subject),
        body=body,
        origin_ip=origin_ip,
    )


@pytest.fixture
def fixtures_dir():
    return FIXTURES


_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, description = marker.args
    ok = _CRITERIA.get(number, (description, True))[1]
    if report.failed or (report.when == "call" and not report.passed):
        ok = False
    _CRITERIA[number] = (description, ok)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        description, ok = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {description}")
