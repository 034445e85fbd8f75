"""Field-level contracts of the four forwarding mechanisms, shared by tests."""

from hypothesis import strategies as st

from fwdsim.forwarding import ForwarderIdentity, ForwardingMechanism, srs_rewrite
from fwdsim.message import EmailAddress, EmailMessage, Envelope, MessageHeaders

_LOWER = "abcdefghijklmnopqrstuvwxyz"
_label = st.builds(lambda h, t: h + t, st.sampled_from(_LOWER), st.text(_LOWER + "0123456789", max_size=6))
domains = st.builds(lambda a, b: f"{a}.{b}", _label, st.sampled_from(["com", "org", "edu", "net", "co.uk"]))
locals_ = st.builds(
    lambda h, t: h + t, st.sampled_from(_LOWER + "ABC019"), st.text(_LOWER + "ABCXYZ0123456789.+-", max_size=10)
)
names = st.one_of(st.none(), st.sampled_from(["Alice", "Bank CEO", "me"]))
addresses = st.builds(EmailAddress, local=locals_, domain=domains, display_name=names)
ips = st.builds(lambda a, b, c: f"{a}.{b}.{c}.7", st.integers(1, 223), st.integers(0, 255), st.integers(0, 255))


@st.composite
def forwarding_cases(draw):
    fwd_account = draw(addresses)
    msg = EmailMessage(
        envelope=Envelope(rcpt_to=fwd_account, mail_from=draw(st.one_of(st.none(), addresses))),
        headers=MessageHeaders(
            from_addr=draw(addresses),
            to_addr=draw(addresses),
            subject=draw(st.text(st.characters(min_codepoint=32, max_codepoint=126), max_size=20)),
            received=tuple(draw(st.lists(st.just("by earlier.example"), max_size=2))),
        ),
        body=draw(st.text(st.characters(min_codepoint=32, max_codepoint=126), max_size=40)),
        origin_ip=draw(ips),
    )
    fwd = ForwarderIdentity(account=fwd_account, sending_ip=draw(ips))
    return msg, draw(st.sampled_from(list(ForwardingMechanism))), fwd, draw(addresses)


def contract_violations(msg, mechanism, fwd, destination, out):
    """Empty list when ``out`` honours the rewrite contract of ``mechanism``."""
    problems = []

    def expect(cond, what):
        if not cond:
            problems.append(f"{mechanism.value}: {what}")

    # common to every mechanism
    expect(out.envelope.rcpt_to == destination, "rcpt_to becomes the destination")
    expect(out.origin_ip == fwd.sending_ip, "origin_ip becomes the forwarder")
    expect(out.headers.to_addr == msg.headers.to_addr, "TO preserved")
    expect(out.headers.subject == msg.headers.subject, "subject preserved")
    expect(out.body == msg.body, "body preserved")
    expect(out.headers.dkim_signatures == msg.headers.dkim_signatures, "DKIM signatures preserved")
    expect(out.headers.arc_sets == msg.headers.arc_sets, "ARC sets preserved")
    expect(out.headers.received[:-1] == msg.headers.received, "earlier hop annotations preserved")
    expect(len(out.headers.received) == len(msg.headers.received) + 1, "one hop annotation appended")

    if mechanism is ForwardingMechanism.PMF:
        expect(out.envelope.mail_from == msg.envelope.mail_from, "MAIL FROM preserved")
        expect(out.headers.from_addr == msg.headers.from_addr, "FROM preserved")
    elif mechanism is ForwardingMechanism.MFEF:
        f = msg.headers.from_addr
        expect(out.envelope.mail_from == EmailAddress(f.local, f.domain), "MAIL FROM equals FROM")
        expect(out.headers.from_addr == msg.headers.from_addr, "FROM preserved")
    else:
        expect(out.envelope.mail_from == srs_rewrite(msg.envelope.mail_from, fwd), "MAIL FROM rewritten")
        expect(out.envelope.mail_from.domain == fwd.account.domain, "MAIL FROM in forwarder domain")
        if mechanism is ForwardingMechanism.REM:
            expect(out.headers.from_addr == msg.headers.from_addr, "FROM preserved")
        else:
            expect(out.headers.from_addr.same_mailbox(fwd.account), "FROM becomes the forwarder")
    return problems
