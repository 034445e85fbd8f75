import pytest
from hypothesis import given, settings

from fwdsim.errors import NotAddressedToForwarder
from fwdsim.forwarding import ForwarderIdentity, ForwardingMechanism, apply_forwarding, srs_rewrite
from fwdsim.message import parse_address

from conftest import make_message
from mechanism_contracts import contract_violations, forwarding_cases

FWD = ForwarderIdentity(parse_address("fwd@univ.edu"), "198.51.100.7")
DEST = parse_address("alice@gmail.com")


def test_pmf_only_changes_rcpt_to():
    out = apply_forwarding(make_message(), ForwardingMechanism.PMF, FWD, DEST)
    assert out.envelope.rcpt_to == DEST
    assert out.envelope.mail_from == parse_address("sp@hotcrp.com")
    assert out.headers.from_addr == parse_address("sp@hotcrp.com")


def test_mfef_copies_from_into_mail_from():
    msg = make_message(mail_from="bounce@other.org", from_="Boss <boss@state.gov>")
    out = apply_forwarding(msg, ForwardingMechanism.MFEF, FWD, DEST)
    assert out.envelope.mail_from.addr_spec == "boss@state.gov"
    assert out.envelope.mail_from.display_name is None


def test_rem_srs_shape():
    out = apply_forwarding(make_message(), ForwardingMechanism.REM, FWD, DEST)
    assert out.envelope.mail_from.addr_spec == "fwd=sp=hotcrp.com@univ.edu"


def test_rem_null_sender():
    assert srs_rewrite(None, FWD).addr_spec == "fwd=bounce@univ.edu"


def test_rem_mod_rewrites_from_and_keeps_display_name():
    msg = make_message(from_="PayPal <service@paypal.com>")
    out = apply_forwarding(msg, ForwardingMechanism.REM_MOD, FWD, DEST)
    assert out.headers.from_addr.addr_spec == "fwd@univ.edu"
    assert out.headers.from_addr.display_name == "PayPal"


def test_annotation_and_origin():
    out = apply_forwarding(make_message(), ForwardingMechanism.PMF, FWD, DEST)
    assert out.origin_ip == "198.51.100.7"
    assert out.headers.received == ("by univ.edu [198.51.100.7] via pmf for alice@gmail.com",)
    assert out.was_forwarded


def test_wrong_recipient():
    with pytest.raises(NotAddressedToForwarder):
        apply_forwarding(make_message(rcpt_to="other@univ.edu"), ForwardingMechanism.PMF, FWD, DEST)


def test_original_untouched():
    msg = make_message()
    apply_forwarding(msg, ForwardingMechanism.REM_MOD, FWD, DEST)
    assert msg == make_message()


@settings(max_examples=1000, derandomize=True, deadline=None)
@given(forwarding_cases())
def test_mechanism_contracts(case):
    msg, mechanism, fwd, destination = case
    out = apply_forwarding(msg, mechanism, fwd, destination)
    assert contract_violations(msg, mechanism, fwd, destination, out) == []
