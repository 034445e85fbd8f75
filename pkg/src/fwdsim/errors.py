"""Exception types raised across the simulator."""


class FwdsimError(Exception):
    """Base class for every error this package raises on purpose."""


class MalformedAddress(FwdsimError, ValueError):
    pass


class UnknownSuffix(FwdsimError, ValueError):
    pass


class MissingHeader(FwdsimError, KeyError):
    pass


class MalformedRecord(FwdsimError, ValueError):
    pass


class LookupLimitExceeded(FwdsimError):
    """SPF evaluation needed more DNS lookups than allowed (PermError)."""

    def __init__(self, domain: str, limit: int):
        super().__init__(f"SPF lookup limit of {limit} exceeded while evaluating {domain}")
        self.domain = domain
        self.limit = limit


class UnknownKey(FwdsimError, LookupError):
    pass


class NotAddressedToForwarder(FwdsimError):
    pass


class UnknownAccount(FwdsimError, LookupError):
    pass


class ForwardingNotConfigured(FwdsimError):
    pass


class InvalidSetup(FwdsimError):
    pass


class HopLimitExceeded(FwdsimError):
    pass


class DnsError(FwdsimError):
    """Base for resolver failures surfaced by the audit tool."""

    kind = "dns_error"

    def __init__(self, name: str, detail: str = ""):
        super().__init__(f"{self.kind} for {name}" + (f": {detail}" if detail else ""))
        self.name = name


class NxDomain(DnsError):
    kind = "nxdomain"


class ServFail(DnsError):
    kind = "servfail"


class Timeout(DnsError):
    kind = "timeout"
