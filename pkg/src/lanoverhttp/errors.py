"""Exception hierarchy shared across the package."""


class CodecError(ValueError):
    """Bytes could not be parsed or a value could not be serialized."""


class TruncatedError(CodecError):
    pass


class SizeError(CodecError):
    pass


class MalformedError(CodecError):
    pass


class TunnelError(Exception):
    """Base class for tunnel protocol violations."""


class TupleMismatch(TunnelError):
    """A tunnel packet did not match the connection's 5-tuple."""


class FragmentError(TunnelError):
    """Bad window-flag value or out-of-order fragment."""


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
