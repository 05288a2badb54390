"""Exception hierarchy shared by all ptforge modules.

Two broad families matter to callers: ``DataError`` covers anything wrong
with inputs (parse failures, unknown symbols, contract violations, machines
that turn out empty), ``NumericError`` covers failures of the numerics
themselves (diverged training, non-finite values).  The CLI maps them to
exit codes 3 and 4 respectively.
"""


class PtforgeError(Exception):
    """Base class for all errors raised by this package."""

    def __init__(self, message, **data):
        super().__init__(message)
        self.message = message
        self.data = data

    def payload(self):
        """Machine-readable form used by the service layer and the CLI."""
        return {"type": type(self).__name__, "message": self.message, "data": self.data}


class DataError(PtforgeError):
    """Invalid or inconsistent input data."""


class ParseError(DataError):
    """A text artifact could not be parsed; carries a line number when known."""

    def __init__(self, message, line=None, **data):
        if line is not None:
            data["line"] = line
        super().__init__(message, **data)
        self.line = line


class ContractError(DataError):
    """A documented precondition was violated by the caller."""


class SymbolTableMismatch(ContractError):
    """Two machines were combined whose shared tape uses different alphabets."""


class NoPathError(DataError):
    """A machine has no accepting path to extract."""


class EmptyLatticeError(DataError):
    """A constraint or decode step removed every path; usually an inventory
    or channel mismatch.  ``data`` carries diagnostics about what was lost."""


class NumericError(PtforgeError):
    """Numerical failure (divergence, non-finite intermediate values)."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""
