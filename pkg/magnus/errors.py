from contextlib import contextmanager


class MagnusError(Exception):
    """Base class for every error raised by the library."""


class InputError(MagnusError, ValueError):
    """Invalid user input: indices out of range, bad generator parameters."""


class ParseError(InputError):
    def __init__(self, message: str, line_number: int, path: str = '') -> None:
        self.line_number = line_number
        self.path = path
        where = f'{path}:{line_number}' if path else f'line {line_number}'
        super().__init__(f'{where}: {message}')


class DimensionError(InputError):
    """Operand shapes do not conform."""


class ContractViolation(MagnusError, AssertionError):
    """An internal precondition was broken (a planner or driver bug)."""


class OverBudgetError(MagnusError, MemoryError):
    def __init__(self, row: int, needed_bytes: int, budget_bytes: int) -> None:
        self.row = row
        self.needed_bytes = needed_bytes
        self.budget_bytes = budget_bytes
        super().__init__(
            f'coarse row {row} needs {needed_bytes} bytes of intermediate product '
            f'but the memory budget is {budget_bytes} bytes'
        )


class ResourceError(MagnusError, MemoryError):
    """A benchmark buffer could not be allocated."""


class ConfigError(MagnusError, ValueError):
    """Invalid run configuration."""


@contextmanager
def kernel_contract():
    """Re-raise assertion failures from compiled kernels as ContractViolation."""
    try:
        yield
    except ContractViolation:
        raise
    except AssertionError as e:
        raise ContractViolation(str(e)) from None
