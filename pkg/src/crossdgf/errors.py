"""Exception types shared across the package."""


class CrossDGFError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(CrossDGFError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class ValidationError(CrossDGFError):
    pass


class UnknownFunction(ValidationError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown function {name}")


class OwnerMismatch(ValidationError):
    pass


class UnknownKeyFunction(ValidationError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown key function {name}")


class BudgetZero(CrossDGFError):
    pass


class SeedTriggersTarget(CrossDGFError):
    def __init__(self, index, cves):
        self.index = index
        self.cves = list(cves)
        super().__init__(f"initial seed #{index} already triggers {', '.join(self.cves)}")


class EmptyTupleWarning(UserWarning):
    """CC is empty: no client function calls into the vulnerable library region."""
