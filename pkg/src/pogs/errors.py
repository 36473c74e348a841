"""Exception types raised by pogs."""


class PogsError(Exception):
    pass


class InvalidModel(PogsError, ValueError):
    """A game model failed validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ModelFormatError(PogsError, ValueError):
    """A model/history/policy document is missing a field or malformed."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class InadmissibleAction(PogsError, ValueError):
    pass


class ImpossibleObservation(PogsError):
    """Bayes update with a zero-probability observation."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class NodeBudgetExceeded(PogsError):
    def __init__(self, message, nodes=None, achievable=None):
        self.nodes = nodes
        self.achievable = achievable
        super().__init__(message)


class ExponentOverflow(PogsError, OverflowError):
    def __init__(self, magnitude):
        self.magnitude = magnitude
        super().__init__(f"exponent overflow: exponent {magnitude:.6g} exceeds 700")


class PolicyUndefined(PogsError, KeyError):
    pass
