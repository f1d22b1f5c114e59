"""Exception hierarchy shared by every pipeline stage."""


class ContextualError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(ContextualError):
    """One or more lines of an input file could not be parsed.

    All bad lines are collected before raising; ``problems`` holds
    ``(line_number, reason)`` pairs with 1-based line numbers.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        self.line, self.reason = self.problems[0]
        detail = "; ".join(f"line {ln}: {why}" for ln, why in self.problems)
        super().__init__(detail)


class DuplicateNoteId(ContextualError):
    pass


class UnknownTag(ContextualError):
    pass


class FormatError(ContextualError):
    pass


class InvariantViolation(ContextualError):
    pass


class EmptySequence(ContextualError):
    pass


class ConfigError(ContextualError):
    """Invalid configuration value (retention, alpha, layer count, ...)."""


class ShapeMismatch(ContextualError):
    pass


class LengthMismatch(ContextualError):
    pass


class LayerOutOfRange(ContextualError):
    pass


class UnknownEntityType(ContextualError):
    pass


class ReferentialIntegrityError(ContextualError):
    pass


class EmptyInput(ContextualError):
    pass


class EmptyReferences(ContextualError):
    pass


class EmptyRecords(ContextualError):
    pass


class IdMismatch(ContextualError):
    def __init__(self, missing_predictions, missing_references):
        self.missing_predictions = sorted(missing_predictions)
        self.missing_references = sorted(missing_references)
        parts = []
        if self.missing_predictions:
            parts.append("no prediction for: " + ", ".join(self.missing_predictions))
        if self.missing_references:
            parts.append("no reference for: " + ", ".join(self.missing_references))
        super().__init__("; ".join(parts))


# -- backend errors ---------------------------------------------------------

class BackendError(ContextualError):
    pass


class BackendUnreachable(BackendError):
    pass


class HttpStatus(BackendError):
    def __init__(self, code, body=""):
        self.code = code
        self.body = body[:200]
        super().__init__(f"HTTP {code}: {self.body}")


class RateLimited(HttpStatus):
    def __init__(self, body=""):
        super().__init__(429, body)


class BackendTimeout(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


class ScriptExhausted(BackendError):
    pass


class UnparseableJudgeOutput(BackendError):
    def __init__(self, raw):
        self.raw = raw
        super().__init__(f"could not read three 1-5 scores from judge output: {raw[:120]!r}")
