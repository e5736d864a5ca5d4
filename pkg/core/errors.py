"""
Exception hierarchy for LogiGuide.

Every error raised by the library carries a short stable ``code`` so the
command-line front end can report it on a single machine-parsable line.
"""


class LogiGuideError(Exception):
    """Base class for all LogiGuide errors."""

    code = 'logiguide'

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def one_line(self):
        """Render as ``error code=<code> key=value ... message="..."``."""
        return error_line(self.code, self.message, **self.details)


class FormulaSyntaxError(LogiGuideError):
    code = 'syntax'

    def __init__(self, message, offset):
        super().__init__(message, offset=offset)
        self.offset = offset


class UnknownAtomError(LogiGuideError):
    code = 'unknown_atom'


class UnassignedAtomError(LogiGuideError):
    code = 'unassigned_atom'


class CapExceededError(LogiGuideError):
    code = 'cap_exceeded'


class ModelError(LogiGuideError):
    code = 'model'


class UnsatisfiableFormulaError(LogiGuideError):
    code = 'unsatisfiable'


class CircuitError(LogiGuideError):
    code = 'circuit'


class SingularityError(LogiGuideError):
    code = 'singularity'


class InconsistentInputsError(LogiGuideError):
    code = 'inconsistent_inputs'


class TransitionError(LogiGuideError):
    code = 'transition'


class DivergenceError(LogiGuideError):
    code = 'divergence'

    def __init__(self, message, step):
        super().__init__(message, step=step)
        self.step = step


class EstimatorError(LogiGuideError):
    code = 'estimator'


class VerificationError(LogiGuideError):
    code = 'verification'


def error_line(code, message, **details):
    """Single-line error record for errors raised outside the library."""
    parts = [f"error code={code}"]
    for key, value in details.items():
        parts.append(f"{key}={value}")
    text = str(message).replace('"', "'").replace('\n', ' ')
    parts.append(f'message="{text}"')
    return ' '.join(parts)
