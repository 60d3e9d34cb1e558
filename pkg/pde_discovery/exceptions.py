class PdeDiscoveryError(Exception):
    """Base error; carries the process exit code used by the command line."""
    exit_code = 1

    def __init__(self, message, exit_code=None, payload=None):
        Exception.__init__(self, message)
        self.message = message
        if exit_code is not None:
            self.exit_code = exit_code
        self.payload = payload

    def to_dict(self):
        rv = dict(self.payload or ())
        rv['message'] = self.message
        rv['exit_code'] = self.exit_code
        return rv


class InternalError(PdeDiscoveryError):
    """Inconsistent shapes or state inside the library."""
    exit_code = 1


class ConfigurationError(PdeDiscoveryError):
    exit_code = 2


class DomainError(PdeDiscoveryError):
    exit_code = 2


class ValidationError(PdeDiscoveryError):
    """RunSpec or dataset validation failure, optionally located at a file line."""
    exit_code = 2

    def __init__(self, message, line=None, path=None, payload=None):
        if line is not None:
            message = '%s (line %d)' % (message, line)
        if path is not None:
            message = '%s: %s' % (path, message)
        PdeDiscoveryError.__init__(self, message, payload=payload)
        self.line = line
        self.path = path


class NumericError(PdeDiscoveryError):
    exit_code = 3


class ConvergenceError(NumericError):
    def __init__(self, message, gap=None, payload=None):
        payload = dict(payload or ())
        payload['gap'] = gap
        NumericError.__init__(self, message, payload=payload)
        self.gap = gap


class TrainingError(NumericError):
    def __init__(self, message, history=None, payload=None):
        NumericError.__init__(self, message, payload=payload)
        self.history = history or []


class PartialFailure(PdeDiscoveryError):
    exit_code = 4
