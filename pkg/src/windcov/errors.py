"""Exception hierarchy. Each class carries the CLI exit code used for it."""


class WindcovError(Exception):
    exit_code = 1


class ConfigError(WindcovError, ValueError):
    exit_code = 2


class NonPositiveStretch(WindcovError, ValueError):
    exit_code = 3


class NonPositiveRange(WindcovError, ValueError):
    exit_code = 3


class NonPositiveRadius(WindcovError, ValueError):
    exit_code = 3


class DuplicateSites(WindcovError, ValueError):
    exit_code = 4


class MissingGridMetadata(WindcovError, ValueError):
    exit_code = 4


class InsufficientSites(WindcovError, ValueError):
    exit_code = 4


class FactorizationFailed(WindcovError, ArithmeticError):
    exit_code = 5
