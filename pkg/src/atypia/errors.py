"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad user input: malformed manifests, inconsistent configs, contract violations.

    The CLI maps this to exit code 1; anything else that escapes is a
    runtime failure (exit code 2).
    """
