"""Error types shared across the package.

Every input problem the package detects is raised as a DomainError with a
human-readable message. The command line maps DomainError to exit code 1;
assertion-style check failures requested on the command line map to exit
code 2 and do not use exceptions.
"""


class DomainError(ValueError):
    """Invalid input or an operation outside its mathematical domain."""
