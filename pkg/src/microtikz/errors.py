"""Exception taxonomy. Exit codes: 1 contract/usage, 2 dependency, 3 numerical."""


class MicrotikzError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ContractError(MicrotikzError):
    """A documented precondition was violated by the caller."""

    exit_code = 1


class DimensionError(ContractError):
    """Tensor shapes incompatible with the requested operation."""


class DegenerateInputError(ContractError):
    """Input is in the operation's degenerate set (e.g. zero vector for cosine)."""


class DslSyntaxError(MicrotikzError):
    """Program failed to parse; carries the offending token index."""

    exit_code = 1

    def __init__(self, message, token_index):
        super().__init__(f"{message} (at token {token_index})")
        self.token_index = token_index


class GenerationError(MicrotikzError):
    """Corpus generation could not satisfy the requested constraints."""

    exit_code = 1


class DependencyError(MicrotikzError):
    """A required prior artifact (checkpoint, pool file) is missing."""

    exit_code = 2


class TrainingDivergedError(MicrotikzError):
    """Non-finite loss or gradients encountered during training."""

    exit_code = 3
