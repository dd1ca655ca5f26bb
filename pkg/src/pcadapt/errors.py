"""Exception types shared across the package."""


class PCAdaptError(Exception):
    """Base class for all errors raised by pcadapt."""


class ShapeMismatchError(PCAdaptError, ValueError):
    pass


class NonFiniteError(PCAdaptError, ArithmeticError):
    pass


class ConfigError(PCAdaptError, ValueError):
    pass


class DataFormatError(PCAdaptError):
    """A dataset file failed validation.

    ``code`` is one of ``missing_file``, ``bad_magic``, ``bad_header``,
    ``truncated_payload``, ``wrong_size``, ``label_range``, ``count_mismatch``.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code


class CheckpointError(PCAdaptError):
    """A checkpoint could not be read.

    ``code`` is one of ``bad_magic``, ``version_mismatch``, ``checksum``,
    ``truncated``, ``shape_mismatch``, ``arch_mismatch``.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code
