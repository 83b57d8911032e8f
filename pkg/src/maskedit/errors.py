"""Error types shared across the pipeline, CLI, and service."""


class MaskEditError(Exception):
    """Base class for all library errors."""


class InvalidInputError(MaskEditError):
    """Caller supplied inputs that violate a documented precondition."""


class BackendError(MaskEditError):
    """A backend adapter failed while loading or during a denoising run."""


class EncoderError(BackendError):
    """Text encoding failed; carries the index of the offending prompt."""

    def __init__(self, message: str, prompt_index: int | None = None):
        super().__init__(message)
        self.prompt_index = prompt_index
