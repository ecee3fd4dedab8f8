"""Exception hierarchy shared by all pipeline modules."""
from __future__ import annotations


class SqlPipeError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SqlPipeError):
    """Invalid or incomplete pipeline configuration."""


class DatasetParseError(SqlPipeError):
    """Source file is not valid JSON; carries the character offset."""

    def __init__(self, path: str, offset: int, detail: str):
        self.path = path
        self.offset = offset
        super().__init__(f"{path}: malformed JSON at offset {offset}: {detail}")


class DatasetSchemaError(SqlPipeError):
    """A record in the source file is missing a required key."""

    def __init__(self, path: str, index: int, missing_key: str):
        self.index = index
        self.missing_key = missing_key
        super().__init__(f"{path}: record {index} is missing required key {missing_key!r}")


class SerializationError(SqlPipeError):
    """An artifact field cannot be encoded as JSON."""

    def __init__(self, index: int, field: str):
        self.index = index
        self.field = field
        super().__init__(f"item {index}: field {field!r} is not JSON-serializable")


class CoverageError(SqlPipeError):
    """A prediction file does not cover every record of the split."""

    def __init__(self, missing_ids: list[str]):
        self.missing_ids = list(missing_ids)
        super().__init__(f"predictions missing {len(self.missing_ids)} record ids: {self.missing_ids}")


class CatalogError(SqlPipeError):
    """Database file could not be introspected."""


class SelectionError(SqlPipeError):
    """A schema selection names tables or columns that do not exist."""


class FilterError(SqlPipeError):
    """The relevance scorer failed; carries the scorer diagnostics."""


class KeywordExtractionError(SqlPipeError):
    """Keyword extraction produced no usable keywords."""


class RenderError(SqlPipeError):
    """A prompt template could not be rendered."""

    def __init__(self, template_id: str, slot: str):
        self.template_id = template_id
        self.slot = slot
        super().__init__(f"template {template_id!r}: missing binding for slot [{slot}]")


class GatewayError(SqlPipeError):
    """Transport failure talking to a model endpoint, after retries."""


class MissingTranscriptError(GatewayError):
    """Mock mode has no recorded response for a transcript key."""

    def __init__(self, key: str, prompt_head: str = ""):
        self.key = key
        detail = f" (prompt starts: {prompt_head!r})" if prompt_head else ""
        super().__init__(f"no transcript entry for key {key}{detail}")


class VerdictParseError(SqlPipeError):
    """A judge response could not be parsed as the expected verdict kind."""


class InputError(SqlPipeError):
    """An operation precondition was violated."""


class StageError(SqlPipeError):
    """A pipeline stage failed; the run manifest records the failure."""
