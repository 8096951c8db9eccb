"""Batch sentence-embedding exporter for the ``.remb`` store format."""

from .encoders import HashedTrigramEncoder, SentenceTransformerEncoder, resolve_encoder
from .errors import (
    EncoderError,
    ExportError,
    InputFormatError,
    InputValidationError,
    UsageError,
)
from .export import (
    ExportJob,
    export_corpus,
    export_texts,
    rows_from_choices,
    rows_from_closed_set,
    rows_from_lines,
    rows_from_premises,
    rows_from_verbalizer,
)
from .writer import file_pair, read_header, write_store_files

__version__ = "0.1.0"
