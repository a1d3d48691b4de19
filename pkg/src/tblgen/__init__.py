"""Text-to-table generation with a sequence-to-sequence transformer."""
from .codec import decode_sequence, encode_document, repair
from .decoding import GenerateOptions, Generation, generate, generate_batch
from .metrics import score_documents, score_tables
from .model.config import ModelConfig
from .model.transformer import Seq2Seq, init_params
from .relation import relations_full
from .table import Document, HeaderMode, Table
from .vocab import Vocab, build_vocab

__all__ = [
    "Document", "GenerateOptions", "Generation", "HeaderMode", "ModelConfig", "Seq2Seq", "Table", "Vocab",
    "build_vocab", "decode_sequence", "encode_document", "generate", "generate_batch", "init_params",
    "relations_full", "repair", "score_documents", "score_tables",
]
__version__ = "0.1.0"
