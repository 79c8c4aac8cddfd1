"""SMTP dialect fingerprinting: tokenize conversations, match them against a
knowledge base of client dialects, check header consistency, and roll up
botnet fingerprints."""

from .classifier import (
    CorpusReport,
    Verdict,
    VerdictCategory,
    aggregate,
    analyze_conversation,
    classify,
    fingerprint,
)
from .dialect import (
    Category,
    Dialect,
    Exact,
    KbEntry,
    KnowledgeBase,
    NovelStates,
    SourceKind,
    UnknownSequence,
    hash_dialect,
    kb_add,
    kb_load,
    kb_save,
    kb_stats,
    match,
)
from .imf import Alert, AlertKind, check_consistency, parse_imf
from .tokenizer import Mode, classify_word, tokenize_client_line, tokenize_conversation, tokenize_server_reply
from .transcript import Conversation, Direction, Segment, load_jsonl, load_text, split_lines

__version__ = "0.1.0"

__all__ = [
    "Alert",
    "AlertKind",
    "Category",
    "Conversation",
    "CorpusReport",
    "Dialect",
    "Direction",
    "Exact",
    "KbEntry",
    "KnowledgeBase",
    "Mode",
    "NovelStates",
    "Segment",
    "SourceKind",
    "UnknownSequence",
    "Verdict",
    "VerdictCategory",
    "aggregate",
    "analyze_conversation",
    "check_consistency",
    "classify",
    "classify_word",
    "fingerprint",
    "hash_dialect",
    "kb_add",
    "kb_load",
    "kb_save",
    "kb_stats",
    "load_jsonl",
    "load_text",
    "match",
    "parse_imf",
    "split_lines",
    "tokenize_client_line",
    "tokenize_conversation",
    "tokenize_server_reply",
    "__version__",
]
