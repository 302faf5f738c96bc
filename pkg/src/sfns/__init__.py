"""Learned sparse retrieval with inference-free query encoding.

Documents are expanded offline into weighted token vectors (by a small
trainable encoder or by the tokenizer alone) and served from an inverted
index; queries are tokenized and IDF-weighted with no model in the loop.
Includes the granular unigram tokenizer, weak-supervision mining from
behavior logs, trigram and fuzzy baselines, an evaluation harness with a
synthetic typo corpus, and a feedback-loop replay simulator.
"""

from ._binio import (
    BadMagicError,
    ChecksumError,
    StorageError,
    TruncatedError,
    VersionError,
    crc32c,
)
from .baselines import (
    FuzzyConfig,
    FuzzyRetriever,
    TrigramIndex,
    banded_levenshtein,
    build_trigram_index,
    fuzzy_retrieve,
    trigram_query_vector,
    trigram_retrieve,
)
from .encoder import (
    BatchItem,
    EncoderParams,
    TokenTriple,
    TrainBatch,
    TrainConfig,
    encode_doc,
    init_params,
    load_external_vectors,
    load_params,
    mean_nonzero_dims,
    prepare_dataset,
    save_params,
    train,
)
from .evaluation import (
    BenchmarkReport,
    SynthCorpus,
    SynthQuery,
    TypoSpec,
    hit_ids,
    load_qrels,
    ndcg_at_k,
    precision_at_k,
    recall_at_k,
    run_benchmark,
    synth_corpus,
    write_corpus_dir,
)
from .hci import (
    ChannelConfig,
    EpochReport,
    EpochState,
    HciEntry,
    ReplayReport,
    entry_table,
    hci_score,
    run_replay,
    write_back,
)
from .index import (
    BuildError,
    DocEntry,
    InvertedIndex,
    SearchHit,
    brute_force_search,
    build,
)
from .mining import (
    BehaviorLog,
    Component,
    HardNegativeResult,
    LogRecord,
    MinedPair,
    MiningError,
    SplitInfeasibleError,
    SplitResult,
    TrainTriple,
    connected_components,
    edit_threshold,
    levenshtein,
    mine_hard_negatives,
    mine_positive_pairs,
    pair_passes,
    split_by_components,
)
from .retrieval import (
    build_sparse_index,
    doc_vector,
    make_sparse_retriever,
    plain_doc_vector,
    self_match_score,
    sparse_query_vector,
    sparse_retrieve,
)
from .sparse import (
    QuantizedWeight,
    SparseVector,
    ValidationError,
    VocabStats,
    dequantize,
    dequantize_weights,
    dot_score,
    encode_query,
    idf,
    normalize_text,
    quantize,
    quantize_weights,
)
from .tokenizer import (
    UNK_ID,
    TokenizerModel,
    retrieval_tokens,
    train_unigram,
    trigrams,
)

__version__ = "0.1.0"

__all__ = [
    "BadMagicError",
    "BatchItem",
    "BehaviorLog",
    "BenchmarkReport",
    "BuildError",
    "ChannelConfig",
    "ChecksumError",
    "Component",
    "DocEntry",
    "EncoderParams",
    "EpochReport",
    "EpochState",
    "FuzzyConfig",
    "FuzzyRetriever",
    "HardNegativeResult",
    "HciEntry",
    "InvertedIndex",
    "LogRecord",
    "MinedPair",
    "MiningError",
    "QuantizedWeight",
    "ReplayReport",
    "SearchHit",
    "SparseVector",
    "SplitInfeasibleError",
    "SplitResult",
    "StorageError",
    "SynthCorpus",
    "SynthQuery",
    "TokenTriple",
    "TokenizerModel",
    "TrainBatch",
    "TrainConfig",
    "TrainTriple",
    "TrigramIndex",
    "TruncatedError",
    "TypoSpec",
    "UNK_ID",
    "ValidationError",
    "VersionError",
    "VocabStats",
    "banded_levenshtein",
    "brute_force_search",
    "build",
    "build_sparse_index",
    "build_trigram_index",
    "connected_components",
    "crc32c",
    "dequantize",
    "dequantize_weights",
    "doc_vector",
    "dot_score",
    "edit_threshold",
    "encode_doc",
    "encode_query",
    "entry_table",
    "fuzzy_retrieve",
    "hci_score",
    "hit_ids",
    "idf",
    "init_params",
    "levenshtein",
    "load_external_vectors",
    "load_params",
    "load_qrels",
    "make_sparse_retriever",
    "mean_nonzero_dims",
    "mine_hard_negatives",
    "mine_positive_pairs",
    "ndcg_at_k",
    "normalize_text",
    "pair_passes",
    "plain_doc_vector",
    "precision_at_k",
    "prepare_dataset",
    "quantize",
    "quantize_weights",
    "recall_at_k",
    "retrieval_tokens",
    "run_benchmark",
    "run_replay",
    "save_params",
    "self_match_score",
    "sparse_query_vector",
    "sparse_retrieve",
    "split_by_components",
    "synth_corpus",
    "train",
    "train_unigram",
    "trigram_query_vector",
    "trigram_retrieve",
    "trigrams",
    "write_back",
    "write_corpus_dir",
]
