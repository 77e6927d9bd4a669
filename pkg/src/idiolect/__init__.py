"""Authorship verification under LLM impersonation attacks.

Corpus preparation, POS-placeholder content masking, three non-neural
verification methods (character n-gram tracing, ranking-based impostors,
grammar-model likelihood ratios), logistic LLR calibration, prompt-based
adversaries with offline stubs, and robustness/diversity evaluation.
"""

from .av_lambdag import GrammarModel, LambdaScore, lambda_g, sequence_logprob, train_grammar_model
from .av_ngram import NgramSet, char_ngrams, ngram_trace_score, simpson_overlap
from .av_rbi import FeatureVector, RbiConfig, build_impostor_pool, rbi_score
from .calibration import Calibrator, Llr, ScoreSample, apply, decide, fit_calibrator
from .corpus import AuthorSplit, CorpusConfig, Document, clean_text, load_corpus, partition_author, tokenize
from .masking import MaskingRules, TaggedToken, mask_tokens, masked_view, pos_tag, posnoise_mask
from .adversary import (
    AttackRecord,
    EndpointConfig,
    PromptStrategy,
    SourceSelection,
    build_messages,
    chat,
    run_attack,
    select_source,
)
from .metrics import (
    compressed_size,
    confidence_drop,
    confidence_interval,
    entropy,
    relative_tnr_degradation,
    tnr,
    ttr,
)

__version__ = "0.1.0"
