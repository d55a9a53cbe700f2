"""Cascade parser for decompositional semantic graphs, built on a small numpy autodiff engine."""

from .augmentation import RuleConfig, TrigramLM, domain_score, extract_relations, filter_invalid, pseudo_label
from .evaluation import (MatchResult, attribute_metrics, corpus_s_score, evaluate_model, s_score,
                         s_score_bruteforce, syntax_metrics)
from .graph import (AnnotatedSentence, AttributeSet, SemanticGraph, SemEdge, SemNode, load_graphs,
                    parse_conllu, save_graphs)
from .model import ModelConfig, ParserModel, Vocabularies, parse_sentence
from .training import LossWeights, TrainConfig, attribute_value_loss, pretrain_finetune, total_loss, train

__version__ = "0.1.0"
