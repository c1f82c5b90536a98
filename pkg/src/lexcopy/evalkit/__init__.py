"""Terminology matching, CSR, BLEU, significance testing and benchmark runs."""

from ..terms import LexicalConstraint
from .benchmark import (TestExample, format_report_table, load_benchmark, load_terminology, run_benchmark,
                        save_benchmark, save_terminology)
from .bleu import bleu_stats, corpus_bleu
from .bootstrap import paired_bootstrap
from .matching import constraint_satisfied, csr, csr_verdicts, match_terminology
