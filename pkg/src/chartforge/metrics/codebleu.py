"""Composite code-similarity score.

Four components, mixed by a weight vector on the simplex:

* ``ngram`` — smoothed sentence BLEU over lexical tokens up to
  ``max_ngram`` (add-one smoothing on counts for n >= 2, brevity penalty).
* ``weighted_ngram`` — the same machinery with every n-gram containing a
  language keyword counted at ``keyword_weight``.
* ``syntax`` — fraction of the reference's syntax subtrees (full subtree
  shape, identifier and literal values ignored) found in the candidate,
  with multiset clipping.
* ``dataflow`` — fraction of the reference's def-use pairs found in the
  candidate.  A def-use pair is (defined name, sorted names read by the
  defining expression), collected per assignment-like statement on simple
  names only; a reference with no pairs scores 1.0.

When either side fails to parse, syntax and dataflow fall back to the
plain n-gram component so the metric stays total over generated code.
"""

from __future__ import annotations

import ast
import math
from collections import Counter
from dataclasses import dataclass

from .lexing import PYTHON_KEYWORDS, lex_source


class EmptySourceError(ValueError):
    pass


@dataclass(frozen=True)
class CodeBleuParams:
    weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    max_ngram: int = 4
    keyword_weight: float = 5.0

    def __post_init__(self) -> None:
        if len(self.weights) != 4 or any(w < 0 for w in self.weights):
            raise ValueError("weights must be four non-negative values")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(self.weights)}")
        if self.max_ngram < 1:
            raise ValueError("max_ngram must be >= 1")
        if self.keyword_weight <= 0:
            raise ValueError("keyword_weight must be positive")


@dataclass(frozen=True)
class CodeBleuResult:
    score: float
    ngram: float
    weighted_ngram: float
    syntax: float
    dataflow: float

    @property
    def components(self) -> tuple[float, float, float, float]:
        return (self.ngram, self.weighted_ngram, self.syntax, self.dataflow)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _bleu(
    cand: list[str], ref: list[str], max_ngram: int, keyword_weight: float | None
) -> float:
    """Sentence BLEU with add-one smoothing for n >= 2.

    With ``keyword_weight`` set, every n-gram containing a keyword counts
    at that weight in both the clipped and total sums.
    """
    log_sum = 0.0
    for n in range(1, max_ngram + 1):
        cand_counts = _ngrams(cand, n)
        ref_counts = _ngrams(ref, n)
        matched = 0.0
        total = 0.0
        for gram, count in cand_counts.items():
            weight = 1.0
            if keyword_weight is not None and any(t in PYTHON_KEYWORDS for t in gram):
                weight = keyword_weight
            matched += weight * min(count, ref_counts.get(gram, 0))
            total += weight * count
        if n >= 2:
            matched += 1.0
            total += 1.0
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total)
    precision = math.exp(log_sum / max_ngram)
    brevity = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
    return brevity * precision


# --- syntax subtree match -------------------------------------------------------

def _subtree_signatures(tree: ast.AST) -> Counter:
    """Multiset of full-subtree shape signatures, one per node.

    Signatures capture node types and child structure only; identifier and
    literal values are deliberately ignored so renamings score as
    structural matches.
    """
    counts: Counter = Counter()

    def signature(node: ast.AST) -> tuple:
        sig = (type(node).__name__,) + tuple(
            signature(child) for child in ast.iter_child_nodes(node)
        )
        counts[sig] += 1
        return sig

    signature(tree)
    return counts


def _clipped_ratio(cand_counts: Counter, ref_counts: Counter) -> float:
    total = sum(ref_counts.values())
    if total == 0:
        return 1.0
    matched = sum(min(count, cand_counts.get(key, 0)) for key, count in ref_counts.items())
    return matched / total


# --- dataflow match -------------------------------------------------------------

def _loaded_names(node: ast.AST | None) -> tuple[str, ...]:
    if node is None:
        return ()
    return tuple(
        sorted(
            {
                n.id
                for n in ast.walk(node)
                if isinstance(n, ast.Name) and isinstance(n.ctx, ast.Load)
            }
        )
    )


def _target_names(target: ast.AST) -> list[str]:
    if isinstance(target, ast.Name):
        return [target.id]
    if isinstance(target, (ast.Tuple, ast.List)):
        names = []
        for element in target.elts:
            names.extend(_target_names(element))
        return names
    return []


def _def_use_pairs(tree: ast.AST) -> Counter:
    """Def-use pairs: (defined simple name, names its value reads)."""
    pairs: Counter = Counter()
    for node in ast.walk(tree):
        if isinstance(node, ast.Assign):
            uses = _loaded_names(node.value)
            for target in node.targets:
                for name in _target_names(target):
                    pairs[(name, uses)] += 1
        elif isinstance(node, ast.AugAssign):
            if isinstance(node.target, ast.Name):
                uses = tuple(sorted(set(_loaded_names(node.value)) | {node.target.id}))
                pairs[(node.target.id, uses)] += 1
        elif isinstance(node, ast.AnnAssign):
            if isinstance(node.target, ast.Name) and node.value is not None:
                pairs[(node.target.id, _loaded_names(node.value))] += 1
        elif isinstance(node, ast.For):
            uses = _loaded_names(node.iter)
            for name in _target_names(node.target):
                pairs[(name, uses)] += 1
        elif isinstance(node, ast.NamedExpr):
            if isinstance(node.target, ast.Name):
                pairs[(node.target.id, _loaded_names(node.value))] += 1
        elif isinstance(node, ast.withitem):
            if node.optional_vars is not None:
                uses = _loaded_names(node.context_expr)
                for name in _target_names(node.optional_vars):
                    pairs[(name, uses)] += 1
    return pairs


def _dataflow_ratio(cand_tree: ast.AST, ref_tree: ast.AST) -> float:
    ref_pairs = _def_use_pairs(ref_tree)
    if not ref_pairs:
        return 1.0
    return _clipped_ratio(_def_use_pairs(cand_tree), ref_pairs)


def _try_parse(source: str) -> ast.AST | None:
    try:
        return ast.parse(source)
    except (SyntaxError, ValueError, MemoryError, RecursionError):
        return None


def codebleu(
    candidate: str, reference: str, params: CodeBleuParams = CodeBleuParams()
) -> CodeBleuResult:
    """Score candidate source against reference source; all components in
    [0, 1], total on the weight simplex."""
    if not candidate.strip() or not reference.strip():
        raise EmptySourceError("both sources must be non-empty")
    cand_tokens = lex_source(candidate)
    ref_tokens = lex_source(reference)
    if not cand_tokens or not ref_tokens:
        raise EmptySourceError("both sources must contain at least one token")

    ngram = _bleu(cand_tokens, ref_tokens, params.max_ngram, keyword_weight=None)
    weighted = _bleu(cand_tokens, ref_tokens, params.max_ngram, params.keyword_weight)

    cand_tree = _try_parse(candidate)
    ref_tree = _try_parse(reference)
    if cand_tree is None or ref_tree is None:
        syntax = dataflow = ngram
    else:
        syntax = _clipped_ratio(
            _subtree_signatures(cand_tree), _subtree_signatures(ref_tree)
        )
        dataflow = _dataflow_ratio(cand_tree, ref_tree)

    w = params.weights
    score = w[0] * ngram + w[1] * weighted + w[2] * syntax + w[3] * dataflow
    return CodeBleuResult(
        score=score, ngram=ngram, weighted_ngram=weighted, syntax=syntax, dataflow=dataflow
    )
