from __future__ import annotations

import pytest

from chartforge.metrics import (
    CodeBleuParams,
    EmptySourceError,
    codebleu,
    lex_source,
)

REFERENCE_SCRIPT = """\
import matplotlib.pyplot as plt
import numpy as np

x = np.linspace(0, 10, 100)
y = np.sin(x)
for style in ['-', '--']:
    plt.plot(x, y, style)
plt.savefig('wave.png')
"""


class TestLexer:
    def test_lexical_tokens_not_whitespace_words(self):
        tokens = lex_source("plt.plot(x,y)")
        assert tokens == ["plt", ".", "plot", "(", "x", ",", "y", ")"]

    def test_comments_dropped(self):
        assert "#" not in "".join(lex_source("x = 1  # set x"))

    def test_ill_formed_source_still_tokenizes(self):
        assert lex_source("def broken(: 'unterminated") != []


class TestIdentity:
    def test_identity_scores_one_on_all_components(self):
        result = codebleu(REFERENCE_SCRIPT, REFERENCE_SCRIPT)
        assert result.ngram == pytest.approx(1.0, abs=1e-12)
        assert result.weighted_ngram == pytest.approx(1.0, abs=1e-12)
        assert result.syntax == pytest.approx(1.0, abs=1e-12)
        assert result.dataflow == pytest.approx(1.0, abs=1e-12)
        assert result.score == pytest.approx(1.0, abs=1e-12)


class TestComponents:
    def test_def_use_example_scores_half_on_dataflow(self):
        result = codebleu("x = 1\ny = x", "x = 1\nz = x")
        assert result.dataflow == 0.5

    def test_disjoint_token_streams_score_zero(self):
        # Unparseable gibberish on both sides: n-gram components are zero and
        # syntax/dataflow fall back to the n-gram value.
        result = codebleu("@@ ~~ $$", "%% ^^ ;;")
        assert result.score == 0.0
        assert result.components == (0.0, 0.0, 0.0, 0.0)

    def test_parse_failure_falls_back_to_ngram(self):
        broken = "for style in ['-' '--']:\n    plt.plot(x y, style)\n"
        result = codebleu(broken, REFERENCE_SCRIPT)
        assert result.syntax == result.ngram
        assert result.dataflow == result.ngram

    def test_unit_keyword_weight_collapses_to_plain_ngram(self):
        params = CodeBleuParams(keyword_weight=1.0)
        result = codebleu("for i in range(3):\n    print(i)", REFERENCE_SCRIPT, params)
        assert result.weighted_ngram == result.ngram

    def test_components_bounded(self):
        candidate = "import numpy as np\nx = np.cos(np.linspace(0, 5, 50))\n"
        result = codebleu(candidate, REFERENCE_SCRIPT)
        for component in result.components:
            assert 0.0 <= component <= 1.0
        assert 0.0 <= result.score <= 1.0

    def test_syntax_ignores_identifier_renames(self):
        result = codebleu("alpha = beta + 1", "x = y + 1")
        assert result.syntax == 1.0

    def test_dataflow_one_when_reference_has_no_pairs(self):
        result = codebleu("print(1)", "print(2)")
        assert result.dataflow == 1.0


class TestParams:
    def test_weight_simplex_violation_rejected(self):
        with pytest.raises(ValueError, match="sum to 1"):
            CodeBleuParams(weights=(0.5, 0.5, 0.5, 0.5))

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            CodeBleuParams(weights=(-0.25, 0.5, 0.5, 0.25))

    def test_weights_shift_the_mix(self):
        heavy_dataflow = CodeBleuParams(weights=(0.0, 0.0, 0.0, 1.0))
        result = codebleu("x = 1\ny = x", "x = 1\nz = x", heavy_dataflow)
        assert result.score == 0.5


class TestErrors:
    def test_empty_candidate_rejected(self):
        with pytest.raises(EmptySourceError):
            codebleu("   ", REFERENCE_SCRIPT)

    def test_comment_only_candidate_rejected(self):
        with pytest.raises(EmptySourceError):
            codebleu("# nothing here", REFERENCE_SCRIPT)
