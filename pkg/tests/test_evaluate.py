"""Evaluation protocol tests: edit distance, lexicon correction, and the
greedy end-to-end matcher under both lexicon modes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textspot.errors import ConfigError
from textspot.evaluate import (
    EvalResult,
    GroundTruth,
    LexiconMode,
    Prediction,
    edit_distance,
    evaluate_end_to_end,
    lexicon_correct,
)
from textspot.synth import Lexicon

LEX = Lexicon(("hello", "world", "cafe", "taxi", "stop"))


def square(x0, y0, size=10.0):
    return np.array([[x0, y0], [x0 + size, y0], [x0 + size, y0 + size], [x0, y0 + size]])


# ---------------------------------------------------------------------------
# edit distance


def test_edit_distance_identical():
    assert edit_distance("same", "same") == 0


def test_edit_distance_empty_vs_word():
    assert edit_distance("", "abc") == 3
    assert edit_distance("abc", "") == 3


def test_edit_distance_kitten_sitting():
    assert edit_distance("kitten", "sitting") == 3


def dp_oracle(a, b):
    m, n = len(a), len(b)
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        d[i][0] = i
    for j in range(n + 1):
        d[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[m][n]


@settings(max_examples=80, deadline=None)
@given(st.text(alphabet="abcd", max_size=8), st.text(alphabet="abcd", max_size=8))
def test_edit_distance_matches_dp_oracle(a, b):
    assert edit_distance(a, b) == dp_oracle(a, b)
    assert edit_distance(a, b) == edit_distance(b, a)


# ---------------------------------------------------------------------------
# lexicon correction


def test_lexicon_correct_in_lexicon_unchanged():
    assert lexicon_correct("cafe", LEX) == "cafe"


def test_lexicon_correct_nearest():
    assert lexicon_correct("helo", LEX) == "hello"


def test_lexicon_correct_tie_lexicographic():
    lex = Lexicon(("aa", "ab"))
    assert lexicon_correct("a", lex) == "aa"  # both at distance 1


def test_lexicon_correct_case_insensitive():
    assert lexicon_correct("CAFE", LEX) == "cafe"


def test_lexicon_correct_matches_full_scan_oracle():
    from textspot.rng import Xoshiro256

    words = tuple(sorted({"".join("abcdst"[Xoshiro256(s * 7 + i).randint(6)]
                                  for i in range(4)) for s in range(30)}))[:20]
    lex = Lexicon(words)
    stream = Xoshiro256(99)
    for _ in range(25):
        pred = "".join("abcdst"[stream.randint(6)] for _ in range(stream.randint(6) + 1))
        got = lexicon_correct(pred, lex)
        best = min(sorted(lex), key=lambda w: (edit_distance(pred, w), w))
        assert got == best


# ---------------------------------------------------------------------------
# end-to-end evaluation


def test_perfect_predictions():
    gts = [[GroundTruth(square(0, 0), "cafe"), GroundTruth(square(50, 0), "taxi")]]
    preds = [[Prediction(square(0, 0), "cafe", 0.9), Prediction(square(50, 0), "taxi", 0.8)]]
    r = evaluate_end_to_end(preds, gts, LexiconMode.none())
    assert (r.precision, r.recall, r.f_measure) == (1.0, 1.0, 1.0)


def test_half_correct():
    gts = [[GroundTruth(square(0, 0), "cafe"), GroundTruth(square(50, 0), "taxi")]]
    preds = [[Prediction(square(0, 0), "cafe", 0.9), Prediction(square(100, 0), "stop", 0.8)]]
    r = evaluate_end_to_end(preds, gts, LexiconMode.none())
    assert (r.precision, r.recall, r.f_measure) == (0.5, 0.5, 0.5)


def test_zero_predictions_all_zero_metrics():
    gts = [[GroundTruth(square(0, 0), "cafe")]]
    r = evaluate_end_to_end([[]], gts, LexiconMode.none())
    assert (r.precision, r.recall, r.f_measure) == (0.0, 0.0, 0.0)


def test_iou_gate_blocks_match():
    gts = [[GroundTruth(square(0, 0), "cafe")]]
    preds = [[Prediction(square(8, 8), "cafe", 0.9)]]  # small corner overlap
    r = evaluate_end_to_end(preds, gts, LexiconMode.none())
    assert r.n_matched == 0


def test_text_mismatch_blocks_match_but_full_mode_recovers():
    gts = [[GroundTruth(square(0, 0), "hello")]]
    preds = [[Prediction(square(0, 0), "helo", 0.9)]]
    none_r = evaluate_end_to_end(preds, gts, LexiconMode.none())
    full_r = evaluate_end_to_end(preds, gts, LexiconMode.full(LEX))
    assert none_r.n_matched == 0
    assert full_r.n_matched == 1


def test_case_insensitive_match():
    gts = [[GroundTruth(square(0, 0), "cafe")]]
    preds = [[Prediction(square(0, 0), "CaFe", 0.9)]]
    assert evaluate_end_to_end(preds, gts, LexiconMode.none()).n_matched == 1


def test_one_to_one_matching():
    gts = [[GroundTruth(square(0, 0), "cafe")]]
    preds = [[Prediction(square(0, 0), "cafe", 0.9), Prediction(square(1, 0), "cafe", 0.8)]]
    r = evaluate_end_to_end(preds, gts, LexiconMode.none())
    assert r.n_matched == 1 and r.n_pred == 2


def test_matches_brute_force_oracle_on_planted_errors():
    # 10 synthetic images with controlled mistakes, vs an exhaustive
    # confidence-ordered matcher written independently
    from textspot.rng import Xoshiro256

    words = sorted(LEX)
    stream = Xoshiro256(12345)
    preds, gts = [], []
    for _ in range(10):
        img_gts, img_preds = [], []
        for k in range(1 + stream.randint(3)):
            x0, y0 = 30 * k, 15 * stream.randint(3)
            word = words[stream.randint(len(words))]
            img_gts.append(GroundTruth(square(x0, y0), word))
            kind = stream.randint(4)
            if kind == 0:
                img_preds.append(Prediction(square(x0, y0), word, stream.next_float()))
            elif kind == 1:  # wrong text
                img_preds.append(Prediction(square(x0, y0), word + "x", stream.next_float()))
            elif kind == 2:  # bad box
                img_preds.append(Prediction(square(x0 + 8, y0 + 8), word, stream.next_float()))
            else:  # duplicate
                img_preds.append(Prediction(square(x0, y0), word, stream.next_float()))
                img_preds.append(Prediction(square(x0 + 1, y0), word, stream.next_float()))
        preds.append(img_preds)
        gts.append(img_gts)

    def brute(preds, gts, iou_match=0.5):
        from textspot.bezier import polygon_iou

        matched = 0
        for ps, ts in zip(preds, gts):
            order = sorted(range(len(ps)), key=lambda i: (-ps[i].confidence, ps[i].text,
                                                          tuple(ps[i].polygon.ravel())))
            used = set()
            for i in order:
                best, best_iou = -1, 0.0
                for j, gt in enumerate(ts):
                    if j in used or ps[i].text.lower() != gt.text.lower():
                        continue
                    iou = polygon_iou(ps[i].polygon, gt.polygon)
                    if iou >= iou_match and iou > best_iou:
                        best, best_iou = j, iou
                if best >= 0:
                    used.add(best)
                    matched += 1
        return matched

    got = evaluate_end_to_end(preds, gts, LexiconMode.none())
    assert got.n_matched == brute(preds, gts)


def test_order_invariance_under_equal_confidence():
    gts = [[GroundTruth(square(0, 0), "cafe"), GroundTruth(square(30, 0), "taxi")]]
    a = [Prediction(square(0, 0), "cafe", 0.5), Prediction(square(30, 0), "taxi", 0.5)]
    r1 = evaluate_end_to_end([a], gts, LexiconMode.none())
    r2 = evaluate_end_to_end([a[::-1]], gts, LexiconMode.none())
    assert r1 == r2


def test_full_never_below_none_on_noisy_predictions():
    from textspot.rng import Xoshiro256

    stream = Xoshiro256(5150)
    words = sorted(LEX)
    preds, gts = [], []
    for _ in range(12):
        img_gts, img_preds = [], []
        for k in range(1 + stream.randint(3)):
            word = words[stream.randint(len(words))]
            img_gts.append(GroundTruth(square(30 * k, 0), word))
            text = word
            if stream.next_float() < 0.5:  # corrupt a letter
                i = stream.randint(len(text))
                text = text[:i] + "q" + text[i + 1:]
            img_preds.append(Prediction(square(30 * k, 0), text, stream.next_float()))
        preds.append(img_preds)
        gts.append(img_gts)
    f_none = evaluate_end_to_end(preds, gts, LexiconMode.none()).f_measure
    f_full = evaluate_end_to_end(preds, gts, LexiconMode.full(LEX)).f_measure
    assert f_full >= f_none


def test_metrics_bounds_and_f_relation():
    gts = [[GroundTruth(square(0, 0), "cafe")], [GroundTruth(square(0, 0), "taxi")]]
    preds = [[Prediction(square(0, 0), "cafe", 1.0)], [Prediction(square(8, 8), "taxi", 1.0)]]
    r = evaluate_end_to_end(preds, gts, LexiconMode.none())
    assert 0 <= r.precision <= 1 and 0 <= r.recall <= 1
    assert r.f_measure <= max(r.precision, r.recall)
    assert r.n_matched <= min(r.n_pred, r.n_gt)


def test_lexicon_mode_validation():
    with pytest.raises(ConfigError):
        LexiconMode("full")
    with pytest.raises(ConfigError):
        LexiconMode("weird")
    assert LexiconMode.none().kind == "none"
