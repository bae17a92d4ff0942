import logging

import numpy as np
import pytest
import scipy.sparse as sp

from hdmi.errors import ConfigError
from hdmi.features import (MODEL_BLOCKS, TABLE1_MODELS, DimensionConfig, assemble_candidates,
                           binarize_codes, extract_unigrams, load_stop_words, pool_embeddings,
                           prevalence_filter, tokenize)
from hdmi.tabular import BINARY_SPARSE, CONTINUOUS_DENSE, CovariateBlock

from conftest import toy_cohort

CLAIMS = DimensionConfig("claims")
NOTES = DimensionConfig("unigram", source="note_text", stop_words={"has"})


def cell(block, row, col):
    return block.dense()[row, block.columns.index(col)]


def test_code_in_window():
    b = binarize_codes([("p1", "I48.0", 10)], CLAIMS, 2, patient_ids=["p0", "p1"])
    assert b.columns == ("I48.0",) and cell(b, 1, "I48.0") == 1 and cell(b, 0, "I48.0") == 0


def test_code_out_of_window():
    b = binarize_codes([(0, "I48.0", 400), (1, "Z00", 3)], CLAIMS, 2)
    assert "I48.0" not in b.columns


def test_duplicate_codes_idempotent():
    b = binarize_codes([(0, "A", 1), (0, "A", 2), (0, "A", 2)], CLAIMS, 1)
    assert b.dense().tolist() == [[1.0]]


def test_code_columns_sorted():
    b = binarize_codes([(0, "b", 1), (0, "a", 1), (0, "C", 1)], CLAIMS, 1)
    assert list(b.columns) == sorted(b.columns)


def test_unknown_patient():
    with pytest.raises((KeyError, ValueError)):
        binarize_codes([("zz", "A", 1)], CLAIMS, 2, patient_ids=["p0", "p1"])
    with pytest.raises((KeyError, ValueError, IndexError)):
        binarize_codes([(5, "A", 1)], CLAIMS, 2)


def test_unigrams():
    b = extract_unigrams([(0, "Patient has atrial fibrillation")], NOTES, 1)
    assert set(b.columns) == {"patient", "atrial", "fibrillation"}
    assert b.dense().sum() == 3


def test_unigram_presence_not_count():
    b = extract_unigrams([(0, "atrial atrial"), (0, "atrial flutter")], NOTES, 1)
    assert cell(b, 0, "atrial") == 1


def test_case_folding():
    b = extract_unigrams([(0, "AFib afib AFIB")], NOTES, 1)
    assert b.columns == ("afib",)


def test_tokenize_drops_numbers_and_short():
    assert tokenize("a 12 mg/dl x2 K") == ["mg", "dl", "x2"]


def test_empty_notes_give_zero_rows():
    b = extract_unigrams([(0, "heart")], NOTES, 3)
    assert b.dense()[1:].sum() == 0


def test_stop_word_file(tmp_path):
    p = tmp_path / "stop.txt"
    p.write_text("# comment\nThe\n\nin\n")
    assert load_stop_words(p) == {"the", "in"}


def test_pool_mean_and_permutation():
    v1, v2 = np.arange(1.0, 129), np.arange(3.0, 131)
    a = pool_embeddings([(0, v1), (0, v2), (1, v1)], 2)
    b = pool_embeddings([(0, v2), (0, v1), (1, v1)], 2)
    assert np.allclose(a.dense()[0], np.arange(2.0, 130))
    assert np.array_equal(a.dense(), b.dense())
    assert np.array_equal(a.dense()[1], v1)


def test_pool_fallback_warns(caplog):
    with caplog.at_level(logging.WARNING):
        b = pool_embeddings([(0, np.ones(128))], 2)
    assert np.array_equal(b.dense()[1], np.ones(128))
    assert "no embeddings" in caplog.text


def test_pool_dimension_mismatch():
    with pytest.raises(ValueError):
        pool_embeddings([(0, np.ones(5))], 1)


def test_prevalence_filter_rules():
    X = np.zeros((200, 3))
    X[0, 0] = 1            # 0.005 -> dropped
    X[:2, 1] = 1           # 0.01 -> kept
    X[:50, 2] = 1
    blk = CovariateBlock("claims", BINARY_SPARSE, ["a", "b", "c"], sp.csc_matrix(X))
    f = prevalence_filter(blk, 0.01)
    assert f.columns == ("b", "c")
    assert prevalence_filter(f, 0.01).columns == f.columns
    assert prevalence_filter(blk, 0.0).columns == blk.columns
    dense = CovariateBlock("s", CONTINUOUS_DENSE, ["e1"], np.zeros((200, 1)))
    assert prevalence_filter(dense, 0.5) is dense


def test_config_validation():
    with pytest.raises(ConfigError):
        DimensionConfig("x", source="bogus")
    with pytest.raises(ConfigError):
        DimensionConfig("x", threshold=1.5)


def _cohort_with_blocks(n=40):
    rng = np.random.default_rng(0)
    claims = CovariateBlock("claims", BINARY_SPARSE, [f"c{j}" for j in range(7)],
                            sp.csc_matrix((rng.random((n, 7)) < 0.3).astype(float)))
    unigram = CovariateBlock("unigram", BINARY_SPARSE, ["u", "c0"], sp.csc_matrix((rng.random((n, 2)) < 0.3).astype(float)))
    sentence = CovariateBlock("sentence", CONTINUOUS_DENSE, [f"e{j}" for j in range(128)], rng.normal(size=(n, 128)))
    return toy_cohort(n=n, blocks={"claims": claims, "unigram": unigram, "sentence": sentence})


def test_assembly_sizes(small_base):
    assert assemble_candidates(small_base, "baseline").n_cols == 13
    c = _cohort_with_blocks()
    assert assemble_candidates(c, "hdmi_sentence").n_cols == 2 + 128
    assert assemble_candidates(c, "hdmi_claims_unigram").n_cols == 2 + 7 + 2


def test_u_never_a_candidate():
    c = _cohort_with_blocks()
    for model in MODEL_BLOCKS:
        if MODEL_BLOCKS[model] is None:
            continue
        cand = assemble_candidates(c, model)
        assert "u" not in cand.names
        # no candidate column reproduces u
        D = cand.dense()
        assert not any(np.array_equal(D[:, j], c.u) for j in range(D.shape[1]))


def test_block_prefix_disambiguates():
    cand = assemble_candidates(_cohort_with_blocks(), "hdmi_claims_unigram")
    assert "claims:c0" in cand.names and "unigram:c0" in cand.names


def test_missing_block_is_config_error():
    with pytest.raises(ConfigError):
        assemble_candidates(toy_cohort(), "hdmi_claims")
    with pytest.raises(ConfigError):
        assemble_candidates(toy_cohort(), "nope")


def test_table1_models():
    assert len(TABLE1_MODELS) == 8 and "oracle" not in TABLE1_MODELS
