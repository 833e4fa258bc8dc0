from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semiseg.pseudofuse import (
    PseudoBundle,
    agreement_matrix,
    disagreement_indicator,
    fuse,
    ignore_value,
)


def naive_agreement_matrix(Y_cw, Y_pw, C):
    M = np.zeros((C, C), dtype=np.int64)
    for j, k in zip(Y_cw.ravel(), Y_pw.ravel()):
        M[j, k] += 1
    return M


def naive_indicator(M):
    C = M.shape[0]
    out = np.zeros(C)
    for j in range(C):
        row = M[j, :].sum()
        col = M[:, j].sum()
        row_share = M[j, j] / row if row > 0 else 0.0
        col_share = M[j, j] / col if col > 0 else 0.0
        out[j] = 2.0 - row_share - col_share
    return out


def naive_fuse(Y_cw, Y_pw, conf_c, conf_p, C):
    """Straight per-pixel re-statement of the fusion rule."""
    I = naive_indicator(naive_agreement_matrix(Y_cw, Y_pw, C))
    H, W = Y_cw.shape
    y_inter = np.zeros((H, W), dtype=np.int64)
    y_union = np.zeros((H, W), dtype=np.int64)
    w_u = np.zeros((H, W))
    chose_c = np.zeros((H, W), dtype=bool)
    for y in range(H):
        for x in range(W):
            j, k = Y_cw[y, x], Y_pw[y, x]
            if j == k:
                y_inter[y, x] = y_union[y, x] = j
                w_u[y, x] = 0.5 * (conf_c[y, x] + conf_p[y, x])
            else:
                y_inter[y, x] = ignore_value(C)
                if I[j] >= I[k]:
                    y_union[y, x] = j
                    w_u[y, x] = conf_c[y, x]
                    chose_c[y, x] = True
                else:
                    y_union[y, x] = k
                    w_u[y, x] = conf_p[y, x]
    return y_inter, y_union, w_u, chose_c


def random_case(rng, C, shape=(8, 8)):
    Y_cw = rng.integers(0, C, size=shape)
    Y_pw = rng.integers(0, C, size=shape)
    conf_c = rng.uniform(1.0 / C, 1.0, size=shape)
    conf_p = rng.uniform(1.0 / C, 1.0, size=shape)
    return Y_cw, Y_pw, conf_c, conf_p


# ------------------------------------------------------------------ agreement


def test_agreement_full_agreement_is_diagonal():
    rng = np.random.default_rng(0)
    Y = rng.integers(0, 4, size=(6, 6))
    M = agreement_matrix(Y, Y, 4)
    assert (M == np.diag(np.diag(M))).all()
    assert M.sum() == 36 == np.trace(M)


def test_agreement_hand_case():
    Y_cw = np.array([[0, 1], [1, 2]])
    Y_pw = np.array([[0, 2], [1, 2]])
    M = agreement_matrix(Y_cw, Y_pw, 3)
    expected = np.zeros((3, 3), dtype=np.int64)
    expected[0, 0] = 1
    expected[1, 2] = 1
    expected[1, 1] = 1
    expected[2, 2] = 1
    assert np.array_equal(M, expected)


def test_agreement_matches_loop_oracle():
    rng = np.random.default_rng(1)
    for C in (2, 3, 5):
        Y_cw, Y_pw, _, _ = random_case(rng, C)
        assert np.array_equal(
            agreement_matrix(Y_cw, Y_pw, C), naive_agreement_matrix(Y_cw, Y_pw, C)
        )


def test_agreement_rejects_out_of_range():
    with pytest.raises(ValueError):
        agreement_matrix(np.array([[0, 3]]), np.array([[0, 1]]), 3)


# ------------------------------------------------------------------ indicator


def test_indicator_diagonal_is_zero():
    M = np.diag([7, 3, 11])
    assert np.allclose(disagreement_indicator(M), 0.0)


def test_indicator_degenerate_all_mispaired():
    M = np.array([[0, 9], [0, 0]])
    assert np.allclose(disagreement_indicator(M), [2.0, 2.0])


def test_indicator_hand_computed_three_class():
    # exact expectations built from fractions, independent of the implementation
    M = np.array([[10, 2, 0], [1, 5, 3], [0, 0, 4]])
    expected = []
    for j in range(3):
        row = Fraction(int(M[j].sum()))
        col = Fraction(int(M[:, j].sum()))
        expected.append(
            float(2 - Fraction(int(M[j, j])) / row - Fraction(int(M[j, j])) / col)
        )
    assert np.allclose(disagreement_indicator(M), expected, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_indicator_bounds(seed, C):
    rng = np.random.default_rng(seed)
    M = rng.integers(0, 50, size=(C, C))
    I = disagreement_indicator(M)
    assert (I >= -1e-12).all() and (I <= 2.0 + 1e-12).all()
    assert np.allclose(I, naive_indicator(M))


# ----------------------------------------------------------------------- fuse


def test_fuse_identical_predictions():
    rng = np.random.default_rng(2)
    Y = rng.integers(0, 3, size=(5, 5))
    conf_c = rng.uniform(0.4, 1.0, size=(5, 5))
    conf_p = rng.uniform(0.4, 1.0, size=(5, 5))
    bundle = fuse(Y, Y, conf_c, conf_p, 3)
    assert np.array_equal(bundle.y_inter, Y)
    assert np.array_equal(bundle.y_union, Y)
    assert np.allclose(bundle.w_u, 0.5 * (conf_c + conf_p))
    assert not bundle.chose_c.any()


def test_fuse_single_disagreement_resolves_to_harder_class():
    # class 1 agrees on 3 of 4 pixels (lower diagonal share), class 2 on 8 of 8;
    # the lone (1, 2) disagreement must resolve to class 1 with the
    # conservative branch's confidence
    Y_cw = np.zeros((4, 4), dtype=np.int64)
    Y_pw = np.zeros((4, 4), dtype=np.int64)
    Y_cw[0, :3] = 1
    Y_pw[0, :3] = 1
    Y_cw[1:3, :] = 2
    Y_pw[1:3, :] = 2
    Y_cw[3, 0], Y_pw[3, 0] = 1, 2
    conf_c = np.full((4, 4), 0.7)
    conf_p = np.full((4, 4), 0.9)
    bundle = fuse(Y_cw, Y_pw, conf_c, conf_p, 3)
    assert bundle.y_union[3, 0] == 1
    assert bundle.y_inter[3, 0] == ignore_value(3)
    assert bundle.w_u[3, 0] == pytest.approx(0.7)
    assert bundle.chose_c[3, 0]


def test_fuse_tie_resolves_to_conservative():
    # symmetric disagreement: I_1 == I_2, so the >= rule picks the
    # conservative branch's class at every disagreement pixel
    Y_cw = np.array([[1, 2], [0, 0]])
    Y_pw = np.array([[2, 1], [0, 0]])
    conf = np.full((2, 2), 0.8)
    bundle = fuse(Y_cw, Y_pw, conf, conf, 3)
    assert bundle.y_union[0, 0] == 1 and bundle.y_union[0, 1] == 2
    assert bundle.chose_c[0, 0] and bundle.chose_c[0, 1]


def test_fuse_matches_naive_oracle_200_pairs():
    rng = np.random.default_rng(3)
    for trial in range(200):
        C = int(rng.choice([2, 3, 5]))
        Y_cw, Y_pw, conf_c, conf_p = random_case(rng, C)
        bundle = fuse(Y_cw, Y_pw, conf_c, conf_p, C)
        e_inter, e_union, e_w, e_chose = naive_fuse(Y_cw, Y_pw, conf_c, conf_p, C)
        assert np.array_equal(bundle.y_inter, e_inter)
        assert np.array_equal(bundle.y_union, e_union)
        assert np.allclose(bundle.w_u, e_w)
        assert np.array_equal(bundle.chose_c, e_chose)


def test_fuse_degenerate_absent_class_indicator():
    # a class predicted by only one branch has a 0/0 ratio -> indicator 2,
    # so it wins every disagreement it is part of
    Y_cw = np.zeros((3, 3), dtype=np.int64)
    Y_pw = np.zeros((3, 3), dtype=np.int64)
    Y_cw[0, 0] = 1  # class 1 never agrees anywhere
    conf = np.full((3, 3), 0.5)
    bundle = fuse(Y_cw, Y_pw, conf, conf, 2)
    assert bundle.y_union[0, 0] == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3, 5]))
def test_fuse_invariants(seed, C):
    rng = np.random.default_rng(seed)
    Y_cw, Y_pw, conf_c, conf_p = random_case(rng, C)
    bundle = fuse(Y_cw, Y_pw, conf_c, conf_p, C)
    ignore = ignore_value(C)
    inter_valid = bundle.y_inter != ignore
    # intersection subset of union, defined exactly at agreement pixels
    assert np.array_equal(inter_valid, Y_cw == Y_pw)
    assert np.array_equal(bundle.y_inter[inter_valid], bundle.y_union[inter_valid])
    # union always one of the two branch predictions, never IGNORE
    assert (bundle.y_union != ignore).all()
    assert ((bundle.y_union == Y_cw) | (bundle.y_union == Y_pw)).all()
    # weights in (0, 1]
    assert (bundle.w_u > 0).all() and (bundle.w_u <= 1).all()


def test_fuse_rejects_bad_inputs():
    Y = np.zeros((2, 2), dtype=np.int64)
    good = np.full((2, 2), 0.5)
    with pytest.raises(ValueError):
        fuse(Y, np.zeros((3, 3), dtype=np.int64), good, good, 2)
    with pytest.raises(ValueError):
        fuse(Y, Y, np.zeros((2, 2)), good, 2)  # zero confidence
    with pytest.raises(ValueError):
        fuse(Y, Y, good, np.full((2, 2), 1.5), 2)
    with pytest.raises(ValueError):
        fuse(Y + 5, Y, good, good, 2)


def test_dump_debug_writes_files(tmp_path):
    from semiseg.pseudofuse import dump_debug

    rng = np.random.default_rng(4)
    Y_cw, Y_pw, conf_c, conf_p = random_case(rng, 3)
    bundle = fuse(Y_cw, Y_pw, conf_c, conf_p, 3)
    M = agreement_matrix(Y_cw, Y_pw, 3)
    dump_debug(bundle, M, tmp_path, tag="t0")
    for suffix in ("inter.png", "union.png", "weights.png", "agreement.txt"):
        assert (tmp_path / f"t0_{suffix}").exists()
    text = (tmp_path / "t0_agreement.txt").read_text()
    assert str(int(M[0, 0])) in text
