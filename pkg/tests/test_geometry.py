import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_similarity, central_difference, exact_angle
from supcon_lab.errors import DomainError
from supcon_lab.geometry import (
    SimilarityKind,
    dsim_ddot,
    l2_normalize,
    sim_cosine,
    sim_geodesic,
    sim_gradient,
    similarity,
    similarity_matrix,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def unit_vectors(dim=st.integers(2, 12)):
    return dim.flatmap(
        lambda d: arrays(np.float64, d, elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-3)
    ).map(l2_normalize)


def test_normalize_examples():
    np.testing.assert_allclose(l2_normalize([3, 4]), [0.6, 0.8])
    np.testing.assert_array_equal(l2_normalize([1, 0, 0]), [1, 0, 0])
    with pytest.raises(DomainError):
        l2_normalize([0, 0])
    with pytest.raises(DomainError):
        l2_normalize([1.0, np.nan])


@given(arrays(np.float64, st.integers(1, 16), elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-6))
def test_normalize_unit_norm_and_direction(v):
    u = l2_normalize(v)
    assert abs(np.linalg.norm(u) - 1.0) < 1e-6
    np.testing.assert_allclose(u * np.linalg.norm(v), v, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("kind", list(SimilarityKind))
def test_endpoint_values(kind):
    a = np.array([1.0, 0.0, 0.0])
    assert similarity(kind, a, a) == 1.0
    assert similarity(kind, a, -a) == -1.0
    assert abs(similarity(kind, a, np.array([0.0, 1.0, 0.0]))) < 1e-15


def test_geodesic_formula_against_oracle(rng):
    for _ in range(200):
        a, b = (l2_normalize(v) for v in rng.standard_normal((2, 7)))
        assert sim_geodesic(a, b) == pytest.approx(brute_similarity("geodesic", a, b), abs=1e-13)
        assert sim_cosine(a, b) == pytest.approx(brute_similarity("cosine", a, b), abs=1e-13)


def test_cosine_clips_rounding_drift():
    a = np.array([1.0 + 1e-12, 0.0])
    assert sim_cosine(a, a) == 1.0
    assert sim_geodesic(a, a) == 1.0


@given(unit_vectors(st.just(5)), unit_vectors(st.just(5)))
def test_symmetry_and_range(a, b):
    for kind in SimilarityKind:
        s = similarity(kind, a, b)
        assert s == similarity(kind, b, a)
        assert -1.0 <= s <= 1.0


@given(unit_vectors(st.just(4)), unit_vectors(st.just(4)), unit_vectors(st.just(4)))
def test_rank_equivalence(a, b, c):
    dc = sim_cosine(a, b) - sim_cosine(a, c)
    dg = sim_geodesic(a, b) - sim_geodesic(a, c)
    # arccos is monotone, but in floats a tiny cosine gap may round to an angle tie
    assert np.sign(dc) * np.sign(dg) >= 0
    if dc == 0:
        assert dg == 0


def test_similarity_matrix_matches_scalar(rng):
    x = rng.standard_normal((4, 6))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    for kind in SimilarityKind:
        m = similarity_matrix(kind, x, x[:3])
        for i in range(4):
            for j in range(3):
                assert m[i, j] == pytest.approx(similarity(kind, x[i], x[j]), abs=1e-15)


def test_cosine_gradient_is_other_vector(rng):
    a, b = rng.standard_normal((2, 5))
    ga, gb = sim_gradient("cosine", a, b)
    np.testing.assert_array_equal(ga, b)
    np.testing.assert_array_equal(gb, a)


def test_geodesic_gradient_orthogonal_pair():
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0])
    ga, gb = sim_gradient("geodesic", a, b)
    np.testing.assert_allclose(ga, (2 / math.pi) * b, rtol=1e-15)
    num = central_difference(lambda x: brute_similarity("geodesic", x, b), a.copy(), h=1e-6)
    np.testing.assert_allclose(ga, num, atol=1e-8)


@pytest.mark.parametrize("kind", ["cosine", "geodesic"])
def test_gradient_matches_finite_differences(kind, rng):
    for _ in range(20):
        a, b = (l2_normalize(v) for v in rng.standard_normal((2, 8)))
        ga, gb = sim_gradient(kind, a, b)
        na = central_difference(lambda x: brute_similarity(kind, x, b), a.copy())
        nb = central_difference(lambda x: brute_similarity(kind, a, x), b.copy())
        assert np.linalg.norm(ga - na) / np.linalg.norm(na) < 1e-6
        assert np.linalg.norm(gb - nb) / np.linalg.norm(nb) < 1e-6


def test_geodesic_derivative_is_clamped():
    d = dsim_ddot("geodesic", np.array([1.0, -1.0, 0.0]))
    assert np.all(np.isfinite(d))
    assert d[0] == d[1] == pytest.approx((2 / math.pi) / math.sqrt(1 - (1 - 1e-7) ** 2))


def test_angle_slopes():
    b = np.array([1.0, 0.0])
    h = 1e-5
    for theta in np.linspace(0.01, math.pi - 0.01, 50):
        def along(t, kind):
            return similarity(kind, np.array([math.cos(t), math.sin(t)]), b)

        slope_geo = (along(theta + h, "geodesic") - along(theta - h, "geodesic")) / (2 * h)
        slope_cos = (along(theta + h, "cosine") - along(theta - h, "cosine")) / (2 * h)
        assert slope_geo == pytest.approx(-2 / math.pi, abs=1e-5)
        assert slope_cos == pytest.approx(-math.sin(theta), abs=1e-5)


def test_parse_kind():
    assert SimilarityKind.parse("Geodesic") is SimilarityKind.GEODESIC
    with pytest.raises(DomainError):
        SimilarityKind.parse("euclid")


def test_geodesic_endpoints_exact(rng):
    for dim in (2, 8, 32, 256):
        for x in rng.standard_normal((50, dim)):
            x = l2_normalize(x)
            assert sim_geodesic(x, x) == 1.0
            assert sim_geodesic(x, -x) == -1.0
            m = similarity_matrix("geodesic", x[None], np.stack([x, -x]))
            assert m[0, 0] == 1.0 and m[0, 1] == -1.0


def test_geodesic_monotone_in_the_float_dot(rng):
    x = l2_normalize(rng.standard_normal(8))
    ys = [l2_normalize(x + s * rng.standard_normal(8)) for s in np.logspace(-12, 1, 400)]
    ys += [-y for y in ys]
    dots = np.array([np.dot(x, y) for y in ys])
    sims = np.array([sim_geodesic(x, y) for y in ys])
    order = np.argsort(dots, kind="stable")
    assert np.all(np.diff(sims[order]) >= 0)


@pytest.mark.parametrize("scale", [1e-9, 1e-7, 1e-4, 1e-1])
def test_geodesic_close_to_the_true_angle(rng, scale):
    # inside the pole band the error is bounded by the band, outside it by the
    # conditioning of arccos on a correctly rounded dot
    for _ in range(20):
        x = l2_normalize(rng.standard_normal(16))
        y = l2_normalize(x + scale * rng.standard_normal(16))
        for b in (y, -y):
            ref = float(1 - 2 * exact_angle(x, b) / math.pi)
            assert abs(sim_geodesic(x, b) - ref) < 1e-7
