import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popll import _kernels_py, kernels
from popll.nn import log_softmax, softmax

from conftest import random_confidence, random_masks

compiled = pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="extension not built")


def _inputs(seed, n=17, c=6, scale=4.0):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, c)) * scale
    mask = random_masks(rng, n, c)
    return z, softmax(z), log_softmax(z), mask, random_confidence(rng, mask)


def test_selected_backend_is_registered():
    assert kernels.BACKEND in kernels.BACKENDS
    assert kernels.purify is kernels.BACKENDS[kernels.BACKEND].purify


def test_environment_variable_forces_fallback():
    code = "from popll import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, POPLL_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
    env["POPLL_KERNELS"] = "fortran"
    bad = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert bad.returncode != 0 and "POPLL_KERNELS" in bad.stderr


def test_restricted_argmax_ties_and_restriction(backend):
    scores = np.array([[0.1, 0.9, 0.5, 0.5], [0.3, 0.3, 0.2, 0.2]])
    mask = np.array([[True, False, True, True], [False, True, True, True]])
    np.testing.assert_array_equal(kernels.restricted_argmax(scores, mask), [2, 1])


def test_purify_keeps_leader_and_counts(backend):
    probs = np.array([[0.7, 0.2, 0.1], [0.34, 0.33, 0.33]])
    mask = np.ones((2, 3), bool)
    new, removed = kernels.purify(probs, mask, 0.4)
    np.testing.assert_array_equal(new, [[True, False, False], [True, True, True]])
    np.testing.assert_array_equal(removed, [2, 0])


def test_purify_leader_ignores_non_candidates(backend):
    # label 0 dominates but is not a candidate; label 1 leads inside the set
    probs = np.array([[0.8, 0.15, 0.05]])
    new, removed = kernels.purify(probs, np.array([[False, True, True]]), 0.05)
    np.testing.assert_array_equal(new, [[False, True, False]])
    assert removed[0] == 1


def test_normalize_weights_zero_row_goes_uniform(backend):
    w = kernels.normalize_weights(np.array([[0.0, 5.0, 0.0], [2.0, 1.0, 1.0]]),
                                  np.array([[True, False, True], [True, True, False]]))
    np.testing.assert_allclose(w, [[0.5, 0, 0.5], [2 / 3, 1 / 3, 0]])


@compiled
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_purify_backends_agree(seed, threshold):
    _, p, _, mask, _ = _inputs(seed)
    a = _kernels_py.purify(p, mask, threshold)
    b = kernels.BACKENDS["cython"].purify(p, mask, threshold)
    np.testing.assert_array_equal(a[0], np.asarray(b[0], bool))
    np.testing.assert_array_equal(a[1], b[1])


@compiled
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_weight_and_argmax_backends_agree(seed):
    z, p, _, mask, _ = _inputs(seed)
    cy = kernels.BACKENDS["cython"]
    np.testing.assert_allclose(cy.normalize_weights(p, mask), _kernels_py.normalize_weights(p, mask),
                               rtol=1e-13, atol=1e-300)
    np.testing.assert_array_equal(cy.restricted_argmax(z, mask), _kernels_py.restricted_argmax(z, mask))


@compiled
@pytest.mark.parametrize("kind", [0, 1, 2, 3])
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.sampled_from([0.5, 4.0, 40.0]))
def test_loss_grad_backends_agree(kind, seed, scale):
    z, p, lp, mask, w = _inputs(seed, scale=scale)
    ref = _kernels_py.loss_grad(kind, z, lp, p, mask, w, 0.7)
    got = kernels.BACKENDS["cython"].loss_grad(kind, z, lp, p, mask, w, 0.7)
    np.testing.assert_allclose(got[0], ref[0], rtol=1e-10, atol=1e-12)
    # the LWS gradient cancels terms of size 1 / (1 - p); allow rounding at that scale
    big = 1.0 / np.maximum(1.0 - p, 1e-12).min() if kind == 2 else 1.0
    np.testing.assert_allclose(got[1], ref[1], rtol=1e-9, atol=1e-12 * big)
