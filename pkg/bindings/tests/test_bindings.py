import array

import numpy as np
import pytest

import otweights
from otweights import Otpo, PreferencePair, TauMode, TokenSeq, UotConfig, weights
from otweights_bindings import (
    FlatPairView,
    WeightConfig,
    __version__,
    compute_weights,
    compute_weights_batch,
)


def random_view(rng, n_c=None, n_r=None, d=6, scale=0.35, config=WeightConfig()):
    n_c = n_c or int(rng.integers(2, 9))
    n_r = n_r or int(rng.integers(2, 9))
    hc = scale * rng.standard_normal((n_c, d))
    hr = scale * rng.standard_normal((n_r, d))
    return FlatPairView(hc.ravel(), hr.ravel(), n_c, n_r, d, config), hc, hr


def library_weights(hc, hr, config=WeightConfig()):
    n_c, n_r = hc.shape[0], hr.shape[0]
    pair = PreferencePair(
        "view",
        TokenSeq(np.arange(n_c), np.zeros(n_c), np.zeros(n_c), hc),
        TokenSeq(np.arange(n_r), np.zeros(n_r), np.zeros(n_r), hr),
    )
    scheme = Otpo(
        cfg=UotConfig(eps1=config.eps1, eps2=config.eps2, entropy_form=config.entropy_form),
        tau_mode=TauMode(config.tau_mode),
    )
    return weights(pair, scheme)


class TestComputeWeights:
    def test_identical_buffers_give_symmetric_weights(self):
        rng = np.random.default_rng(0)
        h = 0.4 * rng.standard_normal((5, 4))
        view = FlatPairView(h.ravel(), h.ravel().copy(), 5, 5, 4)
        result = compute_weights(view)
        np.testing.assert_allclose(result.w_chosen, result.w_rejected, atol=1e-8)

    def test_single_token_zero_distance(self):
        view = FlatPairView(np.zeros(3), np.zeros(3), 1, 1, 3)
        result = compute_weights(view)
        assert result.w_chosen.tolist() == [1.0]
        assert result.w_rejected.tolist() == [1.0]
        assert result.tau == 1.0
        assert result.converged

    def test_matches_library_weights(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            view, hc, hr = random_view(rng)
            result = compute_weights(view)
            tw = library_weights(hc, hr)
            np.testing.assert_allclose(result.w_chosen, tw.w_chosen, atol=1e-10)
            np.testing.assert_allclose(result.w_rejected, tw.w_rejected, atol=1e-10)
            assert result.tau == pytest.approx(tw.tau, rel=1e-12)

    def test_buffers_are_caller_owned(self):
        rng = np.random.default_rng(2)
        view, _, _ = random_view(rng)
        result = compute_weights(view)
        result.w_chosen[0] = -1.0  # writable without raising

    def test_float32_upcast(self):
        rng = np.random.default_rng(3)
        hc = (0.4 * rng.standard_normal((4, 3))).astype(np.float32)
        hr = (0.4 * rng.standard_normal((6, 3))).astype(np.float32)
        view = FlatPairView(hc.ravel(), hr.ravel(), 4, 6, 3)
        result = compute_weights(view)
        tw = library_weights(hc.astype(np.float64), hr.astype(np.float64))
        np.testing.assert_allclose(result.w_chosen, tw.w_chosen, atol=1e-10)

    def test_raw_byte_and_array_buffers(self):
        rng = np.random.default_rng(4)
        hc = 0.4 * rng.standard_normal((3, 2))
        hr = 0.4 * rng.standard_normal((4, 2))
        as_bytes = FlatPairView(hc.tobytes(), hr.tobytes(), 3, 4, 2)
        as_array = FlatPairView(
            array.array("d", hc.ravel()), array.array("d", hr.ravel()), 3, 4, 2
        )
        a = compute_weights(as_bytes)
        b = compute_weights(as_array)
        np.testing.assert_array_equal(a.w_chosen, b.w_chosen)
        np.testing.assert_array_equal(a.w_rejected, b.w_rejected)

    def test_shape_mismatch_names_field(self):
        with pytest.raises(ValueError, match="hidden_r"):
            compute_weights(FlatPairView(np.zeros(6), np.zeros(5), 2, 3, 3))

    def test_bad_dtype_named(self):
        with pytest.raises(ValueError, match="hidden_c"):
            compute_weights(
                FlatPairView(np.zeros(6, dtype=np.int32), np.zeros(9), 2, 3, 3)
            )

    def test_numerical_failure_returns_unconverged(self):
        rng = np.random.default_rng(5)
        view, _, _ = random_view(rng, config=WeightConfig(eps1=1e-320))
        result = compute_weights(view)
        assert not result.converged
        assert np.all(np.isnan(result.w_chosen))
        assert np.all(np.isnan(result.w_rejected))


class TestBatch:
    def test_batch_of_one_equals_single_call(self):
        rng = np.random.default_rng(6)
        view, _, _ = random_view(rng)
        single = compute_weights(view)
        [batched] = compute_weights_batch([view])
        np.testing.assert_array_equal(single.w_chosen, batched.w_chosen)
        np.testing.assert_array_equal(single.w_rejected, batched.w_rejected)

    def test_batch_matches_per_view_loop(self):
        rng = np.random.default_rng(7)
        views = [random_view(rng)[0] for _ in range(64)]
        batched = compute_weights_batch(views, threads=2)
        for view, result in zip(views, batched):
            loop = compute_weights(view)
            np.testing.assert_array_equal(result.w_chosen, loop.w_chosen)
            np.testing.assert_array_equal(result.w_rejected, loop.w_rejected)

    def test_thread_counts_bit_identical(self):
        rng = np.random.default_rng(8)
        views = [random_view(rng)[0] for _ in range(16)]
        one = compute_weights_batch(views, threads=1)
        eight = compute_weights_batch(views, threads=8)
        for a, b in zip(one, eight):
            assert a.w_chosen.tobytes() == b.w_chosen.tobytes()
            assert a.w_rejected.tobytes() == b.w_rejected.tobytes()

    def test_failing_view_reports_index(self):
        rng = np.random.default_rng(9)
        good, _, _ = random_view(rng)
        bad = FlatPairView(np.zeros(5), np.zeros(6), 2, 3, 2)
        with pytest.raises(ValueError, match="view 1"):
            compute_weights_batch([good, bad, good])

    def test_thread_validation(self):
        with pytest.raises(ValueError, match="threads"):
            compute_weights_batch([], threads=0)


def test_version_matches_primary_library():
    assert __version__ == otweights.__version__
