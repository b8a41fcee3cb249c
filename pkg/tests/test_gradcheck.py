import numpy as np

from hdmae import tensor as T
from hdmae.gradcheck import OP_CASES, check_fn, fd_gradient, rel_err, run_all
from hdmae.rng import RngStream


def test_every_registered_op_passes():
    results = run_all()
    assert len(results) == len(OP_CASES)
    failed = [r.name for r in results if not r.ok]
    assert not failed, failed


def test_registry_lists_each_op_once():
    names = list(OP_CASES)
    assert len(names) == len(set(names))
    for expected in ("matmul", "softmax_lastdim", "layer_norm", "gelu", "gather_rows", "attention"):
        assert expected in names


def test_injected_broken_gradient_is_caught():
    def broken_case():
        x = RngStream(1).normal((3, 3))

        def fn(t):
            # correct forward, sabotaged backward
            out_data = t.data * 2.0
            return T._apply("broken", (t,), np.sum(out_data), lambda g: (np.zeros_like(t.data),))

        return fn, [x]

    results = run_all(cases={"broken_double": broken_case})
    assert len(results) == 1
    assert results[0].name == "broken_double"
    assert not results[0].ok


def test_fd_gradient_on_quadratic():
    xs = [np.array([1.0, -2.0, 0.5])]
    grads = fd_gradient(lambda arrs: float((arrs[0] ** 2).sum()), xs)
    np.testing.assert_allclose(grads[0], 2 * xs[0], rtol=1e-6)


def test_rel_err_normalizes_small_magnitudes():
    a = np.array([1e-9, 0.0])
    b = np.array([0.0, 0.0])
    assert rel_err(a, b) < 1e-6  # absolute floor of 1 prevents blowup


def test_check_fn_reports_error_magnitude():
    res = check_fn("square", lambda t: T.tsum(T.mul(t, t)), [RngStream(2).normal(5)])
    assert res.ok and res.err < 1e-6
