import numpy as np
import pytest

from pedcross import kernels
from pedcross.kernels import reference

CASES = [(5, 1, 1), (7, 3, 1), (3, 1, 1), (3, 1, 2), (5, 2, 2)]


@pytest.mark.parametrize("k,dilation,stride", CASES)
def test_backends_agree(rng, k, dilation, stride):
    if "compiled" not in kernels.available_backends():
        pytest.skip("compiled extension not built")
    pad = dilation * (k - 1) // 2
    x = rng.standard_normal((2, 4, 11, 13)).astype(np.float32)
    w = rng.standard_normal((4, k, k)).astype(np.float32)
    prev = kernels.active_backend()
    try:
        kernels.set_backend("compiled")
        y_c = kernels.dwconv2d_forward(x, w, stride, dilation, pad, pad)
        gy = rng.standard_normal(y_c.shape).astype(np.float32)
        gx_c = kernels.dwconv2d_backward_x(gy, w, 11, 13, stride, dilation,
                                           pad, pad)
        gw_c = kernels.dwconv2d_backward_w(gy, x, k, k, stride, dilation,
                                           pad, pad)
        kernels.set_backend("numpy")
        y_n = kernels.dwconv2d_forward(x, w, stride, dilation, pad, pad)
        gx_n = kernels.dwconv2d_backward_x(gy, w, 11, 13, stride, dilation,
                                           pad, pad)
        gw_n = kernels.dwconv2d_backward_w(gy, x, k, k, stride, dilation,
                                           pad, pad)
    finally:
        kernels.set_backend(prev)
    np.testing.assert_allclose(y_c, y_n, rtol=1e-4, atol=1e-5)
    np.testing.assert_allclose(gx_c, gx_n, rtol=1e-4, atol=1e-5)
    np.testing.assert_allclose(gw_c, gw_n, rtol=1e-4, atol=2e-4)


def test_forward_matches_naive_loop(rng):
    k, dilation, pad = 3, 2, 2
    x = rng.standard_normal((1, 2, 7, 8))
    w = rng.standard_normal((2, k, k))
    y = reference.dwconv2d_forward(x, w, 1, dilation, pad, pad)
    naive = np.zeros_like(y)
    for c in range(2):
        for oy in range(y.shape[2]):
            for ox in range(y.shape[3]):
                acc = 0.0
                for ky in range(k):
                    for kx in range(k):
                        iy = oy - pad + ky * dilation
                        ix = ox - pad + kx * dilation
                        if 0 <= iy < 7 and 0 <= ix < 8:
                            acc += x[0, c, iy, ix] * w[c, ky, kx]
                naive[0, c, oy, ox] = acc
    np.testing.assert_allclose(y, naive, rtol=1e-10)


def test_out_size_formula():
    assert reference.conv_out_size(11, 5, 1, 1, 2) == 11  # "same"
    assert reference.conv_out_size(11, 7, 1, 3, 9) == 11  # dilated "same"
    assert reference.conv_out_size(17, 3, 2, 1, 1) == 9


def test_backend_selection_roundtrip():
    prev = kernels.active_backend()
    kernels.set_backend("numpy")
    assert kernels.active_backend() == "numpy"
    kernels.set_backend(prev)
    with pytest.raises(ValueError, match="unknown"):
        kernels.set_backend("cuda")


def test_kernel_benchmark_reports_both_backends():
    from pedcross.latency import benchmark_kernel_backends

    table = benchmark_kernel_backends(channels=8, size=16, batch=1, n_runs=3)
    assert set(table) == set(kernels.available_backends())
    for cases in table.values():
        assert all(ms > 0 for ms in cases.values())
        assert {"dw5x5_forward_ms", "dw7x7_d3_forward_ms"} <= set(cases)
