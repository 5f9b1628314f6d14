"""Pure-numpy fallback kernels (sliding windows + BLAS contractions).

Layout contract, shared with the Cython backend:
  x: (batch, channels, time)            float64, C-contiguous
  w: (filters, kernel)                  float64
  out/grad: (batch, filters, channels, time_out)
  out[b, f, c, t] = sum_k x[b, c, t*stride + k] * w[f, k]
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    win = sliding_window_view(x, kernel, axis=2)
    return win[:, :, ::stride, :]


def conv1d_forward(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    win = _windows(x, w.shape[1], stride)  # (B, C, T', K)
    out = np.tensordot(win, w, axes=([3], [1]))  # (B, C, T', F)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv1d_backward_w(grad: np.ndarray, x: np.ndarray, stride: int, kernel: int) -> np.ndarray:
    win = _windows(x, kernel, stride)  # (B, C, T', K)
    # (F, K) <- sum over b, c, t of grad[b,f,c,t] * win[b,c,t,k]
    return np.einsum("bfct,bctk->fk", grad, win, optimize=True)


def conv1d_backward_x(grad: np.ndarray, w: np.ndarray, stride: int, t_in: int) -> np.ndarray:
    batch, filters, channels, t_out = grad.shape
    kernel = w.shape[1]
    # (B, C, T', K) <- grad contracted with the filter bank
    gk = np.tensordot(grad.transpose(0, 2, 3, 1), w, axes=([3], [0]))
    dx = np.zeros((batch, channels, t_in), dtype=np.float64)
    for k in range(kernel):
        dx[:, :, k : k + t_out * stride : stride] += gk[:, :, :, k]
    return dx


def fft_stages(z: np.ndarray, w: np.ndarray) -> None:
    """Iterative DIT butterflies, in place; rows already bit-reverse permuted.

    z: (rows, m) complex128, m a power of two; w: exp(-2j*pi*j/m) for j < m/2.
    """
    rows, m = z.shape
    size = 2
    while size <= m:
        half = size // 2
        tw = w[:: m // size]
        view = z.reshape(rows, m // size, size)
        even = view[:, :, :half]
        odd = view[:, :, half:]
        t = odd * tw
        odd[:] = even - t
        even[:] += t
        size *= 2
