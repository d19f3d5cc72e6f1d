"""Third-order tensor algebra built on the t-product.

A third-order tensor is an ``ndarray`` of shape ``(N1, N2, N3)`` holding
float64 values.  Frontal slices (``x[:, :, k]``) are the natural unit of
most operations here: the block-circulant matrix ``bcirc`` stacks them
into a structured matrix, the t-product multiplies tensors through that
structure, and the t-SVD factors a tensor into t-orthogonal parts by
running one complex SVD per Fourier-domain slice.

Mode-``l`` unfolding follows the usual lexicographic convention: entry
``(i1, i2, i3)`` lands in row ``i_l`` and column
``1 + sum_{k != l} (i_k - 1) * J_k`` with ``J_k = prod_{m < k, m != l} N_m``
(1-based), i.e. the remaining modes vary fastest in increasing order.

The module also defines the ``.t3d`` container used to persist tensors:
a 16-byte magic string, one JSON header line, then raw little-endian
float64 values in C order.
"""

from __future__ import annotations

import json
from typing import NamedTuple

import numpy as np

__all__ = [
    "unfold",
    "fold",
    "n_mode_product",
    "bcirc_dense",
    "t_product",
    "t_transpose",
    "identity_tensor",
    "mode3_dft",
    "mode3_idft",
    "t_svd",
    "TSVDFactors",
    "read_t3d",
    "write_t3d",
]

#: residue ceiling for inverse transforms that must come back real
IMAG_TOL = 1e-9


def _check_tensor(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"expected a third-order tensor, got ndim={x.ndim}")
    return x


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of a third-order tensor into a matrix.

    Parameters
    ----------
    x : ndarray, shape (N1, N2, N3)
    mode : int
        One of 1, 2, 3.  Row index of the result is the ``mode``-th
        tensor index; columns enumerate the remaining indices with the
        lower-numbered mode varying fastest.

    Returns
    -------
    ndarray, shape (N_mode, prod of the other dims)
    """
    x = _check_tensor(x)
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    m = mode - 1
    return np.reshape(np.moveaxis(x, m, 0), (x.shape[m], -1), order="F")


def fold(mat: np.ndarray, mode: int, dims: tuple[int, int, int]) -> np.ndarray:
    """Inverse of :func:`unfold`: rebuild the tensor with shape ``dims``."""
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ValueError("dims must have length 3")
    m = mode - 1
    rest = tuple(dims[k] for k in range(3) if k != m)
    mat = np.asarray(mat)
    if mat.shape != (dims[m], rest[0] * rest[1]):
        raise ValueError(
            f"matrix shape {mat.shape} does not match dims {dims} in mode {mode}"
        )
    return np.moveaxis(np.reshape(mat, (dims[m],) + rest, order="F"), 0, m)


def n_mode_product(x: np.ndarray, u: np.ndarray, mode: int) -> np.ndarray:
    """Multiply the mode-``mode`` fibers of ``x`` by the matrix ``u``.

    Satisfies ``unfold(n_mode_product(x, u, l), l) == u @ unfold(x, l)``.
    """
    x = _check_tensor(x)
    u = np.asarray(u)
    if u.ndim != 2:
        raise ValueError("u must be a matrix")
    if u.shape[1] != x.shape[mode - 1]:
        raise ValueError(
            f"u has {u.shape[1]} columns but mode-{mode} dimension is {x.shape[mode - 1]}"
        )
    dims = list(x.shape)
    dims[mode - 1] = u.shape[0]
    return fold(u @ unfold(x, mode), mode, tuple(dims))


def bcirc_dense(x: np.ndarray) -> np.ndarray:
    """Materialize the block-circulant matrix of a third-order tensor.

    Block row ``i``, block column ``j`` holds frontal slice
    ``(i - j) mod N3``, so the first block column stacks the slices in
    order and each further column is circularly shifted down.  Built by
    index arithmetic only; intended for oracles and small problems
    (shape is ``(N3*N1, N3*N2)``).
    """
    x = _check_tensor(x)
    n1, n2, n3 = x.shape
    shift = (np.arange(n3)[:, None] - np.arange(n3)[None, :]) % n3
    # gather slice (i-j) mod N3 into block position (i, j), then flatten blocks
    blocks = x[:, :, shift]  # (N1, N2, N3, N3)
    return blocks.transpose(2, 0, 3, 1).reshape(n3 * n1, n3 * n2)


def t_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """t-product of two third-order tensors.

    Equals folding ``bcirc_dense(a) @ [stacked frontal slices of b]``
    back into a tensor, computed here slice-wise in the mode-3 Fourier
    domain.  Shapes ``(N1, N2, N3) * (N2, N4, N3) -> (N1, N4, N3)``.
    """
    a = _check_tensor(a)
    b = _check_tensor(b)
    if a.shape[2] != b.shape[2]:
        raise ValueError(f"mode-3 dims differ: {a.shape[2]} vs {b.shape[2]}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dims differ: {a.shape[1]} vs {b.shape[0]}")
    n3 = a.shape[2]
    af = np.fft.rfft(a, axis=2)
    bf = np.fft.rfft(b, axis=2)
    cf = np.einsum("ijk,jlk->ilk", af, bf)
    return np.fft.irfft(cf, n=n3, axis=2)


def t_transpose(x: np.ndarray) -> np.ndarray:
    """t-transpose: transpose each frontal slice, reverse slices 2..N3."""
    x = _check_tensor(x)
    return np.concatenate([x[:, :, :1], x[:, :, :0:-1]], axis=2).transpose(1, 0, 2)


def identity_tensor(n: int, n3: int) -> np.ndarray:
    """Identity for the t-product: first slice is I_n, the rest zero."""
    e = np.zeros((n, n, n3))
    e[:, :, 0] = np.eye(n)
    return e


def mode3_dft(x: np.ndarray) -> np.ndarray:
    """Unnormalized DFT along mode 3.

    The returned complex slices are exactly the diagonal blocks that the
    (normalized-DFT x identity) similarity produces from
    ``bcirc_dense(x)``.  For real input, slice ``n`` and slice ``N3 - n``
    are complex conjugates.
    """
    return np.fft.fft(_check_tensor(x), axis=2)


def mode3_idft(blocks: np.ndarray) -> np.ndarray:
    """Inverse of :func:`mode3_dft`; result must come back real.

    Raises
    ------
    ValueError
        If the imaginary residue exceeds ``IMAG_TOL`` relative to the
        result's Frobenius norm, which signals a broken conjugate
        symmetry upstream.
    """
    blocks = _check_tensor(blocks)
    y = np.fft.ifft(blocks, axis=2)
    scale = max(np.linalg.norm(y), np.finfo(float).tiny)
    residue = np.linalg.norm(y.imag) / scale
    if residue > IMAG_TOL:
        raise ValueError(
            f"inverse mode-3 DFT has imaginary residue {residue:.3e} "
            f"(tolerance {IMAG_TOL:.1e})"
        )
    return np.ascontiguousarray(y.real)


class TSVDFactors(NamedTuple):
    """t-SVD factors: ``x = u * s * t_transpose(v)`` under the t-product.

    ``u`` is (N1, N1, N3) t-orthogonal, ``v`` is (N2, N2, N3)
    t-orthogonal and ``s`` is (N1, N2, N3) with every Fourier-domain
    slice diagonal, nonnegative and sorted in decreasing order.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


def t_svd(x: np.ndarray) -> TSVDFactors:
    """t-SVD via one complex SVD per Fourier-domain frontal slice.

    Conjugate symmetry of the real input is exploited: only the first
    ``N3//2 + 1`` slices are factored and the rest are implied, which
    also guarantees the returned factors are exactly real.
    """
    x = _check_tensor(x)
    n1, n2, n3 = x.shape
    nb = n3 // 2 + 1
    xf = np.fft.rfft(x, axis=2)
    uf = np.zeros((n1, n1, nb), dtype=complex)
    sf = np.zeros((n1, n2, nb), dtype=complex)
    vf = np.zeros((n2, n2, nb), dtype=complex)
    k = min(n1, n2)
    for n in range(nb):
        block = xf[:, :, n]
        if n == 0 or (n3 % 2 == 0 and n == nb - 1):
            # these slices are real; a real SVD keeps the factors real
            block = block.real
        u_n, s_n, vh_n = np.linalg.svd(block, full_matrices=True)
        uf[:, :, n] = u_n
        sf[:k, :k, n][np.diag_indices(k)] = s_n
        vf[:, :, n] = vh_n.conj().T
    return TSVDFactors(
        u=np.fft.irfft(uf, n=n3, axis=2),
        s=np.fft.irfft(sf, n=n3, axis=2),
        v=np.fft.irfft(vf, n=n3, axis=2),
    )


# ---------------------------------------------------------------------------
# .t3d container

T3D_MAGIC = b"SPECTRE-T3D\x00".ljust(16, b"\x00")


def write_t3d(path, x: np.ndarray) -> None:
    """Write a third-order tensor to ``path`` in the .t3d container."""
    x = _check_tensor(np.asarray(x, dtype=np.float64))
    header = {"dims": list(x.shape), "dtype": "f64", "order": "C"}
    with open(path, "wb") as fh:
        fh.write(T3D_MAGIC)
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def read_t3d(path) -> np.ndarray:
    """Read a .t3d file, validating magic, header and payload size."""
    with open(path, "rb") as fh:
        magic = fh.read(16)
        if magic != T3D_MAGIC:
            raise ValueError(f"{path}: not a t3d file (bad magic {magic!r})")
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: unreadable t3d header") from exc
        dims = header.get("dims")
        if (
            not isinstance(dims, list)
            or len(dims) != 3
            or not all(isinstance(d, int) and d > 0 for d in dims)
        ):
            raise ValueError(f"{path}: bad dims {dims!r}")
        if header.get("dtype") != "f64":
            raise ValueError(f"{path}: unsupported dtype {header.get('dtype')!r}")
        if header.get("order") != "C":
            raise ValueError(f"{path}: unsupported order {header.get('order')!r}")
        payload = fh.read()
    expected = 8 * dims[0] * dims[1] * dims[2]
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload holds {len(payload)} bytes, header implies {expected}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
