"""Pointwise tensor algebra: spectral functions of endomorphisms and the product family.

Tensor slots follow a signature string with one character per trailing axis,
'l' for a covariant slot and 'u' for the (single) vector slot, which always
sits second to last. Examples: metric 'll', endomorphism 'ul', endomorphism
valued 1-form 'lul' stored as [i, k, j] = (T(e_i, e_j))^k, curvature 'llul'
stored as [i, j, k, l] = (R(e_i, e_j))^k_l.
"""

import logging
import string

import numpy as np

logger = logging.getLogger(__name__)

_LETTERS = string.ascii_letters


def swap(A: np.ndarray) -> np.ndarray:
    return np.swapaxes(A, -1, -2)


def sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + swap(A))


def expand_like(E: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Insert axes before the last two of E so it broadcasts against T's extra slots."""
    extra = T.ndim - E.ndim
    if extra <= 0:
        return E
    return np.expand_dims(E, axis=tuple(range(E.ndim - 2, E.ndim - 2 + extra)))


def _check_square(*arrays: np.ndarray) -> None:
    n = arrays[0].shape[-1]
    for a in arrays:
        if a.ndim < 2 or a.shape[-1] != n or a.shape[-2] != n:
            raise ValueError(f"Shape mismatch: expected trailing ({n}, {n}), got {a.shape}")


def inv_metric(g: np.ndarray) -> np.ndarray:
    return np.linalg.inv(g)


def raise_index(g: np.ndarray, v: np.ndarray) -> np.ndarray:
    """The endomorphism lift v* = g^-1 v of a symmetric 2-tensor."""
    return np.linalg.solve(g, v)


def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pointwise [A, B] = AB - BA, broadcasting an endomorphism over extra slots."""
    _check_square(A, B)
    A, B = expand_like(A, B), expand_like(B, A)
    try:
        np.broadcast_shapes(A.shape, B.shape)
    except ValueError as e:
        raise ValueError(f"Shape mismatch in commutator: {A.shape} vs {B.shape}") from e
    return A @ B - B @ A


def g_transpose(A: np.ndarray, g: np.ndarray) -> np.ndarray:
    """The g-adjoint g^-1 A^T g, applied slotwise to endomorphism-valued tensors."""
    ginv = expand_like(inv_metric(g), A)
    return ginv @ swap(A) @ expand_like(g, A)


def _symmetric_eig(A: np.ndarray, g: np.ndarray | None):
    """Eigen-decompose a g-symmetric endomorphism through the Cholesky factor of g."""
    if g is None:
        w, Q = np.linalg.eigh(sym(A))
        return w, Q, None, None
    L = np.linalg.cholesky(g)
    Linv = np.linalg.inv(L)
    w, Q = np.linalg.eigh(sym(swap(L) @ A @ swap(Linv)))
    return w, Q, L, Linv


def _rebuild(values: np.ndarray, Q: np.ndarray, L, Linv) -> np.ndarray:
    F = (Q * values[..., None, :]) @ swap(Q)
    if L is None:
        return F
    return swap(Linv) @ F @ swap(L)


def endo_function(A: np.ndarray, fn, g: np.ndarray | None = None, positive: bool = False) -> np.ndarray:
    """Apply a scalar function to a g-symmetric endomorphism field pointwise.

    Args:
        A: Endomorphism field [..., n, n], symmetric with respect to g
            (coordinate-symmetric when g is None).
        fn: Vectorized scalar function applied to the eigenvalues.
        g: Optional metric making A self-adjoint.
        positive: Require strictly positive eigenvalues.

    Raises:
        ValueError: If positive is set and an eigenvalue is not positive.
    """
    _check_square(A)
    w, Q, L, Linv = _symmetric_eig(np.asarray(A, dtype=float), g)
    if positive and np.any(w <= 0):
        raise ValueError(f"Endomorphism has non-positive eigenvalue {float(np.min(w)):.3e}")
    return _rebuild(fn(w), Q, L, Linv)


def endo_exp(A: np.ndarray, g: np.ndarray | None = None) -> np.ndarray:
    return endo_function(A, np.exp, g)


def endo_log(B: np.ndarray, g: np.ndarray | None = None) -> np.ndarray:
    return endo_function(B, np.log, g, positive=True)


def endo_power(B: np.ndarray, s: float, g: np.ndarray | None = None) -> np.ndarray:
    return endo_function(B, lambda w: w**s, g, positive=True)


def endo_sqrt(B: np.ndarray, g: np.ndarray | None = None) -> np.ndarray:
    return endo_power(B, 0.5, g)


def metric_log(g0: np.ndarray, g: np.ndarray) -> np.ndarray:
    """The log coordinate A = -1/2 log(g0^-1 g) of g relative to g0."""
    return -0.5 * endo_log(raise_index(g0, g), g0)


def min_eigenvalue(A: np.ndarray, g: np.ndarray | None = None) -> np.ndarray:
    """Pointwise smallest eigenvalue of a g-symmetric endomorphism."""
    return _symmetric_eig(np.asarray(A, dtype=float), g)[0][..., 0]


def inner(A: np.ndarray, B: np.ndarray, g: np.ndarray | None = None) -> np.ndarray:
    """Pointwise Tr(A B^T_g) for endomorphisms."""
    Bt = swap(B) if g is None else g_transpose(B, g)
    return np.trace(A @ Bt, axis1=-2, axis2=-1)


def tensor_norm_sq(T: np.ndarray, g: np.ndarray, sig: str) -> np.ndarray:
    """Pointwise |T|^2_g, contracting covariant slots with g^-1 and the vector slot with g."""
    if len(sig) == 0:
        return T**2
    ginv = inv_metric(g)
    a = _LETTERS[: len(sig)]
    b = _LETTERS[len(sig): 2 * len(sig)]
    mats = [ginv if c == "l" else g for c in sig]
    spec = f"...{a},...{b}," + ",".join(f"...{x}{y}" for x, y in zip(a, b)) + "->..."
    return np.einsum(spec, T, T, *mats, optimize=True)


def alt(T: np.ndarray, sig: str = "lul") -> np.ndarray:
    """Antisymmetrize in the two form slots: Alt(T)(u, v) = T(u, v) - T(v, u)."""
    if sig == "ll":
        return T - swap(T)
    if sig == "lul":
        return T - np.swapaxes(T, -3, -1)
    raise ValueError(f"alt is defined for 'll' and 'lul' tensors, got '{sig}'")


def contract_endo(H: np.ndarray, T: np.ndarray, sig: str = "lul") -> np.ndarray:
    """H acting as a derivation on the form slots: T(Hu, v) + T(u, Hv)."""
    if sig == "ll":
        return np.einsum("...ai,...aj->...ij", H, T) + np.einsum("...bj,...ib->...ij", H, T)
    if sig == "lul":
        return np.einsum("...ai,...akj->...ikj", H, T) + np.einsum("...bj,...ikb->...ikj", H, T)
    raise ValueError(f"contract_endo is defined for 'll' and 'lul' tensors, got '{sig}'")


def right_product(T: np.ndarray, H: np.ndarray) -> np.ndarray:
    """(T H)(u) = T(u) H for an endomorphism-valued form T."""
    return T @ expand_like(H, T)


def left_product(H: np.ndarray, T: np.ndarray) -> np.ndarray:
    """(H T)(u) = H T(u) for an endomorphism-valued form T."""
    return expand_like(H, T) @ T


def bullet(H: np.ndarray, T: np.ndarray, sig: str) -> np.ndarray:
    """H applied to the first slot of T: (H . T)(u, ...) = T(Hu, ...)."""
    return bullet_k(H, T, 1, sig)


def star_form(B: np.ndarray, A: np.ndarray, g: np.ndarray) -> np.ndarray:
    """(B * A)(u, v) = B(u, e_k) A(e_k, v) for a curvature-type B and an endo-valued 1-form A."""
    return np.einsum("...ab,...uakl,...blv->...ukv", inv_metric(g), B, A, optimize=True)


def circledstar(B: np.ndarray, A: np.ndarray, g: np.ndarray) -> np.ndarray:
    """(B (*) A)(u) = [B(u, e_k), A(e_k)] for a curvature-type B and an endo-valued 1-form A."""
    ginv = inv_metric(g)
    first = np.einsum("...ab,...uakl,...blv->...ukv", ginv, B, A, optimize=True)
    second = np.einsum("...ab,...bkl,...ualv->...ukv", ginv, A, B, optimize=True)
    return first - second


def star_tensor(A: np.ndarray, B: np.ndarray, g: np.ndarray) -> np.ndarray:
    """(A * B)(u, v) = A(e_k)(B(u, v) e_k) for an endo-valued 1-form A and curvature-type B."""
    return np.einsum("...ab,...amc,...uvcb->...umv", inv_metric(g), A, B, optimize=True)


def star_endo(R: np.ndarray, H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """(R * H) xi = Tr_g[(xi -| R) H] = R(xi, e_k) H e_k."""
    return np.einsum("...ab,...iaml,...lb->...mi", inv_metric(g), R, H, optimize=True)


def _split(sig: str) -> tuple[list[int], int | None]:
    cov = [i for i, c in enumerate(sig) if c == "l"]
    upper = sig.index("u") if "u" in sig else None
    return cov, upper


def _grid_ndim(B: np.ndarray, sig_b: str) -> int:
    gdim = B.ndim - len(sig_b)
    if gdim < 0:
        raise ValueError(f"Tensor of shape {B.shape} cannot carry signature '{sig_b}'")
    return gdim


def bullet_k(A: np.ndarray, B: np.ndarray, k: int, sig_b: str) -> np.ndarray:
    """(A ._k B)(u, v) = B(v_1, ..., A(u, v_k), ..., v_q).

    A has layout [u_1, ..., u_{p-1}, m, w]; the result has signature
    'l' * (p - 1) + sig_b.
    """
    gdim = _grid_ndim(B, sig_b)
    ra = A.ndim - gdim
    cov, _ = _split(sig_b)
    if ra < 2:
        raise ValueError("bullet_k needs a vector-valued left factor")
    if not 1 <= k <= len(cov):
        raise ValueError(f"Slot {k} out of range for signature '{sig_b}'")
    pos = cov[k - 1]
    letters = iter(_LETTERS)
    u = "".join(next(letters) for _ in range(ra - 2))
    m, w = next(letters), next(letters)
    b = [next(letters) for _ in sig_b]
    b_in, b_out = list(b), list(b)
    b_in[pos], b_out[pos] = m, w
    spec = f"...{u}{m}{w},...{''.join(b_in)}->...{u}{''.join(b_out)}"
    return np.einsum(spec, A, B, optimize=True)


def _zeros_product(A: np.ndarray, B: np.ndarray, gdim: int, ra_keep: int, tail: tuple) -> np.ndarray:
    grid = np.broadcast_shapes(A.shape[:gdim], B.shape[:gdim])
    return np.zeros(grid + A.shape[gdim: gdim + ra_keep] + tail)


def hat_neg(A: np.ndarray, B: np.ndarray, sig_b: str) -> np.ndarray:
    """A ^-| B: the sum of A ._k B over the form slots of B that are not the endomorphism slot."""
    gdim = _grid_ndim(B, sig_b)
    cov, upper = _split(sig_b)
    count = len(cov) - 1 if upper is not None else len(cov)
    if count <= 0:
        return _zeros_product(A, B, gdim, A.ndim - gdim - 2, B.shape[gdim:])
    return sum(bullet_k(A, B, k, sig_b) for k in range(1, count + 1))


def star_k(A: np.ndarray, B: np.ndarray, k: int, sig_b: str) -> tuple[np.ndarray, str]:
    """(A *_k B)(u, v) = B(v_1, ..., v_{k-1}, A(u), v_k, ...).

    A has layout [u_1, ..., u_{p-1}, m, u_p].

    Returns:
        Tuple of (product, signature of the product).
    """
    gdim = _grid_ndim(B, sig_b)
    ra = A.ndim - gdim
    cov, upper = _split(sig_b)
    if not 1 <= k <= len(cov):
        raise ValueError(f"Slot {k} out of range for signature '{sig_b}'")
    pos = cov[k - 1]
    letters = iter(_LETTERS)
    a = [next(letters) for _ in range(ra)]
    m = a[-2]
    u = a[:-2] + a[-1:]
    b = [next(letters) for _ in sig_b]
    b_in = list(b)
    b_in[pos] = m
    args = u + [b[i] for i in cov if i != pos]
    if upper is None:
        out = args
        sig = "l" * len(args)
    else:
        out = args[:-1] + [b[upper]] + args[-1:]
        sig = "l" * (len(args) - 1) + "ul"
    spec = f"...{''.join(a)},...{''.join(b_in)}->...{''.join(out)}"
    return np.einsum(spec, A, B, optimize=True), sig


def odot_kl(A: np.ndarray, B: np.ndarray, k: int, l: int, g: np.ndarray, sig_b: str) -> np.ndarray:
    """(A (.)_{k,l} B)(u, v) = Tr_g[B(v_1, .., v_{l-1}, ., v_l, .., v_{k-1}, A(u, ., v_k), v_{k+1}, ..)].

    A has layout [u_1, ..., u_{p-2}, c, m, w]; the trace pairs B's slot l with
    A's slot c. The result keeps B's layout with slot l removed.
    """
    gdim = _grid_ndim(B, sig_b)
    ra = A.ndim - gdim
    cov, _ = _split(sig_b)
    if ra < 3:
        raise ValueError("odot_kl needs a left factor with at least two form slots")
    if not 1 <= l <= k <= len(cov) - 1:
        raise ValueError(f"Slots (k={k}, l={l}) out of range for signature '{sig_b}'")
    trace_pos, value_pos = cov[l - 1], cov[k]
    letters = iter(_LETTERS)
    u = "".join(next(letters) for _ in range(ra - 3))
    c, m, w, t = next(letters), next(letters), next(letters), next(letters)
    b = [next(letters) for _ in sig_b]
    b_in = list(b)
    b_in[trace_pos], b_in[value_pos] = t, m
    b_out = list(b)
    b_out[value_pos] = w
    del b_out[trace_pos]
    spec = f"...{t}{c},...{u}{c}{m}{w},...{''.join(b_in)}->...{u}{''.join(b_out)}"
    return np.einsum(spec, inv_metric(g), A, B, optimize=True)


def hat_neg_g(A: np.ndarray, B: np.ndarray, g: np.ndarray, sig_b: str) -> np.ndarray:
    """A ^-|_g B: the sum of A (.)_{k,1} B over k."""
    gdim = _grid_ndim(B, sig_b)
    cov, upper = _split(sig_b)
    count = len(cov) - 2 if upper is not None else len(cov) - 1
    if count <= 0:
        return _zeros_product(A, B, gdim, A.ndim - gdim - 3, B.shape[gdim + 1:])
    return sum(odot_kl(A, B, k, 1, g, sig_b) for k in range(1, count + 1))


def bracket_product(dA: np.ndarray, dB: np.ndarray, g: np.ndarray) -> np.ndarray:
    """{A, B}_g = g Tr_g(nabla_. A nabla_. B) from the stacked derivatives [a, k, j]."""
    return g @ np.einsum("...ab,...akl,...blj->...kj", inv_metric(g), dA, dB, optimize=True)
