"""Weighted Riemannian calculus on metric fields.

Connection, curvature and the Bakry-Emery-Ricci tensor of (g, Omega), the
Omega-Laplacians and divergences, and the classical identities relating them.
Identity helpers never decide pass/fail: they return both sides in an
``IdentitySides`` so tolerance policy stays with the caller.
"""

import logging
import string
from dataclasses import dataclass

import numpy as np

from .algebra import (
    alt,
    bullet,
    commutator,
    expand_like,
    g_transpose,
    hat_neg,
    hat_neg_g,
    inv_metric,
    raise_index,
    star_endo,
    swap,
    sym,
)
from .grid import GridDomain, fd_partial

logger = logging.getLogger(__name__)

_LETTERS = string.ascii_letters
RESIDUAL_FLOOR = 1e-10


@dataclass
class IdentitySides:
    """Left and right side of a pointwise identity, evaluated independently."""

    lhs: np.ndarray
    rhs: np.ndarray
    hypothesis: float = 0.0

    def _masked(self, values: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
        return values if mask is None else values[mask]

    def lhs_norm(self, mask: np.ndarray | None = None) -> float:
        return float(np.max(np.abs(self._masked(self.lhs, mask)), initial=0.0))

    def rhs_norm(self, mask: np.ndarray | None = None) -> float:
        return float(np.max(np.abs(self._masked(self.rhs, mask)), initial=0.0))

    def absolute(self, mask: np.ndarray | None = None) -> float:
        return float(np.max(np.abs(self._masked(self.lhs - self.rhs, mask)), initial=0.0))

    def residual(self, mask: np.ndarray | None = None, floor: float = RESIDUAL_FLOOR) -> float:
        """||lhs - rhs||_inf relative to the larger side, on the masked points.

        When both sides are below ``floor`` the absolute difference is returned.
        """
        scale = max(self.lhs_norm(mask), self.rhs_norm(mask))
        if scale <= floor:
            return self.absolute(mask)
        return self.absolute(mask) / scale


def partials(T: np.ndarray, grid: GridDomain, boundary: str | None = None) -> np.ndarray:
    """All first partials of T stacked into a new leading tensor slot."""
    return np.stack([fd_partial(T, grid, a, boundary=boundary) for a in range(grid.dim)], axis=grid.dim)


def _checked_inverse(g: np.ndarray) -> np.ndarray:
    sign, logdet = np.linalg.slogdet(g)
    if np.any(sign <= 0) or not np.all(np.isfinite(logdet)):
        raise ValueError("Metric is singular or not positive at some grid point")
    return inv_metric(g)


def christoffel(g: np.ndarray, grid: GridDomain, boundary: str | None = None) -> np.ndarray:
    """Levi-Civita coefficients stored as [i, k, j] = Gamma^k_{ij}.

    Raises:
        ValueError: If g is singular somewhere.
    """
    ginv = _checked_inverse(g)
    dg = partials(g, grid, boundary)
    lowered = dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)
    return 0.5 * np.einsum("...kl,...ijl->...ikj", ginv, lowered, optimize=True)


def covariant_derivative(
    T: np.ndarray,
    g: np.ndarray,
    grid: GridDomain,
    sig: str,
    gamma: np.ndarray | None = None,
) -> np.ndarray:
    """nabla_g T with the derivative slot prepended; the result has signature 'l' + sig."""
    if gamma is None:
        gamma = christoffel(g, grid)
    out = partials(T, grid)
    if not sig:
        return out
    z, y = "z", "y"
    slots = [c for c in _LETTERS if c not in "zy"][: len(sig)]
    src = "".join(slots)
    for s, kind in enumerate(sig):
        inner_slots = list(slots)
        inner_slots[s] = y
        x = slots[s]
        if kind == "u":
            spec = f"...{z}{x}{y},...{''.join(inner_slots)}->...{z}{src}"
            out = out + np.einsum(spec, gamma, T, optimize=True)
        else:
            spec = f"...{z}{y}{x},...{''.join(inner_slots)}->...{z}{src}"
            out = out - np.einsum(spec, gamma, T, optimize=True)
    return out


def nabla_ladder(
    T: np.ndarray, g: np.ndarray, grid: GridDomain, sig: str, p: int, gamma: np.ndarray | None = None
) -> list[np.ndarray]:
    """[T, nabla T, ..., nabla^p T]."""
    if gamma is None:
        gamma = christoffel(g, grid)
    ladder = [T]
    for r in range(p):
        ladder.append(covariant_derivative(ladder[-1], g, grid, "l" * r + sig, gamma))
    return ladder


def nabla_p(T: np.ndarray, g: np.ndarray, grid: GridDomain, sig: str, p: int, gamma: np.ndarray | None = None) -> np.ndarray:
    return nabla_ladder(T, g, grid, sig, p, gamma)[-1]


def riemann_curvature(g: np.ndarray, grid: GridDomain, gamma: np.ndarray | None = None) -> np.ndarray:
    """R(d_i, d_j) = nabla_i nabla_j - nabla_j nabla_i, stored as [i, j, k, l]."""
    if gamma is None:
        gamma = christoffel(g, grid)
    dgamma = partials(gamma, grid)
    quad = np.einsum("...ikm,...jml->...ijkl", gamma, gamma, optimize=True)
    return dgamma - np.swapaxes(dgamma, -4, -3) + quad - np.swapaxes(quad, -4, -3)


def ricci(g: np.ndarray, grid: GridDomain, gamma: np.ndarray | None = None) -> np.ndarray:
    R = riemann_curvature(g, grid, gamma)
    return sym(np.einsum("...kjkl->...jl", R))


def scalar_curvature(g: np.ndarray, grid: GridDomain) -> np.ndarray:
    return np.trace(raise_index(g, ricci(g, grid)), axis1=-2, axis2=-1)


def round_sphere_metric(grid: GridDomain, radius: float = 1.0) -> np.ndarray:
    """Stereographic round metric 4 r^2 / (1 + |x|^2)^2 dx^2; its Ricci tensor is g / r^2 in 2D."""
    coords = grid.coordinates()
    conformal = 4 * radius**2 / (1 + sum(c**2 for c in coords)) ** 2
    return conformal[..., None, None] * np.eye(grid.dim)


def log_density(g: np.ndarray, grid: GridDomain) -> np.ndarray:
    """f = log(dV_g / Omega) = 1/2 log det g - log omega, det taken in coordinates."""
    _, logdet = np.linalg.slogdet(g)
    return 0.5 * logdet - np.log(grid.omega)


def _hessian_scalar(
    f: np.ndarray, grid: GridDomain, gamma: np.ndarray, boundary: str | None = None
) -> np.ndarray:
    n = grid.dim
    df = partials(f, grid, boundary)
    d2 = np.empty(grid.shape + (n, n))
    for a in range(n):
        d2[..., a, a] = fd_partial(f, grid, a, order=2, boundary=boundary)
        for b in range(a + 1, n):
            d2[..., a, b] = d2[..., b, a] = fd_partial(
                fd_partial(f, grid, a, boundary=boundary), grid, b, boundary=boundary
            )
    return d2 - np.einsum("...ikj,...k->...ij", gamma, df)


def bakry_emery_ricci(g: np.ndarray, grid: GridDomain, boundary: str | None = None) -> np.ndarray:
    """Ric_g(Omega) = Ric(g) + Hess_g log(dV_g / Omega).

    With boundary="neumann" the metric-dependent parts are differentiated with
    even reflection, while the fixed -log(omega) part keeps one-sided stencils.
    """
    gamma = christoffel(g, grid, boundary)
    _, logdet = np.linalg.slogdet(g)
    hess = _hessian_scalar(0.5 * logdet, grid, gamma, boundary) + _hessian_scalar(
        -np.log(grid.omega), grid, gamma
    )
    return sym(ricci(g, grid, gamma) + hess)


def ric_star_omega(g: np.ndarray, grid: GridDomain, boundary: str | None = None) -> np.ndarray:
    """The endomorphism Ric*_g(Omega) = g^-1 Ric_g(Omega)."""
    return raise_index(g, bakry_emery_ricci(g, grid, boundary))


def grad_log_density(g: np.ndarray, grid: GridDomain) -> np.ndarray:
    """The vector field nabla_g f."""
    df = partials(log_density(g, grid), grid)
    return np.einsum("...ab,...b->...a", inv_metric(g), df)


def _contract_first_covariant(D: np.ndarray, ginv: np.ndarray, sig: str) -> np.ndarray:
    """Contract the derivative slot of D = nabla T with the first covariant slot of T."""
    s = sig.index("l")
    letters = list(_LETTERS[2: len(sig) + 2])
    t_in = list(letters)
    t_in[s] = "a"
    out = letters[:s] + letters[s + 1:]
    spec = f"...ab,...b{''.join(t_in)}->...{''.join(out)}"
    return np.einsum(spec, ginv, D, optimize=True)


def _insert_vector(T: np.ndarray, v: np.ndarray, sig: str) -> np.ndarray:
    s = sig.index("l")
    letters = list(_LETTERS[2: len(sig) + 2])
    t_in = list(letters)
    t_in[s] = "a"
    out = letters[:s] + letters[s + 1:]
    return np.einsum(f"...a,...{''.join(t_in)}->...{''.join(out)}", v, T, optimize=True)


def adjoint_nabla_omega(
    T: np.ndarray,
    g: np.ndarray,
    grid: GridDomain,
    sig: str,
    omega: bool = True,
    gamma: np.ndarray | None = None,
) -> np.ndarray:
    """nabla*_Omega T = -Tr_g (nabla T)(e, e, ...) + T(nabla f, ...), on T's first covariant slot.

    With omega=False the drift term is dropped and the plain adjoint nabla*_g
    is returned.
    """
    if "l" not in sig:
        raise ValueError(f"Adjoint needs a covariant slot, got signature '{sig}'")
    ginv = inv_metric(g)
    D = covariant_derivative(T, g, grid, sig, gamma)
    out = -_contract_first_covariant(D, ginv, sig)
    if omega:
        out = out + _insert_vector(T, grad_log_density(g, grid), sig)
    return out


def nabla_star(T: np.ndarray, g: np.ndarray, grid: GridDomain, sig: str, gamma: np.ndarray | None = None) -> np.ndarray:
    return adjoint_nabla_omega(T, g, grid, sig, omega=False, gamma=gamma)


def omega_div(alpha: np.ndarray, g: np.ndarray, grid: GridDomain) -> np.ndarray:
    """div^Omega of a 1-form or of the first slot of a tensor: -nabla*_Omega."""
    sig = "l" * (alpha.ndim - grid.dim)
    return -adjoint_nabla_omega(alpha, g, grid, sig)


def _axis_operator(grid: GridDomain, axis: int) -> np.ndarray:
    """Matrix of the first-derivative stencil along one axis."""
    n = grid.shape[axis]
    line = GridDomain(
        shape=(n,),
        spacing=(grid.spacing[axis],),
        origin=(grid.origin[axis],),
        periodic=(grid.periodic[axis],),
        omega=np.ones(n),
        accuracy=grid.accuracy,
        omega_cutoff=np.inf,
    )
    return fd_partial(np.eye(n), line, 0)


def _apply_axis(matrix: np.ndarray, u: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(matrix, u, axes=([1], [axis])), 0, axis)


def _scalar_gradient_ops(u: np.ndarray, grid: GridDomain) -> list[np.ndarray]:
    return [_apply_axis(_axis_operator(grid, a), u, a) for a in range(grid.dim)]


def omega_dirichlet_form(u: np.ndarray, v: np.ndarray, g: np.ndarray, grid: GridDomain) -> float:
    """The discrete pairing sum w g^{ab} D_a u D_b v that the flux Laplacian is adjoint to."""
    du = np.stack(_scalar_gradient_ops(u, grid), axis=-1)
    dv = np.stack(_scalar_gradient_ops(v, grid), axis=-1)
    pointwise = np.einsum("...ab,...a,...b->...", inv_metric(g), du, dv)
    return float(np.sum(pointwise * grid.weights))


def _flux_laplacian(u: np.ndarray, g: np.ndarray, grid: GridDomain) -> np.ndarray:
    ginv = inv_metric(g)
    w = grid.weights
    du = _scalar_gradient_ops(u, grid)
    out = np.zeros(grid.shape)
    for a in range(grid.dim):
        flux = w * sum(ginv[..., a, b] * du[b] for b in range(grid.dim))
        out = out + _apply_axis(_axis_operator(grid, a).T, flux, a)
    return out / w


def laplacian_omega(
    g: np.ndarray,
    T: np.ndarray,
    grid: GridDomain,
    sig: str = "",
    scheme: str = "generic",
    gamma: np.ndarray | None = None,
) -> np.ndarray:
    """Delta^Omega_g T = nabla*_Omega nabla T = -Tr_g nabla^2 T + nabla_{nabla f} T.

    Args:
        g: Metric field.
        T: Field of signature sig.
        grid: Grid of both fields.
        sig: Tensor signature of T ('' for scalars).
        scheme: "generic" composes covariant derivatives; "flux" (scalars only)
            is the conservative form, exactly adjoint to omega_dirichlet_form.
    """
    if scheme == "flux":
        if sig:
            raise ValueError("The flux scheme is only defined for scalar fields")
        return _flux_laplacian(T, g, grid)
    if scheme != "generic":
        raise ValueError(f"Unknown Laplacian scheme '{scheme}'")
    if gamma is None:
        gamma = christoffel(g, grid)
    D = covariant_derivative(T, g, grid, sig, gamma)
    return adjoint_nabla_omega(D, g, grid, "l" + sig, gamma=gamma)


def div_underline(T: np.ndarray, g: np.ndarray, grid: GridDomain, gamma: np.ndarray | None = None) -> np.ndarray:
    """Contract the derivative of an End-valued 2-form with its endomorphism input slot."""
    D = covariant_derivative(T, g, grid, "llul", gamma)
    return np.einsum("...ml,...mijkl->...ikj", inv_metric(g), D, optimize=True)


def div_underline_omega(T: np.ndarray, g: np.ndarray, grid: GridDomain, gamma: np.ndarray | None = None) -> np.ndarray:
    """div_Omega T = div T - T(., .) nabla f, a T_X-valued 2-form in 'lul' layout."""
    drift = np.einsum("...ijkl,...l->...ikj", T, grad_log_density(g, grid), optimize=True)
    return div_underline(T, g, grid, gamma) - drift


def alt_nabla(H: np.ndarray, g: np.ndarray, grid: GridDomain, gamma: np.ndarray | None = None) -> np.ndarray:
    """nabla_{T_X} H = Alt(nabla H) for an endomorphism viewed as a T_X-valued 1-form."""
    return alt(covariant_derivative(H, g, grid, "ul", gamma), "lul")


def d_operator(v: np.ndarray, g: np.ndarray, grid: GridDomain, gamma: np.ndarray | None = None) -> np.ndarray:
    """D_g v = (cyclic sum of nabla v) - 2 nabla v, a covariant 3-tensor."""
    Dv = covariant_derivative(v, g, grid, "ll", gamma)
    return -Dv + np.swapaxes(Dv, -3, -2) + np.moveaxis(Dv, -3, -1)


def curvature_bracket_norm(R: np.ndarray, T: np.ndarray, sig: str) -> float:
    """max |[R(e_i, e_j), xi -| T]| over the endomorphism slices of T."""
    if "u" not in sig:
        return 0.0
    letters = list(_LETTERS[4: 4 + len(sig)])
    k, w = letters[-2], letters[-1]
    rest = "".join(letters[:-2])
    left = np.einsum(f"...ab{k}z,...{rest}z{w}->...ab{rest}{k}{w}", R, T, optimize=True)
    right = np.einsum(f"...{rest}{k}z,...abz{w}->...ab{rest}{k}{w}", T, R, optimize=True)
    return float(np.max(np.abs(left - right), initial=0.0))


def com_cov_residual(H: np.ndarray, g: np.ndarray, grid: GridDomain, sig: str = "ul") -> IdentitySides:
    """nabla^2 H(i, j) - nabla^2 H(j, i) against [R(d_i, d_j), H] for an endomorphism H."""
    gamma = christoffel(g, grid)
    D2 = nabla_p(H, g, grid, sig, 2, gamma)
    lhs = D2 - np.swapaxes(D2, grid.dim, grid.dim + 1)
    R = riemann_curvature(g, grid, gamma)
    rhs = commutator(R, expand_like(H, R)) if sig == "ul" else np.zeros_like(lhs)
    return IdentitySides(lhs=lhs, rhs=rhs)


def om_contracted_bianchi(g: np.ndarray, grid: GridDomain) -> IdentitySides:
    """div_Omega R_g against -nabla_{T_X} Ric*_g(Omega)."""
    gamma = christoffel(g, grid)
    R = riemann_curvature(g, grid, gamma)
    lhs = div_underline_omega(R, g, grid, gamma)
    rhs = -alt_nabla(ric_star_omega(g, grid), g, grid, gamma)
    return IdentitySides(lhs=lhs, rhs=rhs)


def weitzenbock_tx(H: np.ndarray, g: np.ndarray, grid: GridDomain) -> IdentitySides:
    """Hodge Omega-Laplacian of H as a T_X-valued 1-form against Delta^Omega H - R * H + H Ric*(Omega)."""
    gamma = christoffel(g, grid)
    divergence = adjoint_nabla_omega(H, g, grid, "ul", gamma=gamma)
    lhs = swap(covariant_derivative(divergence, g, grid, "u", gamma)) + adjoint_nabla_omega(
        alt_nabla(H, g, grid, gamma), g, grid, "lul", gamma=gamma
    )
    R = riemann_curvature(g, grid, gamma)
    rhs = laplacian_omega(g, H, grid, "ul", gamma=gamma) - star_endo(R, H, g) + H @ ric_star_omega(g, grid)
    return IdentitySides(lhs=lhs, rhs=rhs)


def endo_div_formula(u: np.ndarray, g: np.ndarray, grid: GridDomain) -> IdentitySides:
    """-(nabla*_Omega D_g u)*_g against nabla*_Omega E + (nabla*_Omega E)^T_g - Delta^Omega u*, E = nabla_{T_X} u*."""
    gamma = christoffel(g, grid)
    lhs = -raise_index(g, adjoint_nabla_omega(d_operator(u, g, grid, gamma), g, grid, "lll", gamma=gamma))
    ustar = raise_index(g, u)
    E = adjoint_nabla_omega(alt_nabla(ustar, g, grid, gamma), g, grid, "lul", gamma=gamma)
    rhs = E + g_transpose(E, g) - laplacian_omega(g, ustar, grid, "ul", gamma=gamma)
    return IdentitySides(lhs=lhs, rhs=rhs)


def _first_order_commutator(
    B: np.ndarray, DB: np.ndarray, sig: str, g: np.ndarray, R: np.ndarray, div_R: np.ndarray, ric_star: np.ndarray
) -> np.ndarray:
    rhs = bullet(ric_star, DB, "l" + sig) + 2 * hat_neg_g(R, DB, g, "l" + sig)
    if sig:
        rhs = rhs + hat_neg(div_R, B, sig)
    return rhs


def commutator_nabla_laplacian(A: np.ndarray, g: np.ndarray, grid: GridDomain, sig: str, p: int = 1) -> IdentitySides:
    """[nabla^p, Delta^Omega] A against the telescoped first-order commutators.

    For p = 1 the right side is Ric*(Omega) . nabla A + 2 R ^-|_g nabla A +
    (nabla*_Omega R) ^-| A; for larger p each nabla^r A (r < p) contributes that
    expression differentiated p - 1 - r more times. The formula needs
    [R, xi -| nabla^r A] = 0 for r = 0..p; the size of that bracket is reported
    as ``hypothesis`` rather than enforced.
    """
    if p < 1:
        raise ValueError(f"The commutator needs at least 1 derivative, got p={p}")
    gamma = christoffel(g, grid)
    ladder = nabla_ladder(A, g, grid, sig, p, gamma)
    lhs = nabla_p(laplacian_omega(g, A, grid, sig, gamma=gamma), g, grid, sig, p, gamma) - laplacian_omega(
        g, ladder[p], grid, "l" * p + sig, gamma=gamma
    )
    R = riemann_curvature(g, grid, gamma)
    div_R = adjoint_nabla_omega(R, g, grid, "llul", gamma=gamma)
    ric_star = ric_star_omega(g, grid)
    rhs = np.zeros_like(lhs)
    for r in range(p):
        level_sig = "l" * r + sig
        first = _first_order_commutator(ladder[r], ladder[r + 1], level_sig, g, R, div_R, ric_star)
        rhs = rhs + nabla_p(first, g, grid, "l" + level_sig, p - 1 - r, gamma)
    hypothesis = sum(curvature_bracket_norm(R, ladder[r], "l" * r + sig) for r in range(p + 1))
    if hypothesis > 1e-8:
        logger.warning(f"Commutator formula applied off hypothesis: |[R, nabla^r A]| = {hypothesis:.3e}")
    return IdentitySides(lhs=lhs, rhs=rhs, hypothesis=hypothesis)
