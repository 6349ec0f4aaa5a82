"""Riemannian geometry induced by noise fields.

The cometric is the sum of outer products of the noise fields; everything
else (metric, Christoffel symbols, scalar curvature, corrected drift z, the
potential f and its gradient) is derived from it by exact differentiation of
the field jets. No finite differences anywhere in this module.

Index conventions for the derivative tensors, with the batch axis first:
  A[m, n]              cometric g*^{mn}
  dA[i, m, n]          d_i g*^{mn}      (d2A, d3A prepend more derivative axes)
  G[m, n]              metric g_{mn}
  dG[p, m, n]          d_p g_{mn}
  Gamma[k, i, j]       Christoffel, upper index first
  dz[k, m]             d_k z^m
  z_cov[m, i]          covariant derivative (nabla z)^m_i

All entry points accept a single point ``(d,)`` or a batch ``(..., d)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EllipticityViolation, NearSingularMetricWarning
from .fields import NoiseModel, VectorField

__all__ = [
    "GeometryJet",
    "geometry_jet",
    "cometric",
    "metric_and_derivatives",
    "christoffel",
    "scalar_curvature",
    "drift_z",
    "generator_apply",
    "om_potential",
]

_es = np.einsum


def _cj(a, b):
    """Contract the noise axis: (P, J, *sa) x (P, J, *sb) -> (P, *sa, *sb).

    Routed through batched matmul so BLAS does the J-reduction.
    """
    P, J = a.shape[0], a.shape[1]
    sa, sb = a.shape[2:], b.shape[2:]
    out = np.matmul(
        a.reshape(P, J, -1).transpose(0, 2, 1), b.reshape(P, J, -1)
    )
    return out.reshape((P,) + sa + sb)


@dataclass
class GeometryJet:
    """All geometric quantities at one (t, x) (or a batch of points).

    ``f_d`` is the plain spatial gradient of f (lower index); ``grad_f`` is
    the index-raised version g* df. ``metric_d`` keeps d_p g_{mn} because the
    discrete path-functional gradient needs it.
    """

    cometric: np.ndarray
    metric: np.ndarray
    det_g: np.ndarray
    christoffel: np.ndarray
    scalar_curvature: np.ndarray
    metric_dt: np.ndarray
    cometric_dt: np.ndarray
    z: np.ndarray
    z_jacobian: np.ndarray
    z_covariant: np.ndarray
    f: np.ndarray
    grad_f: np.ndarray | None
    f_d: np.ndarray | None
    metric_d: np.ndarray


def _check_ellipticity(noise, t, X, A):
    eigs = np.linalg.eigvalsh(A)
    min_eigs = eigs[..., 0]
    idx = int(np.argmin(min_eigs))
    worst = float(min_eigs[idx])
    floor = noise.ellipticity_floor
    if worst < floor:
        t_bad = t if np.ndim(t) == 0 else np.ravel(np.broadcast_to(t, min_eigs.shape))[idx]
        raise EllipticityViolation(t_bad, np.asarray(X[idx]), worst, floor)
    if worst < 10.0 * floor:
        warnings.warn(
            f"cometric eigenvalue {worst:.3e} within 10x of floor {floor:.3e}",
            NearSingularMetricWarning,
            stacklevel=3,
        )


def geometry_jet(
    noise: NoiseModel,
    drift: VectorField | None,
    t,
    x,
    order: int = 3,
) -> GeometryJet:
    """Assemble the full geometric state at (t, x).

    ``order=3`` produces everything including grad f (needs third noise
    jets); ``order=2`` skips grad f and is enough for evaluating the path
    integrand itself. ``t`` may be a scalar or an array matching the batch
    shape of ``x`` (time-varying fields are evaluated pointwise in t).
    """
    if order not in (2, 3):
        raise ValueError("geometry_jet supports order 2 or 3")
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    bshape = X.shape[:-1]
    d = X.shape[-1]
    X = X.reshape(-1, d)
    tt = t
    if np.ndim(t) > 0:
        tt = np.asarray(t, dtype=float).reshape(-1)

    V, D, H, T3, TD, TJ = noise.jets(tt, X, order=order)

    A = _cj(V, V)
    _check_ellipticity(noise, tt, X, A)
    G = np.linalg.inv(A)
    det_g = 1.0 / np.linalg.det(A)

    # --- cometric derivatives (noise-axis contractions) ---
    t1 = _cj(D, V).transpose(0, 2, 1, 3)  # D[j,m,i] V[j,n] -> [i,m,n]
    dA = t1 + t1.swapaxes(-1, -2)

    t1 = _cj(H, V).transpose(0, 2, 3, 1, 4)  # H[j,m,i,k] V[j,n] -> [i,k,m,n]
    t2 = _cj(D, D).transpose(0, 2, 4, 1, 3)  # D[j,m,i] D[j,n,k] -> [i,k,m,n]
    d2A = t1 + t1.swapaxes(-1, -2) + t2 + t2.swapaxes(-4, -3)

    d3A = None
    if order >= 3:
        s1 = _cj(T3, V).transpose(0, 2, 3, 4, 1, 5)  # [i,k,l,m,n]
        hd = _cj(H, D)  # H[j,m,i,k] D[j,n,l] -> [m,i,k,n,l]
        s2a = hd.transpose(0, 2, 3, 5, 1, 4)  # [i,k,l,m,n] = H[m,ik] D[n,l]
        s2b = hd.transpose(0, 2, 5, 3, 1, 4)  # H[m,il] D[n,k]
        s2c = hd.transpose(0, 5, 2, 3, 1, 4)  # H[m,kl] D[n,i]
        d3A = (
            s1
            + s1.swapaxes(-1, -2)
            + s2a
            + s2b
            + s2c
            + s2a.swapaxes(-1, -2)
            + s2b.swapaxes(-1, -2)
            + s2c.swapaxes(-1, -2)
        )

    # --- metric derivatives from the inversion identity ---
    Gb = G[:, None]
    dG = -(Gb @ dA @ Gb)
    d2G = -(
        dG[:, None] @ dA[:, :, None] @ G[:, None, None]
        + G[:, None, None] @ d2A @ G[:, None, None]
        + G[:, None, None] @ dA[:, :, None] @ dG[:, None]
    )
    d3G = None
    if order >= 3:
        G3 = G[:, None, None, None]
        dA3 = dA[:, :, None, None]
        d2A_ik = d2A[:, :, :, None]  # [i,k,1,m,n]
        d2A_il = d2A[:, :, None, :]  # [i,1,l,m,n]
        dG_k = dG[:, None, :, None]  # [1,k,1,m,n]
        dG_l = dG[:, None, None, :]  # [1,1,l,m,n]
        d2G_kl = d2G[:, None]  # [1,k,l,m,n]
        d3G = -(
            d2G_kl @ dA3 @ G3
            + dG_k @ d2A_il @ G3
            + dG_k @ dA3 @ dG_l
            + dG_l @ d2A_ik @ G3
            + G3 @ d3A @ G3
            + G3 @ d2A_ik @ dG_l
            + dG_l @ dA3 @ dG_k
            + G3 @ d2A_il @ dG_k
            + G3 @ dA3 @ d2G_kl
        )

    # log det g derivatives via Jacobi's formula (d log det g = -tr(G dA))
    L1 = -_es("pmn,pinm->pi", G, dA)
    dL1 = -_es("pkmn,pinm->pik", dG, dA) - _es("pmn,piknm->pik", G, d2A)
    d2L1 = None
    if order >= 3:
        d2L1 = (
            -_es("pklmn,pinm->pikl", d2G, dA)
            - _es("pkmn,pilnm->pikl", dG, d2A)
            - _es("plmn,piknm->pikl", dG, d2A)
            - _es("pmn,piklnm->pikl", G, d3A)
        )

    # --- Christoffel symbols and their derivatives ---
    low = np.einsum("pjri->prij", dG) + np.einsum("pirj->prij", dG) - dG
    Gamma = 0.5 * _es("pkr,prij->pkij", A, low)
    dlow = np.einsum("pqjri->pqrij", d2G) + np.einsum("pqirj->pqrij", d2G) - d2G
    dGamma = 0.5 * (
        _es("pqkr,prij->pqkij", dA, low) + _es("pkr,pqrij->pqkij", A, dlow)
    )
    d2Gamma = None
    if order >= 3:
        d2low = (
            np.einsum("pqwjri->pqwrij", d3G)
            + np.einsum("pqwirj->pqwrij", d3G)
            - d3G
        )
        d2Gamma = 0.5 * (
            _es("pqwkr,prij->pqwkij", d2A, low)
            + _es("pwkr,pqrij->pqwkij", dA, dlow)
            + _es("pqkr,pwrij->pqwkij", dA, dlow)
            + _es("pkr,pqwrij->pqwkij", A, d2low)
        )

    # --- Ricci contraction and scalar curvature ---
    gam1 = np.einsum("pkkl->pl", Gamma)
    r1 = np.einsum("pkkij->pij", dGamma)
    r2 = np.einsum("pjkik->pij", dGamma)
    r3 = _es("pl,plij->pij", gam1, Gamma)
    r4 = _es("pkjl,plik->pij", Gamma, Gamma)
    ricci = r1 - r2 + r3 - r4
    S = _es("pij,pij->p", A, ricci)
    dS = None
    if order >= 3:
        dgam1 = np.einsum("pqkkl->pql", dGamma)
        dr1 = np.einsum("pqkkij->pqij", d2Gamma)
        dr2 = np.einsum("pqjkik->pqij", d2Gamma)
        dr3 = _es("pql,plij->pqij", dgam1, Gamma) + _es(
            "pl,pqlij->pqij", gam1, dGamma
        )
        dr4 = _es("pqkjl,plik->pqij", dGamma, Gamma) + _es(
            "pkjl,pqlik->pqij", Gamma, dGamma
        )
        dricci = dr1 - dr2 + dr3 - dr4
        dS = _es("pqij,pij->pq", dA, ricci) + _es("pij,pqij->pq", A, dricci)

    # --- corrected drift z = u + (1/2) sum_j (sigma_j . grad) sigma_j
    #       - (1/2) div g* - (1/4) g* d(log det g) ---
    c = 0.5 * _es("pji,pjmi->pm", V, D)
    dc = 0.5 * (_es("pjik,pjmi->pkm", D, D) + _es("pji,pjmik->pkm", V, H))
    d2c = None
    if order >= 3:
        d2c = 0.5 * (
            _es("pjikl,pjmi->pklm", H, D)
            + _es("pjik,pjmil->pklm", D, H)
            + _es("pjil,pjmik->pklm", D, H)
            + _es("pji,pjmikl->pklm", V, T3)
        )

    divA = np.einsum("piim->pm", dA)
    d_divA = np.einsum("pkiim->pkm", d2A)
    AL1 = _es("pim,pi->pm", A, L1)
    d_AL1 = _es("pkim,pi->pkm", dA, L1) + _es("pim,pik->pkm", A, dL1)

    if drift is not None:
        uval, ujac, uhess, _, _, _ = drift._jet(tt, X, 2)
    else:
        P = X.shape[0]
        uval = np.zeros((P, d))
        ujac = np.zeros((P, d, d))
        uhess = np.zeros((P, d, d, d))

    z = uval + c - 0.5 * divA - 0.25 * AL1
    dz = ujac.swapaxes(-1, -2) + dc - 0.5 * d_divA - 0.25 * d_AL1  # dz[k, m]
    d2z = None
    if order >= 3:
        d2_divA = np.einsum("pkliim->pklm", d3A)
        d2_AL1 = (
            _es("pklim,pi->pklm", d2A, L1)
            + _es("pkim,pil->pklm", dA, dL1)
            + _es("plim,pik->pklm", dA, dL1)
            + _es("pim,pikl->pklm", A, d2L1)
        )
        d2z = np.moveaxis(uhess, 1, -1) + d2c - 0.5 * d2_divA - 0.25 * d2_AL1

    div_z = np.einsum("pkk->p", dz) + 0.5 * _es("pm,pm->p", z, L1)
    d_div_z = None
    if order >= 3:
        d_div_z = (
            np.einsum("pqkk->pq", d2z)
            + 0.5 * _es("pqm,pm->pq", dz, L1)
            + 0.5 * _es("pm,pmq->pq", z, dL1)
        )

    # --- time derivatives of the (co)metric ---
    q1 = _cj(TD, V)
    A_dt = q1 + q1.swapaxes(-1, -2)
    G_dt = -(G @ A_dt @ G)
    trg_gdot = _es("pmn,pmn->p", A, G_dt)
    d_trg = None
    if order >= 3:
        p1 = _cj(TJ, V).transpose(0, 2, 1, 3)  # TJ[j,m,k] V[j,n] -> [k,m,n]
        p2 = _cj(TD, D).transpose(0, 3, 1, 2)  # TD[j,m] D[j,n,k] -> [k,m,n]
        dA_dt = p1 + p1.swapaxes(-1, -2) + p2 + p2.swapaxes(-1, -2)
        # tr_g gdot = -tr(gdot* g)
        d_trg = -_es("pkmn,pnm->pk", dA_dt, G) - _es("pmn,pknm->pk", A_dt, dG)

    f = 0.5 * div_z - S / 12.0 + 0.25 * trg_gdot
    f_d = grad_f = None
    if order >= 3:
        f_d = 0.5 * d_div_z - dS / 12.0 + 0.25 * d_trg
        grad_f = _es("pmq,pq->pm", A, f_d)

    z_cov = dz.swapaxes(-1, -2) + _es("pmir,pr->pmi", Gamma, z)

    def shape(a):
        return a.reshape(bshape + a.shape[1:]) if not single else a[0]

    opt = lambda a: None if a is None else shape(a)
    return GeometryJet(
        cometric=shape(A),
        metric=shape(G),
        det_g=shape(det_g),
        christoffel=shape(Gamma),
        scalar_curvature=shape(S),
        metric_dt=shape(G_dt),
        cometric_dt=shape(A_dt),
        z=shape(z),
        z_jacobian=shape(dz.swapaxes(-1, -2)),
        z_covariant=shape(z_cov),
        f=shape(f),
        grad_f=opt(grad_f),
        f_d=opt(f_d),
        metric_d=shape(dG),
    )


def cometric(noise: NoiseModel, t, x) -> np.ndarray:
    """g* = sum_j sigma_j sigma_j^T, with the ellipticity check."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    bshape = X.shape[:-1]
    d = X.shape[-1]
    X = X.reshape(-1, d)
    V = noise.jets(t, X, order=0)[0]
    A = _cj(V, V)
    _check_ellipticity(noise, t, X, A)
    return A[0] if single else A.reshape(bshape + (d, d))


def metric_and_derivatives(noise: NoiseModel, t, x):
    """Returns (g, dg, d2g, g_dt) by differentiating the inversion identity."""
    jet = geometry_jet(noise, None, t, x, order=2)
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    bshape = X.shape[:-1]
    d = X.shape[-1]
    X = X.reshape(-1, d)
    V, D, H, _, _, _ = noise.jets(t, X, order=2)
    A = _cj(V, V)
    G = np.linalg.inv(A)
    t1 = _cj(D, V).transpose(0, 2, 1, 3)
    dA = t1 + t1.swapaxes(-1, -2)
    t1 = _cj(H, V).transpose(0, 2, 3, 1, 4)
    t2 = _cj(D, D).transpose(0, 2, 4, 1, 3)
    d2A = t1 + t1.swapaxes(-1, -2) + t2 + t2.swapaxes(-4, -3)
    dG = -(G[:, None] @ dA @ G[:, None])
    d2G = -(
        dG[:, None] @ dA[:, :, None] @ G[:, None, None]
        + G[:, None, None] @ d2A @ G[:, None, None]
        + G[:, None, None] @ dA[:, :, None] @ dG[:, None]
    )
    if single:
        dG, d2G = dG[0], d2G[0]
    else:
        dG = dG.reshape(bshape + dG.shape[1:])
        d2G = d2G.reshape(bshape + d2G.shape[1:])
    return jet.metric, dG, d2G, jet.metric_dt


def christoffel(noise: NoiseModel, t, x) -> np.ndarray:
    return geometry_jet(noise, None, t, x, order=2).christoffel


def scalar_curvature(noise: NoiseModel, t, x):
    return geometry_jet(noise, None, t, x, order=2).scalar_curvature


def drift_z(noise: NoiseModel, drift: VectorField | None, t, x):
    """The first-order generator part z and its covariant derivative."""
    jet = geometry_jet(noise, drift, t, x, order=2)
    return jet.z, jet.z_covariant


def generator_apply(noise, drift, t, x, phi) -> float:
    """Apply the generator (1/2) sum_j sigma_j^2 + u to a quadratic test
    function, straight from the sigma jets.

    ``phi`` is ``(c0, b, M)`` for phi(y) = c0 + b.y + y^T M y / 2. This is
    the oracle side of the identity defining z; it never touches the
    geometric assembly.
    """
    _, b, M = phi
    b = np.asarray(b, dtype=float)
    M = np.asarray(M, dtype=float)
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    V, D, _, _, _, _ = noise.jets(t, X, order=1)
    grad_phi = b + _es("ki,...i->...k", M, X)
    # sigma.grad(sigma.grad phi) = sigma^i sigma^k M_ki + sigma^i (d_i sigma^k) (grad phi)_k
    quad = _es("...ji,...jk,ik->...", V, V, M)
    first = _es("...ji,...jki,...k->...", V, D, grad_phi)
    out = 0.5 * (quad + first)
    if drift is not None:
        out = out + _es("...i,...i->...", drift._jet(t, X, 0)[0], grad_phi)
    return float(out[0]) if single else out


def om_potential(noise: NoiseModel, drift: VectorField | None, t, x):
    """f = (1/2) div_g z - S/12 + (1/4) tr_g g_dt and its raised gradient."""
    jet = geometry_jet(noise, drift, t, x, order=3)
    return jet.f, jet.grad_f
