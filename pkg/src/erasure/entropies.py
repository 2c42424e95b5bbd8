"""One-shot and asymptotic entropic quantities, all in bits.

The centerpiece is the smooth max-relative entropy, taken as the infimum
of the max-relative entropy over the purified-distance ball around the
first argument (restricted to normalized states).  It is computed by
bisection on the exponent with an inner convex feasibility step: maximize
fidelity to the input subject to the cap ``rho' <= 2^lambda sigma``, solved
by Frank-Wolfe with an exact spectral linear oracle.  The stopping rules
are: a feasibility step ends as soon as the achieved fidelity crosses the
target or the Frank-Wolfe duality gap certifies it cannot, and the
bisection ends when the exponent bracket is narrower than
``resolution_bits``.

An independent classical oracle (`classical_smooth_max_relative_entropy`)
covers commuting inputs by direct water-filling over probability vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .states import (
    DensityMatrix,
    LayoutError,
    RegisterLayout,
    SUPPORT_RTOL,
    _unchecked,
    hermitian_sqrt,
    purified_distance,
    trace_distance,
)

METHOD_EXACT = "exact-eigen"
METHOD_BISECTION = "bisection-feasibility"
METHOD_CLASSICAL = "classical-bruteforce"
METHOD_SECOND_ORDER = "second-order-expansion"


class SupportError(ValueError):
    """The first argument's support leaves the second argument's."""


@dataclass(frozen=True)
class EntropyEstimate:
    """A value in bits plus how it was obtained.

    ``certificate`` (when present) is the smoothed state witnessing the
    value; ``bracket`` is the final bisection bracket for iterative
    methods.  ``value`` may be ``inf`` when a support condition fails.
    """

    value: float
    epsilon: float = 0.0
    method: str = METHOD_EXACT
    certificate: DensityMatrix | None = None
    bracket: tuple[float, float] | None = None
    converged: bool = True
    lower_bound: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.epsilon < 1.0):
            raise ValueError(f"epsilon {self.epsilon} outside [0, 1)")


# ---------------------------------------------------------------------------
# spectral helpers
# ---------------------------------------------------------------------------


def _eig_state(state: DensityMatrix):
    w, v = np.linalg.eigh(state.matrix)
    return np.clip(w, 0.0, None), v


def _support_split(w: np.ndarray):
    thresh = SUPPORT_RTOL * max(float(w[-1]), 1e-300)
    return w > thresh


def _check_layouts(rho: DensityMatrix, sigma: DensityMatrix):
    if rho.layout != sigma.layout:
        raise LayoutError("layouts differ")


def _mass_outside_support(rho: DensityMatrix, w_sigma, v_sigma) -> float:
    null = ~_support_split(w_sigma)
    if not null.any():
        return 0.0
    vn = v_sigma[:, null]
    return float(np.real(np.einsum("ij,ik,kj->", vn.conj(), rho.matrix, vn)))


def von_neumann_entropy(state: DensityMatrix) -> float:
    """``-Tr(rho log2 rho)``."""
    w = np.clip(np.linalg.eigvalsh(state.matrix), 0.0, None)
    w = w[w > 0]
    return float(-(w * np.log2(w)).sum())


def _log2_psd(matrix: np.ndarray) -> np.ndarray:
    """Base-2 matrix logarithm on the support, zero on the kernel."""
    w, v = np.linalg.eigh(matrix)
    w = np.clip(w, 0.0, None)
    keep = _support_split(w)
    logs = np.zeros_like(w)
    logs[keep] = np.log2(w[keep])
    return (v * logs) @ v.conj().T


def relative_entropy(rho: DensityMatrix, sigma: DensityMatrix) -> EntropyEstimate:
    """``Tr(rho log2 rho) - Tr(rho log2 sigma)``; ``inf`` off support."""
    _check_layouts(rho, sigma)
    w_r = np.clip(np.linalg.eigvalsh(rho.matrix), 0.0, None)
    w_s, v_s = _eig_state(sigma)
    if _mass_outside_support(rho, w_s, v_s) > 1e-9:
        return EntropyEstimate(math.inf, method=METHOD_EXACT)
    pos = w_r > 0
    plogp = float((w_r[pos] * np.log2(w_r[pos])).sum())
    keep = _support_split(w_s)
    overlaps = np.real(
        np.einsum("ij,ik,kj->j", v_s.conj(), rho.matrix, v_s)
    )
    plogq = float((overlaps[keep] * np.log2(w_s[keep])).sum())
    return EntropyEstimate(plogp - plogq, method=METHOD_EXACT)


def relative_entropy_variance(
    rho: DensityMatrix, sigma: DensityMatrix
) -> EntropyEstimate:
    """``Tr(rho (log2 rho - log2 sigma)^2) - D(rho||sigma)^2``."""
    _check_layouts(rho, sigma)
    d = relative_entropy(rho, sigma)
    if not math.isfinite(d.value):
        raise SupportError("support condition violated")
    x = _log2_psd(rho.matrix) - _log2_psd(sigma.matrix)
    second = float(np.real(np.trace(rho.matrix @ x @ x)))
    value = second - d.value**2
    if -1e-9 < value < 0.0:
        value = 0.0
    return EntropyEstimate(value, method=METHOD_EXACT)


def max_relative_entropy(rho: DensityMatrix, sigma: DensityMatrix) -> EntropyEstimate:
    """``log2`` of the smallest ``c`` with ``c * sigma >= rho``."""
    _check_layouts(rho, sigma)
    w_s, v_s = _eig_state(sigma)
    if _mass_outside_support(rho, w_s, v_s) > 1e-9:
        return EntropyEstimate(math.inf, method=METHOD_EXACT)
    keep = _support_split(w_s)
    vk = v_s[:, keep]
    inv_sqrt = vk * (1.0 / np.sqrt(w_s[keep]))
    sandwich = inv_sqrt.conj().T @ rho.matrix @ inv_sqrt
    top = float(np.linalg.eigvalsh(sandwich)[-1])
    return EntropyEstimate(math.log2(max(top, 1e-300)), method=METHOD_EXACT)


# ---------------------------------------------------------------------------
# smooth max-relative entropy (quantum path)
# ---------------------------------------------------------------------------


def _fidelity_and_gradient(sqrt_rho: np.ndarray, x: np.ndarray):
    """Fidelity ``F(rho, x)`` and a supergradient in ``x``."""
    m = sqrt_rho @ x @ sqrt_rho
    w, v = np.linalg.eigh(m)
    wc = np.clip(w, 0.0, None)
    f = float(np.sqrt(wc).sum())
    floor = max(float(w[-1]), 1e-30) * 1e-14
    inv_sqrt = 1.0 / np.sqrt(np.maximum(w, floor))
    g = 0.5 * (sqrt_rho @ ((v * inv_sqrt) @ v.conj().T) @ sqrt_rho)
    return f, 0.5 * (g + g.conj().T)


def _capped_linear_max(g: np.ndarray, s_vals, s_vecs, keep):
    """Maximize ``Tr(g x)`` over ``0 <= x <= S``, ``Tr x = 1``.

    Solved in the eigenbasis of ``S``: ``x = S^1/2 y S^1/2`` with
    ``0 <= y <= 1`` and ``Tr(diag(s) y) = 1``; the optimal ``y`` is the
    positive part of ``g' - mu diag(s)`` with ``mu`` found by bisection,
    blending the crossing eigenspace to hit the trace exactly.
    """
    s = s_vals[keep]
    vk = s_vecs[:, keep]
    root = np.sqrt(s)
    gp = (root[:, None] * (vk.conj().T @ g @ vk)) * root[None, :]
    gp = 0.5 * (gp + gp.conj().T)

    def weight(mu):
        w, vv = np.linalg.eigh(gp - mu * np.diag(s))
        pos = w > 0
        if not pos.any():
            return 0.0, w, vv
        cols = vv[:, pos]
        return float(np.real(np.einsum("i,ij,ij->", s, cols, cols.conj()))), w, vv

    scale = float(np.abs(gp).max()) + 1.0
    lo, hi = -scale / max(s.min(), 1e-300) - 1.0, scale / max(s.min(), 1e-300) + 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        val, _, _ = weight(mid)
        if val >= 1.0:
            lo = mid
        else:
            hi = mid
    _, w, vv = weight(lo)
    thresh = 1e-12 * (abs(w).max() + 1.0)
    pos = w > thresh
    zero = np.abs(w) <= thresh
    cols = vv[:, pos]
    t_pos = float(np.real(np.einsum("i,ij,ij->", s, cols, cols.conj())))
    y = cols @ cols.conj().T
    if zero.any():
        zc = vv[:, zero]
        t_zero = float(np.real(np.einsum("i,ij,ij->", s, zc, zc.conj())))
        if t_zero > 1e-15:
            c = min(max((1.0 - t_pos) / t_zero, 0.0), 1.0)
            y = y + c * (zc @ zc.conj().T)
    scaled = (root[:, None] * y) * root[None, :]
    x = vk @ scaled @ vk.conj().T
    return 0.5 * (x + x.conj().T)


def _cap_feasible(
    sqrt_rho, s_vals, s_vecs, keep, cap_scale, target_f, max_iterations,
    pure_vector=None,
):
    """Best fidelity within ``{0 <= x <= cap_scale * sigma, Tr x = 1}``.

    Returns ``(feasible, x, converged)``; ``feasible`` is None only when
    the iteration budget ran out without a certificate either way.  For a
    rank-1 input the fidelity is linear in ``x``, so one exact oracle call
    settles feasibility.
    """
    sv = s_vals * cap_scale
    if pure_vector is not None:
        target_op = np.outer(pure_vector, pure_vector.conj())
        x = _capped_linear_max(target_op, sv, s_vecs, keep)
        best = math.sqrt(max(float(np.real(np.trace(target_op @ x))), 0.0))
        return best >= target_f - 1e-12, x, True
    x = s_vecs[:, keep] @ (
        (sv[keep] / sv[keep].sum())[:, None] * s_vecs[:, keep].conj().T
    )
    best_f = -1.0
    for it in range(max_iterations):
        f, g = _fidelity_and_gradient(sqrt_rho, x)
        if f > best_f:
            best_f = f
        if f >= target_f - 1e-12:
            return True, x, True
        v = _capped_linear_max(g, sv, s_vecs, keep)
        gap = float(np.real(np.trace(g @ (v - x))))
        if f + gap < target_f - 1e-12:
            return False, None, True
        step = 2.0 / (it + 2.0)
        cand = x + step * (v - x)
        f_cand, _ = _fidelity_and_gradient(sqrt_rho, cand)
        f_full, _ = _fidelity_and_gradient(sqrt_rho, v)
        x = v if f_full >= f_cand else cand
    return None, None, False


def smooth_max_relative_entropy(
    rho: DensityMatrix,
    sigma: DensityMatrix,
    eps: float,
    resolution_bits: float = 1e-4,
    max_iterations: int = 2000,
) -> EntropyEstimate:
    """Infimum of the max-relative entropy over the ``eps``-ball of ``rho``.

    The ball is measured in purified distance over normalized states.  The
    returned value is exact for the returned certificate (an upper bound on
    the infimum within the bisection resolution).
    """
    _check_layouts(rho, sigma)
    if not (0.0 <= eps < 1.0):
        raise ValueError(f"eps {eps} outside [0, 1)")
    if eps == 0.0:
        base = max_relative_entropy(rho, sigma)
        return EntropyEstimate(
            base.value, 0.0, METHOD_EXACT, certificate=rho,
            bracket=(base.value, base.value),
        )
    if purified_distance(rho, sigma) <= eps:
        return EntropyEstimate(
            0.0, eps, METHOD_BISECTION, certificate=sigma, bracket=(0.0, 0.0)
        )

    target_f = math.sqrt(1.0 - eps * eps)
    w_s, v_s = _eig_state(sigma)
    keep = _support_split(w_s)
    tol = max(rho.tolerance, sigma.tolerance)
    sqrt_rho = hermitian_sqrt(rho.matrix, tol)

    w_r, v_r = np.linalg.eigh(rho.matrix)
    pure_vector = None
    if rho.dim == 1 or float(w_r[-2]) <= 1e-12:
        pure_vector = v_r[:, -1]

    # largest fidelity attainable inside supp(sigma) is sqrt(Tr Pi rho)
    overlap = 1.0 - _mass_outside_support(rho, w_s, v_s)
    if math.sqrt(max(overlap, 0.0)) < target_f - 1e-12:
        return EntropyEstimate(math.inf, eps, METHOD_BISECTION, bracket=None)

    def feasible(lam):
        return _cap_feasible(
            sqrt_rho, w_s, v_s, keep, 2.0**lam, target_f, max_iterations,
            pure_vector=pure_vector,
        )

    base = max_relative_entropy(rho, sigma)
    if math.isfinite(base.value):
        hi = base.value
        hi_cert = rho
    else:
        vk = v_s[:, keep]
        pi = vk @ vk.conj().T
        proj = pi @ rho.matrix @ pi
        proj = proj / np.real(proj.trace())
        hi_cert = DensityMatrix(rho.layout, proj, max(tol, 1e-9))
        hi = max_relative_entropy(hi_cert, sigma).value
    hi = max(hi, 0.0)

    rel = relative_entropy(rho, sigma).value
    lo = max(0.0, (rel if math.isfinite(rel) else 0.0) - 1.0)
    lo = min(lo, hi)
    all_converged = True

    # make sure the lower end is genuinely infeasible before bisecting
    while lo > 0.0:
        ok, x, conv = feasible(lo)
        all_converged &= conv
        if ok:
            hi, hi_cert = lo, DensityMatrix(rho.layout, x, max(tol, 1e-9))
            lo = max(0.0, lo - 1.0)
        else:
            break

    while hi - lo > resolution_bits:
        mid = 0.5 * (lo + hi)
        ok, x, conv = feasible(mid)
        all_converged &= conv
        if ok:
            hi, hi_cert = mid, DensityMatrix(rho.layout, x, max(tol, 1e-9))
        else:
            lo = mid

    value = max_relative_entropy(hi_cert, sigma).value
    return EntropyEstimate(
        value,
        eps,
        METHOD_BISECTION,
        certificate=hi_cert,
        bracket=(lo, hi),
        converged=all_converged,
    )


# ---------------------------------------------------------------------------
# classical oracle
# ---------------------------------------------------------------------------

MAX_CLASSICAL_SUPPORT = 1 << 20


def _classical_best_fidelity(p, q, cap_scale):
    """Max Bhattacharyya overlap with ``p`` under ``p' <= cap_scale * q``.

    The optimum on the support of ``p`` has the water-filling form
    ``p'_i = min(t p_i, cap_i)``; leftover normalization lives on
    zero-probability outcomes where it costs nothing.
    """
    supp = p > 0.0
    ps = p[supp]
    caps = cap_scale * q[supp]
    cap_mass = float(caps.sum())
    spare = cap_scale * float(q[~supp].sum())
    if cap_mass + spare < 1.0 - 1e-12:
        return -1.0
    if cap_mass <= 1.0:
        return float(np.sqrt(ps * caps).sum())
    ratios = caps / np.maximum(ps, 1e-300)
    order = np.argsort(ratios)
    ps_s, caps_s, r_s = ps[order], caps[order], ratios[order]
    cap_cum = np.concatenate([[0.0], np.cumsum(caps_s)])
    ps_tail = np.concatenate([np.cumsum(ps_s[::-1])[::-1], [0.0]])
    # mass(t) = cap_cum[k] + t * ps_tail[k] for t in [r_{k-1}, r_k]; it is
    # nondecreasing and reaches cap_mass > 1 at t = r_last, so the first
    # bracket containing mass 1 always exists
    mass_at_r = cap_cum[:-1] + r_s * ps_tail[:-1]
    k = int(np.argmax(mass_at_r >= 1.0))
    t = (1.0 - cap_cum[k]) / max(ps_tail[k], 1e-300)
    capped = np.sqrt(ps_s[:k] * caps_s[:k]).sum()
    free = math.sqrt(max(t, 0.0)) * ps_tail[k]
    return float(capped + free)


def classical_smooth_max_relative_entropy(
    p, q, eps: float, resolution_bits: float = 1e-9
) -> EntropyEstimate:
    """Water-filling oracle for diagonal inputs.

    ``p`` and ``q`` are probability vectors (aggregated masses are fine as
    long as entries of a group share their ratio).  The ball uses the
    classical purified distance ``sqrt(1 - (sum_i sqrt(p_i p'_i))^2)``.
    """
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    if p.shape != q.shape:
        raise ValueError("distributions differ in length")
    if p.shape[0] > MAX_CLASSICAL_SUPPORT:
        raise ValueError(f"support {p.shape[0]} exceeds {MAX_CLASSICAL_SUPPORT}")
    if np.any(p < -1e-12) or np.any(q < -1e-12):
        raise ValueError("negative probabilities")
    if abs(p.sum() - 1.0) > 1e-9 or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("distributions must sum to 1")
    if not (0.0 <= eps < 1.0):
        raise ValueError(f"eps {eps} outside [0, 1)")

    supp = p > 0.0
    lost = float(p[supp & (q <= 0.0)].sum())
    target_f = math.sqrt(1.0 - eps * eps)
    if math.sqrt(max(1.0 - lost, 0.0)) < target_f - 1e-15:
        return EntropyEstimate(math.inf, eps, METHOD_CLASSICAL)

    ok = supp & (q > 0.0)
    hi = math.log2(float((p[ok] / q[ok]).max())) if ok.any() else 0.0
    if lost > 0.0:
        # the projected-and-renormalized distribution is always feasible here
        hi -= math.log2(max(1.0 - lost, 1e-300))
    hi = max(hi, 0.0)
    if eps == 0.0 and lost > 0.0:
        return EntropyEstimate(math.inf, 0.0, METHOD_CLASSICAL)
    if eps == 0.0:
        return EntropyEstimate(hi, 0.0, METHOD_CLASSICAL, bracket=(hi, hi))
    lo = 0.0
    if _classical_best_fidelity(p, q, 1.0) >= target_f - 1e-15:
        hi = 0.0
    while hi - lo > resolution_bits:
        mid = 0.5 * (lo + hi)
        if _classical_best_fidelity(p, q, 2.0**mid) >= target_f - 1e-15:
            hi = mid
        else:
            lo = mid
    certificate = None
    if p.shape[0] <= 64:
        cert_vec = _classical_certificate(p, q, 2.0**hi, target_f)
        lay = RegisterLayout((("X", p.shape[0]),))
        certificate = _unchecked(lay, np.diag(cert_vec.astype(complex)), 1e-9)
    return EntropyEstimate(
        hi, eps, METHOD_CLASSICAL, certificate=certificate, bracket=(lo, hi)
    )


def _classical_certificate(p, q, cap_scale, target_f):
    caps = cap_scale * q
    supp = p > 0.0
    if float(np.minimum(p, caps)[supp].sum()) >= 1.0 - 1e-15 and np.all(
        p[supp] <= caps[supp] + 1e-15
    ):
        return p.copy()
    lo_t, hi_t = 0.0, 1e12
    for _ in range(200):
        t = 0.5 * (lo_t + hi_t)
        mass = float(np.minimum(t * p[supp], caps[supp]).sum())
        if mass < 1.0:
            lo_t = t
        else:
            hi_t = t
    out = np.minimum(hi_t * p, caps) * supp
    missing = 1.0 - float(out.sum())
    if missing > 1e-15:
        room = np.maximum(caps - out, 0.0) * (~supp)
        if float(room.sum()) > 0:
            out = out + room * (missing / float(room.sum()))
        else:
            room = np.maximum(caps - out, 0.0)
            out = out + room * (missing / max(float(room.sum()), 1e-300))
    return out / out.sum()


# ---------------------------------------------------------------------------
# Gaussian quantile and the second-order expansion
# ---------------------------------------------------------------------------


def gaussian_cdf(x: float) -> float:
    """``P[N(0,1) <= x]``."""
    return float(ndtr(x))


def gaussian_cdf_inv(eps: float) -> float:
    if not (0.0 < eps < 1.0):
        raise ValueError(f"quantile argument {eps} outside (0, 1)")
    return float(ndtri(eps))


def gaussian_quantile_bound(eps: float) -> tuple[float, float, bool]:
    """``(|quantile|, 2 sqrt(log2(1/2eps)), holds)`` for ``eps <= 1/2``."""
    if not (0.0 < eps <= 0.5):
        raise ValueError(f"eps {eps} outside (0, 1/2]")
    quant = abs(gaussian_cdf_inv(eps))
    bound = 2.0 * math.sqrt(max(math.log2(1.0 / (2.0 * eps)), 0.0))
    return quant, bound, quant <= bound + 1e-12


def second_order_expansion(
    rho: DensityMatrix, sigma: DensityMatrix, n: int, eps: float
) -> EntropyEstimate:
    """``n D + sqrt(n V) * quantile(eps)``; the log-order term is omitted."""
    if n < 1:
        raise ValueError("n must be >= 1")
    d = relative_entropy(rho, sigma)
    if not math.isfinite(d.value):
        raise SupportError("support condition violated")
    v = relative_entropy_variance(rho, sigma)
    value = n * d.value + math.sqrt(n * max(v.value, 0.0)) * gaussian_cdf_inv(eps)
    return EntropyEstimate(value, eps, METHOD_SECOND_ORDER)


# ---------------------------------------------------------------------------
# continuity of the resource measure
# ---------------------------------------------------------------------------


def continuity_bound(rho: DensityMatrix, rho_prime: DensityMatrix, free_set) -> float:
    """Bound on how far the closest-free-state relative entropy can move.

    With ``t = ||rho - rho'||_1 <= 1/3`` the distance between the two
    optima is at most
    ``t (log2 dim + inf_tau ||log2 tau||_inf) + t log2(1/t) + 4 t``.
    ``free_set`` only needs a ``log_tau_inf(layout)`` method.
    """
    _check_layouts(rho, rho_prime)
    t = trace_distance(rho, rho_prime)
    if t <= 1e-15:
        return 0.0
    if t > 1.0 / 3.0 + 1e-12:
        raise ValueError(f"trace distance {t} exceeds 1/3")
    log_dim = math.log2(rho.layout.dim)
    log_tau = float(free_set.log_tau_inf(rho.layout))
    return t * (log_dim + log_tau) + t * math.log2(1.0 / t) + 4.0 * t
