"""Executable free-resource families.

Each family is a closed convex set of states with a membership test,
closest-member optimizers for the relative entropy and the smooth
max-relative entropy, samplers for property checks, and the block-form
randomness-register structure used by the erasure protocols (the
randomness register is always the last layout factor).

Families shipped: ``coherence`` (diagonal states), ``uniformity`` (the
maximally mixed singleton), ``gibbs`` (thermal singleton, base-2
convention ``2^(-beta H) / Tr``), ``asymmetry`` (states invariant under an
explicit finite unitary list), ``separable-2qubit`` (positive partial
transpose across a fixed qubit bipartition, which is exactly separability
for one qubit pair), and ``shared-randomness-multiparty`` (perfectly
correlated uniform classical registers over a base family).

``contextuality`` and ``stabilizer`` are registered names that raise
``UnsupportedFamilyError``: the former uses a conditional-probability
formalism outside density-matrix scope, the latter needs Clifford
machinery this toolkit does not carry.  See the README.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np

from .entropies import (
    METHOD_BISECTION,
    METHOD_EXACT,
    EntropyEstimate,
    max_relative_entropy,
    relative_entropy,
    smooth_max_relative_entropy,
    von_neumann_entropy,
)
from .states import (
    DensityMatrix,
    LayoutError,
    RegisterLayout,
    UnitaryOp,
    _unchecked,
    haar_unitary,
    layout,
    partial_trace,
    pinch,
    random_density_matrix,
    random_pure_state,
    tensor,
)

LN2 = math.log(2.0)

FAMILY_NAMES = (
    "coherence",
    "uniformity",
    "gibbs",
    "asymmetry",
    "separable-2qubit",
    "shared-randomness-multiparty",
    "contextuality",
    "stabilizer",
)


class FreeSetError(ValueError):
    """Layout or configuration problem for a free-state family."""


class UnsupportedFamilyError(FreeSetError):
    """A registered family name without an executable implementation."""


class DimensionOverflowError(ValueError):
    """A requested computation exceeds the dense-simulation budget."""


#: largest total dimension the dense machinery will touch
DIM_BUDGET = 4096


# ---------------------------------------------------------------------------
# small convex-optimization building blocks
# ---------------------------------------------------------------------------


def _simplex_projection(v: np.ndarray) -> np.ndarray:
    # very large inputs cancel catastrophically in the threshold search;
    # shrinking them first only moves an already-absurd optimizer probe
    big = float(np.abs(v).max(initial=0.0))
    if big > 1e9:
        v = v * (1e9 / big)
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - 1.0
    idx = np.arange(1, len(v) + 1)
    cond = u - cssv / idx > 0
    if not cond.any():
        return np.full_like(v, 1.0 / len(v))
    rho = idx[cond][-1]
    theta = cssv[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


def _project_density(m: np.ndarray) -> np.ndarray:
    h = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(h)
    w = _simplex_projection(w)
    return (v * w) @ v.conj().T


def _project_psd(m: np.ndarray) -> np.ndarray:
    h = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(h)
    return (v * np.clip(w, 0.0, None)) @ v.conj().T


def partial_transpose(
    m: np.ndarray, dims: tuple[int, ...], positions: tuple[int, ...]
) -> np.ndarray:
    r = len(dims)
    tens = m.reshape(dims + dims)
    axes = list(range(2 * r))
    for p in positions:
        axes[p], axes[p + r] = axes[p + r], axes[p]
    return np.ascontiguousarray(tens.transpose(axes).reshape(m.shape))


def _dykstra(projections, start: np.ndarray, sweeps: int = 60, tol: float = 1e-11):
    """Dykstra's alternating projections; returns the point and residual."""
    x = start.copy()
    increments = [np.zeros_like(start) for _ in projections]
    for sweep in range(sweeps):
        moved = 0.0
        for i, proj in enumerate(projections):
            y = proj(x + increments[i])
            increments[i] = x + increments[i] - y
            moved = max(moved, float(np.abs(y - x).max()))
            x = y
        if moved < tol and sweep >= 2:
            break
    residual = max(float(np.abs(proj(x) - x).max()) for proj in projections)
    return x, residual


def _grad_cross_term(rho_m: np.ndarray, sigma_m: np.ndarray) -> np.ndarray:
    """Gradient of ``sigma -> -Tr(rho log2 sigma)`` (Frechet, in bits).

    The spectrum is floored well above underflow so the divided-difference
    kernel stays finite; near the boundary this only shortens the step,
    which the backtracking line search absorbs.
    """
    w, v = np.linalg.eigh(sigma_m)
    w = np.clip(w, 1e-18 * max(float(w[-1]), 1e-12), None)
    rt = v.conj().T @ rho_m @ v
    lo = np.log(w)
    diff = w[:, None] - w[None, :]
    close = np.abs(diff) < 1e-14 * max(float(w[-1]), 1e-300)
    avg = 0.5 * (w[:, None] + w[None, :])
    kernel = np.where(close, 1.0 / avg, (lo[:, None] - lo[None, :]) / np.where(close, 1.0, diff))
    g = -(v @ (rt * kernel) @ v.conj().T) / LN2
    return 0.5 * (g + g.conj().T)


def _cross_term(rho_m: np.ndarray, sigma_m: np.ndarray) -> float:
    """``-Tr(rho log2 sigma)`` with a hard floor on the spectrum."""
    w, v = np.linalg.eigh(sigma_m)
    w = np.clip(w, 1e-300, None)
    overlaps = np.real(np.einsum("ij,ik,kj->j", v.conj(), rho_m, v))
    return float(-(overlaps * np.log2(w)).sum())


def _projected_gradient_min_cross(
    rho: DensityMatrix,
    project,
    starts,
    max_total_iters: int = 10_000,
):
    """Minimize ``-Tr(rho log2 sigma)`` over a convex set given by ``project``."""
    rho_m = rho.matrix
    best_val = math.inf
    best = None
    budget = max_total_iters
    for start in starts:
        sigma = project(start)
        val = _cross_term(rho_m, sigma)
        step = 0.5
        stall = 0
        while budget > 0:
            budget -= 1
            g = _grad_cross_term(rho_m, sigma)
            g_norm = float(np.abs(g).max())
            if g_norm > 1e3:
                g = g * (1e3 / g_norm)
            cand = project(sigma - step * g)
            cand_val = _cross_term(rho_m, cand)
            shrink = 0
            while cand_val > val - 1e-13 and shrink < 25:
                step *= 0.5
                shrink += 1
                cand = project(sigma - step * g)
                cand_val = _cross_term(rho_m, cand)
            if cand_val > val - 1e-13:
                break
            improvement = val - cand_val
            sigma, val = cand, cand_val
            step = min(step * 1.8, 4.0)
            if improvement < 1e-10 * max(abs(val), 1.0):
                stall += 1
                if stall >= 3:
                    break
            else:
                stall = 0
        if val < best_val:
            best_val, best = val, sigma
    return best, best_val


# ---------------------------------------------------------------------------
# shared randomness data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SharedRandomnessState:
    """Perfectly correlated uniform classical state over ``t`` registers."""

    ell: int
    t: int

    def __post_init__(self):
        if self.ell < 1 or self.t < 1:
            raise FreeSetError("ell and t must be positive")

    def labels(self) -> tuple[str, ...]:
        return tuple(f"J{i + 1}" for i in range(self.t))

    def density(self, labels=None, tolerance: float = 1e-9) -> DensityMatrix:
        labels = tuple(labels) if labels is not None else self.labels()
        if len(labels) != self.t:
            raise FreeSetError(f"need {self.t} labels, got {len(labels)}")
        lay = RegisterLayout(tuple((lb, self.ell) for lb in labels))
        d = lay.dim
        m = np.zeros((d, d), dtype=np.complex128)
        step = (d - 1) // (self.ell - 1) if self.ell > 1 else 1
        for k in range(self.ell):
            idx = k * step if self.ell > 1 else 0
            m[idx, idx] = 1.0 / self.ell
        return _unchecked(lay, m, tolerance)


# ---------------------------------------------------------------------------
# base class
# ---------------------------------------------------------------------------


class FreeSet(abc.ABC):
    """A convex, closed family of free states over compatible layouts."""

    name: str = "abstract"

    # -- structure ----------------------------------------------------

    @abc.abstractmethod
    def check_layout(self, lay: RegisterLayout) -> None:
        """Raise ``FreeSetError`` when the family cannot live on ``lay``."""

    @abc.abstractmethod
    def membership(self, state: DensityMatrix) -> bool:
        """Tolerance-based membership test."""

    @abc.abstractmethod
    def sample(self, rng: np.random.Generator, lay: RegisterLayout) -> DensityMatrix:
        """A random member, for property checks."""

    def sample_free_unitary(self, rng: np.random.Generator, lay: RegisterLayout):
        """A unitary mapping the family into itself (matrix form)."""
        return np.eye(lay.dim, dtype=np.complex128)

    def extended(self, copies: int) -> "FreeSet":
        """The family for ``copies``-fold products of the base register."""
        return self

    # -- scalar family data --------------------------------------------

    @abc.abstractmethod
    def log_tau_inf(self, lay: RegisterLayout) -> float:
        """``inf`` over members of the sup norm of the base-2 log spectrum."""

    @abc.abstractmethod
    def max_overlap(self, test_op: np.ndarray, lay: RegisterLayout) -> float:
        """Upper bound on ``Tr(T sigma)`` over members, for converse witnesses."""

    # -- optimizers -----------------------------------------------------

    def project_member(self, m: np.ndarray, lay: RegisterLayout) -> np.ndarray:
        """Map a Hermitian matrix to a nearby member (feasibility map)."""
        raise NotImplementedError

    def _relent_starts(self, rho: DensityMatrix, rng: np.random.Generator):
        yield rho.matrix
        yield np.eye(rho.dim, dtype=np.complex128) / rho.dim
        for _ in range(6 if rho.dim <= 4 else 2):
            yield self.sample(rng, rho.layout).matrix

    def closest_relative_entropy(
        self, rho: DensityMatrix, seed: int = 0
    ) -> tuple[DensityMatrix, EntropyEstimate]:
        """Member minimizing the relative entropy from ``rho``."""
        self.check_layout(rho.layout)
        rng = np.random.default_rng(seed)
        project = lambda m: self.project_member(m, rho.layout)
        sigma_m, _ = _projected_gradient_min_cross(
            rho, project, self._relent_starts(rho, rng)
        )
        sigma = _unchecked(rho.layout, sigma_m, max(rho.tolerance, 1e-9))
        value = relative_entropy(rho, sigma).value
        return sigma, EntropyEstimate(value, method=METHOD_BISECTION)

    def minimize_max_relent_member(
        self, rho_prime: DensityMatrix, sigma_init: DensityMatrix, resolution_bits: float = 1e-4
    ) -> tuple[DensityMatrix, float]:
        """Member (approximately) minimizing the max-relative entropy."""
        lay = rho_prime.layout
        hi_est = max_relative_entropy(rho_prime, sigma_init)
        hi = hi_est.value if math.isfinite(hi_est.value) else math.log2(lay.dim) + 4.0
        hi = max(hi, 0.0) + 1e-9
        lo = 0.0
        best_sigma = sigma_init

        def feasible(lam):
            floor = rho_prime.matrix / (2.0**lam)

            def proj_dominating(m):
                return floor + _project_psd(m - floor)

            start = 0.5 * (sigma_init.matrix + floor / max(np.trace(floor).real, 1e-12))
            x, residual = _dykstra(
                [lambda m: self.project_member(m, lay), proj_dominating], start
            )
            x = self.project_member(x, lay)
            if residual > 1e-7:
                return None
            gap = float(np.linalg.eigvalsh(x - floor)[0])
            if gap < -1e-8:
                return None
            return _unchecked(lay, _project_density(x), 1e-9)

        while hi - lo > resolution_bits:
            mid = 0.5 * (lo + hi)
            got = feasible(mid)
            if got is not None:
                hi, best_sigma = mid, got
            else:
                lo = mid
        value = max_relative_entropy(rho_prime, best_sigma).value
        return best_sigma, value

    def closest_smooth_max_relent(
        self,
        rho: DensityMatrix,
        eps: float,
        seed: int = 0,
        resolution_bits: float = 1e-4,
        rounds: int = 4,
    ) -> tuple[DensityMatrix, EntropyEstimate]:
        """Joint minimization over members and the smoothing ball.

        Alternates the smoothing step (fix the member, smooth the input)
        with the member step (fix the smoothed state, move the member).
        The returned value is an upper-bound certificate; ``lower_bound``
        carries an independent test-operator witness.
        """
        self.check_layout(rho.layout)
        if self.membership(rho):
            return rho, EntropyEstimate(
                0.0, eps, METHOD_BISECTION, certificate=rho, lower_bound=0.0,
                bracket=(0.0, 0.0),
            )
        sigma, _ = self.closest_relative_entropy(rho, seed)
        if eps == 0.0:
            sigma, value = self.minimize_max_relent_member(rho, sigma, resolution_bits)
            lower = self.max_relent_lower_bound(rho, 0.0)
            return sigma, EntropyEstimate(
                value, 0.0, METHOD_BISECTION, certificate=rho,
                bracket=(lower, value), lower_bound=lower,
            )
        best_val, best_sigma, best_cert = math.inf, sigma, None
        for _ in range(rounds):
            est = smooth_max_relative_entropy(rho, sigma, eps, resolution_bits)
            if est.value < best_val:
                best_val, best_sigma, best_cert = est.value, sigma, est.certificate
            if est.certificate is None or not math.isfinite(est.value):
                break
            sigma_new, val_new = self.minimize_max_relent_member(
                est.certificate, sigma, resolution_bits
            )
            if val_new > best_val - resolution_bits:
                break
            sigma = sigma_new
        lower = self.max_relent_lower_bound(rho, eps)
        return best_sigma, EntropyEstimate(
            best_val,
            eps,
            METHOD_BISECTION,
            certificate=best_cert,
            bracket=(lower, best_val),
            lower_bound=lower,
        )

    def max_relent_lower_bound(self, rho: DensityMatrix, eps: float) -> float:
        """Sound lower bound on the smooth max-relative entropy to the family.

        Measuring a test projector ``T`` is a channel, so the fidelity of
        the binary outcome distributions dominates the ball's fidelity
        ``sqrt(1 - eps^2)``.  The worst outcome weight any ball state can
        give is then ``cos^2(arccos sqrt(Tr T rho) + arcsin eps)``, and the
        cap yields ``2^lambda >= weight / max Tr(T sigma)``.  Spectral
        projectors of the input are enumerated as tests.
        """
        w, v = np.linalg.eigh(rho.matrix)
        order = np.argsort(w)[::-1]
        w, v = w[order], v[:, order]
        angle_eps = math.asin(min(max(eps, 0.0), 1.0))
        best = 0.0
        for k in range(1, rho.dim + 1):
            cols = v[:, :k]
            t = cols @ cols.conj().T
            a = min(max(float(np.clip(w[:k], 0.0, None).sum()), 0.0), 1.0)
            angle = math.acos(min(math.sqrt(a), 1.0)) + angle_eps
            if angle >= math.pi / 2:
                continue
            num = math.cos(angle) ** 2
            den = self.max_overlap(t, rho.layout)
            if den <= 0:
                continue
            best = max(best, math.log2(num / den))
        return best


# ---------------------------------------------------------------------------
# concrete families
# ---------------------------------------------------------------------------


class CoherenceSet(FreeSet):
    """States diagonal in the computational product basis."""

    name = "coherence"

    def check_layout(self, lay: RegisterLayout) -> None:
        return None

    def membership(self, state: DensityMatrix) -> bool:
        off = state.matrix - np.diag(np.diag(state.matrix))
        return float(np.linalg.norm(off)) <= max(state.tolerance, 1e-12)

    def sample(self, rng, lay):
        return DensityMatrix.diagonal(rng.dirichlet(np.ones(lay.dim)), lay)

    def sample_free_unitary(self, rng, lay):
        perm = rng.permutation(lay.dim)
        phases = np.exp(2j * np.pi * rng.random(lay.dim))
        m = np.zeros((lay.dim, lay.dim), dtype=np.complex128)
        m[perm, np.arange(lay.dim)] = phases
        return m

    def project_member(self, m, lay):
        return np.diag(_simplex_projection(np.real(np.diag(m))).astype(np.complex128))

    def log_tau_inf(self, lay):
        return math.log2(lay.dim)

    def max_overlap(self, test_op, lay):
        return float(np.real(np.diag(test_op)).max())

    def closest_relative_entropy(self, rho, seed: int = 0):
        # dephasing is the exact optimum; the stationarity of the cross term
        # in diagonal directions is checked on the support
        labels = list(rho.layout.labels)
        sigma = pinch(rho, labels)
        diag_r = np.real(np.diag(rho.matrix))
        diag_s = np.real(np.diag(sigma.matrix))
        on = diag_s > 1e-12
        grads = diag_r[on] / diag_s[on]
        if np.abs(grads - 1.0).max() > 1e-8:
            raise FreeSetError("dephased state failed the stationarity check")
        value = von_neumann_entropy(sigma) - von_neumann_entropy(rho)
        return sigma, EntropyEstimate(max(value, 0.0), method=METHOD_EXACT)

    def minimize_max_relent_member(self, rho_prime, sigma_init, resolution_bits=1e-4):
        w, v = np.linalg.eigh(rho_prime.matrix)
        if float(w[:-1].max(initial=0.0)) <= 1e-11:
            # rank one: the optimum over diagonal members is closed form
            amps = np.abs(v[:, -1])
            weights = amps / amps.sum()
            weights = np.where(weights > 0, weights, 0.0)
            sigma = _unchecked(
                rho_prime.layout, np.diag(weights.astype(np.complex128)), 1e-9
            )
            return sigma, max_relative_entropy(rho_prime, sigma).value
        return super().minimize_max_relent_member(rho_prime, sigma_init, resolution_bits)


class UniformitySet(FreeSet):
    """The maximally mixed state is the only member."""

    name = "uniformity"

    def check_layout(self, lay):
        return None

    def _member(self, lay):
        return DensityMatrix.maximally_mixed(lay)

    def membership(self, state):
        return bool(
            np.abs(state.matrix - np.eye(state.dim) / state.dim).max()
            <= max(state.tolerance, 1e-12)
        )

    def sample(self, rng, lay):
        return self._member(lay)

    def sample_free_unitary(self, rng, lay):
        return haar_unitary(rng, lay.dim)

    def project_member(self, m, lay):
        return np.eye(lay.dim, dtype=np.complex128) / lay.dim

    def log_tau_inf(self, lay):
        return math.log2(lay.dim)

    def max_overlap(self, test_op, lay):
        return float(np.real(np.trace(test_op))) / lay.dim

    def closest_relative_entropy(self, rho, seed: int = 0):
        value = math.log2(rho.dim) - von_neumann_entropy(rho)
        return self._member(rho.layout), EntropyEstimate(max(value, 0.0), method=METHOD_EXACT)

    def minimize_max_relent_member(self, rho_prime, sigma_init, resolution_bits=1e-4):
        member = self._member(rho_prime.layout)
        return member, max_relative_entropy(rho_prime, member).value

    def closest_smooth_max_relent(self, rho, eps, seed=0, resolution_bits=1e-4, rounds=4):
        member = self._member(rho.layout)
        if self.membership(rho):
            return rho, EntropyEstimate(
                0.0, eps, METHOD_BISECTION, certificate=rho,
                bracket=(0.0, 0.0), lower_bound=0.0,
            )
        est = smooth_max_relative_entropy(rho, member, eps, resolution_bits)
        lower = self.max_relent_lower_bound(rho, eps)
        return member, EntropyEstimate(
            est.value, eps, est.method, certificate=est.certificate,
            bracket=(lower, est.value), converged=est.converged, lower_bound=lower,
        )


class GibbsSet(FreeSet):
    """Thermal singleton per factor, with the base-2 convention.

    The free state of a factor with Hamiltonian ``H`` at inverse
    temperature ``beta`` is ``2^(-beta H) / Tr 2^(-beta H)``, so all
    spectral data stays in bits.
    """

    name = "gibbs"

    def __init__(self, hamiltonian: np.ndarray, beta: float):
        h = np.asarray(hamiltonian, dtype=np.complex128)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise FreeSetError("hamiltonian must be a square matrix")
        if np.abs(h - h.conj().T).max() > 1e-10:
            raise FreeSetError("hamiltonian must be Hermitian")
        self.hamiltonian = h
        self.beta = float(beta)
        w, v = np.linalg.eigh(h)
        gibbs = np.exp2(-self.beta * w)
        self._partition = float(gibbs.sum())
        gibbs = gibbs / self._partition
        self._factor_state = (v * gibbs) @ v.conj().T
        self._factor_spectrum = gibbs

    def check_layout(self, lay):
        d = self.hamiltonian.shape[0]
        for lb, dim in lay.factors:
            if dim != d:
                raise FreeSetError(
                    f"factor {lb!r} has dimension {dim}, hamiltonian needs {d}"
                )

    def _member(self, lay):
        self.check_layout(lay)
        m = np.array([[1.0 + 0j]])
        for _ in lay.factors:
            m = np.kron(m, self._factor_state)
        return _unchecked(lay, m, 1e-9)

    def membership(self, state):
        member = self._member(state.layout)
        return bool(
            np.abs(state.matrix - member.matrix).max() <= max(state.tolerance, 1e-10)
        )

    def sample(self, rng, lay):
        return self._member(lay)

    def sample_free_unitary(self, rng, lay):
        # phases in the energy eigenbasis commute with the Hamiltonian
        w, v = np.linalg.eigh(self.hamiltonian)
        out = np.array([[1.0 + 0j]])
        for _ in lay.factors:
            phases = np.exp(2j * np.pi * rng.random(len(w)))
            out = np.kron(out, (v * phases) @ v.conj().T)
        return out

    def project_member(self, m, lay):
        return self._member(lay).matrix

    def log_tau_inf(self, lay):
        per_factor = float(np.abs(np.log2(self._factor_spectrum)).max())
        return per_factor * len(lay.factors)

    def log_tau_inf_bound(self, lay) -> float:
        """Per-factor bound ``||beta H||_inf + log2 Tr 2^(-beta H)``, summed."""
        norm = float(np.abs(np.linalg.eigvalsh(self.beta * self.hamiltonian)).max())
        return (norm + math.log2(self._partition)) * len(lay.factors)

    def max_overlap(self, test_op, lay):
        member = self._member(lay)
        return float(np.real(np.trace(test_op @ member.matrix)))

    def closest_relative_entropy(self, rho, seed: int = 0):
        member = self._member(rho.layout)
        return member, EntropyEstimate(
            relative_entropy(rho, member).value, method=METHOD_EXACT
        )

    def minimize_max_relent_member(self, rho_prime, sigma_init, resolution_bits=1e-4):
        member = self._member(rho_prime.layout)
        return member, max_relative_entropy(rho_prime, member).value

    def closest_smooth_max_relent(self, rho, eps, seed=0, resolution_bits=1e-4, rounds=4):
        member = self._member(rho.layout)
        if self.membership(rho):
            return rho, EntropyEstimate(
                0.0, eps, METHOD_BISECTION, certificate=rho,
                bracket=(0.0, 0.0), lower_bound=0.0,
            )
        est = smooth_max_relative_entropy(rho, member, eps, resolution_bits)
        lower = self.max_relent_lower_bound(rho, eps)
        return member, EntropyEstimate(
            est.value, eps, est.method, certificate=est.certificate,
            bracket=(lower, est.value), converged=est.converged, lower_bound=lower,
        )


class AsymmetrySet(FreeSet):
    """States invariant under an explicit finite list of unitaries.

    The list is applied independently on every factor; the uniform average
    over it is the twirl.  Group closure is exercised by sampling, not
    proved.
    """

    name = "asymmetry"

    def __init__(self, unitaries):
        mats = [np.asarray(u, dtype=np.complex128) for u in unitaries]
        if not mats:
            raise FreeSetError("need at least one unitary")
        d = mats[0].shape[0]
        for u in mats:
            if u.shape != (d, d):
                raise FreeSetError("unitaries must share one dimension")
            if np.abs(u @ u.conj().T - np.eye(d)).max() > 1e-10:
                raise FreeSetError("list contains a non-unitary matrix")
        self.unitaries = mats
        self._dim = d

    def check_layout(self, lay):
        for lb, dim in lay.factors:
            if dim != self._dim:
                raise FreeSetError(
                    f"factor {lb!r} has dimension {dim}, representation needs {self._dim}"
                )

    def _embed(self, u, lay, position):
        out = np.array([[1.0 + 0j]])
        for i in range(len(lay.factors)):
            out = np.kron(out, u if i == position else np.eye(self._dim))
        return out

    def twirl(self, m: np.ndarray, lay: RegisterLayout) -> np.ndarray:
        out = m
        for pos in range(len(lay.factors)):
            acc = np.zeros_like(out)
            for u in self.unitaries:
                big = self._embed(u, lay, pos)
                acc += big @ out @ big.conj().T
            out = acc / len(self.unitaries)
        return out

    def membership(self, state):
        tol = max(state.tolerance, 1e-9)
        for pos in range(len(state.layout.factors)):
            for u in self.unitaries:
                big = self._embed(u, state.layout, pos)
                if np.abs(big @ state.matrix @ big.conj().T - state.matrix).max() > tol:
                    return False
        return True

    def sample(self, rng, lay):
        raw = random_density_matrix(rng, lay)
        return _unchecked(lay, self.twirl(raw.matrix, lay), 1e-9)

    def sample_free_unitary(self, rng, lay):
        out = np.array([[1.0 + 0j]])
        for _ in lay.factors:
            out = np.kron(out, self.unitaries[rng.integers(len(self.unitaries))])
        return out

    def project_member(self, m, lay):
        return self.twirl(_project_density(m), lay)

    def log_tau_inf(self, lay):
        return math.log2(lay.dim)

    def max_overlap(self, test_op, lay):
        twirled = self.twirl(np.asarray(test_op, dtype=np.complex128), lay)
        return float(np.linalg.eigvalsh(twirled)[-1])

    def closest_relative_entropy(self, rho, seed: int = 0):
        # the twirl is the conditional expectation onto the invariant
        # algebra, hence the exact optimizer; a short refinement guards it
        twirled = _unchecked(rho.layout, self.twirl(rho.matrix, rho.layout), 1e-9)
        value = relative_entropy(rho, twirled).value
        project = lambda m: self.project_member(m, rho.layout)
        refined_m, refined_val = _projected_gradient_min_cross(
            rho, project, [twirled.matrix], max_total_iters=400
        )
        refined = _unchecked(rho.layout, refined_m, 1e-9)
        refined_value = relative_entropy(rho, refined).value
        if refined_value < value - 1e-9:
            return refined, EntropyEstimate(refined_value, method=METHOD_BISECTION)
        return twirled, EntropyEstimate(value, method=METHOD_EXACT)


class SeparableTwoQubitSet(FreeSet):
    """Positive partial transpose across a fixed qubit bipartition.

    For one qubit pair this is exactly the separable set; for ``copies``
    pairs it is the standard relaxation containing it (so optima over it
    lower bound the separable ones).  Anything but qubit pairs is
    rejected.
    """

    name = "separable-2qubit"

    def __init__(self, copies: int = 1):
        if copies < 1:
            raise FreeSetError("copies must be >= 1")
        self.copies = int(copies)
        self._fine_dims = (2, 2) * self.copies
        self._b_positions = tuple(2 * i + 1 for i in range(self.copies))

    @classmethod
    def for_dims(cls, dim_a: int, dim_b: int, copies: int = 1):
        if (dim_a, dim_b) != (2, 2):
            raise UnsupportedFamilyError(
                "the entanglement family is restricted to qubit pairs, where "
                "positive partial transpose is exactly separability"
            )
        return cls(copies)

    def check_layout(self, lay):
        if lay.dim != 4**self.copies:
            raise FreeSetError(
                f"layout dimension {lay.dim} != {4 ** self.copies} for "
                f"{self.copies} qubit pair(s)"
            )

    def _transpose_b(self, m):
        return partial_transpose(m, self._fine_dims, self._b_positions)

    def membership(self, state):
        self.check_layout(state.layout)
        tol = max(state.tolerance, 1e-10)
        return float(np.linalg.eigvalsh(self._transpose_b(state.matrix))[0]) >= -tol

    def sample(self, rng, lay, terms: int = 8):
        self.check_layout(lay)
        da = 2**self.copies
        weights = rng.dirichlet(np.ones(terms))
        m = np.zeros((lay.dim, lay.dim), dtype=np.complex128)
        for w in weights:
            va = rng.normal(size=da) + 1j * rng.normal(size=da)
            vb = rng.normal(size=da) + 1j * rng.normal(size=da)
            va /= np.linalg.norm(va)
            vb /= np.linalg.norm(vb)
            vec = self._interleave_product(va, vb)
            m += w * np.outer(vec, vec.conj())
        return _unchecked(lay, m, 1e-9)

    def _interleave_product(self, va, vb):
        # amplitudes ordered qubit-wise as A1 B1 A2 B2 ...
        tens = np.tensordot(
            va.reshape((2,) * self.copies), vb.reshape((2,) * self.copies), axes=0
        )
        axes = []
        for i in range(self.copies):
            axes.extend([i, i + self.copies])
        return np.ascontiguousarray(tens.transpose(axes)).reshape(-1)

    def sample_free_unitary(self, rng, lay):
        da = 2**self.copies
        ua = haar_unitary(rng, da).reshape((2,) * (2 * self.copies))
        ub = haar_unitary(rng, da).reshape((2,) * (2 * self.copies))
        tens = np.tensordot(ua, ub, axes=0)
        # row axes of A sit at 0..c-1, of B at 2c..3c-1; interleave both sides
        row, col = [], []
        for i in range(self.copies):
            row.extend([i, i + 2 * self.copies])
            col.extend([i + self.copies, i + 3 * self.copies])
        out = tens.transpose(row + col).reshape(lay.dim, lay.dim)
        return np.ascontiguousarray(out)

    def project_member(self, m, lay):
        def proj_ppt(x):
            return self._transpose_b(_project_psd(self._transpose_b(x)))

        x, _ = _dykstra([_project_density, proj_ppt], np.asarray(m, dtype=np.complex128))
        return _project_density(x)

    def log_tau_inf(self, lay):
        return math.log2(lay.dim)

    def max_overlap(self, test_op, lay):
        t = np.asarray(test_op, dtype=np.complex128)
        direct = float(np.linalg.eigvalsh(t)[-1])
        flipped = float(np.linalg.eigvalsh(self._transpose_b(t))[-1])
        return max(min(direct, flipped), 0.0)

    def extended(self, copies: int):
        return SeparableTwoQubitSet(self.copies * copies)


class SharedRandomnessSet(FreeSet):
    """Base-family states correlated with perfectly shared uniform registers.

    Members over the full layout have the block form
    ``(1/ell) sum_k (U_k sigma U_k^dag) (x) |k...k><k...k|`` with ``sigma``
    in the base family and ``U_k`` free unitaries; the randomness registers
    are the trailing ``t`` factors.
    """

    name = "shared-randomness-multiparty"

    def __init__(self, base: FreeSet, ell: int, t: int):
        if ell < 1 or t < 1:
            raise FreeSetError("ell and t must be positive")
        self.base = base
        self.ell = int(ell)
        self.t = int(t)

    def randomness_state(self) -> SharedRandomnessState:
        return SharedRandomnessState(self.ell, self.t)

    def _split(self, lay: RegisterLayout):
        if len(lay.factors) < self.t:
            raise FreeSetError("layout lacks the randomness registers")
        base_factors = lay.factors[: -self.t]
        j_factors = lay.factors[-self.t:]
        for lb, d in j_factors:
            if d != self.ell:
                raise FreeSetError(
                    f"randomness register {lb!r} has dimension {d}, expected {self.ell}"
                )
        return base_factors, j_factors

    def check_layout(self, lay):
        base_factors, _ = self._split(lay)
        if base_factors:
            self.base.check_layout(RegisterLayout(base_factors))

    def membership(self, state):
        lay = state.layout
        base_factors, j_factors = self._split(lay)
        if not base_factors:
            target = self.randomness_state().density([lb for lb, _ in j_factors])
            return bool(
                np.abs(state.matrix - target.matrix).max()
                <= max(state.tolerance, 1e-10)
            )
        base_lay = RegisterLayout(base_factors)
        d_base = base_lay.dim
        d_j = self.ell**self.t
        tol = max(state.tolerance, 1e-9)
        tens = state.matrix.reshape(d_base, d_j, d_base, d_j)
        diag_step = (d_j - 1) // (self.ell - 1) if self.ell > 1 else 1
        stray = tens.copy()
        for k in range(self.ell):
            idx = k * diag_step if self.ell > 1 else 0
            stray[:, idx, :, idx] = 0.0
        if float(np.linalg.norm(stray)) > tol:
            return False
        for k in range(self.ell):
            idx = k * diag_step if self.ell > 1 else 0
            block = tens[:, idx, :, idx]
            weight = float(np.real(np.trace(block)))
            if abs(weight - 1.0 / self.ell) > tol:
                return False
            member = _unchecked(base_lay, block * self.ell, 1e-9)
            if not self.base.membership(member):
                return False
        return True

    def sample(self, rng, lay):
        base_factors, j_factors = self._split(lay)
        if not base_factors:
            return self.randomness_state().density([lb for lb, _ in j_factors])
        base_lay = RegisterLayout(base_factors)
        d_base = base_lay.dim
        d_j = self.ell**self.t
        diag_step = (d_j - 1) // (self.ell - 1) if self.ell > 1 else 1
        sigma = self.base.sample(rng, base_lay)
        m = np.zeros((d_base * d_j, d_base * d_j), dtype=np.complex128)
        tens = m.reshape(d_base, d_j, d_base, d_j)
        for k in range(self.ell):
            u = self.base.sample_free_unitary(rng, base_lay)
            idx = k * diag_step if self.ell > 1 else 0
            tens[:, idx, :, idx] = (u @ sigma.matrix @ u.conj().T) / self.ell
        return _unchecked(lay, m, 1e-9)

    def log_tau_inf(self, lay):
        if self.t >= 2:
            # every member is rank deficient on the correlated registers
            return math.inf
        base_factors, _ = self._split(lay)
        base_part = (
            self.base.log_tau_inf(RegisterLayout(base_factors)) if base_factors else 0.0
        )
        return base_part + math.log2(self.ell)

    def max_overlap(self, test_op, lay):
        base_factors, j_factors = self._split(lay)
        if not base_factors:
            target = self.randomness_state().density([lb for lb, _ in j_factors])
            return float(np.real(np.trace(test_op @ target.matrix)))
        base_lay = RegisterLayout(base_factors)
        d_base = base_lay.dim
        d_j = self.ell**self.t
        diag_step = (d_j - 1) // (self.ell - 1) if self.ell > 1 else 1
        tens = np.asarray(test_op).reshape(d_base, d_j, d_base, d_j)
        total = 0.0
        for k in range(self.ell):
            idx = k * diag_step if self.ell > 1 else 0
            block = tens[:, idx, :, idx]
            total += float(np.linalg.eigvalsh(0.5 * (block + block.conj().T))[-1])
        return total / self.ell


def make_free_set(name: str, **params) -> FreeSet:
    """Factory for the registered family names."""
    if name == "coherence":
        return CoherenceSet()
    if name == "uniformity":
        return UniformitySet()
    if name == "gibbs":
        return GibbsSet(params["hamiltonian"], params.get("beta", 1.0))
    if name == "asymmetry":
        return AsymmetrySet(params["unitaries"])
    if name == "separable-2qubit":
        return SeparableTwoQubitSet(params.get("copies", 1))
    if name == "shared-randomness-multiparty":
        return SharedRandomnessSet(
            params["base"], params["ell"], params.get("t", 2)
        )
    if name == "contextuality":
        raise UnsupportedFamilyError(
            "contextuality free sets use a conditional-probability formalism, "
            "not density matrices; see the README for pointers"
        )
    if name == "stabilizer":
        raise UnsupportedFamilyError(
            "the stabilizer family needs Clifford-orbit machinery this "
            "toolkit does not include; see the README for pointers"
        )
    raise FreeSetError(f"unknown family {name!r}; known: {FAMILY_NAMES}")


# ---------------------------------------------------------------------------
# module-level operations
# ---------------------------------------------------------------------------


def membership(free_set: FreeSet, sigma: DensityMatrix) -> bool:
    free_set.check_layout(sigma.layout)
    return free_set.membership(sigma)


def closest_free_relative_entropy(free_set: FreeSet, rho: DensityMatrix, seed: int = 0):
    return free_set.closest_relative_entropy(rho, seed)


def closest_free_smooth_max_relent(
    free_set: FreeSet, rho: DensityMatrix, eps: float, seed: int = 0, **kw
):
    return free_set.closest_smooth_max_relent(rho, eps, seed, **kw)


def replicate_state(rho: DensityMatrix, copies: int) -> DensityMatrix:
    """``copies``-fold product with relabeled factors (``label#i``)."""
    if copies < 1:
        raise ValueError("copies must be >= 1")
    if rho.dim**copies > DIM_BUDGET:
        raise DimensionOverflowError(
            f"dimension {rho.dim ** copies} exceeds the budget {DIM_BUDGET}"
        )
    parts = []
    for i in range(1, copies + 1):
        lay_i = RegisterLayout(
            tuple((f"{lb}#{i}", d) for lb, d in rho.layout.factors)
        )
        parts.append(_unchecked(lay_i, rho.matrix, rho.tolerance))
    out = parts[0]
    for p in parts[1:]:
        out = tensor(out, p)
    return out


def regularized_relative_entropy(
    free_set: FreeSet, rho: DensityMatrix, n_max: int, seed: int = 0
) -> list[EntropyEstimate]:
    """Per-copy closest-member relative entropy at 1..n_max copies."""
    out = []
    for n in range(1, n_max + 1):
        rho_n = replicate_state(rho, n)
        fs_n = free_set.extended(n)
        _, est = fs_n.closest_relative_entropy(rho_n, seed)
        out.append(
            EntropyEstimate(est.value / n, method=est.method)
        )
    if free_set.name in ("coherence", "uniformity", "gibbs"):
        values = [e.value for e in out]
        if max(values) - min(values) > 1e-6:
            raise FreeSetError(
                f"per-copy values {values} violate additivity for {free_set.name}"
            )
    return out


def log_infnorm_constant(
    free_set: FreeSet, single_copy_layout: RegisterLayout, n_max: int = 4
) -> float:
    """Smallest per-copy sup norm of the log spectrum over free members.

    Computed as the minimum over block sizes up to ``n_max`` of the
    family's per-layout infimum divided by the block size; infinite when
    every member is rank deficient.
    """
    best = math.inf
    for n in range(1, n_max + 1):
        factors = []
        for i in range(1, n + 1):
            factors.extend(
                (f"{lb}#{i}", d) for lb, d in single_copy_layout.factors
            )
        lay_n = RegisterLayout(tuple(factors))
        fs_n = free_set.extended(n)
        value = fs_n.log_tau_inf(lay_n)
        best = min(best, value / n)
    return best


def block_structure_check(
    free_set: FreeSet,
    operations,
    sigma_samples,
    control_label: str | None = None,
) -> bool:
    """Verify the randomness-register block form of protocol operations.

    Every operation must be block diagonal in the computational basis of
    the control register (the last factor by convention) with unitary
    blocks, and the induced states
    ``(1/ell) sum_j U_j sigma U_j^dag (x) |j><j|`` built from the supplied
    free samples must land back in the family.
    """
    for op in operations:
        lay = op.layout
        label = control_label or lay.labels[-1]
        if label != lay.labels[-1]:
            raise FreeSetError("the randomness register must be the last factor")
        ell = lay.dim_of(label)
        base_lay = lay.drop([label])
        d_base = base_lay.dim
        blocks = _extract_control_blocks(op, d_base, ell)
        if blocks is None:
            return False
        for block in blocks:
            if np.abs(block @ block.conj().T - np.eye(d_base)).max() > 1e-9:
                return False
        for sigma in sigma_samples:
            if sigma.layout.dim != d_base:
                raise FreeSetError("sample dimension does not match the base layout")
            for block in blocks:
                moved = block @ sigma.matrix @ block.conj().T
                cand = _unchecked(sigma.layout, moved, max(sigma.tolerance, 1e-9))
                if not free_set.membership(cand):
                    return False
    return True


def _extract_control_blocks(op: UnitaryOp, d_base: int, ell: int):
    """Blocks of a control-last block-diagonal unitary, or None."""
    if op.permutation is not None:
        perm = op.permutation
        if np.any(perm % ell != np.arange(perm.shape[0]) % ell):
            return None
        blocks = []
        for j in range(ell):
            sub = perm[j::ell] // ell
            m = np.zeros((d_base, d_base), dtype=np.complex128)
            m[sub, np.arange(d_base)] = 1.0
            blocks.append(m)
        return blocks
    u = op.matrix
    tens = u.reshape(d_base, ell, d_base, ell)
    stray = tens.copy()
    for j in range(ell):
        stray[:, j, :, j] = 0.0
    if float(np.linalg.norm(stray)) > 1e-9:
        return None
    return [np.ascontiguousarray(tens[:, j, :, j]) for j in range(ell)]
