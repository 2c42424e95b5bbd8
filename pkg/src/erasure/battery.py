"""The verification battery behind the ``suite`` command.

Each criterion function returns one JSON-serializable record with a
``passed`` flag and a ``max_violation`` magnitude; the acceptance tests
drive the same functions at full scale, the CLI suite at a configurable
(default reduced) scale.  Everything is deterministic given the seed.
"""

from __future__ import annotations

import math

import numpy as np

from .entropies import (
    classical_smooth_max_relative_entropy,
    continuity_bound,
    gaussian_cdf,
    gaussian_cdf_inv,
    gaussian_quantile_bound,
    relative_entropy,
    relative_entropy_variance,
)
from .free_sets import (
    AsymmetrySet,
    CoherenceSet,
    GibbsSet,
    SeparableTwoQubitSet,
    UniformitySet,
    closest_free_relative_entropy,
    membership,
)
from .protocols import (
    converse_certificate,
    convex_split_distance,
    randomness_rate_report,
    run_block_protocol,
    run_catalytic_transformation,
    run_multiparty_transformation,
)
from .states import (
    DensityMatrix,
    layout,
    random_density_matrix,
    tensor,
    trace_distance,
)

QUBIT = layout(("M", 2))
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)


def _record(name, passed, max_violation, **details):
    return {
        "criterion": name,
        "passed": bool(passed),
        "max_violation": float(max_violation),
        **details,
    }


def check_convex_split(pairs=50, seed=0, eps_values=(0.0, 0.05), counts=(2, 4, 8)):
    """Mixture distance never beats its bound on random qubit pairs."""
    from .entropies import smooth_max_relative_entropy

    rng = np.random.default_rng(seed)
    worst = -math.inf
    rows = 0
    for _ in range(pairs):
        rho = random_density_matrix(rng, QUBIT)
        sigma = random_density_matrix(rng, QUBIT)
        for eps in eps_values:
            k = smooth_max_relative_entropy(rho, sigma, eps).value
            for n in counts:
                lhs = convex_split_distance(rho, sigma, n)
                rhs = eps + math.sqrt(2.0**k / n)
                worst = max(worst, lhs - rhs)
                rows += 1
    return _record(
        "convex-split", worst <= 1e-6, max(worst, 0.0), pairs=pairs, rows=rows
    )


def check_achievability(seed=0, cap_dim=4096):
    """One-shot runs return the catalyst and free the input register."""
    plus = DensityMatrix.pure([1 / np.sqrt(2), 1 / np.sqrt(2)], QUBIT)
    ket0 = DensityMatrix.pure([1, 0], QUBIT)
    worst = -math.inf
    transcripts = []
    for rho, fs in ((ket0, UniformitySet()), (plus, CoherenceSet())):
        tr = run_catalytic_transformation(rho, fs, 0.0, 0.5, cap_dim=cap_dim, seed=seed)
        worst = max(
            worst,
            tr.achieved_distance - 0.5,
            tr.catalyst_return_distance - 0.5,
            tr.output_state["m_register_matches_sigma_within"] - 1e-10,
        )
        transcripts.append(tr)
    return _record(
        "achievability", worst <= 1e-9, max(worst, 0.0)
    ), transcripts


def check_sandwich(transcripts, seed=0):
    """Converse and achievability bracket the randomness of the same runs."""
    worst = -math.inf
    for tr in transcripts:
        fs = {"uniformity": UniformitySet(), "coherence": CoherenceSet()}[tr.free_set]
        lower, factor = converse_certificate(tr, fs, tr.eps_target, seed=seed)
        worst = max(worst, factor * lower - tr.log_J)
        worst = max(
            worst, tr.log_J - (tr.k_bits + 2 * math.log2(1 / tr.delta)) - 1e-6
        )
        half, factor_half = converse_certificate(
            tr, fs, tr.eps_target, seed=seed, trust_block_structure=False
        )
        if factor_half != 0.5:
            worst = max(worst, 1.0)
        worst = max(worst, 0.5 * half - tr.log_J)
    return _record("sandwich", worst <= 1e-6, max(worst, 0.0))


def _fit_through_origin(xs, ys):
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    return float((xs * ys).sum() / (xs * xs).sum())


def check_second_order(eps=0.2, n_lo=2, n_mid=8, n_hi=14):
    """Residual of the expansion stays a stable multiple of ``log2 n``.

    The smoothed quantity is computed exactly for every block count by the
    classical brute-force oracle on the full product distributions, and
    the residual slope is fitted (least squares through the origin) on the
    low and high ranges separately.
    """
    p = np.array([0.7, 0.3])
    q = np.array([0.5, 0.5])
    dm_p = DensityMatrix.diagonal(p, QUBIT)
    dm_q = DensityMatrix.diagonal(q, QUBIT)
    d = relative_entropy(dm_p, dm_q).value
    v = relative_entropy_variance(dm_p, dm_q).value
    quant = gaussian_cdf_inv(eps)
    residuals = {}
    for n in range(n_lo, n_hi + 1):
        grids = np.stack(np.meshgrid(*([np.arange(2)] * n), indexing="ij"), axis=-1)
        flat = grids.reshape(-1, n)
        pn = p[flat].prod(axis=1)
        qn = q[flat].prod(axis=1)
        exact = classical_smooth_max_relative_entropy(pn, qn, eps).value
        approx = n * d + math.sqrt(n * v) * quant
        residuals[n] = abs(exact - approx)
    lo_ns = [n for n in residuals if n_lo <= n <= n_mid]
    hi_ns = [n for n in residuals if n_mid <= n <= n_hi]
    c_lo = _fit_through_origin(
        [math.log2(n) for n in lo_ns], [residuals[n] for n in lo_ns]
    )
    c_hi = _fit_through_origin(
        [math.log2(n) for n in hi_ns], [residuals[n] for n in hi_ns]
    )
    spread = abs(c_lo - c_hi) / max(abs(c_lo), abs(c_hi))
    covered = max(residuals[n] - max(c_lo, c_hi) * math.log2(n) for n in residuals)
    return _record(
        "second-order",
        spread <= 0.2,
        max(spread - 0.2, 0.0),
        c_low_range=c_lo,
        c_high_range=c_hi,
        residual_over_fit=covered,
    )


def check_gaussian_bound(eps_values=(0.5, 0.25, 0.1, 0.01, 1e-4)):
    """Quantile magnitude bound and quantile self-consistency."""
    worst = -math.inf
    for eps in eps_values:
        quant, bound, ok = gaussian_quantile_bound(eps)
        worst = max(worst, quant - bound)
        worst = max(worst, abs(gaussian_cdf(gaussian_cdf_inv(eps)) - eps) - 1e-10)
    return _record("gaussian-bound", worst <= 1e-10, max(worst, 0.0))


def check_error_accumulation(seed=0, cap_dim=512):
    """Two-block run stays within twice the worst single-block distance."""
    ket0 = DensityMatrix.pure([1, 0], QUBIT)
    tr = run_block_protocol(
        ket0, UniformitySet(), m=2, gamma=0.05, eps=0.01, cap_dim=cap_dim, seed=seed
    )
    per_block = tr.output_state["per_block_distances"]
    final = tr.output_state["final_distance"]
    violation = final - (2 * max(per_block) + 1e-8)
    return _record(
        "error-accumulation",
        violation <= 0.0,
        max(violation, 0.0),
        final=final,
        per_block=per_block,
    )


def check_continuity(pairs=50, seed=0):
    """Resource change between nearby states stays inside the bound."""
    rng = np.random.default_rng(seed)
    fs = CoherenceSet()
    worst = -math.inf
    done = 0
    while done < pairs:
        rho = random_density_matrix(rng, QUBIT)
        pert = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        pert = (pert + pert.conj().T) / 2
        pert -= np.trace(pert).real * np.eye(2) / 2
        other = rho.matrix + rng.uniform(0.01, 0.08) * pert
        w = np.linalg.eigvalsh(other)
        if w[0] < 1e-9:
            continue
        other = other / np.real(np.trace(other))
        rho_p = DensityMatrix(QUBIT, other)
        if trace_distance(rho, rho_p) > 1 / 3:
            continue
        done += 1
        bound = continuity_bound(rho, rho_p, fs)
        gap = abs(
            closest_free_relative_entropy(fs, rho)[1].value
            - closest_free_relative_entropy(fs, rho_p)[1].value
        )
        worst = max(worst, gap - bound - 1e-6)
    return _record("continuity", worst <= 0.0, max(worst, 0.0), pairs=pairs)


def check_entanglement_erasure(seed=0, cap_dim=4096, include_rate=True):
    """Bell-state erasure: converse, protocol bound, and the rate ladder."""
    bell = DensityMatrix.pure(
        np.array([1, 0, 0, 1]) / np.sqrt(2), layout(("A", 2), ("B", 2))
    )
    fs = SeparableTwoQubitSet()
    worst = -math.inf
    tr = run_multiparty_transformation(
        bell, fs, 0.0, 0.7, t=2, cap_dim=cap_dim, seed=seed
    )
    lower, factor = converse_certificate(tr, fs, 0.0, seed=seed)
    worst = max(worst, 1.0 - lower)  # at least one bit
    worst = max(worst, tr.achieved_distance - tr.distance_bound)
    details = {
        "converse_bits": lower,
        "achieved": tr.achieved_distance,
        "bound": tr.distance_bound,
        "n_copies": tr.n_copies,
    }
    if include_rate:
        rep = randomness_rate_report(bell, fs, [0.05], 2, seed=seed)
        per_copy = [r.e_over_n for r in rep.rows]
        for value in per_copy:
            worst = max(worst, value - 1.2, 1.0 - value)
        worst = max(worst, per_copy[-1] - per_copy[0] - 1e-6)  # nonincreasing
        for r in rep.rows:
            worst = max(worst, r.converse - r.e_over_n - 1e-9)
        details["e_per_copy"] = per_copy
    return _record(
        "entanglement-erasure", worst <= 1e-6, max(worst, 0.0), **details
    )


def check_free_set_axioms(samples=100, seed=0):
    """Convexity, product and trace closure, and the mixed member."""
    rng = np.random.default_rng(seed)
    families = [
        (CoherenceSet(), QUBIT),
        (UniformitySet(), QUBIT),
        (GibbsSet(np.diag([0.0, 1.0]), 1.0), QUBIT),
        (AsymmetrySet([np.eye(2), PAULI_X]), QUBIT),
        (SeparableTwoQubitSet(), layout(("A", 2), ("B", 2))),
    ]
    failures = 0
    checks = 0
    for fs, lay in families:
        lay2 = type(lay)(tuple((lb + "'", dim) for lb, dim in lay.factors))
        fs_two = fs.extended(2)
        mixed_fs = GibbsSet(np.zeros((2, 2)), 1.0) if fs.name == "gibbs" else fs
        checks += 1
        failures += not membership(mixed_fs, DensityMatrix.maximally_mixed(lay))
        for _ in range(samples):
            a = fs.sample(rng, lay)
            b = fs.sample(rng, lay2)
            w = float(rng.uniform())
            c = fs.sample(rng, lay)
            mix = DensityMatrix(lay, w * a.matrix + (1 - w) * c.matrix)
            joint = fs_two.sample(rng, lay.concat(lay2))
            checks += 3
            failures += not fs_two.membership(tensor(a, b))
            failures += not fs.membership(mix)
            failures += not fs.membership(
                joint.marginal([lb for lb, _ in lay.factors])
            )
    return _record(
        "free-set-axioms", failures == 0, float(failures), checks=checks
    )


def run_battery(samples=10, seed=0, cap_dim=256, full=False, workers=1):
    """All criteria in a stable order; ``full`` restores the large scales.

    Independent criteria may run on ``workers`` threads; the record order
    never depends on scheduling.
    """
    scale = {
        "pairs": 50 if full else samples,
        "axiom_samples": 100 if full else samples,
        "cap_dim": 4096 if full else cap_dim,
        "n_hi": 14 if full else 12,
    }

    def achievability_then_sandwich():
        achieve, transcripts = check_achievability(seed=seed, cap_dim=scale["cap_dim"])
        return [achieve, check_sandwich(transcripts, seed=seed)]

    jobs = [
        lambda: [check_convex_split(pairs=scale["pairs"], seed=seed)],
        achievability_then_sandwich,
        lambda: [check_second_order(n_hi=scale["n_hi"])],
        lambda: [check_gaussian_bound()],
        lambda: [check_error_accumulation(seed=seed)],
        lambda: [check_continuity(pairs=scale["pairs"], seed=seed)],
        lambda: [
            check_entanglement_erasure(
                seed=seed, cap_dim=scale["cap_dim"], include_rate=full
            )
        ],
        lambda: [check_free_set_axioms(samples=scale["axiom_samples"], seed=seed)],
    ]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda job: job(), jobs))
    else:
        chunks = [job() for job in jobs]
    order = [
        "convex-split",
        "achievability",
        "sandwich",
        "second-order",
        "gaussian-bound",
        "error-accumulation",
        "continuity",
        "entanglement-erasure",
        "free-set-axioms",
    ]
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=lambda rec: order.index(rec["criterion"]))
    return records
