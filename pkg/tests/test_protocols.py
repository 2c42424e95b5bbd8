import math

import numpy as np
import pytest

from erasure.entropies import max_relative_entropy, smooth_max_relative_entropy
from erasure.free_sets import (
    CoherenceSet,
    SeparableTwoQubitSet,
    UniformitySet,
    block_structure_check,
)
from erasure.protocols import (
    BlockProtocolPlan,
    ProtocolError,
    ProtocolTranscript,
    classical_convex_split_distance,
    convex_split_distance_check,
    convex_split_state,
    converse_certificate,
    plan_block_protocol,
    randomness_rate_report,
    run_block_protocol,
    run_catalytic_transformation,
    run_multiparty_transformation,
)
from erasure.states import (
    DensityMatrix,
    controlled_swap,
    haar_unitary,
    layout,
    partial_trace,
    purified_distance,
    random_density_matrix,
    tensor,
)

QUBIT = layout(("M", 2))
KET0 = DensityMatrix.pure([1, 0], QUBIT)
PLUS = DensityMatrix.pure([1 / np.sqrt(2), 1 / np.sqrt(2)], QUBIT)
MIXED = DensityMatrix.maximally_mixed(QUBIT)
BELL = DensityMatrix.pure(np.array([1, 0, 0, 1]) / np.sqrt(2), layout(("A", 2), ("B", 2)))


class TestConvexSplitState:
    def test_equal_states_give_product(self):
        rng = np.random.default_rng(0)
        sig = random_density_matrix(rng, QUBIT)
        split = convex_split_state(sig, sig, 3)
        want = np.kron(np.kron(sig.matrix, sig.matrix), sig.matrix)
        assert np.allclose(split.matrix, want, atol=1e-12)

    def test_single_slot_is_input(self):
        rng = np.random.default_rng(1)
        rho = random_density_matrix(rng, QUBIT)
        sig = random_density_matrix(rng, QUBIT)
        split = convex_split_state(rho, sig, 1)
        assert np.allclose(split.matrix, rho.matrix)

    def test_marginals_are_mixtures(self):
        # partial-trace oracle at n=3: every slot holds rho/3 + 2 sigma/3
        rng = np.random.default_rng(2)
        rho = random_density_matrix(rng, QUBIT)
        sig = random_density_matrix(rng, QUBIT)
        split = convex_split_state(rho, sig, 3)
        want = rho.matrix / 3 + 2 * sig.matrix / 3
        for label in split.layout.labels:
            marg = split.marginal([label])
            assert np.allclose(marg.matrix, want, atol=1e-12)

    def test_block_swap_symmetry(self):
        from erasure.states import swap_registers

        rng = np.random.default_rng(3)
        rho = random_density_matrix(rng, QUBIT)
        sig = random_density_matrix(rng, QUBIT)
        split = convex_split_state(rho, sig, 3)
        swapped = swap_registers(split.layout, "M@1", "M@3").apply(split)
        assert np.allclose(swapped.matrix, split.matrix, atol=1e-12)

    def test_dimension_guard(self):
        with pytest.raises(Exception):
            convex_split_state(MIXED, MIXED, 13)


class TestConvexSplitBound:
    def test_equal_states_zero_distance(self):
        rng = np.random.default_rng(4)
        sig = random_density_matrix(rng, QUBIT)
        lhs, rhs, ok = convex_split_distance_check(sig, sig, 4, 0.0)
        assert lhs < 1e-9
        assert ok

    def test_classical_fast_path_large_count(self):
        p = DensityMatrix.diagonal([0.9, 0.1], QUBIT)
        q = DensityMatrix.diagonal([0.5, 0.5], QUBIT)
        lhs, rhs, ok = convex_split_distance_check(p, q, 64, 0.0)
        assert ok
        assert lhs < rhs

    def test_classical_formula_matches_dense(self):
        # the type-class summation agrees with the materialized mixture
        p = np.array([0.8, 0.2])
        q = np.array([0.4, 0.6])
        dm_p = DensityMatrix.diagonal(p, QUBIT)
        dm_q = DensityMatrix.diagonal(q, QUBIT)
        split = convex_split_state(dm_p, dm_q, 3)
        target = tensor(
            tensor(
                DensityMatrix.diagonal(q, layout(("M@1", 2))),
                DensityMatrix.diagonal(q, layout(("M@2", 2))),
            ),
            DensityMatrix.diagonal(q, layout(("M@3", 2))),
        )
        dense = purified_distance(split, target)
        fast = classical_convex_split_distance(p, q, 3)
        assert abs(dense - fast) < 1e-10

    def test_dense_qubit_pure_against_mixed(self):
        values = []
        for n in (4, 8):
            lhs, rhs, ok = convex_split_distance_check(PLUS, MIXED, n, 0.0)
            assert ok
            values.append(lhs)
        assert values[1] < values[0]

    def test_holds_on_random_pairs(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            rho = random_density_matrix(rng, QUBIT)
            sig = random_density_matrix(rng, QUBIT)
            for eps in (0.0, 0.05):
                lhs, rhs, ok = convex_split_distance_check(rho, sig, 4, eps)
                assert ok


class TestCatalyticRun:
    def test_free_input_needs_nothing(self):
        tr = run_catalytic_transformation(MIXED, UniformitySet(), 0.0, 0.5)
        assert tr.n_copies == 1
        assert tr.log_J == 0.0
        assert tr.achieved_distance < 1e-9

    def test_uniformity_pure_qubit(self):
        tr = run_catalytic_transformation(KET0, UniformitySet(), 0.0, 0.5)
        assert tr.n_formula == 8
        assert tr.n_copies == 8
        assert abs(tr.k_bits - 1.0) < 1e-9
        assert tr.achieved_distance <= 0.5 + 1e-9
        assert tr.catalyst_return_distance <= 0.5 + 1e-9
        assert tr.output_state["m_register_matches_sigma_within"] <= 1e-10
        assert abs(tr.catalyst_qubits - 1.0 * 2.0 / 0.25) < 1e-6

    def test_coherence_plus_state(self):
        tr = run_catalytic_transformation(PLUS, CoherenceSet(), 0.0, 0.5)
        assert tr.n_formula == 8
        assert tr.achieved_distance <= 0.5 + 1e-9

    def test_capped_run_still_meets_its_bound(self):
        tr = run_catalytic_transformation(KET0, UniformitySet(), 0.0, 0.2, cap_dim=64)
        assert tr.capped
        assert tr.n_copies < tr.n_formula
        assert tr.achieved_distance <= tr.distance_bound + 1e-9
        assert tr.n_formula == 50

    def test_transcript_invariant_enforced(self):
        tr = run_catalytic_transformation(KET0, UniformitySet(), 0.0, 0.5)
        with pytest.raises(ProtocolError):
            ProtocolTranscript(
                **{
                    **tr.__dict__,
                    "log_J": tr.log_J + 0.5,
                }
            )

    def test_protocol_operation_has_block_form(self):
        # the run's controlled swap, rebuilt explicitly, passes the
        # structure check with free samples
        n = 4
        factors = [("M", 2)] + [(f"M@{i}", 2) for i in range(1, n + 1)] + [("J", n)]
        lay = layout(*factors)
        op = controlled_swap(lay, "J", "M", [f"M@{i}" for i in range(1, n + 1)])
        fs = UniformitySet()
        rng = np.random.default_rng(6)
        samples = [fs.sample(rng, lay.drop(["J"]))]
        assert block_structure_check(fs, [op], samples)


class TestConverse:
    def test_free_input_bound_is_zero(self):
        tr = run_catalytic_transformation(MIXED, UniformitySet(), 0.0, 0.5)
        lower, factor = converse_certificate(tr, UniformitySet(), 0.0)
        assert lower == 0.0
        assert factor == 1.0

    def test_uniformity_needs_one_bit(self):
        tr = run_catalytic_transformation(KET0, UniformitySet(), 0.0, 0.5)
        lower, factor = converse_certificate(tr, UniformitySet(), 0.0)
        assert abs(lower - 1.0) < 1e-9
        assert factor == 1.0
        assert lower <= tr.log_J + 1e-6

    def test_withheld_structure_halves_the_bound(self):
        tr = run_catalytic_transformation(KET0, UniformitySet(), 0.0, 0.5)
        lower, factor = converse_certificate(
            tr, UniformitySet(), 0.0, trust_block_structure=False
        )
        assert factor == 0.5
        assert 0.5 * lower <= tr.log_J + 1e-6

    def test_sandwich_with_achievability(self):
        for rho, fs in ((KET0, UniformitySet()), (PLUS, CoherenceSet())):
            delta = 0.5
            tr = run_catalytic_transformation(rho, fs, 0.0, delta)
            lower, factor = converse_certificate(tr, fs, 0.0)
            assert factor * lower <= tr.log_J + 1e-6
            assert tr.log_J <= tr.k_bits + 2 * math.log2(1 / delta) + 1e-6


class TestMultiparty:
    def test_product_free_input(self):
        rng = np.random.default_rng(7)
        fs = SeparableTwoQubitSet()
        free_input = fs.sample(rng, BELL.layout)
        tr = run_multiparty_transformation(free_input, fs, 0.0, 0.7, t=2)
        assert tr.achieved_distance < 1e-9
        assert tr.n_copies == 1
        assert tr.parties == 2

    @pytest.mark.slow
    def test_bell_erasure(self):
        fs = SeparableTwoQubitSet()
        tr = run_multiparty_transformation(BELL, fs, 0.0, 0.7, t=2)
        assert abs(tr.k_bits - 1.0) < 2e-3
        assert tr.n_formula == math.ceil(2.0**tr.k_bits / 0.49)
        assert tr.achieved_distance <= 0.7 + 1e-9
        assert tr.extras["per_party_swaps_compose"]
        assert tr.extras["shared_randomness_marginal_error"] < 1e-12
        lower, factor = converse_certificate(tr, fs, 0.0)
        assert lower >= 1.0 - 1e-9
        assert factor * lower <= tr.log_J + 1e-6

    def test_rejects_single_party(self):
        with pytest.raises(ValueError):
            run_multiparty_transformation(BELL, SeparableTwoQubitSet(), 0.0, 0.5, t=1)


class TestBlockPlan:
    def test_degenerate_variance_clamps_block_length(self):
        p = DensityMatrix.diagonal([0.7, 0.3], QUBIT)
        plan = plan_block_protocol(p, p, 1024, 0.05, 0.01)
        assert plan.ell == 1
        assert abs(plan.k_per_block - 2 * math.log2(2 * 1024 / 0.01)) < 1e-9

    def test_classical_plan_at_scale(self):
        p = DensityMatrix.diagonal([0.7, 0.3], QUBIT)
        q = DensityMatrix.diagonal([0.5, 0.5], QUBIT)
        plan = plan_block_protocol(p, q, 2**20, 0.1, 0.01)
        assert plan.k_method == "classical-bruteforce"
        assert plan.ell == math.ceil(2 * 20 * plan.variance / 0.01)
        # exact smoothing of tiny balls carries a spread term the stated
        # rate bound does not cover; the plan records the honest comparison
        assert plan.k_per_block / plan.ell > plan.relative_entropy
        assert isinstance(plan.rate_bound_ok, bool)

    def test_catalyst_qubit_identity(self):
        p = DensityMatrix.diagonal([0.7, 0.3], QUBIT)
        q = DensityMatrix.diagonal([0.5, 0.5], QUBIT)
        plan = plan_block_protocol(p, q, 64, 0.3, 0.1)
        want = 2 * plan.ell * 2.0**plan.k_per_block
        assert plan.catalyst_qubits == want

    def test_precondition_enforced(self):
        p = DensityMatrix.diagonal([0.7, 0.3], QUBIT)
        q = DensityMatrix.diagonal([0.5, 0.5], QUBIT)
        with pytest.raises(ProtocolError):
            plan_block_protocol(p, q, 64, 0.5, 0.01)

    def test_plan_invariants_checked(self):
        with pytest.raises(ProtocolError):
            BlockProtocolPlan(
                m=16, gamma=0.1, eps=0.05, ell=7, blocks=3, eps_block=0.01,
                k_per_block=1.0, k_method="classical-bruteforce",
                catalyst_qubits=1.0, relative_entropy=0.1, variance=0.0,
                rate_bound_ok=True,
            )


class TestBlockRun:
    def test_single_block_reduces_to_one_shot(self):
        tr = run_block_protocol(KET0, UniformitySet(), m=1, gamma=0.05, eps=0.01, cap_dim=256)
        per_block = tr.output_state["per_block_distances"]
        assert len(per_block) == 1
        assert abs(tr.output_state["final_distance"] - per_block[0]) < 1e-9

    def test_two_blocks_accumulate_additively(self):
        tr = run_block_protocol(KET0, UniformitySet(), m=2, gamma=0.05, eps=0.01, cap_dim=512)
        per_block = tr.output_state["per_block_distances"]
        final = tr.output_state["final_distance"]
        assert len(per_block) == 2
        assert final <= 2 * max(per_block) + 1e-8

    def test_erased_blocks_leave_catalyst_marginal_still(self):
        tr = run_block_protocol(KET0, UniformitySet(), m=2, gamma=0.05, eps=0.01, cap_dim=512)
        ideal_drift = tr.output_state["catalyst_marginal_drift"]
        # applying a block map to the all-free state moves nothing at all
        assert all(d <= 1.0 for d in ideal_drift)
        assert tr.achieved_distance <= tr.distance_bound + 1e-8


class TestChannelAccumulation:
    def _random_channel(self, rng, dim):
        kraus_unitaries = [haar_unitary(rng, dim) for _ in range(2)]
        weights = rng.dirichlet(np.ones(2))

        def channel(state):
            acc = sum(
                w * (u @ state.matrix @ u.conj().T)
                for w, u in zip(weights, kraus_unitaries)
            )
            return DensityMatrix(state.layout, acc)

        return channel

    def test_iterated_channels_drift_additively(self):
        rng = np.random.default_rng(8)
        lay = layout(("A", 3))
        for _ in range(10):
            start = random_density_matrix(rng, lay)
            channels = [self._random_channel(rng, 3) for _ in range(4)]
            single = [purified_distance(ch(start), start) for ch in channels]
            state = start
            for i, ch in enumerate(channels, start=1):
                state = ch(state)
                assert purified_distance(state, start) <= i * max(single) + 1e-8


class TestRateReport:
    def test_free_input_is_all_zero(self):
        diag = DensityMatrix.diagonal([0.3, 0.7], QUBIT)
        rep = randomness_rate_report(diag, CoherenceSet(), [0.05], 3)
        assert all(r.achievable == 0.0 and r.converse == 0.0 for r in rep.rows)

    def test_uniformity_rate_is_one(self):
        rep = randomness_rate_report(KET0, UniformitySet(), [0.05], 4)
        for r in rep.rows:
            assert abs(r.k_over_n - 1.0) < 0.05
            assert abs(r.e_over_n - 1.0) < 1e-9
            assert r.converse <= r.e_over_n + 1e-9 <= r.achievable + 1e-9

    def test_coherence_plus_converges(self):
        rep = randomness_rate_report(PLUS, CoherenceSet(), [0.05], 6)
        last = [r for r in rep.rows if r.n == 6][0]
        assert abs(last.k_over_n - 1.0) <= 0.2
        for r in rep.rows:
            assert r.converse <= r.e_over_n + 1e-9
            assert r.converse <= r.achievable + 1e-9

    def test_rank_deficient_families_are_skipped(self):
        from erasure.free_sets import SharedRandomnessSet

        fs = SharedRandomnessSet(SeparableTwoQubitSet(), ell=2, t=2)
        lay = layout(("A", 2), ("B", 2), ("J1", 2), ("J2", 2))
        rho = DensityMatrix.maximally_mixed(lay)
        rep = randomness_rate_report(rho, fs, [0.05], 2)
        assert rep.skipped
        assert rep.rows == []
