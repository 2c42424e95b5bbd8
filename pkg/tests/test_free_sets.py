import math

import numpy as np
import pytest

from erasure.entropies import relative_entropy
from erasure.free_sets import (
    AsymmetrySet,
    CoherenceSet,
    FreeSetError,
    GibbsSet,
    SeparableTwoQubitSet,
    SharedRandomnessSet,
    SharedRandomnessState,
    UniformitySet,
    UnsupportedFamilyError,
    block_structure_check,
    closest_free_relative_entropy,
    closest_free_smooth_max_relent,
    log_infnorm_constant,
    make_free_set,
    membership,
    partial_transpose,
    regularized_relative_entropy,
    replicate_state,
)
from erasure.states import (
    DensityMatrix,
    RegisterLayout,
    UnitaryOp,
    layout,
    partial_trace,
    permute_registers,
    random_density_matrix,
    tensor,
)

QUBIT = layout(("M", 2))
PLUS = DensityMatrix.pure([1 / np.sqrt(2), 1 / np.sqrt(2)], QUBIT)
KET0 = DensityMatrix.pure([1, 0], QUBIT)
BELL = DensityMatrix.pure(np.array([1, 0, 0, 1]) / np.sqrt(2), layout(("A", 2), ("B", 2)))

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)


def pair_layout(i=1):
    return layout((f"A#{i}", 2), (f"B#{i}", 2))


def shipped_families():
    return [
        (CoherenceSet(), QUBIT),
        (UniformitySet(), QUBIT),
        (GibbsSet(np.diag([0.0, 1.0]), 1.0), QUBIT),
        (AsymmetrySet([np.eye(2), PAULI_X]), QUBIT),
        (SeparableTwoQubitSet(), layout(("A", 2), ("B", 2))),
    ]


# ---------------------------------------------------------------------------
# membership
# ---------------------------------------------------------------------------


class TestMembership:
    def test_maximally_mixed_is_free_everywhere(self):
        for fs, lay in shipped_families():
            if fs.name == "gibbs":
                # the trivial-hamiltonian thermal state is maximally mixed
                fs = GibbsSet(np.zeros((2, 2)), 1.0)
            assert membership(fs, DensityMatrix.maximally_mixed(lay)), fs.name

    def test_plus_state_not_diagonal(self):
        assert not membership(CoherenceSet(), PLUS)

    def test_bell_is_not_separable(self):
        # partial transpose oracle: the flipped matrix has eigenvalue -1/2
        flipped = partial_transpose(BELL.matrix, (2, 2), (1,))
        assert abs(np.linalg.eigvalsh(flipped)[0] + 0.5) < 1e-12
        assert not membership(SeparableTwoQubitSet(), BELL)

    def test_separable_sample_is_member(self):
        rng = np.random.default_rng(0)
        fs = SeparableTwoQubitSet()
        for _ in range(10):
            assert membership(fs, fs.sample(rng, BELL.layout))

    def test_gibbs_membership_picks_thermal_state(self):
        fs = GibbsSet(np.diag([0.0, 1.0]), 1.0)
        z = 1.0 + 0.5
        thermal = DensityMatrix.diagonal([1 / z, 0.5 / z], QUBIT)
        assert membership(fs, thermal)
        assert not membership(fs, DensityMatrix.maximally_mixed(QUBIT))

    def test_asymmetry_invariance(self):
        fs = AsymmetrySet([np.eye(2), PAULI_X])
        invariant = DensityMatrix(QUBIT, np.array([[0.5, 0.2], [0.2, 0.5]], dtype=complex))
        assert membership(fs, invariant)
        assert not membership(fs, KET0)

    def test_incompatible_layout(self):
        with pytest.raises(FreeSetError):
            membership(SeparableTwoQubitSet(), KET0)


class TestFamilyAxioms:
    SAMPLES = 20

    def test_tensor_closure(self):
        rng = np.random.default_rng(1)
        for fs, lay in shipped_families():
            lay2 = RegisterLayout(tuple((lb + "'", d) for lb, d in lay.factors))
            fs_two = fs.extended(2)
            for _ in range(self.SAMPLES):
                a = fs.sample(rng, lay)
                b = fs.sample(rng, lay2)
                assert fs_two.membership(tensor(a, b)), fs.name

    def test_trace_closure(self):
        rng = np.random.default_rng(2)
        for fs, lay in shipped_families():
            lay2 = RegisterLayout(tuple((lb + "'", d) for lb, d in lay.factors))
            fs_two = fs.extended(2)
            drop = [lb for lb, _ in lay2.factors]
            for _ in range(self.SAMPLES):
                joint = fs_two.sample(rng, lay.concat(lay2))
                reduced = partial_trace(joint, drop)
                assert fs.membership(reduced), fs.name

    def test_convexity(self):
        rng = np.random.default_rng(3)
        for fs, lay in shipped_families():
            for _ in range(self.SAMPLES):
                a = fs.sample(rng, lay)
                b = fs.sample(rng, lay)
                w = rng.uniform()
                mix = DensityMatrix(lay, w * a.matrix + (1 - w) * b.matrix)
                assert fs.membership(mix), fs.name

    def test_permutation_clause(self):
        # identical single-factor sets: membership survives factor reordering
        rng = np.random.default_rng(4)
        for fs in (CoherenceSet(), UniformitySet(), GibbsSet(np.diag([0.0, 1.0]), 1.0),
                   AsymmetrySet([np.eye(2), PAULI_X])):
            lay = layout(("M1", 2), ("M2", 2))
            for _ in range(5):
                s = fs.sample(rng, lay)
                assert fs.membership(permute_registers(s, ["M2", "M1"]))

    def test_free_state_maps_to_itself(self):
        rng = np.random.default_rng(5)
        for fs, lay in shipped_families():
            s = fs.sample(rng, lay)
            sigma, est = closest_free_relative_entropy(fs, s)
            assert est.value < 1e-6, fs.name

    def test_separable_zero_resource_iff_member(self):
        rng = np.random.default_rng(6)
        fs = SeparableTwoQubitSet()
        s = fs.sample(rng, BELL.layout)
        _, est = closest_free_relative_entropy(fs, s)
        assert est.value < 1e-6
        _, est_bell = closest_free_relative_entropy(fs, BELL)
        assert est_bell.value > 0.9


# ---------------------------------------------------------------------------
# closest members, relative entropy
# ---------------------------------------------------------------------------


class TestClosestRelativeEntropy:
    def test_coherence_plus_state(self):
        sigma, est = closest_free_relative_entropy(CoherenceSet(), PLUS)
        assert np.allclose(sigma.matrix, np.eye(2) / 2, atol=1e-10)
        assert abs(est.value - 1.0) < 1e-9
        # grid oracle over diagonal qubit states confirms the minimum
        qs = np.linspace(1e-6, 1 - 1e-6, 2001)
        grid_best = min(
            relative_entropy(PLUS, DensityMatrix.diagonal([q, 1 - q], QUBIT)).value
            for q in qs
        )
        assert est.value <= grid_best + 1e-6

    def test_uniformity_pure_qubit(self):
        sigma, est = closest_free_relative_entropy(UniformitySet(), KET0)
        assert abs(est.value - 1.0) < 1e-12

    def test_separable_bell(self):
        sigma, est = closest_free_relative_entropy(SeparableTwoQubitSet(), BELL)
        # closed form: - <phi| log2 sigma |phi> >= -log2 max Tr(phi sigma) >= 1
        assert 1.0 - 1e-9 <= est.value <= 1.0 + 5e-3
        # coarse then refined scan over the isotropic line confirms nothing
        # below 1 along it
        for ps in (np.linspace(0.0, 1 / 3, 11), np.linspace(0.25, 1 / 3, 21)):
            for p in ps:
                werner = p * BELL.matrix + (1 - p) / 3 * (np.eye(4) - BELL.matrix)
                w = DensityMatrix(BELL.layout, werner)
                assert relative_entropy(BELL, w).value >= 1.0 - 1e-9

    def test_asymmetry_twirl_is_optimal(self):
        rng = np.random.default_rng(7)
        fs = AsymmetrySet([np.eye(2), PAULI_X])
        rho = random_density_matrix(rng, QUBIT)
        sigma, est = closest_free_relative_entropy(fs, rho)
        twirled = DensityMatrix(QUBIT, fs.twirl(rho.matrix, QUBIT))
        assert est.value <= relative_entropy(rho, twirled).value + 1e-9
        assert abs(est.value - relative_entropy(rho, twirled).value) < 1e-6


class TestClosestSmoothMaxRelent:
    def test_member_gives_zero(self):
        fs = CoherenceSet()
        rho = DensityMatrix.diagonal([0.3, 0.7], QUBIT)
        sigma, est = closest_free_smooth_max_relent(fs, rho, 0.2)
        assert est.value == 0.0
        assert sigma.is_close_to(rho)

    def test_uniformity_eps_zero_is_exact(self):
        from erasure.entropies import max_relative_entropy

        sigma, est = closest_free_smooth_max_relent(UniformitySet(), KET0, 0.0)
        want = max_relative_entropy(KET0, DensityMatrix.maximally_mixed(QUBIT)).value
        assert abs(est.value - want) < 1e-12

    def test_coherence_plus_certificates_bracket(self):
        sigma, est = closest_free_smooth_max_relent(CoherenceSet(), PLUS, 0.1)
        assert est.lower_bound is not None
        assert est.lower_bound <= est.value + 1e-9
        assert est.value - est.lower_bound < 0.05

    def test_bell_min_max_relent_is_one(self):
        sigma, est = closest_free_smooth_max_relent(SeparableTwoQubitSet(), BELL, 0.0)
        assert abs(est.value - 1.0) < 2e-3
        assert est.lower_bound >= 1.0 - 1e-9


# ---------------------------------------------------------------------------
# regularization and the log-spectrum constant
# ---------------------------------------------------------------------------


class TestRegularized:
    def test_uniformity_constant(self):
        rng = np.random.default_rng(8)
        rho = random_density_matrix(rng, QUBIT)
        ests = regularized_relative_entropy(UniformitySet(), rho, 3)
        want = closest_free_relative_entropy(UniformitySet(), rho)[1].value
        for e in ests:
            assert abs(e.value - want) < 1e-9

    def test_coherence_plus_is_flat(self):
        ests = regularized_relative_entropy(CoherenceSet(), PLUS, 2)
        assert all(abs(e.value - 1.0) < 1e-8 for e in ests)

    @pytest.mark.slow
    def test_separable_bell_sequence(self):
        ests = regularized_relative_entropy(SeparableTwoQubitSet(), BELL, 2)
        values = [e.value for e in ests]
        assert values[1] <= values[0] + 1e-6
        assert all(v >= 1.0 - 1e-9 for v in values)

    def test_dimension_guard(self):
        big = DensityMatrix.maximally_mixed(layout(("M", 8)))
        with pytest.raises(Exception):
            replicate_state(big, 5)


class TestLogInfnormConstant:
    def test_uniformity_qubit(self):
        assert abs(log_infnorm_constant(UniformitySet(), QUBIT, 3) - 1.0) < 1e-12

    def test_coherence_qubit_grid(self):
        got = log_infnorm_constant(CoherenceSet(), QUBIT, 3)
        qs = np.linspace(1e-6, 1 - 1e-6, 20001)
        grid = np.maximum(np.abs(np.log2(qs)), np.abs(np.log2(1 - qs))).min()
        assert abs(got - 1.0) < 1e-12
        assert got <= grid + 1e-6

    def test_gibbs_qubit_bound(self):
        fs = GibbsSet(np.diag([0.0, 1.0]), 1.0)
        got = log_infnorm_constant(fs, QUBIT, 3)
        bound = fs.log_tau_inf_bound(QUBIT)
        assert got <= bound + 1e-12
        assert abs(bound - (1.0 + math.log2(1.5))) < 1e-12
        # direct evaluation of the thermal spectrum's log sup norm
        z = 1.5
        direct = max(abs(math.log2(1 / z)), abs(math.log2(0.5 / z)))
        assert abs(got - direct) < 1e-12

    def test_shared_randomness_multiparty_is_infinite(self):
        fs = SharedRandomnessSet(SeparableTwoQubitSet(), ell=2, t=2)
        lay = RegisterLayout((("A", 2), ("B", 2), ("J1", 2), ("J2", 2)))
        assert fs.log_tau_inf(lay) == math.inf


# ---------------------------------------------------------------------------
# randomness-register block structure
# ---------------------------------------------------------------------------


class TestBlockStructure:
    def _op_from_blocks(self, blocks, lay):
        d = blocks[0].shape[0]
        ell = len(blocks)
        m = np.zeros((d * ell, d * ell), dtype=complex)
        tens = m.reshape(d, ell, d, ell)
        for j, b in enumerate(blocks):
            tens[:, j, :, j] = b
        return UnitaryOp(lay, m)

    def test_identity_blocks_pass(self):
        lay = layout(("M", 2), ("J", 3))
        op = self._op_from_blocks([np.eye(2)] * 3, lay)
        rng = np.random.default_rng(9)
        samples = [CoherenceSet().sample(rng, QUBIT) for _ in range(3)]
        assert block_structure_check(CoherenceSet(), [op], samples)

    def test_diagonal_permutation_blocks_pass(self):
        lay = layout(("M", 2), ("J", 2))
        blocks = [np.eye(2), PAULI_X.astype(complex)]
        op = self._op_from_blocks(blocks, lay)
        rng = np.random.default_rng(10)
        samples = [CoherenceSet().sample(rng, QUBIT) for _ in range(3)]
        assert block_structure_check(CoherenceSet(), [op], samples)

    def test_non_block_unitary_fails(self):
        lay = layout(("M", 2), ("J", 2))
        had = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
        op = UnitaryOp(lay, np.kron(np.eye(2), had))
        assert not block_structure_check(CoherenceSet(), [op], [])

    def test_blocks_leaving_family_fail(self):
        lay = layout(("M", 2), ("J", 2))
        had = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
        op = self._op_from_blocks([np.eye(2), had], lay)
        samples = [DensityMatrix.diagonal([0.9, 0.1], QUBIT)]
        assert not block_structure_check(CoherenceSet(), [op], samples)

    def test_permutation_backed_operation(self):
        from erasure.states import controlled_swap

        lay = layout(("M", 2), ("C1", 2), ("C2", 2), ("J", 2))
        op = controlled_swap(lay, "J", "M", ["C1", "C2"])
        rng = np.random.default_rng(11)
        fs = UniformitySet()
        samples = [fs.sample(rng, lay.drop(["J"]))]
        assert block_structure_check(fs, [op], samples)


# ---------------------------------------------------------------------------
# shared randomness
# ---------------------------------------------------------------------------


class TestSharedRandomness:
    def test_id_state_marginals(self):
        state = SharedRandomnessState(4, 2).density()
        for lb in ("J1", "J2"):
            marg = state.marginal([lb])
            assert np.allclose(marg.matrix, np.eye(4) / 4, atol=1e-12)

    def test_id_state_is_classical_and_member(self):
        from erasure.states import is_classical_on

        state = SharedRandomnessState(3, 2).density()
        assert is_classical_on(state, "J1")
        assert is_classical_on(state, "J2")
        fs = SharedRandomnessSet(SeparableTwoQubitSet(), 3, 2)
        assert fs.membership(state)

    def test_full_form_membership(self):
        rng = np.random.default_rng(12)
        fs = SharedRandomnessSet(CoherenceSet(), ell=3, t=1)
        lay = RegisterLayout((("M", 2), ("J1", 3)))
        assert fs.membership(fs.sample(rng, lay))

    def test_wrong_randomness_dimension(self):
        fs = SharedRandomnessSet(CoherenceSet(), ell=3, t=1)
        with pytest.raises(FreeSetError):
            fs.membership(DensityMatrix.maximally_mixed(layout(("M", 2), ("J1", 2))))


# ---------------------------------------------------------------------------
# factory
# ---------------------------------------------------------------------------


class TestFactory:
    def test_known_names(self):
        assert make_free_set("coherence").name == "coherence"
        assert make_free_set("uniformity").name == "uniformity"
        assert make_free_set("gibbs", hamiltonian=np.diag([0.0, 1.0]), beta=1.0).name == "gibbs"
        assert make_free_set("asymmetry", unitaries=[np.eye(2)]).name == "asymmetry"
        assert make_free_set("separable-2qubit").name == "separable-2qubit"

    def test_unsupported_families_point_to_docs(self):
        for name in ("contextuality", "stabilizer"):
            with pytest.raises(UnsupportedFamilyError):
                make_free_set(name)

    def test_unknown_name(self):
        with pytest.raises(FreeSetError):
            make_free_set("magic")

    def test_non_qubit_entanglement_rejected(self):
        with pytest.raises(UnsupportedFamilyError):
            SeparableTwoQubitSet.for_dims(3, 3)
