import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridlessdoa import geometry as geo
from gridlessdoa.errors import (
    DimensionTooSmall,
    InputError,
    NonLatticePosition,
    SizeMismatch,
)

from oracles import steering_flat

HALF = (0.5, 0.5, 0.5)


dims_strategy = st.tuples(
    st.integers(1, 3), st.integers(1, 4), st.integers(1, 5)
)


class TestSteeringUniform:
    def test_zero_frequency_all_ones(self):
        r = geo.steering_vector_uniform([1, 1, 4], 0.0)
        assert np.allclose(r, 0.5 * np.ones(4), atol=1e-15)

    def test_half_frequency_alternating(self):
        r = geo.steering_vector_uniform([1, 1, 2], 0.5)
        assert np.allclose(r, np.array([1.0, -1.0]) / math.sqrt(2), atol=1e-15)

    def test_kronecker_identity(self, rng):
        for _ in range(10):
            fy, fz = rng.random(2)
            r = geo.steering_vector_uniform([1, 2, 2], [fy, fz])
            kron = np.kron(
                geo.steering_vector_uniform([1, 1, 2], fy),
                geo.steering_vector_uniform([1, 1, 2], fz),
            )
            assert np.abs(r - kron).max() < 1e-12

    @given(
        dims=dims_strategy,
        f=st.tuples(*[st.floats(0, 0.999999) for _ in range(3)]),
    )
    @settings(max_examples=60, deadline=None)
    def test_unit_norm_and_flat_formula(self, dims, f):
        r = geo.steering_vector_uniform(dims, f)
        assert abs(np.linalg.norm(r) - 1.0) < 1e-12
        assert np.abs(r - steering_flat(dims, f)).max() < 1e-12


class TestSteeringAngles:
    def test_zero_phase(self):
        arr = geo.ArrayDeployment.from_positions(np.zeros((1, 3)), HALF)
        v = geo.steering_vector_angles(arr, math.pi / 2, 0.0)
        assert np.allclose(v, np.ones(1))

    def test_two_antenna_half_wave(self):
        arr = geo.ArrayDeployment.from_positions([[0, 0, 0], [1, 0, 0]], HALF)
        v = geo.steering_vector_angles(arr, math.pi / 2, 0.0)
        assert np.allclose(v, np.array([1.0, -1.0]) / math.sqrt(2), atol=1e-14)

    def test_matches_uniform_composition(self, rng):
        arr = geo.ArrayDeployment.uniform([1, 1, 3], HALF)
        for theta in rng.uniform(0, math.pi, 10):
            direct = geo.steering_vector_angles(arr, theta, 0.0)
            via_freq = geo.steering_vector_uniform(
                [1, 1, 3], geo.freq_from_angles(theta, 0.0, HALF)
            )
            assert np.abs(direct - via_freq).max() < 1e-12


class TestFreqFromAngles:
    def test_boresight(self):
        assert np.allclose(geo.freq_from_angles(0.0, 0.3, HALF), [0, 0, 0.5])

    def test_broadside(self):
        f = geo.freq_from_angles(math.pi / 2, 0.0, HALF)
        assert np.allclose(f, [0.5, 0, 0], atol=1e-15)

    def test_zero_spacing(self):
        assert np.allclose(geo.freq_from_angles(1.1, 0.7, (0, 0, 0)), [0, 0, 0])

    def test_negative_arguments_wrap(self):
        f = geo.freq_from_angles(-math.pi / 2, 0.0, HALF)
        assert 0.0 <= f[0] < 1.0 and abs(f[0] - 0.5) < 1e-12


def fig1a_planar_array():
    "3x4 planar grid with three antennas removed (flat indices 0, 5, 6)."
    keep = [i for i in range(12) if i not in (0, 5, 6)]
    pos = [(0, i // 4, i % 4) for i in keep]
    return geo.ArrayDeployment.from_positions(pos, HALF, dims=(1, 3, 4))


class TestEmbedding:
    def test_uniform_self_embedding_is_identity(self):
        arr = geo.ArrayDeployment.uniform([1, 3, 4])
        A = geo.embed_in_virtual(arr, [1, 3, 4])
        assert np.array_equal(A.row_to_virtual, np.arange(12))
        assert A.identity_like()

    def test_planar_example_sensed_set(self):
        A = geo.embed_in_virtual(fig1a_planar_array(), [1, 3, 4])
        # 1-based {2:5, 8:12} -> 0-based {1..4, 7..11}
        assert A.n == 9
        assert sorted(A.row_to_virtual.tolist()) == [1, 2, 3, 4, 7, 8, 9, 10, 11]

    def test_cubic_shell_counts(self, cubic_array_file):
        from gridlessdoa.cli import parse_array_file

        arr = parse_array_file(cubic_array_file)
        A = geo.embed_in_virtual(arr, [4, 4, 4])
        assert A.n == 56 and A.n_virtual == 64

    def test_dimension_too_small(self):
        arr = geo.ArrayDeployment.uniform([1, 3, 4])
        with pytest.raises(DimensionTooSmall):
            geo.embed_in_virtual(arr, [1, 3, 3])

    def test_non_lattice_position(self):
        arr = geo.ArrayDeployment.from_positions([[0, 0, 0.5]], HALF, dims=(1, 1, 2))
        with pytest.raises(NonLatticePosition):
            geo.embed_in_virtual(arr, [1, 1, 2])

    def test_sensing_identity(self, rng):
        arr = fig1a_planar_array()
        A = geo.embed_in_virtual(arr, [1, 3, 6])
        for _ in range(10):
            f = rng.random(3)
            gathered = A.apply(geo.steering_vector_uniform([1, 3, 6], f))
            direct = np.exp(
                -2j * np.pi * (arr.positions @ f)
            ) / math.sqrt(A.n_virtual)
            assert np.abs(gathered - direct).max() < 1e-12

    def test_adjoint_scatter(self):
        arr = fig1a_planar_array()
        A = geo.embed_in_virtual(arr, [1, 3, 4])
        y = np.arange(1, 10, dtype=complex)
        x = A.adjoint(y)
        assert np.allclose(A.apply(x), y)
        assert np.count_nonzero(x) == 9


class TestCanonicalize:
    @pytest.mark.parametrize(
        "dims,want_dims,want_perm",
        [
            ((6, 3, 1), (1, 3, 6), (2, 1, 0)),
            ((4, 4, 4), (4, 4, 4), (0, 1, 2)),
            ((1, 8, 3), (1, 3, 8), (0, 2, 1)),
        ],
    )
    def test_examples(self, dims, want_dims, want_perm):
        got_dims, perm = geo.canonicalize(dims)
        assert got_dims == want_dims and perm == want_perm

    def test_idempotent(self):
        dims, _ = geo.canonicalize((6, 3, 1))
        again, perm = geo.canonicalize(dims)
        assert again == dims and perm == (0, 1, 2)

    def test_commutes_with_steering(self, rng):
        dims = (4, 2, 3)
        cdims, perm = geo.canonicalize(dims)
        f = rng.random(3)
        r_orig = geo.steering_vector_uniform(dims, f)
        r_perm = geo.steering_vector_uniform(cdims, geo.permute_triples(f, perm))
        coords = geo.lattice_coords(dims)
        src = geo.flat_index(dims, coords)
        dst = geo.flat_index(cdims, geo.permute_triples(coords, perm))
        assert np.abs(r_perm[dst] - r_orig[src]).max() < 1e-12


class TestEmbeddedUniform:
    def test_planar_example(self):
        A = geo.embed_in_virtual(fig1a_planar_array(), [1, 3, 4])
        rep = geo.find_embedded_uniform(A)
        assert rep.sub_dims == (1, 2, 3)
        assert rep.strides[1] == 2 and rep.offsets[2] == 1
        assert rep.s_c == 6 and rep.n_c == 6
        assert rep.indices.tolist() == [1, 2, 3, 9, 10, 11]

    def test_full_uniform_array(self):
        A = geo.embed_in_virtual(geo.ArrayDeployment.uniform([1, 3, 6]), [1, 3, 6])
        rep = geo.find_embedded_uniform(A)
        assert rep.sub_dims == (1, 3, 6) and rep.s_c == 10 and rep.n_c == 18

    def test_cubic_shell(self, cubic_array_file):
        from gridlessdoa.cli import parse_array_file

        arr = parse_array_file(cubic_array_file)
        A = geo.embed_in_virtual(arr, [4, 4, 4])
        rep = geo.find_embedded_uniform(A)
        assert sorted(rep.sub_dims) == [2, 4, 4]
        assert rep.s_c == 10 and rep.n_c == 32

    def test_single_antenna(self):
        arr = geo.ArrayDeployment.from_positions([[0, 0, 0]], HALF, dims=(1, 1, 1))
        A = geo.embed_in_virtual(arr, [1, 1, 1])
        rep = geo.find_embedded_uniform(A)
        assert rep.n_c == 1

    def test_phase_shifted_uniform_structure(self, rng):
        "Entries at I_c equal a global phase (and fixed scale) times the sub-array vector."
        A = geo.embed_in_virtual(fig1a_planar_array(), [1, 3, 4])
        rep = geo.find_embedded_uniform(A)
        for _ in range(10):
            f = rng.random(3)
            big = geo.steering_vector_uniform([1, 3, 4], f)[rep.indices]
            sub = geo.steering_vector_uniform(
                rep.sub_dims, np.mod(np.array(rep.strides) * f, 1.0)
            )
            # proportional with unit-modulus ratio
            inner = np.vdot(sub, big)
            assert abs(abs(inner) - np.linalg.norm(big) * np.linalg.norm(sub)) < 1e-12


class TestResolvableRegion:
    def test_planar_row(self):
        A = geo.embed_in_virtual(geo.ArrayDeployment.uniform([1, 3, 6]), [1, 3, 6])
        rep = geo.find_embedded_uniform(A)
        assert geo.resolvable_region(rep, 2) == {"k_corollary": 4, "k_conjecture": 8}

    def test_cubic_row(self, cubic_array_file):
        from gridlessdoa.cli import parse_array_file

        arr = parse_array_file(cubic_array_file)
        rep = geo.find_embedded_uniform(geo.embed_in_virtual(arr, [4, 4, 4]))
        assert geo.resolvable_region(rep, 3) == {"k_corollary": 4, "k_conjecture": 15}

    def test_small_direct_formula(self):
        A = geo.embed_in_virtual(geo.ArrayDeployment.uniform([1, 2, 3]), [1, 2, 3])
        rep = geo.find_embedded_uniform(A)
        assert geo.resolvable_region(rep, 2) == {"k_corollary": 2, "k_conjecture": 2}


class TestInjectivity:
    def test_too_many_columns(self):
        A = geo.embed_in_virtual(geo.ArrayDeployment.uniform([1, 1, 4]), [1, 1, 4])
        freqs = geo.FrequencySet(1, np.linspace(0.05, 0.95, 6).reshape(-1, 1))
        out = geo.check_injectivity(A, freqs)
        assert out["injective"] is False

    def test_duplicated_column(self):
        A = geo.embed_in_virtual(geo.ArrayDeployment.uniform([1, 1, 8]), [1, 1, 8])
        raw = np.array([[0.3, 0.0, 0.0], [0.3, 0.0, 0.0]])[:, :1]
        out = geo.check_injectivity(A, raw)
        assert out["injective"] is False
        assert out["smallest_singular_value"] < 1e-12

    def test_random_draws_injective(self):
        A = geo.embed_in_virtual(geo.ArrayDeployment.uniform([1, 1, 8]), [1, 1, 8])
        for seed in range(100):
            g = np.random.default_rng(seed)
            freqs = geo.FrequencySet(1, g.random((4, 1)))
            assert geo.check_injectivity(A, freqs)["injective"]


class TestMinAntennas:
    def test_closed_form_values(self):
        assert geo.min_antennas_probabilistic(1, 2 / math.e) == 24
        assert geo.min_antennas_probabilistic(2, 0.01) == 288

    def test_precondition_violation(self):
        with pytest.raises(InputError):
            geo.min_antennas_probabilistic(1, 2.0)
        with pytest.raises(InputError):
            geo.min_antennas_probabilistic(0, 0.5)


class TestTypes:
    def test_positions_must_be_distinct(self):
        with pytest.raises(InputError):
            geo.ArrayDeployment((1, 1, 2), np.zeros((2, 3)))

    def test_d_is_derived(self):
        assert geo.ArrayDeployment.uniform([1, 3, 6]).d == 2
        assert geo.ArrayDeployment.uniform([4, 4, 4]).d == 3
        assert geo.ArrayDeployment.uniform([1, 1, 7]).d == 1

    def test_frequency_set_validation(self):
        with pytest.raises(InputError):
            geo.FrequencySet(1, np.array([[0.2], [0.2]]))
        with pytest.raises(InputError):
            geo.FrequencySet(1, np.array([[1.2]]))
        with pytest.raises(SizeMismatch):
            geo.FrequencySet(1, np.array([[0.2]]), amplitudes=[1.0, 2.0])

    def test_sensing_requires_distinct_rows(self):
        with pytest.raises(InputError):
            geo.SensingMatrix((1, 1, 4), [0, 0, 1])
