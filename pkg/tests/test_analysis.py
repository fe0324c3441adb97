"""Exact engine: stationary laws, curves, inequalities, shape certificates."""

import numpy as np
import pytest
from scipy import stats

from monotone_markov.analysis import (
    Curve,
    Distribution,
    PreconditionError,
    certify_shape,
    covariance_curve,
    curve_to_csv,
    curve_to_json,
    difference_curve,
    four_point_check,
    require_unique_stationary,
    stationary,
    supermod_curve,
    three_point_check,
    transient_mean_curve,
    transient_pair_expectation,
    transient_variance_curve,
)
from monotone_markov.kernels import (
    FiniteKernel,
    OrderedStateSpace,
    identity_kernel,
    integer_space,
    n_step,
)
from monotone_markov.models import absorbed_poisson, reflected_walk


def kernel(states, rows):
    return FiniteKernel(OrderedStateSpace(tuple(states)), np.asarray(rows, float))


@pytest.fixture(scope="module")
def walk():
    return reflected_walk({1: 0.3, -1: 0.7}, 20)


@pytest.fixture(scope="module")
def walk_pi(walk):
    return stationary(walk)


class TestStationary:
    def test_two_state_by_hand(self):
        # [[1-a, a], [b, 1-b]], a=0.3, b=0.6: pi proportional to (b, a)
        k = kernel([0.0, 1.0], [[0.7, 0.3], [0.6, 0.4]])
        pi = stationary(k)
        assert np.allclose(pi.mass, [2 / 3, 1 / 3], atol=1e-13)
        assert pi.meta == "unique"

    def test_reflected_walk_detailed_balance(self, walk, walk_pi):
        # birth-death oracle: pi_{i+1}/pi_i = p/q = 3/7
        oracle = (3.0 / 7.0) ** np.arange(21)
        oracle /= oracle.sum()
        assert np.allclose(walk_pi.mass, oracle, atol=1e-13)

    def test_identity_flagged_non_unique(self):
        pi = stationary(identity_kernel(integer_space(0, 3)))
        assert pi.meta.startswith("non-unique")
        # minimum-norm canonical element is the uniform law
        assert np.allclose(pi.mass, 0.25, atol=1e-12)
        with pytest.raises(PreconditionError):
            require_unique_stationary(pi)

    def test_residual_contract(self, walk, walk_pi):
        residual = np.max(np.abs(walk_pi.mass @ walk.rows - walk_pi.mass))
        assert residual <= 1e-10


class TestCovarianceCurve:
    def test_constant_process_keeps_variance(self):
        # identity kernel: X_t = X_0, so Cov(X_0, X_t) = Var(X_0) for all t
        sp = integer_space(0, 3)
        init = Distribution(sp, [0.1, 0.4, 0.3, 0.2])
        k = identity_kernel(sp)
        c = covariance_curve(k, init, lambda x: x, lambda x: x, 10)
        states = sp.as_array()
        var = init.mass @ states**2 - (init.mass @ states) ** 2
        assert np.allclose(c.values, var, atol=1e-12)

    def test_t0_is_variance(self, walk, walk_pi):
        c = covariance_curve(walk, walk_pi, lambda x: x, lambda x: x, 0)
        assert c.values[0] >= 0

    def test_walk_spot_check_t1(self, walk, walk_pi):
        # direct double sum at t=1
        states = walk.space.as_array()
        pi = walk_pi.mass
        ex = pi @ states
        direct = sum(
            pi[i] * states[i] * walk.rows[i, j] * states[j]
            for i in range(21)
            for j in range(21)
        ) - ex * ex
        c = covariance_curve(walk, walk_pi, lambda x: x, lambda x: x, 3)
        assert c.values[1] == pytest.approx(direct, abs=1e-12)

    def test_walk_shape(self, walk, walk_pi):
        c = covariance_curve(walk, walk_pi, lambda x: x, lambda x: x, 50)
        cert = certify_shape(c)
        assert (c.values > 0).all()
        assert cert.nonincreasing and cert.convex and cert.nonnegative


class TestSupermodCurve:
    def test_product_h_matches_covariance_plus_means(self, walk, walk_pi):
        f1 = lambda x: x  # noqa: E731
        f2 = lambda x: np.minimum(x, 5.0)  # noqa: E731
        sup = supermod_curve(walk, walk_pi, lambda x, y: x * np.minimum(y, 5.0), 12)
        cov = covariance_curve(walk, walk_pi, f1, f2, 12)
        states = walk.space.as_array()
        m1 = walk_pi.mass @ states
        m2 = walk_pi.mass @ np.minimum(states, 5.0)
        assert np.allclose(sup.values, cov.values + m1 * m2, atol=1e-12)

    def test_t0_dominates(self, walk, walk_pi):
        sup = supermod_curve(walk, walk_pi, np.minimum, 30)
        assert np.all(sup.values[0] >= sup.values - 1e-12)

    def test_min_h_nonincreasing(self, walk, walk_pi):
        sup = supermod_curve(walk, walk_pi, np.minimum, 30)
        assert certify_shape(sup).nonincreasing


class TestDifferenceCurve:
    def test_identity_kernel_constant(self):
        sp = integer_space(0, 3)
        init = Distribution(sp, [0.25, 0.25, 0.25, 0.25])
        k = identity_kernel(sp)
        c = difference_curve(k, init, lambda x, d: x * d + d**2, 2, 6)
        assert np.allclose(c.values, c.values[0], atol=1e-14)

    def test_product_h_equals_cov_difference(self, walk, walk_pi):
        # E X_0 (X_t - X_{t+s}) = Cov(X_0,X_t) - Cov(X_0,X_{t+s}) at stationarity
        s = 1
        diff = difference_curve(walk, walk_pi, lambda x, d: x * d, s, 10)
        cov = covariance_curve(walk, walk_pi, lambda x: x, lambda x: x, 10 + s)
        assert np.allclose(diff.values, cov.values[:-s] - cov.values[s:], atol=1e-11)

    def test_plain_d_vanishes_at_stationarity(self, walk, walk_pi):
        c = difference_curve(walk, walk_pi, lambda x, d: d, 2, 8)
        assert np.allclose(c.values, 0.0, atol=1e-12)

    def test_triple_sum_oracle(self):
        # brute-force path enumeration, independent of the matrix machinery
        rng = np.random.default_rng(11)
        rows = rng.dirichlet(np.ones(4), size=4)
        k = kernel(np.arange(4.0), rows)
        init = stationary(k)
        s, t_max = 2, 4
        h = lambda x, d: x * d + min(x, d)  # noqa: E731
        c = difference_curve(k, init, h, s, t_max)
        states = k.space.as_array()
        Pt = np.eye(4)
        Ps = np.linalg.matrix_power(rows, s)
        for t in range(t_max + 1):
            brute = sum(
                init.mass[x] * Pt[x, y] * Ps[y, z] * h(states[x], states[y] - states[z])
                for x in range(4)
                for y in range(4)
                for z in range(4)
            )
            assert c.values[t] == pytest.approx(brute, abs=1e-12)
            Pt = Pt @ rows


class TestThreeFourPoint:
    def test_triple_sum_oracle(self, walk):
        p2 = reflected_walk({1: 0.2, -1: 0.8}, 20)
        h = lambda x, y: x * y  # noqa: E731
        lhs, rhs = three_point_check(walk, p2, h)
        pi = stationary(walk).mass
        states = walk.space.as_array()
        brute_lhs = sum(
            pi[x] * walk.rows[x, y] * p2.rows[y, z] * states[x] * states[z]
            for x in range(21)
            for y in range(21)
            for z in range(21)
        )
        brute_rhs = sum(
            pi[y] * p2.rows[y, z] * states[y] * states[z]
            for y in range(21)
            for z in range(21)
        )
        assert lhs == pytest.approx(brute_lhs, abs=1e-10)
        assert rhs == pytest.approx(brute_rhs, abs=1e-10)
        assert lhs <= rhs + 1e-12

    def test_identity_p2_reduces_to_comonotone_bound(self, walk, walk_pi):
        # rhs becomes E h(Y, Y), which dominates E h(X, Y) for equal marginals
        eye = identity_kernel(walk.space)
        lhs, rhs = three_point_check(walk, eye, np.minimum)
        states = walk.space.as_array()
        assert rhs == pytest.approx(float(walk_pi.mass @ states), abs=1e-12)
        assert lhs <= rhs + 1e-12

    def test_covariance_sandwich(self, walk, walk_pi):
        # 0 <= Cov(f1(X_0), f2(X_2)) <= Cov(f1(X_1), f2(X_2))
        f1 = lambda x: np.sqrt(x + 1.0)  # noqa: E731
        f2 = lambda x: x**2  # noqa: E731
        h = lambda x, y: np.sqrt(x + 1.0) * y**2  # noqa: E731
        lhs, rhs = three_point_check(walk, walk, h)
        states = walk.space.as_array()
        m1 = walk_pi.mass @ f1(states)
        m2_2 = (walk_pi.mass @ n_step(walk, 2).rows) @ f2(states)
        cov02 = lhs - m1 * m2_2
        cov12 = rhs - m1 * m2_2
        assert 0 <= cov02 + 1e-12
        assert cov02 <= cov12 + 1e-12

    def test_four_point_identity_p3_equalizes(self, walk):
        eye = identity_kernel(walk.space)
        lhs, rhs = four_point_check(walk, walk, eye, lambda x, d: x * d)
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_four_point_inequality_and_cov_form(self, walk, walk_pi):
        # h(x, d) = f(x) d with f nondecreasing
        f = lambda x: np.minimum(x, 8.0)  # noqa: E731
        lhs, rhs = four_point_check(walk, walk, walk, lambda x, d: np.minimum(x, 8.0) * d)
        assert lhs <= rhs + 1e-12
        # lhs = Cov(f(X_0),X_2) - Cov(f(X_0),X_3) since stationary means cancel
        cov = covariance_curve(walk, walk_pi, f, lambda x: x, 3)
        assert lhs == pytest.approx(cov.values[2] - cov.values[3], abs=1e-11)
        assert lhs >= -1e-12

    def test_quadruple_sum_oracle_small(self):
        rng = np.random.default_rng(5)
        # random monotone + shift-property walkers are not needed for the sum
        # identity itself: any kernels, the quadruple sum contract is exactness
        rows1 = rng.dirichlet(np.ones(3), size=3)
        rows2 = rng.dirichlet(np.ones(3), size=3)
        rows3 = rng.dirichlet(np.ones(3), size=3)
        k1, k2, k3 = (kernel(np.arange(3.0), r) for r in (rows1, rows2, rows3))
        h = lambda x, d: x * d  # noqa: E731
        lhs, rhs = four_point_check(k1, k2, k3, h)
        pi = stationary(k1).mass
        s = np.arange(3.0)
        brute_lhs = sum(
            pi[x] * rows1[x, y] * rows2[y, z] * rows3[z, w] * h(s[x], s[z] - s[w])
            for x in range(3) for y in range(3) for z in range(3) for w in range(3)
        )
        brute_rhs = sum(
            pi[y] * rows2[y, z] * rows3[z, w] * h(s[y], s[z] - s[w])
            for y in range(3) for z in range(3) for w in range(3)
        )
        assert lhs == pytest.approx(brute_lhs, abs=1e-13)
        assert rhs == pytest.approx(brute_rhs, abs=1e-13)


def poisson_capped_mean(k, m, t):
    """E min(k + N_t, m) by direct Poisson tail sums."""
    j = np.arange(0, m - k)
    pmf = stats.poisson.pmf(j, t)
    return float((pmf * (k + j)).sum() + m * (1.0 - pmf.sum()))


def poisson_capped_var(k, m, t):
    j = np.arange(0, m - k)
    pmf = stats.poisson.pmf(j, t)
    e1 = (pmf * (k + j)).sum() + m * (1.0 - pmf.sum())
    e2 = (pmf * (k + j) ** 2).sum() + m**2 * (1.0 - pmf.sum())
    return float(e2 - e1 * e1)


class TestTransientCurves:
    def test_identity_constant(self):
        k = identity_kernel(integer_space(0, 4))
        c = transient_mean_curve(k, 2.0, 8)
        assert np.allclose(c.values, 2.0)
        v = transient_variance_curve(k, 2.0, 8)
        assert np.allclose(v.values, 0.0)

    def test_walk_from_zero_nondecreasing_concave(self, walk):
        c = transient_mean_curve(walk, 0.0, 40)
        cert = certify_shape(c)
        assert cert.nondecreasing and cert.concave

    def test_mass_below_start_rejected(self, walk):
        with pytest.raises(PreconditionError, match="mass"):
            transient_mean_curve(walk, 5.0, 4)

    def test_non_monotone_kernel_rejected(self):
        k = kernel([0.0, 1.0], [[0.2, 0.8], [0.9, 0.1]])
        with pytest.raises(PreconditionError, match="monotone"):
            transient_mean_curve(k, 0.0, 4)

    def test_absorbed_poisson_mean_oracle(self):
        # skeleton steps land exactly on the Poisson closed form
        ap = absorbed_poisson(0, 5, 1.0, 0.25)
        c = transient_mean_curve(ap, 0.0, 64)
        for n in (1, 2, 4, 8, 16, 32, 64):
            assert c.values[n] == pytest.approx(
                poisson_capped_mean(0, 5, n * 0.25), abs=1e-10
            )
        cert = certify_shape(c)
        assert cert.nondecreasing and cert.concave
        assert c.values[-1] == pytest.approx(5.0, abs=1e-3)

    def test_absorbed_poisson_variance_oracle(self):
        ap = absorbed_poisson(0, 2, 1.0, 0.25)
        v = transient_variance_curve(ap, 0.0, 32)
        # frozen closed-form values, Var(min(N_t, 2)) with N_t ~ Poisson(t)
        frozen = {
            2: 0.430141461385,   # t = 0.5
            4: 0.621379656728,   # t = 1
            8: 0.518961477200,   # t = 2
            16: 0.134448456505,  # t = 4
        }
        for n, expect in frozen.items():
            assert v.values[n] == pytest.approx(expect, abs=1e-9)
            assert v.values[n] == pytest.approx(poisson_capped_var(0, 2, n * 0.25), abs=1e-10)
        # rises from 0, decays back toward 0: not monotone either way
        cert = certify_shape(v)
        assert not cert.nonincreasing and not cert.nondecreasing
        assert v.values[0] == 0.0


class TestTransientPairExpectation:
    def test_identity_kernel(self):
        k = identity_kernel(integer_space(0, 3))
        val = transient_pair_expectation(k, 2.0, 1, 3, lambda x, y: x * y)
        assert val == pytest.approx(4.0)

    def test_path_enumeration_oracle(self):
        rng = np.random.default_rng(23)
        rows = rng.dirichlet(np.ones(3), size=3)
        k = kernel(np.arange(3.0), rows)
        states = k.space.as_array()
        h = lambda x, y: min(x, y) + 0.5 * x * y  # noqa: E731
        t = 3
        for s in range(t + 1):
            # enumerate every path (x1, x2, x3) from x0 = 0
            brute = 0.0
            for x1 in range(3):
                for x2 in range(3):
                    for x3 in range(3):
                        prob = rows[0, x1] * rows[x1, x2] * rows[x2, x3]
                        path = [0, x1, x2, x3]
                        brute += prob * h(states[path[s]], states[path[t]])
            assert transient_pair_expectation(k, 0.0, s, t, h) == pytest.approx(
                brute, abs=1e-13
            )


class TestCertifyShape:
    def test_constant_curve(self):
        c = Curve(np.arange(5), np.full(5, 3.0))
        cert = certify_shape(c)
        assert cert.nonincreasing and cert.nondecreasing
        assert cert.convex and cert.concave and cert.nonnegative

    def test_exponential_decay(self):
        t = np.arange(40)
        c = Curve(t, np.exp(-0.3 * t))
        cert = certify_shape(c)
        assert cert.nonnegative and cert.nonincreasing and cert.convex
        assert not cert.nondecreasing and not cert.concave

    def test_witness_indices(self):
        c = Curve(np.arange(4), [0.0, 1.0, -0.5, -0.2])
        cert = certify_shape(c)
        assert not cert.nonnegative and cert.witnesses["nonnegative"] == 2
        assert not cert.nonincreasing and not cert.nondecreasing
        assert "nonincreasing" in cert.witnesses and "nondecreasing" in cert.witnesses

    def test_two_points_vacuous_convexity(self):
        cert = certify_shape(Curve([0.0, 1.0], [1.0, 0.0]))
        assert cert.convex and cert.concave
        assert "vacuous" in cert.note

    def test_non_uniform_grid_divided_differences(self):
        t = np.array([0.0, 1.0, 3.0, 7.0])
        cert = certify_shape(Curve(t, t**2))
        assert cert.convex and not cert.concave
        assert "divided-difference" in cert.note
        # plain second differences would call t^2 concave-violating only;
        # divided slopes also certify monotone growth
        assert cert.nondecreasing

    def test_tol_slack(self):
        c = Curve(np.arange(3), [1.0, 1.0 - 5e-11, 1.0])
        cert = certify_shape(c, tol=1e-10)
        assert cert.nonincreasing and cert.nondecreasing


class TestSerialization:
    def test_csv_and_json(self, walk, walk_pi):
        c = covariance_curve(walk, walk_pi, lambda x: x, lambda x: x, 4)
        cert = certify_shape(c)
        text = curve_to_csv(c, ["header line"])
        assert text.startswith("# header line\nt,value\n")
        assert len(text.strip().splitlines()) == 2 + 5
        import json

        payload = json.loads(curve_to_json(c, cert))
        assert payload["values"][0] == pytest.approx(c.values[0])
        assert payload["certificate"]["nonincreasing"] is True


class TestMixingSanity:
    def test_covariance_vanishes_by_spectral_mixing_time(self, walk, walk_pi):
        # t_mix from the second-largest eigenvalue modulus, with safety margin
        eigs = np.sort(np.abs(np.linalg.eigvals(walk.rows)))[::-1]
        lam2 = eigs[1]
        assert lam2 < 1
        c0 = covariance_curve(walk, walk_pi, lambda x: x, lambda x: x, 0).values[0]
        t_mix = int(np.ceil(np.log(1e-6 / (100 * c0)) / np.log(lam2)))
        c = covariance_curve(walk, walk_pi, lambda x: x, lambda x: x, t_mix)
        assert abs(c.values[t_mix]) < 1e-6

    def test_constant_process_does_not_mix(self):
        # stationary but non-unique: covariance stays at the variance forever
        sp = integer_space(0, 2)
        init = Distribution(sp, [0.25, 0.5, 0.25])
        c = covariance_curve(identity_kernel(sp), init, lambda x: x, lambda x: x, 100)
        assert c.values[100] == pytest.approx(c.values[0])
        assert c.values[0] > 0
