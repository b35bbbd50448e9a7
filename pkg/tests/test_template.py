import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spwarp.errors import DomainError, InvalidArgumentError, TemplateError
from spwarp.template import (
    Family,
    HeightVector,
    Sign,
    TemplateSpec,
    UnconstrainedHeights,
    _design,
    bspline_template_fit,
    count_stationary,
    default_nodes,
    heights_jacobian,
    heights_reconstruct,
    heights_unconstrain,
    hermite_deriv,
    hermite_eval,
)


def random_heights(rng, M, sign=None):
    sign = sign or (Sign.PLUS if rng.uniform() < 0.5 else Sign.MINUS)
    u = UnconstrainedHeights(rng.normal(0, 3), rng.normal(0, 1.5, M + 1), sign)
    return heights_reconstruct(u)


def sign_changes(values):
    s = np.sign(values)
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


class TestHeights:
    def test_plus_example(self):
        h = heights_reconstruct(UnconstrainedHeights(0.0, np.zeros(2), Sign.PLUS))
        np.testing.assert_array_equal(h.lam, [0.0, 1.0, 0.0])

    def test_minus_example(self):
        u = UnconstrainedHeights(2.0, np.log([3.0, 1.0, 2.0]), Sign.MINUS)
        np.testing.assert_allclose(heights_reconstruct(u).lam, [2, -1, 0, -2], atol=1e-14)

    def test_property_sweep(self, rng):
        for _ in range(10_000):
            M = int(rng.integers(0, 6))
            h = random_heights(rng, M)  # HeightVector validates on construction
            assert h.M == M

    @settings(max_examples=200)
    @given(
        st.floats(-50, 50),
        st.lists(st.floats(-5, 5), min_size=1, max_size=7),
        st.sampled_from(list(Sign)),
    )
    def test_round_trip(self, lam0, l, sign):
        h = heights_reconstruct(UnconstrainedHeights(lam0, np.array(l), sign))
        back = heights_reconstruct(heights_unconstrain(h))
        np.testing.assert_allclose(back.lam, h.lam, atol=1e-12 * (1 + np.abs(h.lam).max()))

    def test_rejects_non_alternating(self):
        with pytest.raises(InvalidArgumentError):
            HeightVector(np.array([0.0, 1.0, 2.0]), Sign.PLUS)
        with pytest.raises(InvalidArgumentError):
            HeightVector(np.array([0.0, 1.0, 0.0]), Sign.MINUS)
        with pytest.raises(InvalidArgumentError):
            HeightVector(np.array([0.0, 0.0]), Sign.PLUS)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidArgumentError):
            heights_reconstruct(UnconstrainedHeights(0.0, np.array([np.inf]), Sign.PLUS))

    def test_jacobian_matches_finite_differences(self, rng):
        u = UnconstrainedHeights(0.3, rng.standard_normal(4), Sign.MINUS)
        z = np.concatenate([[u.lambda0], u.l])
        h = 1e-6

        def lam(v):
            return heights_reconstruct(UnconstrainedHeights(v[0], v[1:], Sign.MINUS)).lam

        fd = np.column_stack([(lam(z + h * e) - lam(z - h * e)) / (2 * h) for e in np.eye(z.size)])
        np.testing.assert_allclose(heights_jacobian(u), fd, atol=1e-8)


class TestHermite:
    spec = TemplateSpec(M=1, nodes=np.array([0.0, 0.5, 1.0]))
    lam = np.array([0.0, 1.0, 0.0])

    def test_examples(self):
        assert hermite_eval(self.spec, self.lam, 0.25) == pytest.approx(0.5, abs=1e-15)
        assert hermite_deriv(self.spec, self.lam, 0.25) == pytest.approx(3.0, abs=1e-14)
        h = 1e-6
        fd = (hermite_eval(self.spec, self.lam, 0.25 + h) - hermite_eval(self.spec, self.lam, 0.25 - h)) / (2 * h)
        assert fd == pytest.approx(3.0, rel=1e-8)

    def test_interpolates_nodes_and_midpoints(self, rng):
        for M in range(0, 5):
            spec = TemplateSpec(M=M)
            lam = random_heights(rng, M).lam
            np.testing.assert_array_equal(spec.evaluate(lam, spec.nodes), lam)
            mids = 0.5 * (spec.nodes[1:] + spec.nodes[:-1])
            np.testing.assert_allclose(spec.evaluate(lam, mids), 0.5 * (lam[1:] + lam[:-1]), atol=1e-13)

    def test_continuity_at_nodes(self, rng):
        spec = TemplateSpec(M=3)
        lam = random_heights(rng, 3).lam
        for b in spec.interior_nodes:
            left = spec.evaluate(lam, np.nextafter(b, 0.0))
            right = spec.evaluate(lam, b)
            assert abs(left - right) < 1e-12

    def test_monotone_segments(self, rng):
        spec = TemplateSpec(M=2)
        lam = random_heights(rng, 2, Sign.PLUS).lam
        for k in range(3):
            x = np.linspace(spec.nodes[k], spec.nodes[k + 1], 103)[1:-1]
            d = spec.derivative(lam, x)
            assert np.all(d > 0) if lam[k + 1] > lam[k] else np.all(d < 0)

    def test_derivative_matches_finite_differences(self, rng):
        spec = TemplateSpec(M=2, nodes=np.array([0.0, 0.3, 0.8, 1.0]))
        lam = random_heights(rng, 2).lam
        x = rng.uniform(0.01, 0.99, 50)
        h = 1e-7
        fd = (spec.evaluate(lam, x + h) - spec.evaluate(lam, x - h)) / (2 * h)
        np.testing.assert_allclose(spec.derivative(lam, x), fd, atol=1e-6)

    def test_basis_matches_direct(self, rng):
        spec = TemplateSpec(M=3)
        lam = random_heights(rng, 3).lam
        x = rng.uniform(size=40)
        np.testing.assert_allclose(spec.basis(x) @ lam, spec.evaluate(lam, x), atol=1e-13)
        np.testing.assert_allclose(spec.basis_deriv(x) @ lam, spec.derivative(lam, x), atol=1e-12)

    def test_prop1_contract(self, rng):
        grid = np.linspace(0, 1, 2001)
        for _ in range(1000):
            M = int(rng.integers(1, 6))
            spec = TemplateSpec(M=M)
            lam = random_heights(rng, M).lam
            assert np.all(spec.derivative(lam, spec.interior_nodes) == 0.0)
            assert sign_changes(spec.derivative(lam, grid)) == M
            assert count_stationary(lambda x: spec.evaluate(lam, x)) == M

    def test_domain(self):
        with pytest.raises(DomainError):
            self.spec.evaluate(self.lam, 1.2)


class TestSpecValidation:
    def test_default_nodes(self):
        np.testing.assert_allclose(default_nodes(3), [0, 0.25, 0.5, 0.75, 1.0])

    @pytest.mark.parametrize(
        "nodes", [[0.0, 0.5], [0.1, 0.5, 1.0], [0.0, 0.6, 0.5, 1.0][:3], [0.0, 1.0, 1.0]]
    )
    def test_bad_nodes(self, nodes):
        with pytest.raises(InvalidArgumentError):
            TemplateSpec(M=1, nodes=np.array(nodes))

    def test_bad_knots(self):
        with pytest.raises(InvalidArgumentError):
            TemplateSpec(M=1, family=Family.BSPLINE, knots=np.array([0.5, 0.2]))


class TestCountStationary:
    def test_sine(self):
        assert count_stationary(lambda x: np.sin(2 * np.pi * x)) == 2

    def test_monotone(self):
        assert count_stationary(lambda x: x**3) == 0

    def test_small_grid_rejected(self):
        with pytest.raises(InvalidArgumentError):
            count_stationary(lambda x: x, 50)


class TestBSpline:
    @pytest.mark.parametrize("M", [0, 1, 2, 3])
    def test_constraints_and_count(self, rng, M):
        spec = TemplateSpec(M=M, family=Family.BSPLINE)
        lam = random_heights(rng, M).lam
        theta = bspline_template_fit(spec, lam)
        tck = spec._bspline.tck
        nb = spec._bspline.nbasis
        vals = _design(tck, 3, nb, spec.nodes) @ theta
        ders = _design(tck, 3, nb, spec.interior_nodes, nu=1) @ theta
        np.testing.assert_allclose(vals, lam, atol=1e-8)
        np.testing.assert_allclose(ders, 0.0, atol=1e-8)
        grid = np.linspace(0, 1, 2001)
        assert sign_changes(spec.derivative(lam, grid)) == M

    def test_monotone_case(self):
        spec = TemplateSpec(M=0, family=Family.BSPLINE)
        g = spec.evaluate(np.array([0.0, 1.0]), np.linspace(0, 1, 1001))
        assert np.all(np.diff(g) >= -1e-12)

    def test_kkt_stationarity(self, rng):
        # gradient of the penalized objective lies in the span of the constraint rows
        spec = TemplateSpec(M=2, family=Family.BSPLINE)
        lam = random_heights(rng, 2).lam
        theta = bspline_template_fit(spec, lam)
        tck, nb = spec._bspline.tck, spec._bspline.nbasis
        fill = np.asarray(spec.fill)
        xs, targets = [], []
        for k in range(3):
            xs.append(spec.nodes[k] + fill * (spec.nodes[k + 1] - spec.nodes[k]))
            targets.append(lam[k] + fill * (lam[k + 1] - lam[k]))
        B = _design(tck, 3, nb, np.concatenate(xs))
        F = np.concatenate(targets)
        D = np.diff(np.eye(nb), n=2, axis=0)
        grad = 2 * B.T @ (B @ theta - F) + 2 * spec.alpha * D.T @ D @ theta
        C = np.vstack([_design(tck, 3, nb, spec.nodes), _design(tck, 3, nb, spec.interior_nodes, nu=1)])
        mu, *_ = np.linalg.lstsq(C.T, -grad, rcond=None)
        assert np.linalg.norm(grad + C.T @ mu) <= 1e-8 * np.linalg.norm(grad)

    def test_sparse_knots_rejected(self):
        spec = TemplateSpec(M=3, family=Family.BSPLINE, knots=np.array([0.5]))
        with pytest.raises(TemplateError, match="constraint block"):
            spec.evaluate(np.array([0.0, 1.0, 0.0, 1.0, 0.0]), 0.3)

    def test_extra_stationary_points_rejected(self):
        # a tiny penalty lets the spline wiggle between close nodes
        spec = TemplateSpec(
            M=1, family=Family.BSPLINE, alpha=1e-6, knots=np.linspace(0, 1, 12)[1:-1],
            fill=(0.5,), nodes=np.array([0.0, 0.02, 1.0]),
        )
        lam = np.array([0.0, 1e-3, -5.0])
        try:
            bspline_template_fit(spec, lam)
        except TemplateError as exc:
            assert "stationary points" in str(exc) or "block" in str(exc)
        else:
            grid = np.linspace(0, 1, 2001)
            assert sign_changes(spec.derivative(lam, grid)) == 1

    def test_wrong_family(self):
        with pytest.raises(InvalidArgumentError):
            bspline_template_fit(TemplateSpec(M=1), np.array([0.0, 1.0, 0.0]))
