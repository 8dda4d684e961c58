import math

import numpy as np
import pytest

from gazefield import autodiff as ad
from gazefield import gradcheck
from gazefield.field import (
    Direction,
    NormalizedPoint,
    build_field_stack,
    evaluate_field_stack,
    field_value,
    field_value_pow,
    ray_direction,
    unit_ray_grid,
    write_field_csvs,
)
from gazefield.gridio import read_grid_csv


def random_tuple(rng):
    head = NormalizedPoint(rng.uniform(0, 1), rng.uniform(0, 1))
    p = NormalizedPoint(rng.uniform(0, 1), rng.uniform(0, 1))
    phi = rng.uniform(0, 2 * math.pi)
    direction = Direction(math.cos(phi), math.sin(phi))
    gamma = rng.uniform(1.0, 6.0)
    return head, p, direction, gamma


class TestRayDirection:
    def test_horizontal(self):
        g = ray_direction(NormalizedPoint(0.5, 0.5), NormalizedPoint(0.9, 0.5))
        assert (g.dx, g.dy) == pytest.approx((0.4, 0.0))

    def test_coincident_is_zero(self):
        g = ray_direction(NormalizedPoint(0.5, 0.5), NormalizedPoint(0.5, 0.5))
        assert (g.dx, g.dy) == (0.0, 0.0)

    def test_diagonal(self):
        g = ray_direction(NormalizedPoint(0.2, 0.8), NormalizedPoint(0.7, 0.3))
        assert (g.dx, g.dy) == pytest.approx((0.5, -0.5))


class TestFieldValue:
    HEAD = NormalizedPoint(0.5, 0.5)
    DIR = Direction(1.0, 0.0)

    def test_on_ray_is_one(self):
        assert field_value(self.HEAD, NormalizedPoint(0.9, 0.5), self.DIR) == pytest.approx(1.0)

    def test_perpendicular_is_zero(self):
        assert field_value(self.HEAD, NormalizedPoint(0.5, 0.9), self.DIR) == pytest.approx(0.0, abs=1e-12)

    def test_45_degrees(self):
        got = field_value(self.HEAD, NormalizedPoint(0.9, 0.9), self.DIR)
        assert got == pytest.approx(math.sqrt(2) / 2, abs=1e-9)

    def test_behind_clamped_to_zero(self):
        assert field_value(self.HEAD, NormalizedPoint(0.1, 0.5), self.DIR) == 0.0

    def test_point_at_head_is_zero(self):
        assert field_value(self.HEAD, self.HEAD, self.DIR) == 0.0

    def test_zero_direction_rejected(self):
        with pytest.raises(ValueError, match="non-zero"):
            field_value(self.HEAD, NormalizedPoint(0.9, 0.5), Direction(0.0, 0.0))

    def test_unnormalized_direction_same_value(self):
        p = NormalizedPoint(0.7, 0.8)
        a = field_value(self.HEAD, p, Direction(1.0, 0.2))
        b = field_value(self.HEAD, p, Direction(5.0, 1.0))
        assert a == pytest.approx(b, abs=1e-12)


class TestFieldValuePow:
    def test_square_of_half(self):
        # cos 60 degrees = 0.5 exactly
        head = NormalizedPoint(0.5, 0.5)
        p = NormalizedPoint(0.5 + 0.1, 0.5 + 0.1 * math.sqrt(3))
        got = field_value_pow(head, p, Direction(1.0, 0.0), 2.0)
        assert got == pytest.approx(0.25, abs=1e-9)

    def test_gamma_five_at_45_degrees(self):
        head = NormalizedPoint(0.5, 0.5)
        got = field_value_pow(head, NormalizedPoint(0.9, 0.9), Direction(1.0, 0.0), 5.0)
        assert got == pytest.approx(2 ** -2.5, abs=1e-9)

    def test_gamma_one_is_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            head, p, d, _ = random_tuple(rng)
            assert field_value_pow(head, p, d, 1.0) == field_value(head, p, d)

    def test_gamma_below_one_rejected(self):
        with pytest.raises(ValueError, match="gamma"):
            field_value_pow(NormalizedPoint(0, 0), NormalizedPoint(1, 1), Direction(1, 0), 0.5)


class TestInvariants:
    def test_range_and_clamp(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            head, p, d, gamma = random_tuple(rng)
            v = field_value_pow(head, p, d, gamma)
            assert 0.0 <= v <= 1.0 + 1e-12

    def test_ray_maximal(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            head = NormalizedPoint(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8))
            phi = rng.uniform(0, 2 * math.pi)
            d = Direction(math.cos(phi), math.sin(phi))
            t = rng.uniform(1e-4, 0.15)
            p = NormalizedPoint(head.x + t * d.dx, head.y + t * d.dy)
            assert field_value(head, p, d) == pytest.approx(1.0, abs=1e-9)

    def test_angular_monotonicity(self):
        rng = np.random.default_rng(3)
        head = NormalizedPoint(0.5, 0.5)
        for _ in range(100):
            phi = rng.uniform(0, 2 * math.pi)
            d = Direction(math.cos(phi), math.sin(phi))
            r = rng.uniform(0.05, 0.4)
            angles = np.sort(rng.uniform(0, math.pi, size=8))
            values = []
            for theta in angles:
                px = head.x + r * math.cos(phi + theta)
                py = head.y + r * math.sin(phi + theta)
                values.append(field_value(head, NormalizedPoint(min(max(px, 0), 1), min(max(py, 0), 1)), d)
                              if 0 <= px <= 1 and 0 <= py <= 1 else None)
            kept = [(t, v) for t, v in zip(angles, values) if v is not None]
            for (t1, v1), (t2, v2) in zip(kept, kept[1:]):
                assert v2 <= v1 + 1e-9
            for t, v in kept:
                if t > math.pi / 2:
                    assert v == 0.0

    def test_radial_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            head = NormalizedPoint(rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7))
            phi, psi = rng.uniform(0, 2 * math.pi, size=2)
            d = Direction(math.cos(phi), math.sin(phi))
            r1, r2 = rng.uniform(0.02, 0.28, size=2)
            p1 = NormalizedPoint(head.x + r1 * math.cos(psi), head.y + r1 * math.sin(psi))
            p2 = NormalizedPoint(head.x + r2 * math.cos(psi), head.y + r2 * math.sin(psi))
            assert field_value(head, p1, d) == pytest.approx(field_value(head, p2, d), abs=1e-9)


class TestFieldStack:
    def test_2x2_matches_per_cell_oracle(self):
        head = NormalizedPoint(0.0, 0.0)
        d = Direction(1 / math.sqrt(2), 1 / math.sqrt(2))
        stack = evaluate_field_stack(head, d, 2, 2, [1.0])
        for i in range(2):
            for j in range(2):
                p = NormalizedPoint((j + 0.5) / 2, (i + 0.5) / 2)
                assert stack.grids[0][i, j] == pytest.approx(field_value(head, p, d), abs=1e-12)
        # the diagonal cells sit exactly on the ray
        assert stack.grids[0][0, 0] == pytest.approx(1.0, abs=1e-12)
        assert stack.grids[0][1, 1] == pytest.approx(1.0, abs=1e-12)

    def test_random_stack_matches_per_cell_oracle(self):
        rng = np.random.default_rng(5)
        head = NormalizedPoint(0.37, 0.61)
        d = Direction(-0.3, 0.8)
        gammas = [5.0, 2.0, 1.0]
        stack = evaluate_field_stack(head, d, 7, 5, gammas)
        for k, gamma in enumerate(gammas):
            for i in range(5):
                for j in range(7):
                    p = NormalizedPoint((j + 0.5) / 7, (i + 0.5) / 5)
                    expected = field_value_pow(head, p, d, gamma)
                    assert stack.grids[k][i, j] == pytest.approx(expected, abs=1e-12)

    def test_head_on_cell_center_gives_zero(self):
        # head exactly at center of cell (1, 1) of a 4x4 grid
        head = NormalizedPoint(1.5 / 4, 1.5 / 4)
        stack = evaluate_field_stack(head, Direction(1, 0), 4, 4, [1.0])
        assert stack.grids[0][1, 1] == 0.0

    def test_power_coherence(self):
        head = NormalizedPoint(0.5, 0.5)
        stack = evaluate_field_stack(head, Direction(0.6, -0.8), 9, 9, [5.0, 2.0, 1.0])
        base = stack.grids[2]
        np.testing.assert_allclose(stack.grids[0], base ** 5.0, atol=1e-12)
        np.testing.assert_allclose(stack.grids[1], base ** 2.0, atol=1e-12)

    def test_values_in_unit_range(self):
        stack = evaluate_field_stack(NormalizedPoint(0.2, 0.9), Direction(3, 1), 6, 8, [5, 2, 1])
        for g in stack.grids:
            assert g.min() >= 0.0 and g.max() <= 1.0 + 1e-12

    def test_gradient_wrt_direction_matches_fd(self):
        rng = np.random.default_rng(6)
        head = NormalizedPoint(0.45, 0.55)
        d = ad.parameter(np.array([0.9, -0.5]))
        weights = ad.constant(rng.uniform(0.1, 1.0, size=(3, 6, 6)))

        def forward():
            stack = build_field_stack(head, d, 6, 6, [5.0, 2.0, 1.0])
            return ad.mean(ad.mul(stack, weights))

        res = gradcheck.check_gradients("field_stack", forward, [d])
        assert res.max_rel_error < 1e-4, res.max_rel_error

    def test_clamped_cells_pass_zero_gradient(self):
        # direction pointing right: the left half-plane is clamped to zero
        head = NormalizedPoint(0.5, 0.5)
        d = ad.parameter(np.array([1.0, 0.0]))
        stack = build_field_stack(head, d, 8, 8, [1.0])
        assert stack.values.max() > 0.5  # right half is lit
        assert np.all(stack.values[0, :, :4] == 0.0)  # left half clamped
        left_sum = ad.tensor_sum(ad.mul(stack, ad.constant(
            np.pad(np.ones((1, 8, 4)), ((0, 0), (0, 0), (0, 4))))))
        ad.backward(left_sum)
        np.testing.assert_array_equal(d.grad, [0.0, 0.0])

    def test_degenerate_extents_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            build_field_stack(NormalizedPoint(0.5, 0.5), ad.constant([1.0, 0.0]), 1, 4, [1.0])

    def test_unit_ray_grid_rows_unit_or_zero(self):
        u = unit_ray_grid(NormalizedPoint(0.5, 0.5), 8, 8)
        norms = np.linalg.norm(u, axis=1)
        assert np.all((np.abs(norms - 1.0) < 1e-12) | (norms == 0.0))


def test_field_csv_dump_round_trip(tmp_path):
    head = NormalizedPoint(0.5, 0.5)
    d = Direction(1.0, 0.0)
    stack = evaluate_field_stack(head, d, 10, 10, [2.0, 1.0])
    paths = write_field_csvs(stack, d, str(tmp_path))
    assert len(paths) == 2
    for path, grid in zip(paths, stack.grids):
        loaded = read_grid_csv(path)
        np.testing.assert_allclose(loaded, grid, rtol=0, atol=0)
    header = open(paths[0]).readline()
    assert header.startswith("#") and "gamma=2" in header and "head_x=0.5" in header
