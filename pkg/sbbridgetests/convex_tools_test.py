# Copyright 2024 The sbbridge Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Tests for sbbridge.convex_tools."""

import logging
import unittest

import numpy as np

from sbbridge.sbblib import convex_tools
from sbbridge.sbblib import errors
from sbbridge.sbblib import grid_measures

from sbbridgetests import sbbridge_test_helper

_GRID = grid_measures.Grid1D(-5.0, 5.0, 501)


def _RandomConvex(grid, seed):
  """A convex potential with random slopes in [-3, 3]."""
  rng = np.random.default_rng(seed)
  slopes = np.sort(rng.uniform(-3.0, 3.0, size=grid.n - 1))
  values = np.concatenate([[0.0], np.cumsum(slopes * grid.dx)])
  return convex_tools.ConvexPotential(grid, values)


class ConvexPotentialTest(sbbridge_test_helper.SBBTest):

  def test_accepts_convex_values(self):
    p = convex_tools.ConvexPotential(_GRID, 0.5 * _GRID.nodes**2)
    self.assertAllClose(p.Slopes(), _GRID.nodes[:-1] + 0.5 * _GRID.dx,
                        atol=1e-10)
    self.assertAlmostEqual(float(p.Evaluate(0.013)), 0.5 * 0.013**2, places=10)

  def test_affine_values_are_convex(self):
    convex_tools.ConvexPotential(_GRID, 3.0 * _GRID.nodes + 1.0)

  def test_rejects_concave_values(self):
    with self.assertRaises(errors.NonConvexError):
      convex_tools.ConvexPotential(_GRID, -_GRID.nodes**2)

  def test_rejects_bad_shapes_and_values(self):
    with self.assertRaises(errors.GridMismatchError):
      convex_tools.ConvexPotential(_GRID, np.zeros(3))
    values = np.zeros(_GRID.n)
    values[7] = np.nan
    with self.assertRaises(errors.OutOfRangeError):
      convex_tools.ConvexPotential(_GRID, values)


class MonotoneMapTest(sbbridge_test_helper.SBBTest):

  def test_linear_extrapolation(self):
    m = convex_tools.MonotoneMap(_GRID, 2.0 * _GRID.nodes)
    self.assertAllClose(m.Evaluate([-7.0, 0.01, 6.0]), [-14.0, 0.02, 12.0],
                        atol=1e-10)

  def test_rejects_flat_maps(self):
    values = np.array(_GRID.nodes)
    values[10:13] = values[10]
    with self.assertRaises(errors.NonMonotoneMapError) as ctx:
      convex_tools.MonotoneMap(_GRID, values)
    self.assertEqual(ctx.exception.indices, (10, 11))

  def test_deviation(self):
    m = convex_tools.MonotoneMap(_GRID, _GRID.nodes + 0.1 * _GRID.nodes**3)
    self.assertAlmostEqual(m.Deviation(), 12.5, places=9)
    self.assertAlmostEqual(
        m.Deviation(np.abs(_GRID.nodes) <= 1.0 + 1e-9), 0.1, places=9)
    self.assertEqual(convex_tools.MonotoneMap.Identity(_GRID).Deviation(), 0.0)


class LegendreTransformTest(sbbridge_test_helper.SBBTest):

  def test_half_square_is_self_dual(self):
    p = convex_tools.ConvexPotential(_GRID, 0.5 * _GRID.nodes**2)
    dual = convex_tools.LegendreTransform(p)
    self.assertAllClose(dual.values, 0.5 * _GRID.nodes**2, atol=1e-12)

  def test_scaled_square(self):
    # (x^2)* = y^2 / 4
    p = convex_tools.ConvexPotential(_GRID, _GRID.nodes**2)
    dual = convex_tools.LegendreTransform(p)
    self.assertAllClose(dual.values, 0.25 * _GRID.nodes**2, atol=2e-4)

  def test_needs_a_convex_potential(self):
    with self.assertRaises(errors.NonConvexError):
      convex_tools.LegendreTransform(_GRID.nodes**2)

  def test_matches_the_quadratic_scan(self):
    grid = grid_measures.Grid1D(-8.0, 8.0, 801)
    for seed in range(3):
      p = _RandomConvex(grid, seed)
      dual = convex_tools.LegendreTransform(p)
      x, y = grid.nodes, grid.nodes
      expected = np.max(x[None, :] * y[:, None] - p.values[None, :], axis=1)
      self.assertAllClose(dual.values, expected, rtol=0.0,
                          msg='seed={}'.format(seed))

  def test_absolute_value_conjugates_to_an_indicator(self):
    p = convex_tools.ConvexPotential(_GRID, np.abs(_GRID.nodes))
    slopes = grid_measures.Grid1D(-2.0, 2.0, 401)
    dual = convex_tools.LegendreTransform(p, slopes)
    inside = np.abs(slopes.nodes) <= 1.0
    self.assertAllClose(dual.values[inside], 0.0, atol=1e-12)
    # Off [-1, 1] the conjugate grows like the grid half-width.
    outside = np.abs(slopes.nodes) - 1.0
    self.assertAllClose(dual.values[~inside], 5.0 * outside[~inside],
                        atol=1e-9)

  def test_reverses_order(self):
    grid = grid_measures.Grid1D(-8.0, 8.0, 801)
    p = _RandomConvex(grid, 11)
    q = convex_tools.ConvexPotential(grid, p.values + 0.3 * grid.nodes**2 + 0.1)
    dual_p = convex_tools.LegendreTransform(p)
    dual_q = convex_tools.LegendreTransform(q)
    self.assertTrue(np.all(dual_p.values >= dual_q.values))


class InvolutionDefectTest(sbbridge_test_helper.SBBTest):

  def test_half_square(self):
    p = convex_tools.ConvexPotential(_GRID, 0.5 * _GRID.nodes**2)
    self.assertLess(convex_tools.InvolutionDefect(p), 1e-3)

  def test_cosh(self):
    grid = grid_measures.Grid1D(-3.0, 3.0, 301)
    p = convex_tools.ConvexPotential(grid, np.cosh(grid.nodes))
    self.assertLess(convex_tools.InvolutionDefect(p), 5e-3)

  def test_slope_grid_spans_the_slopes(self):
    p = convex_tools.ConvexPotential(_GRID, 0.5 * _GRID.nodes**2)
    slopes = convex_tools.SlopeGrid(p)
    self.assertLess(slopes.x_min, np.min(p.Slopes()))
    self.assertGreater(slopes.x_max, np.max(p.Slopes()))
    self.assertEqual(slopes.n, _GRID.n)

  def test_random_convex_potentials(self):
    grid = grid_measures.Grid1D(-8.0, 8.0, 801)
    for seed in range(5):
      p = _RandomConvex(grid, seed)
      self.assertLess(
          convex_tools.InvolutionDefect(p), 5e-3, msg='seed={}'.format(seed))


class IsotonicRepairTest(sbbridge_test_helper.SBBTest):

  def test_increasing_values_are_unchanged(self):
    values = np.array([0.0, 1.0, 2.0, 4.0])
    self.assertTrue(
        np.array_equal(convex_tools.IsotonicRepair(values), values))

  def test_pools_violations(self):
    repaired = convex_tools.IsotonicRepair([0.0, 1.0, 0.5, 2.0])
    self.assertStrictlyIncreasing(repaired)
    self.assertAllClose(repaired, [0.0, 0.75, 0.75, 2.0], atol=1e-9)


class GradientMapTest(sbbridge_test_helper.SBBTest):

  def test_quadratic_gives_the_identity(self):
    p = convex_tools.ConvexPotential(_GRID, 0.5 * _GRID.nodes**2)
    self.assertAllClose(
        convex_tools.GradientMap(p).values, _GRID.nodes, atol=1e-10)


class InvertMonotoneTest(sbbridge_test_helper.SBBTest):

  def test_inverse_composition(self):
    m = convex_tools.MonotoneMap(_GRID,
                                 _GRID.nodes + 0.5 * np.tanh(_GRID.nodes))
    inverse = convex_tools.InvertMonotone(m, quiet=True)
    inside = (_GRID.nodes > m.values[0]) & (_GRID.nodes < m.values[-1])
    self.assertAllClose(
        m.Evaluate(inverse.values[inside]), _GRID.nodes[inside], atol=1e-12)

  def test_extrapolation_is_logged(self):
    m = convex_tools.MonotoneMap(_GRID, 0.5 * _GRID.nodes)
    with self.assertLogs('sbbridge.sbblib.convex_tools', logging.WARNING):
      inverse = convex_tools.InvertMonotone(m)
    self.assertAllClose(inverse.values, 2.0 * _GRID.nodes, atol=1e-10)

  def test_quiet_extrapolation_logs_at_debug(self):
    m = convex_tools.MonotoneMap(_GRID, 0.5 * _GRID.nodes)
    with self.assertLogs('sbbridge.sbblib.convex_tools', logging.DEBUG) as logs:
      convex_tools.InvertMonotone(m, quiet=True)
    self.assertEqual([r.levelno for r in logs.records], [logging.DEBUG])

  def test_other_target_grid(self):
    m = convex_tools.MonotoneMap(_GRID, 2.0 * _GRID.nodes)
    target = grid_measures.Grid1D(-10.0, 10.0, 201)
    inverse = convex_tools.InvertMonotone(m, target)
    self.assertEqual(inverse.grid, target)
    self.assertAllClose(inverse.values, 0.5 * target.nodes, atol=1e-12)


class SmoothConjugateTest(sbbridge_test_helper.SBBTest):

  def test_half_square(self):
    p = convex_tools.ConvexPotential(_GRID, 0.5 * _GRID.nodes**2)
    self.assertAllClose(
        convex_tools.SmoothConjugate(p), 0.5 * _GRID.nodes**2, atol=1e-9)

  def test_agrees_with_the_discrete_transform(self):
    p = convex_tools.ConvexPotential(_GRID, np.logaddexp(0.0, _GRID.nodes) +
                                     0.5 * _GRID.nodes**2)
    smooth = convex_tools.SmoothConjugate(p, quiet=True)
    discrete = convex_tools.LegendreTransform(p).values
    central = np.abs(_GRID.nodes) < 3
    self.assertAllClose(smooth[central], discrete[central], atol=1e-4)


if __name__ == '__main__':
  unittest.main()
