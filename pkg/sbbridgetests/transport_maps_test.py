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
"""Tests for sbbridge.transport_maps."""

import unittest

import numpy as np
from scipy import stats

from sbbridge.sbblib import errors
from sbbridge.sbblib import grid_measures
from sbbridge.sbblib import transport_maps

from sbbridgetests import sbbridge_test_helper

_GRID = sbbridge_test_helper.STANDARD_GRID


def _Quadratic(a, grid=_GRID):
  """log h(y) = a y^2 / 2."""
  return 0.5 * a * grid.nodes**2


class XMapTest(sbbridge_test_helper.SBBTest):

  def test_quadratic_potential_gives_a_dilation(self):
    x_map = transport_maps.XMap(_Quadratic(0.5), _GRID, 1.0)
    self.assertAllClose(x_map.values, 1.5 * _GRID.nodes, atol=1e-12)
    x_map = transport_maps.XMap(_Quadratic(0.5), _GRID, 100.0)
    self.assertAllClose(x_map.values, 1.005 * _GRID.nodes, atol=1e-12)

  def test_constant_potential_gives_the_identity(self):
    x_map = transport_maps.XMap(np.full(_GRID.n, 2.0), _GRID, 1.0)
    self.assertEqual(x_map.Deviation(), 0.0)

  def test_too_concave_potential(self):
    with self.assertRaises(errors.NonMonotoneMapError) as ctx:
      transport_maps.XMap(_Quadratic(-2.0), _GRID, 1.0)
    self.assertEqual(len(ctx.exception.indices), _GRID.n - 1)

  def test_beta_must_be_finite_and_positive(self):
    for beta in (0.0, -1.0, np.inf):
      with self.assertRaises(errors.OutOfRangeError):
        transport_maps.XMap(np.zeros(_GRID.n), _GRID, beta)

  def test_deviation_decays_like_one_over_beta(self):
    row = np.sin(_GRID.nodes) + 0.1 * _GRID.nodes**2
    deviations = [
        transport_maps.XMap(row, _GRID, beta).Deviation()
        for beta in (10.0, 100.0, 1000.0)
    ]
    self.assertAlmostEqual(deviations[0] / deviations[1], 10.0, places=6)
    self.assertAlmostEqual(deviations[1] / deviations[2], 10.0, places=6)


class YMapTest(sbbridge_test_helper.SBBTest):

  def test_inverse_of_the_dilation(self):
    y_map = transport_maps.YMap(_Quadratic(0.5), _GRID, 1.0)
    self.assertAllClose(y_map.values, _GRID.nodes / 1.5, atol=1e-12)


class CoefficientsTest(sbbridge_test_helper.SBBTest):

  def test_contracting_potential(self):
    # log h = -y^2 / 4 and beta = 1: X(y) = y / 2, so Y(1) = 2, alpha = -1 and
    # sigma = 1/2.
    coefficients = transport_maps.Coefficients(
        _Quadratic(-0.5), _GRID, 1.0, 0.25, quiet=True)
    k = int(np.argmin(np.abs(_GRID.nodes - 1.0)))
    self.assertAlmostEqual(coefficients.alpha[k], -1.0, places=10)
    self.assertAlmostEqual(coefficients.sigma[k], 0.5, places=10)
    self.assertAllClose(coefficients.sigma, 0.5, atol=1e-10)
    self.assertEqual(coefficients.time, 0.25)

  def test_alpha_is_beta_times_displacement(self):
    beta = 3.0
    log_h = np.log(np.cosh(0.5 * _GRID.nodes))
    coefficients = transport_maps.Coefficients(log_h, _GRID, beta, 0.0,
                                               quiet=True)
    y_of_x = transport_maps.YMap(log_h, _GRID, beta, quiet=True).values
    central = np.abs(_GRID.nodes) < 5
    self.assertAllClose(coefficients.alpha[central],
                        beta * (_GRID.nodes - y_of_x)[central], atol=1e-3)

  def test_constant_potential(self):
    coefficients = transport_maps.Coefficients(
        np.zeros(_GRID.n), _GRID, 1.0, 0.0)
    self.assertAllClose(coefficients.alpha, 0.0)
    self.assertAllClose(coefficients.sigma, 1.0)


class ProcessCoefficientsTest(sbbridge_test_helper.SBBTest):

  def test_cost_rate(self):
    coefficients = transport_maps.ProcessCoefficients(
        _GRID, 0.0, np.ones(_GRID.n), np.full(_GRID.n, 2.0))
    self.assertAllClose(coefficients.CostRate(3.0), 2.0)
    self.assertAllClose(coefficients.CostRate(np.inf), 0.5)

  def test_rejects_non_positive_volatility(self):
    sigma = np.ones(_GRID.n)
    sigma[5] = 0.0
    with self.assertRaises(errors.NonPositiveVolatilityError) as ctx:
      transport_maps.ProcessCoefficients(_GRID, 0.5, np.zeros(_GRID.n), sigma)
    self.assertEqual(ctx.exception.indices, (5,))
    self.assertEqual(ctx.exception.time, 0.5)
    self.assertIn('t=0.5', str(ctx.exception))


class MapCoefficientsTest(sbbridge_test_helper.SBBTest):

  def test_dilation(self):
    x_map = transport_maps.XMap(_Quadratic(1.0), _GRID, 1.0)
    coefficients = transport_maps.MapCoefficients(x_map, 1.0)
    self.assertAllClose(coefficients.alpha, 0.0)
    self.assertAllClose(coefficients.sigma, 2.0, atol=1e-10)


class ConsistencyCheckTest(sbbridge_test_helper.SBBTest):

  def test_quadratic_potential_is_consistent(self):
    report = transport_maps.ConsistencyCheck(_Quadratic(0.5), _GRID, 1.0)
    self.assertLess(report.Worst(), 1e-8)

  def test_smooth_potential_is_consistent(self):
    log_h = np.log(np.cosh(0.5 * _GRID.nodes))
    report = transport_maps.ConsistencyCheck(log_h, _GRID, 2.0)
    self.assertLess(report.x_after_y, 1e-10)
    self.assertLess(report.y_after_x, 1e-4)
    self.assertLess(report.drift_chain, 1e-3)

  def test_non_monotone_row_is_reported_not_raised(self):
    log_h = _Quadratic(0.5)
    log_h[390:400] -= 0.5 * (_GRID.nodes[390:400] - _GRID.nodes[390])
    report = transport_maps.ConsistencyCheck(log_h, _GRID, 1.0)
    self.assertGreater(report.y_after_x, 1e-3)


class LogDensityTest(sbbridge_test_helper.SBBTest):

  def test_log_density_at_is_floored_off_the_grid(self):
    m = grid_measures.MakeGaussian(_GRID, 0.0, 1.0)
    values = transport_maps.LogDensityAt(m, [0.0, 20.0], floor=1e-100)
    self.assertAlmostEqual(values[0], stats.norm.logpdf(0.0), places=4)
    self.assertAlmostEqual(values[1], np.log(1e-100))

  def test_pullback_under_a_dilation(self):
    grid = sbbridge_test_helper.WIDE_GRID
    m = grid_measures.MakeGaussian(grid, 0.0, 4.0)
    x_map = transport_maps.XMap(_Quadratic(1.0, grid), grid, 1.0)
    pulled = transport_maps.PullbackLogDensity(m, x_map)
    central = np.abs(grid.nodes) < 3
    self.assertAllClose(
        pulled[central], stats.norm.logpdf(grid.nodes[central]), atol=1e-8)

  def test_measure_from_large_logs(self):
    log_density = 1000.0 - 0.5 * _GRID.nodes**2
    m = transport_maps.MeasureFromLog(_GRID, log_density)
    self.assertAlmostEqual(m.Variance(), 1.0, places=8)


if __name__ == '__main__':
  unittest.main()
