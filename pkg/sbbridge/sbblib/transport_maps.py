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
"""The stretching maps and the optimal drift and volatility fields.

For a row log h(t, .) and a penalty beta:

  X(t, y) = y + (1/beta) d/dy log h(t, y)       the stretching map
  Y(t, .) = X(t, .)^-1                           its inverse
  alpha(t, x) = beta (x - Y(t, x)) = d/dy log h(t, Y(t, x))
  sigma(t, x) = 1 + (1/beta) d2/dy2 log h(t, Y(t, x))

X is the gradient of the stretching potential G = y^2/2 + (1/beta) log h, which
is the Legendre transform u* of u = x^2/2 - v/beta.
"""

import collections

import numpy as np
from scipy import interpolate

from sbbridge.sbblib import convex_tools
from sbbridge.sbblib import errors
from sbbridge.sbblib import grid_measures


def _CheckRow(log_h_t, grid, beta):
  if not beta > 0 or not np.isfinite(beta):
    raise errors.OutOfRangeError(
        'beta must be positive and finite, got {!r}'.format(beta))
  log_h_t = np.asarray(log_h_t, dtype=float)
  if log_h_t.shape != (grid.n,):
    raise errors.GridMismatchError(
        'potential has shape {} but the grid has {} nodes'.format(
            log_h_t.shape, grid.n))
  if not np.all(np.isfinite(log_h_t)):
    raise errors.OutOfRangeError('log h must be finite')
  return log_h_t


def LogDerivatives(log_h_t, grid):
  """First and second derivative of log h by central differences."""
  first = np.gradient(log_h_t, grid.dx, edge_order=2)
  second = np.gradient(first, grid.dx, edge_order=2)
  return first, second


def XMap(log_h_t, grid, beta):
  """The stretching map y + (1/beta) d/dy log h.

  Raises:
    NonMonotoneMapError: carrying the offending node indices when the map is
      not strictly increasing, i.e. when the iterate violates the constraint
      d2v/dx2 < beta.
  """
  log_h_t = _CheckRow(log_h_t, grid, beta)
  values = grid.nodes + np.gradient(log_h_t, grid.dx, edge_order=2) / beta
  return convex_tools.MonotoneMap(grid, values)


def YMap(log_h_t, grid, beta, x_grid=None, quiet=False):
  """The minimizer of y -> log h(y) + (beta/2)(x - y)^2 for every x node.

  By the first-order condition this is the inverse of XMap.
  """
  return convex_tools.InvertMonotone(
      XMap(log_h_t, grid, beta), x_grid or grid, quiet=quiet)


def StretchingPotential(log_h_t, grid, beta):
  """G = y^2/2 + (1/beta) log h as a ConvexPotential."""
  log_h_t = _CheckRow(log_h_t, grid, beta)
  return convex_tools.ConvexPotential(grid,
                                      0.5 * grid.nodes**2 + log_h_t / beta)


class ProcessCoefficients(object):
  """Drift and volatility of the optimal process at one time, on an x grid."""

  def __init__(self, grid, time, alpha, sigma):
    alpha = np.array(alpha, dtype=float)
    sigma = np.array(sigma, dtype=float)
    if alpha.shape != (grid.n,) or sigma.shape != (grid.n,):
      raise errors.GridMismatchError(
          'coefficients must have one value per grid node')
    if not np.all(np.isfinite(alpha)):
      raise errors.OutOfRangeError('drift must be finite')
    bad = np.flatnonzero(~(sigma > 0))
    if bad.size:
      raise errors.NonPositiveVolatilityError(
          'volatility is not positive', indices=bad, time=time)
    alpha.setflags(write=False)
    sigma.setflags(write=False)
    self.grid = grid
    self.time = float(time)
    self.alpha = alpha
    self.sigma = sigma

  def CostRate(self, beta):
    """0.5 (alpha^2 + beta (sigma - 1)^2) at every node."""
    rate = 0.5 * self.alpha**2
    if np.isfinite(beta):
      rate = rate + 0.5 * beta * (self.sigma - 1.0)**2
    return rate


def Coefficients(log_h_t, grid, beta, time, x_grid=None, quiet=False):
  """Drift and volatility fields on x_grid from a row of log h.

  Arguments:
    log_h_t: (array) log h(t, .) on `grid`.
    grid: (Grid1D) The y grid.
    beta: (float) The volatility penalty.
    time: (float) The time of the row, recorded on the result.
    x_grid: (Grid1D) Where to evaluate the fields. Defaults to `grid`.

  Returns:
    ProcessCoefficients.

  Raises:
    NonPositiveVolatilityError: if sigma <= 0 somewhere.
  """
  log_h_t = _CheckRow(log_h_t, grid, beta)
  x_grid = x_grid or grid
  y_of_x = YMap(log_h_t, grid, beta, x_grid, quiet=quiet).values
  first, second = LogDerivatives(log_h_t, grid)
  alpha = np.interp(y_of_x, grid.nodes, first)
  sigma = 1.0 + np.interp(y_of_x, grid.nodes, second) / beta
  return ProcessCoefficients(x_grid, time, alpha, sigma)


def MapCoefficients(x_map, time, x_grid=None, quiet=False):
  """Coefficients of X(t, Y_t) for a driftless Y: alpha = 0, sigma = X'(Y).

  This is the volatility of a stretched Brownian motion; the drift vanishes
  when X solves the backward heat equation.
  """
  x_grid = x_grid or x_map.grid
  y_of_x = convex_tools.InvertMonotone(x_map, x_grid, quiet=quiet).values
  slope = np.gradient(x_map.values, x_map.grid.dx, edge_order=2)
  sigma = np.interp(y_of_x, x_map.grid.nodes, slope)
  return ProcessCoefficients(x_grid, time, np.zeros(x_grid.n), sigma)


class ConsistencyReport(
    collections.namedtuple('ConsistencyReport',
                           ['x_after_y', 'y_after_x', 'drift_chain'])):
  """Sup-norm defects of the map identities on the interior.

  x_after_y: |X(Y(x)) - x|.
  y_after_x: |Y(X(y)) - y|.
  drift_chain: largest disagreement between the four expressions of dv/dx:
    beta (x - du/dx), beta (x - Y), beta (dG/dy - y) at Y, d log h/dy at Y.
  """

  def Worst(self):
    return max(self)


def ConsistencyCheck(log_h_t, grid, beta):
  """Report how well the map and drift identities hold for a row of log h.

  The check never raises on a bad row: a stretching map that fails to be
  monotone is repaired before inversion and the repair shows up in the
  defects.
  """
  log_h_t = _CheckRow(log_h_t, grid, beta)
  y = grid.nodes
  first, _ = LogDerivatives(log_h_t, grid)
  raw_x = y + first / beta
  x_map = convex_tools.MonotoneMap(grid, convex_tools.IsotonicRepair(raw_x))
  y_map = convex_tools.InvertMonotone(x_map, grid, quiet=True)
  y_of_x = y_map.values
  interior = grid.Interior()

  x_after_y = np.interp(y_of_x, y, raw_x) - y
  y_after_x = y_map.Evaluate(raw_x) - y

  # u(x) = x Y(x) - G(Y(x)) and dv/dx = beta (x - du/dx).
  stretching = 0.5 * y**2 + log_h_t / beta
  spline = interpolate.CubicSpline(y, stretching)
  u = y * y_of_x - spline(y_of_x)
  chain = np.vstack([
      beta * (y - np.gradient(u, grid.dx, edge_order=2)),
      beta * (y - y_of_x),
      beta * (np.interp(y_of_x, y, np.gradient(stretching, grid.dx,
                                                edge_order=2)) - y_of_x),
      np.interp(y_of_x, y, first),
  ])[:, interior]
  drift_chain = np.max(np.max(chain, axis=0) - np.min(chain, axis=0))
  return ConsistencyReport(
      x_after_y=float(np.max(np.abs(x_after_y[interior]))),
      y_after_x=float(np.max(np.abs(y_after_x[interior]))),
      drift_chain=float(drift_chain))


def LogDensityAt(m, x, floor=grid_measures.DEFAULT_DENSITY_FLOOR):
  """log m(x) by linear interpolation of the log density, floored outside."""
  log_density = np.log(np.maximum(m.density, floor))
  return np.interp(x, m.grid.nodes, log_density, left=np.log(floor),
                   right=np.log(floor))


def PullbackLogDensity(m, x_map, floor=grid_measures.DEFAULT_DENSITY_FLOOR):
  """Unnormalized log density of Y_# m where Y = x_map^-1.

  The change of variables gives m(X(y)) X'(y); it is evaluated in the log
  domain on x_map's grid.
  """
  slope = np.gradient(x_map.values, x_map.grid.dx, edge_order=2)
  slope = np.maximum(slope, np.finfo(float).tiny)
  return LogDensityAt(m, x_map.values, floor) + np.log(slope)


def MeasureFromLog(grid, log_density):
  """The probability measure proportional to exp(log_density)."""
  log_density = np.asarray(log_density, dtype=float)
  return grid_measures.Measure1D(
      grid, np.exp(log_density - np.max(log_density)), normalize=True)
