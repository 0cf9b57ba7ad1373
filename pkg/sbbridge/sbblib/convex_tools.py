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
"""Convex potentials, their Legendre transforms and monotone maps.

These carry the chain v <-> u <-> u* <-> w: u = x^2/2 - v/beta is convex,
u* is its Legendre transform, and the gradients of u and u* are mutually
inverse monotone maps.
"""

import logging

import numpy as np
from scipy import interpolate
from scipy import optimize

from sbbridge.sbblib import errors
from sbbridge.sbblib import grid_measures

# Strict gap enforced between consecutive values of a repaired gradient map.
ISOTONIC_GAP = 1e-12

_CONVEXITY_TOLERANCE = 1e-9

_logger = logging.getLogger(__name__)


class ConvexPotential(object):
  """A discretely convex function sampled at the nodes of a grid.

  Raises:
    NonConvexError: if a second difference is below -1e-9 (1 + |values|_inf).
  """

  def __init__(self, grid, values):
    values = np.array(values, dtype=float)
    if values.shape != (grid.n,):
      raise errors.GridMismatchError(
          'potential has shape {} but the grid has {} nodes'.format(
              values.shape, grid.n))
    if not np.all(np.isfinite(values)):
      raise errors.OutOfRangeError('potential values must be finite')
    second = np.diff(values, 2)
    bad = np.flatnonzero(
        second < -_CONVEXITY_TOLERANCE * (1.0 + np.max(np.abs(values))))
    if bad.size:
      raise errors.NonConvexError(
          'potential is not convex at {} nodes, first at x={!r}'.format(
              bad.size, float(grid.nodes[bad[0] + 1])))
    values.setflags(write=False)
    self.grid = grid
    self.values = values

  def Slopes(self):
    """Slopes of the piecewise-linear interpolant, one per cell."""
    return np.diff(self.values) / self.grid.dx

  def Evaluate(self, x):
    """Cubic-spline evaluation of the potential."""
    return interpolate.CubicSpline(self.grid.nodes, self.values)(x)


class MonotoneMap(object):
  """A strictly increasing map sampled at the nodes of a grid.

  Between nodes the map is linear; beyond the grid it continues with the slope
  of the first or last cell.

  Raises:
    NonMonotoneMapError: with the offending node indices.
  """

  def __init__(self, grid, values):
    values = np.array(values, dtype=float)
    if values.shape != (grid.n,):
      raise errors.GridMismatchError(
          'map has shape {} but the grid has {} nodes'.format(
              values.shape, grid.n))
    if not np.all(np.isfinite(values)):
      raise errors.OutOfRangeError('map values must be finite')
    bad = np.flatnonzero(np.diff(values) <= 0)
    if bad.size:
      raise errors.NonMonotoneMapError(
          'map is not strictly increasing', indices=bad)
    values.setflags(write=False)
    self.grid = grid
    self.values = values

  def Evaluate(self, x):
    x = np.asarray(x, dtype=float)
    nodes, values = self.grid.nodes, self.values
    result = np.interp(x, nodes, values)
    low_slope = (values[1] - values[0]) / self.grid.dx
    high_slope = (values[-1] - values[-2]) / self.grid.dx
    result = np.where(x < nodes[0], values[0] + low_slope * (x - nodes[0]),
                      result)
    return np.where(x > nodes[-1], values[-1] + high_slope * (x - nodes[-1]),
                    result)

  def Deviation(self, region=None):
    """sup |map(y) - y| over a node mask (default: every node)."""
    deviation = np.abs(self.values - self.grid.nodes)
    if region is not None:
      deviation = deviation[region]
    return float(np.max(deviation))

  @classmethod
  def Identity(cls, grid):
    return cls(grid, grid.nodes)


def _ArgmaxScan(slopes, y):
  """Index of the maximizer of x_i y - u_i for each y.

  The cell slopes of a convex sequence are nondecreasing, so the maximizer is
  the number of slopes below y.
  """
  return np.searchsorted(np.maximum.accumulate(slopes), y, side='left')


def LegendreTransform(p, dual_grid=None):
  """The discrete conjugate p*(y) = max_i (x_i y - p(x_i)).

  Arguments:
    p: (ConvexPotential) The potential.
    dual_grid: (Grid1D) Where to evaluate the conjugate. Defaults to p's grid.

  Returns:
    A ConvexPotential on the dual grid.
  """
  if not isinstance(p, ConvexPotential):
    raise errors.NonConvexError(
        'the Legendre transform needs a ConvexPotential')
  dual_grid = dual_grid or p.grid
  x, u, y = p.grid.nodes, p.values, dual_grid.nodes
  best = _ArgmaxScan(p.Slopes(), y)
  # Rounding can leave the slopes marginally out of order, so the scan's
  # neighbours are compared as well.
  candidates = np.clip(best[None, :] + np.arange(-1, 2)[:, None], 0, x.size - 1)
  values = x[candidates] * y[None, :] - u[candidates]
  return ConvexPotential(dual_grid, np.max(values, axis=0))


def SlopeGrid(p):
  """A grid with p's node count spanning the slopes of p."""
  slopes = p.Slopes()
  low, high = float(np.min(slopes)), float(np.max(slopes))
  if not high - low > 0:
    low, high = low - 1.0, high + 1.0
  pad = (high - low) / (p.grid.n - 1)
  return grid_measures.Grid1D(low - pad, high + pad, p.grid.n)


def InvolutionDefect(p):
  """sup |p - p**| on the interior two-thirds of the grid.

  The first conjugate is taken on a grid spanning the slopes of p so that the
  biconjugate sees every supporting line.
  """
  dual = LegendreTransform(p, SlopeGrid(p))
  biconjugate = LegendreTransform(dual, p.grid)
  interior = p.grid.Interior()
  return float(np.max(np.abs(p.values - biconjugate.values)[interior]))


def IsotonicRepair(values, gap=ISOTONIC_GAP):
  """The closest strictly increasing sequence with consecutive gaps >= gap.

  Sequences that are already strictly increasing come back unchanged.
  """
  values = np.asarray(values, dtype=float)
  if np.all(np.diff(values) > 0):
    return values.copy()
  ramp = gap * np.arange(values.size)
  result = optimize.isotonic_regression(values - ramp, increasing=True)
  return result.x + ramp


def GradientMap(p):
  """The derivative of a convex potential as a MonotoneMap.

  Central differences inside, second-order one-sided differences at the two
  boundary nodes, followed by an isotonic repair.
  """
  gradient = np.gradient(p.values, p.grid.dx, edge_order=2)
  return MonotoneMap(p.grid, IsotonicRepair(gradient))


def InvertMonotone(m, target_grid=None, quiet=False):
  """The inverse map g with g(m(y)) = y, sampled on target_grid.

  Arguments:
    m: (MonotoneMap) The map.
    target_grid: (Grid1D) Grid of the inverse. Defaults to m's grid.
    quiet: (bool) Log range extrapolation at debug level only.

  Returns:
    A MonotoneMap on target_grid. Linear interpolation of the swapped samples
    makes m.Evaluate(g(x)) = x hold to rounding. Targets outside the range of m
    are reached by linear extrapolation, which is logged.
  """
  target_grid = target_grid or m.grid
  x = target_grid.nodes
  outside = (x < m.values[0]) | (x > m.values[-1])
  if np.any(outside):
    log = _logger.debug if quiet else _logger.warning
    log('inverse map extrapolated at %d of %d nodes: range [%g, %g] does not '
        'cover [%g, %g]', int(np.sum(outside)), x.size, m.values[0],
        m.values[-1], target_grid.x_min, target_grid.x_max)
  nodes = m.grid.nodes
  result = np.interp(x, m.values, nodes)
  low_slope = (nodes[1] - nodes[0]) / (m.values[1] - m.values[0])
  high_slope = (nodes[-1] - nodes[-2]) / (m.values[-1] - m.values[-2])
  result = np.where(x < m.values[0],
                    nodes[0] + low_slope * (x - m.values[0]), result)
  result = np.where(x > m.values[-1],
                    nodes[-1] + high_slope * (x - m.values[-1]), result)
  return MonotoneMap(target_grid, result)


def SmoothConjugate(p, target_grid=None, quiet=False):
  """The conjugate of p evaluated through its gradient map.

  p*(x) = x Y(x) - p(Y(x)) where Y inverts the gradient of p; p is evaluated
  by a cubic spline. Unlike LegendreTransform the result is differentiable,
  which derivative-based checks need.
  """
  target_grid = target_grid or p.grid
  argmax = InvertMonotone(GradientMap(p), target_grid, quiet=quiet).values
  return target_grid.nodes * argmax - p.Evaluate(argmax)
