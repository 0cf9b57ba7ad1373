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
"""Probability densities on a uniform one-dimensional grid.

A Grid1D is the discretization substrate for every field in the solver. A
Measure1D is a non-negative density sampled at the grid nodes whose trapezoidal
integral is one. Pushforwards under monotone maps are done by quantile
composition: the cumulative distribution is carried through the map and
differentiated back with a shape preserving (PCHIP) interpolant, so mass never
has to be divided by a map derivative.
"""

import math

import numpy as np
from scipy import integrate
from scipy import interpolate
from scipy import stats

from sbbridge.sbblib import errors

# Number of standard deviations a Gaussian needs inside the grid on each side.
COVERAGE_SIGMAS = 6.0

# Smallest admissible grid.
MIN_NODES = 16

DEFAULT_DENSITY_FLOOR = 1e-300

_MASS_TOLERANCE = 1e-10


class Grid1D(object):
  """A uniform grid on [x_min, x_max] with n nodes.

  Grids are immutable and hashable, so they can key caches of propagators.
  """

  def __init__(self, x_min, x_max, n):
    x_min = float(x_min)
    x_max = float(x_max)
    if not (math.isfinite(x_min) and math.isfinite(x_max)):
      raise errors.OutOfRangeError('grid bounds must be finite')
    if not x_min < x_max:
      raise errors.OutOfRangeError(
          'grid needs x_min < x_max, got [{!r}, {!r}]'.format(x_min, x_max))
    if int(n) != n or n < MIN_NODES:
      raise errors.OutOfRangeError(
          'grid needs at least {} nodes, got {!r}'.format(MIN_NODES, n))
    self._x_min = x_min
    self._x_max = x_max
    self._n = int(n)
    nodes = np.linspace(x_min, x_max, self._n)
    nodes.setflags(write=False)
    self._nodes = nodes

  @property
  def x_min(self):
    return self._x_min

  @property
  def x_max(self):
    return self._x_max

  @property
  def n(self):
    return self._n

  @property
  def dx(self):
    return (self._x_max - self._x_min) / (self._n - 1)

  @property
  def nodes(self):
    return self._nodes

  def Covers(self, lower, upper):
    """True if [lower, upper] lies inside the grid domain."""
    return self._x_min <= lower and upper <= self._x_max

  def Interior(self, fraction=2.0 / 3.0):
    """Boolean mask of the central `fraction` of the grid domain."""
    center = 0.5 * (self._x_min + self._x_max)
    half = 0.5 * fraction * (self._x_max - self._x_min)
    return np.abs(self._nodes - center) <= half + 1e-12 * half

  def Key(self):
    return (self._x_min, self._x_max, self._n)

  def __eq__(self, other):
    return isinstance(other, Grid1D) and self.Key() == other.Key()

  def __ne__(self, other):
    return not self == other

  def __hash__(self):
    return hash(self.Key())

  def __repr__(self):
    return 'Grid1D(x_min={!r}, x_max={!r}, n={!r})'.format(*self.Key())


class Measure1D(object):
  """A probability density sampled at the nodes of a Grid1D.

  Arguments:
    grid: (Grid1D) The grid the density lives on.
    density: (array) Non-negative density values, one per node.
    normalize: (bool) Rescale the density to unit mass instead of requiring it.

  Raises:
    OutOfRangeError: if the density is negative, non-finite or has no mass.
    GridMismatchError: if the density does not have one value per node.
  """

  def __init__(self, grid, density, normalize=False):
    if not isinstance(grid, Grid1D):
      raise errors.GridMismatchError('a Measure1D needs a Grid1D')
    density = np.array(density, dtype=float)
    if density.shape != (grid.n,):
      raise errors.GridMismatchError(
          'density has shape {} but the grid has {} nodes'.format(
              density.shape, grid.n))
    if not np.all(np.isfinite(density)):
      raise errors.OutOfRangeError('density values must be finite')
    if np.any(density < 0):
      raise errors.OutOfRangeError(
          'density is negative at {} nodes'.format(int(np.sum(density < 0))))
    mass = integrate.trapezoid(density, dx=grid.dx)
    if normalize:
      if not mass > 0:
        raise errors.OutOfRangeError('density has no mass on the grid')
      density = density / mass
    elif abs(mass - 1.0) > _MASS_TOLERANCE:
      raise errors.OutOfRangeError(
          'density integrates to {!r}, not 1'.format(mass))
    density.setflags(write=False)
    self._grid = grid
    self._density = density

  @property
  def grid(self):
    return self._grid

  @property
  def density(self):
    return self._density

  def Mass(self):
    return integrate.trapezoid(self._density, dx=self._grid.dx)

  def Cdf(self):
    """The trapezoidal cumulative distribution at the nodes, ending at 1."""
    cdf = integrate.cumulative_trapezoid(
        self._density, dx=self._grid.dx, initial=0.0)
    return cdf / cdf[-1]

  def Expectation(self, values):
    """The integral of `values` (one per node) against the density."""
    return integrate.trapezoid(
        np.asarray(values, dtype=float) * self._density, dx=self._grid.dx)

  def Mean(self):
    return self.Expectation(self._grid.nodes)

  def Variance(self):
    mean = self.Mean()
    return self.Expectation((self._grid.nodes - mean)**2)

  def DensityAt(self, x):
    """Linear interpolation of the density, zero outside the grid."""
    return np.interp(x, self._grid.nodes, self._density, left=0.0, right=0.0)

  def __repr__(self):
    return 'Measure1D({!r}, mean={:.6g}, variance={:.6g})'.format(
        self._grid, self.Mean(), self.Variance())


def _CheckCoverage(grid, mean, variance):
  if not variance > 0:
    raise errors.OutOfRangeError(
        'variance must be positive, got {!r}'.format(variance))
  reach = COVERAGE_SIGMAS * math.sqrt(variance)
  if not grid.Covers(mean - reach, mean + reach):
    raise errors.DomainTooSmallError(
        'grid [{!r}, {!r}] does not cover mean {!r} +/- {:g} standard '
        'deviations ({!r})'.format(grid.x_min, grid.x_max, mean,
                                   COVERAGE_SIGMAS, reach))


def MakeGaussian(grid, mean, variance):
  """The normal density N(mean, variance) restricted to the grid.

  Arguments:
    grid: (Grid1D) The grid.
    mean: (float) Mean of the distribution.
    variance: (float) Variance, strictly positive.

  Returns:
    A Measure1D renormalized to unit trapezoidal mass.

  Raises:
    DomainTooSmallError: if the grid does not cover mean +/- 6 sigma.
  """
  _CheckCoverage(grid, mean, variance)
  density = stats.norm.pdf(grid.nodes, loc=mean, scale=math.sqrt(variance))
  return Measure1D(grid, density, normalize=True)


def MakeMixture(grid, components):
  """A finite Gaussian mixture.

  Arguments:
    grid: (Grid1D) The grid.
    components: (list) (weight, mean, variance) triples. Weights need not sum
      to one; they are normalized.

  Returns:
    A Measure1D.
  """
  components = list(components)
  if not components:
    raise errors.OutOfRangeError('a mixture needs at least one component')
  total = 0.0
  density = np.zeros(grid.n)
  for weight, mean, variance in components:
    if not weight > 0:
      raise errors.OutOfRangeError(
          'mixture weights must be positive, got {!r}'.format(weight))
    _CheckCoverage(grid, mean, variance)
    density += weight * stats.norm.pdf(
        grid.nodes, loc=mean, scale=math.sqrt(variance))
    total += weight
  return Measure1D(grid, density / total, normalize=True)


def MakeUniform(grid, lower, upper):
  """The uniform distribution on [lower, upper].

  Nodes strictly inside the support carry the full density and the two support
  endpoints carry half of it, so that when the endpoints are grid nodes the
  trapezoidal CDF is exactly linear on the support.
  """
  if not lower < upper:
    raise errors.OutOfRangeError(
        'uniform support needs lower < upper, got [{!r}, {!r}]'.format(
            lower, upper))
  if not grid.Covers(lower, upper):
    raise errors.DomainTooSmallError(
        'grid [{!r}, {!r}] does not cover the support [{!r}, {!r}]'.format(
            grid.x_min, grid.x_max, lower, upper))
  x = grid.nodes
  tol = 1e-9 * grid.dx
  inside = (x > lower + tol) & (x < upper - tol)
  edges = (np.abs(x - lower) <= tol) | (np.abs(x - upper) <= tol)
  density = np.where(inside, 1.0, np.where(edges, 0.5, 0.0))
  return Measure1D(grid, density, normalize=True)


def _InvertibleCdf(m):
  """Nodes and CDF values with the CDF strictly increasing."""
  cdf = m.Cdf()
  rising = np.diff(cdf) > 0
  keep = np.zeros(cdf.shape, dtype=bool)
  keep[1:] |= rising
  keep[:-1] |= rising
  x, cdf = m.grid.nodes[keep], cdf[keep]
  strict = np.concatenate([[True], np.diff(cdf) > 0])
  return x[strict], cdf[strict]


def QuantileFunction(m, u):
  """The inverse of the trapezoidal CDF, by linear interpolation.

  Arguments:
    m: (Measure1D) The measure.
    u: (float or array) Probability levels in the open interval (0, 1).

  Returns:
    The quantiles, with the shape of `u`.

  Raises:
    OutOfRangeError: if any level is outside (0, 1).
  """
  levels = np.asarray(u, dtype=float)
  if np.any(~(levels > 0)) or np.any(~(levels < 1)):
    raise errors.OutOfRangeError('quantile levels must lie in (0, 1)')
  x, cdf = _InvertibleCdf(m)
  result = np.interp(levels, cdf, x)
  if np.ndim(u) == 0:
    return float(result)
  return result


def Wasserstein2(a, b, n_quantiles=1000):
  """The quadratic Wasserstein distance between two measures on the line.

  Computed as the L2 distance between the quantile functions with the midpoint
  rule on n_quantiles levels.
  """
  if n_quantiles < 100:
    raise errors.OutOfRangeError(
        'n_quantiles must be at least 100, got {!r}'.format(n_quantiles))
  levels = (np.arange(n_quantiles) + 0.5) / n_quantiles
  diff = QuantileFunction(a, levels) - QuantileFunction(b, levels)
  return float(math.sqrt(np.mean(diff * diff)))


def PushforwardMonotone(m, monotone_map, grid=None):
  """The image measure of m under a strictly increasing map.

  Arguments:
    m: (Measure1D) The source measure.
    monotone_map: (MonotoneMap or array) Map values at the nodes of m's grid.
    grid: (Grid1D) Grid for the result. Defaults to m's grid.

  Returns:
    A Measure1D on `grid`.

  Raises:
    NonMonotoneMapError: if the map values are not strictly increasing.
    GridMismatchError: if the map is defined on another grid.
    DomainTooSmallError: if the image falls outside the result grid.
  """
  values = getattr(monotone_map, 'values', monotone_map)
  map_grid = getattr(monotone_map, 'grid', m.grid)
  if map_grid != m.grid:
    raise errors.GridMismatchError(
        'the map and the measure use different grids')
  values = np.asarray(values, dtype=float)
  if values.shape != (m.grid.n,):
    raise errors.GridMismatchError(
        'map has shape {} but the grid has {} nodes'.format(
            values.shape, m.grid.n))
  bad = np.flatnonzero(np.diff(values) <= 0)
  if bad.size:
    raise errors.NonMonotoneMapError(
        'pushforward map is not strictly increasing', indices=bad)
  grid = grid or m.grid
  if grid == m.grid and np.array_equal(values, m.grid.nodes):
    return m

  cdf = m.Cdf()
  spline = interpolate.PchipInterpolator(values, cdf, extrapolate=False)
  density = spline.derivative()(grid.nodes)
  density = np.where(np.isfinite(density), density, 0.0)
  density = np.clip(density, 0.0, None)
  if not integrate.trapezoid(density, dx=grid.dx) > 0:
    raise errors.DomainTooSmallError(
        'the image of the measure does not intersect the grid')
  return Measure1D(grid, density, normalize=True)


def LogDensityRatio(num, den, floor=DEFAULT_DENSITY_FLOOR):
  """log(max(num, floor) / max(den, floor)) at every node."""
  if num.grid != den.grid:
    raise errors.GridMismatchError(
        'density ratio of measures on different grids')
  if not floor > 0:
    raise errors.OutOfRangeError(
        'floor must be positive, got {!r}'.format(floor))
  return (np.log(np.maximum(num.density, floor)) -
          np.log(np.maximum(den.density, floor)))


def CentralRegion(m, mass):
  """Mask of the nodes between the (1-mass)/2 and (1+mass)/2 quantiles."""
  if not 0 < mass < 1:
    raise errors.OutOfRangeError(
        'mass must lie in (0, 1), got {!r}'.format(mass))
  lower = QuantileFunction(m, 0.5 * (1.0 - mass))
  upper = QuantileFunction(m, 0.5 * (1.0 + mass))
  x = m.grid.nodes
  return (x >= lower) & (x <= upper)


def CallPrices(m, strikes=None):
  """E[(X - k)+] under m for every strike k (default: the grid nodes)."""
  x = m.grid.nodes
  strikes = x if strikes is None else np.asarray(strikes, dtype=float)
  payoff = np.maximum(x[None, :] - strikes[:, None], 0.0)
  return integrate.trapezoid(payoff * m.density[None, :], dx=m.grid.dx, axis=1)


def CheckConvexOrder(mu0, muT, tol=1e-6):
  """Raise unless mu0 precedes muT in convex order.

  The test is equality of the means and domination of the call prices
  E_muT[(X - k)+] >= E_mu0[(X - k)+] at every grid strike.

  Raises:
    ConvexOrderError: if either condition fails beyond `tol`.
  """
  if mu0.grid != muT.grid:
    raise errors.GridMismatchError(
        'convex order of measures on different grids')
  gap = abs(mu0.Mean() - muT.Mean())
  if gap > tol:
    raise errors.ConvexOrderError(
        'marginal means differ by {:.3g}; no martingale connects them'.format(
            gap))
  shortfall = CallPrices(mu0) - CallPrices(muT)
  worst = int(np.argmax(shortfall))
  if shortfall[worst] > tol:
    raise errors.ConvexOrderError(
        'call price at strike {!r} decreases by {:.3g}'.format(
            float(mu0.grid.nodes[worst]), float(shortfall[worst])))
