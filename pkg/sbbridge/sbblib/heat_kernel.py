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
"""Exact Gaussian-kernel propagation of the heat equation on a grid.

The Schrodinger potential h solves the backward heat equation and the reference
density nu solves the forward one. Both are propagated by dense quadrature
against the Gaussian kernel truncated to the grid domain, h in the log domain.

The truncated kernel is normalized per target node for backward propagation
and per source node for forward propagation. The two discrete operators are
then exact adjoints of each other with respect to trapezoidal quadrature, the
backward one maps constants to constants and the forward one conserves mass.

Backward propagation in the log domain can instead continue log h linearly
past both ends of the grid and integrate the kernel over the whole line, the
tails in closed form. Potentials with linear tails then propagate without the
curvature a truncated kernel puts into the boundary layer.
"""

import functools
import logging

import numpy as np
from scipy import special

from sbbridge.sbblib import errors
from sbbridge.sbblib import grid_measures

# Mass leaving the grid above this level is reported.
MASS_LOSS_WARNING = 1e-6

# Width, in standard deviations of the heat kernel, of the boundary layer
# excluded from consistency checks.
BOUNDARY_SIGMAS = 6.0

_TIME_TOLERANCE = 1e-12

_logger = logging.getLogger(__name__)


def _TrapezoidWeights(grid):
  weights = np.full(grid.n, grid.dx)
  weights[0] = weights[-1] = 0.5 * grid.dx
  return weights


def _Exponent(grid, duration):
  x = grid.nodes
  return -0.5 * (x[:, None] - x[None, :])**2 / duration


@functools.lru_cache(maxsize=64)
def _LogRowNorms(grid, duration):
  norms = np.log(np.exp(_Exponent(grid, duration)) @ _TrapezoidWeights(grid))
  norms.setflags(write=False)
  return norms


def _Kernel(grid, duration):
  """Exponent matrix -(x_i - x_j)^2 / (2 duration) and its log row norms."""
  return _Exponent(grid, duration), _LogRowNorms(grid, duration)


def _LinearTails(log_h, grid, duration):
  """Log kernel mass beyond the two grid ends, log h continued linearly.

  Beyond x_max, log h = l + s (z - x_max) and at distance c = x_max - y

    log int_{x_max}^inf K(y, z) h(z) dz
        = log sqrt(2 pi d) + l - s c + s^2 d / 2 + log Phi((s d - c) / sqrt(d))

  with d the duration; the lower tail is the mirror image.
  """
  x = grid.nodes
  scale = np.sqrt(duration)
  constant = 0.5 * np.log(2.0 * np.pi * duration)
  low_slope = (log_h[1] - log_h[0]) / grid.dx
  high_slope = (log_h[-1] - log_h[-2]) / grid.dx
  low_gap = x - grid.x_min
  high_gap = grid.x_max - x
  low = (constant + log_h[0] + low_slope * low_gap +
         0.5 * low_slope**2 * duration +
         special.log_ndtr(-(low_gap + low_slope * duration) / scale))
  high = (constant + log_h[-1] - high_slope * high_gap +
          0.5 * high_slope**2 * duration +
          special.log_ndtr((high_slope * duration - high_gap) / scale))
  return low, high


def _CheckDuration(duration):
  duration = float(duration)
  if not duration >= 0:
    raise errors.OutOfRangeError(
        'duration must be non-negative, got {!r}'.format(duration))
  return duration


def PropagateBackwardLog(log_h_terminal, grid, duration, linear_tails=False):
  """Log of the heat-kernel convolution of exp(log_h_terminal).

  Arguments:
    log_h_terminal: (array) Finite values of log h at the later time.
    grid: (Grid1D) The grid.
    duration: (float) Time elapsed backwards, the variance of the kernel.
    linear_tails: (bool) Continue log h past both ends with its end slopes and
      integrate over the whole line instead of truncating the kernel. A linear
      log h then propagates exactly up to the boundary.

  Returns:
    An array with log h at the earlier time. A zero duration returns a copy of
    the input.
  """
  duration = _CheckDuration(duration)
  log_h_terminal = np.asarray(log_h_terminal, dtype=float)
  if log_h_terminal.shape != (grid.n,):
    raise errors.GridMismatchError(
        'potential has shape {} but the grid has {} nodes'.format(
            log_h_terminal.shape, grid.n))
  if not np.all(np.isfinite(log_h_terminal)):
    raise errors.OutOfRangeError('log h must be finite')
  if duration == 0:
    return log_h_terminal.copy()
  exponent, log_norm = _Kernel(grid, duration)
  weights = _TrapezoidWeights(grid)
  inside = special.logsumexp(
      exponent + log_h_terminal[None, :], b=weights[None, :], axis=1)
  if not linear_tails:
    return inside - log_norm
  low, high = _LinearTails(log_h_terminal, grid, duration)
  flat_low, flat_high = _LinearTails(np.zeros(grid.n), grid, duration)
  total = np.logaddexp(inside, np.logaddexp(low, high))
  return total - np.logaddexp(log_norm, np.logaddexp(flat_low, flat_high))


def PropagateBackward(values, grid, duration):
  """Heat-kernel smoothing of a function: E[f(y + W_duration)]."""
  duration = _CheckDuration(duration)
  values = np.asarray(values, dtype=float)
  if duration == 0:
    return values.copy()
  exponent, log_norm = _Kernel(grid, duration)
  weights = _TrapezoidWeights(grid)
  return (np.exp(exponent - log_norm[:, None]) * weights[None, :]) @ values


def BoundaryMassLoss(nu, duration):
  """Mass of nu that the untruncated heat flow would carry off the grid."""
  duration = _CheckDuration(duration)
  if duration == 0:
    return 0.0
  grid = nu.grid
  scale = np.sqrt(duration)
  outside = (special.ndtr((grid.x_min - grid.nodes) / scale) +
             special.ndtr((grid.nodes - grid.x_max) / scale))
  return float(np.sum(_TrapezoidWeights(grid) * nu.density * outside))


def PropagateForward(nu, duration, quiet=False):
  """The law of Y_0 + W_duration when Y_0 has density nu.

  Arguments:
    nu: (Measure1D) Density at the earlier time.
    duration: (float) Time elapsed forwards.
    quiet: (bool) Report boundary mass loss at debug level only.

  Returns:
    A Measure1D on the same grid. A zero duration returns nu itself.
  """
  duration = _CheckDuration(duration)
  if duration == 0:
    return nu
  lost = BoundaryMassLoss(nu, duration)
  if lost > MASS_LOSS_WARNING:
    log = _logger.debug if quiet else _logger.warning
    log(
        'heat flow over %g carries %.3g of the mass off the grid [%g, %g]',
        duration, lost, nu.grid.x_min, nu.grid.x_max)
  exponent, log_norm = _Kernel(nu.grid, duration)
  source = _TrapezoidWeights(nu.grid) * nu.density * np.exp(-log_norm)
  density = np.exp(exponent) @ source
  return grid_measures.Measure1D(nu.grid, density, normalize=True)


class LogHeatPotential(object):
  """log h sampled on a grid at increasing times 0 = t_0 < ... < t_K = T.

  Arguments:
    grid: (Grid1D) The spatial grid.
    times: (array) Strictly increasing times starting at 0.
    log_h: (array) One row of log h per time.
    linear_tails: (bool) Whether the rows propagate with linear tails, see
      PropagateBackwardLog.
  """

  def __init__(self, grid, times, log_h, linear_tails=False):
    times = np.array(times, dtype=float)
    log_h = np.array(log_h, dtype=float)
    if times.ndim != 1 or times.size < 2:
      raise errors.InsufficientTimesError('a potential needs at least 2 times')
    if times[0] != 0 or np.any(np.diff(times) <= 0):
      raise errors.OutOfRangeError(
          'potential times must start at 0 and increase strictly')
    if log_h.shape != (times.size, grid.n):
      raise errors.GridMismatchError(
          'log_h has shape {}, expected {}'.format(log_h.shape,
                                                   (times.size, grid.n)))
    if not np.all(np.isfinite(log_h)):
      raise errors.OutOfRangeError('log h must be finite')
    times.setflags(write=False)
    log_h.setflags(write=False)
    self.grid = grid
    self.times = times
    self.log_h = log_h
    self.linear_tails = bool(linear_tails)

  @classmethod
  def Build(cls, log_h_terminal, grid, times, linear_tails=False):
    """Fill every stored time by backward propagation of the terminal row."""
    times = np.asarray(times, dtype=float)
    horizon = times[-1]
    rows = [
        PropagateBackwardLog(log_h_terminal, grid, horizon - t, linear_tails)
        for t in times
    ]
    rows[-1] = np.asarray(log_h_terminal, dtype=float)
    return cls(grid, times, np.vstack(rows), linear_tails)

  @property
  def horizon(self):
    return float(self.times[-1])

  def TimeIndex(self, t):
    """Index of a stored time.

    Raises:
      TimeNotStoredError: if t is not one of the stored times.
    """
    tol = _TIME_TOLERANCE * max(1.0, self.horizon)
    hits = np.flatnonzero(np.abs(self.times - t) <= tol)
    if not hits.size:
      raise errors.TimeNotStoredError(
          'time {!r} is not stored; stored times are {}'.format(
              t, list(self.times)))
    return int(hits[0])

  def At(self, t):
    return self.log_h[self.TimeIndex(t)]

  def Replace(self, t, row):
    """A copy with the row at time t replaced."""
    log_h = np.array(self.log_h)
    log_h[self.TimeIndex(t)] = row
    return LogHeatPotential(self.grid, self.times, log_h, self.linear_tails)


def CheckRegion(grid, spread):
  """Nodes farther than BOUNDARY_SIGMAS * spread from the grid boundary.

  Falls back to the middle third of the grid when that set is too thin.
  """
  x = grid.nodes
  margin = BOUNDARY_SIGMAS * spread
  region = (x >= grid.x_min + margin) & (x <= grid.x_max - margin)
  if np.sum(region) < max(3, grid.n // 10):
    region = grid.Interior(1.0 / 3.0)
  return region


def SemigroupCheck(p, s, t):
  """Sup-norm discrepancy between log h(s) and the propagation of log h(t).

  Arguments:
    p: (LogHeatPotential) The potential.
    s: (float) Earlier stored time.
    t: (float) Later stored time.

  Returns:
    The sup-norm over nodes clear of the boundary layers of both the (s, t)
    and the (t, T) propagations.

  Raises:
    TimeNotStoredError: if s or t is not stored.
  """
  i, j = p.TimeIndex(s), p.TimeIndex(t)
  if not i < j:
    raise errors.OutOfRangeError('need s < t, got s={!r}, t={!r}'.format(s, t))
  duration = p.times[j] - p.times[i]
  propagated = PropagateBackwardLog(p.log_h[j], p.grid, duration,
                                    p.linear_tails)
  spread = np.sqrt(duration) + np.sqrt(p.horizon - p.times[j])
  region = CheckRegion(p.grid, spread)
  return float(np.max(np.abs(propagated - p.log_h[i])[region]))
