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
"""The Sinkhorn-type fixed-point iteration for the Schrodinger-Bass bridge.

A solve alternates between the two boundary conditions of the bridge system

  Y(0, .)_# mu_0 = h(0, .) nu_0        Y(T, .)_# mu_T = h(T, .) nu_T

where h solves the backward heat equation and nu the forward one. The terminal
condition fixes log h(T, .) given nu, the initial condition fixes nu_0 given h.
Two limiting modes share the machinery: the classical Schrodinger bridge
(beta -> infinity, identity maps) and the Bass martingale (beta -> 0, h
constant and the maps carried by a heat-harmonic monotone map).

The module also holds the diagnostics of a solution: the Monge-Ampere and HJB
residuals, the primal cost by field quadrature, the dual value, and the closed
forms of the Gaussian problems used to check all of them.
"""

import collections
import logging
import math

import numpy as np
from scipy import integrate
from scipy import linalg

from sbbridge.sbblib import convex_tools
from sbbridge.sbblib import errors
from sbbridge.sbblib import grid_measures
from sbbridge.sbblib import heat_kernel
from sbbridge.sbblib import transport_maps

MODES = ('sbb', 'schrodinger_limit', 'bass_limit')
NU0_POLICIES = ('match_mu0', 'standard_gaussian', 'custom')
TERMINAL_UPDATES = ('newton', 'density_ratio')

# A sweep that moves log h(T, .) by less than this in sup norm ends the solve.
STAGNATION_TOLERANCE = 1e-7

# Nodes whose density is below this fraction of the peak are unresolved.
RESOLVED_LEVEL = 1e-10

# Mass of the regions the Monge-Ampere and HJB residuals are reported on.
RESIDUAL_MASS = 0.8

# Mass whose preimage bounds map comparisons.
MAP_MASS = 0.98

_MAX_STEP_HALVINGS = 30
_MIN_DAMPING = 1e-3
_QUANTILE_CLIP = 1e-9
_MIN_REPAIRED_SLOPE = 1e-9
_TIME_TOLERANCE = 1e-12

_logger = logging.getLogger(__name__)


class TraceRecord(
    collections.namedtuple(
        'TraceRecord', ['iter', 'w2_t0', 'w2_T', 'dlogh_sup', 'sigma_min'])):
  """One sweep of a solve.

  iter: 1-based sweep number.
  w2_t0, w2_T: W2 defects of the two boundary conditions before the update.
  dlogh_sup: sup-norm change of the iterate made by the sweep (log h(T, .), or
    log nu_0 in the Bass limit).
  sigma_min: smallest slope of the stretching maps; positive iff the
    volatility is positive everywhere.
  """


class SolverConfig(object):
  """Parameters of a solve.

  Arguments:
    grid: (Grid1D) The grid every measure and field lives on.
    beta: (float) The volatility penalty, positive and finite.
    horizon_T: (float) The time horizon T.
    max_iters: (int) Sweep budget.
    tol_marginal: (float) W2 tolerance on both boundary conditions.
    damping: (float) Initial step in (0, 1] of the terminal update.
    density_floor: (float) Floor applied before taking logs of densities.
    nu0_policy: (str or Measure1D) 'match_mu0', 'standard_gaussian', or a
      Measure1D used as the initial reference law.
    output_times: (sequence) Times the solution stores, containing 0 and T.
      Defaults to n_output_times equispaced times.
    n_output_times: (int) Number of default output times, at least 2.
    mode: (str) One of MODES.
    terminal_update: (str) One of TERMINAL_UPDATES.

  Raises:
    OutOfRangeError: naming the first invalid field.
  """

  def __init__(self,
               grid,
               beta=1.0,
               horizon_T=1.0,
               max_iters=2000,
               tol_marginal=1e-3,
               damping=1.0,
               density_floor=grid_measures.DEFAULT_DENSITY_FLOOR,
               nu0_policy='match_mu0',
               output_times=None,
               n_output_times=17,
               mode='sbb',
               terminal_update='newton'):
    if not isinstance(grid, grid_measures.Grid1D):
      raise errors.OutOfRangeError('grid must be a Grid1D')
    beta = _Positive('beta', beta)
    horizon_T = _Positive('horizon_T', horizon_T)
    tol_marginal = _Positive('tol_marginal', tol_marginal)
    density_floor = _Positive('density_floor', density_floor)
    if not 0 < damping <= 1:
      raise errors.OutOfRangeError(
          'damping must lie in (0, 1], got {!r}'.format(damping))
    if int(max_iters) != max_iters or max_iters < 1:
      raise errors.OutOfRangeError(
          'max_iters must be a positive integer, got {!r}'.format(max_iters))
    if mode not in MODES:
      raise errors.OutOfRangeError('mode must be one of {}, got {!r}'.format(
          ', '.join(MODES), mode))
    if terminal_update not in TERMINAL_UPDATES:
      raise errors.OutOfRangeError(
          'terminal_update must be one of {}, got {!r}'.format(
              ', '.join(TERMINAL_UPDATES), terminal_update))

    self.nu0_custom = None
    if isinstance(nu0_policy, grid_measures.Measure1D):
      if nu0_policy.grid != grid:
        raise errors.GridMismatchError('nu0_policy measure is on another grid')
      self.nu0_custom = nu0_policy
      nu0_policy = 'custom'
    elif nu0_policy not in NU0_POLICIES or nu0_policy == 'custom':
      raise errors.OutOfRangeError(
          'nu0_policy must be match_mu0, standard_gaussian or a measure, '
          'got {!r}'.format(nu0_policy))

    if output_times is None:
      if int(n_output_times) != n_output_times or n_output_times < 2:
        raise errors.OutOfRangeError(
            'n_output_times must be an integer >= 2, got {!r}'.format(
                n_output_times))
      output_times = np.linspace(0.0, horizon_T, int(n_output_times))
    output_times = _CheckOutputTimes(output_times, horizon_T)

    self.grid = grid
    self.beta = beta
    self.horizon_T = horizon_T
    self.max_iters = int(max_iters)
    self.tol_marginal = tol_marginal
    self.damping = float(damping)
    self.density_floor = density_floor
    self.nu0_policy = nu0_policy
    self.output_times = output_times
    self.mode = mode
    self.terminal_update = terminal_update

  @property
  def effective_beta(self):
    """The penalty of the cost functional; infinite in the Schrodinger limit."""
    if self.mode == 'schrodinger_limit':
      return math.inf
    return self.beta

  def AsDict(self):
    """The JSON-able fields of the configuration."""
    return {
        'grid': {
            'x_min': self.grid.x_min,
            'x_max': self.grid.x_max,
            'n': self.grid.n,
        },
        'beta': self.beta,
        'horizon_T': self.horizon_T,
        'max_iters': self.max_iters,
        'tol_marginal': self.tol_marginal,
        'damping': self.damping,
        'density_floor': self.density_floor,
        'nu0_policy': self.nu0_policy,
        'output_times': [float(t) for t in self.output_times],
        'mode': self.mode,
        'terminal_update': self.terminal_update,
    }

  def Replace(self, **changes):
    """A new configuration with some fields changed."""
    fields = self.AsDict()
    fields.pop('grid')
    fields['nu0_policy'] = self.nu0_custom or self.nu0_policy
    if 'output_times' not in changes and ('horizon_T' in changes or
                                          'n_output_times' in changes):
      fields['output_times'] = None
      fields['n_output_times'] = self.output_times.size
    fields.update(changes)
    grid = fields.pop('grid', self.grid)
    return SolverConfig(grid, **fields)


def _Positive(name, value):
  try:
    value = float(value)
  except (TypeError, ValueError):
    raise errors.OutOfRangeError('{} must be a number, got {!r}'.format(
        name, value))
  if not (value > 0 and math.isfinite(value)):
    raise errors.OutOfRangeError(
        '{} must be positive and finite, got {!r}'.format(name, value))
  return value


def _CheckOutputTimes(times, horizon):
  times = np.array(times, dtype=float)
  tol = _TIME_TOLERANCE * max(1.0, horizon)
  if times.ndim != 1 or times.size < 2:
    raise errors.OutOfRangeError(
        'output_times needs at least the times 0 and T')
  if np.any(np.diff(times) <= 0):
    raise errors.OutOfRangeError('output_times must increase strictly')
  if abs(times[0]) > tol or abs(times[-1] - horizon) > tol:
    raise errors.OutOfRangeError(
        'output_times must start at 0 and end at horizon_T={!r}'.format(
            horizon))
  times[0], times[-1] = 0.0, horizon
  times.setflags(write=False)
  return times


Fields = collections.namedtuple(
    'Fields',
    ['time', 'nu', 'stretched', 'x_map', 'y_map', 'marginal', 'coefficients'])
Fields.__doc__ = """Everything a solution defines at one time.

nu: the reference law nu_t.
stretched: the normalized law h(t, .) nu_t of Y_t.
x_map, y_map: the stretching map and its inverse.
marginal: mu_t, the image of `stretched` under x_map.
coefficients: the drift and volatility fields.
"""


def _Stretched(nu, log_h_t, floor):
  """The probability law proportional to h(t, .) nu_t."""
  return transport_maps.MeasureFromLog(
      nu.grid, np.log(np.maximum(nu.density, floor)) + log_h_t)


def _BassMapAt(terminal_map, horizon, t):
  values = heat_kernel.PropagateBackward(terminal_map.values, terminal_map.grid,
                                         horizon - t)
  return convex_tools.MonotoneMap(terminal_map.grid,
                                  convex_tools.IsotonicRepair(values))


def _PropagateLog(log_h_T, config, duration):
  """log h at an earlier time; sbb potentials propagate with linear tails."""
  return heat_kernel.PropagateBackwardLog(
      log_h_T, config.grid, duration, linear_tails=config.mode == 'sbb')


def _RepairedCoefficients(log_h_t, x_map, y_map, t):
  """Drift d/dy log h and volatility X' at Y(x) for a repaired map."""
  grid = x_map.grid
  first, _ = transport_maps.LogDerivatives(log_h_t, grid)
  slope = np.gradient(x_map.values, grid.dx, edge_order=2)
  y_of_x = y_map.values
  return transport_maps.ProcessCoefficients(
      grid, t, np.interp(y_of_x, grid.nodes, first),
      np.interp(y_of_x, grid.nodes, np.maximum(slope, _MIN_REPAIRED_SLOPE)))


def _SbbFieldsAt(config, log_h_t, t, repair):
  grid, beta = config.grid, config.beta
  try:
    x_map = transport_maps.XMap(log_h_t, grid, beta)
    y_map = convex_tools.InvertMonotone(x_map, quiet=True)
    coefficients = transport_maps.Coefficients(
        log_h_t, grid, beta, t, quiet=True)
    return x_map, y_map, coefficients
  except (errors.NonMonotoneMapError, errors.NonPositiveVolatilityError) as e:
    if not repair:
      raise
    _logger.warning('fields at t=%g are degenerate (%s); the stretching map is '
                    'repaired by isotonic projection', t, e)
  first, _ = transport_maps.LogDerivatives(log_h_t, grid)
  x_map = convex_tools.MonotoneMap(
      grid, convex_tools.IsotonicRepair(grid.nodes + first / beta))
  y_map = convex_tools.InvertMonotone(x_map, quiet=True)
  return x_map, y_map, _RepairedCoefficients(log_h_t, x_map, y_map, t)


def _FieldsAt(config, nu0, log_h_t, t, terminal_map=None, repair=False):
  grid = config.grid
  nu = heat_kernel.PropagateForward(nu0, t, quiet=True)
  if config.mode == 'sbb':
    x_map, y_map, coefficients = _SbbFieldsAt(config, log_h_t, t, repair)
  elif config.mode == 'schrodinger_limit':
    x_map = y_map = convex_tools.MonotoneMap.Identity(grid)
    drift, _ = transport_maps.LogDerivatives(log_h_t, grid)
    coefficients = transport_maps.ProcessCoefficients(grid, t, drift,
                                                      np.ones(grid.n))
  else:
    x_map = _BassMapAt(terminal_map, config.horizon_T, t)
    y_map = convex_tools.InvertMonotone(x_map, quiet=True)
    coefficients = transport_maps.MapCoefficients(x_map, t, quiet=True)
  stretched = _Stretched(nu, log_h_t, config.density_floor)
  marginal = grid_measures.PushforwardMonotone(stretched, x_map)
  return Fields(t, nu, stretched, x_map, y_map, marginal, coefficients)


class SBBSolution(object):
  """The result of a solve.

  Arguments:
    config: (SolverConfig) The configuration that produced it.
    mu0, muT: (Measure1D) The prescribed marginals.
    potential: (LogHeatPotential) log h at the output times. Identically zero
      in the Bass limit.
    nu0: (Measure1D) The initial law of the reference Brownian motion.
    fields: (list of Fields) One entry per output time.
    trace: (list of TraceRecord) One entry per sweep.
    converged: (bool) Whether both boundary conditions hold within tolerance.
  """

  def __init__(self, config, mu0, muT, potential, nu0, fields, trace,
               converged):
    if len(fields) != config.output_times.size:
      raise errors.GridMismatchError('one set of fields per output time needed')
    self.config = config
    self.mu0 = mu0
    self.muT = muT
    self.potential = potential
    self.nu0 = nu0
    self.fields = tuple(fields)
    self.trace = tuple(trace)
    self.converged = bool(converged)

  @property
  def times(self):
    return self.config.output_times

  @property
  def grid(self):
    return self.config.grid

  @property
  def maps_x(self):
    return [f.x_map for f in self.fields]

  @property
  def maps_y(self):
    return [f.y_map for f in self.fields]

  @property
  def marginals(self):
    return [f.marginal for f in self.fields]

  @property
  def coefficients(self):
    return [f.coefficients for f in self.fields]

  @property
  def iterations(self):
    return len(self.trace)

  def TimeIndex(self, t):
    return self.potential.TimeIndex(t)

  def At(self, t):
    """The Fields stored at output time t."""
    return self.fields[self.TimeIndex(t)]

  def _ClampTime(self, t):
    horizon = self.config.horizon_T
    if not -_TIME_TOLERANCE <= t <= horizon * (1 + _TIME_TOLERANCE):
      raise errors.OutOfRangeError('time {!r} is outside [0, {!r}]'.format(
          t, horizon))
    return min(max(float(t), 0.0), horizon)

  def LogPotentialAt(self, t):
    """log h(t, .) at an arbitrary time in [0, T], propagated from T."""
    t = self._ClampTime(t)
    return _PropagateLog(self.potential.log_h[-1], self.config,
                         self.config.horizon_T - t)

  def FieldsAt(self, t):
    """The Fields at an arbitrary time in [0, T], recomputed from h and nu_0.

    A stretching map that fails to increase between the output times is
    repaired, with a warning.
    """
    t = self._ClampTime(t)
    return _FieldsAt(self.config, self.nu0, self.LogPotentialAt(t), t,
                     self.fields[-1].x_map, repair=True)

  def Replace(self, **changes):
    """A shallow copy with some attributes replaced.

    Replacing the potential keeps the other fields: diagnostics that rebuild
    maps from the potential then see the change.
    """
    attrs = dict(
        config=self.config,
        mu0=self.mu0,
        muT=self.muT,
        potential=self.potential,
        nu0=self.nu0,
        fields=self.fields,
        trace=self.trace,
        converged=self.converged)
    attrs.update(changes)
    return SBBSolution(**attrs)

  def __repr__(self):
    return ('SBBSolution(mode={}, beta={!r}, converged={}, '
            'iterations={})'.format(self.config.mode, self.config.beta,
                                    self.converged, self.iterations))


def _Resolved(density, level=RESOLVED_LEVEL):
  return density > level * np.max(density)


def _Gauge(log_h, region):
  """Shift log h to zero median over a node mask."""
  if not np.any(region):
    region = np.ones(log_h.shape, dtype=bool)
  return log_h - np.median(log_h[region])


def _InitialNu0(mu0, config):
  if config.nu0_policy == 'custom':
    return config.nu0_custom
  if config.nu0_policy == 'standard_gaussian':
    return grid_measures.MakeGaussian(config.grid, 0.0, 1.0)
  return mu0


def _SigmaMin(*maps):
  return float(
      min(np.min(np.gradient(m.values, m.grid.dx, edge_order=2)) for m in maps))


def _BoundaryDefect(nu, log_h_t, x_map, target, floor):
  image = _Stretched(nu, log_h_t, floor)
  if x_map is not None:
    image = grid_measures.PushforwardMonotone(image, x_map)
  return grid_measures.Wasserstein2(image, target)


def _TerminalResidual(log_h_T, x_map, nu_T, muT, floor):
  """Pointwise defect of h(T, .) nu_T = Y(T, .)_# mu_T in the log domain.

  Returns the residual log mu_T(X) + log X' - log nu_T - log h(T, .) and the
  mask of nodes where it is resolved; the residual is zero off the mask.
  """
  grid = x_map.grid
  slope = np.gradient(x_map.values, grid.dx, edge_order=2)
  target = muT.DensityAt(x_map.values)
  resolved = (_Resolved(nu_T.density) &
              (target > RESOLVED_LEVEL * np.max(muT.density)) &
              (x_map.values >= grid.x_min) & (x_map.values <= grid.x_max) &
              (slope > 0))
  residual = np.zeros(grid.n)
  residual[resolved] = (
      transport_maps.LogDensityAt(muT, x_map.values[resolved], floor) +
      np.log(slope[resolved]) -
      np.log(np.maximum(nu_T.density[resolved], floor)) - log_h_T[resolved])
  return residual, resolved


def _NewtonDirection(log_h_T, x_map, nu_T, muT, beta, floor):
  """Preconditioned correction of log h(T, .) for the terminal condition.

  Linearizing the residual in log h gives the operator
  I - (beta X')^-1 d2 - (b / beta) d with b the log-derivative of mu_T at X.
  It is discretized on the span of resolved nodes with natural (zero second
  difference) ends and solved as a banded system. Outside the span the
  correction continues linearly, so X keeps unit slope there.
  """
  grid = x_map.grid
  dx = grid.dx
  residual, resolved = _TerminalResidual(log_h_T, x_map, nu_T, muT, floor)
  if not np.any(resolved):
    raise errors.DomainTooSmallError(
        'the terminal marginal and the reference law do not overlap on the grid'
    )
  weights = nu_T.density * resolved
  residual[resolved] -= (np.sum(weights * residual) / np.sum(weights))

  inside = np.flatnonzero(resolved)
  first, last = inside[0], inside[-1] + 1
  if last - first < 3:
    return np.where(resolved, residual, 0.0)

  slope = np.gradient(x_map.values, dx, edge_order=2)[first:last]
  log_mu = np.log(np.maximum(muT.density, floor))
  score = np.interp(x_map.values[first:last], grid.nodes,
                    np.gradient(log_mu, dx, edge_order=2))
  span = resolved[first:last]
  diffusion = np.where(span, 1.0 / (beta * np.maximum(slope, 1e-300)), 0.0)
  advection = np.where(span, score / beta, 0.0)

  lower = -diffusion / (dx * dx) + advection / (2 * dx)
  upper = -diffusion / (dx * dx) - advection / (2 * dx)
  diagonal = 1.0 + 2.0 * diffusion / (dx * dx)
  # End rows drop the curvature term and use one-sided differences.
  diagonal[0] = 1.0 + advection[0] / dx
  upper[0] = -advection[0] / dx
  diagonal[-1] = 1.0 - advection[-1] / dx
  lower[-1] = advection[-1] / dx

  size = last - first
  banded = np.zeros((3, size))
  banded[0, 1:] = upper[:-1]
  banded[1] = diagonal
  banded[2, :-1] = lower[1:]
  solved = linalg.solve_banded((1, 1), banded, residual[first:last])

  direction = np.empty(grid.n)
  direction[first:last] = solved
  nodes = grid.nodes
  left_slope = (solved[1] - solved[0]) / dx
  right_slope = (solved[-1] - solved[-2]) / dx
  direction[:first] = solved[0] + left_slope * (nodes[:first] - nodes[first])
  direction[last:] = (solved[-1] + right_slope *
                      (nodes[last:] - nodes[last - 1]))
  return direction


def _DensityRatioTarget(log_h_T, x_map, nu_T, muT, floor):
  """log d(Y(T, .)_# mu_T)/d nu_T, kept at log h(T, .) where unresolved."""
  y_map = convex_tools.InvertMonotone(x_map, quiet=True)
  pulled = grid_measures.PushforwardMonotone(muT, y_map)
  target = grid_measures.LogDensityRatio(pulled, nu_T, floor)
  resolved = _Resolved(nu_T.density) & _Resolved(pulled.density)
  return np.where(resolved, target, log_h_T)


def _MapsIncrease(log_h_T, config):
  """Whether X(t, .) is increasing at every output time."""
  horizon = config.horizon_T
  for t in config.output_times[::-1]:
    row = log_h_T if t == horizon else _PropagateLog(log_h_T, config,
                                                        horizon - t)
    try:
      transport_maps.XMap(row, config.grid, config.beta)
    except errors.NonMonotoneMapError:
      return False
  return True


def _MonotoneStep(log_h_T, direction, step, config):
  """The largest step <= `step` along `direction` keeping the stretching maps
  increasing at every output time."""
  for _ in range(_MAX_STEP_HALVINGS):
    candidate = log_h_T + step * direction
    if _MapsIncrease(candidate, config):
      return candidate, step
    step *= 0.5
  _logger.warning('no step along the terminal update keeps the stretching '
                  'maps increasing; the iterate is kept')
  return log_h_T, 0.0


class _Damping(object):
  """Halves the step when the boundary defect grows, regrows it otherwise."""

  def __init__(self, initial):
    self.ceiling = initial
    self.value = initial
    self._previous = math.inf

  def Update(self, defect):
    if defect > self._previous:
      self.value = max(0.5 * self.value, _MIN_DAMPING)
      _logger.warning('boundary defect grew to %.3g; damping reduced to %g',
                      defect, self.value)
    elif self.value < self.ceiling:
      self.value = min(self.ceiling, 1.5 * self.value)
    self._previous = defect
    return self.value


def _CheckInputs(mu0, muT, config):
  if mu0.grid != config.grid or muT.grid != config.grid:
    raise errors.GridMismatchError(
        'the marginals must live on the solver grid {!r}'.format(config.grid))


def _Converged(w2_0, w2_T, config):
  return max(w2_0, w2_T) < config.tol_marginal


def _LogSweep(record, damping):
  _logger.debug('sweep %d: w2_t0=%.3g w2_T=%.3g dlogh=%.3g damping=%g '
                'sigma_min=%.3g', record.iter, record.w2_t0, record.w2_T,
                record.dlogh_sup, damping, record.sigma_min)


def _ReportOutcome(config, trace, converged):
  last = trace[-1]
  if converged:
    _logger.info('%s solve converged after %d sweeps (w2_t0=%.3g, w2_T=%.3g)',
                 config.mode, last.iter, last.w2_t0, last.w2_T)
  else:
    _logger.warning(
        '%s solve did not converge after %d sweeps (w2_t0=%.3g, w2_T=%.3g, '
        'tolerance %g)', config.mode, last.iter, last.w2_t0, last.w2_T,
        config.tol_marginal)


def _CheckReach(nu0, config):
  lost = heat_kernel.BoundaryMassLoss(nu0, config.horizon_T)
  if lost > heat_kernel.MASS_LOSS_WARNING:
    _logger.warning(
        'the reference law reaches the grid boundary (%.3g of its mass would '
        'leave [%g, %g] by T); widen the grid', lost, config.grid.x_min,
        config.grid.x_max)


def Assemble(mu0, muT, config, log_h_T, nu0, trace, converged,
             terminal_map=None):
  """Build the solution fields at every output time from h(T, .) and nu_0.

  terminal_map is the stretching map at T, needed in the Bass limit only. In
  the sbb mode the smallest volatility over the output times is folded into
  the last trace record, and a solution whose volatility is not positive
  everywhere is returned with converged=False and repaired maps.
  """
  potential = heat_kernel.LogHeatPotential.Build(
      log_h_T, config.grid, config.output_times,
      linear_tails=config.mode == 'sbb')
  fields = []
  for log_h_t, t in zip(potential.log_h, potential.times):
    fields.append(_FieldsAt(config, nu0, log_h_t, t, terminal_map, repair=True))
  if config.mode == 'sbb':
    curvature = min(
        float(np.min(transport_maps.LogDerivatives(row, config.grid)[1]))
        for row in potential.log_h)
    sigma_min = 1.0 + curvature / config.beta
    if trace:
      trace = list(trace)
      trace[-1] = trace[-1]._replace(
          sigma_min=min(trace[-1].sigma_min, sigma_min))
    if not sigma_min > 0:
      _logger.warning(
          'the volatility is not positive at every output time '
          '(sigma_min=%.3g); the solution is marked as not converged',
          sigma_min)
      converged = False
  return SBBSolution(config, mu0, muT, potential, nu0, fields, trace, converged)


def _SolveSbb(mu0, muT, config):
  grid, beta, horizon = config.grid, config.beta, config.horizon_T
  floor = config.density_floor
  nu0 = _InitialNu0(mu0, config)
  log_h_T = np.zeros(grid.n)
  log_h_0 = np.zeros(grid.n)
  damping = _Damping(config.damping)
  trace = []
  converged = False
  for sweep in range(1, config.max_iters + 1):
    nu_T = heat_kernel.PropagateForward(nu0, horizon, quiet=True)
    x_0 = transport_maps.XMap(log_h_0, grid, beta)
    x_T = transport_maps.XMap(log_h_T, grid, beta)
    w2_0 = _BoundaryDefect(nu0, log_h_0, x_0, mu0, floor)
    w2_T = _BoundaryDefect(nu_T, log_h_T, x_T, muT, floor)
    sigma_min = _SigmaMin(x_0, x_T)
    if _Converged(w2_0, w2_T, config):
      trace.append(TraceRecord(sweep, w2_0, w2_T, 0.0, sigma_min))
      converged = True
      break

    step = damping.Update(max(w2_0, w2_T))
    if config.terminal_update == 'newton':
      direction = _NewtonDirection(log_h_T, x_T, nu_T, muT, beta, floor)
    else:
      direction = _DensityRatioTarget(log_h_T, x_T, nu_T, muT, floor) - log_h_T
    updated, _ = _MonotoneStep(log_h_T, direction, step, config)
    updated = _Gauge(updated, _Resolved(nu_T.density))
    change = float(np.max(np.abs(updated - log_h_T)))
    log_h_T = updated

    log_h_0 = _PropagateLog(log_h_T, config, horizon)
    x_0 = transport_maps.XMap(log_h_0, grid, beta)
    nu0 = transport_maps.MeasureFromLog(
        grid,
        transport_maps.PullbackLogDensity(mu0, x_0, floor) - log_h_0)

    record = TraceRecord(sweep, w2_0, w2_T, change, sigma_min)
    trace.append(record)
    _LogSweep(record, step)
    if change < STAGNATION_TOLERANCE:
      break
  _ReportOutcome(config, trace, converged)
  _CheckReach(nu0, config)
  return Assemble(mu0, muT, config, log_h_T, nu0, trace, converged)


def SolveSchrodinger(mu0, muT, config):
  """The classical Schrodinger bridge by Sinkhorn sweeps on the heat kernel.

  The maps are the identity and the bridge marginals are h(t, .) nu_t. Each
  sweep sets h(T, .) proportional to mu_T / nu_T and nu_0 proportional to
  mu_0 / h(0, .).

  Arguments:
    mu0, muT: (Measure1D) The marginals, on config.grid.
    config: (SolverConfig) The configuration; its mode is ignored.

  Returns:
    An SBBSolution in the schrodinger_limit mode.
  """
  if config.mode != 'schrodinger_limit':
    config = config.Replace(mode='schrodinger_limit')
  _CheckInputs(mu0, muT, config)
  grid, horizon = config.grid, config.horizon_T
  floor = config.density_floor
  log_mu0 = np.log(np.maximum(mu0.density, floor))
  nu0 = _InitialNu0(mu0, config)
  log_h_T = np.zeros(grid.n)
  log_h_0 = np.zeros(grid.n)
  trace = []
  converged = False
  for sweep in range(1, config.max_iters + 1):
    nu_T = heat_kernel.PropagateForward(nu0, horizon, quiet=True)
    w2_0 = _BoundaryDefect(nu0, log_h_0, None, mu0, floor)
    w2_T = _BoundaryDefect(nu_T, log_h_T, None, muT, floor)
    if _Converged(w2_0, w2_T, config):
      trace.append(TraceRecord(sweep, w2_0, w2_T, 0.0, 1.0))
      converged = True
      break

    target = grid_measures.LogDensityRatio(muT, nu_T, floor)
    updated = (1 - config.damping) * log_h_T + config.damping * target
    updated = _Gauge(updated, _Resolved(nu_T.density) & _Resolved(muT.density))
    change = float(np.max(np.abs(updated - log_h_T)))
    log_h_T = updated
    log_h_0 = heat_kernel.PropagateBackwardLog(log_h_T, grid, horizon)
    nu0 = transport_maps.MeasureFromLog(grid, log_mu0 - log_h_0)

    record = TraceRecord(sweep, w2_0, w2_T, change, 1.0)
    trace.append(record)
    _LogSweep(record, config.damping)
    if change < STAGNATION_TOLERANCE:
      break
  _ReportOutcome(config, trace, converged)
  return Assemble(mu0, muT, config, log_h_T, nu0, trace, converged)


def _Rearrangement(nu_T, muT):
  """The increasing map carrying nu_T to mu_T, extended with unit slope."""
  grid = nu_T.grid
  cdf = nu_T.Cdf()
  inside = (cdf > _QUANTILE_CLIP) & (cdf < 1 - _QUANTILE_CLIP)
  if np.sum(inside) < 2:
    raise errors.DomainTooSmallError('the reference law is not resolved')
  values = np.empty(grid.n)
  values[inside] = grid_measures.QuantileFunction(muT, cdf[inside])
  first, last = np.flatnonzero(inside)[[0, -1]]
  y = grid.nodes
  values[:first] = values[first] + (y[:first] - y[first])
  values[last + 1:] = values[last] + (y[last + 1:] - y[last])
  return convex_tools.MonotoneMap(grid, convex_tools.IsotonicRepair(values))


def SolveBass(mu0, muT, config):
  """The Bass martingale: X_t = X(t, Y_t) with Y a Brownian motion.

  Each sweep fits X(T, .) as the monotone rearrangement of nu_T onto mu_T,
  obtains X(0, .) by heat smoothing of X(T, .), and sets nu_0 to the law whose
  image under X(0, .) is mu_0.

  Raises:
    ConvexOrderError: if mu0 and muT are not in convex order.
  """
  if config.mode != 'bass_limit':
    config = config.Replace(mode='bass_limit')
  _CheckInputs(mu0, muT, config)
  grid_measures.CheckConvexOrder(mu0, muT)
  grid, horizon = config.grid, config.horizon_T
  floor = config.density_floor
  nu0 = _InitialNu0(mu0, config)
  trace = []
  converged = False
  for sweep in range(1, config.max_iters + 1):
    nu_T = heat_kernel.PropagateForward(nu0, horizon, quiet=True)
    x_T = _Rearrangement(nu_T, muT)
    x_0 = _BassMapAt(x_T, horizon, 0.0)
    w2_0 = grid_measures.Wasserstein2(
        grid_measures.PushforwardMonotone(nu0, x_0), mu0)
    w2_T = grid_measures.Wasserstein2(
        grid_measures.PushforwardMonotone(nu_T, x_T), muT)
    sigma_min = _SigmaMin(x_0, x_T)
    if _Converged(w2_0, w2_T, config):
      trace.append(TraceRecord(sweep, w2_0, w2_T, 0.0, sigma_min))
      converged = True
      break

    target = transport_maps.MeasureFromLog(
        grid, transport_maps.PullbackLogDensity(mu0, x_0, floor))
    density = ((1 - config.damping) * nu0.density +
               config.damping * target.density)
    updated = grid_measures.Measure1D(grid, density, normalize=True)
    resolved = _Resolved(updated.density) & _Resolved(nu0.density)
    change = float(
        np.max(
            np.abs(
                np.log(updated.density[resolved]) -
                np.log(nu0.density[resolved]))))
    nu0 = updated

    record = TraceRecord(sweep, w2_0, w2_T, change, sigma_min)
    trace.append(record)
    _LogSweep(record, config.damping)
    if change < STAGNATION_TOLERANCE:
      break
  _ReportOutcome(config, trace, converged)
  nu_T = heat_kernel.PropagateForward(nu0, horizon, quiet=True)
  return Assemble(mu0, muT, config, np.zeros(grid.n), nu0, trace, converged,
                   _Rearrangement(nu_T, muT))


def Solve(mu0, muT, config):
  """Solve the Schrodinger-Bass bridge between mu0 and muT.

  Arguments:
    mu0: (Measure1D) The initial marginal.
    muT: (Measure1D) The terminal marginal.
    config: (SolverConfig) The configuration; config.mode selects the
      Schrodinger-Bass iteration or one of its two limits.

  Returns:
    An SBBSolution. A solve that exhausts its sweep budget, stalls, or ends
    with a volatility that is not positive somewhere is returned with
    converged=False and its trace.

  Raises:
    GridMismatchError: if a marginal is not on config.grid.
    ConvexOrderError: in the Bass limit, for marginals not in convex order.
  """
  if config.mode == 'schrodinger_limit':
    return SolveSchrodinger(mu0, muT, config)
  if config.mode == 'bass_limit':
    return SolveBass(mu0, muT, config)
  _CheckInputs(mu0, muT, config)
  return _SolveSbb(mu0, muT, config)


def StretchingPotential(sol, t):
  """The convex potential G(t, .) whose derivative is the stretching map.

  In the sbb mode G = y^2/2 + (1/beta) log h. In the Bass limit G integrates
  the stored map, and in the Schrodinger limit G = y^2/2.
  """
  k = sol.TimeIndex(t)
  grid = sol.grid
  if sol.config.mode == 'sbb':
    return transport_maps.StretchingPotential(sol.potential.log_h[k], grid,
                                              sol.config.beta)
  if sol.config.mode == 'bass_limit':
    values = integrate.cumulative_trapezoid(
        sol.fields[k].x_map.values, dx=grid.dx, initial=0.0)
    return convex_tools.ConvexPotential(grid, values)
  return convex_tools.ConvexPotential(grid, 0.5 * grid.nodes**2)


def _DualPotential(sol, k):
  """The value function v(t_k, .) on the x grid."""
  if sol.config.mode == 'schrodinger_limit':
    return np.array(sol.potential.log_h[k])
  grid, beta = sol.grid, sol.config.beta
  stretching = StretchingPotential(sol, sol.times[k])
  u = convex_tools.SmoothConjugate(stretching, grid, quiet=True)
  return beta * (0.5 * grid.nodes**2 - u)


def _TerminalMap(sol):
  grid = sol.grid
  if sol.config.mode == 'sbb':
    return transport_maps.XMap(sol.potential.log_h[-1], grid, sol.config.beta)
  if sol.config.mode == 'bass_limit':
    return sol.fields[-1].x_map
  return convex_tools.MonotoneMap.Identity(grid)


def MaResidual(sol):
  """The Monge-Ampere residual of the terminal condition.

  At the terminal time G' pushes h nu_T forward to mu_T, so

    log G''(y) - log nu_T(y) + log mu_T(G'(y)) - log h(T, y)

  is constant. The constant is fixed by zero median over the region.

  Arguments:
    sol: (SBBSolution) The solution. The stretching map is rebuilt from the
      stored potential, so a modified potential shows up in the residual.

  Returns:
    A pair (residual, sup): the residual at every node, zero outside the
    central RESIDUAL_MASS region of h(T, .) nu_T, and its sup norm there.
  """
  log_h_T = np.array(sol.potential.log_h[-1])
  x_map = _TerminalMap(sol)
  nu_T = sol.fields[-1].nu
  floor = sol.config.density_floor
  region = grid_measures.CentralRegion(_Stretched(nu_T, log_h_T, floor),
                                       RESIDUAL_MASS)
  residual, resolved = _TerminalResidual(log_h_T, x_map, nu_T, sol.muT, floor)
  region &= resolved
  if not np.any(region):
    raise errors.DomainTooSmallError('no resolved nodes in the residual region')
  residual = np.where(region, residual - np.median(residual[region]), 0.0)
  return residual, float(np.max(np.abs(residual)))


def HjbResidual(sol, t):
  """Sup of the HJB residual of v = beta (x^2/2 - u) at a stored time.

  The residual is dv/dt + (dv/dx)^2 / 2 + (d2v/dx2) / (2 (1 - d2v/dx2 / beta)),
  with beta = infinity in the Schrodinger limit. The time derivative is taken
  by finite differences across the stored times, so its accuracy is limited
  by their spacing.

  Raises:
    TimeNotStoredError: if t is not stored.
    InsufficientTimesError: if fewer than two times are stored.
  """
  times = sol.times
  if times.size < 2:
    raise errors.InsufficientTimesError(
        'the HJB residual needs a neighbouring stored time')
  k = sol.TimeIndex(t)
  grid = sol.grid
  values = np.vstack([_DualPotential(sol, j) for j in range(times.size)])
  edge_order = 2 if times.size >= 3 else 1
  v_t = np.gradient(values, times, axis=0, edge_order=edge_order)[k]
  v_x = np.gradient(values[k], grid.dx, edge_order=2)
  v_xx = np.gradient(v_x, grid.dx, edge_order=2)
  beta = sol.config.effective_beta
  if math.isinf(beta):
    curvature = v_xx
  else:
    curvature = v_xx / (1.0 - v_xx / beta)
  residual = v_t + 0.5 * v_x**2 + 0.5 * curvature
  region = grid_measures.CentralRegion(sol.fields[k].marginal, RESIDUAL_MASS)
  return float(np.max(np.abs(residual[region])))


def FieldPrimalCost(sol, n_times=65):
  """The cost E int (alpha^2 + beta (sigma - 1)^2) / 2 dt by field quadrature.

  The fields are recomputed on n_times equispaced times, integrated against
  mu_t in space and by Simpson's rule in time.
  """
  if n_times < 3:
    raise errors.OutOfRangeError(
        'n_times must be at least 3, got {!r}'.format(n_times))
  times = np.linspace(0.0, sol.config.horizon_T, int(n_times))
  beta = sol.config.effective_beta
  rates = []
  for t in times:
    fields = sol.FieldsAt(t)
    rate = fields.coefficients.CostRate(beta)
    rates.append(fields.marginal.Expectation(rate))
  return float(integrate.simpson(rates, x=times))


def DualValue(sol, mu0=None, muT=None):
  """E_muT v(T, .) - E_mu0 v(0, .) for the value function of the solution."""
  if mu0 is None:
    mu0 = sol.mu0
  if muT is None:
    muT = sol.muT
  return float(
      muT.Expectation(_DualPotential(sol, sol.times.size - 1)) -
      mu0.Expectation(_DualPotential(sol, 0)))


def PrimalDualGap(sol, mu0=None, muT=None, primal=None):
  """Primal cost minus dual value; non-negative up to discretization error.

  Arguments:
    sol: (SBBSolution) The solution.
    mu0, muT: (Measure1D) Marginals for the dual value. Default to the
      solution's own.
    primal: (float) A primal cost, e.g. a Monte-Carlo estimate. Defaults to
      FieldPrimalCost(sol).
  """
  if primal is None:
    primal = FieldPrimalCost(sol)
  return float(primal - DualValue(sol, mu0, muT))


def BoundaryDefects(sol):
  """W2 distances of the reconstructed marginals at 0 and T to mu_0 and mu_T."""
  return (grid_measures.Wasserstein2(sol.marginals[0], sol.mu0),
          grid_measures.Wasserstein2(sol.marginals[-1], sol.muT))


def MapDeviation(sol, mass=MAP_MASS):
  """sup |X(t, y) - y| over the output times and the preimage of the central
  `mass` region of mu_t."""
  deviation = 0.0
  for fields in sol.fields:
    region = grid_measures.CentralRegion(fields.stretched, mass)
    deviation = max(deviation, fields.x_map.Deviation(region))
  return deviation


class GaussianSchrodingerBridge(object):
  """The Schrodinger bridge between N(m0, v0) and N(m1, v1) in closed form.

  The static coupling is Gaussian with covariance
  c = (sqrt(T^2 + 4 v0 v1) - T) / 2, and each bridge marginal is the law of
  (1 - s) X_0 + s X_T plus a Brownian bridge, s = t / T.
  """

  def __init__(self, m0, v0, m1, v1, horizon=1.0):
    self.m0, self.m1 = float(m0), float(m1)
    self.v0 = _Positive('v0', v0)
    self.v1 = _Positive('v1', v1)
    self.horizon = _Positive('horizon', horizon)

  @property
  def covariance(self):
    T = self.horizon
    return 0.5 * (math.sqrt(T * T + 4.0 * self.v0 * self.v1) - T)

  def MarginalMoments(self, t):
    """(mean, variance) of the bridge at time t."""
    s = t / self.horizon
    mean = (1 - s) * self.m0 + s * self.m1
    variance = ((1 - s)**2 * self.v0 + s * s * self.v1 +
                2 * s * (1 - s) * self.covariance + s * (1 - s) * self.horizon)
    return mean, variance

  def Marginal(self, grid, t):
    return grid_measures.MakeGaussian(grid, *self.MarginalMoments(t))

  def DriftCost(self):
    """E int alpha^2 / 2 dt, the relative entropy to Brownian motion."""
    a, b, c, T = self.v0, self.v1, self.covariance, self.horizon
    shift = self.m1 - self.m0
    return (-0.5 - 0.5 * math.log((a * b - c * c) / (a * T)) +
            (a + b - 2 * c + shift * shift) / (2 * T))


GaussianBass = collections.namedtuple('GaussianBass',
                                      ['slope', 'nu0_variance'])


def GaussianBassMap(v0, vT, horizon=1.0):
  """The Bass martingale between centred Gaussians of variances v0 <= vT.

  The stretching map is y -> slope * y at every time and nu_0 = N(0, v0 /
  slope^2): the two boundary conditions give slope^2 (w + T) = vT and
  slope^2 w = v0.

  Raises:
    ConvexOrderError: if vT < v0.
  """
  v0 = _Positive('v0', v0)
  vT = _Positive('vT', vT)
  horizon = _Positive('horizon', horizon)
  if vT <= v0:
    raise errors.ConvexOrderError(
        'N(0, {!r}) does not precede N(0, {!r}) strictly in convex '
        'order'.format(v0, vT))
  slope = math.sqrt((vT - v0) / horizon)
  return GaussianBass(slope, v0 / (slope * slope))
