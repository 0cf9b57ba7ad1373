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
"""Monte-Carlo simulation of the optimal process of a solution.

Two schemes are available. The direct scheme runs Euler-Maruyama on

  dX = alpha(t, X) dt + sigma(t, X) dW

with the drift and volatility fields of the solution. The stretched scheme runs
the Schrodinger bridge dY = d/dy log h(t, Y) dt + dW and reports
X_t = X(t, Y_t). Both start from mu_0 through the same uniforms, so they can be
compared path by path.

Paths are simulated in fixed blocks, each with its own Philox stream spawned
from the seed, so an ensemble does not depend on the number of workers.
"""

import collections
import concurrent.futures
import logging
import math

import numpy as np

from sbbridge.sbblib import errors
from sbbridge.sbblib import grid_measures

SCHEMES = ('direct', 'stretched')

# Paths per random stream.
BLOCK_SIZE = 4096

MIN_PATHS = 10000
MIN_STEPS = 100

# Largest fraction of paths allowed to reach the clamp before a run fails.
ESCAPE_LIMIT = 1e-3

# Default clamp margin as a fraction of the grid width.
DEFAULT_CLAMP_FRACTION = 0.02

_UNIFORM_EPS = 1e-12

_logger = logging.getLogger(__name__)


class SimConfig(object):
  """Parameters of a simulation.

  Arguments:
    n_paths: (int) Number of paths, at least MIN_PATHS.
    n_steps: (int) Number of uniform Euler steps over [0, T], at least
      MIN_STEPS.
    seed: (int) Seed of the random streams.
    boundary_clamp: (float) Distance from the grid ends at which paths are
      reflected. Defaults to DEFAULT_CLAMP_FRACTION of the grid width.
    record_times: (sequence) Times at which states are kept; each is moved to
      the nearest step. Defaults to the output times of the solution.
    drift_scale: (float) Multiplier of the drift in the direct scheme.
    unit_volatility: (bool) Replace sigma by 1 in the direct scheme.
    workers: (int) Threads simulating blocks concurrently.
  """

  def __init__(self,
               n_paths=100000,
               n_steps=200,
               seed=0,
               boundary_clamp=None,
               record_times=None,
               drift_scale=1.0,
               unit_volatility=False,
               workers=1):
    if int(n_paths) != n_paths or n_paths < MIN_PATHS:
      raise errors.OutOfRangeError(
          'n_paths must be an integer >= {}, got {!r}'.format(
              MIN_PATHS, n_paths))
    if int(n_steps) != n_steps or n_steps < MIN_STEPS:
      raise errors.OutOfRangeError(
          'n_steps must be an integer >= {}, got {!r}'.format(
              MIN_STEPS, n_steps))
    if int(seed) != seed or seed < 0:
      raise errors.OutOfRangeError(
          'seed must be a non-negative integer, got {!r}'.format(seed))
    if boundary_clamp is not None and not boundary_clamp >= 0:
      raise errors.OutOfRangeError(
          'boundary_clamp must be non-negative, got {!r}'.format(
              boundary_clamp))
    if int(workers) != workers or workers < 1:
      raise errors.OutOfRangeError(
          'workers must be a positive integer, got {!r}'.format(workers))
    self.n_paths = int(n_paths)
    self.n_steps = int(n_steps)
    self.seed = int(seed)
    self.boundary_clamp = boundary_clamp
    self.record_times = record_times
    self.drift_scale = float(drift_scale)
    self.unit_volatility = bool(unit_volatility)
    self.workers = int(workers)

  def AsDict(self):
    return {
        'n_paths': self.n_paths,
        'n_steps': self.n_steps,
        'seed': self.seed,
        'boundary_clamp': self.boundary_clamp,
    }


class PathEnsemble(object):
  """Simulated states at the recorded times.

  Arguments:
    times: (array) Recorded times, starting at 0.
    states: (array) X, one row per path and one column per time.
    seed: (int) The seed that produced the ensemble.
    scheme: (str) 'direct' or 'stretched'.
    latent: (array) Y for a stretched ensemble, else None.
    running_cost: (array) Per-path integral of the cost rate for a direct
      ensemble, else None.
    escaped: (int) Number of paths that reached the clamp.
  """

  def __init__(self, times, states, seed, scheme, latent=None,
               running_cost=None, escaped=0):
    times = np.array(times, dtype=float)
    states = np.array(states, dtype=float)
    if times.ndim != 1 or times[0] != 0 or np.any(np.diff(times) <= 0):
      raise errors.OutOfRangeError(
          'ensemble times must start at 0 and increase strictly')
    if states.ndim != 2 or states.shape[1] != times.size:
      raise errors.GridMismatchError('one column of states per recorded time')
    if not np.all(np.isfinite(states)):
      raise errors.OutOfRangeError('simulated states must be finite')
    if scheme not in SCHEMES:
      raise errors.OutOfRangeError('unknown scheme {!r}'.format(scheme))
    for array in (times, states):
      array.setflags(write=False)
    self.times = times
    self.states = states
    self.seed = seed
    self.scheme = scheme
    self.latent = latent
    self.running_cost = running_cost
    self.escaped = int(escaped)

  @property
  def n_paths(self):
    return self.states.shape[0]

  def TimeIndex(self, t):
    tol = 1e-9 * max(1.0, self.times[-1])
    hits = np.flatnonzero(np.abs(self.times - t) <= tol)
    if not hits.size:
      raise errors.TimeNotStoredError(
          'time {!r} is not recorded; recorded times are {}'.format(
              t, list(self.times)))
    return int(hits[0])

  def At(self, t):
    """X at a recorded time, one value per path."""
    return self.states[:, self.TimeIndex(t)]


def _RecordSteps(sim, times, horizon):
  """Step indices of the recorded times, always including 0 and n_steps."""
  requested = times if sim.record_times is None else sim.record_times
  requested = np.asarray(requested, dtype=float)
  if np.any(requested < 0) or np.any(requested > horizon * (1 + 1e-12)):
    raise errors.OutOfRangeError(
        'record_times must lie in [0, {!r}]'.format(horizon))
  steps = np.rint(requested / horizon * sim.n_steps).astype(int)
  return np.unique(np.concatenate([[0], steps, [sim.n_steps]]))


def _TimeInterpolated(rows, stored_times, t):
  """Linear interpolation in time between stored rows."""
  k = int(np.searchsorted(stored_times, t, side='right')) - 1
  k = min(max(k, 0), stored_times.size - 2)
  weight = (t - stored_times[k]) / (stored_times[k + 1] - stored_times[k])
  weight = min(max(weight, 0.0), 1.0)
  return (1 - weight) * rows[k] + weight * rows[k + 1]


def _Clamp(sol, sim):
  grid = sol.grid
  margin = sim.boundary_clamp
  if margin is None:
    margin = DEFAULT_CLAMP_FRACTION * (grid.x_max - grid.x_min)
  low, high = grid.x_min + margin, grid.x_max - margin
  if not low < high:
    raise errors.OutOfRangeError(
        'boundary_clamp {!r} leaves no room on the grid'.format(margin))
  return low, high


def _Reflect(x, low, high, touched):
  touched |= (x < low) | (x > high)
  x = np.where(x < low, 2 * low - x, x)
  x = np.where(x > high, 2 * high - x, x)
  return np.clip(x, low, high)


def _InitialStates(sol, uniforms):
  return grid_measures.QuantileFunction(sol.mu0, uniforms)


def _Blocks(sim):
  n_blocks = -(-sim.n_paths // BLOCK_SIZE)
  streams = np.random.SeedSequence(sim.seed).spawn(n_blocks)
  sizes = [BLOCK_SIZE] * (n_blocks - 1)
  sizes.append(sim.n_paths - BLOCK_SIZE * (n_blocks - 1))
  return list(zip(streams, sizes))


def _RunBlocks(simulate_block, sim):
  blocks = _Blocks(sim)
  if sim.workers == 1:
    results = [simulate_block(stream, size) for stream, size in blocks]
  else:
    with concurrent.futures.ThreadPoolExecutor(sim.workers) as executor:
      futures = [
          executor.submit(simulate_block, stream, size)
          for stream, size in blocks
      ]
      results = [future.result() for future in futures]
  return [np.concatenate(parts) for parts in zip(*results)]


def _CheckEscapes(escaped, n_paths):
  if escaped > ESCAPE_LIMIT * n_paths:
    raise errors.PathEscapeError(
        '{} of {} paths reached the clamped domain boundary'.format(
            escaped, n_paths),
        count=escaped)
  if escaped:
    _logger.warning('%d of %d paths were reflected at the clamped boundary',
                    escaped, n_paths)


def SimulateDirect(sol, sim):
  """Euler-Maruyama paths of dX = alpha dt + sigma dW started from mu_0.

  The fields are interpolated linearly in x between grid nodes and in t
  between output times.

  Returns:
    A PathEnsemble with scheme 'direct' and per-path running costs.

  Raises:
    PathEscapeError: if more than ESCAPE_LIMIT of the paths reach the clamp.
  """
  horizon = sol.config.horizon_T
  dt = horizon / sim.n_steps
  nodes = sol.grid.nodes
  stored = sol.times
  alpha_rows = np.vstack([c.alpha for c in sol.coefficients])
  sigma_rows = np.vstack([c.sigma for c in sol.coefficients])
  beta = sol.config.effective_beta
  record = _RecordSteps(sim, stored, horizon)
  low, high = _Clamp(sol, sim)

  def _Fields(step, x):
    t = step * dt
    alpha = np.interp(x, nodes, _TimeInterpolated(alpha_rows, stored, t))
    sigma = np.interp(x, nodes, _TimeInterpolated(sigma_rows, stored, t))
    return alpha, sigma

  def _Rate(alpha, sigma):
    rate = 0.5 * alpha * alpha
    if math.isfinite(beta):
      rate = rate + 0.5 * beta * (sigma - 1.0)**2
    return rate

  def _SimulateBlock(stream, size):
    rng = np.random.Generator(np.random.Philox(stream))
    uniforms = rng.uniform(_UNIFORM_EPS, 1 - _UNIFORM_EPS, size)
    x = _InitialStates(sol, uniforms)
    touched = np.zeros(size, dtype=bool)
    states = np.empty((size, record.size))
    states[:, 0] = x
    column = 1
    alpha, sigma = _Fields(0, x)
    rate = _Rate(alpha, sigma)
    cost = 0.5 * dt * rate
    for step in range(sim.n_steps):
      noise = rng.standard_normal(size)
      volatility = 1.0 if sim.unit_volatility else sigma
      x = (x + sim.drift_scale * alpha * dt +
           volatility * math.sqrt(dt) * noise)
      x = _Reflect(x, low, high, touched)
      alpha, sigma = _Fields(step + 1, x)
      rate = _Rate(alpha, sigma)
      cost += (dt if step + 1 < sim.n_steps else 0.5 * dt) * rate
      if column < record.size and record[column] == step + 1:
        states[:, column] = x
        column += 1
    return states, cost, touched

  states, cost, touched = _RunBlocks(_SimulateBlock, sim)
  escaped = int(np.sum(touched))
  _CheckEscapes(escaped, sim.n_paths)
  return PathEnsemble(record * dt, states, sim.seed, 'direct',
                      running_cost=cost, escaped=escaped)


def _LogPotentialRows(sol, times):
  return [sol.LogPotentialAt(t) for t in times]


def _MapsAt(sol, times):
  maps = []
  for t in times:
    try:
      maps.append(sol.At(t).x_map)
    except errors.TimeNotStoredError:
      maps.append(sol.FieldsAt(t).x_map)
  return maps


def SimulateStretched(sol, sim):
  """Paths of the Schrodinger bridge Y mapped through the stretching maps.

  Y_0 = Y(0, X_0) with X_0 drawn from mu_0 by the same uniforms as the direct
  scheme. Y follows dY = d/dy log h(t, Y) dt + dW, and the ensemble records
  X_t = X(t, Y_t).

  Returns:
    A PathEnsemble with scheme 'stretched' whose latent attribute holds Y.
  """
  horizon = sol.config.horizon_T
  dt = horizon / sim.n_steps
  grid = sol.grid
  nodes = grid.nodes
  record = _RecordSteps(sim, sol.times, horizon)
  low, high = _Clamp(sol, sim)
  if sol.config.mode == 'bass_limit':
    drift_rows = np.zeros((sim.n_steps + 1, grid.n))
  else:
    drift_rows = [
        np.gradient(row, grid.dx, edge_order=2)
        for row in _LogPotentialRows(sol, np.arange(sim.n_steps + 1) * dt)
    ]
  initial_map = sol.fields[0].y_map
  maps = _MapsAt(sol, record * dt)

  def _SimulateBlock(stream, size):
    rng = np.random.Generator(np.random.Philox(stream))
    uniforms = rng.uniform(_UNIFORM_EPS, 1 - _UNIFORM_EPS, size)
    y = initial_map.Evaluate(_InitialStates(sol, uniforms))
    touched = np.zeros(size, dtype=bool)
    latent = np.empty((size, record.size))
    latent[:, 0] = y
    column = 1
    for step in range(sim.n_steps):
      noise = rng.standard_normal(size)
      y = y + np.interp(y, nodes, drift_rows[step]) * dt + math.sqrt(dt) * noise
      y = _Reflect(y, low, high, touched)
      if column < record.size and record[column] == step + 1:
        latent[:, column] = y
        column += 1
    return latent, touched

  latent, touched = _RunBlocks(_SimulateBlock, sim)
  escaped = int(np.sum(touched))
  _CheckEscapes(escaped, sim.n_paths)
  states = np.column_stack(
      [m.Evaluate(latent[:, j]) for j, m in enumerate(maps)])
  return PathEnsemble(record * dt, states, sim.seed, 'stretched',
                      latent=latent, escaped=escaped)


CostEstimate = collections.namedtuple('CostEstimate',
                                      ['mean', 'standard_error'])


def PrimalCost(paths, sol):
  """Monte-Carlo estimate of E int (alpha^2 + beta (sigma - 1)^2) / 2 dt.

  Raises:
    SchemeMismatchError: for an ensemble that is not from SimulateDirect.
  """
  if paths.scheme != 'direct' or paths.running_cost is None:
    raise errors.SchemeMismatchError(
        'the primal cost needs a direct ensemble, got {}'.format(paths.scheme))
  cost = np.asarray(paths.running_cost)
  return CostEstimate(
      float(np.mean(cost)), float(np.std(cost, ddof=1) / math.sqrt(cost.size)))


MartingaleReport = collections.namedtuple(
    'MartingaleReport', ['defect', 'standard_error', 'z_score'])
MartingaleReport.__doc__ = """Binned test of the martingale property of alpha.

defect: the largest |E[M_t - M_s | X_s in bin]| over bins and time pairs.
standard_error: the standard error of that bin mean.
z_score: the largest, over time pairs, root-mean-square of the per-bin
  z-statistics. Values below 3 are within Monte-Carlo noise.
"""


def _DriftAlongPaths(paths, sol):
  rows = np.vstack([c.alpha for c in sol.coefficients])
  nodes = sol.grid.nodes
  return np.column_stack([
      np.interp(paths.states[:, j], nodes,
                _TimeInterpolated(rows, sol.times, t))
      for j, t in enumerate(paths.times)
  ])


def MartingaleDefect(paths, sol, n_bins=20):
  """Test that M_t = alpha(t, X_t) is a martingale along a direct ensemble.

  For consecutive recorded times and for the pair (0, T), the increments
  M_t - M_s are averaged in equal-count bins of X_s.
  """
  if n_bins < 1:
    raise errors.OutOfRangeError('n_bins must be positive')
  drift = _DriftAlongPaths(paths, sol)
  last = paths.times.size - 1
  pairs = [(j, j + 1) for j in range(last)] + [(0, last)]
  defect, standard_error, z_score = 0.0, 0.0, 0.0
  for s, t in pairs:
    increments = drift[:, t] - drift[:, s]
    edges = np.quantile(paths.states[:, s], np.linspace(0, 1, n_bins + 1))
    bins = np.clip(
        np.searchsorted(edges, paths.states[:, s], side='right') - 1, 0,
        n_bins - 1)
    z_values = []
    for b in range(n_bins):
      members = increments[bins == b]
      if members.size < 2:
        continue
      mean = float(np.mean(members))
      se = float(np.std(members, ddof=1) / math.sqrt(members.size))
      z_values.append(abs(mean) / se if se > 0 else 0.0)
      if abs(mean) > defect:
        defect, standard_error = abs(mean), se
    if z_values:
      z_score = max(z_score, float(np.sqrt(np.mean(np.square(z_values)))))
  return MartingaleReport(defect, standard_error, z_score)


LikelihoodReport = collections.namedtuple('LikelihoodReport', [
    'mean', 'variance', 'target_mean', 'target_variance', 'mean_z',
    'variance_z'
])


def LikelihoodCheck(paths, sol):
  """Reweight Y_T by 1 / h(T, Y_T) and compare with the Brownian law nu_T.

  Under the bridge Y has density h(T, Y_T) with respect to Brownian motion
  started from nu_0, so the reweighted terminal moments must match those of
  nu_T.

  Raises:
    SchemeMismatchError: for an ensemble without latent states.
  """
  if paths.scheme != 'stretched' or paths.latent is None:
    raise errors.SchemeMismatchError(
        'the likelihood check needs a stretched ensemble, got {}'.format(
            paths.scheme))
  y = paths.latent[:, -1]
  log_h = np.interp(y, sol.grid.nodes, sol.potential.log_h[-1])
  log_w = -log_h
  weights = np.exp(log_w - np.max(log_w))
  weights /= np.sum(weights)
  n_eff = 1.0 / np.sum(weights * weights)
  mean = float(np.sum(weights * y))
  variance = float(np.sum(weights * (y - mean)**2))
  centred = (y - mean)**2
  fourth = float(np.sum(weights * centred * centred))
  nu_T = sol.fields[-1].nu
  target_mean, target_variance = nu_T.Mean(), nu_T.Variance()
  mean_se = math.sqrt(variance / n_eff)
  variance_se = math.sqrt(max(fourth - variance * variance, 0.0) / n_eff)
  return LikelihoodReport(
      mean=mean,
      variance=variance,
      target_mean=target_mean,
      target_variance=target_variance,
      mean_z=abs(mean - target_mean) / mean_se if mean_se > 0 else 0.0,
      variance_z=(abs(variance - target_variance) /
                  variance_se if variance_se > 0 else 0.0))


SUMMARY_COLUMNS = ('time', 'mean', 'var', 'q05', 'q25', 'q50', 'q75', 'q95')


def EnsembleSummary(paths):
  """One row per recorded time with the columns of SUMMARY_COLUMNS."""
  rows = []
  for j, t in enumerate(paths.times):
    x = paths.states[:, j]
    quantiles = np.quantile(x, [0.05, 0.25, 0.5, 0.75, 0.95])
    rows.append((float(t), float(np.mean(x)), float(np.var(x, ddof=1))) +
                tuple(float(q) for q in quantiles))
  return rows


def _Levels(n_quantiles):
  return (np.arange(n_quantiles) + 0.5) / n_quantiles


def EmpiricalWasserstein2(samples, measure, n_quantiles=1000):
  """W2 between the empirical law of samples and a grid measure."""
  levels = _Levels(n_quantiles)
  diff = (np.quantile(samples, levels) -
          grid_measures.QuantileFunction(measure, levels))
  return float(math.sqrt(np.mean(diff * diff)))


def EnsembleWasserstein2(a, b, n_quantiles=1000):
  """W2 between the empirical laws of two samples."""
  levels = _Levels(n_quantiles)
  diff = np.quantile(a, levels) - np.quantile(b, levels)
  return float(math.sqrt(np.mean(diff * diff)))
