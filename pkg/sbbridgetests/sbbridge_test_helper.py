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
"""Support module for tests for sbbridge."""

import functools
import unittest

import numpy as np

from sbbridge.sbblib import grid_measures
from sbbridge.sbblib import sbb_solver

# Grid of the default test problems: dx = 0.025.
STANDARD_GRID = grid_measures.Grid1D(-10.0, 10.0, 801)

# Grid for problems with a terminal variance up to 4.
WIDE_GRID = grid_measures.Grid1D(-14.0, 14.0, 1121)


class SBBTest(unittest.TestCase):

  def assertAllClose(self, actual, expected, atol=0.0, rtol=1e-7, msg=None):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if actual.shape != expected.shape and expected.shape:
      self.fail('shape mismatch: {} != {}'.format(actual.shape, expected.shape))
    gap = np.abs(actual - expected) - (atol + rtol * np.abs(expected))
    if np.any(gap > 0):
      worst = int(np.argmax(gap))
      lines = [
          'arrays differ beyond atol={!r} rtol={!r}'.format(atol, rtol),
          '  {} of {} entries differ; worst at flat index {}'.format(
              int(np.sum(gap > 0)), gap.size, worst),
          '  actual={!r} expected={!r}'.format(
              float(actual.flat[worst]),
              float(np.broadcast_to(expected, actual.shape).flat[worst])),
      ]
      if msg:
        lines.insert(0, msg)
      self.fail('\n'.join(lines))

  def assertStrictlyIncreasing(self, values, msg=None):
    steps = np.diff(np.asarray(values, dtype=float))
    if np.any(steps <= 0):
      self.fail(msg or 'values decrease at indices {}'.format(
          np.flatnonzero(steps <= 0)[:8].tolist()))


def Config(grid=STANDARD_GRID, **kwargs):
  """A SolverConfig with the tolerance the solver tests rely on."""
  kwargs.setdefault('tol_marginal', 1e-4)
  return sbb_solver.SolverConfig(grid, **kwargs)


@functools.lru_cache(maxsize=None)
def TrivialSolution():
  """N(0, 1) -> N(0, 2) at beta = 1: Brownian motion solves it exactly."""
  grid = STANDARD_GRID
  mu0 = grid_measures.MakeGaussian(grid, 0.0, 1.0)
  muT = grid_measures.MakeGaussian(grid, 0.0, 2.0)
  return sbb_solver.Solve(mu0, muT, Config(grid, beta=1.0))


@functools.lru_cache(maxsize=None)
def ContractingSolution(beta=1.0):
  """N(0, 1) -> N(0.5, 1.5): the bridge must shift and contract."""
  grid = STANDARD_GRID
  mu0 = grid_measures.MakeGaussian(grid, 0.0, 1.0)
  muT = grid_measures.MakeGaussian(grid, 0.5, 1.5)
  return sbb_solver.Solve(mu0, muT,
                          Config(grid, beta=beta, n_output_times=33))


@functools.lru_cache(maxsize=None)
def SchrodingerSolution():
  """The classical bridge N(0, 1) -> N(1, 1)."""
  grid = STANDARD_GRID
  mu0 = grid_measures.MakeGaussian(grid, 0.0, 1.0)
  muT = grid_measures.MakeGaussian(grid, 1.0, 1.0)
  return sbb_solver.Solve(mu0, muT, Config(grid, mode='schrodinger_limit'))


@functools.lru_cache(maxsize=None)
def BassSolution():
  """The Bass martingale N(0, 1) -> N(0, 4)."""
  grid = WIDE_GRID
  mu0 = grid_measures.MakeGaussian(grid, 0.0, 1.0)
  muT = grid_measures.MakeGaussian(grid, 0.0, 4.0)
  return sbb_solver.Solve(mu0, muT, Config(grid, mode='bass_limit'))
