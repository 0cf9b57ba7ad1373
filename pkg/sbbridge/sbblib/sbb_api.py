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
"""Entry points for sbbridge.

The main APIs that sbbridge exposes to drive a run.

  SolveScenario(): solve one scenario at one value of beta.
  RunScenario(): solve every beta of a scenario, verify, and write the results.
  CompareDirectories(): distances between two written solutions.

Results are written under <out_dir>/<scenario name>/beta=<beta>/, with the
sweep summary and the run manifest next to the per-beta directories.
"""

import collections
import concurrent.futures
import logging
import os
import platform
import time

import numpy as np
import scipy

from sbbridge._version import __version__
from sbbridge.sbblib import errors
from sbbridge.sbblib import file_resources
from sbbridge.sbblib import grid_measures
from sbbridge.sbblib import sbb_solver
from sbbridge.sbblib import sde_verify

_logger = logging.getLogger(__name__)

EntryResult = collections.namedtuple('EntryResult', [
    'beta', 'converged', 'cost', 'sup_map_dev', 'w2_t0', 'w2_T', 'seconds',
    'directory'
])

RunResult = collections.namedtuple(
    'RunResult', ['converged', 'entries', 'summary_file', 'manifest_file'])


def ScenarioDirectory(out_dir, scenario):
  return os.path.join(out_dir, scenario.name)


def SolutionDirectory(out_dir, scenario, beta):
  """The directory of the solution at one beta."""
  return os.path.join(
      ScenarioDirectory(out_dir, scenario), 'beta={!r}'.format(float(beta)))


def SolveScenario(scenario, beta=None):
  """Solve a scenario.

  Arguments:
    scenario: (Scenario) The scenario.
    beta: (float) Overrides the scenario's beta.

  Returns:
    An SBBSolution.
  """
  config = scenario.SolverConfig(beta)
  return sbb_solver.Solve(scenario.Mu0(), scenario.MuT(), config)


def Verify(sol, sim):
  """Simulate both schemes and check them against the solution.

  Returns:
    A pair (report, direct_ensemble). The report is a JSON-able dict.
  """
  direct = sde_verify.SimulateDirect(sol, sim)
  stretched = sde_verify.SimulateStretched(sol, sim)
  cost = sde_verify.PrimalCost(direct, sol)
  martingale = sde_verify.MartingaleDefect(direct, sol)
  likelihood = sde_verify.LikelihoodCheck(stretched, sol)
  schemes_w2 = [
      sde_verify.EnsembleWasserstein2(direct.states[:, j],
                                      stretched.states[:, j])
      for j in range(direct.times.size)
  ]
  report = {
      'times': [float(t) for t in direct.times],
      'primal_cost': {
          'mean': cost.mean,
          'standard_error': cost.standard_error,
      },
      'field_cost': sbb_solver.FieldPrimalCost(sol),
      'terminal_w2': sde_verify.EmpiricalWasserstein2(direct.states[:, -1],
                                                      sol.muT),
      'direct_vs_stretched_w2': schemes_w2,
      'martingale': martingale._asdict(),
      'likelihood': likelihood._asdict(),
      'escaped': {
          'direct': direct.escaped,
          'stretched': stretched.escaped,
      },
  }
  return report, direct


def _RunEntry(scenario, beta, directory, verify=True, raw_paths=False):
  """Solve, verify and write one beta of a scenario."""
  start = time.perf_counter()
  try:
    sol = SolveScenario(scenario, beta)
    file_resources.WriteSolution(sol, directory)
    w2_t0, w2_T = sbb_solver.BoundaryDefects(sol)
    cost = sbb_solver.FieldPrimalCost(sol)
    deviation = sbb_solver.MapDeviation(sol)
    sim = scenario.SimConfig() if verify else None
    if sim is not None:
      report, direct = Verify(sol, sim)
      file_resources.WriteJson(os.path.join(directory, 'verify.json'), report)
      file_resources.WriteEnsembleSummary(
          os.path.join(directory, 'ensemble_summary.csv'),
          sde_verify.EnsembleSummary(direct), sde_verify.SUMMARY_COLUMNS)
      if raw_paths:
        file_resources.WritePaths(os.path.join(directory, 'paths.csv'), direct)
  except errors.SBBError as e:
    raise errors.SBBError(
        errors.FormatErrorMsg(e, '{} beta={!r}'.format(scenario.name, beta)))
  return EntryResult(beta, sol.converged, cost, deviation, w2_t0, w2_T,
                     time.perf_counter() - start, directory)


def _Versions():
  return {
      'sbbridge': __version__,
      'numpy': np.__version__,
      'scipy': scipy.__version__,
      'python': platform.python_version(),
  }


def RunScenario(scenario, out_dir, sweep_parallel=1, verify=True,
                raw_paths=False):
  """Solve every beta of a scenario and write the results.

  Arguments:
    scenario: (Scenario) The scenario.
    out_dir: (unicode) The output root.
    sweep_parallel: (int) Processes solving sweep entries concurrently.
    verify: (bool) Run the Monte-Carlo verification when the scenario has a
      [verify] table.
    raw_paths: (bool) Also write the raw direct-scheme paths.

  Returns:
    A RunResult; converged is True only if every entry converged.
  """
  start = time.perf_counter()
  betas = scenario.betas
  directories = [SolutionDirectory(out_dir, scenario, b) for b in betas]
  if sweep_parallel > 1 and len(betas) > 1:
    workers = min(sweep_parallel, len(betas))
    with concurrent.futures.ProcessPoolExecutor(workers) as executor:
      futures = [
          executor.submit(_RunEntry, scenario, beta, directory, verify,
                          raw_paths)
          for beta, directory in zip(betas, directories)
      ]
      entries = [future.result() for future in futures]
  else:
    entries = [
        _RunEntry(scenario, beta, directory, verify, raw_paths)
        for beta, directory in zip(betas, directories)
    ]
  for entry in entries:
    _logger.info('%s beta=%r: converged=%s cost=%.6g (%.1fs)', scenario.name,
                 entry.beta, entry.converged, entry.cost, entry.seconds)

  root = ScenarioDirectory(out_dir, scenario)
  os.makedirs(root, exist_ok=True)
  summary_file = None
  if scenario.sweep:
    summary_file = os.path.join(root, 'sweep_summary.csv')
    file_resources.WriteSweepSummary(
        summary_file,
        [(e.beta, e.cost, e.sup_map_dev, e.w2_t0, e.w2_T) for e in entries])

  converged = all(e.converged for e in entries)
  manifest_file = os.path.join(root, 'manifest.json')
  file_resources.WriteJson(
      manifest_file, {
          'scenario': scenario.name,
          'input_hash': scenario.InputHash(),
          'sources': [os.path.abspath(s) for s in scenario.sources],
          'versions': _Versions(),
          'entries': [{
              'beta': e.beta,
              'directory': os.path.relpath(e.directory, root),
              'converged': e.converged,
              'seconds': e.seconds,
          } for e in entries],
          'converged': converged,
          'total_seconds': time.perf_counter() - start,
      })
  return RunResult(converged, entries, summary_file, manifest_file)


def _MapRegion(marginal, x_values, mass):
  """Nodes y whose image lies in the central mass region of the marginal."""
  lower = grid_measures.QuantileFunction(marginal, 0.5 * (1.0 - mass))
  upper = grid_measures.QuantileFunction(marginal, 0.5 * (1.0 + mass))
  return (x_values >= lower) & (x_values <= upper)


def CompareDirectories(dir_a, dir_b, mass=sbb_solver.MAP_MASS):
  """Compare two solution directories time by time.

  Marginals are compared in W2. Stretching maps are compared in sup norm over
  the nodes that either map sends into the central `mass` region of its
  marginal.

  Returns:
    A JSON-able dict.

  Raises:
    LayoutMismatchError: if the layouts differ in grid or times.
  """
  a = file_resources.ReadLayout(dir_a)
  b = file_resources.ReadLayout(dir_b)
  if a.grid != b.grid:
    raise errors.LayoutMismatchError('grids differ: {!r} vs {!r}'.format(
        a.grid, b.grid))
  if a.times.shape != b.times.shape or not np.allclose(
      a.times, b.times, rtol=0, atol=1e-12):
    raise errors.LayoutMismatchError('output times differ')
  marginal_w2, map_sup = [], []
  for k in range(a.times.size):
    marginal_w2.append(
        grid_measures.Wasserstein2(a.marginals[k], b.marginals[k]))
    region = (
        _MapRegion(a.marginals[k], a.maps_x[k], mass) |
        _MapRegion(b.marginals[k], b.maps_x[k], mass))
    map_sup.append(float(np.max(np.abs(a.maps_x[k] - b.maps_x[k])[region]))
                   if np.any(region) else 0.0)
  return {
      'dir_a': dir_a,
      'dir_b': dir_b,
      'times': [float(t) for t in a.times],
      'marginal_w2': marginal_w2,
      'map_sup': map_sup,
      'max_marginal_w2': max(marginal_w2),
      'max_map_sup': max(map_sup),
  }
