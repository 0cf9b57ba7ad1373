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
"""Interface to file resources.

This module reads scenario and defaults files and writes and reads the
artifacts of a run: measures, solutions, traces, summaries and manifests. CSV
files carry a one-line header and full double precision values; JSON files
carry floats by their shortest round-tripping representation.
"""

import collections
import glob
import hashlib
import json
import os
import sys

import numpy as np
import platformdirs

from sbbridge.sbblib import convex_tools
from sbbridge.sbblib import errors
from sbbridge.sbblib import grid_measures
from sbbridge.sbblib import heat_kernel
from sbbridge.sbblib import sbb_solver

if sys.version_info >= (3, 11):
  import tomllib
else:
  import tomli as tomllib

# Project defaults live in the '[tool.sbbridge]' table of this file.
PYPROJECT_TOML = 'pyproject.toml'

# User defaults file, in the platform's configuration directory.
USER_DEFAULTS = os.path.join(
    platformdirs.user_config_dir('sbbridge'), 'defaults.toml')

TRACE_COLUMNS = sbb_solver.TraceRecord._fields
SWEEP_COLUMNS = ('beta', 'cost', 'sup_map_dev', 'w2_t0', 'w2_T')
MAP_X_COLUMNS = ('y', 'value')
MAP_Y_COLUMNS = ('x', 'value')

_FLOAT_FORMAT = '%.17g'


def LoadToml(filename):
  """Parse a TOML file.

  Raises:
    ScenarioError: if the file is missing or malformed. The message carries
      the line and column the parser reports.
  """
  try:
    with open(filename, 'rb') as fd:
      return tomllib.load(fd)
  except OSError as e:
    raise errors.ScenarioError('cannot read {}: {}'.format(filename, e))
  except tomllib.TOMLDecodeError as e:
    raise errors.ScenarioError('{}: {}'.format(filename, e))


def GetProjectDefaultsForDir(dirname):
  """Return the '[tool.sbbridge]' table of the nearest pyproject.toml.

  Looks in dirname and its parent directories.

  Arguments:
    dirname: (unicode) The directory to start from.

  Returns:
    A pair (filename, table), or (None, {}) if no pyproject.toml with a
    '[tool.sbbridge]' table is found.
  """
  dirname = os.path.abspath(dirname)
  while True:
    config_file = os.path.join(dirname, PYPROJECT_TOML)
    if os.path.isfile(config_file):
      table = LoadToml(config_file).get('tool', {}).get('sbbridge', None)
      if table is not None:
        return config_file, table

    parent = os.path.dirname(dirname)
    if not parent or parent == dirname:
      break
    dirname = parent
  return None, {}


def GetUserDefaults(filename=USER_DEFAULTS):
  """Return the '[solver]' table of the user defaults file, or {}."""
  if not filename or not os.path.isfile(filename):
    return {}
  return LoadToml(filename).get('solver', {})


def _GridDict(grid):
  return {'x_min': grid.x_min, 'x_max': grid.x_max, 'n': grid.n}


def _GridFromDict(d):
  try:
    return grid_measures.Grid1D(d['x_min'], d['x_max'], d['n'])
  except (KeyError, TypeError) as e:
    raise errors.LayoutMismatchError('malformed grid record: {}'.format(e))


def _WriteJson(filename, obj):
  with open(filename, 'w') as fd:
    json.dump(obj, fd, indent=1)
    fd.write('\n')


def _ReadJson(filename):
  try:
    with open(filename) as fd:
      return json.load(fd)
  except OSError as e:
    raise errors.LayoutMismatchError('cannot read {}: {}'.format(filename, e))
  except ValueError as e:
    raise errors.LayoutMismatchError('{} is not valid JSON: {}'.format(
        filename, e))


def _WriteColumns(filename, columns, data):
  np.savetxt(
      filename,
      np.column_stack(data),
      fmt=_FLOAT_FORMAT,
      delimiter=',',
      header=','.join(columns),
      comments='')


def _ReadColumns(filename, columns):
  try:
    with open(filename) as fd:
      header = fd.readline().strip()
      if header != ','.join(columns):
        raise errors.LayoutMismatchError(
            '{}: expected header "{}", found "{}"'.format(
                filename, ','.join(columns), header))
      data = np.loadtxt(fd, delimiter=',', ndmin=2)
  except OSError as e:
    raise errors.LayoutMismatchError('cannot read {}: {}'.format(filename, e))
  except ValueError as e:
    raise errors.LayoutMismatchError('{}: {}'.format(filename, e))
  if data.size == 0:
    data = np.zeros((0, len(columns)))
  if data.shape[1] != len(columns):
    raise errors.LayoutMismatchError('{}: expected {} columns'.format(
        filename, len(columns)))
  return [data[:, j] for j in range(len(columns))]


def MeasureToDict(m):
  return {'grid': _GridDict(m.grid), 'density': [float(v) for v in m.density]}


def MeasureFromDict(d):
  grid = _GridFromDict(d['grid'])
  return grid_measures.Measure1D(grid, d['density'])


def WriteMeasureCsv(filename, m):
  _WriteColumns(filename, ('x', 'density'), (m.grid.nodes, m.density))


def ReadMeasureCsv(filename, grid=None):
  """Read a measure from an "x,density" CSV file.

  Arguments:
    filename: (unicode) The file.
    grid: (Grid1D) If given, the density is interpolated onto it and
      renormalized. Otherwise the nodes must be uniform and define the grid.

  Raises:
    LayoutMismatchError: if the file is malformed.
  """
  x, density = _ReadColumns(filename, ('x', 'density'))
  if x.size < 2:
    raise errors.LayoutMismatchError('{}: too few rows'.format(filename))
  if grid is not None:
    return grid_measures.Measure1D(
        grid, np.interp(grid.nodes, x, density, left=0.0, right=0.0),
        normalize=True)
  file_grid = grid_measures.Grid1D(x[0], x[-1], x.size)
  if not np.allclose(file_grid.nodes, x, rtol=0, atol=1e-9 * file_grid.dx):
    raise errors.LayoutMismatchError(
        '{}: nodes are not uniformly spaced'.format(filename))
  return grid_measures.Measure1D(file_grid, density, normalize=True)


def _TraceToColumns(trace):
  return [np.array([getattr(r, c) for r in trace], dtype=float)
          for c in TRACE_COLUMNS]


def WriteTrace(filename, trace):
  _WriteColumns(filename, TRACE_COLUMNS, _TraceToColumns(trace))


def ReadTrace(filename):
  columns = _ReadColumns(filename, TRACE_COLUMNS)
  return [
      sbb_solver.TraceRecord(int(row[0]), *(float(v) for v in row[1:]))
      for row in zip(*columns)
  ]


def _IndexedName(prefix, k):
  return '{}_{:03d}.csv'.format(prefix, k)


def WriteSolution(sol, directory):
  """Write a solution to a directory.

  The layout is config.json, potential.json, nu0.json, mu0.json, muT.json,
  trace.csv, and per output time k: marginal_k.csv, map_x_k.csv,
  map_y_k.csv and coefficients_k.csv.
  """
  os.makedirs(directory, exist_ok=True)
  config = sol.config.AsDict()
  config['converged'] = sol.converged
  _WriteJson(os.path.join(directory, 'config.json'), config)
  _WriteJson(
      os.path.join(directory, 'potential.json'), {
          'grid': _GridDict(sol.grid),
          'times': [float(t) for t in sol.potential.times],
          'log_h': [[float(v) for v in row] for row in sol.potential.log_h],
          'linear_tails': sol.potential.linear_tails,
      })
  for name, m in (('nu0', sol.nu0), ('mu0', sol.mu0), ('muT', sol.muT)):
    _WriteJson(os.path.join(directory, name + '.json'), MeasureToDict(m))
  WriteTrace(os.path.join(directory, 'trace.csv'), sol.trace)

  nodes = sol.grid.nodes
  for k, fields in enumerate(sol.fields):
    WriteMeasureCsv(
        os.path.join(directory, _IndexedName('marginal', k)), fields.marginal)
    _WriteColumns(
        os.path.join(directory, _IndexedName('map_x', k)), MAP_X_COLUMNS,
        (nodes, fields.x_map.values))
    _WriteColumns(
        os.path.join(directory, _IndexedName('map_y', k)), MAP_Y_COLUMNS,
        (nodes, fields.y_map.values))
    _WriteColumns(
        os.path.join(directory, _IndexedName('coefficients', k)),
        ('x', 'alpha', 'sigma'),
        (nodes, fields.coefficients.alpha, fields.coefficients.sigma))


def ReadPotential(directory):
  d = _ReadJson(os.path.join(directory, 'potential.json'))
  return heat_kernel.LogHeatPotential(
      _GridFromDict(d['grid']), d['times'], d['log_h'],
      linear_tails=bool(d.get('linear_tails', False)))


def ReadSolverConfig(directory, nu0=None):
  """The SolverConfig stored in config.json, and its convergence flag."""
  d = _ReadJson(os.path.join(directory, 'config.json'))
  converged = bool(d.pop('converged', False))
  grid = _GridFromDict(d.pop('grid'))
  if d.get('nu0_policy') == 'custom':
    d['nu0_policy'] = nu0
  return sbb_solver.SolverConfig(grid, **d), converged


def LoadSolution(directory):
  """Rebuild an SBBSolution from a directory written by WriteSolution.

  The fields are recomputed from the stored potential and nu_0.
  """
  measures = {
      name: MeasureFromDict(_ReadJson(os.path.join(directory, name + '.json')))
      for name in ('nu0', 'mu0', 'muT')
  }
  config, converged = ReadSolverConfig(directory, measures['nu0'])
  potential = ReadPotential(directory)
  trace = ReadTrace(os.path.join(directory, 'trace.csv'))
  terminal_map = None
  if config.mode == 'bass_limit':
    last = config.output_times.size - 1
    _, values = _ReadColumns(
        os.path.join(directory, _IndexedName('map_x', last)), MAP_X_COLUMNS)
    terminal_map = convex_tools.MonotoneMap(config.grid, values)
  return sbb_solver.Assemble(measures['mu0'], measures['muT'], config,
                             potential.log_h[-1], measures['nu0'], trace,
                             converged, terminal_map)


Layout = collections.namedtuple('Layout',
                                ['grid', 'times', 'marginals', 'maps_x'])


def ReadLayout(directory):
  """Read the marginals and stretching maps of a solution directory.

  Raises:
    LayoutMismatchError: if the directory is not a complete solution layout.
  """
  if not os.path.isdir(directory):
    raise errors.LayoutMismatchError(
        '{} is not a solution directory'.format(directory))
  d = _ReadJson(os.path.join(directory, 'config.json'))
  grid = _GridFromDict(d['grid'])
  times = np.asarray(d['output_times'], dtype=float)
  n_marginals = len(glob.glob(os.path.join(directory, 'marginal_*.csv')))
  if n_marginals != times.size:
    raise errors.LayoutMismatchError(
        '{}: {} marginal files for {} output times'.format(
            directory, n_marginals, times.size))
  marginals, maps_x = [], []
  for k in range(times.size):
    marginals.append(
        ReadMeasureCsv(os.path.join(directory, _IndexedName('marginal', k))))
    _, values = _ReadColumns(
        os.path.join(directory, _IndexedName('map_x', k)), MAP_X_COLUMNS)
    maps_x.append(values)
  return Layout(grid, times, marginals, maps_x)


def WriteSweepSummary(filename, rows):
  """rows: sequences in the order of SWEEP_COLUMNS."""
  data = np.array(rows, dtype=float).reshape(-1, len(SWEEP_COLUMNS))
  _WriteColumns(filename, SWEEP_COLUMNS, data.T)


def ReadSweepSummary(filename):
  return list(zip(*_ReadColumns(filename, SWEEP_COLUMNS)))


def WriteEnsembleSummary(filename, rows, columns):
  data = np.array(rows, dtype=float).reshape(-1, len(columns))
  _WriteColumns(filename, columns, data.T)


def WritePaths(filename, paths):
  """Raw states, one column per recorded time."""
  columns = ['t={!r}'.format(float(t)) for t in paths.times]
  _WriteColumns(filename, columns, paths.states.T)


def WriteJson(filename, obj):
  _WriteJson(filename, obj)


def FileDigest(filename):
  """sha256 of a file's bytes."""
  digest = hashlib.sha256()
  with open(filename, 'rb') as fd:
    for block in iter(lambda: fd.read(1 << 16), b''):
      digest.update(block)
  return digest.hexdigest()
