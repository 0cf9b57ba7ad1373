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
"""Scenario files: marginals, grid, solver and verification settings.

A scenario is a TOML file:

  [scenario]  name = "gaussian"
  [grid]      x_min = -10.0, x_max = 10.0, n = 801
  [mu0]       kind = "gaussian", mean = 0.0, variance = 1.0
  [muT]       kind = "mixture", components = [{weight, mean, variance}, ...]
  [solver]    based_on = "default", beta = 1.0, ...
  [verify]    n_paths = 100000, n_steps = 200, seed = 7
  [sweep]     betas = [0.01, 0.1, 1.0]

Solver settings are layered: a named preset, then the user defaults file, then
the '[tool.sbbridge]' table of the nearest pyproject.toml, then the scenario
itself. Every option has a converter in _SOLVER_OPTION_VALUE_CONVERTER, which
also validates it.
"""

import hashlib
import json
import math
import os

from sbbridge.sbblib import errors
from sbbridge.sbblib import file_resources
from sbbridge.sbblib import grid_measures
from sbbridge.sbblib import sbb_solver
from sbbridge.sbblib import sde_verify


def CreateDefaultSolverSettings():
  """Create the default solver settings."""
  return dict(
      beta=1.0,
      horizon_T=1.0,
      max_iters=2000,
      tol_marginal=1e-3,
      damping=1.0,
      density_floor=grid_measures.DEFAULT_DENSITY_FLOOR,
      nu0_policy='match_mu0',
      n_output_times=17,
      mode='sbb',
      terminal_update='newton',
  )


def CreatePreciseSolverSettings():
  """Create tighter settings for reference solutions."""
  settings = CreateDefaultSolverSettings()
  settings['max_iters'] = 5000
  settings['tol_marginal'] = 1e-4
  settings['n_output_times'] = 33
  return settings


_PRESET_NAME_TO_FACTORY = dict(
    default=CreateDefaultSolverSettings,
    precise=CreatePreciseSolverSettings,
)

DEFAULT_PRESET = 'default'

MEASURE_KINDS = ('gaussian', 'mixture', 'uniform', 'from_csv')


def _Number(value):
  if isinstance(value, bool) or not isinstance(value, (int, float)):
    raise ValueError('not a number')
  return float(value)


def _PositiveFloat(value):
  value = _Number(value)
  if not (value > 0 and math.isfinite(value)):
    raise ValueError('must be positive')
  return value


def _NonNegativeFloat(value):
  value = _Number(value)
  if not (value >= 0 and math.isfinite(value)):
    raise ValueError('must be non-negative')
  return value


def _PositiveInt(value):
  if isinstance(value, bool) or not isinstance(value, int) or value < 1:
    raise ValueError('must be a positive integer')
  return value


def _NonNegativeInt(value):
  if isinstance(value, bool) or not isinstance(value, int) or value < 0:
    raise ValueError('must be a non-negative integer')
  return value


def _Damping(value):
  value = _Number(value)
  if not 0 < value <= 1:
    raise ValueError('must lie in (0, 1]')
  return value


def _Choice(*choices):

  def Converter(value):
    if value not in choices:
      raise ValueError('must be one of {}'.format(', '.join(choices)))
    return value

  return Converter


def _FloatList(value):
  if not isinstance(value, list) or not value:
    raise ValueError('must be a non-empty list of numbers')
  return [_Number(v) for v in value]


def _PositiveFloatList(value):
  return [_PositiveFloat(v) for v in _FloatList(value)]


# Every option of the [solver] table, mapped to the converter that checks it
# and returns the value the solver expects.
_SOLVER_OPTION_VALUE_CONVERTER = dict(
    beta=_PositiveFloat,
    horizon_T=_PositiveFloat,
    max_iters=_PositiveInt,
    tol_marginal=_PositiveFloat,
    damping=_Damping,
    density_floor=_PositiveFloat,
    nu0_policy=_Choice('match_mu0', 'standard_gaussian'),
    output_times=_FloatList,
    n_output_times=_PositiveInt,
    mode=_Choice(*sbb_solver.MODES),
    terminal_update=_Choice(*sbb_solver.TERMINAL_UPDATES),
)

_VERIFY_OPTION_VALUE_CONVERTER = dict(
    n_paths=_PositiveInt,
    n_steps=_PositiveInt,
    seed=_NonNegativeInt,
    boundary_clamp=_NonNegativeFloat,
)

_SWEEP_OPTION_VALUE_CONVERTER = dict(betas=_PositiveFloatList)


def _InvalidSetting(value, section, option, reason):
  return errors.ScenarioError(
      "'{}' is not a valid setting for {}.{}: {}".format(
          value, section, option, reason))


def _Convert(table, converters, section):
  """Apply a converter table, naming the field of any invalid value."""
  if not isinstance(table, dict):
    raise errors.ScenarioError('[{}] must be a table'.format(section))
  result = {}
  for option, value in table.items():
    if option not in converters:
      raise errors.ScenarioError('Unknown {} option "{}"'.format(
          section, option))
    try:
      result[option] = converters[option](value)
    except ValueError as e:
      raise _InvalidSetting(value, section, option, e)
  return result


def ResolveSolverSettings(layers):
  """Merge solver settings over a preset.

  Arguments:
    layers: (list of dict) Raw [solver] tables, least specific first. The
      'based_on' key of the most specific layer that has one picks the preset.

  Returns:
    A dict of converted settings.
  """
  based_on = DEFAULT_PRESET
  for layer in layers:
    based_on = layer.get('based_on', based_on)
  factory = _PRESET_NAME_TO_FACTORY.get(str(based_on).lower())
  if factory is None:
    raise errors.ScenarioError('Unknown preset "{}" in based_on'.format(
        based_on))
  settings = factory()
  for layer in layers:
    layer = {k: v for k, v in layer.items() if k != 'based_on'}
    converted = _Convert(layer, _SOLVER_OPTION_VALUE_CONVERTER, 'solver')
    if 'n_output_times' in converted:
      settings.pop('output_times', None)
    if 'output_times' in converted:
      settings.pop('n_output_times', None)
    settings.update(converted)
  return settings


def _Require(table, key, section):
  if key not in table:
    raise errors.ScenarioError('[{}] needs "{}"'.format(section, key))
  return table[key]


def _MeasureSpec(table, section, base_dir):
  """Validate a measure table, resolving CSV paths against base_dir."""
  if not isinstance(table, dict):
    raise errors.ScenarioError('[{}] must be a table'.format(section))
  spec = dict(table)
  kind = _Require(spec, 'kind', section)
  if kind not in MEASURE_KINDS:
    raise errors.ScenarioError('[{}] kind must be one of {}, got "{}"'.format(
        section, ', '.join(MEASURE_KINDS), kind))
  fields = {
      'gaussian': {
          'mean': _Number,
          'variance': _PositiveFloat
      },
      'uniform': {
          'lower': _Number,
          'upper': _Number
      },
      'mixture': {
          'components': list
      },
      'from_csv': {
          'path': str
      },
  }[kind]
  checked = {'kind': kind}
  for key, converter in fields.items():
    try:
      checked[key] = converter(_Require(spec, key, section))
    except ValueError as e:
      raise _InvalidSetting(spec[key], section, key, e)
  extra = set(spec) - set(checked)
  if extra:
    raise errors.ScenarioError('Unknown {} option "{}"'.format(
        section, sorted(extra)[0]))
  if kind == 'mixture':
    components = []
    for i, component in enumerate(checked['components']):
      label = '{}.components[{}]'.format(section, i)
      component = _Convert(
          component, {
              'weight': _PositiveFloat,
              'mean': _Number,
              'variance': _PositiveFloat
          }, label)
      for key in ('weight', 'mean', 'variance'):
        _Require(component, key, label)
      components.append(component)
    if not components:
      raise errors.ScenarioError('[{}] needs at least one component'.format(
          section))
    checked['components'] = components
  if kind == 'from_csv':
    checked['path'] = os.path.normpath(os.path.join(base_dir, checked['path']))
  return checked


def BuildMeasure(spec, grid):
  """The Measure1D a validated measure spec describes on a grid."""
  kind = spec['kind']
  if kind == 'gaussian':
    return grid_measures.MakeGaussian(grid, spec['mean'], spec['variance'])
  if kind == 'uniform':
    return grid_measures.MakeUniform(grid, spec['lower'], spec['upper'])
  if kind == 'mixture':
    return grid_measures.MakeMixture(
        grid, [(c['weight'], c['mean'], c['variance'])
               for c in spec['components']])
  return file_resources.ReadMeasureCsv(spec['path'], grid)


class Scenario(object):
  """A parsed and validated scenario.

  Arguments:
    name: (unicode) The scenario name, used for output paths.
    grid: (Grid1D) The grid.
    mu0_spec, muT_spec: (dict) Validated measure specs.
    solver: (dict) Resolved solver settings.
    verify: (dict) Simulation settings, or None to skip verification.
    sweep: (list of float) Values of beta to solve for, or None.
    filename: (unicode) The scenario file, if any.
    sources: (list of unicode) Every file the settings were read from.
  """

  def __init__(self, name, grid, mu0_spec, muT_spec, solver, verify=None,
               sweep=None, filename=None, sources=()):
    self.name = name
    self.grid = grid
    self.mu0_spec = mu0_spec
    self.muT_spec = muT_spec
    self.solver = solver
    self.verify = verify
    self.sweep = sweep
    self.filename = filename
    self.sources = list(sources)

  def Mu0(self):
    return BuildMeasure(self.mu0_spec, self.grid)

  def MuT(self):
    return BuildMeasure(self.muT_spec, self.grid)

  @property
  def betas(self):
    """The values of beta to solve for."""
    if self.sweep:
      return list(self.sweep)
    return [self.solver['beta']]

  def SolverConfig(self, beta=None):
    settings = dict(self.solver)
    if beta is not None:
      settings['beta'] = beta
    try:
      return sbb_solver.SolverConfig(self.grid, **settings)
    except errors.OutOfRangeError as e:
      raise errors.ScenarioError('invalid [solver] settings: {}'.format(e))

  def SimConfig(self):
    if self.verify is None:
      return None
    try:
      return sde_verify.SimConfig(**self.verify)
    except errors.OutOfRangeError as e:
      raise errors.ScenarioError('invalid [verify] settings: {}'.format(e))

  def AsDict(self):
    """The fully resolved scenario as plain data."""
    d = {
        'scenario': {
            'name': self.name
        },
        'grid': {
            'x_min': self.grid.x_min,
            'x_max': self.grid.x_max,
            'n': self.grid.n
        },
        'mu0': self.mu0_spec,
        'muT': self.muT_spec,
        'solver': self.solver,
    }
    if self.verify is not None:
      d['verify'] = self.verify
    if self.sweep is not None:
      d['sweep'] = {'betas': self.sweep}
    return d

  def InputHash(self):
    """sha256 over the resolved settings and any CSV marginals."""
    digest = hashlib.sha256(
        json.dumps(self.AsDict(), sort_keys=True).encode('utf-8'))
    for spec in (self.mu0_spec, self.muT_spec):
      if spec['kind'] == 'from_csv':
        digest.update(file_resources.FileDigest(spec['path']).encode('ascii'))
    return digest.hexdigest()


_SECTIONS = ('scenario', 'grid', 'mu0', 'muT', 'solver', 'verify', 'sweep')


def CreateScenarioFromDict(config, base_dir='.', defaults=(), filename=None,
                           sources=()):
  """Create a Scenario from parsed TOML.

  Arguments:
    config: (dict) The scenario tables.
    base_dir: (unicode) Directory relative CSV paths are resolved against.
    defaults: (list of dict) Solver default layers, least specific first.
    filename: (unicode) The file the scenario came from, for messages.
    sources: (list of unicode) Files the defaults came from.

  Raises:
    ScenarioError: naming the offending section or field.
  """
  unknown = set(config) - set(_SECTIONS)
  if unknown:
    raise errors.ScenarioError('Unknown section [{}]'.format(
        sorted(unknown)[0]))
  name = _Require(_Require(config, 'scenario', 'scenario'), 'name', 'scenario')
  if not isinstance(name, str) or not name or os.sep in name:
    raise errors.ScenarioError(
        "'{}' is not a valid setting for scenario.name".format(name))

  grid_table = _Require(config, 'grid', 'grid')
  try:
    grid = grid_measures.Grid1D(
        _Number(_Require(grid_table, 'x_min', 'grid')),
        _Number(_Require(grid_table, 'x_max', 'grid')),
        _PositiveInt(_Require(grid_table, 'n', 'grid')))
  except (ValueError, errors.OutOfRangeError) as e:
    raise errors.ScenarioError('invalid [grid]: {}'.format(e))

  mu0_spec = _MeasureSpec(_Require(config, 'mu0', 'mu0'), 'mu0', base_dir)
  muT_spec = _MeasureSpec(_Require(config, 'muT', 'muT'), 'muT', base_dir)
  solver = ResolveSolverSettings(list(defaults) + [config.get('solver', {})])
  verify = None
  if 'verify' in config:
    verify = _Convert(config['verify'], _VERIFY_OPTION_VALUE_CONVERTER,
                      'verify')
  sweep = None
  if 'sweep' in config:
    sweep = _Convert(config['sweep'], _SWEEP_OPTION_VALUE_CONVERTER,
                     'sweep').get('betas')

  scenario = Scenario(name, grid, mu0_spec, muT_spec, solver, verify, sweep,
                      filename, sources)
  # Build once so that bad measures and settings fail at load time.
  for beta in scenario.betas:
    scenario.SolverConfig(beta)
  scenario.SimConfig()
  return scenario


def LoadScenario(filename, user_defaults=file_resources.USER_DEFAULTS,
                 use_project_defaults=True):
  """Read a scenario file and layer the defaults under it.

  Arguments:
    filename: (unicode) The scenario file.
    user_defaults: (unicode) The user defaults file, or None to skip it.
    use_project_defaults: (bool) Look for a '[tool.sbbridge]' table in the
      nearest pyproject.toml.

  Returns:
    A Scenario.

  Raises:
    ScenarioError: if the file cannot be read or fails validation.
  """
  config = file_resources.LoadToml(filename)
  base_dir = os.path.dirname(os.path.abspath(filename))
  defaults, sources = [], []
  user = file_resources.GetUserDefaults(user_defaults)
  if user:
    defaults.append(user)
    sources.append(user_defaults)
  if use_project_defaults:
    project_file, project = file_resources.GetProjectDefaultsForDir(base_dir)
    if project_file:
      defaults.append(project)
      sources.append(project_file)
  try:
    return CreateScenarioFromDict(config, base_dir, defaults, filename,
                                  sources + [filename])
  except errors.ScenarioError as e:
    raise errors.ScenarioError('{}: {}'.format(filename, e))
