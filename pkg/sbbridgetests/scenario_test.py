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
"""Tests for sbbridge.scenario."""

import os
import textwrap
import unittest

from sbbridge.sbblib import errors
from sbbridge.sbblib import file_resources
from sbbridge.sbblib import grid_measures
from sbbridge.sbblib import scenario

from sbbridgetests import sbbridge_test_helper
from sbbridgetests import utils

SCENARIO_TOML = textwrap.dedent(u'''\
    [scenario]
    name = "gaussian"

    [grid]
    x_min = -8.0
    x_max = 8.0
    n = 321

    [mu0]
    kind = "gaussian"
    mean = 0.0
    variance = 1.0

    [muT]
    kind = "gaussian"
    mean = 0.0
    variance = 2.0
    ''')


def _Config(**solver):
  config = {
      'scenario': {
          'name': 'gaussian'
      },
      'grid': {
          'x_min': -8.0,
          'x_max': 8.0,
          'n': 321
      },
      'mu0': {
          'kind': 'gaussian',
          'mean': 0.0,
          'variance': 1.0
      },
      'muT': {
          'kind': 'gaussian',
          'mean': 0.0,
          'variance': 2.0
      },
  }
  if solver:
    config['solver'] = solver
  return config


class PresetTest(sbbridge_test_helper.SBBTest):

  def test_default_settings(self):
    settings = scenario.CreateDefaultSolverSettings()
    self.assertEqual(settings['beta'], 1.0)
    self.assertEqual(settings['mode'], 'sbb')
    self.assertEqual(settings['terminal_update'], 'newton')
    self.assertEqual(settings['nu0_policy'], 'match_mu0')

  def test_precise_settings(self):
    settings = scenario.CreatePreciseSolverSettings()
    self.assertEqual(settings['tol_marginal'], 1e-4)
    self.assertEqual(settings['n_output_times'], 33)
    self.assertEqual(settings['beta'], 1.0)


class ResolveSolverSettingsTest(sbbridge_test_helper.SBBTest):

  def test_layers_override_in_order(self):
    settings = scenario.ResolveSolverSettings([{
        'beta': 2.0,
        'damping': 0.5
    }, {
        'beta': 3.0
    }])
    self.assertEqual(settings['beta'], 3.0)
    self.assertEqual(settings['damping'], 0.5)

  def test_based_on(self):
    settings = scenario.ResolveSolverSettings([{'based_on': 'precise'}])
    self.assertEqual(settings['tol_marginal'], 1e-4)
    settings = scenario.ResolveSolverSettings([{
        'based_on': 'precise'
    }, {
        'based_on': 'DEFAULT'
    }])
    self.assertEqual(settings['tol_marginal'], 1e-3)

  def test_unknown_preset(self):
    with self.assertRaisesRegex(errors.ScenarioError, 'Unknown preset'):
      scenario.ResolveSolverSettings([{'based_on': 'fastest'}])

  def test_unknown_option(self):
    with self.assertRaisesRegex(errors.ScenarioError,
                                'Unknown solver option "gamma"'):
      scenario.ResolveSolverSettings([{'gamma': 1.0}])

  def test_invalid_values_name_the_field(self):
    cases = [
        ('beta', -1.0),
        ('beta', 'one'),
        ('max_iters', 2.5),
        ('damping', 1.5),
        ('mode', 'exact'),
        ('terminal_update', 'secant'),
        ('output_times', []),
        ('n_output_times', True),
    ]
    for option, value in cases:
      with self.assertRaisesRegex(errors.ScenarioError,
                                  'solver.' + option,
                                  msg='{}={!r}'.format(option, value)):
        scenario.ResolveSolverSettings([{option: value}])

  def test_output_times_replace_the_count(self):
    settings = scenario.ResolveSolverSettings([{'output_times': [0.0, 1.0]}])
    self.assertNotIn('n_output_times', settings)
    self.assertEqual(settings['output_times'], [0.0, 1.0])
    settings = scenario.ResolveSolverSettings([{
        'output_times': [0.0, 1.0]
    }, {
        'n_output_times': 5
    }])
    self.assertNotIn('output_times', settings)
    self.assertEqual(settings['n_output_times'], 5)

  def test_integers_are_accepted_as_floats(self):
    settings = scenario.ResolveSolverSettings([{'beta': 10}])
    self.assertEqual(settings['beta'], 10.0)
    self.assertIsInstance(settings['beta'], float)


class CreateScenarioFromDictTest(sbbridge_test_helper.SBBTest):

  def test_minimal(self):
    sc = scenario.CreateScenarioFromDict(_Config())
    self.assertEqual(sc.name, 'gaussian')
    self.assertEqual(sc.grid, grid_measures.Grid1D(-8.0, 8.0, 321))
    self.assertEqual(sc.betas, [1.0])
    self.assertIsNone(sc.verify)
    self.assertIsNone(sc.SimConfig())
    self.assertAlmostEqual(sc.MuT().Variance(), 2.0, delta=1e-6)

  def test_solver_config(self):
    sc = scenario.CreateScenarioFromDict(_Config(beta=4.0, n_output_times=5))
    config = sc.SolverConfig()
    self.assertEqual(config.beta, 4.0)
    self.assertEqual(config.output_times.size, 5)
    self.assertEqual(sc.SolverConfig(0.5).beta, 0.5)

  def test_missing_sections(self):
    for section in ('scenario', 'grid', 'mu0', 'muT'):
      config = _Config()
      del config[section]
      with self.assertRaisesRegex(errors.ScenarioError,
                                  r'\[{}\]'.format(section)):
        scenario.CreateScenarioFromDict(config)

  def test_unknown_section(self):
    config = _Config()
    config['plot'] = {}
    with self.assertRaisesRegex(errors.ScenarioError,
                                r'Unknown section \[plot\]'):
      scenario.CreateScenarioFromDict(config)

  def test_bad_name(self):
    config = _Config()
    config['scenario']['name'] = os.path.join('a', 'b')
    with self.assertRaisesRegex(errors.ScenarioError, 'scenario.name'):
      scenario.CreateScenarioFromDict(config)

  def test_bad_grid(self):
    config = _Config()
    config['grid']['x_max'] = -9.0
    with self.assertRaisesRegex(errors.ScenarioError, r'invalid \[grid\]'):
      scenario.CreateScenarioFromDict(config)

  def test_bad_measures(self):
    config = _Config()
    config['muT'] = {'kind': 'dirac', 'mean': 0.0}
    with self.assertRaisesRegex(errors.ScenarioError, 'kind must be one of'):
      scenario.CreateScenarioFromDict(config)
    config['muT'] = {'kind': 'gaussian', 'mean': 0.0, 'variance': 0.0}
    with self.assertRaisesRegex(errors.ScenarioError, 'muT.variance'):
      scenario.CreateScenarioFromDict(config)
    config['muT'] = {'kind': 'gaussian', 'mean': 0.0, 'variance': 1.0,
                     'skew': 1.0}
    with self.assertRaisesRegex(errors.ScenarioError,
                                'Unknown muT option "skew"'):
      scenario.CreateScenarioFromDict(config)

  def test_mixture(self):
    config = _Config()
    config['muT'] = {
        'kind': 'mixture',
        'components': [{
            'weight': 1.0,
            'mean': -1.0,
            'variance': 0.5
        }, {
            'weight': 1.0,
            'mean': 1.0,
            'variance': 0.5
        }]
    }
    sc = scenario.CreateScenarioFromDict(config)
    muT = sc.MuT()
    self.assertAlmostEqual(muT.Mean(), 0.0, delta=1e-9)
    self.assertAlmostEqual(muT.Variance(), 1.5, delta=1e-6)

    config['muT']['components'][1] = {'weight': 1.0, 'mean': 1.0}
    with self.assertRaisesRegex(errors.ScenarioError,
                                r'muT.components\[1\]'):
      scenario.CreateScenarioFromDict(config)

  def test_uniform(self):
    config = _Config()
    config['mu0'] = {'kind': 'uniform', 'lower': -1.0, 'upper': 1.0}
    sc = scenario.CreateScenarioFromDict(config)
    self.assertAlmostEqual(sc.Mu0().Variance(), 1.0 / 3.0, delta=5e-3)

  def test_csv_paths_are_resolved_against_the_base_dir(self):
    grid = grid_measures.Grid1D(-8.0, 8.0, 321)
    with utils.TempDirectory() as tmpdir:
      file_resources.WriteMeasureCsv(
          os.path.join(tmpdir, 'target.csv'),
          grid_measures.MakeGaussian(grid, 1.0, 2.0))
      config = _Config()
      config['muT'] = {'kind': 'from_csv', 'path': 'target.csv'}
      sc = scenario.CreateScenarioFromDict(config, base_dir=tmpdir)
      self.assertEqual(sc.muT_spec['path'],
                       os.path.normpath(os.path.join(tmpdir, 'target.csv')))
      self.assertAlmostEqual(sc.MuT().Mean(), 1.0, delta=1e-6)
      digest = sc.InputHash()
      file_resources.WriteMeasureCsv(
          os.path.join(tmpdir, 'target.csv'),
          grid_measures.MakeGaussian(grid, 1.5, 2.0))
      self.assertNotEqual(sc.InputHash(), digest)

  def test_verify_and_sweep(self):
    config = _Config()
    config['verify'] = {'n_paths': 20000, 'n_steps': 150, 'seed': 7}
    config['sweep'] = {'betas': [0.1, 1, 10.0]}
    sc = scenario.CreateScenarioFromDict(config)
    self.assertEqual(sc.betas, [0.1, 1.0, 10.0])
    sim = sc.SimConfig()
    self.assertEqual(sim.n_paths, 20000)
    self.assertEqual(sim.seed, 7)
    self.assertEqual(sc.AsDict()['sweep'], {'betas': [0.1, 1.0, 10.0]})

  def test_invalid_verify(self):
    config = _Config()
    config['verify'] = {'n_paths': 100}
    with self.assertRaisesRegex(errors.ScenarioError, r'invalid \[verify\]'):
      scenario.CreateScenarioFromDict(config)
    config['verify'] = {'paths': 100000}
    with self.assertRaisesRegex(errors.ScenarioError,
                                'Unknown verify option "paths"'):
      scenario.CreateScenarioFromDict(config)

  def test_invalid_sweep(self):
    config = _Config()
    config['sweep'] = {'betas': [1.0, -1.0]}
    with self.assertRaisesRegex(errors.ScenarioError, 'sweep.betas'):
      scenario.CreateScenarioFromDict(config)

  def test_solver_settings_are_checked_at_load_time(self):
    with self.assertRaisesRegex(errors.ScenarioError, r'invalid \[solver\]'):
      scenario.CreateScenarioFromDict(_Config(output_times=[0.5, 1.0]))

  def test_input_hash(self):
    a = scenario.CreateScenarioFromDict(_Config())
    b = scenario.CreateScenarioFromDict(_Config())
    c = scenario.CreateScenarioFromDict(_Config(beta=2.0))
    self.assertEqual(a.InputHash(), b.InputHash())
    self.assertNotEqual(a.InputHash(), c.InputHash())
    self.assertEqual(len(a.InputHash()), 64)


class LoadScenarioTest(sbbridge_test_helper.SBBTest):

  def test_load(self):
    with utils.TempDirectory() as tmpdir:
      filename = utils.WriteFile(tmpdir, 'gaussian.toml', SCENARIO_TOML)
      sc = scenario.LoadScenario(
          filename, user_defaults=None, use_project_defaults=False)
      self.assertEqual(sc.name, 'gaussian')
      self.assertEqual(sc.filename, filename)
      self.assertEqual(sc.sources, [filename])

  def test_malformed_toml(self):
    with utils.TempDirectory() as tmpdir:
      filename = utils.WriteFile(tmpdir, 'bad.toml', u'[grid\nn = 3\n')
      with self.assertRaisesRegex(errors.ScenarioError, 'bad.toml'):
        scenario.LoadScenario(filename, user_defaults=None)

  def test_missing_file(self):
    with utils.TempDirectory() as tmpdir:
      with self.assertRaisesRegex(errors.ScenarioError, 'cannot read'):
        scenario.LoadScenario(
            os.path.join(tmpdir, 'absent.toml'), user_defaults=None)

  def test_errors_name_the_file(self):
    with utils.TempDirectory() as tmpdir:
      filename = utils.WriteFile(tmpdir, 'gaussian.toml',
                                 SCENARIO_TOML + u'[solver]\nbeta = 0\n')
      with self.assertRaisesRegex(errors.ScenarioError,
                                  'gaussian.toml.*solver.beta'):
        scenario.LoadScenario(filename, user_defaults=None)

  def test_defaults_are_layered(self):
    with utils.TempDirectory() as tmpdir:
      user = utils.WriteFile(tmpdir, 'defaults.toml',
                             u'[solver]\nbeta = 2.0\ndamping = 0.5\n')
      project = utils.WriteFile(
          tmpdir, 'pyproject.toml',
          u'[tool.sbbridge]\nbeta = 3.0\nmax_iters = 50\n')
      filename = utils.WriteFile(tmpdir, 'gaussian.toml',
                                 SCENARIO_TOML + u'[solver]\nmax_iters = 70\n')
      sc = scenario.LoadScenario(filename, user_defaults=user)
      self.assertEqual(sc.solver['damping'], 0.5)
      self.assertEqual(sc.solver['beta'], 3.0)
      self.assertEqual(sc.solver['max_iters'], 70)
      self.assertEqual(sc.sources, [user, project, filename])

      sc = scenario.LoadScenario(
          filename, user_defaults=user, use_project_defaults=False)
      self.assertEqual(sc.solver['beta'], 2.0)
      self.assertEqual(sc.sources, [user, filename])


if __name__ == '__main__':
  unittest.main()
