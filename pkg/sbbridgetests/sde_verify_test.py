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
"""Tests for sbbridge.sde_verify."""

import logging
import unittest

import numpy as np

try:
  import ot
except ImportError:  # POT is a test extra.
  ot = None

from sbbridge.sbblib import errors
from sbbridge.sbblib import sbb_solver
from sbbridge.sbblib import sde_verify

from sbbridgetests import sbbridge_test_helper

_SMALL = dict(n_paths=10000, n_steps=100)


class SimConfigTest(sbbridge_test_helper.SBBTest):

  def test_defaults(self):
    sim = sde_verify.SimConfig()
    self.assertEqual(sim.n_paths, 100000)
    self.assertEqual(sim.n_steps, 200)
    self.assertEqual(sim.AsDict()['seed'], 0)
    self.assertIsNone(sim.boundary_clamp)

  def test_rejects_small_runs(self):
    cases = [
        dict(n_paths=100),
        dict(n_steps=10),
        dict(seed=-1),
        dict(boundary_clamp=-1.0),
        dict(workers=0),
    ]
    for kwargs in cases:
      with self.assertRaises(errors.OutOfRangeError, msg=str(kwargs)):
        sde_verify.SimConfig(**kwargs)


class PathEnsembleTest(sbbridge_test_helper.SBBTest):

  def test_validation(self):
    with self.assertRaises(errors.OutOfRangeError):
      sde_verify.PathEnsemble([0.5, 1.0], np.zeros((3, 2)), 0, 'direct')
    with self.assertRaises(errors.GridMismatchError):
      sde_verify.PathEnsemble([0.0, 1.0], np.zeros((3, 3)), 0, 'direct')
    with self.assertRaises(errors.OutOfRangeError):
      sde_verify.PathEnsemble([0.0, 1.0], np.zeros((3, 2)), 0, 'implicit')

  def test_time_lookup(self):
    states = np.arange(6.0).reshape(3, 2)
    paths = sde_verify.PathEnsemble([0.0, 1.0], states, 0, 'direct')
    self.assertEqual(paths.n_paths, 3)
    self.assertAllClose(paths.At(1.0), [1.0, 3.0, 5.0])
    with self.assertRaises(errors.TimeNotStoredError):
      paths.At(0.5)


class ReproducibilityTest(sbbridge_test_helper.SBBTest):

  @classmethod
  def setUpClass(cls):  # pylint: disable=g-missing-super-call
    cls.sol = sbbridge_test_helper.ContractingSolution(1.0)

  def test_same_seed_same_paths(self):
    a = sde_verify.SimulateDirect(self.sol, sde_verify.SimConfig(**_SMALL))
    b = sde_verify.SimulateDirect(self.sol, sde_verify.SimConfig(**_SMALL))
    self.assertTrue(np.array_equal(a.states, b.states))
    self.assertTrue(np.array_equal(a.running_cost, b.running_cost))

  def test_independent_of_the_number_of_workers(self):
    serial = sde_verify.SimulateDirect(self.sol,
                                       sde_verify.SimConfig(**_SMALL))
    threaded = sde_verify.SimulateDirect(
        self.sol, sde_verify.SimConfig(workers=3, **_SMALL))
    self.assertTrue(np.array_equal(serial.states, threaded.states))

  def test_seed_changes_paths(self):
    a = sde_verify.SimulateDirect(self.sol, sde_verify.SimConfig(**_SMALL))
    b = sde_verify.SimulateDirect(self.sol,
                                  sde_verify.SimConfig(seed=1, **_SMALL))
    self.assertFalse(np.array_equal(a.states, b.states))

  def test_schemes_share_initial_states(self):
    sim = sde_verify.SimConfig(**_SMALL)
    direct = sde_verify.SimulateDirect(self.sol, sim)
    stretched = sde_verify.SimulateStretched(self.sol, sim)
    self.assertAllClose(direct.At(0.0), stretched.At(0.0), atol=1e-3)

  def test_record_times_are_moved_to_steps(self):
    sim = sde_verify.SimConfig(record_times=[0.5, 0.333], **_SMALL)
    paths = sde_verify.SimulateDirect(self.sol, sim)
    self.assertAllClose(paths.times, [0.0, 0.33, 0.5, 1.0], atol=1e-12)
    self.assertEqual(paths.states.shape, (10000, 4))

  def test_record_times_outside_the_horizon(self):
    sim = sde_verify.SimConfig(record_times=[1.5], **_SMALL)
    with self.assertRaises(errors.OutOfRangeError):
      sde_verify.SimulateDirect(self.sol, sim)


class BoundaryClampTest(sbbridge_test_helper.SBBTest):

  def test_too_many_escapes(self):
    sol = sbbridge_test_helper.TrivialSolution()
    sim = sde_verify.SimConfig(boundary_clamp=8.5, **_SMALL)
    with self.assertRaises(errors.PathEscapeError) as ctx:
      sde_verify.SimulateDirect(sol, sim)
    self.assertGreater(ctx.exception.count, 10)

  def test_clamp_must_leave_room(self):
    sol = sbbridge_test_helper.TrivialSolution()
    sim = sde_verify.SimConfig(boundary_clamp=10.0, **_SMALL)
    with self.assertRaises(errors.OutOfRangeError):
      sde_verify.SimulateStretched(sol, sim)


class TrivialEnsembleTest(sbbridge_test_helper.SBBTest):

  @classmethod
  def setUpClass(cls):  # pylint: disable=g-missing-super-call
    cls.sol = sbbridge_test_helper.TrivialSolution()
    cls.paths = sde_verify.SimulateDirect(cls.sol, sde_verify.SimConfig())

  def test_terminal_law(self):
    self.assertEqual(self.paths.escaped, 0)
    self.assertLess(
        sde_verify.EmpiricalWasserstein2(self.paths.At(1.0), self.sol.muT),
        0.02)

  def test_cost_vanishes(self):
    estimate = sde_verify.PrimalCost(self.paths, self.sol)
    self.assertLess(estimate.mean, 1e-4)

  def test_drift_is_nearly_constant(self):
    report = sde_verify.MartingaleDefect(self.paths, self.sol)
    self.assertLess(report.defect, 1e-3)

  def test_summary(self):
    rows = sde_verify.EnsembleSummary(self.paths)
    self.assertEqual(len(rows), self.paths.times.size)
    for row in rows:
      self.assertEqual(len(row), len(sde_verify.SUMMARY_COLUMNS))
    time, mean, var = rows[-1][:3]
    self.assertEqual(time, 1.0)
    self.assertAlmostEqual(mean, 0.0, delta=0.02)
    self.assertAlmostEqual(var, 2.0, delta=0.05)
    self.assertLess(rows[-1][3], rows[-1][4])


class ContractingEnsembleTest(sbbridge_test_helper.SBBTest):
  """Direct and stretched ensembles of the N(0, 1) -> N(0.5, 1.5) bridge."""

  @classmethod
  def setUpClass(cls):  # pylint: disable=g-missing-super-call
    cls.sol = sbbridge_test_helper.ContractingSolution(1.0)
    sim = sde_verify.SimConfig()
    cls.direct = sde_verify.SimulateDirect(cls.sol, sim)
    cls.stretched = sde_verify.SimulateStretched(cls.sol, sim)

  def test_terminal_marginal(self):
    self.assertLess(
        sde_verify.EmpiricalWasserstein2(self.direct.At(1.0), self.sol.muT),
        0.03)
    self.assertLess(
        sde_verify.EmpiricalWasserstein2(self.stretched.At(1.0), self.sol.muT),
        0.03)

  def test_schemes_agree(self):
    for t in (0.0, 0.5, 1.0):
      self.assertLess(
          sde_verify.EnsembleWasserstein2(
              self.direct.At(t), self.stretched.At(t)),
          0.03,
          msg='t={}'.format(t))

  def test_cost_matches_the_field_quadrature(self):
    estimate = sde_verify.PrimalCost(self.direct, self.sol)
    expected = sbb_solver.FieldPrimalCost(self.sol)
    self.assertGreater(estimate.standard_error, 0.0)
    self.assertLess(
        abs(estimate.mean - expected),
        3 * estimate.standard_error + 0.02 * expected)

  def test_drift_is_a_martingale(self):
    report = sde_verify.MartingaleDefect(self.direct, self.sol)
    self.assertLess(report.z_score, 3.0)

  def test_missing_drift_breaks_the_martingale(self):
    sim = sde_verify.SimConfig(drift_scale=0.0, **_SMALL)
    paths = sde_verify.SimulateDirect(self.sol, sim)
    report = sde_verify.MartingaleDefect(paths, self.sol)
    self.assertGreater(report.z_score, 3.0)

  def test_likelihood_reweighting(self):
    report = sde_verify.LikelihoodCheck(self.stretched, self.sol)
    self.assertLess(report.mean_z, 4.0)
    self.assertLess(report.variance_z, 4.0)

  def test_scheme_mismatch(self):
    with self.assertRaises(errors.SchemeMismatchError):
      sde_verify.PrimalCost(self.stretched, self.sol)
    with self.assertRaises(errors.SchemeMismatchError):
      sde_verify.LikelihoodCheck(self.direct, self.sol)


class BassEnsembleTest(sbbridge_test_helper.SBBTest):

  def test_stretched_brownian_motion(self):
    sol = sbbridge_test_helper.BassSolution()
    sim = sde_verify.SimConfig(n_paths=20000, n_steps=100)
    paths = sde_verify.SimulateStretched(sol, sim)
    self.assertLess(
        sde_verify.EmpiricalWasserstein2(paths.At(1.0), sol.muT), 0.05)
    self.assertAlmostEqual(
        np.mean(paths.At(1.0) - paths.At(0.0)), 0.0, delta=0.05)


class WassersteinTest(sbbridge_test_helper.SBBTest):

  def test_identical_samples(self):
    samples = np.random.default_rng(3).normal(size=1000)
    self.assertEqual(sde_verify.EnsembleWasserstein2(samples, samples), 0.0)

  def test_shifted_samples(self):
    samples = np.random.default_rng(3).normal(size=1000)
    self.assertAlmostEqual(
        sde_verify.EnsembleWasserstein2(samples, samples + 0.5), 0.5,
        places=10)

  @unittest.skipIf(ot is None, 'POT is not installed')
  def test_matches_exact_empirical_transport(self):
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=1000), rng.normal(0.2, 1.5, size=1000)
    expected = np.sqrt(ot.wasserstein_1d(a, b, p=2))
    self.assertAlmostEqual(
        sde_verify.EnsembleWasserstein2(a, b), expected, delta=1e-2)


class EscapeWarningTest(sbbridge_test_helper.SBBTest):

  def test_few_escapes_are_logged(self):
    with self.assertLogs('sbbridge.sbblib.sde_verify', logging.WARNING):
      sde_verify._CheckEscapes(3, 10000)  # pylint: disable=protected-access


if __name__ == '__main__':
  unittest.main()
