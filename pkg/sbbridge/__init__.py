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
"""sbbridge.

sbbridge solves the Schrodinger-Bass bridge between two probability densities
on the line: the process dX = alpha dt + sigma dW with prescribed marginals at
0 and T minimizing E int (alpha^2 + beta (sigma - 1)^2) / 2 dt. For large beta
it approaches the Schrodinger bridge, for small beta the Bass martingale.

A run is described by a scenario file; see sbblib/scenario.py for its format.

  sbbridge run scenario.toml --out out/
  sbbridge compare out/a/beta=1000.0 out/a_limit/beta=1.0
  sbbridge validate scenario.toml
"""

import argparse
import json
import logging
import sys

from sbbridge._version import __version__
from sbbridge.sbblib import errors
from sbbridge.sbblib import file_resources
from sbbridge.sbblib import sbb_api
from sbbridge.sbblib import scenario

# Exit status of a run that finished without converging.
EXIT_NOT_CONVERGED = 2


def main(argv):
  """Main program.

  Arguments:
    argv: command-line arguments, such as sys.argv (including the program name
      in argv[0]).

  Returns:
    Zero on success. For 'run', EXIT_NOT_CONVERGED if some solve did not
    converge.

  Raises:
    SBBError: for invalid scenarios and failed solves.
  """
  parser = _BuildParser()
  args = parser.parse_args(argv[1:])
  _ConfigureLogging(args.verbose)
  if args.command is None:
    parser.print_help()
    return 1
  return args.handler(args)


def _ConfigureLogging(verbosity):
  level = logging.WARNING
  if verbosity == 1:
    level = logging.INFO
  elif verbosity > 1:
    level = logging.DEBUG
  logging.basicConfig(
      level=level, format='%(levelname)s %(name)s: %(message)s', force=True)


def _LoadScenario(args):
  user_defaults = file_resources.USER_DEFAULTS
  if args.no_user_defaults:
    user_defaults = None
  return scenario.LoadScenario(
      args.scenario,
      user_defaults=user_defaults,
      use_project_defaults=not args.no_local_defaults)


def _Run(args):
  if args.sweep_parallel < 1:
    raise errors.SBBError('--sweep-parallel must be at least 1')
  sc = _LoadScenario(args)
  try:
    result = sbb_api.RunScenario(
        sc,
        args.out,
        sweep_parallel=args.sweep_parallel,
        verify=not args.no_verify,
        raw_paths=args.raw_paths)
  except errors.SBBError:
    raise
  except Exception as e:  # pylint: disable=broad-except
    raise errors.SBBError(errors.FormatErrorMsg(e, sc.name))
  for entry in result.entries:
    print('{}: beta={!r} converged={} cost={!r} w2_t0={:.3g} '
          'w2_T={:.3g}'.format(entry.directory, entry.beta, entry.converged,
                               entry.cost, entry.w2_t0, entry.w2_T))
  return 0 if result.converged else EXIT_NOT_CONVERGED


def _Compare(args):
  report = sbb_api.CompareDirectories(args.dir_a, args.dir_b)
  if args.json:
    print(json.dumps(report, indent=1))
    return 0
  for t, w2, sup in zip(report['times'], report['marginal_w2'],
                        report['map_sup']):
    print('t={:<10.6g} marginal_w2={:<12.6g} map_sup={:.6g}'.format(t, w2, sup))
  return 0


def _Validate(args):
  sc = _LoadScenario(args)
  print(json.dumps(sc.AsDict(), indent=1, sort_keys=True))
  return 0


def _AddScenarioArguments(parser):
  parser.add_argument('scenario', help='scenario file (TOML)')
  parser.add_argument(
      '--no-local-defaults',
      action='store_true',
      help="don't search for a [tool.sbbridge] table in pyproject.toml")
  parser.add_argument(
      '--no-user-defaults',
      action='store_true',
      help="don't read the user defaults file %s" %
      file_resources.USER_DEFAULTS)


def _BuildParser():
  """Constructs the parser for the command line arguments.

  Returns:
    An ArgumentParser instance for the CLI.
  """
  parser = argparse.ArgumentParser(
      prog='sbbridge', description='Schrodinger-Bass bridge solver.')
  parser.add_argument(
      '--version',
      action='version',
      version='%(prog)s {}'.format(__version__))
  parser.add_argument(
      '-v',
      '--verbose',
      action='count',
      default=0,
      help='log progress; repeat for one line per sweep')
  subparsers = parser.add_subparsers(dest='command')

  run = subparsers.add_parser('run', help='solve a scenario')
  _AddScenarioArguments(run)
  run.add_argument(
      '--out', default='out', help='output root directory (default: out)')
  run.add_argument(
      '--sweep-parallel',
      metavar='N',
      type=int,
      default=1,
      help='solve up to N values of beta concurrently')
  run.add_argument(
      '--no-verify',
      action='store_true',
      help='skip the Monte-Carlo verification')
  run.add_argument(
      '--raw-paths',
      action='store_true',
      help='also write the raw simulated paths')
  run.set_defaults(handler=_Run)

  compare = subparsers.add_parser('compare', help='compare two solutions')
  compare.add_argument('dir_a', help='first solution directory')
  compare.add_argument('dir_b', help='second solution directory')
  compare.add_argument(
      '--json', action='store_true', help='print the report as JSON')
  compare.set_defaults(handler=_Compare)

  validate = subparsers.add_parser(
      'validate', help='print the fully resolved scenario')
  _AddScenarioArguments(validate)
  validate.set_defaults(handler=_Validate)
  return parser


def run_main():  # pylint: disable=invalid-name
  try:
    sys.exit(main(sys.argv))
  except errors.SBBError as e:
    sys.stderr.write('sbbridge: ' + str(e) + '\n')
    sys.exit(1)


if __name__ == '__main__':
  run_main()
